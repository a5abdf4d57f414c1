use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn porenet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_porenet"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = porenet(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: [&str; 6] = ["--count", "2", "--height", "96", "--width", "128"];

fn synth(dir: &Path, seed: &str) {
    let mut args = vec!["--seed", seed, "synth", "--out", s(dir)];
    args.extend(SMALL);
    ok(&args);
}

#[test]
fn synth_is_deterministic_per_seed() {
    let t = tempfile::tempdir().unwrap();
    let (a, b, c) = (t.path().join("a"), t.path().join("b"), t.path().join("c"));
    synth(&a, "3");
    synth(&b, "3");
    synth(&c, "4");
    for f in ["images/synth_0000.pgm", "images/synth_0001.pgm", "pores/synth_0001.csv", "manifest.txt", "dataset.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_ne!(
        std::fs::read(a.join("images/synth_0000.pgm")).unwrap(),
        std::fs::read(c.join("images/synth_0000.pgm")).unwrap()
    );
    let sum = summary(&a);
    assert_eq!(sum["status"], "ok");
    assert_eq!(sum["details"]["images"], 2);
}

#[test]
fn zero_images_then_training_fails_with_summary() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("data");
    ok(&["synth", "--out", s(&data), "--count", "0"]);
    assert_eq!(std::fs::read_to_string(data.join("manifest.txt")).unwrap(), "");
    let model = t.path().join("model");
    std::fs::create_dir_all(&model).unwrap();
    let out = porenet(&["train", "--manifest", s(&data.join("manifest.txt")), "--out", s(&model)]);
    assert!(!out.status.success());
    let sum = summary(&model);
    assert_eq!(sum["status"], "error");
    assert!(sum["error"].as_str().unwrap().len() > 0);
}

#[test]
fn ground_truth_as_detections_scores_perfectly() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("data");
    synth(&data, "9");
    let det = t.path().join("det");
    std::fs::create_dir_all(&det).unwrap();
    for stem in ["synth_0000", "synth_0001"] {
        std::fs::copy(data.join(format!("pores/{stem}.csv")), det.join(format!("{stem}.csv"))).unwrap();
    }
    let out = t.path().join("eval");
    let stdout = ok(&["eval", "--detections", s(&det), "--manifest", s(&data.join("manifest.txt")), "--out", s(&out)]);
    assert!(stdout.contains("RT 100.00% RF 0.00%"), "{stdout}");
    let report = std::fs::read_to_string(out.join("report.csv")).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines[0], "image,truth_count,detected,true,false,RT,RF");
    assert!(lines.iter().any(|l| l.starts_with("micro,") && l.ends_with(",100.00,0.00")));
    assert_eq!(summary(&out)["details"]["match_radius"], 3.0);
}

#[test]
fn pipeline_runs_end_to_end() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("data");
    synth(&data, "1");
    let manifest = data.join("manifest.txt");
    let cfg = t.path().join("run.toml");
    std::fs::write(&cfg, "[network]\nbase_width = 2\ninit = \"fan-in\"\n[train]\nmax_iterations = 2\n").unwrap();
    let model = t.path().join("model");
    ok(&["--config", s(&cfg), "train", "--manifest", s(&manifest), "--out", s(&model), "--checkpoint-every", "1"]);
    assert!(model.join("model.ckpt").is_file());
    assert!(model.join("checkpoints/iter_0000002.ckpt").is_file());
    assert_eq!(summary(&model)["details"]["iterations"], 2);
    let loss = std::fs::read_to_string(model.join("loss.csv")).unwrap();
    assert!(loss.lines().count() >= 3);

    let ckpt = model.join("model.ckpt");
    let det = t.path().join("det");
    let stdout = ok(&[
        "detect", "--checkpoint", s(&ckpt), "--manifest", s(&manifest), "--out", s(&det),
        "--save-maps", "--overlay",
    ]);
    assert_eq!(stdout.lines().count(), 2);
    for f in ["synth_0000.csv", "synth_0000.map", "synth_0000_map.pgm", "synth_0000_overlay.ppm"] {
        assert!(det.join(f).is_file(), "{f}");
    }

    let eval = t.path().join("eval");
    ok(&[
        "eval", "--detections", s(&det), "--manifest", s(&manifest), "--out", s(&eval),
        "--maps", s(&det), "--target-rf", "50",
    ]);
    assert!(eval.join("sweep.csv").is_file());

    let sweep = t.path().join("sweep");
    ok(&[
        "sweep", "--checkpoint", s(&ckpt), "--manifest", s(&manifest), "--out", s(&sweep),
        "--th-steps", "11",
    ]);
    let csv = std::fs::read_to_string(sweep.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("th,RT,RF"));
    assert_eq!(csv.lines().count(), 12);
}

#[test]
fn bad_config_is_rejected() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("bad.toml");
    std::fs::write(&cfg, "[train]\nepoch = 3\n").unwrap();
    let out = porenet(&["--config", s(&cfg), "synth", "--out", s(t.path())]);
    assert!(!out.status.success());
    assert_eq!(summary(t.path())["status"], "error");
    let out = porenet(&["--desk", "--paper", "synth", "--out", s(t.path())]);
    assert!(!out.status.success());
}
