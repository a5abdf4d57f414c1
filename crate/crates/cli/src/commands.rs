use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use porenet::checkpoint::Checkpoint;
use porenet::data::{
    make_label_map, read_gray_image, read_manifest, read_pore_csv, synth_fingerprint,
    write_manifest, write_pgm, write_pore_csv, GrayImage, Grid, ManifestEntry, PoreSet,
    TrainingSet, LABEL_RADIUS,
};
use porenet::eval::{
    counts_of, linear_grid, macro_average, match_pores, metrics_from_counts, report_csv,
    sweep_threshold_multi, Counts, ImageReport, Sweep, SweepPoint,
};
use porenet::network::Network;
use porenet::postprocess::{
    detect_pores, predict_with_tile_size, read_raw_map, write_overlay, write_raw_map,
    write_scaled_map,
};
use porenet::trainer::{train_from, AdamState};
use porenet::{par, Real};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::summary::RunSummary;

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const DATASET_FILE: &str = "dataset.json";
pub const MODEL_FILE: &str = "model.ckpt";
pub const LOSS_FILE: &str = "loss.csv";
pub const REPORT_FILE: &str = "report.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const OPERATING_POINT_FILE: &str = "operating_point.json";
/// Extension of raw intensity-map dumps.
pub const MAP_EXT: &str = "map";

/// Generator settings stored next to a synthetic manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    pub ridge_period: f64,
    /// Average ridge width RW, half the ridge period.
    pub ridge_width: f64,
    pub pore_density: f64,
    pub pore_radius: f64,
    pub noise: f64,
}

/// SplitMix64 finalizer; gives each synthetic image its own seed.
fn image_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(index.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Writes `count` synthetic images (PGM) with pore CSVs, a manifest and the
/// generator settings.
pub fn cmd_synth(cfg: &RunConfig, out: &Path, summary: &mut RunSummary) -> Result<PathBuf> {
    let s = &cfg.synth;
    create_dir(&out.join("images"))?;
    create_dir(&out.join("pores"))?;
    let base = cfg.synth_params();
    let mut entries = Vec::with_capacity(s.count);
    for i in 0..s.count {
        let seed = image_seed(cfg.seed, i as u64);
        let params = porenet::data::SynthParams {
            orientation_seed: seed,
            ..base.clone()
        };
        let (img, pores) = synth_fingerprint(s.height, s.width, &params, seed)
            .with_context(|| format!("synthesizing image {i}"))?;
        let name = format!("synth_{i:04}");
        let entry = ManifestEntry {
            image: PathBuf::from(format!("images/{name}.pgm")),
            pores: PathBuf::from(format!("pores/{name}.csv")),
        };
        write_pgm(&img, out.join(&entry.image))?;
        write_pore_csv(&pores, out.join(&entry.pores))?;
        entries.push(entry);
    }
    let manifest = out.join(MANIFEST_FILE);
    write_manifest(&entries, &manifest)?;
    summary.output(&manifest);
    let info = DatasetInfo {
        count: s.count,
        height: s.height,
        width: s.width,
        seed: cfg.seed,
        ridge_period: base.ridge_period,
        ridge_width: base.ridge_width(),
        pore_density: base.pore_density,
        pore_radius: base.pore_radius,
        noise: base.noise,
    };
    let info_path = out.join(DATASET_FILE);
    std::fs::write(&info_path, serde_json::to_string_pretty(&info)? + "\n")
        .with_context(|| format!("writing {}", info_path.display()))?;
    summary.output(&info_path);
    summary.detail("images", s.count);
    summary.detail("ridge_width", info.ridge_width);
    Ok(manifest)
}

/// Image and ground truth for one manifest entry.
fn load_entry(e: &ManifestEntry) -> Result<(GrayImage, PoreSet)> {
    let img = read_gray_image(&e.image)?;
    let pores = read_pore_csv(&e.pores)?;
    pores
        .validate(img.height(), img.width())
        .with_context(|| format!("pores in {}", e.pores.display()))?;
    Ok((img, pores))
}

/// Builds label maps and training patches for every manifest entry.
pub fn build_training_set(cfg: &RunConfig, manifest: &Path) -> Result<TrainingSet> {
    let entries = read_manifest(manifest)?;
    if entries.is_empty() {
        bail!("manifest {} lists no images", manifest.display());
    }
    let mut set = TrainingSet::new(cfg.network.patch_size, cfg.train.patch_stride);
    for e in &entries {
        let (img, pores) = load_entry(e)?;
        let label = make_label_map(img.height(), img.width(), &pores, LABEL_RADIUS)?;
        set.add(img, label)
            .with_context(|| format!("patching {}", e.image.display()))?;
    }
    Ok(set)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub checkpoint: PathBuf,
    pub loss_csv: PathBuf,
    pub patches: usize,
    pub iterations: u64,
    pub final_loss: Option<f64>,
}

/// Patches the manifest's images, trains and writes the final checkpoint,
/// interval checkpoints under `checkpoints/` and the loss log.
pub fn cmd_train(
    cfg: &RunConfig,
    manifest: &Path,
    resume: Option<&Path>,
    out: &Path,
    summary: &mut RunSummary,
) -> Result<TrainReport> {
    cfg.validate()?;
    create_dir(out)?;
    let set = build_training_set(cfg, manifest)?;
    log::info!("{} patches from {} images", set.len(), set.image_count());
    let net_cfg = cfg.network_config();
    let (net, optimizer) = match resume {
        Some(path) => {
            let ckpt = Checkpoint::load_expecting(path, &net_cfg)
                .with_context(|| format!("resuming from {}", path.display()))?;
            (ckpt.network, ckpt.optimizer)
        }
        None => (Network::new(net_cfg, cfg.network.init.into())?, None),
    };
    let ckpt_dir = out.join("checkpoints");
    let mut written = Vec::new();
    let mut hook = |it: usize, net: &Network, st: &AdamState| -> porenet::Result<()> {
        std::fs::create_dir_all(&ckpt_dir).map_err(|e| porenet::Error::Io {
            path: ckpt_dir.clone(),
            source: e,
        })?;
        let path = ckpt_dir.join(format!("iter_{it:07}.ckpt"));
        Checkpoint::with_optimizer(net.clone(), st.clone()).save(&path)?;
        written.push(path);
        Ok(())
    };
    let result = train_from(&set, net, optimizer, &cfg.train_config(), Some(&mut hook));
    for p in written {
        summary.output(p);
    }
    let outcome = result?;
    let checkpoint = out.join(MODEL_FILE);
    Checkpoint::with_optimizer(outcome.network, outcome.optimizer.clone()).save(&checkpoint)?;
    summary.output(&checkpoint);
    let loss_csv = out.join(LOSS_FILE);
    outcome.history.write_csv(&loss_csv)?;
    summary.output(&loss_csv);
    let final_loss = outcome.history.train_losses().last();
    let report = TrainReport {
        checkpoint,
        loss_csv,
        patches: set.len(),
        iterations: outcome.optimizer.t,
        final_loss,
    };
    summary.detail("patches", report.patches);
    summary.detail("iterations", report.iterations);
    summary.detail("final_train_loss", report.final_loss);
    Ok(report)
}

/// Optional per-image extras written by [`cmd_detect`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DetectOutputs {
    /// Raw `.map` dump plus an 8-bit PGM with its scale sidecar.
    pub maps: bool,
    /// RGB overlay with detections circled.
    pub overlay: bool,
}

pub fn load_network(path: &Path) -> Result<Network> {
    Ok(Checkpoint::load(path)
        .with_context(|| format!("loading checkpoint {}", path.display()))?
        .network)
}

fn tile_size(net: &Network) -> usize {
    net.config().input_size.0
}

fn stem_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into())
}

/// Tiles, runs the network and detects pores in each image, writing
/// `<stem>.csv` per image. Images are processed in parallel.
pub fn cmd_detect(
    cfg: &RunConfig,
    checkpoint: &Path,
    images: &[PathBuf],
    extras: DetectOutputs,
    out: &Path,
    summary: &mut RunSummary,
) -> Result<Vec<(String, PoreSet)>> {
    cfg.detect_config().validate()?;
    create_dir(out)?;
    let net = load_network(checkpoint)?;
    let det = cfg.detect_config();
    let tile = tile_size(&net);
    let results = par::map_slice(images, |path| -> Result<(String, PoreSet, Vec<PathBuf>)> {
        let img = read_gray_image(path)?;
        let stem = stem_of(path);
        let map = predict_with_tile_size(&net, &img, tile)
            .with_context(|| format!("running network on {}", path.display()))?;
        let pores = detect_pores(map.grid(), &det)?;
        let mut files = Vec::new();
        let csv = out.join(format!("{stem}.csv"));
        write_pore_csv(&pores, &csv)?;
        files.push(csv);
        if extras.maps {
            let raw = out.join(format!("{stem}.{MAP_EXT}"));
            write_raw_map(map.grid(), &raw)?;
            let pgm = out.join(format!("{stem}_map.pgm"));
            let side = out.join(format!("{stem}_map.txt"));
            write_scaled_map(map.grid(), &pgm, &side)?;
            files.extend([raw, pgm, side]);
        }
        if extras.overlay {
            let p = out.join(format!("{stem}_overlay.ppm"));
            write_overlay(&img, &pores, &p)?;
            files.push(p);
        }
        Ok((stem, pores, files))
    });
    let mut found = Vec::with_capacity(results.len());
    let mut first_err = None;
    for r in results {
        match r {
            Ok((stem, pores, files)) => {
                files.into_iter().for_each(|f| summary.output(f));
                found.push((stem, pores));
            }
            Err(e) if first_err.is_none() => first_err = Some(e),
            Err(_) => {}
        }
    }
    if let Some(e) = first_err {
        return Err(e);
    }
    summary.detail("images", found.len());
    summary.detail("threshold", det.threshold);
    summary.detail(
        "detections",
        found.iter().map(|(_, p)| p.len()).sum::<usize>(),
    );
    Ok(found)
}

/// Image paths listed in a manifest.
pub fn manifest_images(manifest: &Path) -> Result<Vec<PathBuf>> {
    Ok(read_manifest(manifest)?.into_iter().map(|e| e.image).collect())
}

/// RW from the config, else from the generator settings beside the manifest.
pub fn resolve_ridge_width(cfg: &RunConfig, manifest: &Path) -> Result<f64> {
    if let Some(rw) = cfg.eval.ridge_width {
        return Ok(rw);
    }
    let info = manifest
        .parent()
        .unwrap_or(Path::new("."))
        .join(DATASET_FILE);
    let text = std::fs::read_to_string(&info).map_err(|_| {
        anyhow!(
            "ridge width is required: pass --ridge-width or keep {} next to the manifest",
            DATASET_FILE
        )
    })?;
    let info: DatasetInfo =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", info.display()))?;
    Ok(info.ridge_width)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperatingPoint {
    pub target_rf_percent: f64,
    pub threshold: f64,
    pub rt_percent: f64,
    pub rf_percent: f64,
    pub true_detections: usize,
    pub false_detections: usize,
    pub truth_total: usize,
}

impl OperatingPoint {
    fn new(target: f64, p: &SweepPoint) -> Self {
        OperatingPoint {
            target_rf_percent: target,
            threshold: p.threshold as f64,
            rt_percent: 100.0 * p.true_rate,
            rf_percent: 100.0 * p.false_rate,
            true_detections: p.counts.true_detections,
            false_detections: p.counts.false_detections,
            truth_total: p.counts.truth_total,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<ImageReport>,
    pub micro: Counts,
    pub macro_rates: Option<(f64, f64)>,
    pub operating_point: Option<OperatingPoint>,
}

/// Scores `<stem>.csv` detections in `detections` against the manifest's
/// ground truth. With a target false rate, also sweeps the thresholds over
/// the raw maps in `maps` and reports the operating point.
pub fn cmd_eval(
    cfg: &RunConfig,
    detections: &Path,
    manifest: &Path,
    maps: Option<&Path>,
    out: &Path,
    summary: &mut RunSummary,
) -> Result<EvalReport> {
    cfg.validate()?;
    create_dir(out)?;
    let radius = resolve_ridge_width(cfg, manifest)? / 2.0;
    let entries = read_manifest(manifest)?;
    let mut rows = Vec::with_capacity(entries.len());
    let mut truths = Vec::with_capacity(entries.len());
    for e in &entries {
        let truth = read_pore_csv(&e.pores)?;
        let det_path = detections.join(format!("{}.csv", e.stem()));
        let det = read_pore_csv(&det_path)
            .with_context(|| format!("detections for {}", e.image.display()))?;
        let counts = counts_of(&match_pores(&det, &truth, radius)?);
        rows.push(ImageReport {
            image: e.stem(),
            counts,
        });
        truths.push(truth);
    }
    let report = out.join(REPORT_FILE);
    std::fs::write(&report, report_csv(&rows))
        .with_context(|| format!("writing {}", report.display()))?;
    summary.output(&report);
    let micro: Counts = rows.iter().map(|r| r.counts).sum();
    let per: Vec<_> = rows
        .iter()
        .filter_map(|r| metrics_from_counts(r.counts).ok())
        .collect();
    let macro_rates = macro_average(&per);
    summary.detail("match_radius", radius);
    summary.detail("micro_rt_percent", micro.true_rate().map(|r| 100.0 * r));
    summary.detail("micro_rf_percent", 100.0 * micro.false_rate());

    let operating_point = match cfg.eval.target_rf {
        None => None,
        Some(target) => {
            let maps = maps.ok_or_else(|| {
                anyhow!("a target false rate needs the raw intensity maps (--maps)")
            })?;
            let grids = entries
                .iter()
                .map(|e| {
                    let p = maps.join(format!("{}.{MAP_EXT}", e.stem()));
                    read_raw_map(&p).with_context(|| format!("reading map {}", p.display()))
                })
                .collect::<Result<Vec<_>>>()?;
            let (sweep, op) = run_sweep(cfg, &grids, &truths, radius, target)?;
            write_sweep(&sweep, op.as_ref(), out, summary)?;
            op
        }
    };
    Ok(EvalReport {
        rows,
        micro,
        macro_rates,
        operating_point,
    })
}

fn threshold_grid(cfg: &RunConfig, maps: &[Grid]) -> Vec<Real> {
    let lo = cfg.eval.th_min.map(|v| v as Real).unwrap_or_else(|| {
        maps.iter()
            .map(|m| m.min_value())
            .fold(Real::INFINITY, Real::min)
    });
    let hi = cfg.eval.th_max.map(|v| v as Real).unwrap_or_else(|| {
        maps.iter()
            .map(|m| m.max_value())
            .fold(Real::NEG_INFINITY, Real::max)
    });
    linear_grid(lo, hi, cfg.eval.th_steps)
}

fn run_sweep(
    cfg: &RunConfig,
    maps: &[Grid],
    truths: &[PoreSet],
    radius: f64,
    target_percent: f64,
) -> Result<(Sweep, Option<OperatingPoint>)> {
    let items: Vec<(&Grid, &PoreSet)> = maps.iter().zip(truths).collect();
    let grid = threshold_grid(cfg, maps);
    let sweep = sweep_threshold_multi(&items, radius, &grid, cfg.detect.window)?;
    let op = sweep
        .operating_point(target_percent / 100.0)
        .map(|p| OperatingPoint::new(target_percent, &p));
    Ok((sweep, op))
}

fn write_sweep(
    sweep: &Sweep,
    op: Option<&OperatingPoint>,
    out: &Path,
    summary: &mut RunSummary,
) -> Result<()> {
    let path = out.join(SWEEP_FILE);
    sweep.write_csv(&path)?;
    summary.output(&path);
    let path = out.join(OPERATING_POINT_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&op)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    summary.output(&path);
    summary.detail("operating_point", op);
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub sweep: Sweep,
    pub operating_point: Option<OperatingPoint>,
}

/// Runs the network over every manifest image and sweeps the detection
/// threshold against the ground truth, pooling counts over images.
pub fn cmd_sweep(
    cfg: &RunConfig,
    checkpoint: &Path,
    manifest: &Path,
    out: &Path,
    summary: &mut RunSummary,
) -> Result<SweepReport> {
    cfg.validate()?;
    create_dir(out)?;
    let radius = resolve_ridge_width(cfg, manifest)? / 2.0;
    let net = load_network(checkpoint)?;
    let tile = tile_size(&net);
    let entries = read_manifest(manifest)?;
    let loaded = par::map_slice(&entries, |e| -> Result<(Grid, PoreSet)> {
        let (img, truth) = load_entry(e)?;
        let map = predict_with_tile_size(&net, &img, tile)?;
        Ok((map.into_grid(), truth))
    });
    let (maps, truths): (Vec<_>, Vec<_>) = loaded.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
    let target = cfg.eval.target_rf.unwrap_or(100.0);
    let (sweep, op) = run_sweep(cfg, &maps, &truths, radius, target)?;
    write_sweep(&sweep, op.as_ref(), out, summary)?;
    Ok(SweepReport {
        sweep,
        operating_point: op,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_seeds_differ() {
        let s: Vec<u64> = (0..100).map(|i| image_seed(5, i)).collect();
        let mut d = s.clone();
        d.sort_unstable();
        d.dedup();
        assert_eq!(d.len(), 100);
        assert_ne!(image_seed(5, 0), image_seed(6, 0));
    }
}
