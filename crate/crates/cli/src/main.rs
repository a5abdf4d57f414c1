use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use porenet_cli::commands::manifest_images;
use porenet_cli::config::InitKind;
use porenet_cli::{
    cmd_detect, cmd_eval, cmd_sweep, cmd_synth, cmd_train, configure_threads, tune_allocator,
    DetectOutputs, Preset, RunConfig, RunSummary, THREADS_ENV,
};

/// Residual CNN pore detection for high-resolution fingerprints.
#[derive(Parser, Debug)]
#[command(name = "porenet", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// TOML config file layered over the built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Pin the full-scale training hyperparameters.
    #[arg(long, global = true, conflicts_with = "desk")]
    paper: bool,
    /// Pin the small-scale acceptance settings.
    #[arg(long, global = true)]
    desk: bool,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel sections.
    #[arg(long, global = true, env = THREADS_ENV)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic fingerprints with known pore positions.
    Synth(SynthArgs),
    /// Train the network on a manifest of images and pore CSVs.
    Train(TrainArgs),
    /// Detect pores in images with a trained checkpoint.
    Detect(DetectArgs),
    /// Score detections against ground truth.
    Eval(EvalArgs),
    /// Sweep the detection threshold and pick an operating point.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    ridge_period: Option<f64>,
    /// Expected pores per 100×100 pixels.
    #[arg(long)]
    pore_density: Option<f64>,
    #[arg(long)]
    pore_radius: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Continue from a checkpoint, including its optimizer state.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    base_width: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    val_fraction: Option<f64>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long, value_enum)]
    init: Option<InitArg>,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum InitArg {
    Paper,
    FanIn,
}

#[derive(Args, Debug)]
struct DetectArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Manifest whose images are processed.
    #[arg(long, conflicts_with = "image")]
    manifest: Option<PathBuf>,
    /// Individual image files.
    #[arg(long)]
    image: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    window: Option<usize>,
    /// Merge adjacent plateau detections into their centroid.
    #[arg(long)]
    dedupe: bool,
    /// Also write raw and 8-bit intensity maps.
    #[arg(long)]
    save_maps: bool,
    /// Also write an overlay image with detections circled.
    #[arg(long)]
    overlay: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Directory with one `<stem>.csv` per manifest image.
    #[arg(long)]
    detections: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Average ridge width RW; matches need distance < RW / 2.
    #[arg(long)]
    ridge_width: Option<f64>,
    /// False detection rate cap in percent; requires --maps.
    #[arg(long)]
    target_rf: Option<f64>,
    /// Directory with `<stem>.map` raw intensity maps.
    #[arg(long)]
    maps: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    ridge_width: Option<f64>,
    #[arg(long)]
    target_rf: Option<f64>,
    #[arg(long)]
    th_min: Option<f64>,
    #[arg(long)]
    th_max: Option<f64>,
    #[arg(long)]
    th_steps: Option<usize>,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn build_config(g: &GlobalArgs, cmd: &Command) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if g.paper {
        cfg.apply_preset(Preset::Paper);
    }
    if g.desk {
        cfg.apply_preset(Preset::Desk);
    }
    set(&mut cfg.seed, g.seed);
    match cmd {
        Command::Synth(a) => {
            let s = &mut cfg.synth;
            set(&mut s.count, a.count);
            set(&mut s.height, a.height);
            set(&mut s.width, a.width);
            set(&mut s.ridge_period, a.ridge_period);
            set(&mut s.pore_density, a.pore_density);
            set(&mut s.pore_radius, a.pore_radius);
            set(&mut s.noise, a.noise);
        }
        Command::Train(a) => {
            set(&mut cfg.network.base_width, a.base_width);
            set(
                &mut cfg.network.init,
                a.init.map(|i| match i {
                    InitArg::Paper => InitKind::Paper,
                    InitArg::FanIn => InitKind::FanIn,
                }),
            );
            let t = &mut cfg.train;
            set(&mut t.epochs, a.epochs);
            set(&mut t.batch_size, a.batch_size);
            set(&mut t.learning_rate, a.learning_rate);
            set(&mut t.val_fraction, a.val_fraction);
            if a.max_iterations.is_some() {
                t.max_iterations = a.max_iterations;
            }
            if a.checkpoint_every.is_some() {
                t.checkpoint_every = a.checkpoint_every;
            }
        }
        Command::Detect(a) => {
            set(&mut cfg.detect.threshold, a.threshold);
            set(&mut cfg.detect.window, a.window);
            cfg.detect.dedupe |= a.dedupe;
        }
        Command::Eval(a) => {
            if a.ridge_width.is_some() {
                cfg.eval.ridge_width = a.ridge_width;
            }
            if a.target_rf.is_some() {
                cfg.eval.target_rf = a.target_rf;
            }
        }
        Command::Sweep(a) => {
            let e = &mut cfg.eval;
            if a.ridge_width.is_some() {
                e.ridge_width = a.ridge_width;
            }
            if a.target_rf.is_some() {
                e.target_rf = a.target_rf;
            }
            if a.th_min.is_some() {
                e.th_min = a.th_min;
            }
            if a.th_max.is_some() {
                e.th_max = a.th_max;
            }
            set(&mut e.th_steps, a.th_steps);
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cmd: &Command) -> &Path {
    match cmd {
        Command::Synth(a) => &a.out,
        Command::Train(a) => &a.out,
        Command::Detect(a) => &a.out,
        Command::Eval(a) => &a.out,
        Command::Sweep(a) => &a.out,
    }
}

fn name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Synth(_) => "synth",
        Command::Train(_) => "train",
        Command::Detect(_) => "detect",
        Command::Eval(_) => "eval",
        Command::Sweep(_) => "sweep",
    }
}

fn run(cfg: &RunConfig, cmd: &Command, summary: &mut RunSummary) -> Result<()> {
    match cmd {
        Command::Synth(a) => {
            let manifest = cmd_synth(cfg, &a.out, summary)?;
            println!("wrote {}", manifest.display());
        }
        Command::Train(a) => {
            let r = cmd_train(cfg, &a.manifest, a.resume.as_deref(), &a.out, summary)?;
            println!(
                "{} iterations on {} patches; checkpoint {}",
                r.iterations,
                r.patches,
                r.checkpoint.display()
            );
        }
        Command::Detect(a) => {
            let images = match &a.manifest {
                Some(m) => manifest_images(m)?,
                None => a.image.clone(),
            };
            if images.is_empty() {
                bail!("no input images: pass --manifest or --image");
            }
            let extras = DetectOutputs {
                maps: a.save_maps,
                overlay: a.overlay,
            };
            let found = cmd_detect(cfg, &a.checkpoint, &images, extras, &a.out, summary)?;
            for (stem, pores) in &found {
                println!("{stem}: {} pores", pores.len());
            }
        }
        Command::Eval(a) => {
            let r = cmd_eval(cfg, &a.detections, &a.manifest, a.maps.as_deref(), &a.out, summary)?;
            match r.micro.true_rate() {
                Some(rt) => println!(
                    "RT {:.2}% RF {:.2}% over {} images",
                    100.0 * rt,
                    100.0 * r.micro.false_rate(),
                    r.rows.len()
                ),
                None => println!("RF {:.2}% (no ground truth pores)", 100.0 * r.micro.false_rate()),
            }
            print_operating_point(r.operating_point.as_ref());
        }
        Command::Sweep(a) => {
            let r = cmd_sweep(cfg, &a.checkpoint, &a.manifest, &a.out, summary)?;
            print_operating_point(r.operating_point.as_ref());
        }
    }
    Ok(())
}

fn print_operating_point(op: Option<&porenet_cli::OperatingPoint>) {
    if let Some(op) = op {
        println!(
            "operating point th {} RT {:.2}% RF {:.2}% (target RF <= {}%)",
            op.threshold, op.rt_percent, op.rf_percent, op.target_rf_percent
        );
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    tune_allocator();
    let cli = Cli::parse();
    let mut summary = RunSummary::new(name(&cli.command));
    let result = configure_threads(cli.global.threads)
        .and_then(|_| build_config(&cli.global, &cli.command))
        .and_then(|cfg| run(&cfg, &cli.command, &mut summary));
    if let Err(e) = &result {
        summary.fail(e);
        eprintln!("error: {e:#}");
    }
    let dir = out_dir(&cli.command);
    if dir.is_dir() {
        if let Err(e) = summary.write(dir) {
            eprintln!("error: {e:#}");
            return ExitCode::FAILURE;
        }
    }
    if result.is_ok() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
