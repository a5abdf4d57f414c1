use std::path::Path;

use anyhow::{bail, Context, Result};
use porenet::data::{SynthParams, PATCH_SIZE, TRAIN_STRIDE};
use porenet::network::{Init, NetworkConfig};
use porenet::postprocess::{DetectConfig, DETECT_WINDOW};
use porenet::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

/// Every tunable of the pipeline. Layers apply in the order built-in
/// defaults, config file, preset flag, individual flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub network: NetworkSection,
    pub train: TrainSection,
    pub detect: DetectSection,
    pub synth: SynthSection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub base_width: usize,
    pub patch_size: usize,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
    pub init: InitKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitKind {
    Paper,
    FanIn,
}

impl From<InitKind> for Init {
    fn from(k: InitKind) -> Init {
        match k {
            InitKind::Paper => Init::Paper,
            InitKind::FanIn => Init::FanIn,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub val_fraction: f64,
    pub patch_stride: usize,
    pub checkpoint_every: Option<usize>,
    pub max_iterations: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectSection {
    pub threshold: f64,
    pub window: usize,
    pub dedupe: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub ridge_period: f64,
    pub pore_density: f64,
    pub pore_radius: f64,
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Average ridge width RW; matches need distance < RW / 2.
    pub ridge_width: Option<f64>,
    /// False detection rate cap in percent for operating-point selection.
    pub target_rf: Option<f64>,
    pub th_min: Option<f64>,
    pub th_max: Option<f64>,
    pub th_steps: usize,
}

impl Default for NetworkSection {
    fn default() -> Self {
        let n = NetworkConfig::default();
        NetworkSection {
            base_width: n.base_width,
            patch_size: PATCH_SIZE,
            bn_momentum: n.bn_momentum as f64,
            bn_epsilon: n.bn_epsilon as f64,
            init: InitKind::Paper,
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::paper();
        TrainSection {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate as f64,
            beta1: t.beta1 as f64,
            beta2: t.beta2 as f64,
            epsilon: t.epsilon as f64,
            val_fraction: t.val_fraction,
            patch_stride: TRAIN_STRIDE,
            checkpoint_every: None,
            max_iterations: None,
        }
    }
}

impl Default for DetectSection {
    fn default() -> Self {
        DetectSection {
            threshold: 0.4,
            window: DETECT_WINDOW,
            dedupe: false,
        }
    }
}

impl Default for SynthSection {
    fn default() -> Self {
        let p = SynthParams::default();
        SynthSection {
            count: 90,
            height: 480,
            width: 640,
            ridge_period: p.ridge_period,
            pore_density: p.pore_density,
            pore_radius: p.pore_radius,
            noise: p.noise,
        }
    }
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            ridge_width: None,
            target_rf: None,
            th_min: None,
            th_max: None,
            th_steps: 101,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            network: NetworkSection::default(),
            train: TrainSection::default(),
            detect: DetectSection::default(),
            synth: SynthSection::default(),
            eval: EvalSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Full-width network, 25 epochs, batch 10, learning rate 0.001, 90
    /// training images of 640×480.
    Paper,
    /// Width-4 network on 20 synthetic 320×240 images with a short iteration
    /// budget.
    Desk,
}

/// Iteration budget of the desk preset.
pub const DESK_MAX_ITERATIONS: usize = 300;

impl RunConfig {
    pub fn apply_preset(&mut self, preset: Preset) {
        let full = RunConfig::default();
        self.network.base_width = full.network.base_width;
        self.network.patch_size = full.network.patch_size;
        self.network.init = InitKind::Paper;
        self.train = TrainSection {
            checkpoint_every: self.train.checkpoint_every,
            ..full.train
        };
        self.synth.count = full.synth.count;
        self.synth.height = full.synth.height;
        self.synth.width = full.synth.width;
        if preset == Preset::Desk {
            self.network.base_width = 4;
            self.train.max_iterations = Some(DESK_MAX_ITERATIONS);
            self.synth.count = 20;
            self.synth.height = 240;
            self.synth.width = 320;
            self.eval.target_rf = Some(10.0);
        }
    }

    /// Defaults overlaid with the TOML file at `path`.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: toml::Table = text.parse()?;
        let mut base = toml::Table::try_from(RunConfig::default())?;
        merge(&mut base, file);
        Ok(toml::Value::Table(base).try_into()?)
    }

    pub fn network_config(&self) -> NetworkConfig {
        NetworkConfig {
            base_width: self.network.base_width,
            input_size: (self.network.patch_size, self.network.patch_size),
            seed: self.seed,
            bn_momentum: self.network.bn_momentum as _,
            bn_epsilon: self.network.bn_epsilon as _,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate as _,
            beta1: self.train.beta1 as _,
            beta2: self.train.beta2 as _,
            epsilon: self.train.epsilon as _,
            shuffle_seed: self.seed,
            checkpoint_every: self.train.checkpoint_every,
            val_fraction: self.train.val_fraction,
            max_iterations: self.train.max_iterations,
        }
    }

    pub fn detect_config(&self) -> DetectConfig {
        DetectConfig {
            threshold: self.detect.threshold as _,
            window: self.detect.window,
            dedupe: self.detect.dedupe,
        }
    }

    pub fn synth_params(&self) -> SynthParams {
        SynthParams {
            ridge_period: self.synth.ridge_period,
            orientation_seed: 0,
            pore_density: self.synth.pore_density,
            pore_radius: self.synth.pore_radius,
            noise: self.synth.noise,
        }
    }

    /// Checks the sections every subcommand relies on.
    pub fn validate(&self) -> Result<()> {
        self.network_config().validate()?;
        self.train_config().validate()?;
        self.detect_config().validate()?;
        if self.train.patch_stride == 0 {
            bail!("patch_stride must be >= 1");
        }
        if let Some(rw) = self.eval.ridge_width {
            if !(rw > 0.0) {
                bail!("ridge_width must be positive");
            }
        }
        if let Some(t) = self.eval.target_rf {
            if !(0.0..=100.0).contains(&t) {
                bail!("target_rf is a percentage in [0, 100]");
            }
        }
        if self.eval.th_steps == 0 {
            bail!("th_steps must be >= 1");
        }
        Ok(())
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_full_scale_hyperparameters() {
        let c = RunConfig::default();
        assert_eq!(c.network.base_width, 64);
        assert_eq!((c.train.epochs, c.train.batch_size), (25, 10));
        assert_eq!(c.train.learning_rate, 0.001);
        assert_eq!(c.synth.count, 90);
        c.validate().unwrap();
    }

    #[test]
    fn file_overrides_defaults() {
        let c = RunConfig::from_toml_str("seed = 7\n[train]\nepochs = 3\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.batch_size, 10);
        assert!(RunConfig::from_toml_str("[train]\nepoch = 3\n").is_err());
    }

    #[test]
    fn presets_pin_hyperparameters() {
        let mut c = RunConfig::from_toml_str("[network]\nbase_width = 8\n[train]\nepochs = 2\n").unwrap();
        c.apply_preset(Preset::Paper);
        assert_eq!(c.network.base_width, 64);
        assert_eq!(c.train.epochs, 25);
        c.apply_preset(Preset::Desk);
        assert_eq!(c.network.base_width, 4);
        assert_eq!((c.synth.width, c.synth.height, c.synth.count), (320, 240, 20));
        assert_eq!(c.train.max_iterations, Some(DESK_MAX_ITERATIONS));
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = RunConfig::default();
        c.apply_preset(Preset::Desk);
        let text = toml::to_string(&c).unwrap();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), c);
    }
}
