//! The residual pore-intensity network.
//!
//! Layout for base width `w`:
//!
//! ```text
//! stem   conv 7x7, w        + BN + ReLU
//! stage2 2 blocks @ w       (3x3 conv + BN + ReLU, 3x3 conv + BN, add, ReLU)
//! stage3 2 blocks @ 2w
//! stage4 2 blocks @ 4w
//! stage5 2 blocks @ 8w
//! head   conv 3x3, 1 filter (bias, no BN, no ReLU)
//! ```
//!
//! The first block of every stage has a 1x1 conv + BN projection shortcut,
//! the second an identity shortcut. That gives 18 main-path convolutions
//! plus 4 shortcut projections, which are counted separately. Nothing pools
//! or strides, so every feature map has the input's spatial size.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::layers::{
    batchnorm_backward, batchnorm_forward, batchnorm_infer, conv2d_backward, conv2d_forward,
    conv2d_infer, relu_backward_in_place, relu_forward_owned, relu_in_place, BatchNormCache, BatchNormGrads, BatchNormParams,
    ConvCache, ConvGrads, ConvParams, Mode, ReluCache, DEFAULT_BN_EPSILON, DEFAULT_BN_MOMENTUM,
};
use crate::tensor::{Real, Tensor};

/// Number of residual stages and blocks per stage.
pub const STAGES: usize = 4;
pub const BLOCKS_PER_STAGE: usize = 2;
/// Main-path learnable convolutions (stem + 2 per block + head).
pub const MAIN_PATH_CONVS: usize = 1 + 2 * STAGES * BLOCKS_PER_STAGE + 1;
/// Smallest spatial size accepted by an inference pass (the stem kernel).
pub const MIN_INFER_SIZE: usize = 7;

const STEM_KERNEL: usize = 7;
const BLOCK_KERNEL: usize = 3;
const HEAD_KERNEL: usize = 3;
/// Standard deviation of the default Gaussian weight initialization.
pub const PAPER_INIT_STD: Real = 0.001;

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub base_width: usize,
    /// Training patch size `(h, w)`.
    pub input_size: (usize, usize),
    pub seed: u64,
    pub bn_momentum: Real,
    pub bn_epsilon: Real,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            base_width: 64,
            input_size: (80, 80),
            seed: 0,
            bn_momentum: DEFAULT_BN_MOMENTUM,
            bn_epsilon: DEFAULT_BN_EPSILON,
        }
    }
}

impl NetworkConfig {
    pub fn with_width(base_width: usize) -> Self {
        NetworkConfig {
            base_width,
            ..Self::default()
        }
    }

    /// Channel width of each residual stage: `w·(1, 2, 4, 8)`.
    pub fn stage_widths(&self) -> [usize; STAGES] {
        let w = self.base_width;
        [w, 2 * w, 4 * w, 8 * w]
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_width == 0 {
            return Err(Error::Config("base_width must be >= 1".into()));
        }
        let (h, w) = self.input_size;
        if h < MIN_INFER_SIZE || w < MIN_INFER_SIZE {
            return Err(Error::Config(format!(
                "input size {h}x{w} is below the {MIN_INFER_SIZE}x{MIN_INFER_SIZE} minimum"
            )));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum < 1.0) {
            return Err(Error::Config("bn_momentum must lie in (0, 1)".into()));
        }
        if !(self.bn_epsilon > 0.0) {
            return Err(Error::Config("bn_epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Weight initialization scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Init {
    /// Gaussian with zero mean and standard deviation 0.001.
    #[default]
    Paper,
    /// Gaussian with standard deviation `sqrt(2 / fan_in)`.
    FanIn,
}

/// A convolution followed by batch normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBn {
    pub conv: ConvParams,
    pub bn: BatchNormParams,
}

impl ConvBn {
    fn new(cfg: &NetworkConfig, in_c: usize, out_c: usize, kernel: usize) -> Result<Self> {
        Ok(ConvBn {
            conv: ConvParams::zeros(in_c, out_c, kernel)?,
            bn: BatchNormParams::with_hyper(out_c, cfg.bn_momentum, cfg.bn_epsilon),
        })
    }

    fn infer(&self, x: &Tensor) -> Result<Tensor> {
        batchnorm_infer(&conv2d_infer(x, &self.conv)?, &self.bn)
    }

    fn train(&mut self, x: &Tensor) -> Result<(Tensor, ConvBnCache)> {
        let (y, conv) = conv2d_forward(x, &self.conv)?;
        let (y, bn) = batchnorm_forward(&y, &mut self.bn, Mode::Train)?;
        Ok((y, ConvBnCache { conv, bn }))
    }

    fn backward(&self, grad: &Tensor, cache: ConvBnCache) -> Result<(Tensor, ConvBnGrads)> {
        let (g, bn) = batchnorm_backward(grad, cache.bn, &self.bn)?;
        let (g, conv) = conv2d_backward(&g, cache.conv, &self.conv)?;
        Ok((g, ConvBnGrads { conv, bn }))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Shortcut {
    Identity,
    /// 1x1 convolution + batch norm, no activation.
    Projection(ConvBn),
}

#[derive(Debug, Clone, PartialEq, Eq, Copy)]
pub enum ShortcutKind {
    Identity,
    Projection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub first: ConvBn,
    pub second: ConvBn,
    pub shortcut: Shortcut,
}

impl ResidualBlock {
    pub fn shortcut_kind(&self) -> ShortcutKind {
        match self.shortcut {
            Shortcut::Identity => ShortcutKind::Identity,
            Shortcut::Projection(_) => ShortcutKind::Projection,
        }
    }
}

struct ConvBnCache {
    conv: ConvCache,
    bn: BatchNormCache,
}

struct BlockCache {
    first: ConvBnCache,
    first_relu: ReluCache,
    second: ConvBnCache,
    shortcut: Option<ConvBnCache>,
    out_relu: ReluCache,
}

/// Everything a train-mode forward pass saves for [`Network::backward`].
pub struct ForwardCache {
    stem: ConvBnCache,
    stem_relu: ReluCache,
    blocks: Vec<BlockCache>,
    head: ConvCache,
}

impl ForwardCache {
    /// Active/inactive state of every ReLU unit, in forward order.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let mut out: Vec<bool> = self.stem_relu.active().collect();
        for b in &self.blocks {
            out.extend(b.first_relu.active());
            out.extend(b.out_relu.active());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvBnGrads {
    pub conv: ConvGrads,
    pub bn: BatchNormGrads,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockGrads {
    pub first: ConvBnGrads,
    pub second: ConvBnGrads,
    pub shortcut: Option<ConvBnGrads>,
}

/// Parameter gradients, shaped like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub stem: ConvBnGrads,
    pub blocks: Vec<BlockGrads>,
    pub head: ConvGrads,
}

impl Gradients {
    /// Flat views in the same order as [`Network::params`].
    pub fn slices(&self) -> Vec<&[Real]> {
        let mut out = Vec::new();
        fn conv_bn<'a>(out: &mut Vec<&'a [Real]>, g: &'a ConvBnGrads) {
            out.push(g.conv.weights.data());
            out.push(&g.conv.bias);
            out.push(&g.bn.gamma);
            out.push(&g.bn.beta);
        }
        conv_bn(&mut out, &self.stem);
        for b in &self.blocks {
            conv_bn(&mut out, &b.first);
            conv_bn(&mut out, &b.second);
            if let Some(s) = &b.shortcut {
                conv_bn(&mut out, s);
            }
        }
        out.push(self.head.weights.data());
        out.push(&self.head.bias);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    config: NetworkConfig,
    pub stem: ConvBn,
    pub blocks: Vec<ResidualBlock>,
    pub head: ConvParams,
}

impl Network {
    /// Builds the graph with zero weights; see [`Network::init_weights`].
    pub fn build(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let widths = config.stage_widths();
        let stem = ConvBn::new(&config, 1, widths[0], STEM_KERNEL)?;
        let mut blocks = Vec::with_capacity(STAGES * BLOCKS_PER_STAGE);
        let mut in_c = widths[0];
        for &w in &widths {
            for b in 0..BLOCKS_PER_STAGE {
                // first block of each stage projects, second is identity
                let shortcut = if b == 0 {
                    Shortcut::Projection(ConvBn::new(&config, in_c, w, 1)?)
                } else {
                    Shortcut::Identity
                };
                blocks.push(ResidualBlock {
                    first: ConvBn::new(&config, in_c, w, BLOCK_KERNEL)?,
                    second: ConvBn::new(&config, w, w, BLOCK_KERNEL)?,
                    shortcut,
                });
                in_c = w;
            }
        }
        let head = ConvParams::zeros(in_c, 1, HEAD_KERNEL)?;
        Ok(Network {
            config,
            stem,
            blocks,
            head,
        })
    }

    /// Builds and initializes with the config seed.
    pub fn new(config: NetworkConfig, init: Init) -> Result<Self> {
        let seed = config.seed;
        let mut net = Self::build(config)?;
        net.init_weights(seed, init);
        Ok(net)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    /// Redraws every convolution weight from a seeded Gaussian in graph
    /// order; biases 0, gamma 1, beta 0, running statistics (0, 1).
    pub fn init_weights(&mut self, seed: u64, init: Init) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |conv: &mut ConvParams| {
            let std = match init {
                Init::Paper => PAPER_INIT_STD,
                Init::FanIn => (2.0 / conv.fan_in() as Real).sqrt(),
            };
            let normal = Normal::new(0.0, std).expect("finite positive std");
            conv.weights
                .data_mut()
                .iter_mut()
                .for_each(|w| *w = normal.sample(&mut rng));
            conv.bias.iter_mut().for_each(|b| *b = 0.0);
        };
        for cb in self.conv_bns_mut() {
            draw(&mut cb.conv);
            let bn = &mut cb.bn;
            bn.gamma.iter_mut().for_each(|v| *v = 1.0);
            bn.beta.iter_mut().for_each(|v| *v = 0.0);
            bn.running_mean.iter_mut().for_each(|v| *v = 0.0);
            bn.running_var.iter_mut().for_each(|v| *v = 1.0);
        }
        draw(&mut self.head);
    }

    /// Conv + BN pairs in graph order (stem, then per block: first, second,
    /// projection).
    fn conv_bns_mut(&mut self) -> Vec<&mut ConvBn> {
        let mut out = vec![&mut self.stem];
        for b in &mut self.blocks {
            out.push(&mut b.first);
            out.push(&mut b.second);
            if let Shortcut::Projection(p) = &mut b.shortcut {
                out.push(p);
            }
        }
        out
    }

    fn conv_bns(&self) -> Vec<&ConvBn> {
        let mut out = vec![&self.stem];
        for b in &self.blocks {
            out.push(&b.first);
            out.push(&b.second);
            if let Shortcut::Projection(p) = &b.shortcut {
                out.push(p);
            }
        }
        out
    }

    /// Batch-norm layers in graph order.
    pub fn batch_norms(&self) -> Vec<&BatchNormParams> {
        self.conv_bns().into_iter().map(|cb| &cb.bn).collect()
    }

    pub fn batch_norms_mut(&mut self) -> Vec<&mut BatchNormParams> {
        self.conv_bns_mut().into_iter().map(|cb| &mut cb.bn).collect()
    }

    /// All convolutions in graph order, including shortcut projections.
    pub fn convs(&self) -> Vec<&ConvParams> {
        let mut out: Vec<&ConvParams> = self.conv_bns().into_iter().map(|cb| &cb.conv).collect();
        out.push(&self.head);
        out
    }

    /// Learnable parameter vectors in graph order: for each conv+BN pair
    /// weights, bias, gamma, beta; then head weights and bias.
    pub fn params(&self) -> Vec<&[Real]> {
        let mut out: Vec<&[Real]> = Vec::new();
        for cb in self.conv_bns() {
            out.push(cb.conv.weights.data());
            out.push(&cb.conv.bias);
            out.push(&cb.bn.gamma);
            out.push(&cb.bn.beta);
        }
        out.push(self.head.weights.data());
        out.push(&self.head.bias);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [Real]> {
        let mut out: Vec<&mut [Real]> = Vec::new();
        let Network {
            stem, blocks, head, ..
        } = self;
        fn conv_bn<'a>(out: &mut Vec<&'a mut [Real]>, cb: &'a mut ConvBn) {
            out.push(cb.conv.weights.data_mut());
            out.push(&mut cb.conv.bias);
            out.push(&mut cb.bn.gamma);
            out.push(&mut cb.bn.beta);
        }
        conv_bn(&mut out, stem);
        for b in blocks.iter_mut() {
            conv_bn(&mut out, &mut b.first);
            conv_bn(&mut out, &mut b.second);
            if let Shortcut::Projection(p) = &mut b.shortcut {
                conv_bn(&mut out, p);
            }
        }
        out.push(head.weights.data_mut());
        out.push(&mut head.bias);
        out
    }

    /// Learnable parameters and running statistics in checkpoint order: per
    /// conv+BN pair weights, bias, gamma, beta, running mean, running
    /// variance; then head weights and bias.
    pub fn state_slices(&self) -> Vec<&[Real]> {
        let mut out: Vec<&[Real]> = Vec::new();
        for cb in self.conv_bns() {
            out.push(cb.conv.weights.data());
            out.push(&cb.conv.bias);
            out.push(&cb.bn.gamma);
            out.push(&cb.bn.beta);
            out.push(&cb.bn.running_mean);
            out.push(&cb.bn.running_var);
        }
        out.push(self.head.weights.data());
        out.push(&self.head.bias);
        out
    }

    /// Mutable counterpart of [`Network::state_slices`], same order.
    pub fn for_each_state_mut(&mut self, mut f: impl FnMut(&mut [Real])) {
        for cb in self.conv_bns_mut() {
            f(cb.conv.weights.data_mut());
            f(&mut cb.conv.bias);
            f(&mut cb.bn.gamma);
            f(&mut cb.bn.beta);
            f(&mut cb.bn.running_mean);
            f(&mut cb.bn.running_var);
        }
        f(self.head.weights.data_mut());
        f(&mut self.head.bias);
    }

    /// Names matching [`Network::params`], for diagnostics.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        let mut conv_bn = |prefix: String| {
            for p in ["weight", "bias", "gamma", "beta"] {
                names.push(format!("{prefix}.{p}"));
            }
        };
        conv_bn("stem".into());
        for (i, b) in self.blocks.iter().enumerate() {
            conv_bn(format!("block{}.first", i + 1));
            conv_bn(format!("block{}.second", i + 1));
            if b.shortcut_kind() == ShortcutKind::Projection {
                conv_bn(format!("block{}.projection", i + 1));
            }
        }
        names.push("head.weight".into());
        names.push("head.bias".into());
        names
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Main-path convolutions: always 18.
    pub fn main_path_conv_count(&self) -> usize {
        1 + 2 * self.blocks.len() + 1
    }

    pub fn projection_count(&self) -> usize {
        self.blocks
            .iter()
            .filter(|b| b.shortcut_kind() == ShortcutKind::Projection)
            .count()
    }

    pub fn shortcut_pattern(&self) -> Vec<ShortcutKind> {
        self.blocks.iter().map(|b| b.shortcut_kind()).collect()
    }

    fn check_input(&self, x: &Tensor, mode: Mode) -> Result<()> {
        let s = x.shape();
        if s.c != 1 {
            return Err(Error::shape(format!(
                "network input must have 1 channel, got {}",
                s.c
            )));
        }
        match mode {
            Mode::Train if (s.h, s.w) != self.config.input_size => Err(Error::shape(format!(
                "training input must be {:?}, got {}x{}",
                self.config.input_size, s.h, s.w
            ))),
            Mode::Infer if s.h < MIN_INFER_SIZE || s.w < MIN_INFER_SIZE => {
                Err(Error::shape(format!(
                    "inference input {}x{} is below the {MIN_INFER_SIZE}x{MIN_INFER_SIZE} minimum",
                    s.h, s.w
                )))
            }
            _ => Ok(()),
        }
    }

    /// Read-only forward pass with running batch-norm statistics.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x, Mode::Infer)?;
        let mut h = self.stem.infer(x)?;
        relu_in_place(&mut h);
        for block in &self.blocks {
            let mut a = block.first.infer(&h)?;
            relu_in_place(&mut a);
            let mut out = block.second.infer(&a)?;
            match &block.shortcut {
                Shortcut::Identity => out.add_assign(&h)?,
                Shortcut::Projection(p) => out.add_assign(&p.infer(&h)?)?,
            }
            relu_in_place(&mut out);
            h = out;
        }
        conv2d_infer(&h, &self.head)
    }

    /// Train-mode forward pass: batch statistics, running-stat updates and
    /// caches for [`Network::backward`].
    pub fn forward_train(&mut self, x: &Tensor) -> Result<(Tensor, ForwardCache)> {
        self.check_input(x, Mode::Train)?;
        let (h, stem) = self.stem.train(x)?;
        let (mut h, stem_relu) = relu_forward_owned(h);
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &mut self.blocks {
            let (a, first) = block.first.train(&h)?;
            let (a, first_relu) = relu_forward_owned(a);
            let (mut out, second) = block.second.train(&a)?;
            let shortcut = match &mut block.shortcut {
                Shortcut::Identity => {
                    out.add_assign(&h)?;
                    None
                }
                Shortcut::Projection(p) => {
                    let (s, cache) = p.train(&h)?;
                    out.add_assign(&s)?;
                    Some(cache)
                }
            };
            let (out, out_relu) = relu_forward_owned(out);
            caches.push(BlockCache {
                first,
                first_relu,
                second,
                shortcut,
                out_relu,
            });
            h = out;
        }
        let (y, head) = conv2d_forward(&h, &self.head)?;
        Ok((
            y,
            ForwardCache {
                stem,
                stem_relu,
                blocks: caches,
                head,
            },
        ))
    }

    /// Forward in either mode; caches are returned only in train mode.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, Option<ForwardCache>)> {
        match mode {
            Mode::Train => self.forward_train(x).map(|(y, c)| (y, Some(c))),
            Mode::Infer => self.infer(x).map(|y| (y, None)),
        }
    }

    /// Parameter gradients given the gradient of the loss w.r.t. the output.
    pub fn backward(&self, grad_y: &Tensor, cache: Option<ForwardCache>) -> Result<Gradients> {
        let cache = cache.ok_or_else(|| {
            Error::Usage("backward needs the cache of a train-mode forward pass".into())
        })?;
        let (mut g, head) = conv2d_backward(grad_y, cache.head, &self.head)?;
        let mut block_grads = Vec::with_capacity(self.blocks.len());
        for (block, bc) in self.blocks.iter().zip(cache.blocks).rev() {
            relu_backward_in_place(&mut g, &bc.out_relu)?;
            let g_out = g;
            let (mut g_a, second) = block.second.backward(&g_out, bc.second)?;
            relu_backward_in_place(&mut g_a, &bc.first_relu)?;
            let (mut g_in, first) = block.first.backward(&g_a, bc.first)?;
            let shortcut = match (&block.shortcut, bc.shortcut) {
                (Shortcut::Identity, None) => {
                    g_in.add_assign(&g_out)?;
                    None
                }
                (Shortcut::Projection(p), Some(sc)) => {
                    let (g_s, grads) = p.backward(&g_out, sc)?;
                    g_in.add_assign(&g_s)?;
                    Some(grads)
                }
                _ => return Err(Error::Usage("cache does not match network wiring".into())),
            };
            block_grads.push(BlockGrads {
                first,
                second,
                shortcut,
            });
            g = g_in;
        }
        block_grads.reverse();
        relu_backward_in_place(&mut g, &cache.stem_relu)?;
        let (_, stem) = self.stem.backward(&g, cache.stem)?;
        Ok(Gradients {
            stem,
            blocks: block_grads,
            head,
        })
    }

    pub fn all_finite(&self) -> bool {
        self.params().iter().all(|p| p.iter().all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn conv_bn_count(in_c: usize, out_c: usize, k: usize) -> usize {
        out_c * in_c * k * k + out_c + 2 * out_c
    }

    /// Closed-form learnable parameter count.
    fn closed_form_params(w: usize) -> usize {
        let widths = [w, 2 * w, 4 * w, 8 * w];
        let mut total = conv_bn_count(1, w, 7);
        let mut prev = w;
        for &s in &widths {
            total += conv_bn_count(prev, s, 3) + conv_bn_count(s, s, 3) + conv_bn_count(prev, s, 1);
            total += 2 * conv_bn_count(s, s, 3);
            prev = s;
        }
        total + 8 * w * 9 + 1
    }

    #[test]
    fn paper_width_topology() {
        let net = Network::build(NetworkConfig::with_width(64)).unwrap();
        assert_eq!(net.config().stage_widths(), [64, 128, 256, 512]);
        assert_eq!(net.main_path_conv_count(), 18);
        assert_eq!(net.projection_count(), 4);
        assert_eq!(net.blocks.len(), 8);
        assert_eq!(net.parameter_count(), closed_form_params(64));
        assert_eq!(net.parameter_count(), FULL_WIDTH_PARAMS);
        // block 1 projects 64 -> 64
        match &net.blocks[0].shortcut {
            Shortcut::Projection(p) => {
                assert_eq!((p.conv.in_channels(), p.conv.out_channels()), (64, 64))
            }
            Shortcut::Identity => panic!("block 1 must project"),
        }
    }

    /// Learnable parameters at base width 64.
    const FULL_WIDTH_PARAMS: usize = 11_183_937;

    #[test]
    fn topology_independent_of_width() {
        let a = Network::build(NetworkConfig::with_width(64)).unwrap();
        for w in [1, 2, 4] {
            let b = Network::build(NetworkConfig::with_width(w)).unwrap();
            assert_eq!(b.shortcut_pattern(), a.shortcut_pattern());
            assert_eq!(b.main_path_conv_count(), 18);
            assert_eq!(b.params().len(), a.params().len());
            assert_eq!(b.parameter_count(), closed_form_params(w));
        }
        let net = Network::build(NetworkConfig::with_width(4)).unwrap();
        assert_eq!(net.config().stage_widths(), [4, 8, 16, 32]);
        use ShortcutKind::*;
        assert_eq!(
            net.shortcut_pattern(),
            vec![Projection, Identity, Projection, Identity, Projection, Identity, Projection, Identity]
        );
    }

    #[test]
    fn invalid_config() {
        assert!(Network::build(NetworkConfig::with_width(0)).is_err());
        let cfg = NetworkConfig {
            input_size: (5, 80),
            ..NetworkConfig::with_width(2)
        };
        assert!(Network::build(cfg).is_err());
    }

    #[test]
    fn output_shape_matches_input() {
        let mut net = Network::new(NetworkConfig::with_width(1), Init::Paper).unwrap();
        let x = Tensor::new((2, 1, 80, 80), 0.3).unwrap();
        let (y, _) = net.forward_train(&x).unwrap();
        assert_eq!(y.shape(), Shape::new(2, 1, 80, 80).unwrap());
        let y = net.infer(&Tensor::new((1, 1, 13, 21), 0.3).unwrap()).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 13, 21).unwrap());
    }

    #[test]
    fn input_checks() {
        let mut net = Network::new(NetworkConfig::with_width(1), Init::Paper).unwrap();
        assert!(net.infer(&Tensor::new((1, 2, 8, 8), 0.0).unwrap()).is_err());
        assert!(net.infer(&Tensor::new((1, 1, 6, 8), 0.0).unwrap()).is_err());
        assert!(net.forward_train(&Tensor::new((1, 1, 40, 40), 0.0).unwrap()).is_err());
    }

    #[test]
    fn init_is_seeded() {
        let a = Network::new(NetworkConfig::with_width(2), Init::Paper).unwrap();
        let b = Network::new(NetworkConfig::with_width(2), Init::Paper).unwrap();
        assert_eq!(a, b);
        let mut c = a.clone();
        c.init_weights(99, Init::Paper);
        assert_ne!(a, c);
    }

    #[test]
    fn init_statistics() {
        // 8*8*... the stage-5 second conv at width 16 has 128*128*9 = 147,456 weights
        let net = Network::new(NetworkConfig::with_width(16), Init::Paper).unwrap();
        let w = net.blocks[7].second.conv.weights.data();
        assert!(w.len() >= 100_000);
        let n = w.len() as Real;
        let mean = w.iter().sum::<Real>() / n;
        let std = (w.iter().map(|v| (v - mean).powi(2)).sum::<Real>() / n).sqrt();
        assert!(mean.abs() < 1e-4);
        assert!((std - 0.001).abs() < 0.05 * 0.001);
        assert!(net.head.bias.iter().all(|&b| b == 0.0));
        for bn in net.batch_norms() {
            assert!(bn.gamma.iter().all(|&g| g == 1.0));
            assert!(bn.running_var.iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn fresh_network_output_is_near_constant() {
        let net = Network::new(NetworkConfig::with_width(2), Init::Paper).unwrap();
        let mut x = Tensor::new((1, 1, 16, 16), 0.0).unwrap();
        for (i, v) in x.data_mut().iter_mut().enumerate() {
            *v = ((i * 37) % 11) as Real / 10.0;
        }
        let y = net.infer(&x).unwrap();
        let max = y.data().iter().cloned().fold(Real::MIN, Real::max);
        let min = y.data().iter().cloned().fold(Real::MAX, Real::min);
        assert!(max - min < 1e-3, "spread {}", max - min);
    }

    #[test]
    fn identity_block_with_zero_weights_is_relu() {
        let mut net = Network::new(NetworkConfig::with_width(2), Init::FanIn).unwrap();
        let block = &mut net.blocks[1];
        assert_eq!(block.shortcut_kind(), ShortcutKind::Identity);
        block.first.conv.weights.data_mut().fill(0.0);
        block.second.conv.weights.data_mut().fill(0.0);
        let block = block.clone();
        let mut x = Tensor::new((1, 2, 9, 9), 0.0).unwrap();
        for (i, v) in x.data_mut().iter_mut().enumerate() {
            *v = (i as Real * 0.37).sin();
        }
        // run the block alone in infer mode with identity statistics
        let mut a = block.first.infer(&x).unwrap();
        relu_in_place(&mut a);
        let mut out = block.second.infer(&a).unwrap();
        out.add_assign(&x).unwrap();
        relu_in_place(&mut out);
        let mut expected = x.clone();
        relu_in_place(&mut expected);
        assert_eq!(out, expected);
    }

    #[test]
    fn infer_is_pure() {
        let net = Network::new(NetworkConfig::with_width(2), Init::FanIn).unwrap();
        let x = Tensor::new((1, 1, 12, 12), 0.25).unwrap();
        let before = net.clone();
        assert_eq!(net.infer(&x).unwrap(), net.infer(&x).unwrap());
        assert_eq!(net, before);
    }

    #[test]
    fn backward_requires_cache() {
        let mut net = Network::new(NetworkConfig::with_width(1), Init::Paper).unwrap();
        let x = Tensor::new((1, 1, 80, 80), 0.0).unwrap();
        let (y, cache) = net.forward(&x, Mode::Infer).unwrap();
        assert!(cache.is_none());
        assert!(matches!(net.backward(&y, cache), Err(Error::Usage(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let cfg = NetworkConfig {
            input_size: (8, 8),
            ..NetworkConfig::with_width(2)
        };
        let mut net = Network::new(cfg, Init::FanIn).unwrap();
        let x = Tensor::new((2, 1, 8, 8), 0.5).unwrap();
        let (y, cache) = net.forward_train(&x).unwrap();
        let g = net.backward(&Tensor::zeros_like(&y), Some(cache)).unwrap();
        assert!(g.slices().iter().all(|s| s.iter().all(|&v| v == 0.0)));
        let shapes: Vec<usize> = net.params().iter().map(|p| p.len()).collect();
        let gshapes: Vec<usize> = g.slices().iter().map(|p| p.len()).collect();
        assert_eq!(shapes, gshapes);
    }

    #[test]
    fn head_bias_gradient_is_output_gradient_sum() {
        let cfg = NetworkConfig {
            input_size: (8, 8),
            ..NetworkConfig::with_width(2)
        };
        let mut net = Network::new(cfg, Init::FanIn).unwrap();
        let mut x = Tensor::new((2, 1, 8, 8), 0.0).unwrap();
        x.data_mut()
            .iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v = (i as Real).cos());
        let (y, cache) = net.forward_train(&x).unwrap();
        let label = Tensor::filled(y.shape(), 0.5);
        let (_, grad) = crate::layers::mse_loss(&y, &label).unwrap();
        let g = net.backward(&grad, Some(cache)).unwrap();
        // d loss / d bias = Σ_pixels −(2/N)(label − pred)
        let expected: Real = y
            .data()
            .iter()
            .map(|p| -(2.0 / 2.0) * (0.5 - p))
            .sum();
        assert!((g.head.bias[0] - expected).abs() < 1e-10 * expected.abs().max(1.0));
    }
}
