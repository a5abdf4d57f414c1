//! Per-channel batch normalization over the `(n, h, w)` axes.

use super::Mode;
use crate::error::{Error, Result};
use crate::par;
use crate::tensor::{Real, Shape, Tensor};

pub const DEFAULT_BN_MOMENTUM: Real = 0.1;
pub const DEFAULT_BN_EPSILON: Real = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams {
    pub gamma: Vec<Real>,
    pub beta: Vec<Real>,
    pub running_mean: Vec<Real>,
    pub running_var: Vec<Real>,
    /// Weight of the newest batch in the running statistics.
    pub momentum: Real,
    pub epsilon: Real,
}

impl BatchNormParams {
    /// gamma 1, beta 0, running statistics (0, 1).
    pub fn new(channels: usize) -> Self {
        Self::with_hyper(channels, DEFAULT_BN_MOMENTUM, DEFAULT_BN_EPSILON)
    }

    pub fn with_hyper(channels: usize, momentum: Real, epsilon: Real) -> Self {
        BatchNormParams {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum,
            epsilon,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        let c = self.channels();
        if self.beta.len() != c || self.running_mean.len() != c || self.running_var.len() != c {
            return Err(Error::shape("batch-norm parameter vectors differ in length"));
        }
        if x.shape().c != c {
            return Err(Error::shape(format!(
                "batch norm expects {c} channels, got {}",
                x.shape().c
            )));
        }
        Ok(())
    }
}

/// Normalized activations and inverse standard deviations from a train-mode
/// forward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    mode: Mode,
    x_hat: Option<Tensor>,
    inv_std: Vec<Real>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormGrads {
    pub gamma: Vec<Real>,
    pub beta: Vec<Real>,
}

/// Applies `scale[c]·x + shift[c]` per channel.
fn affine(x: &Tensor, scale: &[Real], shift: &[Real]) -> Tensor {
    let s = x.shape();
    let hw = s.plane();
    let mut y = Tensor::zeros(s);
    par::for_each_chunk_mut(y.data_mut(), hw, |plane, out| {
        let c = plane % s.c;
        let src = &x.data()[plane * hw..(plane + 1) * hw];
        for (o, &v) in out.iter_mut().zip(src) {
            *o = scale[c] * v + shift[c];
        }
    });
    y
}

/// Inference-mode forward pass using running statistics; mutates nothing.
pub fn batchnorm_infer(x: &Tensor, p: &BatchNormParams) -> Result<Tensor> {
    p.check(x)?;
    let (scale, shift): (Vec<Real>, Vec<Real>) = (0..p.channels())
        .map(|c| {
            let inv = 1.0 / (p.running_var[c] + p.epsilon).sqrt();
            (p.gamma[c] * inv, p.beta[c] - p.gamma[c] * p.running_mean[c] * inv)
        })
        .unzip();
    Ok(affine(x, &scale, &shift))
}

const LANES: usize = 8;

/// `Σ f(a_i, b_i)` with independent lane accumulators combined in a fixed
/// order.
#[inline]
fn lane_sum(a: &[Real], b: &[Real], f: impl Fn(Real, Real) -> Real) -> Real {
    let mut acc = [0.0 as Real; LANES];
    let (ca, cb) = (a.chunks_exact(LANES), b.chunks_exact(LANES));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            acc[l] += f(x[l], y[l]);
        }
    }
    let tail: Real = ra.iter().zip(rb).map(|(&x, &y)| f(x, y)).sum();
    acc.iter().sum::<Real>() + tail
}

/// Per-channel `Σ f(a, b)` over all samples, accumulated in sample order.
fn channel_sums(
    s: Shape,
    a: &[Real],
    b: &[Real],
    f: impl Fn(usize, Real, Real) -> Real + Sync + Send,
) -> Vec<Real> {
    let hw = s.plane();
    par::map_indexed(s.c, |c| {
        let mut total = 0.0;
        for n in 0..s.n {
            let r = (n * s.c + c) * hw..(n * s.c + c + 1) * hw;
            total += lane_sum(&a[r.clone()], &b[r], |x, y| f(c, x, y));
        }
        total
    })
}

/// Train mode normalizes with the batch mean and (biased) variance and folds
/// them into the running statistics; infer mode uses the running statistics.
pub fn batchnorm_forward(
    x: &Tensor,
    p: &mut BatchNormParams,
    mode: Mode,
) -> Result<(Tensor, BatchNormCache)> {
    if mode == Mode::Infer {
        let y = batchnorm_infer(x, p)?;
        return Ok((
            y,
            BatchNormCache {
                mode,
                x_hat: None,
                inv_std: Vec::new(),
            },
        ));
    }
    p.check(x)?;
    let s = x.shape();
    let m = (s.n * s.plane()) as Real;
    let xd = x.data();
    let mean: Vec<Real> = channel_sums(s, xd, xd, |_, v, _| v)
        .into_iter()
        .map(|v| v / m)
        .collect();
    let var: Vec<Real> = channel_sums(s, xd, xd, |c, v, _| {
        let d = v - mean[c];
        d * d
    })
    .into_iter()
    .map(|v| v / m)
    .collect();
    let inv_std: Vec<Real> = var.iter().map(|v| 1.0 / (v + p.epsilon).sqrt()).collect();
    let hw = s.plane();
    let mut x_hat = Tensor::zeros(s);
    let mut y = Tensor::zeros(s);
    par::for_each_chunk_mut(x_hat.data_mut(), hw, |plane, out| {
        let c = plane % s.c;
        let src = &xd[plane * hw..(plane + 1) * hw];
        for (o, &v) in out.iter_mut().zip(src) {
            *o = (v - mean[c]) * inv_std[c];
        }
    });
    let xh = x_hat.data();
    par::for_each_chunk_mut(y.data_mut(), hw, |plane, out| {
        let c = plane % s.c;
        let src = &xh[plane * hw..(plane + 1) * hw];
        for (o, &v) in out.iter_mut().zip(src) {
            *o = p.gamma[c] * v + p.beta[c];
        }
    });
    for c in 0..s.c {
        p.running_mean[c] = (1.0 - p.momentum) * p.running_mean[c] + p.momentum * mean[c];
        p.running_var[c] = (1.0 - p.momentum) * p.running_var[c] + p.momentum * var[c];
    }
    Ok((
        y,
        BatchNormCache {
            mode,
            x_hat: Some(x_hat),
            inv_std,
        },
    ))
}

/// Exact gradient of the train-mode forward map.
pub fn batchnorm_backward(
    grad_y: &Tensor,
    cache: BatchNormCache,
    p: &BatchNormParams,
) -> Result<(Tensor, BatchNormGrads)> {
    let x_hat = match (cache.mode, cache.x_hat) {
        (Mode::Train, Some(x_hat)) => x_hat,
        _ => {
            return Err(Error::Usage(
                "batch-norm backward needs a cache from a train-mode forward".into(),
            ))
        }
    };
    let s = x_hat.shape();
    if grad_y.shape() != s {
        return Err(Error::shape(format!(
            "batch-norm backward expects grad of shape {s}, got {}",
            grad_y.shape()
        )));
    }
    let m = (s.n * s.plane()) as Real;
    let (gy, xh) = (grad_y.data(), x_hat.data());
    let grad_beta = channel_sums(s, gy, gy, |_, g, _| g);
    let grad_gamma = channel_sums(s, gy, xh, |_, g, x| g * x);

    // dx = γ·inv_std/m · (m·dy − Σdy − x̂·Σ(dy·x̂))
    let hw = s.plane();
    let mut grad_x = Tensor::zeros(s);
    par::for_each_chunk_mut(grad_x.data_mut(), hw, |plane, out| {
        let c = plane % s.c;
        let k = p.gamma[c] * cache.inv_std[c] / m;
        let r = plane * hw..(plane + 1) * hw;
        for ((o, &g), &x) in out.iter_mut().zip(&gy[r.clone()]).zip(&xh[r]) {
            *o = k * (m * g - grad_beta[c] - x * grad_gamma[c]);
        }
    });
    Ok((
        grad_x,
        BatchNormGrads {
            gamma: grad_gamma,
            beta: grad_beta,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(shape: (usize, usize, usize, usize), seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Tensor::new(shape, 0.0).unwrap();
        t.data_mut()
            .iter_mut()
            .for_each(|v| *v = rng.gen_range(-2.0..3.0));
        t
    }

    fn channel_stats(y: &Tensor, c: usize) -> (Real, Real) {
        let s = y.shape();
        let vals: Vec<Real> = (0..s.n).flat_map(|n| y.plane(n, c).to_vec()).collect();
        let mean = vals.iter().sum::<Real>() / vals.len() as Real;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<Real>() / vals.len() as Real;
        (mean, var)
    }

    #[test]
    fn train_mode_normalizes() {
        let x = random_tensor((2, 3, 4, 4), 7);
        let mut p = BatchNormParams::new(3);
        let (y, _) = batchnorm_forward(&x, &mut p, Mode::Train).unwrap();
        for c in 0..3 {
            let (mean, var) = channel_stats(&y, c);
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn constant_input_maps_to_beta() {
        let x = Tensor::new((2, 2, 3, 3), 4.25).unwrap();
        let mut p = BatchNormParams::new(2);
        p.beta = vec![0.5, -1.0];
        p.gamma = vec![3.0, 2.0];
        let (y, _) = batchnorm_forward(&x, &mut p, Mode::Train).unwrap();
        for n in 0..2 {
            assert!(y.plane(n, 0).iter().all(|&v| v == 0.5));
            assert!(y.plane(n, 1).iter().all(|&v| v == -1.0));
        }
    }

    #[test]
    fn infer_with_identity_stats() {
        let x = random_tensor((1, 2, 3, 3), 8);
        let p = BatchNormParams::new(2);
        let before = p.clone();
        let y = batchnorm_infer(&x, &p).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            // scaled by 1/sqrt(1 + eps)
            assert!((a - b).abs() <= b.abs() * 1e-5);
        }
        assert_eq!(p, before);
    }

    #[test]
    fn running_stats_update() {
        let x = random_tensor((2, 1, 3, 3), 9);
        let mut p = BatchNormParams::new(1);
        batchnorm_forward(&x, &mut p, Mode::Train).unwrap();
        let (mean, var) = channel_stats(&x, 0);
        assert!((p.running_mean[0] - 0.1 * mean).abs() < 1e-12);
        assert!((p.running_var[0] - (0.9 + 0.1 * var)).abs() < 1e-12);
        assert!(p.running_var[0] >= 0.0);
    }

    #[test]
    fn backward_basics() {
        let x = random_tensor((2, 3, 4, 4), 10);
        let mut p = BatchNormParams::new(3);
        let (_, cache) = batchnorm_forward(&x, &mut p, Mode::Train).unwrap();
        let (gx, g) = batchnorm_backward(&Tensor::zeros_like(&x), cache, &p).unwrap();
        assert!(gx.data().iter().all(|&v| v == 0.0));
        assert!(g.gamma.iter().chain(&g.beta).all(|&v| v == 0.0));

        let gy = random_tensor((2, 3, 4, 4), 11);
        let (_, cache) = batchnorm_forward(&x, &mut p, Mode::Train).unwrap();
        let (_, g) = batchnorm_backward(&gy, cache, &p).unwrap();
        for c in 0..3 {
            let s: Real = (0..2).map(|n| gy.plane(n, c).iter().sum::<Real>()).sum();
            assert!((g.beta[c] - s).abs() < 1e-12);
        }
    }

    #[test]
    fn infer_cache_rejected_by_backward() {
        let x = random_tensor((1, 1, 2, 2), 12);
        let mut p = BatchNormParams::new(1);
        let (_, cache) = batchnorm_forward(&x, &mut p, Mode::Infer).unwrap();
        assert!(matches!(
            batchnorm_backward(&x, cache, &p),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn channel_mismatch() {
        let x = random_tensor((1, 2, 2, 2), 13);
        let mut p = BatchNormParams::new(3);
        assert!(batchnorm_forward(&x, &mut p, Mode::Train).is_err());
    }
}
