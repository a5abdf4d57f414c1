//! Finite-difference checks of the hand-written backward passes.
//!
//! Every check contracts a layer output with a fixed random tensor `r`, so
//! the scalar objective is `Σ r ⊙ f(x)`, and compares the analytic gradient
//! with `(L(v+h) - L(v-h)) / 2h` at randomly probed coordinates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::layers::{
    batchnorm_backward, batchnorm_forward, conv2d_backward, conv2d_forward, mse_loss,
    relu_backward, relu_forward, BatchNormParams, ConvParams, Mode,
};
use crate::network::{Init, Network, NetworkConfig};
use crate::{Real, Shape, Tensor};

/// Finite-difference step.
pub const STEP: Real = 1e-5;
/// Probes per checked quantity.
pub const PROBES: usize = 24;

/// Outcome of probing one gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub probes: usize,
    /// Probes redrawn because `v ± h` switched a ReLU unit.
    pub skipped: usize,
    pub worst_rel_err: Real,
}

/// `|a - n| / max(|a|, |n|)`, with the denominator floored at 1e-8.
pub fn rel_err(analytic: Real, numeric: Real) -> Real {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn random_tensor(rng: &mut ChaCha8Rng, s: Shape) -> Tensor {
    let data = (0..s.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_vec(s, data).expect("shape matches data")
}

fn dot(a: &Tensor, b: &Tensor) -> Real {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Probes `PROBES` random coordinates of `values` against `grad`.
/// Differences below the rounding noise of the central difference itself
/// (a few ulps of the objective divided by `2h`) count as agreement; this
/// matters for gradients that are exactly zero, such as a conv bias feeding
/// batch normalization. `f`
/// returns the objective and the ReLU activation pattern (empty for layers
/// without one); coordinates whose `v + h` and `v - h` patterns differ are
/// redrawn.
pub fn probe<F>(
    name: &str,
    rng: &mut impl Rng,
    values: &mut [Real],
    grad: &[Real],
    mut f: F,
) -> CheckReport
where
    F: FnMut(&[Real]) -> (Real, Vec<bool>),
{
    assert_eq!(values.len(), grad.len(), "{name}: gradient length");
    let mut worst: Real = 0.0;
    let mut skipped = 0;
    let mut done = 0;
    while done < PROBES {
        let i = rng.gen_range(0..values.len());
        let v = values[i];
        values[i] = v + STEP;
        let (plus, up) = f(values);
        values[i] = v - STEP;
        let (minus, down) = f(values);
        values[i] = v;
        if up != down {
            skipped += 1;
            assert!(skipped <= 10 * PROBES, "{name}: too many probes cross a kink");
            continue;
        }
        done += 1;
        let numeric = (plus - minus) / (2.0 * STEP);
        let noise = 8.0 * Real::EPSILON * plus.abs().max(minus.abs()) / (2.0 * STEP);
        let e = if (grad[i] - numeric).abs() <= noise {
            0.0
        } else {
            rel_err(grad[i], numeric)
        };
        if !(e <= worst) {
            worst = e;
        }
    }
    CheckReport {
        name: name.to_string(),
        probes: done,
        skipped,
        worst_rel_err: worst,
    }
}

pub fn conv(seed: u64) -> Vec<CheckReport> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (ci, co, k, h, w) in [(2, 3, 3, 5, 6), (5, 4, 3, 6, 5), (3, 2, 1, 4, 4), (1, 3, 7, 9, 8)] {
        let x = random_tensor(&mut rng, Shape::new(2, ci, h, w).expect("fixture shapes are consistent"));
        let wt = random_tensor(&mut rng, Shape::new(co, ci, k, k).expect("fixture shapes are consistent"));
        let bias: Vec<Real> = (0..co).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p = ConvParams::new(wt, bias).expect("fixture shapes are consistent");
        let (y, cache) = conv2d_forward(&x, &p).expect("fixture shapes are consistent");
        let r = random_tensor(&mut rng, y.shape());
        let (gx, g) = conv2d_backward(&r, cache, &p).expect("fixture shapes are consistent");
        let tag = format!("conv {ci}->{co} k{k}");

        let mut xv = x.data().to_vec();
        out.push(probe(&format!("{tag} input"), &mut rng, &mut xv, gx.data(), |v| {
            let xt = Tensor::from_vec(x.shape(), v.to_vec()).expect("fixture shapes are consistent");
            (dot(&conv2d_forward(&xt, &p).expect("fixture shapes are consistent").0, &r), Vec::new())
        }));
        let mut wv = p.weights.data().to_vec();
        out.push(probe(&format!("{tag} weights"), &mut rng, &mut wv, g.weights.data(), |v| {
            let q = ConvParams::new(
                Tensor::from_vec(p.weights.shape(), v.to_vec()).expect("fixture shapes are consistent"),
                p.bias.clone(),
            )
            .expect("fixture shapes are consistent");
            (dot(&conv2d_forward(&x, &q).expect("fixture shapes are consistent").0, &r), Vec::new())
        }));
        let mut bv = p.bias.clone();
        out.push(probe(&format!("{tag} bias"), &mut rng, &mut bv, &g.bias, |v| {
            let q = ConvParams::new(p.weights.clone(), v.to_vec()).expect("fixture shapes are consistent");
            (dot(&conv2d_forward(&x, &q).expect("fixture shapes are consistent").0, &r), Vec::new())
        }));
    }
    out
}


pub fn batchnorm(seed: u64) -> Vec<CheckReport> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = Shape::new(3, 4, 5, 5).expect("fixture shapes are consistent");
    let x = random_tensor(&mut rng, s);
    let mut p = BatchNormParams::new(4);
    for c in 0..4 {
        p.gamma[c] = rng.gen_range(0.5..1.5);
        p.beta[c] = rng.gen_range(-0.5..0.5);
    }
    let base = p.clone();
    let (y, cache) = batchnorm_forward(&x, &mut p, Mode::Train).expect("fixture shapes are consistent");
    let r = random_tensor(&mut rng, y.shape());
    let (gx, g) = batchnorm_backward(&r, cache, &base).expect("fixture shapes are consistent");
    let eval = |x: &Tensor, p: &BatchNormParams| {
        let mut q = p.clone();
        let y = batchnorm_forward(x, &mut q, Mode::Train).expect("fixture shapes are consistent").0;
        (dot(&y, &r), Vec::new())
    };

    let mut xv = x.data().to_vec();
    out.push(probe("batchnorm input", &mut rng, &mut xv, gx.data(), |v| {
        eval(&Tensor::from_vec(s, v.to_vec()).expect("fixture shapes are consistent"), &base)
    }));
    let mut gv = base.gamma.clone();
    out.push(probe("batchnorm gamma", &mut rng, &mut gv, &g.gamma, |v| {
        eval(&x, &BatchNormParams { gamma: v.to_vec(), ..base.clone() })
    }));
    let mut bv = base.beta.clone();
    out.push(probe("batchnorm beta", &mut rng, &mut bv, &g.beta, |v| {
        eval(&x, &BatchNormParams { beta: v.to_vec(), ..base.clone() })
    }));
    out
}


pub fn relu(seed: u64) -> Vec<CheckReport> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = Shape::new(2, 3, 4, 4).expect("fixture shapes are consistent");
    // keep inputs away from the kink
    let data = (0..s.len())
        .map(|_| {
            let v: Real = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    let x = Tensor::from_vec(s, data).expect("fixture shapes are consistent");
    let (y, cache) = relu_forward(&x);
    let r = random_tensor(&mut rng, y.shape());
    let gx = relu_backward(&r, cache).expect("fixture shapes are consistent");
    let mut xv = x.data().to_vec();
    out.push(probe("relu input", &mut rng, &mut xv, gx.data(), |v| {
        let xt = Tensor::from_vec(s, v.to_vec()).expect("fixture shapes are consistent");
        let (y, cache) = relu_forward(&xt);
        (dot(&y, &r), cache.active().collect())
    }));
    out
}


pub fn loss(seed: u64) -> Vec<CheckReport> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = Shape::new(3, 1, 4, 5).expect("fixture shapes are consistent");
    let pred = random_tensor(&mut rng, s);
    let label = random_tensor(&mut rng, s);
    let (_, g) = mse_loss(&pred, &label).expect("fixture shapes are consistent");
    let mut pv = pred.data().to_vec();
    out.push(probe("loss prediction", &mut rng, &mut pv, g.data(), |v| {
        let pred = Tensor::from_vec(s, v.to_vec()).expect("fixture shapes are consistent");
        (mse_loss(&pred, &label).expect("fixture shapes are consistent").0, Vec::new())
    }));
    out
}


/// Width-2 network on two 8×8 inputs with the squared-error loss.
pub fn network(seed: u64) -> Vec<CheckReport> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = NetworkConfig {
        input_size: (8, 8),
        seed: 11,
        ..NetworkConfig::with_width(2)
    };
    let mut net = Network::new(config, Init::FanIn).expect("fixture shapes are consistent");
    let s = Shape::new(2, 1, 8, 8).expect("fixture shapes are consistent");
    let x = random_tensor(&mut rng, s);
    let label = random_tensor(&mut rng, s);
    let (pred, cache) = net.forward_train(&x).expect("fixture shapes are consistent");
    let (_, gy) = mse_loss(&pred, &label).expect("fixture shapes are consistent");
    let grads = net.backward(&gy, Some(cache)).expect("fixture shapes are consistent");
    let flat_grads: Vec<Real> = grads.slices().concat();
    let mut flat: Vec<Real> = net.params().concat();
    assert_eq!(flat.len(), flat_grads.len());
    assert_eq!(flat.len(), net.parameter_count());

    let base = net.clone();
    out.push(probe("network parameters", &mut rng, &mut flat, &flat_grads, |v| {
        let mut n = base.clone();
        let mut off = 0;
        for p in n.params_mut() {
            p.copy_from_slice(&v[off..off + p.len()]);
            off += p.len();
        }
        let (y, cache) = n.forward_train(&x).expect("fixture shapes are consistent");
        (mse_loss(&y, &label).expect("fixture shapes are consistent").0, cache.activation_pattern())
    }));
    out
}

/// Every layer kernel followed by the full network.
pub fn suite(seed: u64) -> Vec<CheckReport> {
    let mut out = conv(seed);
    out.extend(batchnorm(seed + 1));
    out.extend(relu(seed + 2));
    out.extend(loss(seed + 3));
    out.extend(network(seed + 4));
    out
}
