//! Synthetic fingerprints with exactly known pore positions.
//!
//! Ridges are dark stripes from `cos(φ)` where the phase `φ` is a plane wave
//! bent by a few low-frequency sinusoidal warps, so orientation and local
//! period drift smoothly across the image. Pores are bright Gaussian dots
//! placed on ridge center lines (phase ≡ π) and snapped to integer pixels.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::grid::{GrayImage, Grid};
use super::pores::{Pore, PoreSet};
use crate::error::{Error, Result};
use crate::tensor::Real;

const WARPS: usize = 3;
/// Upper bound on the warp's contribution to the phase gradient, relative to
/// the carrier wave.
const WARP_SLOPE: f64 = 0.2;
const BACKGROUND: f64 = 0.55;
const RIDGE_CONTRAST: f64 = 0.3;
const PORE_AMPLITUDE: f64 = 0.55;
/// Distance kept between pore centers and the image border.
const BORDER_MARGIN: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    /// Distance between neighbouring ridge centers, in pixels.
    pub ridge_period: f64,
    /// Seed of the ridge orientation/phase field.
    pub orientation_seed: u64,
    /// Expected pores per 100×100 pixels.
    pub pore_density: f64,
    /// Pore radius in pixels; the Gaussian dot has sigma `radius / 2`.
    pub pore_radius: f64,
    /// Standard deviation of additive Gaussian pixel noise.
    pub noise: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            ridge_period: 12.0,
            orientation_seed: 0,
            pore_density: 25.0,
            pore_radius: 2.5,
            noise: 0.05,
        }
    }
}

impl SynthParams {
    /// Average ridge width, half the ridge period.
    pub fn ridge_width(&self) -> f64 {
        self.ridge_period / 2.0
    }

    /// Minimum center-to-center pore distance.
    pub fn min_separation(&self) -> f64 {
        2.0 * self.pore_radius + 2.0
    }

    fn validate(&self) -> Result<()> {
        if !(self.ridge_period >= 4.0) {
            return Err(Error::Config(format!(
                "ridge period {} must be >= 4 px",
                self.ridge_period
            )));
        }
        if !(self.pore_density >= 0.0) || !(self.pore_radius > 0.0) || !(self.noise >= 0.0) {
            return Err(Error::Config(
                "pore density and noise must be non-negative, pore radius positive".into(),
            ));
        }
        Ok(())
    }
}

/// Phase field `φ(r, c)` and its gradient.
struct PhaseField {
    k: f64,
    dir: (f64, f64),
    warps: [(f64, (f64, f64), f64, f64); WARPS],
}

impl PhaseField {
    fn new(period: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta: f64 = rng.gen_range(0.0..PI);
        let warps = std::array::from_fn(|_| {
            let length: f64 = rng.gen_range(150.0..300.0);
            let alpha: f64 = rng.gen_range(0.0..TAU);
            let amp = rng.gen_range(0.5..1.0) * WARP_SLOPE * length / (TAU * WARPS as f64);
            (amp, (alpha.cos(), alpha.sin()), TAU / length, rng.gen_range(0.0..TAU))
        });
        PhaseField {
            k: TAU / period,
            dir: (theta.cos(), theta.sin()),
            warps,
        }
    }

    fn eval(&self, r: f64, c: f64) -> (f64, (f64, f64)) {
        let mut u = r * self.dir.0 + c * self.dir.1;
        let mut g = self.dir;
        for &(amp, (dr, dc), freq, phase) in &self.warps {
            let arg = freq * (r * dr + c * dc) + phase;
            u += amp * arg.sin();
            let d = amp * freq * arg.cos();
            g.0 += d * dr;
            g.1 += d * dc;
        }
        (self.k * u, (self.k * g.0, self.k * g.1))
    }

    /// Moves `(r, c)` along the gradient onto the nearest ridge center line.
    fn snap_to_ridge(&self, mut r: f64, mut c: f64) -> (f64, f64) {
        for _ in 0..4 {
            let (phi, (gr, gc)) = self.eval(r, c);
            let target = PI + TAU * ((phi - PI) / TAU).round();
            let g2 = gr * gr + gc * gc;
            r -= (phi - target) * gr / g2;
            c -= (phi - target) * gc / g2;
        }
        (r, c)
    }
}

fn ridge_value(field: &PhaseField, r: f64, c: f64) -> f64 {
    BACKGROUND + RIDGE_CONTRAST * field.eval(r, c).0.cos()
}

/// Generates an `h×w` fingerprint and its pore centers, deterministic in
/// `(params, seed)`.
pub fn synth_fingerprint(
    h: usize,
    w: usize,
    params: &SynthParams,
    seed: u64,
) -> Result<(GrayImage, PoreSet)> {
    params.validate()?;
    if h == 0 || w == 0 {
        return Err(Error::input("image dimensions must be positive"));
    }
    let field = PhaseField::new(params.ridge_period, params.orientation_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let requested = (params.pore_density * (h * w) as f64 / 10_000.0).round() as usize;
    let pores = place_pores(h, w, params, &field, requested, &mut rng)?;

    let sigma = params.pore_radius / 2.0;
    let reach = (4.0 * sigma).ceil() as isize;
    let mut img = Grid::new(h, w, 0.0);
    for r in 0..h {
        for c in 0..w {
            img.set(r, c, ridge_value(&field, r as f64, c as f64) as Real);
        }
    }
    for p in pores.iter() {
        let (pr, pc) = (p.row as isize, p.col as isize);
        for r in (pr - reach).max(0)..=(pr + reach).min(h as isize - 1) {
            for c in (pc - reach).max(0)..=(pc + reach).min(w as isize - 1) {
                let d2 = (r as f64 - p.row).powi(2) + (c as f64 - p.col).powi(2);
                let v = PORE_AMPLITUDE * (-d2 / (2.0 * sigma * sigma)).exp();
                let (r, c) = (r as usize, c as usize);
                img.set(r, c, img.get(r, c) + v as Real);
            }
        }
    }
    if params.noise > 0.0 {
        let normal = Normal::new(0.0, params.noise).expect("finite noise level");
        for v in img.data_mut() {
            *v += normal.sample(&mut rng) as Real;
        }
    }
    for v in img.data_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    Ok((GrayImage::new(img)?, pores))
}

fn place_pores(
    h: usize,
    w: usize,
    params: &SynthParams,
    field: &PhaseField,
    requested: usize,
    rng: &mut ChaCha8Rng,
) -> Result<PoreSet> {
    let mut placed: Vec<Pore> = Vec::with_capacity(requested);
    if requested == 0 {
        return Ok(PoreSet::default());
    }
    let (hi_r, hi_c) = (h as f64 - 1.0 - BORDER_MARGIN, w as f64 - 1.0 - BORDER_MARGIN);
    if hi_r < BORDER_MARGIN || hi_c < BORDER_MARGIN {
        return Err(Error::Infeasible {
            placed: 0,
            requested,
        });
    }
    let min_sep = params.min_separation();
    // spatial hash with cells at least `min_sep` wide
    let cell = min_sep.max(1.0);
    let (gr, gc) = ((h as f64 / cell) as usize + 1, (w as f64 / cell) as usize + 1);
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); gr * gc];
    let max_attempts = 50 * requested + 1000;
    for _ in 0..max_attempts {
        if placed.len() == requested {
            break;
        }
        let r0 = rng.gen_range(BORDER_MARGIN..=hi_r);
        let c0 = rng.gen_range(BORDER_MARGIN..=hi_c);
        let (r, c) = field.snap_to_ridge(r0, c0);
        let (r, c) = (r.round(), c.round());
        if !(BORDER_MARGIN..=hi_r).contains(&r) || !(BORDER_MARGIN..=hi_c).contains(&c) {
            continue;
        }
        let cand = Pore::new(r, c);
        let (br, bc) = ((r / cell) as usize, (c / cell) as usize);
        let clash = (br.saturating_sub(1)..=(br + 1).min(gr - 1)).any(|i| {
            (bc.saturating_sub(1)..=(bc + 1).min(gc - 1))
                .any(|j| buckets[i * gc + j].iter().any(|&k| placed[k].distance(&cand) < min_sep))
        });
        if clash {
            continue;
        }
        buckets[br * gc + bc].push(placed.len());
        placed.push(cand);
    }
    if placed.len() < requested {
        return Err(Error::Infeasible {
            placed: placed.len(),
            requested,
        });
    }
    Ok(PoreSet::new(placed))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noiseless() -> SynthParams {
        SynthParams {
            noise: 0.0,
            ..SynthParams::default()
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let p = SynthParams::default();
        let a = synth_fingerprint(120, 100, &p, 7).unwrap();
        let b = synth_fingerprint(120, 100, &p, 7).unwrap();
        assert_eq!(a, b);
        let c = synth_fingerprint(120, 100, &p, 8).unwrap();
        assert_ne!(a.1, c.1);
    }

    #[test]
    fn zero_density_is_pure_ridges() {
        let p = SynthParams {
            pore_density: 0.0,
            ..noiseless()
        };
        let (img, pores) = synth_fingerprint(64, 64, &p, 1).unwrap();
        assert!(pores.is_empty());
        assert!(img.max_value() <= (BACKGROUND + RIDGE_CONTRAST) as Real + 1e-6);
    }

    #[test]
    fn pores_are_local_maxima_of_noiseless_image() {
        let (img, pores) = synth_fingerprint(160, 200, &noiseless(), 3).unwrap();
        assert!(pores.len() > 40);
        for p in pores.iter() {
            let (r, c) = p.pixel();
            let v = img.get(r, c);
            for rr in r.saturating_sub(2)..=(r + 2).min(159) {
                for cc in c.saturating_sub(2)..=(c + 2).min(199) {
                    if (rr, cc) != (r, c) {
                        assert!(img.get(rr, cc) < v, "pore {p:?} not a strict maximum");
                    }
                }
            }
        }
    }

    #[test]
    fn pores_keep_separation_and_bounds() {
        let p = SynthParams::default();
        let (_, pores) = synth_fingerprint(240, 320, &p, 11).unwrap();
        assert_eq!(pores.len(), (25.0f64 * 240.0 * 320.0 / 10_000.0).round() as usize);
        pores.validate(240, 320).unwrap();
        for (i, a) in pores.iter().enumerate() {
            for b in pores.iter().skip(i + 1) {
                assert!(a.distance(b) >= p.min_separation());
            }
        }
    }

    #[test]
    fn pores_sit_on_ridge_centers() {
        let p = noiseless();
        let field = PhaseField::new(p.ridge_period, p.orientation_seed);
        let (_, pores) = synth_fingerprint(100, 100, &p, 5).unwrap();
        for q in pores.iter() {
            let phi = field.eval(q.row, q.col).0;
            // within ~0.71 px of the center line: |cos φ + 1| small
            assert!(phi.cos() < -0.8, "pore {q:?} off ridge, cos φ = {}", phi.cos());
        }
    }

    #[test]
    fn infeasible_density_reports_count() {
        let p = SynthParams {
            pore_density: 2000.0,
            ..SynthParams::default()
        };
        match synth_fingerprint(60, 60, &p, 1) {
            Err(Error::Infeasible { placed, requested }) => {
                assert_eq!(requested, 720);
                assert!(placed < requested);
            }
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn rejects_short_period() {
        let p = SynthParams {
            ridge_period: 3.0,
            ..SynthParams::default()
        };
        assert!(synth_fingerprint(50, 50, &p, 0).is_err());
    }
}
