//! Stride-1, same-padded 2-D convolution.
//!
//! Wide inputs run one GEMM per kernel tap over a zero-padded copy of the
//! sample; narrow inputs (the single-channel stem) lower to a column matrix
//! and run one GEMM. `*_direct` functions are plain nested loops kept as the reference
//! implementation. On inputs whose products and partial sums are exactly
//! representable the two paths agree bit for bit.

use super::gemm::{gemm, View, ViewMut};
use crate::error::{Error, Result};
use crate::par;
use crate::tensor::{Real, Shape, Tensor};

/// Convolution weights `(out_c, in_c, kh, kw)` and per-output-channel bias.
///
/// Kernels are odd-sized so zero padding of `(k - 1) / 2` on each side keeps
/// the spatial size unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub weights: Tensor,
    pub bias: Vec<Real>,
}

impl ConvParams {
    pub fn new(weights: Tensor, bias: Vec<Real>) -> Result<Self> {
        let s = weights.shape();
        if s.h % 2 == 0 || s.w % 2 == 0 {
            return Err(Error::shape(format!(
                "kernel {}x{} must be odd for same padding",
                s.h, s.w
            )));
        }
        if bias.len() != s.n {
            return Err(Error::shape(format!(
                "bias length {} does not match {} output channels",
                bias.len(),
                s.n
            )));
        }
        Ok(ConvParams { weights, bias })
    }

    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize) -> Result<Self> {
        let w = Tensor::new((out_channels, in_channels, kernel, kernel), 0.0)?;
        Self::new(w, vec![0.0; out_channels])
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape().n
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape().c
    }

    pub fn kernel(&self) -> (usize, usize) {
        let s = self.weights.shape();
        (s.h, s.w)
    }

    /// Inputs feeding one output element.
    pub fn fan_in(&self) -> usize {
        self.weights.shape().sample()
    }

    pub fn all_finite(&self) -> bool {
        self.weights.all_finite() && self.bias.iter().all(|b| b.is_finite())
    }

    fn check_input(&self, x: Shape) -> Result<()> {
        if x.c != self.in_channels() {
            return Err(Error::shape(format!(
                "conv expects {} input channels, got {}",
                self.in_channels(),
                x.c
            )));
        }
        Ok(())
    }
}

/// Forward input saved for the backward pass.
#[derive(Debug, Clone)]
pub struct ConvCache {
    input: Tensor,
}

impl ConvCache {
    pub fn input(&self) -> &Tensor {
        &self.input
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub weights: Tensor,
    pub bias: Vec<Real>,
}

/// Copies shifted, zero-padded input planes into a `(c·kh·kw) × (h·w)`
/// column matrix.
fn im2col(x: &[Real], c: usize, h: usize, w: usize, kh: usize, kw: usize, cols: &mut [Real]) {
    let hw = h * w;
    let (ph, pw) = ((kh / 2) as isize, (kw / 2) as isize);
    for ch in 0..c {
        let plane = &x[ch * hw..(ch + 1) * hw];
        for u in 0..kh {
            for v in 0..kw {
                let row = &mut cols[((ch * kh + u) * kw + v) * hw..][..hw];
                let shift = v as isize - pw;
                let (j0, j1) = valid_span(w, shift);
                for i in 0..h {
                    let dst = &mut row[i * w..(i + 1) * w];
                    let si = i as isize + u as isize - ph;
                    if si < 0 || si >= h as isize || j0 >= j1 {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[si as usize * w..][..w];
                    dst[..j0].fill(0.0);
                    dst[j1..].fill(0.0);
                    dst[j0..j1].copy_from_slice(
                        &src[(j0 as isize + shift) as usize..(j1 as isize + shift) as usize],
                    );
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds a column matrix back onto planes.
fn col2im_add(cols: &[Real], c: usize, h: usize, w: usize, kh: usize, kw: usize, x: &mut [Real]) {
    let hw = h * w;
    let (ph, pw) = ((kh / 2) as isize, (kw / 2) as isize);
    for ch in 0..c {
        let plane = &mut x[ch * hw..(ch + 1) * hw];
        for u in 0..kh {
            for v in 0..kw {
                let row = &cols[((ch * kh + u) * kw + v) * hw..][..hw];
                let shift = v as isize - pw;
                let (j0, j1) = valid_span(w, shift);
                if j0 >= j1 {
                    continue;
                }
                for i in 0..h {
                    let si = i as isize + u as isize - ph;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[si as usize * w..][..w];
                    let src = &row[i * w + j0..i * w + j1];
                    let dst = &mut dst[(j0 as isize + shift) as usize..(j1 as isize + shift) as usize];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += *s;
                    }
                }
            }
        }
    }
}

/// Output columns `j` for which `j + shift` lands inside `0..w`.
fn valid_span(w: usize, shift: isize) -> (usize, usize) {
    let j0 = (-shift).max(0) as usize;
    let j1 = (w as isize - shift).clamp(0, w as isize) as usize;
    (j0.min(w), j1)
}

/// Inputs with at least this many channels use the shifted-tap path.
const SHIFT_MIN_CHANNELS: usize = 4;

/// Zero-padded copy of one sample. Planes have row stride `wp = w + 2·rw`
/// and are `stride` apart; output pixel `i·wp + j` reads tap `(u, v)` at
/// `i·wp + j + u·wp + v`, so each tap is a contiguous window of every plane.
struct Padded {
    data: Vec<Real>,
    wp: usize,
    stride: usize,
}

impl Padded {
    fn new(x: &[Real], xs: Shape, kh: usize, kw: usize) -> Self {
        let (rh, rw) = (kh / 2, kw / 2);
        let wp = xs.w + 2 * rw;
        let stride = (xs.h + 2 * rh) * wp + 2 * rw;
        let mut data = vec![0.0; xs.c * stride];
        for (ch, plane) in x.chunks(xs.plane()).enumerate() {
            for (i, row) in plane.chunks(xs.w).enumerate() {
                let at = ch * stride + (i + rh) * wp + rw;
                data[at..at + xs.w].copy_from_slice(row);
            }
        }
        Padded { data, wp, stride }
    }

    fn tap(&self, u: usize, v: usize) -> View<'_> {
        View {
            data: &self.data[u * self.wp + v..],
            rs: self.stride,
            cs: 1,
        }
    }
}

fn use_shift(xs: Shape, p: &ConvParams) -> bool {
    let (kh, kw) = p.kernel();
    (kh > 1 || kw > 1) && xs.c >= SHIFT_MIN_CHANNELS
}

fn forward_sample(x: &[Real], xs: Shape, p: &ConvParams, y: &mut [Real]) {
    let (kh, kw) = p.kernel();
    let out_c = p.out_channels();
    let hw = xs.plane();
    let k = xs.c * kh * kw;
    if use_shift(xs, p) {
        let pad = Padded::new(x, xs, kh, kw);
        let np = xs.h * pad.wp;
        let mut buf = vec![0.0; out_c * np];
        for (o, row) in buf.chunks_mut(np).enumerate() {
            row.fill(p.bias[o]);
        }
        for u in 0..kh {
            for v in 0..kw {
                let w = View {
                    data: &p.weights.data()[u * kw + v..],
                    rs: k,
                    cs: kh * kw,
                };
                let c = ViewMut {
                    data: &mut buf,
                    rs: np,
                    cs: 1,
                };
                gemm(out_c, xs.c, np, 1.0, w, pad.tap(u, v), 1.0, c);
            }
        }
        for (dst, src) in y.chunks_mut(xs.w).zip(buf.chunks(pad.wp)) {
            dst.copy_from_slice(&src[..xs.w]);
        }
        return;
    }
    for (o, row) in y.chunks_mut(hw).enumerate() {
        row.fill(p.bias[o]);
    }
    let weights = View {
        data: p.weights.data(),
        rs: k,
        cs: 1,
    };
    let c = ViewMut {
        data: y,
        rs: hw,
        cs: 1,
    };
    if kh == 1 && kw == 1 {
        let cols = View {
            data: x,
            rs: hw,
            cs: 1,
        };
        gemm(out_c, k, hw, 1.0, weights, cols, 1.0, c);
    } else {
        let mut cols = vec![0.0; k * hw];
        im2col(x, xs.c, xs.h, xs.w, kh, kw, &mut cols);
        let cols = View {
            data: &cols,
            rs: hw,
            cs: 1,
        };
        gemm(out_c, k, hw, 1.0, weights, cols, 1.0, c);
    }
}

/// Per-sample `(grad_x, grad_w)` on the shifted-tap path.
fn backward_sample_shift(
    xn: &[Real],
    gy: &[Real],
    xs: Shape,
    p: &ConvParams,
) -> (Vec<Real>, Vec<Real>) {
    let (kh, kw) = p.kernel();
    let out_c = p.out_channels();
    let k = xs.c * kh * kw;
    let pad = Padded::new(xn, xs, kh, kw);
    let np = xs.h * pad.wp;
    // upstream gradient on the padded-row grid, zero in the discarded columns
    let mut g = vec![0.0; out_c * np];
    for (dst, src) in g.chunks_mut(pad.wp).zip(gy.chunks(xs.w)) {
        dst[..xs.w].copy_from_slice(src);
    }
    let gv = View {
        data: &g,
        rs: np,
        cs: 1,
    };
    let mut gw = vec![0.0; out_c * k];
    let mut gx_pad = vec![0.0; xs.c * pad.stride];
    for u in 0..kh {
        for v in 0..kw {
            let tap = pad.tap(u, v);
            let xt = View {
                data: tap.data,
                rs: 1,
                cs: pad.stride,
            };
            let c = ViewMut {
                data: &mut gw[u * kw + v..],
                rs: k,
                cs: kh * kw,
            };
            gemm(out_c, np, xs.c, 1.0, gv, xt, 0.0, c);
            let wt = View {
                data: &p.weights.data()[u * kw + v..],
                rs: kh * kw,
                cs: k,
            };
            let c = ViewMut {
                data: &mut gx_pad[u * pad.wp + v..],
                rs: pad.stride,
                cs: 1,
            };
            gemm(xs.c, out_c, np, 1.0, wt, gv, 1.0, c);
        }
    }
    let (rh, rw) = (kh / 2, kw / 2);
    let mut gx = vec![0.0; xs.sample()];
    for (ch, plane) in gx.chunks_mut(xs.plane()).enumerate() {
        for (i, row) in plane.chunks_mut(xs.w).enumerate() {
            let at = ch * pad.stride + (i + rh) * pad.wp + rw;
            row.copy_from_slice(&gx_pad[at..at + xs.w]);
        }
    }
    (gx, gw)
}

/// Forward pass without a cache, for inference.
pub fn conv2d_infer(x: &Tensor, p: &ConvParams) -> Result<Tensor> {
    let xs = x.shape();
    p.check_input(xs)?;
    let ys = xs.with_channels(p.out_channels());
    let mut y = Tensor::zeros(ys);
    par::for_each_chunk_mut(y.data_mut(), ys.sample(), |n, out| {
        forward_sample(x.sample(n), xs, p, out);
    });
    Ok(y)
}

/// `y[n,o,i,j] = bias[o] + Σ_{c,u,v} w[o,c,u,v] · x_pad[n,c,i+u,j+v]`.
pub fn conv2d_forward(x: &Tensor, p: &ConvParams) -> Result<(Tensor, ConvCache)> {
    let y = conv2d_infer(x, p)?;
    Ok((y, ConvCache { input: x.clone() }))
}

/// Gradients with respect to input, weights and bias.
pub fn conv2d_backward(
    grad_y: &Tensor,
    cache: ConvCache,
    p: &ConvParams,
) -> Result<(Tensor, ConvGrads)> {
    let x = &cache.input;
    let xs = x.shape();
    let ys = xs.with_channels(p.out_channels());
    if grad_y.shape() != ys {
        return Err(Error::shape(format!(
            "conv backward expects grad of shape {ys}, got {}",
            grad_y.shape()
        )));
    }
    let (kh, kw) = p.kernel();
    let out_c = p.out_channels();
    let hw = xs.plane();
    let k = xs.c * kh * kw;
    let pointwise = kh == 1 && kw == 1;
    let shift = use_shift(xs, p);

    let per_sample = par::map_indexed(xs.n, |n| {
        let xn = x.sample(n);
        let gy = grad_y.sample(n);
        let gb: Vec<Real> = gy.chunks(hw).map(|r| r.iter().sum()).collect();
        if shift {
            let (gx, gw) = backward_sample_shift(xn, gy, xs, p);
            return (gx, gw, gb);
        }
        let mut gw = vec![0.0; out_c * k];
        let mut gx = vec![0.0; xs.sample()];
        let gy_view = View {
            data: gy,
            rs: hw,
            cs: 1,
        };
        let wt = View {
            data: p.weights.data(),
            rs: 1,
            cs: k,
        };
        let gw_out = ViewMut {
            data: &mut gw,
            rs: k,
            cs: 1,
        };
        if pointwise {
            let xt = View {
                data: xn,
                rs: 1,
                cs: hw,
            };
            gemm(out_c, hw, k, 1.0, gy_view, xt, 0.0, gw_out);
            let c = ViewMut {
                data: &mut gx,
                rs: hw,
                cs: 1,
            };
            gemm(k, out_c, hw, 1.0, wt, gy_view, 0.0, c);
        } else {
            let mut cols = vec![0.0; k * hw];
            im2col(xn, xs.c, xs.h, xs.w, kh, kw, &mut cols);
            let colt = View {
                data: &cols,
                rs: 1,
                cs: hw,
            };
            gemm(out_c, hw, k, 1.0, gy_view, colt, 0.0, gw_out);
            let c = ViewMut {
                data: &mut cols,
                rs: hw,
                cs: 1,
            };
            gemm(k, out_c, hw, 1.0, wt, gy_view, 0.0, c);
            col2im_add(&cols, xs.c, xs.h, xs.w, kh, kw, &mut gx);
        }
        (gx, gw, gb)
    });

    let mut grad_x = Vec::with_capacity(xs.len());
    let mut grad_w = vec![0.0; out_c * k];
    let mut grad_b = vec![0.0; out_c];
    for (gx, gw, gb) in per_sample {
        grad_x.extend_from_slice(&gx);
        for (a, b) in grad_w.iter_mut().zip(&gw) {
            *a += *b;
        }
        for (a, b) in grad_b.iter_mut().zip(&gb) {
            *a += *b;
        }
    }
    Ok((
        Tensor::from_vec(xs, grad_x)?,
        ConvGrads {
            weights: Tensor::from_vec(p.weights.shape(), grad_w)?,
            bias: grad_b,
        },
    ))
}

/// Reference forward pass as plain nested loops.
pub fn conv2d_forward_direct(x: &Tensor, p: &ConvParams) -> Result<(Tensor, ConvCache)> {
    let xs = x.shape();
    p.check_input(xs)?;
    let (kh, kw) = p.kernel();
    let (ph, pw) = ((kh / 2) as isize, (kw / 2) as isize);
    let ys = xs.with_channels(p.out_channels());
    let mut y = Tensor::zeros(ys);
    let xd = x.data();
    let wd = p.weights.data();
    let yd = y.data_mut();
    for n in 0..xs.n {
        for o in 0..ys.c {
            for i in 0..xs.h {
                for j in 0..xs.w {
                    let mut acc = p.bias[o];
                    for c in 0..xs.c {
                        for u in 0..kh {
                            let si = i as isize + u as isize - ph;
                            if si < 0 || si >= xs.h as isize {
                                continue;
                            }
                            for v in 0..kw {
                                let sj = j as isize + v as isize - pw;
                                if sj < 0 || sj >= xs.w as isize {
                                    continue;
                                }
                                let xv = xd[((n * xs.c + c) * xs.h + si as usize) * xs.w
                                    + sj as usize];
                                acc += wd[((o * xs.c + c) * kh + u) * kw + v] * xv;
                            }
                        }
                    }
                    yd[((n * ys.c + o) * xs.h + i) * xs.w + j] = acc;
                }
            }
        }
    }
    Ok((y, ConvCache { input: x.clone() }))
}

/// Reference backward pass as plain nested loops.
pub fn conv2d_backward_direct(
    grad_y: &Tensor,
    cache: ConvCache,
    p: &ConvParams,
) -> Result<(Tensor, ConvGrads)> {
    let x = &cache.input;
    let xs = x.shape();
    let ys = xs.with_channels(p.out_channels());
    if grad_y.shape() != ys {
        return Err(Error::shape(format!(
            "conv backward expects grad of shape {ys}, got {}",
            grad_y.shape()
        )));
    }
    let (kh, kw) = p.kernel();
    let (ph, pw) = ((kh / 2) as isize, (kw / 2) as isize);
    let mut grad_x = Tensor::zeros(xs);
    let mut grad_w = Tensor::zeros(p.weights.shape());
    let mut grad_b = vec![0.0; ys.c];
    let (xd, gyd, wd) = (x.data(), grad_y.data(), p.weights.data());
    let gxd = grad_x.data_mut();
    let gwd = grad_w.data_mut();
    for n in 0..xs.n {
        for o in 0..ys.c {
            for i in 0..xs.h {
                for j in 0..xs.w {
                    let g = gyd[((n * ys.c + o) * xs.h + i) * xs.w + j];
                    grad_b[o] += g;
                    for c in 0..xs.c {
                        for u in 0..kh {
                            let si = i as isize + u as isize - ph;
                            if si < 0 || si >= xs.h as isize {
                                continue;
                            }
                            for v in 0..kw {
                                let sj = j as isize + v as isize - pw;
                                if sj < 0 || sj >= xs.w as isize {
                                    continue;
                                }
                                let xi = ((n * xs.c + c) * xs.h + si as usize) * xs.w + sj as usize;
                                let wi = ((o * xs.c + c) * kh + u) * kw + v;
                                gwd[wi] += g * xd[xi];
                                gxd[xi] += g * wd[wi];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((
        grad_x,
        ConvGrads {
            weights: grad_w,
            bias: grad_b,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(shape: (usize, usize, usize, usize), rng: &mut ChaCha8Rng) -> Tensor {
        let mut t = Tensor::new(shape, 0.0).unwrap();
        t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        t
    }

    fn int_tensor(shape: (usize, usize, usize, usize), rng: &mut ChaCha8Rng) -> Tensor {
        let mut t = Tensor::new(shape, 0.0).unwrap();
        t.data_mut()
            .iter_mut()
            .for_each(|v| *v = rng.gen_range(-8i32..=8) as Real);
        t
    }

    #[test]
    fn conv1_output_shape() {
        let x = Tensor::new((1, 1, 80, 80), 0.5).unwrap();
        let p = ConvParams::zeros(1, 64, 7).unwrap();
        let (y, _) = conv2d_forward(&x, &p).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 64, 80, 80).unwrap());
    }

    #[test]
    fn identity_pointwise_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_tensor((2, 1, 5, 6), &mut rng);
        let p = ConvParams::new(Tensor::new((1, 1, 1, 1), 1.0).unwrap(), vec![0.0]).unwrap();
        let (y, cache) = conv2d_forward(&x, &p).unwrap();
        assert_eq!(y, x);
        let gy = random_tensor((2, 1, 5, 6), &mut rng);
        let (gx, _) = conv2d_backward(&gy, cache, &p).unwrap();
        assert_eq!(gx, gy);
    }

    #[test]
    fn ones_kernel_counts_neighbours() {
        let x = Tensor::new((1, 1, 3, 3), 1.0).unwrap();
        let p = ConvParams::new(Tensor::new((1, 1, 3, 3), 1.0).unwrap(), vec![0.0]).unwrap();
        // hand-unrolled: the center sees all 9 inputs, a corner sees a 2x2 block
        let (y, _) = conv2d_forward(&x, &p).unwrap();
        assert_eq!(y.get(0, 0, 1, 1).unwrap(), 9.0);
        for (i, j) in [(0, 0), (0, 2), (2, 0), (2, 2)] {
            assert_eq!(y.get(0, 0, i, j).unwrap(), 4.0);
        }
        assert_eq!(y.get(0, 0, 0, 1).unwrap(), 6.0);
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let x = Tensor::new((1, 2, 4, 4), 0.0).unwrap();
        let p = ConvParams::zeros(3, 1, 3).unwrap();
        assert!(matches!(conv2d_forward(&x, &p), Err(Error::Shape(_))));
        assert!(ConvParams::zeros(1, 1, 2).is_err());
    }

    #[test]
    fn zero_upstream_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_tensor((2, 3, 4, 4), &mut rng);
        let p = ConvParams::new(random_tensor((2, 3, 3, 3), &mut rng), vec![0.1, -0.2]).unwrap();
        let (y, cache) = conv2d_forward(&x, &p).unwrap();
        let (gx, g) = conv2d_backward(&Tensor::zeros_like(&y), cache, &p).unwrap();
        assert!(gx.data().iter().all(|&v| v == 0.0));
        assert!(g.weights.data().iter().all(|&v| v == 0.0));
        assert!(g.bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_shape_mismatch() {
        let x = Tensor::new((1, 1, 4, 4), 0.0).unwrap();
        let p = ConvParams::zeros(1, 2, 3).unwrap();
        let (_, cache) = conv2d_forward(&x, &p).unwrap();
        let bad = Tensor::new((1, 1, 4, 4), 0.0).unwrap();
        assert!(matches!(conv2d_backward(&bad, cache, &p), Err(Error::Shape(_))));
    }

    #[test]
    fn fast_path_bit_matches_direct_on_integer_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(k, cin, cout, h, w) in &[
            (3, 3, 4, 6, 5),
            (7, 1, 3, 9, 8),
            (1, 4, 2, 5, 5),
            (3, 2, 2, 1, 1),
            (3, 5, 3, 6, 9),
            (5, 4, 2, 7, 4),
            (3, 6, 4, 1, 1),
        ] {
            let x = int_tensor((2, cin, h, w), &mut rng);
            let p = ConvParams::new(
                int_tensor((cout, cin, k, k), &mut rng),
                (0..cout).map(|_| rng.gen_range(-3i32..=3) as Real).collect(),
            )
            .unwrap();
            let (y_fast, c_fast) = conv2d_forward(&x, &p).unwrap();
            let (y_ref, c_ref) = conv2d_forward_direct(&x, &p).unwrap();
            assert_eq!(y_fast, y_ref);
            let gy = int_tensor((2, cout, h, w), &mut rng);
            let (gx_fast, g_fast) = conv2d_backward(&gy, c_fast, &p).unwrap();
            let (gx_ref, g_ref) = conv2d_backward_direct(&gy, c_ref, &p).unwrap();
            assert_eq!(gx_fast, gx_ref);
            assert_eq!(g_fast, g_ref);
        }
    }

    #[test]
    fn fast_path_close_to_direct_on_random_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_tensor((3, 4, 10, 7), &mut rng);
        let p = ConvParams::new(random_tensor((5, 4, 3, 3), &mut rng), vec![0.0; 5]).unwrap();
        let (a, _) = conv2d_forward(&x, &p).unwrap();
        let (b, _) = conv2d_forward_direct(&x, &p).unwrap();
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - v).abs() < 1e-12);
        }
    }
}
