//! Forward/backward kernels for the layers the reconstruction network uses.
//!
//! Activations are `(N, C, H, W)` tensors. Kernels are free functions over
//! tensors; the network in [`crate::model`] owns parameters and caches.

use crate::par;
use crate::tensor::Tensor;

/// Images per work item when reducing weight gradients. Fixed so that the
/// summation order does not depend on the number of threads.
const GRAD_CHUNK: usize = 4;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// `c = a * b + beta * c` with optional transposes; all row-major.
///
/// `a` is `m x k` (or `k x m` when `ta`), `b` is `k x n` (or `n x k` when `tb`).
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, beta: f64, c: &mut [f64]) {
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths cover the strided extents described above.
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn im2col(img: &[f64], cin: usize, h: usize, w: usize, cols: &mut [f64]) {
    let hw = h * w;
    for ci in 0..cin {
        let plane = &img[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((ci * 3 + ky) * 3 + kx) * hw..][..hw];
                let x0 = 1usize.saturating_sub(kx);
                let x1 = (w + 1 - kx).min(w);
                for y in 0..h {
                    let dst = &mut row[y * w..(y + 1) * w];
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * w..];
                    dst[..x0].fill(0.0);
                    dst[x1..].fill(0.0);
                    let off = kx as isize - 1;
                    for x in x0..x1 {
                        dst[x] = src[(x as isize + off) as usize];
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], cin: usize, h: usize, w: usize, img: &mut [f64]) {
    let hw = h * w;
    img.fill(0.0);
    for ci in 0..cin {
        let plane = &mut img[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((ci * 3 + ky) * 3 + kx) * hw..][..hw];
                let x0 = 1usize.saturating_sub(kx);
                let x1 = (w + 1 - kx).min(w);
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let dst = &mut plane[sy as usize * w..];
                    let off = kx as isize - 1;
                    for x in x0..x1 {
                        dst[(x as isize + off) as usize] += src[x];
                    }
                }
            }
        }
    }
}

/// 3x3 convolution, stride 1, zero "same" padding.
///
/// `x`: `(N, Cin, H, W)`, `weight`: `(Cout, Cin, 3, 3)`, `bias`: `(Cout)`.
pub fn conv3x3_forward(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Tensor {
    let (n, cin, h, w) = x.dims4();
    let cout = weight.shape()[0];
    debug_assert_eq!(weight.len(), cout * cin * 9);
    let hw = h * w;
    let mut out = Tensor::zeros(&[n, cout, h, w]);
    par::for_each_chunk(out.data_mut(), cout * hw, |i, dst| {
        let mut cols = vec![0.0; cin * 9 * hw];
        im2col(x.outer(i), cin, h, w, &mut cols);
        for (co, plane) in dst.chunks_mut(hw).enumerate() {
            plane.fill(bias.data()[co]);
        }
        gemm(cout, cin * 9, hw, weight.data(), false, &cols, false, 1.0, dst);
    });
    out
}

pub struct ConvGrads {
    pub dx: Option<Tensor>,
    pub dweight: Tensor,
    pub dbias: Tensor,
}

pub fn conv3x3_backward(x: &Tensor, weight: &Tensor, dy: &Tensor, need_dx: bool) -> ConvGrads {
    let (n, cin, h, w) = x.dims4();
    let cout = weight.shape()[0];
    let hw = h * w;
    let k = cin * 9;
    let chunks = n.div_ceil(GRAD_CHUNK);
    let partials = par::map(chunks, |c| {
        let mut dw = vec![0.0; cout * k];
        let mut db = vec![0.0; cout];
        let lo = c * GRAD_CHUNK;
        let hi = (lo + GRAD_CHUNK).min(n);
        let mut dx = if need_dx { vec![0.0; (hi - lo) * cin * hw] } else { Vec::new() };
        let mut cols = vec![0.0; k * hw];
        for i in lo..hi {
            let g = dy.outer(i);
            im2col(x.outer(i), cin, h, w, &mut cols);
            gemm(cout, hw, k, g, false, &cols, true, 1.0, &mut dw);
            for (co, plane) in g.chunks(hw).enumerate() {
                db[co] += plane.iter().sum::<f64>();
            }
            if need_dx {
                gemm(k, cout, hw, weight.data(), true, g, false, 0.0, &mut cols);
                col2im(&cols, cin, h, w, &mut dx[(i - lo) * cin * hw..(i - lo + 1) * cin * hw]);
            }
        }
        (dw, db, dx)
    });
    let mut dweight = Tensor::zeros(weight.shape());
    let mut dbias = Tensor::zeros(&[cout]);
    let mut dx = if need_dx { Some(Vec::with_capacity(x.len())) } else { None };
    for (pw, pb, px) in partials {
        for (a, b) in dweight.data_mut().iter_mut().zip(&pw) {
            *a += b;
        }
        for (a, b) in dbias.data_mut().iter_mut().zip(&pb) {
            *a += b;
        }
        if let Some(dx) = dx.as_mut() {
            dx.extend_from_slice(&px);
        }
    }
    ConvGrads {
        dx: dx.map(|d| Tensor::from_vec(x.shape(), d).expect("dx shape")),
        dweight,
        dbias,
    }
}

/// Per-channel statistics of a batch-norm forward pass in training mode.
pub struct BnCache {
    pub xhat: Tensor,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    /// Unbiased batch variance, used for the running estimate.
    pub var_unbiased: Vec<f64>,
}

fn channel_planes(x: &Tensor) -> (usize, usize, usize) {
    let (n, c, h, w) = x.dims4();
    (n, c, h * w)
}

pub fn batchnorm_train(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> (Tensor, BnCache) {
    let (n, c, hw) = channel_planes(x);
    let m = (n * hw) as f64;
    let d = x.data();
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let mut s = 0.0;
        for i in 0..n {
            s += d[(i * c + ch) * hw..][..hw].iter().sum::<f64>();
        }
        let mu = s / m;
        let mut q = 0.0;
        for i in 0..n {
            q += d[(i * c + ch) * hw..][..hw].iter().map(|v| (v - mu) * (v - mu)).sum::<f64>();
        }
        mean[ch] = mu;
        var[ch] = q / m;
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhat = Tensor::zeros(x.shape());
    let mut y = Tensor::zeros(x.shape());
    {
        let xh = xhat.data_mut();
        let yd = y.data_mut();
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * hw;
                let (g, b) = (gamma.data()[ch], beta.data()[ch]);
                for j in base..base + hw {
                    let v = (d[j] - mean[ch]) * inv_std[ch];
                    xh[j] = v;
                    yd[j] = g * v + b;
                }
            }
        }
    }
    let var_unbiased = var
        .iter()
        .map(|v| if m > 1.0 { v * m / (m - 1.0) } else { *v })
        .collect();
    (y, BnCache { xhat, inv_std, mean, var_unbiased })
}

pub fn batchnorm_eval(x: &Tensor, gamma: &Tensor, beta: &Tensor, rmean: &Tensor, rvar: &Tensor) -> Tensor {
    let (n, c, hw) = channel_planes(x);
    let mut y = Tensor::zeros(x.shape());
    let d = x.data();
    let yd = y.data_mut();
    for ch in 0..c {
        let scale = gamma.data()[ch] / (rvar.data()[ch] + BN_EPS).sqrt();
        let shift = beta.data()[ch] - rmean.data()[ch] * scale;
        for i in 0..n {
            let base = (i * c + ch) * hw;
            for j in base..base + hw {
                yd[j] = d[j] * scale + shift;
            }
        }
    }
    y
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn batchnorm_backward(cache: &BnCache, gamma: &Tensor, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (n, c, hw) = channel_planes(dy);
    let m = (n * hw) as f64;
    let g = dy.data();
    let xh = cache.xhat.data();
    let mut dgamma = Tensor::zeros(&[c]);
    let mut dbeta = Tensor::zeros(&[c]);
    let mut dx = Tensor::zeros(dy.shape());
    for ch in 0..c {
        let (mut sg, mut sgx) = (0.0, 0.0);
        for i in 0..n {
            let base = (i * c + ch) * hw;
            for j in base..base + hw {
                sg += g[j];
                sgx += g[j] * xh[j];
            }
        }
        dgamma.data_mut()[ch] = sgx;
        dbeta.data_mut()[ch] = sg;
        let k = gamma.data()[ch] * cache.inv_std[ch] / m;
        let dxd = dx.data_mut();
        for i in 0..n {
            let base = (i * c + ch) * hw;
            for j in base..base + hw {
                dxd[j] = k * (m * g[j] - sg - xh[j] * sgx);
            }
        }
    }
    (dx, dgamma, dbeta)
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Gradient of ReLU given its *output*.
pub fn relu_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    y.zip_map(dy, |o, g| if o > 0.0 { g } else { 0.0 }).expect("relu shapes")
}

/// Folds each 2x2 spatial block into channels: `(N, C, H, W) -> (N, 4C, H/2, W/2)`.
///
/// Output channel `4c + 2i + j` holds input pixel `(2y + i, 2x + j)` of channel `c`.
pub fn space_to_depth(x: &Tensor) -> Tensor {
    let (n, c, h, w) = x.dims4();
    let (h2, w2) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[n, 4 * c, h2, w2]);
    let s = x.data();
    let o = out.data_mut();
    for b in 0..n {
        for ch in 0..c {
            for i in 0..2 {
                for j in 0..2 {
                    let oc = ch * 4 + i * 2 + j;
                    let obase = (b * 4 * c + oc) * h2 * w2;
                    let ibase = (b * c + ch) * h * w;
                    for y in 0..h2 {
                        for xx in 0..w2 {
                            o[obase + y * w2 + xx] = s[ibase + (2 * y + i) * w + 2 * xx + j];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Inverse of [`space_to_depth`]: `(N, 4C, H, W) -> (N, C, 2H, 2W)`.
pub fn depth_to_space(x: &Tensor) -> Tensor {
    let (n, c4, h, w) = x.dims4();
    let c = c4 / 4;
    let (h2, w2) = (h * 2, w * 2);
    let mut out = Tensor::zeros(&[n, c, h2, w2]);
    let s = x.data();
    let o = out.data_mut();
    for b in 0..n {
        for ch in 0..c {
            for i in 0..2 {
                for j in 0..2 {
                    let ic = ch * 4 + i * 2 + j;
                    let ibase = (b * c4 + ic) * h * w;
                    let obase = (b * c + ch) * h2 * w2;
                    for y in 0..h {
                        for xx in 0..w {
                            o[obase + (2 * y + i) * w2 + 2 * xx + j] = s[ibase + y * w + xx];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Concatenates along the channel axis.
pub fn concat_channels(parts: &[&Tensor]) -> Tensor {
    let (n, _, h, w) = parts[0].dims4();
    let hw = h * w;
    let total: usize = parts.iter().map(|p| p.shape()[1]).sum();
    let mut out = Vec::with_capacity(n * total * hw);
    for i in 0..n {
        for p in parts {
            out.extend_from_slice(p.outer(i));
        }
    }
    Tensor::from_vec(&[n, total, h, w], out).expect("concat shape")
}

/// Splits along the channel axis into pieces of the given widths.
pub fn split_channels(x: &Tensor, widths: &[usize]) -> Vec<Tensor> {
    let (n, c, h, w) = x.dims4();
    debug_assert_eq!(widths.iter().sum::<usize>(), c);
    let hw = h * w;
    let mut outs: Vec<Vec<f64>> = widths.iter().map(|wd| Vec::with_capacity(n * wd * hw)).collect();
    for i in 0..n {
        let img = x.outer(i);
        let mut off = 0;
        for (o, &wd) in outs.iter_mut().zip(widths) {
            o.extend_from_slice(&img[off * hw..(off + wd) * hw]);
            off += wd;
        }
    }
    outs.into_iter()
        .zip(widths)
        .map(|(d, &wd)| Tensor::from_vec(&[n, wd, h, w], d).expect("split shape"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random::<f64>() - 0.5).collect()).unwrap()
    }

    /// Direct nested-loop convolution.
    fn conv_oracle(x: &Tensor, wt: &Tensor, b: &Tensor) -> Tensor {
        let (n, cin, h, w) = x.dims4();
        let cout = wt.shape()[0];
        let mut out = Tensor::zeros(&[n, cout, h, w]);
        for i in 0..n {
            for co in 0..cout {
                for y in 0..h {
                    for xx in 0..w {
                        let mut s = b.data()[co];
                        for ci in 0..cin {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let sy = y as isize + ky as isize - 1;
                                    let sx = xx as isize + kx as isize - 1;
                                    if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                        continue;
                                    }
                                    s += wt.data()[((co * cin + ci) * 3 + ky) * 3 + kx]
                                        * x.data()[((i * cin + ci) * h + sy as usize) * w + sx as usize];
                                }
                            }
                        }
                        out.data_mut()[((i * cout + co) * h + y) * w + xx] = s;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_loops() {
        let x = random(&[3, 2, 5, 4], 1);
        let w = random(&[3, 2, 3, 3], 2);
        let b = random(&[3], 3);
        let got = conv3x3_forward(&x, &w, &b);
        assert!(got.max_abs_diff(&conv_oracle(&x, &w, &b)) < 1e-12);
    }

    #[test]
    fn conv_backward_is_the_adjoint() {
        // <dy, conv(x)> is bilinear; check gradients against finite differences of it.
        let x = random(&[5, 2, 4, 3], 4);
        let w = random(&[2, 2, 3, 3], 5);
        let b = random(&[2], 6);
        let dy = random(&[5, 2, 4, 3], 7);
        let f = |x: &Tensor, w: &Tensor, b: &Tensor| -> f64 {
            conv3x3_forward(x, w, b).data().iter().zip(dy.data()).map(|(a, g)| a * g).sum()
        };
        let g = conv3x3_backward(&x, &w, &dy, true);
        let h = 1e-6;
        for idx in [0, 7, 17, 35] {
            let mut wp = w.clone();
            wp.data_mut()[idx] += h;
            let mut wm = w.clone();
            wm.data_mut()[idx] -= h;
            let fd = (f(&x, &wp, &b) - f(&x, &wm, &b)) / (2.0 * h);
            assert!((fd - g.dweight.data()[idx]).abs() < 1e-7);
        }
        for idx in [0, 13, 50, 119] {
            let mut xp = x.clone();
            xp.data_mut()[idx] += h;
            let mut xm = x.clone();
            xm.data_mut()[idx] -= h;
            let fd = (f(&xp, &w, &b) - f(&xm, &w, &b)) / (2.0 * h);
            assert!((fd - g.dx.as_ref().unwrap().data()[idx]).abs() < 1e-7);
        }
        let fd_b = {
            let mut bp = b.clone();
            bp.data_mut()[1] += h;
            let mut bm = b.clone();
            bm.data_mut()[1] -= h;
            (f(&x, &w, &bp) - f(&x, &w, &bm)) / (2.0 * h)
        };
        assert!((fd_b - g.dbias.data()[1]).abs() < 1e-7);
    }

    #[test]
    fn batchnorm_backward_matches_finite_differences() {
        let x = random(&[3, 2, 3, 3], 8);
        let gamma = random(&[2], 9).map(|v| v + 1.0);
        let beta = random(&[2], 10);
        let dy = random(&[3, 2, 3, 3], 11);
        let f = |x: &Tensor| -> f64 {
            let (y, _) = batchnorm_train(x, &gamma, &beta);
            y.data().iter().zip(dy.data()).map(|(a, g)| a * g).sum()
        };
        let (_, cache) = batchnorm_train(&x, &gamma, &beta);
        let (dx, _, _) = batchnorm_backward(&cache, &gamma, &dy);
        let h = 1e-6;
        for idx in [0, 5, 20, 53] {
            let mut xp = x.clone();
            xp.data_mut()[idx] += h;
            let mut xm = x.clone();
            xm.data_mut()[idx] -= h;
            let fd = (f(&xp) - f(&xm)) / (2.0 * h);
            assert!((fd - dx.data()[idx]).abs() < 1e-6, "{fd} vs {}", dx.data()[idx]);
        }
    }

    #[test]
    fn space_depth_round_trip() {
        let x = random(&[2, 3, 4, 6], 12);
        let s = space_to_depth(&x);
        assert_eq!(s.shape(), &[2, 12, 2, 3]);
        assert_eq!(depth_to_space(&s), x);
    }

    #[test]
    fn concat_split_round_trip() {
        let a = random(&[2, 3, 2, 2], 13);
        let b = random(&[2, 1, 2, 2], 14);
        let c = concat_channels(&[&a, &b]);
        let parts = split_channels(&c, &[3, 1]);
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }
}
