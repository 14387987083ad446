//! Raw numeric kernels shared by the forward and backward passes.
//!
//! Accumulation order matters: every kernel that reduces sums in ascending
//! index order of its innermost loop, so results are reproducible and the
//! convolution matches a naive sliding-window sum bit for bit.

use alloc::vec;
use alloc::vec::Vec;

/// `out[m,n] = a[m,k] * b[k,n]`, row-major. `out` must be zeroed.
///
/// The k-loop is outermost per row, so each output cell accumulates its
/// products in ascending-k order, same as a scalar triple loop.
pub fn matmul(a: &[f64], m: usize, k: usize, b: &[f64], n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m,n] += a[m,t] * b[n,t]^T` (contraction over the shared trailing axis).
pub fn matmul_abt_acc(a: &[f64], m: usize, t: usize, b: &[f64], n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * t);
    debug_assert_eq!(b.len(), n * t);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * t..(i + 1) * t];
        for j in 0..n {
            let brow = &b[j * t..(j + 1) * t];
            let mut s = 0.0;
            for (&av, &bv) in arow.iter().zip(brow.iter()) {
                s += av * bv;
            }
            out[i * n + j] += s;
        }
    }
}

/// `out[m,n] += a[k,m]^T * b[k,n]` (contraction over the shared leading axis).
pub fn matmul_tn_acc(a: &[f64], k: usize, m: usize, b: &[f64], n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o += av * bv;
            }
        }
    }
}

/// Output extent of a strided window sweep, if the kernel fits.
pub fn conv_out_dim(extent: usize, pad: usize, kernel: usize, stride: usize) -> Option<usize> {
    let padded = extent + 2 * pad;
    if kernel == 0 || stride == 0 || kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Unfolds one sample `x[c,h,w]` into columns `[c*kh*kw, oh*ow]` with zero
/// padding. Patch elements are ordered (c, kh, kw), matching the weight
/// layout `[k, c, kh, kw]`.
#[allow(clippy::too_many_arguments)]
pub fn im2col(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    cols: &mut [f64],
) {
    debug_assert_eq!(x.len(), c * h * w);
    debug_assert_eq!(cols.len(), c * kh * kw * oh * ow);
    let t = oh * ow;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = &mut cols[((ci * kh + ki) * kw + kj) * t..][..t];
                for oy in 0..oh {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    let dst = &mut row[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        *d = if ix < 0 || ix >= w as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Folds column gradients back onto one input sample, accumulating overlaps.
#[allow(clippy::too_many_arguments)]
pub fn col2im_acc(
    cols: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    dx: &mut [f64],
) {
    debug_assert_eq!(dx.len(), c * h * w);
    let t = oh * ow;
    for ci in 0..c {
        let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = &cols[((ci * kh + ki) * kw + kj) * t..][..t];
                for oy in 0..oh {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &row[oy * ow..(oy + 1) * ow];
                    for (ox, &g) in src.iter().enumerate() {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            plane[iy as usize * w + ix as usize] += g;
                        }
                    }
                }
            }
        }
    }
}

/// Per-channel mean and biased variance over the batch and spatial axes of
/// `x[n,c,h,w]`.
pub fn channel_moments(x: &[f64], n: usize, c: usize, hw: usize) -> (Vec<f64>, Vec<f64>) {
    let count = (n * hw) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ni in 0..n {
        for ci in 0..c {
            let plane = &x[(ni * c + ci) * hw..][..hw];
            let mut s = 0.0;
            for &v in plane {
                s += v;
            }
            mean[ci] += s;
        }
    }
    for m in mean.iter_mut() {
        *m /= count;
    }
    for ni in 0..n {
        for ci in 0..c {
            let plane = &x[(ni * c + ci) * hw..][..hw];
            let m = mean[ci];
            let mut s = 0.0;
            for &v in plane {
                let d = v - m;
                s += d * d;
            }
            var[ci] += s;
        }
    }
    for v in var.iter_mut() {
        *v /= count;
    }
    (mean, var)
}

/// Numerically stable softmax over each row of `x[rows, cols]`.
pub fn softmax_rows(x: &[f64], rows: usize, cols: usize, out: &mut [f64]) {
    debug_assert_eq!(x.len(), rows * cols);
    debug_assert_eq!(out.len(), rows * cols);
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let orow = &mut out[r * cols..(r + 1) * cols];
        let mut m = f64::NEG_INFINITY;
        for &v in row {
            m = m.max(v);
        }
        let mut z = 0.0;
        for (o, &v) in orow.iter_mut().zip(row.iter()) {
            let e = libm::exp(v - m);
            *o = e;
            z += e;
        }
        for o in orow.iter_mut() {
            *o /= z;
        }
    }
}

/// `log(sum(exp(row)))` with max subtraction.
pub fn logsumexp(row: &[f64]) -> f64 {
    let mut m = f64::NEG_INFINITY;
    for &v in row {
        m = m.max(v);
    }
    let mut z = 0.0;
    for &v in row {
        z += libm::exp(v - m);
    }
    m + libm::log(z)
}
