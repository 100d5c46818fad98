//! Per-layer forward and backward kernels on flat NHWC buffers.

use super::{BatchNorm, Conv2d, Dense, PoolKind, Scalar, KERNEL_TAPS};

pub(super) fn reset<T: Scalar>(buf: &mut Vec<T>, len: usize) {
    buf.clear();
    buf.resize(len, T::zero());
}

pub(super) fn dense_forward<T: Scalar>(d: &Dense<T>, x: &[T], batch: usize, out: &mut Vec<T>) {
    out.clear();
    for _ in 0..batch {
        out.extend_from_slice(&d.bias);
    }
    T::gemm(batch, d.inputs, d.units, x, false, &d.weight, false, T::one(), out);
}

pub(super) fn dense_backward<T: Scalar>(
    d: &Dense<T>,
    x: &[T],
    dy: &[T],
    batch: usize,
    dw: &mut [T],
    db: &mut [T],
    dx: Option<&mut Vec<T>>,
) {
    T::gemm(d.inputs, batch, d.units, x, true, dy, false, T::zero(), dw);
    column_sums(dy, d.units, db);
    if let Some(dx) = dx {
        reset(dx, batch * d.inputs);
        T::gemm(batch, d.units, d.inputs, dy, false, &d.weight, true, T::zero(), dx);
    }
}

fn column_sums<T: Scalar>(m: &[T], cols: usize, out: &mut [T]) {
    out.iter_mut().for_each(|v| *v = T::zero());
    for row in m.chunks_exact(cols) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o = *o + v;
        }
    }
}

/// Unfold 3x3 same-padded neighbourhoods: one row per output pixel,
/// columns ordered `[tap][channel]`.
pub(super) fn im2col<T: Scalar>(x: &[T], batch: usize, h: usize, w: usize, c: usize, cols: &mut Vec<T>) {
    let width = KERNEL_TAPS * c;
    reset(cols, batch * h * w * width);
    for b in 0..batch {
        for y in 0..h {
            for xx in 0..w {
                let row = ((b * h + y) * w + xx) * width;
                for ky in 0..3 {
                    let sy = y + ky;
                    if sy < 1 || sy > h {
                        continue;
                    }
                    for kx in 0..3 {
                        let sx = xx + kx;
                        if sx < 1 || sx > w {
                            continue;
                        }
                        let src = ((b * h + sy - 1) * w + sx - 1) * c;
                        let dst = row + (ky * 3 + kx) * c;
                        cols[dst..dst + c].copy_from_slice(&x[src..src + c]);
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], batch: usize, h: usize, w: usize, c: usize, dx: &mut Vec<T>) {
    let width = KERNEL_TAPS * c;
    reset(dx, batch * h * w * c);
    for b in 0..batch {
        for y in 0..h {
            for xx in 0..w {
                let row = ((b * h + y) * w + xx) * width;
                for ky in 0..3 {
                    let sy = y + ky;
                    if sy < 1 || sy > h {
                        continue;
                    }
                    for kx in 0..3 {
                        let sx = xx + kx;
                        if sx < 1 || sx > w {
                            continue;
                        }
                        let dst = ((b * h + sy - 1) * w + sx - 1) * c;
                        let src = row + (ky * 3 + kx) * c;
                        for (d, &s) in dx[dst..dst + c].iter_mut().zip(&cols[src..src + c]) {
                            *d = *d + s;
                        }
                    }
                }
            }
        }
    }
}

pub(super) fn conv_forward<T: Scalar>(
    k: &Conv2d<T>,
    x: &[T],
    batch: usize,
    h: usize,
    w: usize,
    cols: &mut Vec<T>,
    out: &mut Vec<T>,
) {
    im2col(x, batch, h, w, k.in_channels, cols);
    let pixels = batch * h * w;
    out.clear();
    for _ in 0..pixels {
        out.extend_from_slice(&k.bias);
    }
    T::gemm(pixels, KERNEL_TAPS * k.in_channels, k.out_channels, cols, false, &k.kernel, false, T::one(), out);
}

#[allow(clippy::too_many_arguments)]
pub(super) fn conv_backward<T: Scalar>(
    k: &Conv2d<T>,
    cols: &[T],
    dy: &[T],
    batch: usize,
    h: usize,
    w: usize,
    dk: &mut [T],
    db: &mut [T],
    scratch: &mut Vec<T>,
    dx: Option<&mut Vec<T>>,
) {
    let pixels = batch * h * w;
    let width = KERNEL_TAPS * k.in_channels;
    T::gemm(width, pixels, k.out_channels, cols, true, dy, false, T::zero(), dk);
    column_sums(dy, k.out_channels, db);
    if let Some(dx) = dx {
        reset(scratch, pixels * width);
        T::gemm(pixels, k.out_channels, width, dy, false, &k.kernel, true, T::zero(), scratch);
        col2im(scratch, batch, h, w, k.in_channels, dx);
    }
}

/// 2x2 stride-2 pooling with same padding; padded cells are ignored.
/// `argmax` receives the winning input offset for max pooling.
#[allow(clippy::too_many_arguments)]
pub(super) fn pool_forward<T: Scalar>(
    kind: PoolKind,
    x: &[T],
    batch: usize,
    h: usize,
    w: usize,
    c: usize,
    out: &mut Vec<T>,
    argmax: &mut Vec<u32>,
) {
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    reset(out, batch * oh * ow * c);
    if kind == PoolKind::Max {
        argmax.clear();
        argmax.resize(out.len(), 0);
    }
    for b in 0..batch {
        for oy in 0..oh {
            let ys = 2 * oy..(2 * oy + 2).min(h);
            for ox in 0..ow {
                let xs = 2 * ox..(2 * ox + 2).min(w);
                let count = T::from_usize(ys.len() * xs.len());
                let o = ((b * oh + oy) * ow + ox) * c;
                for ch in 0..c {
                    let mut best = T::neg_infinity();
                    let mut best_at = 0usize;
                    let mut sum = T::zero();
                    for y in ys.clone() {
                        for xx in xs.clone() {
                            let i = ((b * h + y) * w + xx) * c + ch;
                            sum = sum + x[i];
                            if x[i] > best {
                                best = x[i];
                                best_at = i;
                            }
                        }
                    }
                    match kind {
                        PoolKind::Avg => out[o + ch] = sum / count,
                        PoolKind::Max => {
                            out[o + ch] = best;
                            argmax[o + ch] = best_at as u32;
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn pool_backward<T: Scalar>(
    kind: PoolKind,
    dy: &[T],
    argmax: &[u32],
    batch: usize,
    h: usize,
    w: usize,
    c: usize,
    dx: &mut Vec<T>,
) {
    reset(dx, batch * h * w * c);
    match kind {
        PoolKind::Max => {
            for (&g, &at) in dy.iter().zip(argmax) {
                dx[at as usize] = dx[at as usize] + g;
            }
        }
        PoolKind::Avg => {
            let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
            for b in 0..batch {
                for oy in 0..oh {
                    let ys = 2 * oy..(2 * oy + 2).min(h);
                    for ox in 0..ow {
                        let xs = 2 * ox..(2 * ox + 2).min(w);
                        let count = T::from_usize(ys.len() * xs.len());
                        let o = ((b * oh + oy) * ow + ox) * c;
                        for y in ys.clone() {
                            for xx in xs.clone() {
                                let i = ((b * h + y) * w + xx) * c;
                                for ch in 0..c {
                                    dx[i + ch] = dx[i + ch] + dy[o + ch] / count;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Per-channel batch moments over all rows (biased variance).
pub(super) fn moments<T: Scalar>(x: &[T], c: usize, mean: &mut Vec<T>, var: &mut Vec<T>) {
    let rows = x.len() / c;
    let n = T::from_usize(rows);
    reset(mean, c);
    reset(var, c);
    for row in x.chunks_exact(c) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m = *m + v;
        }
    }
    mean.iter_mut().for_each(|m| *m = *m / n);
    for row in x.chunks_exact(c) {
        for ((s, &v), &m) in var.iter_mut().zip(row).zip(mean.iter()) {
            let d = v - m;
            *s = *s + d * d;
        }
    }
    var.iter_mut().for_each(|s| *s = *s / n);
}

/// Normalise with the given statistics; stores `x_hat` when requested.
pub(super) fn bn_apply<T: Scalar>(
    bn: &BatchNorm<T>,
    x: &[T],
    mean: &[T],
    var: &[T],
    out: &mut Vec<T>,
    inv_std: &mut Vec<T>,
    xhat: Option<&mut Vec<T>>,
) {
    let c = bn.channels();
    let eps = T::from_f64_lossy(bn.epsilon);
    inv_std.clear();
    inv_std.extend(var.iter().map(|&v| T::one() / (v + eps).sqrt()));
    reset(out, x.len());
    let mut hat_buf = xhat;
    if let Some(h) = hat_buf.as_deref_mut() {
        reset(h, x.len());
    }
    for (r, row) in x.chunks_exact(c).enumerate() {
        for ch in 0..c {
            let hv = (row[ch] - mean[ch]) * inv_std[ch];
            out[r * c + ch] = bn.gamma[ch] * hv + bn.beta[ch];
            if let Some(h) = hat_buf.as_deref_mut() {
                h[r * c + ch] = hv;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn bn_backward<T: Scalar>(
    bn: &BatchNorm<T>,
    xhat: &[T],
    inv_std: &[T],
    dy: &[T],
    dgamma: &mut [T],
    dbeta: &mut [T],
    batch_stats: bool,
    dx: Option<&mut Vec<T>>,
) {
    let c = bn.channels();
    let rows = xhat.len() / c;
    dgamma.iter_mut().for_each(|v| *v = T::zero());
    dbeta.iter_mut().for_each(|v| *v = T::zero());
    for (g, h) in dy.chunks_exact(c).zip(xhat.chunks_exact(c)) {
        for ch in 0..c {
            dgamma[ch] = dgamma[ch] + g[ch] * h[ch];
            dbeta[ch] = dbeta[ch] + g[ch];
        }
    }
    let Some(dx) = dx else { return };
    reset(dx, dy.len());
    if !batch_stats {
        for (r, g) in dy.chunks_exact(c).enumerate() {
            for ch in 0..c {
                dx[r * c + ch] = g[ch] * bn.gamma[ch] * inv_std[ch];
            }
        }
        return;
    }
    let n = T::from_usize(rows);
    for r in 0..rows {
        for ch in 0..c {
            let i = r * c + ch;
            // d(x_hat) = dy * gamma; sums of d(x_hat) and d(x_hat)*x_hat are gamma-scaled dbeta, dgamma
            let dh = dy[i] * bn.gamma[ch];
            let sum_dh = dbeta[ch] * bn.gamma[ch];
            let sum_dh_h = dgamma[ch] * bn.gamma[ch];
            dx[i] = inv_std[ch] / n * (n * dh - sum_dh - xhat[i] * sum_dh_h);
        }
    }
}

pub(super) fn softmax_rows<T: Scalar>(x: &[T], cols: usize, out: &mut Vec<T>) {
    reset(out, x.len());
    for (src, dst) in x.chunks_exact(cols).zip(out.chunks_exact_mut(cols)) {
        let max = src.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - max).exp();
            total = total + *d;
        }
        dst.iter_mut().for_each(|d| *d = *d / total);
    }
}
