//! Position-wise kernels: affine maps, layer norm, activations, pooling and
//! per-channel scaling.

use rayon::prelude::*;

/// `out[p, o] = bias[o] + sum_c x[p, c] * w[c, o]`.
pub(crate) fn linear_forward(
    x: &[f64],
    w: &[f64],
    bias: Option<&[f64]>,
    cin: usize,
    cout: usize,
) -> Vec<f64> {
    let positions = x.len() / cin;
    let mut out = vec![0.0; positions * cout];
    if out.is_empty() {
        return out;
    }
    out.par_chunks_mut(cout)
        .zip(x.par_chunks(cin))
        .for_each(|(acc, xin)| {
            if let Some(b) = bias {
                acc.copy_from_slice(b);
            }
            for (c, &xv) in xin.iter().enumerate() {
                for (a, &wv) in acc.iter_mut().zip(&w[c * cout..(c + 1) * cout]) {
                    *a += xv * wv;
                }
            }
        });
    out
}

pub(crate) fn linear_backward_input(w: &[f64], grad: &[f64], cin: usize, cout: usize) -> Vec<f64> {
    let positions = grad.len() / cout;
    let mut dx = vec![0.0; positions * cin];
    dx.par_chunks_mut(cin)
        .zip(grad.par_chunks(cout))
        .for_each(|(d, g)| {
            for (c, dv) in d.iter_mut().enumerate() {
                *dv = w[c * cout..(c + 1) * cout]
                    .iter()
                    .zip(g)
                    .map(|(a, b)| a * b)
                    .sum();
            }
        });
    dx
}

pub(crate) fn linear_backward_weight(x: &[f64], grad: &[f64], cin: usize, cout: usize) -> Vec<f64> {
    let mut dw = vec![0.0; cin * cout];
    dw.par_chunks_mut(cout).enumerate().for_each(|(c, row)| {
        for (xin, g) in x.chunks_exact(cin).zip(grad.chunks_exact(cout)) {
            let xv = xin[c];
            for (d, &gv) in row.iter_mut().zip(g) {
                *d += xv * gv;
            }
        }
    });
    dw
}

/// Per-position normalization over the trailing axis; returns `(y, xhat, inv_std)`.
pub(crate) fn layer_norm_forward(
    x: &[f64],
    gain: &[f64],
    shift: &[f64],
    eps: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let c = gain.len();
    let n = x.len() / c;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut inv = vec![0.0; n];
    for (p, row) in x.chunks_exact(c).enumerate() {
        let mean = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
        let is = 1.0 / (var + eps).sqrt();
        inv[p] = is;
        for k in 0..c {
            let xh = (row[k] - mean) * is;
            xhat[p * c + k] = xh;
            y[p * c + k] = gain[k] * xh + shift[k];
        }
    }
    (y, xhat, inv)
}

pub(crate) fn layer_norm_backward_input(
    grad: &[f64],
    xhat: &[f64],
    inv: &[f64],
    gain: &[f64],
) -> Vec<f64> {
    let c = gain.len();
    let cf = c as f64;
    let mut dx = vec![0.0; grad.len()];
    for (p, (g, xh)) in grad.chunks_exact(c).zip(xhat.chunks_exact(c)).enumerate() {
        let mut sum_d = 0.0;
        let mut sum_dx = 0.0;
        for k in 0..c {
            let d = g[k] * gain[k];
            sum_d += d;
            sum_dx += d * xh[k];
        }
        for k in 0..c {
            let d = g[k] * gain[k];
            dx[p * c + k] = inv[p] / cf * (cf * d - sum_d - xh[k] * sum_dx);
        }
    }
    dx
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn global_avg_pool(x: &[f64], c: usize) -> Vec<f64> {
    let n = (x.len() / c) as f64;
    super::conv::channel_sums(x, c)
        .into_iter()
        .map(|s| s / n)
        .collect()
}

pub(crate) fn channel_scale(x: &[f64], s: &[f64]) -> Vec<f64> {
    let c = s.len();
    let mut out = x.to_vec();
    for row in out.chunks_exact_mut(c) {
        for (v, &sv) in row.iter_mut().zip(s) {
            *v *= sv;
        }
    }
    out
}

/// 1-D zero-padded correlation across the channel axis of a pooled vector.
pub(crate) fn channel_conv1d(v: &[f64], w: &[f64]) -> Vec<f64> {
    let c = v.len() as isize;
    let half = (w.len() / 2) as isize;
    (0..c)
        .map(|i| {
            w.iter()
                .enumerate()
                .filter_map(|(j, &wv)| {
                    let src = i + j as isize - half;
                    (0..c).contains(&src).then(|| wv * v[src as usize])
                })
                .sum()
        })
        .collect()
}

/// Returns `(d_input, d_weight)` for [`channel_conv1d`].
pub(crate) fn channel_conv1d_backward(v: &[f64], w: &[f64], grad: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let c = v.len() as isize;
    let half = (w.len() / 2) as isize;
    let mut dv = vec![0.0; v.len()];
    let mut dw = vec![0.0; w.len()];
    for i in 0..c {
        for (j, &wv) in w.iter().enumerate() {
            let src = i + j as isize - half;
            if (0..c).contains(&src) {
                dv[src as usize] += wv * grad[i as usize];
                dw[j] += v[src as usize] * grad[i as usize];
            }
        }
    }
    (dv, dw)
}
