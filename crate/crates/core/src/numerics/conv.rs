//! Spatial convolution kernels over `[H, W, C]` maps, forward and adjoint.
//!
//! Every output element is produced by exactly one task with a fixed
//! accumulation order, so parallel and sequential evaluation agree bitwise.

use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding, output extents equal input extents.
    Same,
    /// No padding, output shrinks by `k - 1` per axis.
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub kh: usize,
    pub kw: usize,
    pub cout: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(
        (h, w, cin): (usize, usize, usize),
        (kh, kw, cout): (usize, usize, usize),
        padding: Padding,
    ) -> Result<Self> {
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::EvenKernel(kh, kw));
        }
        let (pad_h, pad_w, oh, ow) = match padding {
            Padding::Same => ((kh - 1) / 2, (kw - 1) / 2, h, w),
            Padding::Valid => {
                if kh > h || kw > w {
                    return Err(Error::TooSmall {
                        op: "conv2d",
                        got: h,
                        got_w: w,
                        min: kh.max(kw),
                    });
                }
                (0, 0, h - kh + 1, w - kw + 1)
            }
        };
        Ok(Self {
            h,
            w,
            cin,
            kh,
            kw,
            cout,
            pad_h,
            pad_w,
            oh,
            ow,
        })
    }

    pub fn macs(&self) -> u64 {
        (self.kh * self.kw * self.cin * self.cout * self.oh * self.ow) as u64
    }

    /// Input row touched by output row `oy` at tap `i`, if inside the map.
    #[inline]
    fn in_y(&self, oy: usize, i: usize) -> Option<usize> {
        (oy + i).checked_sub(self.pad_h).filter(|&y| y < self.h)
    }

    #[inline]
    fn in_x(&self, ox: usize, j: usize) -> Option<usize> {
        (ox + j).checked_sub(self.pad_w).filter(|&x| x < self.w)
    }

    /// Output row reading input row `iy` through tap `i`.
    #[inline]
    fn out_y(&self, iy: usize, i: usize) -> Option<usize> {
        (iy + self.pad_h).checked_sub(i).filter(|&y| y < self.oh)
    }

    #[inline]
    fn out_x(&self, ix: usize, j: usize) -> Option<usize> {
        (ix + self.pad_w).checked_sub(j).filter(|&x| x < self.ow)
    }
}

/// Dense convolution (cross-correlation) with weights `[kh, kw, cin, cout]`.
pub(crate) fn conv2d_forward(x: &[f64], w: &[f64], bias: Option<&[f64]>, g: &ConvGeom) -> Vec<f64> {
    let mut out = vec![0.0; g.oh * g.ow * g.cout];
    if out.is_empty() {
        return out;
    }
    out.par_chunks_mut(g.ow * g.cout)
        .enumerate()
        .for_each(|(oy, row)| {
            for ox in 0..g.ow {
                let acc = &mut row[ox * g.cout..(ox + 1) * g.cout];
                if let Some(b) = bias {
                    acc.copy_from_slice(b);
                }
                for i in 0..g.kh {
                    let Some(iy) = g.in_y(oy, i) else { continue };
                    for j in 0..g.kw {
                        let Some(ix) = g.in_x(ox, j) else { continue };
                        let xin = &x[(iy * g.w + ix) * g.cin..][..g.cin];
                        let tap = &w[(i * g.kw + j) * g.cin * g.cout..][..g.cin * g.cout];
                        for (c, &xv) in xin.iter().enumerate() {
                            let wrow = &tap[c * g.cout..(c + 1) * g.cout];
                            for (a, &wv) in acc.iter_mut().zip(wrow) {
                                *a += xv * wv;
                            }
                        }
                    }
                }
            }
        });
    out
}

pub(crate) fn conv2d_backward_input(w: &[f64], grad: &[f64], g: &ConvGeom) -> Vec<f64> {
    let mut dx = vec![0.0; g.h * g.w * g.cin];
    dx.par_chunks_mut(g.w * g.cin)
        .enumerate()
        .for_each(|(iy, row)| {
            for ix in 0..g.w {
                let acc = &mut row[ix * g.cin..(ix + 1) * g.cin];
                for i in 0..g.kh {
                    let Some(oy) = g.out_y(iy, i) else { continue };
                    for j in 0..g.kw {
                        let Some(ox) = g.out_x(ix, j) else { continue };
                        let gout = &grad[(oy * g.ow + ox) * g.cout..][..g.cout];
                        let tap = &w[(i * g.kw + j) * g.cin * g.cout..][..g.cin * g.cout];
                        for (c, a) in acc.iter_mut().enumerate() {
                            let wrow = &tap[c * g.cout..(c + 1) * g.cout];
                            *a += wrow.iter().zip(gout).map(|(wv, gv)| wv * gv).sum::<f64>();
                        }
                    }
                }
            }
        });
    dx
}

pub(crate) fn conv2d_backward_weight(x: &[f64], grad: &[f64], g: &ConvGeom) -> Vec<f64> {
    let block = g.cin * g.cout;
    let mut dw = vec![0.0; g.kh * g.kw * block];
    dw.par_chunks_mut(block).enumerate().for_each(|(t, tap)| {
        let (i, j) = (t / g.kw, t % g.kw);
        for oy in 0..g.oh {
            let Some(iy) = g.in_y(oy, i) else { continue };
            for ox in 0..g.ow {
                let Some(ix) = g.in_x(ox, j) else { continue };
                let xin = &x[(iy * g.w + ix) * g.cin..][..g.cin];
                let gout = &grad[(oy * g.ow + ox) * g.cout..][..g.cout];
                for (c, &xv) in xin.iter().enumerate() {
                    for (d, &gv) in tap[c * g.cout..(c + 1) * g.cout].iter_mut().zip(gout) {
                        *d += xv * gv;
                    }
                }
            }
        }
    });
    dw
}

/// Per-channel sum over all positions; the bias gradient of any map op.
pub(crate) fn channel_sums(grad: &[f64], channels: usize) -> Vec<f64> {
    let mut db = vec![0.0; channels];
    for row in grad.chunks_exact(channels) {
        for (d, &gv) in db.iter_mut().zip(row) {
            *d += gv;
        }
    }
    db
}

/// Depthwise convolution with weights `[kh, kw, C]`; geometry uses `cout == cin`.
pub(crate) fn depthwise_forward(
    x: &[f64],
    w: &[f64],
    bias: Option<&[f64]>,
    g: &ConvGeom,
) -> Vec<f64> {
    let c = g.cin;
    let mut out = vec![0.0; g.oh * g.ow * c];
    if out.is_empty() {
        return out;
    }
    out.par_chunks_mut(g.ow * c)
        .enumerate()
        .for_each(|(oy, row)| {
            for ox in 0..g.ow {
                let acc = &mut row[ox * c..(ox + 1) * c];
                if let Some(b) = bias {
                    acc.copy_from_slice(b);
                }
                for i in 0..g.kh {
                    let Some(iy) = g.in_y(oy, i) else { continue };
                    for j in 0..g.kw {
                        let Some(ix) = g.in_x(ox, j) else { continue };
                        let xin = &x[(iy * g.w + ix) * c..][..c];
                        let tap = &w[(i * g.kw + j) * c..][..c];
                        for ((a, &xv), &wv) in acc.iter_mut().zip(xin).zip(tap) {
                            *a += xv * wv;
                        }
                    }
                }
            }
        });
    out
}

pub(crate) fn depthwise_backward_input(w: &[f64], grad: &[f64], g: &ConvGeom) -> Vec<f64> {
    let c = g.cin;
    let mut dx = vec![0.0; g.h * g.w * c];
    dx.par_chunks_mut(g.w * c)
        .enumerate()
        .for_each(|(iy, row)| {
            for ix in 0..g.w {
                let acc = &mut row[ix * c..(ix + 1) * c];
                for i in 0..g.kh {
                    let Some(oy) = g.out_y(iy, i) else { continue };
                    for j in 0..g.kw {
                        let Some(ox) = g.out_x(ix, j) else { continue };
                        let gout = &grad[(oy * g.ow + ox) * c..][..c];
                        let tap = &w[(i * g.kw + j) * c..][..c];
                        for ((a, &gv), &wv) in acc.iter_mut().zip(gout).zip(tap) {
                            *a += gv * wv;
                        }
                    }
                }
            }
        });
    dx
}

pub(crate) fn depthwise_backward_weight(x: &[f64], grad: &[f64], g: &ConvGeom) -> Vec<f64> {
    let c = g.cin;
    let mut dw = vec![0.0; g.kh * g.kw * c];
    dw.par_chunks_mut(c).enumerate().for_each(|(t, tap)| {
        let (i, j) = (t / g.kw, t % g.kw);
        for oy in 0..g.oh {
            let Some(iy) = g.in_y(oy, i) else { continue };
            for ox in 0..g.ow {
                let Some(ix) = g.in_x(ox, j) else { continue };
                let xin = &x[(iy * g.w + ix) * c..][..c];
                let gout = &grad[(oy * g.ow + ox) * c..][..c];
                for ((d, &xv), &gv) in tap.iter_mut().zip(xin).zip(gout) {
                    *d += xv * gv;
                }
            }
        }
    });
    dw
}

/// Sobel axis: `X` responds to horizontal intensity change.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SobelAxis {
    X,
    Y,
}

#[inline]
fn clamp_idx(i: usize, d: isize, n: usize) -> usize {
    (i as isize + d).clamp(0, n as isize - 1) as usize
}

/// Row-major 3x3 stencil visited as (tap offset, weight) pairs for one axis,
/// positive side first.
fn sobel_taps(axis: SobelAxis) -> [((isize, isize), f64); 6] {
    match axis {
        SobelAxis::X => [
            ((-1, 1), 1.0),
            ((0, 1), 2.0),
            ((1, 1), 1.0),
            ((-1, -1), -1.0),
            ((0, -1), -2.0),
            ((1, -1), -1.0),
        ],
        SobelAxis::Y => [
            ((1, -1), 1.0),
            ((1, 0), 2.0),
            ((1, 1), 1.0),
            ((-1, -1), -1.0),
            ((-1, 0), -2.0),
            ((-1, 1), -1.0),
        ],
    }
}

/// Sobel response of a single-channel `h x w` image with border replication,
/// evaluated as (positive column sum) - (negative column sum) so flat regions
/// give exact zeros.
pub(crate) fn sobel_forward(x: &[f64], h: usize, w: usize, axis: SobelAxis) -> Vec<f64> {
    let taps = sobel_taps(axis);
    let at = |y: usize, xx: usize, (dy, dx): (isize, isize)| {
        x[clamp_idx(y, dy, h) * w + clamp_idx(xx, dx, w)]
    };
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for xx in 0..w {
            let pos = at(y, xx, taps[0].0) + 2.0 * at(y, xx, taps[1].0) + at(y, xx, taps[2].0);
            let neg = at(y, xx, taps[3].0) + 2.0 * at(y, xx, taps[4].0) + at(y, xx, taps[5].0);
            out[y * w + xx] = pos - neg;
        }
    }
    out
}

pub(crate) fn sobel_backward(grad: &[f64], h: usize, w: usize, axis: SobelAxis) -> Vec<f64> {
    let taps = sobel_taps(axis);
    let mut dx = vec![0.0; h * w];
    for y in 0..h {
        for xx in 0..w {
            let g = grad[y * w + xx];
            for &((dy, dxo), wt) in &taps {
                dx[clamp_idx(y, dy, h) * w + clamp_idx(xx, dxo, w)] += wt * g;
            }
        }
    }
    dx
}
