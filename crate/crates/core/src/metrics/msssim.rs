//! Multi-scale structural similarity.

use super::{check_triple, gaussian_taps, Plane};
use crate::error::{Error, Result};
use crate::losses::{SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW};
use crate::tensor::Tensor;

pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

/// Mean SSIM and mean contrast-structure term over valid windows.
pub(crate) fn components(x: &Plane, y: &Plane) -> (f64, f64) {
    let g = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let mx = x.filter_valid(&g);
    let my = y.filter_valid(&g);
    let mxx = x.zip(x, |a, b| a * b).filter_valid(&g);
    let myy = y.zip(y, |a, b| a * b).filter_valid(&g);
    let mxy = x.zip(y, |a, b| a * b).filter_valid(&g);
    let n = mx.data.len() as f64;
    let (mut ssim, mut cs) = (0.0, 0.0);
    for i in 0..mx.data.len() {
        let (ux, uy) = (mx.data[i], my.data[i]);
        let vx = mxx.data[i] - ux * ux;
        let vy = myy.data[i] - uy * uy;
        let cxy = mxy.data[i] - ux * uy;
        let c = (2.0 * cxy + SSIM_C2) / (vx + vy + SSIM_C2);
        let l = (2.0 * ux * uy + SSIM_C1) / (ux * ux + uy * uy + SSIM_C1);
        ssim += l * c;
        cs += c;
    }
    (ssim / n, cs / n)
}

/// `(mean SSIM, mean contrast-structure)` of two equal-size images.
pub fn ssim_components(x: &Tensor, y: &Tensor) -> Result<(f64, f64)> {
    let (a, b, _) = check_triple("ssim", x, y, y)?;
    if a.h < SSIM_WINDOW || a.w < SSIM_WINDOW {
        return Err(Error::TooSmall {
            op: "ssim",
            got: a.h,
            got_w: a.w,
            min: SSIM_WINDOW,
        });
    }
    Ok(components(&a, &b))
}

/// Number of scales (at most five) whose images still hold one window.
pub fn ms_ssim_scales(h: usize, w: usize) -> usize {
    let m = h.min(w);
    (1..=MS_SSIM_WEIGHTS.len())
        .take_while(|&s| m >> (s - 1) >= SSIM_WINDOW)
        .last()
        .unwrap_or(0)
}

pub(crate) fn ms_ssim_planes(x: &Plane, y: &Plane) -> Result<f64> {
    let scales = ms_ssim_scales(x.h, x.w);
    if scales == 0 {
        return Err(Error::TooSmall {
            op: "ms_ssim",
            got: x.h,
            got_w: x.w,
            min: SSIM_WINDOW,
        });
    }
    let norm: f64 = MS_SSIM_WEIGHTS[..scales].iter().sum();
    let (mut x, mut y) = (x.clone(), y.clone());
    let mut value = 1.0;
    for (j, &wt) in MS_SSIM_WEIGHTS[..scales].iter().enumerate() {
        let (ssim, cs) = components(&x, &y);
        let term = if j + 1 == scales { ssim } else { cs };
        value *= term.max(0.0).powf(wt / norm);
        if j + 1 < scales {
            x = x.downsample();
            y = y.downsample();
        }
    }
    Ok(value)
}

/// Contrast-structure terms at every scale but the coarsest, full SSIM at
/// the coarsest, combined with the standard exponents (renormalized when
/// fewer than five scales fit).
pub fn ms_ssim(x: &Tensor, y: &Tensor) -> Result<f64> {
    let (a, b, _) = check_triple("ms_ssim", x, y, y)?;
    ms_ssim_planes(&a, &b)
}

/// Mean of `ms_ssim(I1, If)` and `ms_ssim(I2, If)`.
pub fn ms_ssim_fused(i1: &Tensor, i2: &Tensor, fused: &Tensor) -> Result<f64> {
    let (a, b, f) = check_triple("ms_ssim", i1, i2, fused)?;
    Ok(0.5 * (ms_ssim_planes(&a, &f)? + ms_ssim_planes(&b, &f)?))
}
