//! Pixel-domain visual information fidelity.

use super::{check_triple, gaussian_taps, Flags, Plane};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Variance of the additive channel noise of the visual model, in 8-bit units.
pub const VIF_NOISE_VAR: f64 = 2.0;
pub const VIF_SCALES: usize = 4;
/// Smallest accepted image extent.
pub const VIF_MIN_EXTENT: usize = 32;
const EPS: f64 = 1e-10;

/// Window length of scale `s` (1-based): 17, 9, 5, 3.
pub(crate) fn window(s: usize) -> usize {
    (1 << (VIF_SCALES - s + 1)) + 1
}

/// Information terms of one scale given local statistics at one position:
/// `(log10(1 + g²σ₁²/(σ_v² + σ_n²)), log10(1 + σ₁²/σ_n²))`.
pub(crate) fn local_terms(s1: f64, s2: f64, s12: f64) -> (f64, f64) {
    let (mut s1, s2) = (s1.max(0.0), s2.max(0.0));
    let mut g = s12 / (s1 + EPS);
    let mut sv = s2 - g * s12;
    if s1 < EPS {
        g = 0.0;
        sv = s2;
        s1 = 0.0;
    }
    if s2 < EPS {
        g = 0.0;
        sv = 0.0;
    }
    if g < 0.0 {
        sv = s2;
        g = 0.0;
    }
    if sv <= EPS {
        sv = EPS;
    }
    let num = (1.0 + g * g * s1 / (sv + VIF_NOISE_VAR)).log10();
    let den = (1.0 + s1 / VIF_NOISE_VAR).log10();
    (num, den)
}

fn vif_planes(r: &Plane, d: &Plane) -> (f64, Flags) {
    let mut r = r.map(|v| v * 255.0);
    let mut d = d.map(|v| v * 255.0);
    let (mut num, mut den) = (0.0, 0.0);
    let mut flags = Flags::new();
    for s in 1..=VIF_SCALES {
        let n = window(s);
        let g = gaussian_taps(n, n as f64 / 5.0);
        if s > 1 {
            r = r.filter_valid(&g).subsample();
            d = d.filter_valid(&g).subsample();
        }
        let mu1 = r.filter_valid(&g);
        if mu1.data.is_empty() {
            flags.push(format!("vif: scale {s} smaller than its window, skipped"));
            continue;
        }
        let mu2 = d.filter_valid(&g);
        let rr = r.zip(&r, |a, b| a * b).filter_valid(&g);
        let dd = d.zip(&d, |a, b| a * b).filter_valid(&g);
        let rd = r.zip(&d, |a, b| a * b).filter_valid(&g);
        for i in 0..mu1.data.len() {
            let (m1, m2) = (mu1.data[i], mu2.data[i]);
            let (a, b) = local_terms(
                rr.data[i] - m1 * m1,
                dd.data[i] - m2 * m2,
                rd.data[i] - m1 * m2,
            );
            num += a;
            den += b;
        }
    }
    if den > 0.0 {
        (num / den, flags)
    } else {
        flags.push("vif: reference carries no information".into());
        (0.0, flags)
    }
}

fn check(r: &Plane) -> Result<()> {
    if r.h < VIF_MIN_EXTENT || r.w < VIF_MIN_EXTENT {
        return Err(Error::TooSmall {
            op: "vif",
            got: r.h,
            got_w: r.w,
            min: VIF_MIN_EXTENT,
        });
    }
    Ok(())
}

/// VIF of `distorted` against `reference`, both in `[0, 1]`.
pub fn vif(reference: &Tensor, distorted: &Tensor) -> Result<f64> {
    let (r, d, _) = check_triple("vif", reference, distorted, distorted)?;
    check(&r)?;
    Ok(vif_planes(&r, &d).0)
}

/// Mean of `vif(I1, If)` and `vif(I2, If)`, with degeneracy notes.
pub fn vif_detailed(i1: &Tensor, i2: &Tensor, fused: &Tensor) -> Result<(f64, Flags)> {
    let (a, b, f) = check_triple("vif", i1, i2, fused)?;
    check(&a)?;
    let (va, mut flags) = vif_planes(&a, &f);
    let (vb, fb) = vif_planes(&b, &f);
    flags.extend(fb);
    flags.dedup();
    Ok((0.5 * (va + vb), flags))
}

pub fn vif_fused(i1: &Tensor, i2: &Tensor, fused: &Tensor) -> Result<f64> {
    Ok(vif_detailed(i1, i2, fused)?.0)
}
