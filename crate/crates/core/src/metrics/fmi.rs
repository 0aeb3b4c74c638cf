//! Feature mutual information over Sobel-magnitude feature images.

use super::{check_triple, Flags};
use crate::error::Result;
use crate::numerics::sobel_gradient;
use crate::tensor::Tensor;

pub const FMI_BINS: usize = 256;

/// Bin indices after min-max scaling to `FMI_BINS` bins; `None` for a
/// constant input.
pub(crate) fn quantize(v: &[f64]) -> Option<Vec<usize>> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return None;
    }
    let scale = FMI_BINS as f64 / (hi - lo);
    Some(
        v.iter()
            .map(|&x| (((x - lo) * scale) as usize).min(FMI_BINS - 1))
            .collect(),
    )
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// `2·MI(A, F) / (H(A) + H(F))` from 256-bin histograms, `None` when either
/// input is constant.
pub(crate) fn nmi_values(a: &[f64], f: &[f64]) -> Option<f64> {
    let (qa, qf) = (quantize(a)?, quantize(f)?);
    let n = qa.len() as f64;
    let mut ha = vec![0usize; FMI_BINS];
    let mut hf = vec![0usize; FMI_BINS];
    let mut joint = vec![0usize; FMI_BINS * FMI_BINS];
    for (&x, &y) in qa.iter().zip(&qf) {
        ha[x] += 1;
        hf[y] += 1;
        joint[x * FMI_BINS + y] += 1;
    }
    let (ea, ef) = (entropy(ha.into_iter(), n), entropy(hf.into_iter(), n));
    let ej = entropy(joint.into_iter(), n);
    Some((2.0 * (ea + ef - ej) / (ea + ef)).clamp(0.0, 1.0))
}

/// Normalized mutual information of two equal-size images.
pub fn nmi(a: &Tensor, f: &Tensor) -> Result<Option<f64>> {
    check_triple("nmi", a, f, f)?;
    Ok(nmi_values(a.data(), f.data()))
}

/// Mean of the feature NMI between each source and the fused image.
pub fn fmi_detailed(i1: &Tensor, i2: &Tensor, fused: &Tensor) -> Result<(f64, Flags)> {
    check_triple("fmi", i1, i2, fused)?;
    let ff = sobel_gradient(fused)?;
    let mut flags = Flags::new();
    let mut total = 0.0;
    for (name, src) in [("I1", i1), ("I2", i2)] {
        match nmi_values(sobel_gradient(src)?.data(), ff.data()) {
            Some(v) => total += v,
            None => flags.push(format!("fmi: constant feature image in {name} or If")),
        }
    }
    Ok((0.5 * total, flags))
}

pub fn fmi(i1: &Tensor, i2: &Tensor, fused: &Tensor) -> Result<f64> {
    Ok(fmi_detailed(i1, i2, fused)?.0)
}
