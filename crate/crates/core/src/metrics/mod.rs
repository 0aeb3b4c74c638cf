//! Reference-based fusion quality metrics: VIF, SCD, Q^AB/F, MS-SSIM and FMI.
//!
//! Every metric is a pure function of the two sources and the fused image.
//! Degenerate terms (zero variance, empty histograms, flat gradients) are
//! defined as zero and reported through [`Flags`], never as NaN.

mod fmi;
mod msssim;
mod qabf;
mod report;
mod scd;
mod vif;

pub use fmi::{fmi, fmi_detailed, nmi, FMI_BINS};
pub use msssim::{ms_ssim, ms_ssim_fused, ms_ssim_scales, ssim_components, MS_SSIM_WEIGHTS};
pub use qabf::{qabf, QabfConstants, QABF};
pub use report::{evaluate_all, evaluate_pair, FusionReport, FusionRow, METRIC_NAMES};
pub use scd::{scd, scd_detailed};
pub use vif::{vif, vif_detailed, vif_fused, VIF_NOISE_VAR, VIF_SCALES};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Notes about degenerate terms encountered while evaluating a metric.
pub type Flags = Vec<String>;

/// Single-channel image viewed as a row-major `h x w` grid.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Plane {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (h, w, c) = t.hwc()?;
        if c != 1 {
            return Err(Error::ChannelMismatch {
                op: "metric",
                expected: 1,
                got: c,
            });
        }
        Ok(Self {
            h,
            w,
            data: t.data().to_vec(),
        })
    }

    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.w + x]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip(&self, o: &Plane, f: impl Fn(f64, f64) -> f64) -> Self {
        Self {
            h: self.h,
            w: self.w,
            data: self
                .data
                .iter()
                .zip(&o.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// Separable correlation with `g` along both axes, valid region only.
    pub fn filter_valid(&self, g: &[f64]) -> Plane {
        let k = g.len();
        if self.h < k || self.w < k {
            return Plane {
                h: 0,
                w: 0,
                data: Vec::new(),
            };
        }
        let (oh, ow) = (self.h - k + 1, self.w - k + 1);
        let mut rows = vec![0.0; self.h * ow];
        for y in 0..self.h {
            let src = &self.data[y * self.w..(y + 1) * self.w];
            for x in 0..ow {
                rows[y * ow + x] = g.iter().zip(&src[x..x + k]).map(|(a, b)| a * b).sum();
            }
        }
        let mut out = vec![0.0; oh * ow];
        for y in 0..oh {
            for x in 0..ow {
                out[y * ow + x] = g
                    .iter()
                    .enumerate()
                    .map(|(i, a)| a * rows[(y + i) * ow + x])
                    .sum();
            }
        }
        Plane {
            h: oh,
            w: ow,
            data: out,
        }
    }

    /// 2x2 mean pooling, dropping a trailing odd row or column.
    pub fn downsample(&self) -> Plane {
        let (oh, ow) = (self.h / 2, self.w / 2);
        let data = (0..oh * ow)
            .map(|i| {
                let (y, x) = (2 * (i / ow), 2 * (i % ow));
                (self.at(y, x) + self.at(y, x + 1) + self.at(y + 1, x) + self.at(y + 1, x + 1))
                    / 4.0
            })
            .collect();
        Plane { h: oh, w: ow, data }
    }

    /// Every other sample, starting at the origin.
    pub fn subsample(&self) -> Plane {
        let (oh, ow) = (self.h.div_ceil(2), self.w.div_ceil(2));
        let data = (0..oh * ow)
            .map(|i| self.at(2 * (i / ow), 2 * (i % ow)))
            .collect();
        Plane { h: oh, w: ow, data }
    }
}

/// Normalized Gaussian taps of length `n`.
pub fn gaussian_taps(n: usize, sigma: f64) -> Vec<f64> {
    let half = (n as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..n)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

pub(crate) fn check_triple(
    op: &'static str,
    i1: &Tensor,
    i2: &Tensor,
    f: &Tensor,
) -> Result<(Plane, Plane, Plane)> {
    let (a, b, c) = (
        Plane::from_tensor(i1)?,
        Plane::from_tensor(i2)?,
        Plane::from_tensor(f)?,
    );
    for p in [&b, &c] {
        if (p.h, p.w) != (a.h, a.w) {
            return Err(Error::shape(
                op,
                format!("{}x{}", a.h, a.w),
                format!("{}x{}", p.h, p.w),
            ));
        }
    }
    if a.data.is_empty() {
        return Err(Error::Empty(op));
    }
    Ok((a, b, c))
}

/// Pearson correlation, `None` when either operand has zero variance.
pub(crate) fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}
