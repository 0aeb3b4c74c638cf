//! Training objective: intensity, texture and structural-similarity terms
//! and their weighted total.
//!
//! Each term has a differentiable form over tape variables (`*_term`) and a
//! plain evaluation over tensors.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::numerics::Padding;
use crate::tensor::Tensor;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
}

impl LossWeights {
    pub const DEFAULT: Self = Self {
        alpha1: 100.0,
        alpha2: 10.0,
        alpha3: 1.0,
    };
    /// Alternative weighting that trades intensity for structure.
    pub const BALANCED: Self = Self {
        alpha1: 20.0,
        alpha2: 10.0,
        alpha3: 10.0,
    };

    pub fn new(alpha1: f64, alpha2: f64, alpha3: f64) -> Result<Self> {
        let w = Self {
            alpha1,
            alpha2,
            alpha3,
        };
        if [alpha1, alpha2, alpha3]
            .iter()
            .any(|a| !(*a >= 0.0) || !a.is_finite())
        {
            return Err(Error::Config(format!(
                "loss weights must be finite and nonnegative, got {w}"
            )));
        }
        Ok(w)
    }

    /// `α1·int + α2·text + α3·ssim`.
    pub fn combine(&self, intensity: f64, texture: f64, ssim: f64) -> f64 {
        self.alpha1 * intensity + self.alpha2 * texture + self.alpha3 * ssim
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::DEFAULT
    }
}

impl fmt::Display for LossWeights {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.alpha1, self.alpha2, self.alpha3)
    }
}

impl FromStr for LossWeights {
    type Err = Error;

    /// Parses `a1,a2,a3`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| {
                Error::Config(format!(
                    "loss weights must be three comma-separated numbers, got `{s}`"
                ))
            })?;
        match parts[..] {
            [a, b, c] => Self::new(a, b, c),
            _ => Err(Error::Config(format!(
                "expected three loss weights, got `{s}`"
            ))),
        }
    }
}

/// Per-term values and the weighted total.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub intensity: f64,
    pub texture: f64,
    pub ssim: f64,
    pub total: f64,
}

impl fmt::Display for LossBreakdown {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "total={:.6} int={:.6} text={:.6} ssim={:.6}",
            self.total, self.intensity, self.texture, self.ssim
        )
    }
}

fn as_image(t: &Tape, v: &Var) -> Result<Var> {
    let (h, w, c) = v.value().hwc()?;
    if c != 1 {
        return Err(Error::ChannelMismatch {
            op: "loss",
            expected: 1,
            got: c,
        });
    }
    t.reshape(v, &[h, w])
}

fn same_shapes(op: &'static str, a: &Var, b: &Var, f: &Var) -> Result<()> {
    for other in [b, f] {
        if other.shape() != a.shape() {
            return Err(Error::shape(
                op,
                format!("{:?}", a.shape()),
                format!("{:?}", other.shape()),
            ));
        }
    }
    Ok(())
}

/// `mean((If - max(I1, I2))²)`.
pub fn intensity_term(t: &Tape, i1: &Var, i2: &Var, fused: &Var) -> Result<Var> {
    same_shapes("intensity_loss", i1, i2, fused)?;
    let target = t.max(i1, i2)?;
    let d = t.sub(fused, &target)?;
    t.mean(&t.mul(&d, &d)?)
}

/// `mean|∇If - max(∇I1, ∇I2)|` with `∇ = |G_x| + |G_y|`.
pub fn texture_term(t: &Tape, i1: &Var, i2: &Var, fused: &Var) -> Result<Var> {
    same_shapes("texture_loss", i1, i2, fused)?;
    let grad = |v: &Var| -> Result<Var> { t.sobel_magnitude(&as_image(t, v)?) };
    let target = t.max(&grad(i1)?, &grad(i2)?)?;
    let d = t.sub(&grad(fused)?, &target)?;
    t.mean(&t.abs(&d)?)
}

/// Normalized 11x11 Gaussian window, `[11, 11, 1, 1]`.
pub fn gaussian_window() -> Tensor {
    let half = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    let g: Vec<f64> = g.iter().map(|v| v / s).collect();
    Tensor::from_fn(&[SSIM_WINDOW, SSIM_WINDOW, 1, 1], |k| {
        g[k / SSIM_WINDOW] * g[k % SSIM_WINDOW]
    })
}

/// Mean SSIM over all valid window positions.
pub fn ssim_term(t: &Tape, x: &Var, y: &Var) -> Result<Var> {
    if x.shape() != y.shape() {
        return Err(Error::shape(
            "ssim",
            format!("{:?}", x.shape()),
            format!("{:?}", y.shape()),
        ));
    }
    let (h, w, _) = x.value().hwc()?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::TooSmall {
            op: "ssim",
            got: h,
            got_w: w,
            min: SSIM_WINDOW,
        });
    }
    let win = t.constant(gaussian_window());
    let img = |v: &Var| t.reshape(v, &[h, w, 1]);
    let (x, y) = (img(x)?, img(y)?);
    let blur = |v: &Var| t.conv2d(v, &win, None, Padding::Valid);
    let mx = blur(&x)?;
    let my = blur(&y)?;
    let mxx = blur(&t.mul(&x, &x)?)?;
    let myy = blur(&t.mul(&y, &y)?)?;
    let mxy = blur(&t.mul(&x, &y)?)?;
    let mx2 = t.mul(&mx, &mx)?;
    let my2 = t.mul(&my, &my)?;
    let mxmy = t.mul(&mx, &my)?;
    let vx = t.sub(&mxx, &mx2)?;
    let vy = t.sub(&myy, &my2)?;
    let cxy = t.sub(&mxy, &mxmy)?;
    let num = t.mul(
        &t.offset(&t.scale(&mxmy, 2.0)?, SSIM_C1)?,
        &t.offset(&t.scale(&cxy, 2.0)?, SSIM_C2)?,
    )?;
    let den = t.mul(
        &t.offset(&t.add(&mx2, &my2)?, SSIM_C1)?,
        &t.offset(&t.add(&vx, &vy)?, SSIM_C2)?,
    )?;
    t.mean(&t.div(&num, &den)?)
}

/// `½(1 - SSIM(I1, If)) + ½(1 - SSIM(I2, If))`.
pub fn ssim_loss_term(t: &Tape, i1: &Var, i2: &Var, fused: &Var) -> Result<Var> {
    same_shapes("ssim_loss", i1, i2, fused)?;
    let s1 = ssim_term(t, i1, fused)?;
    let s2 = ssim_term(t, i2, fused)?;
    let sum = t.add(&s1, &s2)?;
    t.offset(&t.scale(&sum, -0.5)?, 1.0)
}

/// Weighted total and its three terms, all on the tape.
pub struct LossTerms {
    pub intensity: Var,
    pub texture: Var,
    pub ssim: Var,
    pub total: Var,
}

impl LossTerms {
    pub fn breakdown(&self) -> LossBreakdown {
        LossBreakdown {
            intensity: self.intensity.item(),
            texture: self.texture.item(),
            ssim: self.ssim.item(),
            total: self.total.item(),
        }
    }
}

pub fn total_term(t: &Tape, i1: &Var, i2: &Var, fused: &Var, w: LossWeights) -> Result<LossTerms> {
    let intensity = intensity_term(t, i1, i2, fused)?;
    let texture = texture_term(t, i1, i2, fused)?;
    let ssim = ssim_loss_term(t, i1, i2, fused)?;
    let total = t.add(
        &t.scale(&intensity, w.alpha1)?,
        &t.scale(&texture, w.alpha2)?,
    )?;
    let total = t.add(&total, &t.scale(&ssim, w.alpha3)?)?;
    Ok(LossTerms {
        intensity,
        texture,
        ssim,
        total,
    })
}

fn eval3(
    i1: &Tensor,
    i2: &Tensor,
    f: &Tensor,
    g: impl Fn(&Tape, &Var, &Var, &Var) -> Result<Var>,
) -> Result<f64> {
    let t = Tape::eval();
    let v = g(
        &t,
        &t.constant(i1.clone()),
        &t.constant(i2.clone()),
        &t.constant(f.clone()),
    )?;
    Ok(v.item())
}

pub fn intensity_loss(i1: &Tensor, i2: &Tensor, fused: &Tensor) -> Result<f64> {
    eval3(i1, i2, fused, intensity_term)
}

pub fn texture_loss(i1: &Tensor, i2: &Tensor, fused: &Tensor) -> Result<f64> {
    eval3(i1, i2, fused, texture_term)
}

pub fn ssim(x: &Tensor, y: &Tensor) -> Result<f64> {
    let t = Tape::eval();
    Ok(ssim_term(&t, &t.constant(x.clone()), &t.constant(y.clone()))?.item())
}

pub fn ssim_loss(i1: &Tensor, i2: &Tensor, fused: &Tensor) -> Result<f64> {
    eval3(i1, i2, fused, ssim_loss_term)
}

pub fn total_loss(
    i1: &Tensor,
    i2: &Tensor,
    fused: &Tensor,
    w: LossWeights,
) -> Result<LossBreakdown> {
    let t = Tape::eval();
    let terms = total_term(
        &t,
        &t.constant(i1.clone()),
        &t.constant(i2.clone()),
        &t.constant(fused.clone()),
        w,
    )?;
    Ok(terms.breakdown())
}
