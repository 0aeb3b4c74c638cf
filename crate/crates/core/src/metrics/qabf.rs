//! Gradient-based edge preservation (Xydeas–Petrović).

use std::f64::consts::FRAC_PI_2;

use super::check_triple;
use crate::error::Result;
use crate::numerics::sobel_components;
use crate::tensor::Tensor;

/// Sigmoid constants of the strength (`g`) and orientation (`alpha`) factors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QabfConstants {
    pub gamma_g: f64,
    pub kappa_g: f64,
    pub sigma_g: f64,
    pub gamma_a: f64,
    pub kappa_a: f64,
    pub sigma_a: f64,
}

pub const QABF: QabfConstants = QabfConstants {
    gamma_g: 0.9994,
    kappa_g: -15.0,
    sigma_g: 0.5,
    gamma_a: 0.9879,
    kappa_a: -22.0,
    sigma_a: 0.8,
};

/// Edge strength and orientation in `(-π/2, π/2]` per pixel.
pub(crate) fn edges(t: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
    let (gx, gy) = sobel_components(t)?;
    let strength = gx
        .data()
        .iter()
        .zip(gy.data())
        .map(|(x, y)| x.hypot(*y))
        .collect();
    let angle = gx
        .data()
        .iter()
        .zip(gy.data())
        .map(|(&x, &y)| orientation(x, y))
        .collect();
    Ok((strength, angle))
}

pub(crate) fn orientation(gx: f64, gy: f64) -> f64 {
    if gx == 0.0 {
        FRAC_PI_2
    } else {
        (gy / gx).atan()
    }
}

/// Relative strength `min(gA, gF) / max(gA, gF)`, zero when both vanish.
pub(crate) fn relative_strength(ga: f64, gf: f64) -> f64 {
    if ga == 0.0 && gf == 0.0 {
        0.0
    } else if ga > gf {
        gf / ga
    } else {
        ga / gf
    }
}

/// `1 - d/(π/2)` where `d` is the orientation distance modulo π.
pub(crate) fn relative_orientation(aa: f64, af: f64) -> f64 {
    let d = (aa - af).abs();
    let d = d.min(std::f64::consts::PI - d);
    1.0 - d / FRAC_PI_2
}

/// Per-pixel preservation of a source edge in the fused image.
pub(crate) fn preservation(c: &QabfConstants, g: f64, a: f64) -> f64 {
    let qg = c.gamma_g / (1.0 + (c.kappa_g * (g - c.sigma_g)).exp());
    let qa = c.gamma_a / (1.0 + (c.kappa_a * (a - c.sigma_a)).exp());
    qg * qa
}

/// `Σ (Q^AF·gA + Q^BF·gB) / Σ (gA + gB)`; 0 when every source is flat.
pub fn qabf(i1: &Tensor, i2: &Tensor, fused: &Tensor) -> Result<f64> {
    check_triple("qabf", i1, i2, fused)?;
    let (ga, aa) = edges(i1)?;
    let (gb, ab) = edges(i2)?;
    let (gf, af) = edges(fused)?;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..gf.len() {
        let qa = preservation(
            &QABF,
            relative_strength(ga[i], gf[i]),
            relative_orientation(aa[i], af[i]),
        );
        let qb = preservation(
            &QABF,
            relative_strength(gb[i], gf[i]),
            relative_orientation(ab[i], af[i]),
        );
        num += qa * ga[i] + qb * gb[i];
        den += ga[i] + gb[i];
    }
    Ok(if den > 0.0 { num / den } else { 0.0 })
}
