//! Sum of correlations of differences.

use super::{check_triple, pearson, Flags};
use crate::error::Result;
use crate::tensor::Tensor;

/// `corr(If - I2, I1) + corr(If - I1, I2)`; a term with a zero-variance
/// operand counts as 0 and is flagged.
pub fn scd_detailed(i1: &Tensor, i2: &Tensor, fused: &Tensor) -> Result<(f64, Flags)> {
    let (a, b, f) = check_triple("scd", i1, i2, fused)?;
    let d2 = f.zip(&b, |x, y| x - y);
    let d1 = f.zip(&a, |x, y| x - y);
    let mut flags = Flags::new();
    let mut total = 0.0;
    for (name, diff, src) in [("If-I2 vs I1", &d2, &a), ("If-I1 vs I2", &d1, &b)] {
        match pearson(&diff.data, &src.data) {
            Some(r) => total += r,
            None => flags.push(format!("scd: zero variance in {name}")),
        }
    }
    Ok((total, flags))
}

pub fn scd(i1: &Tensor, i2: &Tensor, fused: &Tensor) -> Result<f64> {
    Ok(scd_detailed(i1, i2, fused)?.0)
}
