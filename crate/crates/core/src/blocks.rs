//! Layer building blocks: learnable descriptive convolution (LDC), efficient
//! channel attention (ECA), the state-space module (ESSM) and the dynamic
//! visual state-space block (DVSS).
//!
//! Every block comes as a pair: a `*_params` function declaring its
//! parameters under a scope, and a forward function reading them back from
//! a [`Ctx`] with the same scope.

use crate::autodiff::{Ctx, Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Init, ParamStore, SpecBuilder, WEIGHT_STD};
use crate::ssm::{self, ScanLayout};
use crate::tensor::Tensor;

/// Initial LDC mixing scalar.
pub const LDC_EPSILON_INIT: f64 = 0.5;

/// ESSM inner width as a multiple of the block width.
pub const ESSM_EXPANSION: usize = 2;

/// Depthwise kernel extent inside ESSM.
pub const ESSM_DWCONV: usize = 3;

/// Depthwise 3x3 weights `w`, descriptive mask `m` (both `[3, 3, C]`) and
/// mixing scalar `epsilon`.
#[derive(Clone, Debug, PartialEq)]
pub struct LdcKernel {
    pub w: Tensor,
    pub m: Tensor,
    pub epsilon: f64,
}

impl LdcKernel {
    /// Kernel with the given weights, an all-ones mask and `epsilon = 0.5`.
    pub fn new(w: Tensor) -> Self {
        let m = Tensor::full(w.shape(), 1.0);
        Self {
            w,
            m,
            epsilon: LDC_EPSILON_INIT,
        }
    }

    fn store(&self) -> ParamStore {
        ParamStore::new()
            .with("w", self.w.clone())
            .with("m", self.m.clone())
            .with(
                "epsilon",
                Tensor::new(&[1], vec![self.epsilon]).expect("scalar"),
            )
    }
}

pub fn ldc_params(b: &mut SpecBuilder, c: usize) {
    b.add("w", &[3, 3, c], Init::TruncNormal(WEIGHT_STD));
    b.add("m", &[3, 3, c], Init::Ones);
    b.add("epsilon", &[1], Init::Const(LDC_EPSILON_INIT));
}

/// `(1-ε)·conv(f, w) + ε·conv(f, w⊙m)`, computed as one depthwise
/// convolution with the folded kernel `w ⊙ (1 + ε(m - 1))`. No bias.
pub fn ldc(ctx: &Ctx, f: &Var) -> Result<Var> {
    let w = ctx.p("w")?;
    let mask = ctx.ldc_mask(&ctx.p("epsilon")?, &ctx.p("m")?)?;
    let folded = ctx.mul(&w, &mask)?;
    ctx.depthwise_conv2d(f, &folded, None)
}

pub fn ldc_forward(f: &Tensor, kernel: &LdcKernel) -> Result<Tensor> {
    let store = kernel.store();
    let tape = Tape::eval();
    let out = ldc(&Ctx::new(&tape, &store), &tape.constant(f.clone()))?;
    Ok(out.value().clone())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EcaConfig {
    pub gamma: f64,
    pub b: f64,
}

impl Default for EcaConfig {
    fn default() -> Self {
        Self { gamma: 2.0, b: 1.0 }
    }
}

/// `t = floor(|log2 C + b| / γ)`, rounded up to the next odd number.
pub fn eca_kernel_size(c: usize, cfg: EcaConfig) -> usize {
    let t = (((c.max(1) as f64).log2() + cfg.b).abs() / cfg.gamma).floor() as usize;
    if t % 2 == 1 {
        t
    } else {
        t + 1
    }
}

pub fn eca_params(b: &mut SpecBuilder, c: usize) {
    let k = eca_kernel_size(c, EcaConfig::default());
    b.add("weight", &[k], Init::TruncNormal(WEIGHT_STD));
}

/// `x ⊙ sigmoid(conv1d(GAP(x)))`, the conv running across channels.
pub fn eca(ctx: &Ctx, x: &Var) -> Result<Var> {
    let pooled = ctx.global_avg_pool(x)?;
    let s = ctx.channel_conv1d(&pooled, &ctx.p("weight")?)?;
    let s = ctx.sigmoid(&s)?;
    ctx.channel_scale(x, &s)
}

pub fn eca_forward(x: &Tensor, weights: &Tensor) -> Result<Tensor> {
    let store = ParamStore::new().with("weight", weights.clone());
    let tape = Tape::eval();
    let out = eca(&Ctx::new(&tape, &store), &tape.constant(x.clone()))?;
    Ok(out.value().clone())
}

/// `x·W + b` with `weight`/`bias` read from `scope`.
pub fn linear(ctx: &Ctx, scope: &str, x: &Var) -> Result<Var> {
    let s = ctx.scope(scope);
    ctx.linear(x, &s.p("weight")?, Some(&s.p("bias")?))
}

pub fn layer_norm(ctx: &Ctx, scope: &str, x: &Var) -> Result<Var> {
    let s = ctx.scope(scope);
    ctx.layer_norm(x, &s.p("weight")?, &s.p("bias")?)
}

pub fn depthwise(ctx: &Ctx, scope: &str, x: &Var) -> Result<Var> {
    let s = ctx.scope(scope);
    ctx.depthwise_conv2d(x, &s.p("weight")?, Some(&s.p("bias")?))
}

pub fn depthwise_params(b: &mut SpecBuilder, scope: &str, k: usize, c: usize) {
    b.scope(scope, |b| {
        b.add("weight", &[k, k, c], Init::TruncNormal(WEIGHT_STD));
        b.add("bias", &[c], Init::Zeros);
    });
}

/// Declares the selective scan parameters of [`ssm::es2d`] under `scope`.
pub fn es2d_params(b: &mut SpecBuilder, scope: &str, c: usize, state: usize) {
    b.scope(scope, |b| {
        b.add("a_log", &[c, state], Init::S4dLog);
        b.linear("delta", c, c);
        b.linear("b_proj", c, state);
        b.linear("c_proj", c, state);
        b.add("d", &[c], Init::Ones);
    });
}

pub fn essm_params(b: &mut SpecBuilder, c: usize, state: usize) {
    let inner = ESSM_EXPANSION * c;
    b.linear("linear_in", c, inner);
    depthwise_params(b, "dwconv", ESSM_DWCONV, inner);
    es2d_params(b, "ssm", inner, state);
    b.layer_norm("out_norm", inner);
    b.linear("gate", c, inner);
    b.linear("linear_out", inner, c);
}

/// Scan branch `LN(ES2D(SiLU(DwConv(Linear x))))` gated by `SiLU(Linear x)`,
/// projected back to the input width.
pub fn essm(ctx: &Ctx, x: &Var, layout: &ScanLayout) -> Result<Var> {
    let h = linear(ctx, "linear_in", x)?;
    let h = depthwise(ctx, "dwconv", &h)?;
    let h = ctx.silu(&h)?;
    let h = ssm::es2d(&ctx.scope("ssm"), &h, layout)?;
    let h = layer_norm(ctx, "out_norm", &h)?;
    let g = linear(ctx, "gate", x)?;
    let g = ctx.silu(&g)?;
    let y = ctx.mul(&h, &g)?;
    linear(ctx, "linear_out", &y)
}

pub fn dvss_params(b: &mut SpecBuilder, c: usize, state: usize) {
    b.layer_norm("norm1", c);
    b.scope("essm", |b| essm_params(b, c, state));
    b.layer_norm("norm2", c);
    b.scope("eca", |b| eca_params(b, c));
    b.scope("ldc", |b| ldc_params(b, c));
}

/// `Z = ESSM(LN(F)) + F`, output `ECA(LN(Z)) + LDC(F) + Z`.
pub fn dvss(ctx: &Ctx, f: &Var, layout: &ScanLayout) -> Result<Var> {
    let n1 = layer_norm(ctx, "norm1", f)?;
    let z = essm(&ctx.scope("essm"), &n1, layout)?;
    let z = ctx.add(&z, f)?;
    let n2 = layer_norm(ctx, "norm2", &z)?;
    let e = eca(&ctx.scope("eca"), &n2)?;
    let l = ldc(&ctx.scope("ldc"), f)?;
    let out = ctx.add(&e, &l)?;
    ctx.add(&out, &z)
}

/// Scan layout for a feature map, rejecting shapes that cannot be scanned.
pub fn layout_for(x: &Var) -> Result<ScanLayout> {
    let (h, w, _) = x.value().hwc()?;
    if h == 0 || w == 0 {
        return Err(Error::Empty("scan layout"));
    }
    Ok(ScanLayout::covering(h, w))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eca_kernel_sizes() {
        let cfg = EcaConfig::default();
        assert_eq!(eca_kernel_size(96, cfg), 3);
        assert_eq!(eca_kernel_size(2, cfg), 1);
        assert_eq!(eca_kernel_size(256, cfg), 5);
        assert_eq!(eca_kernel_size(1, cfg), 1);
    }

    #[test]
    fn ldc_center_example() {
        let kernel = LdcKernel {
            w: Tensor::full(&[3, 3, 1], 1.0),
            m: Tensor::full(&[3, 3, 1], 2.0),
            epsilon: 0.5,
        };
        let out = ldc_forward(&Tensor::full(&[3, 3, 1], 1.0), &kernel).unwrap();
        assert_eq!(out.get(&[1, 1, 0]), 13.5);
    }

    #[test]
    fn eca_zero_weights_halves() {
        let x = Tensor::from_fn(&[2, 3, 4], |i| i as f64 - 5.0);
        let out = eca_forward(&x, &Tensor::zeros(&[3])).unwrap();
        assert_eq!(out, x.map(|v| v * 0.5));
    }
}
