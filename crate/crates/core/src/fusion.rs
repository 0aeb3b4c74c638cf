//! Per-level feature fusion: difference-aware enhancement (DFEM), cross-modal
//! mixing and gating (CMFM) and the fused layer output, composed as DFFM.

use crate::autodiff::{Ctx, Var};
use crate::blocks::{
    self, depthwise, depthwise_params, eca, eca_params, es2d_params, layer_norm, ldc, ldc_params,
    linear,
};
use crate::error::Result;
use crate::params::SpecBuilder;
use crate::ssm::{self, ScanLayout};

/// Depthwise kernel extent inside the CMFM branches.
pub const CMFM_DWCONV: usize = 3;

pub fn dfem_params(b: &mut SpecBuilder, c: usize) {
    b.scope("ldc_a", |b| ldc_params(b, c));
    b.scope("ldc_b", |b| ldc_params(b, c));
}

/// `D1 = F1 + T1 + σ(GAP(T2 - T1)) ⊙ Ff`, `D2 = F2 + T2 + σ(GAP(T1 - T2)) ⊙ Ff`
/// with `Ti = LDC_i(Fi)` and `Ff = F1 + F2`.
pub fn dfem(ctx: &Ctx, f1: &Var, f2: &Var) -> Result<(Var, Var)> {
    let t1 = ldc(&ctx.scope("ldc_a"), f1)?;
    let t2 = ldc(&ctx.scope("ldc_b"), f2)?;
    let ff = ctx.add(f1, f2)?;
    let branch = |f: &Var, t: &Var, other: &Var| -> Result<Var> {
        let diff = ctx.sub(other, t)?;
        let w = ctx.sigmoid(&ctx.global_avg_pool(&diff)?)?;
        let enhanced = ctx.channel_scale(&ff, &w)?;
        ctx.add(&ctx.add(f, t)?, &enhanced)
    };
    Ok((branch(f1, &t1, &t2)?, branch(f2, &t2, &t1)?))
}

pub fn cmfm_params(b: &mut SpecBuilder, c: usize, state: usize) {
    for branch in ["branch1", "branch2"] {
        b.scope(branch, |b| {
            b.layer_norm("norm", c);
            b.linear("linear", c, c);
            depthwise_params(b, "dwconv", CMFM_DWCONV, c);
        });
    }
    es2d_params(b, "ssm", c, state);
    b.layer_norm("norm", c);
    b.linear("proj1", c, c);
    b.linear("proj2", c, c);
    b.linear("mix", c, c);
    b.scope("eca", |b| eca_params(b, c));
}

/// `C_i = DwConv(Linear(LN(D_i)))`, `H_mix = C1 ⊙ C2 + C1 + C2`.
pub fn cmfm_mix(ctx: &Ctx, d1: &Var, d2: &Var) -> Result<Var> {
    let branch = |scope: &str, d: &Var| -> Result<Var> {
        let s = ctx.scope(scope);
        let h = layer_norm(&s, "norm", d)?;
        let h = linear(&s, "linear", &h)?;
        depthwise(&s, "dwconv", &h)
    };
    let c1 = branch("branch1", d1)?;
    let c2 = branch("branch2", d2)?;
    let prod = ctx.mul(&c1, &c2)?;
    ctx.add(&ctx.add(&prod, &c1)?, &c2)
}

/// `S = LN(ES2D(H_mix))`, `H_i = S ⊙ Linear_i(D_i)`,
/// `H_f = ECA(Linear(H1 + H2)) + (H1 + H2)`.
pub fn cmfm_gate_fuse(
    ctx: &Ctx,
    h_mix: &Var,
    d1: &Var,
    d2: &Var,
    layout: &ScanLayout,
) -> Result<Var> {
    let s = ssm::es2d(&ctx.scope("ssm"), h_mix, layout)?;
    let s = layer_norm(ctx, "norm", &s)?;
    let h1 = ctx.mul(&s, &linear(ctx, "proj1", d1)?)?;
    let h2 = ctx.mul(&s, &linear(ctx, "proj2", d2)?)?;
    let sum = ctx.add(&h1, &h2)?;
    let attended = eca(&ctx.scope("eca"), &linear(ctx, "mix", &sum)?)?;
    ctx.add(&attended, &sum)
}

/// `X = H_f + F1 + F2`.
pub fn layer_fuse(ctx: &Ctx, h_f: &Var, f1: &Var, f2: &Var) -> Result<Var> {
    ctx.add(&ctx.add(h_f, f1)?, f2)
}

pub fn dffm_params(b: &mut SpecBuilder, c: usize, state: usize) {
    b.scope("dfem", |b| dfem_params(b, c));
    b.scope("cmfm", |b| cmfm_params(b, c, state));
}

/// Full fusion of one level's modality features.
pub fn dffm(ctx: &Ctx, f1: &Var, f2: &Var) -> Result<Var> {
    let layout = blocks::layout_for(f1)?;
    let (d1, d2) = dfem(&ctx.scope("dfem"), f1, f2)?;
    let cm = ctx.scope("cmfm");
    let h_mix = cmfm_mix(&cm, &d1, &d2)?;
    let h_f = cmfm_gate_fuse(&cm, &h_mix, &d1, &d2, &layout)?;
    layer_fuse(ctx, &h_f, f1, f2)
}
