//! Reverse-mode versus central-difference fixtures for every block, the
//! three loss terms and the micro model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{grad_check, Ctx, GradCheckOptions, GradCheckReport, Var};
use crate::blocks::{dvss, dvss_params, eca, eca_params, essm, essm_params, ldc, ldc_params};
use crate::error::Result;
use crate::fusion::{cmfm_gate_fuse, cmfm_mix, cmfm_params, dfem, dfem_params};
use crate::losses::{intensity_term, ssim_loss_term, texture_term, total_term, LossWeights};
use crate::network::{forward, param_specs, ModelConfig};
use crate::params::{ParamSpec, ParamStore, SpecBuilder};
use crate::ssm::ScanLayout;
use crate::synthetic::scene_pair;
use crate::tensor::Tensor;

pub const BLOCK_TOL: f64 = 1e-5;
pub const MODEL_TOL: f64 = 1e-4;
pub const FD_STEP: f64 = 1e-6;

const C: usize = 4;
const N: usize = 2;
const SIDE: usize = 6;

/// Parameters drawn at a scale where every gradient is far from zero.
fn randomized(specs: &[ParamSpec], seed: u64, std: f64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, std).expect("positive std");
    let mut store = ParamStore::new();
    for s in specs {
        let n = s.shape.iter().product();
        let state = *s.shape.last().unwrap_or(&1);
        let data: Vec<f64> = (0..n)
            .map(|i| {
                if s.name.ends_with("a_log") {
                    ((i % state) as f64 + 1.0).ln() + 0.1 * normal.sample(&mut rng)
                } else {
                    normal.sample(&mut rng)
                }
            })
            .collect();
        store.insert(
            s.name.clone(),
            Tensor::new(&s.shape, data).expect("spec shape"),
        );
    }
    store
}

fn gaussian(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    Tensor::from_fn(shape, |_| normal.sample(rng))
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// `Σ out ⊙ R` for a fixed random `R`, so every output element matters.
fn probe(ctx: &Ctx, out: &Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let r = ctx.constant(uniform(out.shape(), -1.0, 1.0, &mut rng));
    ctx.sum(&ctx.mul(out, &r)?)
}

/// Parameters of `declare` plus the named `[SIDE, SIDE, c]` inputs drawn
/// from `N(0, 1)`.
fn fixture(
    declare: impl FnOnce(&mut SpecBuilder),
    inputs: &[&str],
    c: usize,
    seed: u64,
) -> ParamStore {
    let mut b = SpecBuilder::new();
    declare(&mut b);
    let mut store = randomized(&b.finish(), seed, 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    for name in inputs {
        store.insert(*name, gaussian(&[SIDE, SIDE, c], &mut rng));
    }
    store
}

fn check(
    store: &ParamStore,
    f: impl Fn(&Ctx) -> Result<Var>,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    grad_check(store, f, opts)
}

/// Block name and its gradient report, at `opts.tol`.
pub fn block_checks(opts: &GradCheckOptions) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let layout = ScanLayout::covering(SIDE, SIDE);
    let seed = opts.seed;
    let mut out = Vec::new();

    let s = fixture(|b| ldc_params(b, C), &["input.x"], C, seed);
    out.push((
        "ldc",
        check(
            &s,
            |ctx| probe(ctx, &ldc(ctx, &ctx.p("input.x")?)?, seed),
            opts,
        )?,
    ));

    let eca_c = 8;
    let s = fixture(|b| eca_params(b, eca_c), &["input.x"], eca_c, seed);
    out.push((
        "eca",
        check(
            &s,
            |ctx| probe(ctx, &eca(ctx, &ctx.p("input.x")?)?, seed),
            opts,
        )?,
    ));

    let s = fixture(|b| essm_params(b, C, N), &["input.x"], C, seed);
    out.push((
        "essm",
        check(
            &s,
            |ctx| probe(ctx, &essm(ctx, &ctx.p("input.x")?, &layout)?, seed),
            opts,
        )?,
    ));

    let s = fixture(|b| dvss_params(b, C, N), &["input.x"], C, seed);
    out.push((
        "dvss",
        check(
            &s,
            |ctx| probe(ctx, &dvss(ctx, &ctx.p("input.x")?, &layout)?, seed),
            opts,
        )?,
    ));

    let s = fixture(|b| dfem_params(b, C), &["input.f1", "input.f2"], C, seed);
    let f = |ctx: &Ctx| -> Result<Var> {
        let (d1, d2) = dfem(ctx, &ctx.p("input.f1")?, &ctx.p("input.f2")?)?;
        let a = probe(ctx, &d1, seed)?;
        ctx.add(&a, &probe(ctx, &d2, seed + 7)?)
    };
    out.push(("dfem", check(&s, f, opts)?));

    let s = fixture(|b| cmfm_params(b, C, N), &["input.d1", "input.d2"], C, seed);
    let f = |ctx: &Ctx| -> Result<Var> {
        let (d1, d2) = (ctx.p("input.d1")?, ctx.p("input.d2")?);
        let mix = cmfm_mix(ctx, &d1, &d2)?;
        probe(ctx, &cmfm_gate_fuse(ctx, &mix, &d1, &d2, &layout)?, seed)
    };
    out.push(("cmfm", check(&s, f, opts)?));

    let mut rng = ChaCha8Rng::seed_from_u64(seed + 2);
    let side = 16;
    let i1 = gaussian(&[side, side], &mut rng);
    let i2 = gaussian(&[side, side], &mut rng);
    let s = ParamStore::new().with("input.fused", gaussian(&[side, side], &mut rng));
    type Term = fn(&crate::autodiff::Tape, &Var, &Var, &Var) -> Result<Var>;
    let terms: [(&'static str, Term); 3] = [
        ("loss_int", intensity_term),
        ("loss_text", texture_term),
        ("loss_ssim", ssim_loss_term),
    ];
    for (name, term) in terms {
        let f = |ctx: &Ctx| -> Result<Var> {
            let (a, b) = (ctx.constant(i1.clone()), ctx.constant(i2.clone()));
            term(ctx, &a, &b, &ctx.p("input.fused")?)
        };
        out.push((name, check(&s, f, opts)?));
    }
    Ok(out)
}

/// Micro model at 32x32 on the total loss, sampling `max_coords` entries per
/// parameter tensor.
pub fn model_check(opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let cfg = ModelConfig::micro();
    let store = randomized(&param_specs(&cfg)?, opts.seed, 0.2);
    let (i1, i2) = scene_pair(32, 32, opts.seed);
    let f = |ctx: &Ctx| -> Result<Var> {
        let (a, b) = (ctx.constant(i1.clone()), ctx.constant(i2.clone()));
        let fused = forward(ctx, &cfg, &a, &b)?;
        Ok(total_term(ctx, &a, &b, &fused, LossWeights::DEFAULT)?.total)
    };
    grad_check(&store, f, opts)
}

pub fn block_options() -> GradCheckOptions {
    GradCheckOptions {
        h: FD_STEP,
        tol: BLOCK_TOL,
        ..GradCheckOptions::default()
    }
}

pub fn model_options() -> GradCheckOptions {
    GradCheckOptions {
        h: FD_STEP,
        tol: MODEL_TOL,
        max_coords: Some(2),
        ..GradCheckOptions::default()
    }
}
