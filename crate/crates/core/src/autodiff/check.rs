//! Gradient evaluation entry points and finite-difference verification.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Ctx, OpKind, Tape, Var};
use crate::error::Result;
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Evaluates the scalar `f` without recording.
pub fn eval<F>(params: &ParamStore, f: F) -> Result<f64>
where
    F: Fn(&Ctx) -> Result<Var>,
{
    let tape = Tape::eval();
    let out = f(&Ctx::new(&tape, params))?;
    scalar(&out)
}

fn scalar(v: &Var) -> Result<f64> {
    if v.value().len() != 1 {
        return Err(crate::Error::NonScalarOutput(v.shape().to_vec()));
    }
    Ok(v.item())
}

fn grad_on<F>(tape: &Tape, params: &ParamStore, f: &F) -> Result<(f64, BTreeMap<String, Tensor>)>
where
    F: Fn(&Ctx) -> Result<Var>,
{
    let out = f(&Ctx::new(tape, params))?;
    let loss = scalar(&out)?;
    let mut grads = if out.is_tracked() {
        tape.gradients(&out)?
    } else {
        BTreeMap::new()
    };
    for (name, t) in params.iter() {
        grads
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(t.shape()));
    }
    Ok((loss, grads))
}

/// Value of `f` and its gradient for every tensor in `params`
/// (zeros for tensors `f` does not use).
pub fn grad<F>(params: &ParamStore, f: F) -> Result<(f64, BTreeMap<String, Tensor>)>
where
    F: Fn(&Ctx) -> Result<Var>,
{
    grad_on(&Tape::recording(), params, &f)
}

/// Value and kink signature of `f` with one coordinate shifted by `dh`.
fn shifted<F>(params: &ParamStore, f: &F, name: &str, i: usize, dh: f64) -> Result<(f64, u64)>
where
    F: Fn(&Ctx) -> Result<Var>,
{
    let mut p = params.clone();
    p.get_mut(name).expect("name from store").data_mut()[i] += dh;
    let tape = Tape::eval();
    let out = f(&Ctx::new(&tape, &p))?;
    Ok((scalar(&out)?, tape.kink_signature()))
}

/// Central difference and whether both probes stayed on the smooth piece
/// with signature `base`.
fn perturbed<F>(
    params: &ParamStore,
    f: &F,
    name: &str,
    i: usize,
    h: f64,
    base: u64,
) -> Result<(f64, bool)>
where
    F: Fn(&Ctx) -> Result<Var>,
{
    let (fp, sp) = shifted(params, f, name, i, h)?;
    let (fm, sm) = shifted(params, f, name, i, -h)?;
    Ok(((fp - fm) / (2.0 * h), sp == base && sm == base))
}

/// Central-difference gradient of `f` for every coordinate of `params`.
pub fn finite_diff_grad<F>(params: &ParamStore, f: F, h: f64) -> Result<BTreeMap<String, Tensor>>
where
    F: Fn(&Ctx) -> Result<Var>,
{
    let mut out = BTreeMap::new();
    for (name, t) in params.iter() {
        let mut g = Tensor::zeros(t.shape());
        for i in 0..t.len() {
            g.data_mut()[i] = perturbed(params, &f, name, i, h, 0)?.0;
        }
        out.insert(name.to_string(), g);
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub h: f64,
    /// Largest accepted relative error.
    pub tol: f64,
    /// Check at most this many randomly chosen coordinates per tensor.
    pub max_coords: Option<usize>,
    pub seed: u64,
    /// Corrupt the backward rule of one primitive (negative control).
    pub fault: Option<OpKind>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-6,
            tol: 1e-6,
            max_coords: None,
            seed: 0,
            fault: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BlockCheck {
    pub name: String,
    /// Coordinates compared.
    pub coords: usize,
    /// Coordinates skipped because a probe crossed an `abs`/`max` kink.
    pub excluded: usize,
    pub max_rel_err: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockCheck>,
    pub tol: f64,
    /// Distance of the evaluation point from the nearest kink.
    pub kink_margin: f64,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.max_rel_err)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.max_rel_err <= self.tol)
    }

    pub fn excluded(&self) -> usize {
        self.blocks.iter().map(|b| b.excluded).sum()
    }

    pub fn coords(&self) -> usize {
        self.blocks.iter().map(|b| b.coords).sum()
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.blocks {
            let mark = if b.max_rel_err <= self.tol {
                "ok"
            } else {
                "FAIL"
            };
            writeln!(
                f,
                "{:<4} {:<48} coords={:<6} excluded={:<4} max_rel_err={:.3e}",
                mark, b.name, b.coords, b.excluded, b.max_rel_err
            )?;
        }
        write!(
            f,
            "max_rel_err={:.3e} tol={:.1e} kink_margin={:.3e}",
            self.max_rel_err(),
            self.tol,
            self.kink_margin
        )
    }
}

/// `|a - b| / max(1, |a|, |b|)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

/// Compares reverse-mode gradients of `f` with central differences.
pub fn grad_check<F>(params: &ParamStore, f: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&Ctx) -> Result<Var>,
{
    let mut tape = Tape::recording();
    if let Some(kind) = opts.fault {
        tape = tape.with_fault(kind);
    }
    let (_, analytic) = grad_on(&tape, params, &f)?;
    let base = tape.kink_signature();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut blocks = Vec::new();
    for (name, t) in params.iter() {
        let coords: Vec<usize> = match opts.max_coords {
            Some(m) if m < t.len() => {
                let mut c = sample(&mut rng, t.len(), m).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..t.len()).collect(),
        };
        let ga = &analytic[name];
        let (mut worst, mut excluded) = (0.0f64, 0);
        for &i in &coords {
            let (fd, smooth) = perturbed(params, &f, name, i, opts.h, base)?;
            if smooth {
                worst = worst.max(rel_err(ga.data()[i], fd));
            } else {
                excluded += 1;
            }
        }
        let name = name.to_string();
        blocks.push(BlockCheck {
            name,
            coords: coords.len() - excluded,
            excluded,
            max_rel_err: worst,
        });
    }
    Ok(GradCheckReport {
        blocks,
        tol: opts.tol,
        kink_margin: tape.kink_margin(),
    })
}
