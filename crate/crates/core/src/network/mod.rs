//! The full fusion model: two untied encoder branches, per-level fusion,
//! an additive-skip decoder and a sigmoid reconstruction head.

mod state_io;

pub use state_io::{
    decode, encode, load_state, load_state_for, save_state, STATE_MAGIC, STATE_VERSION,
};

use std::collections::BTreeMap;
use std::fmt;

use crate::autodiff::{AuditEntry, Ctx, Tape, Var};
use crate::blocks::{self, dvss, dvss_params};
use crate::error::{Error, Result};
use crate::fusion::{dffm, dffm_params};
use crate::params::{initialize, ParamShapes, ParamSource, ParamSpec, ParamStore, SpecBuilder};
use crate::ssm::{ScanLayout, DEFAULT_STATE};
use crate::tensor::Tensor;

pub const BRANCHES: [&str; 2] = ["branchA", "branchB"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub base_dim: usize,
    pub depths: Vec<usize>,
    pub state: usize,
    pub patch: usize,
    pub levels: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            base_dim: 96,
            depths: vec![2, 2, 9, 2],
            state: DEFAULT_STATE,
            patch: 4,
            levels: 4,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Small configuration for toy training and end-to-end checks.
    pub fn micro() -> Self {
        Self {
            base_dim: 8,
            depths: vec![1, 1, 1, 1],
            state: 2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.depths.len() != self.levels {
            return Err(Error::Config(format!(
                "depths must list one entry per level ({} levels, got {})",
                self.levels,
                self.depths.len()
            )));
        }
        if self.base_dim == 0 || self.base_dim % 2 != 0 {
            return Err(Error::Config(format!(
                "base_dim must be even and positive, got {}",
                self.base_dim
            )));
        }
        if self.state == 0 {
            return Err(Error::Config("state size must be at least 1".into()));
        }
        if self.patch == 0 {
            return Err(Error::Config("patch size must be at least 1".into()));
        }
        Ok(())
    }

    /// Channel width per level, `C·2^n`.
    pub fn dims(&self) -> Vec<usize> {
        (0..self.levels).map(|n| self.base_dim << n).collect()
    }

    /// Required divisor of the input extents.
    pub fn extent_divisor(&self) -> usize {
        self.patch << (self.levels - 1)
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "base_dim={} depths={:?} state={} patch={} levels={} seed={}",
            self.base_dim, self.depths, self.state, self.patch, self.levels, self.seed
        )
    }
}

/// Every learnable tensor of the model, in declaration order.
pub fn param_specs(cfg: &ModelConfig) -> Result<Vec<ParamSpec>> {
    cfg.validate()?;
    let dims = cfg.dims();
    let (n, p) = (cfg.state, cfg.patch);
    let mut b = SpecBuilder::new();
    for branch in BRANCHES {
        b.scope("embed", |b| b.linear(branch, p * p, dims[0]));
    }
    for (lvl, &c) in dims.iter().enumerate() {
        b.scope(&format!("enc{}", lvl + 1), |b| {
            for branch in BRANCHES {
                b.scope(branch, |b| {
                    if lvl > 0 {
                        b.linear("merge", 4 * dims[lvl - 1], c);
                    }
                    for i in 0..cfg.depths[lvl] {
                        b.scope(&format!("dvss{i}"), |b| dvss_params(b, c, n));
                    }
                });
            }
        });
    }
    for (lvl, &c) in dims.iter().enumerate() {
        b.scope(&format!("dffm{}", lvl + 1), |b| dffm_params(b, c, n));
    }
    for (lvl, &c) in dims.iter().enumerate().rev() {
        b.scope(&format!("dec{}", lvl + 1), |b| {
            if lvl + 1 < cfg.levels {
                b.linear("expand", dims[lvl + 1], 2 * dims[lvl + 1]);
            }
            for i in 0..cfg.depths[lvl] {
                b.scope(&format!("dvss{i}"), |b| dvss_params(b, c, n));
            }
        });
    }
    b.scope("head", |b| {
        b.linear("expand", dims[0], p * p * dims[0]);
        b.linear("proj", dims[0], 1);
    });
    Ok(b.finish())
}

/// A configuration together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl Model {
    /// Seeded initialization.
    pub fn init(config: ModelConfig) -> Result<Self> {
        let params = initialize(&param_specs(&config)?, config.seed)?;
        Ok(Self { config, params })
    }

    /// Checks that the parameter names and shapes are exactly those of the
    /// configuration.
    pub fn verify(&self) -> Result<()> {
        let specs = param_specs(&self.config)?;
        let expected: BTreeMap<&str, &[usize]> = specs
            .iter()
            .map(|s| (s.name.as_str(), s.shape.as_slice()))
            .collect();
        let missing: Vec<String> = expected
            .keys()
            .filter(|n| !self.params.contains(n))
            .map(|n| n.to_string())
            .collect();
        let extra: Vec<String> = self
            .params
            .names()
            .filter(|n| !expected.contains_key(n))
            .map(str::to_string)
            .collect();
        if !missing.is_empty() || !extra.is_empty() {
            return Err(Error::NameSet { missing, extra });
        }
        for (name, t) in self.params.iter() {
            if t.shape() != expected[name] {
                return Err(Error::Config(format!(
                    "parameter {name} has shape {:?}, configuration expects {:?}",
                    t.shape(),
                    expected[name]
                )));
            }
            if !t.is_finite() {
                return Err(Error::NonFinite(name.to_string()));
            }
        }
        Ok(())
    }

    pub fn scalar_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Fused image for a pair of `[H, W]` images in `[0, 1]`.
    pub fn fuse(&self, i1: &Tensor, i2: &Tensor) -> Result<Tensor> {
        let tape = Tape::eval();
        let ctx = Ctx::new(&tape, &self.params);
        let out = forward(
            &ctx,
            &self.config,
            &tape.constant(i1.clone()),
            &tape.constant(i2.clone()),
        )?;
        Ok(out.value().clone())
    }
}

fn check_pair(cfg: &ModelConfig, i1: &Var, i2: &Var) -> Result<(usize, usize)> {
    if i1.shape() != i2.shape() {
        return Err(Error::shape(
            "forward_fuse",
            format!("{:?}", i1.shape()),
            format!("{:?}", i2.shape()),
        ));
    }
    let (h, w, c) = i1.value().hwc()?;
    if c != 1 {
        return Err(Error::ChannelMismatch {
            op: "forward_fuse",
            expected: 1,
            got: c,
        });
    }
    let div = cfg.extent_divisor();
    for extent in [h, w] {
        if extent == 0 || extent % div != 0 {
            return Err(Error::Indivisible {
                op: "forward_fuse",
                extent,
                divisor: div,
            });
        }
    }
    Ok((h, w))
}

fn dvss_stack(ctx: &Ctx, scope: &str, x: Var, depth: usize, layout: &ScanLayout) -> Result<Var> {
    let mut x = x;
    for i in 0..depth {
        let name = format!("{scope}.dvss{i}");
        x = dvss(&ctx.scope(&name), &x, layout)?;
        ctx.checkpoint(&name, &x)?;
    }
    Ok(x)
}

/// Fuses two single-channel `[H, W]` images into one `[H, W]` image in
/// `(0, 1)`. Every intermediate is checkpointed on the tape under its
/// parameter scope.
pub fn forward(ctx: &Ctx, cfg: &ModelConfig, i1: &Var, i2: &Var) -> Result<Var> {
    cfg.validate()?;
    let (h, w) = check_pair(cfg, i1, i2)?;
    let dims = cfg.dims();
    let p = cfg.patch;

    ctx.set_module("embed");
    let mut feats = Vec::with_capacity(2);
    for (branch, img) in BRANCHES.iter().zip([i1, i2]) {
        let x = ctx.reshape(img, &[h, w, 1])?;
        let x = ctx.space_to_depth(&x, p)?;
        let x = blocks::linear(&ctx.scope("embed"), branch, &x)?;
        ctx.checkpoint(&format!("embed.{branch}"), &x)?;
        feats.push(x);
    }

    let mut fused = Vec::with_capacity(cfg.levels);
    for lvl in 0..cfg.levels {
        let scope = format!("enc{}", lvl + 1);
        ctx.set_module(&scope);
        let (lh, lw) = ((h / p) >> lvl, (w / p) >> lvl);
        let layout = ScanLayout::covering(lh, lw);
        for (branch, f) in BRANCHES.iter().zip(feats.iter_mut()) {
            let bs = format!("{scope}.{branch}");
            let mut x = f.clone();
            if lvl > 0 {
                x = ctx.space_to_depth(&x, 2)?;
                x = blocks::linear(&ctx.scope(&bs), "merge", &x)?;
                ctx.checkpoint(&format!("{bs}.merge"), &x)?;
            }
            x = dvss_stack(ctx, &bs, x, cfg.depths[lvl], &layout)?;
            ctx.checkpoint(&bs, &x)?;
            *f = x;
        }
        let scope = format!("dffm{}", lvl + 1);
        ctx.set_module(&scope);
        let x = dffm(&ctx.scope(&scope), &feats[0], &feats[1])?;
        ctx.checkpoint(&scope, &x)?;
        fused.push(x);
    }
    drop(feats);

    let mut d: Option<Var> = None;
    for lvl in (0..cfg.levels).rev() {
        let scope = format!("dec{}", lvl + 1);
        ctx.set_module(&scope);
        let skip = fused.pop().expect("one fused map per level");
        let x = match d.take() {
            None => skip,
            Some(prev) => {
                debug_assert_eq!(prev.shape()[2], dims[lvl + 1]);
                let up = blocks::linear(&ctx.scope(&scope), "expand", &prev)?;
                let up = ctx.depth_to_space(&up, 2)?;
                ctx.add(&up, &skip)?
            }
        };
        let layout = ScanLayout::covering((h / p) >> lvl, (w / p) >> lvl);
        let x = dvss_stack(ctx, &scope, x, cfg.depths[lvl], &layout)?;
        ctx.checkpoint(&scope, &x)?;
        d = Some(x);
    }

    ctx.set_module("head");
    let d = d.expect("at least one level");
    let head = ctx.scope("head");
    let x = blocks::linear(&head, "expand", &d)?;
    let x = ctx.depth_to_space(&x, p)?;
    let x = blocks::linear(&head, "proj", &x)?;
    let x = ctx.sigmoid(&x)?;
    let out = ctx.reshape(&x, &[h, w])?;
    ctx.checkpoint("output", &out)?;
    Ok(out)
}

fn dry_run(cfg: &ModelConfig, h: usize, w: usize) -> Result<Tape> {
    let shapes = ParamShapes::from_specs(&param_specs(cfg)?);
    let tape = Tape::dry_run();
    {
        let ctx = Ctx::new(&tape, &shapes as &dyn ParamSource);
        let img = tape.constant(Tensor::zeros(&[h, w]));
        forward(&ctx, cfg, &img, &img)?;
    }
    Ok(tape)
}

/// Labelled intermediate shapes of a forward pass at `h x w`, obtained
/// without evaluating any values.
pub fn shape_audit(cfg: &ModelConfig, h: usize, w: usize) -> Result<Vec<AuditEntry>> {
    Ok(dry_run(cfg, h, w)?.audit())
}

/// Floating-point operation counts of one forward pass, per stage.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlopReport {
    pub per_module: BTreeMap<String, u64>,
}

impl FlopReport {
    pub fn total(&self) -> u64 {
        self.per_module.values().sum()
    }

    pub fn giga(&self) -> f64 {
        self.total() as f64 / 1e9
    }
}

impl fmt::Display for FlopReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (module, n) in &self.per_module {
            writeln!(f, "{module:<8} {:>10.4} G", *n as f64 / 1e9)?;
        }
        write!(f, "{:<8} {:>10.4} G", "total", self.giga())
    }
}

/// Counts `2 x multiply-accumulates` of convolutions and linear maps plus
/// `6·N` per token and channel for every selective scan.
pub fn count_flops(cfg: &ModelConfig, h: usize, w: usize) -> Result<FlopReport> {
    Ok(FlopReport {
        per_module: dry_run(cfg, h, w)?.flops(),
    })
}

/// Renders an audit as an aligned two-column table.
pub fn format_audit(entries: &[AuditEntry]) -> String {
    let width = entries.iter().map(|e| e.label.len()).max().unwrap_or(0);
    entries
        .iter()
        .map(|e| {
            let dims: Vec<String> = e.shape.iter().map(usize::to_string).collect();
            format!("{:<width$}  {}\n", e.label, dims.join("x"))
        })
        .collect()
}
