//! Tape-based reverse-mode differentiation over the [`numerics`](crate::numerics)
//! operation set.
//!
//! A [`Tape`] records every primitive applied to tracked [`Var`]s. Values are
//! shared (`Arc`) between the caller and the tape, so untracked evaluation
//! frees intermediates as soon as the caller drops them.
//!
//! Tapes run in one of three modes:
//! - `record`: values are computed and the graph is kept for [`Tape::backward`];
//! - `eval`: values are computed, nothing is kept;
//! - `dry_run`: only shapes and operation counts are produced; every value is
//!   a zero tensor.

mod adam;
mod backward;
mod check;

pub use adam::{AdamConfig, AdamState};
pub use check::{
    eval, finite_diff_grad, grad, grad_check, rel_err, BlockCheck, GradCheckOptions,
    GradCheckReport,
};

use std::cell::{Cell, RefCell};
use std::collections::BTreeMap;
use std::ops::Deref;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::conv::{self, ConvGeom};
use crate::numerics::{dense, patch, Activation, Padding, SobelAxis, LAYER_NORM_EPS};
use crate::params::ParamSource;
use crate::ssm::kernel::{self as scan, ScanDims, ScanInputs};
use crate::tensor::Tensor;

/// A value produced on a tape; `node` is set only when the tape tracks it.
#[derive(Clone, Debug)]
pub struct Var {
    node: Option<usize>,
    value: Arc<Tensor>,
}

impl Var {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    /// Scalar value of a single-element variable.
    pub fn item(&self) -> f64 {
        self.value.item()
    }
}

/// Primitive identity, used for fault injection and reporting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Scale,
    Offset,
    Exp,
    Abs,
    Max,
    Sigmoid,
    Silu,
    Softplus,
    Sum,
    Mean,
    Reshape,
    Conv2d,
    DepthwiseConv2d,
    Linear,
    LayerNorm,
    GlobalAvgPool,
    ChannelScale,
    ChannelConv1d,
    LdcMask,
    Sobel,
    SpaceToDepth,
    DepthToSpace,
    GatherRows,
    SelectiveScan,
}

impl OpKind {
    pub const ALL: [OpKind; 29] = [
        OpKind::Leaf,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Div,
        OpKind::Scale,
        OpKind::Offset,
        OpKind::Exp,
        OpKind::Abs,
        OpKind::Max,
        OpKind::Sigmoid,
        OpKind::Silu,
        OpKind::Softplus,
        OpKind::Sum,
        OpKind::Mean,
        OpKind::Reshape,
        OpKind::Conv2d,
        OpKind::DepthwiseConv2d,
        OpKind::Linear,
        OpKind::LayerNorm,
        OpKind::GlobalAvgPool,
        OpKind::ChannelScale,
        OpKind::ChannelConv1d,
        OpKind::LdcMask,
        OpKind::Sobel,
        OpKind::SpaceToDepth,
        OpKind::DepthToSpace,
        OpKind::GatherRows,
        OpKind::SelectiveScan,
    ];

    /// Case-insensitive lookup by variant name, e.g. `linear` or `selectivescan`.
    pub fn parse(name: &str) -> Option<OpKind> {
        let want = name.replace(['_', '-'], "").to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|k| format!("{k:?}").to_ascii_lowercase() == want)
    }
}

pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Exp(Var),
    Abs(Var),
    Max(Var, Var),
    Act(Var, Activation),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Depthwise {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        shift: Var,
        xhat: Vec<f64>,
        inv: Vec<f64>,
    },
    Gap(Var),
    ChannelScale(Var, Var),
    ChannelConv1d(Var, Var),
    LdcMask {
        eps: Var,
        m: Var,
    },
    Sobel(Var, SobelAxis),
    SpaceToDepth(Var, usize),
    DepthToSpace(Var, usize),
    Gather(Var, Arc<Vec<usize>>),
    Scan(Box<ScanOp>),
}

pub(crate) struct ScanOp {
    pub x: Var,
    pub delta: Var,
    pub a: Var,
    pub b: Var,
    pub c: Var,
    pub d: Var,
    pub dims: ScanDims,
    pub starts: Arc<Vec<usize>>,
}

impl Op {
    pub(crate) fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Div(..) => OpKind::Div,
            Op::Scale(..) => OpKind::Scale,
            Op::Offset(..) => OpKind::Offset,
            Op::Exp(..) => OpKind::Exp,
            Op::Abs(..) => OpKind::Abs,
            Op::Max(..) => OpKind::Max,
            Op::Act(_, Activation::Sigmoid) => OpKind::Sigmoid,
            Op::Act(_, Activation::Silu) => OpKind::Silu,
            Op::Act(_, Activation::Softplus) => OpKind::Softplus,
            Op::Sum(..) => OpKind::Sum,
            Op::Mean(..) => OpKind::Mean,
            Op::Reshape(..) => OpKind::Reshape,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::Depthwise { .. } => OpKind::DepthwiseConv2d,
            Op::Linear { .. } => OpKind::Linear,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::Gap(..) => OpKind::GlobalAvgPool,
            Op::ChannelScale(..) => OpKind::ChannelScale,
            Op::ChannelConv1d(..) => OpKind::ChannelConv1d,
            Op::LdcMask { .. } => OpKind::LdcMask,
            Op::Sobel(..) => OpKind::Sobel,
            Op::SpaceToDepth(..) => OpKind::SpaceToDepth,
            Op::DepthToSpace(..) => OpKind::DepthToSpace,
            Op::Gather(..) => OpKind::GatherRows,
            Op::Scan(..) => OpKind::SelectiveScan,
        }
    }

    fn any_tracked(&self) -> bool {
        let t = |v: &Var| v.is_tracked();
        let ot = |v: &Option<Var>| v.as_ref().is_some_and(Var::is_tracked);
        match self {
            Op::Leaf => true,
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::Max(a, b) => {
                t(a) || t(b)
            }
            Op::ChannelScale(a, b) | Op::ChannelConv1d(a, b) => t(a) || t(b),
            Op::Scale(x, _)
            | Op::Offset(x)
            | Op::Exp(x)
            | Op::Abs(x)
            | Op::Act(x, _)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::Reshape(x)
            | Op::Gap(x)
            | Op::Sobel(x, _)
            | Op::SpaceToDepth(x, _)
            | Op::DepthToSpace(x, _)
            | Op::Gather(x, _) => t(x),
            Op::Conv2d { x, w, b, .. } | Op::Depthwise { x, w, b, .. } | Op::Linear { x, w, b } => {
                t(x) || t(w) || ot(b)
            }
            Op::LayerNorm { x, gain, shift, .. } => t(x) || t(gain) || t(shift),
            Op::LdcMask { eps, m } => t(eps) || t(m),
            Op::Scan(s) => [&s.x, &s.delta, &s.a, &s.b, &s.c, &s.d].into_iter().any(t),
        }
    }
}

pub(crate) struct Node {
    pub op: Op,
    pub len: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Mode {
    Record,
    Eval,
    Dry,
}

/// One labelled shape checkpoint emitted during a forward pass.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuditEntry {
    pub label: String,
    pub shape: Vec<usize>,
}

pub struct Tape {
    mode: Mode,
    nodes: RefCell<Vec<Node>>,
    leaves: RefCell<BTreeMap<String, Var>>,
    fault: Option<OpKind>,
    kink_margin: Cell<f64>,
    kink_sig: Cell<u64>,
    module: RefCell<String>,
    flops: RefCell<BTreeMap<String, u64>>,
    audit: RefCell<Vec<AuditEntry>>,
}

impl Tape {
    fn with_mode(mode: Mode) -> Self {
        Self {
            mode,
            nodes: RefCell::new(Vec::new()),
            leaves: RefCell::new(BTreeMap::new()),
            fault: None,
            kink_margin: Cell::new(f64::INFINITY),
            kink_sig: Cell::new(0xcbf2_9ce4_8422_2325),
            module: RefCell::new(String::new()),
            flops: RefCell::new(BTreeMap::new()),
            audit: RefCell::new(Vec::new()),
        }
    }

    /// Tape that keeps the graph for a later backward pass.
    pub fn recording() -> Self {
        Self::with_mode(Mode::Record)
    }

    /// Tape that only evaluates.
    pub fn eval() -> Self {
        Self::with_mode(Mode::Eval)
    }

    /// Tape that propagates shapes and counts operations without computing.
    pub fn dry_run() -> Self {
        Self::with_mode(Mode::Dry)
    }

    /// Scales every gradient leaving primitives of `kind` by 1.5.
    /// Test hook for negative controls of gradient checks.
    pub fn with_fault(mut self, kind: OpKind) -> Self {
        self.fault = Some(kind);
        self
    }

    pub fn is_dry(&self) -> bool {
        self.mode == Mode::Dry
    }

    pub fn is_recording(&self) -> bool {
        self.mode == Mode::Record
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Smallest distance of a recorded operand to a non-differentiable point
    /// (`abs` at 0, `max` ties) seen so far.
    pub fn kink_margin(&self) -> f64 {
        self.kink_margin.get()
    }

    /// Names of the parameters requested so far.
    pub fn param_names(&self) -> Vec<String> {
        self.leaves.borrow().keys().cloned().collect()
    }

    /// Attributes subsequent operation counts to `module`.
    pub fn set_module(&self, module: &str) {
        *self.module.borrow_mut() = module.to_string();
    }

    /// Floating-point operation counts per module.
    pub fn flops(&self) -> BTreeMap<String, u64> {
        self.flops.borrow().clone()
    }

    pub fn audit(&self) -> Vec<AuditEntry> {
        self.audit.borrow().clone()
    }

    /// Records the shape of `v` under `label`, failing if `v` is not finite.
    pub fn checkpoint(&self, label: &str, v: &Var) -> Result<()> {
        self.audit.borrow_mut().push(AuditEntry {
            label: label.to_string(),
            shape: v.shape().to_vec(),
        });
        if !self.is_dry() && !v.value.is_finite() {
            return Err(Error::NonFinite(label.to_string()));
        }
        Ok(())
    }

    fn count(&self, flops: u64) {
        let module = self.module.borrow().clone();
        *self.flops.borrow_mut().entry(module).or_insert(0) += flops;
    }

    /// Hash of the branch taken at every `abs` and `max` evaluated so far.
    /// Two evaluations with equal signatures lie on the same smooth piece.
    pub fn kink_signature(&self) -> u64 {
        self.kink_sig.get()
    }

    fn note_branches(&self, bits: impl Iterator<Item = bool>) {
        if self.is_dry() {
            return;
        }
        let mut h = self.kink_sig.get();
        for b in bits {
            h = (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3);
        }
        self.kink_sig.set(h);
    }

    fn note_kink(&self, distance: f64) {
        if !self.is_dry() && distance < self.kink_margin.get() {
            self.kink_margin.set(distance);
        }
    }

    fn push(&self, op: Op, value: Tensor) -> Var {
        if self.mode != Mode::Record || !op.any_tracked() {
            return Var {
                node: None,
                value: Arc::new(value),
            };
        }
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            op,
            len: value.len(),
        });
        Var {
            node: Some(id),
            value: Arc::new(value),
        }
    }

    /// Compute `f` unless this is a dry run, in which case zeros of `shape`.
    fn compute(&self, shape: &[usize], f: impl FnOnce() -> Vec<f64>) -> Result<Tensor> {
        if self.is_dry() {
            Ok(Tensor::zeros(shape))
        } else {
            Tensor::new(shape, f())
        }
    }

    /// Untracked value.
    pub fn constant(&self, value: Tensor) -> Var {
        Var {
            node: None,
            value: Arc::new(value),
        }
    }

    /// Fetches a named parameter; repeated requests return the same variable.
    pub fn param(&self, source: &dyn ParamSource, name: &str) -> Result<Var> {
        if let Some(v) = self.leaves.borrow().get(name) {
            return Ok(v.clone());
        }
        let value = source
            .fetch(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))?;
        let var = if self.mode == Mode::Record {
            let mut nodes = self.nodes.borrow_mut();
            let id = nodes.len();
            nodes.push(Node {
                op: Op::Leaf,
                len: value.len(),
            });
            Var {
                node: Some(id),
                value,
            }
        } else {
            Var { node: None, value }
        };
        self.leaves
            .borrow_mut()
            .insert(name.to_string(), var.clone());
        Ok(var)
    }

    fn same_shape(op: &'static str, a: &Var, b: &Var) -> Result<()> {
        if a.shape() != b.shape() {
            return Err(Error::shape(
                op,
                format!("{:?}", a.shape()),
                format!("{:?}", b.shape()),
            ));
        }
        Ok(())
    }

    fn binary(
        &self,
        op: &'static str,
        a: &Var,
        b: &Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        Self::same_shape(op, a, b)?;
        self.compute(a.shape(), || {
            a.value
                .data()
                .iter()
                .zip(b.value.data())
                .map(|(&x, &y)| f(x, y))
                .collect()
        })
    }

    fn unary(&self, x: &Var, f: impl Fn(f64) -> f64) -> Result<Tensor> {
        self.compute(x.shape(), || x.value.data().iter().map(|&v| f(v)).collect())
    }

    pub fn add(&self, a: &Var, b: &Var) -> Result<Var> {
        let v = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(Op::Add(a.clone(), b.clone()), v))
    }

    pub fn sub(&self, a: &Var, b: &Var) -> Result<Var> {
        let v = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(Op::Sub(a.clone(), b.clone()), v))
    }

    pub fn mul(&self, a: &Var, b: &Var) -> Result<Var> {
        let v = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(Op::Mul(a.clone(), b.clone()), v))
    }

    pub fn div(&self, a: &Var, b: &Var) -> Result<Var> {
        let v = self.binary("div", a, b, |x, y| x / y)?;
        Ok(self.push(Op::Div(a.clone(), b.clone()), v))
    }

    /// Elementwise maximum; ties select `a`.
    pub fn max(&self, a: &Var, b: &Var) -> Result<Var> {
        let v = self.binary("max", a, b, |x, y| if x >= y { x } else { y })?;
        self.note_branches(
            a.value
                .data()
                .iter()
                .zip(b.value.data())
                .map(|(x, y)| x >= y),
        );
        if a.is_tracked() || b.is_tracked() {
            let gap = a
                .value
                .data()
                .iter()
                .zip(b.value.data())
                .map(|(x, y)| (x - y).abs())
                .fold(f64::INFINITY, f64::min);
            self.note_kink(gap);
        }
        Ok(self.push(Op::Max(a.clone(), b.clone()), v))
    }

    pub fn scale(&self, x: &Var, s: f64) -> Result<Var> {
        let v = self.unary(x, |a| a * s)?;
        Ok(self.push(Op::Scale(x.clone(), s), v))
    }

    pub fn offset(&self, x: &Var, s: f64) -> Result<Var> {
        let v = self.unary(x, |a| a + s)?;
        Ok(self.push(Op::Offset(x.clone()), v))
    }

    pub fn exp(&self, x: &Var) -> Result<Var> {
        let v = self.unary(x, f64::exp)?;
        Ok(self.push(Op::Exp(x.clone()), v))
    }

    /// Absolute value; the subgradient at 0 is +1.
    pub fn abs(&self, x: &Var) -> Result<Var> {
        let v = self.unary(x, f64::abs)?;
        self.note_branches(x.value.data().iter().map(|&v| v >= 0.0));
        if x.is_tracked() {
            self.note_kink(
                x.value
                    .data()
                    .iter()
                    .map(|v| v.abs())
                    .fold(f64::INFINITY, f64::min),
            );
        }
        Ok(self.push(Op::Abs(x.clone()), v))
    }

    pub fn activate(&self, x: &Var, kind: Activation) -> Result<Var> {
        let v = self.unary(x, |a| kind.apply(a))?;
        Ok(self.push(Op::Act(x.clone(), kind), v))
    }

    pub fn sigmoid(&self, x: &Var) -> Result<Var> {
        self.activate(x, Activation::Sigmoid)
    }

    pub fn silu(&self, x: &Var) -> Result<Var> {
        self.activate(x, Activation::Silu)
    }

    pub fn softplus(&self, x: &Var) -> Result<Var> {
        self.activate(x, Activation::Softplus)
    }

    pub fn sum(&self, x: &Var) -> Result<Var> {
        let v = self.compute(&[], || vec![x.value.sum()])?;
        Ok(self.push(Op::Sum(x.clone()), v))
    }

    pub fn mean(&self, x: &Var) -> Result<Var> {
        if x.value.is_empty() {
            return Err(Error::Empty("mean"));
        }
        let v = self.compute(&[], || vec![x.value.mean()])?;
        Ok(self.push(Op::Mean(x.clone()), v))
    }

    pub fn reshape(&self, x: &Var, shape: &[usize]) -> Result<Var> {
        let v = if self.is_dry() {
            if shape.iter().product::<usize>() != x.value.len() {
                return Err(Error::shape(
                    "reshape",
                    x.value.len(),
                    shape.iter().product::<usize>(),
                ));
            }
            Tensor::zeros(shape)
        } else {
            x.value.reshape(shape)?
        };
        Ok(self.push(Op::Reshape(x.clone()), v))
    }

    pub fn conv2d(&self, x: &Var, w: &Var, b: Option<&Var>, padding: Padding) -> Result<Var> {
        let (h, wd, c) = x.value.hwc()?;
        let [kh, kw, cin, cout] = *w.shape() else {
            return Err(Error::shape(
                "conv2d",
                "[kh, kw, cin, cout]",
                format!("{:?}", w.shape()),
            ));
        };
        if cin != c {
            return Err(Error::ChannelMismatch {
                op: "conv2d",
                expected: cin,
                got: c,
            });
        }
        if let Some(b) = b {
            if b.shape() != [cout] {
                return Err(Error::shape(
                    "conv2d bias",
                    format!("[{cout}]"),
                    format!("{:?}", b.shape()),
                ));
            }
        }
        let geom = ConvGeom::new((h, wd, c), (kh, kw, cout), padding)?;
        self.count(2 * geom.macs());
        let v = self.compute(&[geom.oh, geom.ow, cout], || {
            conv::conv2d_forward(
                x.value.data(),
                w.value.data(),
                b.map(|b| b.value.data()),
                &geom,
            )
        })?;
        Ok(self.push(
            Op::Conv2d {
                x: x.clone(),
                w: w.clone(),
                b: b.cloned(),
                geom,
            },
            v,
        ))
    }

    /// Same-padded depthwise convolution, weights `[k, k, C]`.
    pub fn depthwise_conv2d(&self, x: &Var, w: &Var, b: Option<&Var>) -> Result<Var> {
        let (h, wd, c) = x.value.hwc()?;
        let [kh, kw, kc] = *w.shape() else {
            return Err(Error::shape(
                "depthwise_conv2d",
                "[k, k, C]",
                format!("{:?}", w.shape()),
            ));
        };
        if kc != c {
            return Err(Error::ChannelMismatch {
                op: "depthwise_conv2d",
                expected: kc,
                got: c,
            });
        }
        if let Some(b) = b {
            if b.shape() != [c] {
                return Err(Error::shape(
                    "depthwise bias",
                    format!("[{c}]"),
                    format!("{:?}", b.shape()),
                ));
            }
        }
        let geom = ConvGeom::new((h, wd, c), (kh, kw, c), Padding::Same)?;
        self.count(2 * (kh * kw * c * h * wd) as u64);
        let v = self.compute(&[h, wd, c], || {
            conv::depthwise_forward(
                x.value.data(),
                w.value.data(),
                b.map(|b| b.value.data()),
                &geom,
            )
        })?;
        Ok(self.push(
            Op::Depthwise {
                x: x.clone(),
                w: w.clone(),
                b: b.cloned(),
                geom,
            },
            v,
        ))
    }

    pub fn linear(&self, x: &Var, w: &Var, b: Option<&Var>) -> Result<Var> {
        let shape = crate::numerics::linear_shape(x.shape(), w.shape(), b.map(Var::shape))?;
        let (cin, cout) = (w.shape()[0], w.shape()[1]);
        let positions = x.value.len() / cin.max(1);
        self.count(2 * (positions * cin * cout) as u64);
        let v = self.compute(&shape, || {
            dense::linear_forward(
                x.value.data(),
                w.value.data(),
                b.map(|b| b.value.data()),
                cin,
                cout,
            )
        })?;
        Ok(self.push(
            Op::Linear {
                x: x.clone(),
                w: w.clone(),
                b: b.cloned(),
            },
            v,
        ))
    }

    /// Layer norm over the trailing axis with `eps = 1e-5`.
    pub fn layer_norm(&self, x: &Var, gain: &Var, shift: &Var) -> Result<Var> {
        let c = x.value.channels();
        if gain.shape() != [c] || shift.shape() != [c] {
            return Err(Error::shape(
                "layer_norm",
                format!("gain/shift [{c}]"),
                format!("{:?}/{:?}", gain.shape(), shift.shape()),
            ));
        }
        let (value, xhat, inv) = if self.is_dry() {
            (Tensor::zeros(x.shape()), Vec::new(), Vec::new())
        } else {
            let (y, xhat, inv) = dense::layer_norm_forward(
                x.value.data(),
                gain.value.data(),
                shift.value.data(),
                LAYER_NORM_EPS,
            );
            (Tensor::new(x.shape(), y)?, xhat, inv)
        };
        let op = Op::LayerNorm {
            x: x.clone(),
            gain: gain.clone(),
            shift: shift.clone(),
            xhat,
            inv,
        };
        Ok(self.push(op, value))
    }

    /// `[H, W, C] -> [1, 1, C]` spatial mean.
    pub fn global_avg_pool(&self, x: &Var) -> Result<Var> {
        let (h, w, c) = x.value.hwc()?;
        if h * w == 0 {
            return Err(Error::Empty("global_avg_pool"));
        }
        let v = self.compute(&[1, 1, c], || dense::global_avg_pool(x.value.data(), c))?;
        Ok(self.push(Op::Gap(x.clone()), v))
    }

    /// Multiplies every position of `x` by the per-channel factors `s`.
    pub fn channel_scale(&self, x: &Var, s: &Var) -> Result<Var> {
        let c = x.value.channels();
        if s.value.len() != c {
            return Err(Error::ChannelMismatch {
                op: "channel_scale",
                expected: c,
                got: s.value.len(),
            });
        }
        let v = self.compute(x.shape(), || {
            dense::channel_scale(x.value.data(), s.value.data())
        })?;
        Ok(self.push(Op::ChannelScale(x.clone(), s.clone()), v))
    }

    /// Zero-padded 1-D correlation of a channel vector with odd-length `w`.
    pub fn channel_conv1d(&self, v: &Var, w: &Var) -> Result<Var> {
        if w.shape().len() != 1 || w.shape()[0] % 2 == 0 {
            return Err(Error::shape(
                "channel_conv1d",
                "odd [k]",
                format!("{:?}", w.shape()),
            ));
        }
        let out = self.compute(v.shape(), || {
            dense::channel_conv1d(v.value.data(), w.value.data())
        })?;
        Ok(self.push(Op::ChannelConv1d(v.clone(), w.clone()), out))
    }

    /// Descriptive modulation `(1 - ε)·1 + ε·m` for a scalar `ε`, evaluated
    /// as `1 + ε·(m - 1)` so that `ε = 0` or `m = 1` give exactly one.
    pub fn ldc_mask(&self, eps: &Var, m: &Var) -> Result<Var> {
        if eps.value.len() != 1 {
            return Err(Error::shape(
                "ldc_mask",
                "scalar epsilon",
                format!("{:?}", eps.shape()),
            ));
        }
        let v = self.compute(m.shape(), || {
            let e = eps.value.data()[0];
            m.value
                .data()
                .iter()
                .map(|&mv| 1.0 + e * (mv - 1.0))
                .collect()
        })?;
        Ok(self.push(
            Op::LdcMask {
                eps: eps.clone(),
                m: m.clone(),
            },
            v,
        ))
    }

    /// Sobel response of a single-channel image, `[H, W] -> [H, W]`.
    pub fn sobel(&self, x: &Var, axis: SobelAxis) -> Result<Var> {
        let (h, w, c) = x.value.hwc()?;
        if c != 1 {
            return Err(Error::ChannelMismatch {
                op: "sobel",
                expected: 1,
                got: c,
            });
        }
        let v = self.compute(&[h, w], || conv::sobel_forward(x.value.data(), h, w, axis))?;
        Ok(self.push(Op::Sobel(x.clone(), axis), v))
    }

    /// `|G_x| + |G_y|`.
    pub fn sobel_magnitude(&self, x: &Var) -> Result<Var> {
        let gx = self.sobel(x, SobelAxis::X)?;
        let gy = self.sobel(x, SobelAxis::Y)?;
        let (ax, ay) = (self.abs(&gx)?, self.abs(&gy)?);
        self.add(&ax, &ay)
    }

    pub fn space_to_depth(&self, x: &Var, p: usize) -> Result<Var> {
        let (h, w, c) = x.value.hwc()?;
        for extent in [h, w] {
            if extent % p != 0 {
                return Err(Error::Indivisible {
                    op: "space_to_depth",
                    extent,
                    divisor: p,
                });
            }
        }
        let v = self.compute(&[h / p, w / p, p * p * c], || {
            patch::space_to_depth(x.value.data(), (h, w, c), p)
        })?;
        Ok(self.push(Op::SpaceToDepth(x.clone(), p), v))
    }

    pub fn depth_to_space(&self, x: &Var, p: usize) -> Result<Var> {
        let (h, w, c) = x.value.hwc()?;
        if c % (p * p) != 0 {
            return Err(Error::Indivisible {
                op: "depth_to_space",
                extent: c,
                divisor: p * p,
            });
        }
        let v = self.compute(&[h * p, w * p, c / (p * p)], || {
            patch::depth_to_space(x.value.data(), (h, w, c), p)
        })?;
        Ok(self.push(Op::DepthToSpace(x.clone(), p), v))
    }

    /// Selects rows of `x` viewed as `[positions, C]`: `out[q] = x[index[q]]`.
    pub fn gather_rows(&self, x: &Var, index: Arc<Vec<usize>>) -> Result<Var> {
        let c = x.value.channels();
        let rows = x.value.len() / c.max(1);
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(Error::shape("gather_rows", format!("index < {rows}"), bad));
        }
        let v = self.compute(&[index.len(), c], || {
            let src = x.value.data();
            let mut out = Vec::with_capacity(index.len() * c);
            for &i in index.iter() {
                out.extend_from_slice(&src[i * c..(i + 1) * c]);
            }
            out
        })?;
        Ok(self.push(Op::Gather(x.clone(), index), v))
    }

    /// Selective scan with token-varying `Δ`, `B`, `C` over diagonal `A`.
    /// Shapes: `x, delta: [L, C]`, `a: [C, N]`, `b, c: [L, N]`, `d: [C]`.
    /// The state resets to zero at every index in `starts`.
    #[allow(clippy::too_many_arguments)]
    pub fn selective_scan(
        &self,
        x: &Var,
        delta: &Var,
        a: &Var,
        b: &Var,
        c: &Var,
        d: &Var,
        starts: Arc<Vec<usize>>,
    ) -> Result<Var> {
        let [l, ch] = *x.shape() else {
            return Err(Error::shape(
                "selective_scan",
                "x [L, C]",
                format!("{:?}", x.shape()),
            ));
        };
        let [_, n] = *a.shape() else {
            return Err(Error::shape(
                "selective_scan",
                "a [C, N]",
                format!("{:?}", a.shape()),
            ));
        };
        let expect = |name: &'static str, v: &Var, s: &[usize]| -> Result<()> {
            if v.shape() != s {
                return Err(Error::shape(
                    name,
                    format!("{s:?}"),
                    format!("{:?}", v.shape()),
                ));
            }
            Ok(())
        };
        expect("selective_scan delta", delta, &[l, ch])?;
        expect("selective_scan a", a, &[ch, n])?;
        expect("selective_scan b", b, &[l, n])?;
        expect("selective_scan c", c, &[l, n])?;
        expect("selective_scan d", d, &[ch])?;
        if !self.is_dry() {
            if let Some(&bad) = delta.value.data().iter().find(|&&v| !(v > 0.0)) {
                return Err(Error::NonPositiveDelta(bad));
            }
        }
        let dims = ScanDims {
            len: l,
            channels: ch,
            state: n,
        };
        self.count(6 * (n * l * ch) as u64);
        let v = self.compute(&[l, ch], || {
            let inp = ScanInputs {
                x: x.value.data(),
                delta: delta.value.data(),
                a: a.value.data(),
                b: b.value.data(),
                c: c.value.data(),
                d: d.value.data(),
            };
            scan::selective_scan_forward(&inp, dims, &starts)
        })?;
        let op = ScanOp {
            x: x.clone(),
            delta: delta.clone(),
            a: a.clone(),
            b: b.clone(),
            c: c.clone(),
            d: d.clone(),
            dims,
            starts,
        };
        Ok(self.push(Op::Scan(Box::new(op)), v))
    }
}

/// A tape plus a parameter source and a name prefix, handed to model code.
#[derive(Clone)]
pub struct Ctx<'a> {
    tape: &'a Tape,
    params: &'a dyn ParamSource,
    prefix: String,
}

impl<'a> Ctx<'a> {
    pub fn new(tape: &'a Tape, params: &'a dyn ParamSource) -> Self {
        Self {
            tape,
            params,
            prefix: String::new(),
        }
    }

    pub fn tape(&self) -> &'a Tape {
        self.tape
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    /// Full name of a parameter local to this scope.
    pub fn name(&self, local: &str) -> String {
        if self.prefix.is_empty() {
            local.to_string()
        } else {
            format!("{}.{local}", self.prefix)
        }
    }

    pub fn scope(&self, scope: &str) -> Ctx<'a> {
        Ctx {
            tape: self.tape,
            params: self.params,
            prefix: self.name(scope),
        }
    }

    pub fn p(&self, local: &str) -> Result<Var> {
        self.tape.param(self.params, &self.name(local))
    }
}

impl Deref for Ctx<'_> {
    type Target = Tape;

    fn deref(&self) -> &Tape {
        self.tape
    }
}
