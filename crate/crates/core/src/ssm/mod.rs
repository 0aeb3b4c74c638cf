//! State-space core: discretization, recurrent and convolutional evaluation,
//! selective parameterization and the skip-sampled 2-D scan.

pub mod kernel;
mod layout;

pub use layout::{
    es2d_partition, es2d_scatter, ScanDirection, ScanLayout, DEFAULT_DIRECTIONS, OFFSETS,
};

use crate::autodiff::{Ctx, Tape, Var};
use crate::error::{Error, Result};
use crate::numerics::{softplus, Affine};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Default state size.
pub const DEFAULT_STATE: usize = 16;

/// Discretized per-token parameters, `a_bar`/`b_bar` laid out `[L, C, N]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteSsm {
    pub len: usize,
    pub channels: usize,
    pub state: usize,
    pub a_bar: Vec<f64>,
    pub b_bar: Vec<f64>,
}

impl DiscreteSsm {
    /// Time-invariant parameters repeated over `len` tokens; `a_bar`,
    /// `b_bar` are `[C, N]`.
    pub fn lti(a_bar: &Tensor, b_bar: &Tensor, len: usize) -> Result<Self> {
        let [c, n] = *a_bar.shape() else {
            return Err(Error::shape(
                "DiscreteSsm::lti",
                "[C, N]",
                format!("{:?}", a_bar.shape()),
            ));
        };
        if b_bar.shape() != a_bar.shape() {
            return Err(Error::shape(
                "DiscreteSsm::lti",
                format!("{:?}", a_bar.shape()),
                format!("{:?}", b_bar.shape()),
            ));
        }
        Ok(Self {
            len,
            channels: c,
            state: n,
            a_bar: a_bar.data().repeat(len),
            b_bar: b_bar.data().repeat(len),
        })
    }

    fn at(&self, k: usize, ch: usize) -> std::ops::Range<usize> {
        let start = (k * self.channels + ch) * self.state;
        start..start + self.state
    }

    pub fn a_bar_at(&self, k: usize, ch: usize) -> &[f64] {
        &self.a_bar[self.at(k, ch)]
    }

    pub fn b_bar_at(&self, k: usize, ch: usize) -> &[f64] {
        &self.b_bar[self.at(k, ch)]
    }

    fn is_time_invariant(&self) -> bool {
        let block = self.channels * self.state;
        (1..self.len).all(|k| {
            self.a_bar[k * block..(k + 1) * block] == self.a_bar[..block]
                && self.b_bar[k * block..(k + 1) * block] == self.b_bar[..block]
        })
    }
}

/// Zero-order hold of `A: [C, N]` with steps `delta: [L, C]` and input
/// matrices `B: [L, N]`.
pub fn zoh_discretize(a: &Tensor, delta: &Tensor, b: &Tensor) -> Result<DiscreteSsm> {
    let [c, n] = *a.shape() else {
        return Err(Error::shape(
            "zoh_discretize",
            "A [C, N]",
            format!("{:?}", a.shape()),
        ));
    };
    let [l, dc] = *delta.shape() else {
        return Err(Error::shape(
            "zoh_discretize",
            "delta [L, C]",
            format!("{:?}", delta.shape()),
        ));
    };
    if dc != c {
        return Err(Error::ChannelMismatch {
            op: "zoh_discretize",
            expected: c,
            got: dc,
        });
    }
    if b.shape() != [l, n] {
        return Err(Error::shape(
            "zoh_discretize",
            format!("B [{l}, {n}]"),
            format!("{:?}", b.shape()),
        ));
    }
    if let Some(&bad) = delta.data().iter().find(|&&d| !(d > 0.0)) {
        return Err(Error::NonPositiveDelta(bad));
    }
    let mut a_bar = Vec::with_capacity(l * c * n);
    let mut b_bar = Vec::with_capacity(l * c * n);
    for k in 0..l {
        for ch in 0..c {
            let dt = delta.data()[k * c + ch];
            for j in 0..n {
                let (ab, bb) = kernel::zoh(dt, a.data()[ch * n + j], b.data()[k * n + j]);
                a_bar.push(ab);
                b_bar.push(bb);
            }
        }
    }
    Ok(DiscreteSsm {
        len: l,
        channels: c,
        state: n,
        a_bar,
        b_bar,
    })
}

/// `h_k = Ā_k h_{k-1} + B̄_k x_k`, `y_k = C_k · h_k + D x_k`, from `h_0 = 0`.
pub fn ssm_scan_recurrent(
    disc: &DiscreteSsm,
    c_t: &Tensor,
    d: &Tensor,
    x: &Tensor,
) -> Result<Tensor> {
    let (l, c, n) = (disc.len, disc.channels, disc.state);
    if c_t.shape() != [l, n] {
        return Err(Error::shape(
            "ssm_scan_recurrent",
            format!("C [{l}, {n}]"),
            format!("{:?}", c_t.shape()),
        ));
    }
    if d.shape() != [c] {
        return Err(Error::shape(
            "ssm_scan_recurrent",
            format!("D [{c}]"),
            format!("{:?}", d.shape()),
        ));
    }
    if x.shape() != [l, c] {
        return Err(Error::shape(
            "ssm_scan_recurrent",
            format!("x [{l}, {c}]"),
            format!("{:?}", x.shape()),
        ));
    }
    let mut y = vec![0.0; l * c];
    let mut h = vec![0.0; n];
    for ch in 0..c {
        h.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..l {
            let xv = x.data()[k * c + ch];
            let (ab, bb) = (disc.a_bar_at(k, ch), disc.b_bar_at(k, ch));
            let mut acc = 0.0;
            for j in 0..n {
                h[j] = ab[j] * h[j] + bb[j] * xv;
                acc += c_t.data()[k * n + j] * h[j];
            }
            y[k * c + ch] = acc + d.data()[ch] * xv;
        }
    }
    Tensor::new(&[l, c], y)
}

/// Convolution kernel `K̄_i = C Ā^i B̄` of one channel of a time-invariant
/// system, `i = 0..len`.
pub fn ssm_kernel(disc: &DiscreteSsm, channel: usize, c_row: &[f64], len: usize) -> Result<Tensor> {
    if !disc.is_time_invariant() {
        return Err(Error::TokenVarying);
    }
    if channel >= disc.channels {
        return Err(Error::ChannelMismatch {
            op: "ssm_kernel",
            expected: disc.channels,
            got: channel,
        });
    }
    if c_row.len() != disc.state {
        return Err(Error::shape("ssm_kernel", disc.state, c_row.len()));
    }
    let (ab, bb) = (disc.a_bar_at(0, channel), disc.b_bar_at(0, channel));
    let mut power = bb.to_vec();
    let mut k = Vec::with_capacity(len);
    for _ in 0..len {
        k.push(c_row.iter().zip(&power).map(|(c, p)| c * p).sum());
        for (p, a) in power.iter_mut().zip(ab) {
            *p *= a;
        }
    }
    Tensor::new(&[len], k)
}

/// Causal convolution `y_k = Σ_{j≤k} K̄_{k-j} x_j + D x_k`.
pub fn ssm_apply_conv_form(x: &Tensor, k_bar: &Tensor, d: f64) -> Result<Tensor> {
    let l = x.len();
    if k_bar.len() < l {
        return Err(Error::shape(
            "ssm_apply_conv_form",
            format!("kernel length >= {l}"),
            k_bar.len(),
        ));
    }
    let (xs, ks) = (x.data(), k_bar.data());
    let y = (0..l)
        .map(|k| (0..=k).map(|j| ks[k - j] * xs[j]).sum::<f64>() + d * xs[k])
        .collect();
    Tensor::new(&[l], y)
}

/// Continuous parameters and input-dependent projections of one selective
/// state-space layer over `C` channels with state size `N`.
#[derive(Clone, Debug)]
pub struct SsmParams {
    /// `[C, N]`, expected negative.
    pub a: Tensor,
    /// `C -> C`, softplus applied on top.
    pub delta_proj: Affine,
    /// `C -> N`.
    pub b_proj: Affine,
    /// `C -> N`.
    pub c_proj: Affine,
    /// `[C]`.
    pub d: Tensor,
}

impl SsmParams {
    /// `A = -(1..N)` per channel, zero projections, `D = 1`, zero biases.
    pub fn new(channels: usize, state: usize) -> Self {
        let a = Tensor::from_fn(&[channels, state], |i| -((i % state) as f64 + 1.0));
        let zeros = |cin: usize, cout: usize| {
            Affine::new(Tensor::zeros(&[cin, cout]), Some(Tensor::zeros(&[cout])))
        };
        Self {
            a,
            delta_proj: zeros(channels, channels),
            b_proj: zeros(channels, state),
            c_proj: zeros(channels, state),
            d: Tensor::full(&[channels], 1.0),
        }
    }

    pub fn channels(&self) -> usize {
        self.a.shape()[0]
    }

    pub fn state(&self) -> usize {
        self.a.shape()[1]
    }

    fn store(&self) -> ParamStore {
        let a_log = self.a.map(|a| (-a).ln());
        let mut store = ParamStore::new()
            .with("a_log", a_log)
            .with("d", self.d.clone());
        for (name, aff) in [
            ("delta", &self.delta_proj),
            ("b_proj", &self.b_proj),
            ("c_proj", &self.c_proj),
        ] {
            store.insert(format!("{name}.weight"), aff.weight.clone());
            if let Some(b) = &aff.bias {
                store.insert(format!("{name}.bias"), b.clone());
            }
        }
        store
    }
}

/// `Δ = softplus(tokens·W_Δ + b_Δ)`, `B = tokens·W_B + b_B`, `C = tokens·W_C + b_C`.
pub fn selective_params(tokens: &Tensor, params: &SsmParams) -> Result<(Tensor, Tensor, Tensor)> {
    let lin = |aff: &Affine| crate::numerics::linear(tokens, &aff.weight, aff.bias.as_ref());
    let delta = lin(&params.delta_proj)?.map(softplus);
    Ok((delta, lin(&params.b_proj)?, lin(&params.c_proj)?))
}

/// Skip-sampled selective scan of a `[H, W, C]` map: partition, scan each
/// sub-sequence with its own zero initial state, scatter back.
pub fn es2d_scan(feature: &Tensor, params: &SsmParams, layout: &ScanLayout) -> Result<Tensor> {
    if params.a.data().iter().any(|&a| !(a < 0.0)) {
        return Err(Error::Config(
            "es2d_scan: every A entry must be negative".into(),
        ));
    }
    let store = params.store();
    let tape = Tape::eval();
    let ctx = Ctx::new(&tape, &store);
    let x = tape.constant(feature.clone());
    Ok(es2d(&ctx, &x, layout)?.value().clone())
}

/// Differentiable skip-sampled scan of `x: [H, W, C]`. Parameters under the
/// context: `a_log [C, N]` (with `A = -exp(a_log)`), `delta.{weight,bias}`,
/// `b_proj.{weight,bias}`, `c_proj.{weight,bias}`, `d [C]`.
pub fn es2d(ctx: &Ctx, x: &Var, layout: &ScanLayout) -> Result<Var> {
    let (h, w, c) = x.value().hwc()?;
    if (h, w) != layout.extents() {
        return Err(Error::shape(
            "es2d",
            format!("{:?}", layout.extents()),
            format!("{:?}", (h, w)),
        ));
    }
    let a_log = ctx.p("a_log")?;
    let a = ctx.exp(&a_log)?;
    let a = ctx.scale(&a, -1.0)?;
    let tokens = ctx.gather_rows(x, layout.order())?;
    let delta = ctx.linear(
        &tokens,
        &ctx.p("delta.weight")?,
        Some(&ctx.p("delta.bias")?),
    )?;
    let delta = ctx.softplus(&delta)?;
    let b = ctx.linear(
        &tokens,
        &ctx.p("b_proj.weight")?,
        Some(&ctx.p("b_proj.bias")?),
    )?;
    let cm = ctx.linear(
        &tokens,
        &ctx.p("c_proj.weight")?,
        Some(&ctx.p("c_proj.bias")?),
    )?;
    let y = ctx.selective_scan(&tokens, &delta, &a, &b, &cm, &ctx.p("d")?, layout.starts())?;
    let y = ctx.gather_rows(&y, layout.inverse())?;
    ctx.reshape(&y, &[h, w, c])
}

/// Parameter shapes used by [`es2d`] for `channels` inputs and state `state`.
pub fn es2d_param_shapes(channels: usize, state: usize) -> Vec<(&'static str, Vec<usize>)> {
    vec![
        ("a_log", vec![channels, state]),
        ("delta.weight", vec![channels, channels]),
        ("delta.bias", vec![channels]),
        ("b_proj.weight", vec![channels, state]),
        ("b_proj.bias", vec![state]),
        ("c_proj.weight", vec![channels, state]),
        ("c_proj.bias", vec![state]),
        ("d", vec![channels]),
    ]
}
