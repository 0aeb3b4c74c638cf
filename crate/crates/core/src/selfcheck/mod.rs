//! Invariant suites behind `fmamba check`: scan form equivalence, LDC
//! degenerations, gradient checks, loss zeros, metric identities and the
//! architecture audit.

pub mod grad;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{OpKind, Tape};
use crate::blocks::{ldc_forward, LdcKernel};
use crate::error::{Error, Result};
use crate::losses::{intensity_loss, ssim_loss, texture_loss, LossWeights};
use crate::metrics::{evaluate_pair, FusionRow};
use crate::network::{count_flops, shape_audit, ModelConfig};
use crate::numerics::{self, Padding};
use crate::ssm::kernel::{phi, zoh, ZOH_SERIES_THRESHOLD};
use crate::ssm::{ssm_apply_conv_form, ssm_kernel, ssm_scan_recurrent, zoh_discretize};
use crate::synthetic::scene_pair;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Suite {
    Ssm,
    Ldc,
    Grad,
    Losses,
    Metrics,
    Arch,
}

impl Suite {
    pub const ALL: [Suite; 6] = [
        Suite::Ssm,
        Suite::Ldc,
        Suite::Grad,
        Suite::Losses,
        Suite::Metrics,
        Suite::Arch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Ssm => "ssm",
            Suite::Ldc => "ldc",
            Suite::Grad => "grad",
            Suite::Losses => "losses",
            Suite::Metrics => "metrics",
            Suite::Arch => "arch",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown suite `{s}`")))
    }
}

/// One named check within a suite.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub suite: Suite,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mark = if self.passed { "pass" } else { "FAIL" };
        write!(
            f,
            "{mark:<5} {:<8} {:<32} {}",
            self.suite.name(),
            self.name,
            self.detail
        )
    }
}

struct Collector {
    suite: Suite,
    out: Vec<Outcome>,
}

impl Collector {
    fn record(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.out.push(Outcome {
            suite: self.suite,
            name: name.to_string(),
            passed,
            detail: detail.into(),
        });
    }

    /// Records `value <= tol`.
    fn within(&mut self, name: &str, value: f64, tol: f64) {
        self.record(name, value <= tol, format!("{value:.3e} <= {tol:.0e}"));
    }

    fn result<T>(&mut self, name: &str, r: Result<T>) -> Option<T> {
        match r {
            Ok(v) => Some(v),
            Err(e) => {
                self.record(name, false, format!("error: {e}"));
                None
            }
        }
    }
}

/// Runs the given suites in order. `fault` corrupts one backward rule so
/// that the gradient suite must fail.
pub fn run(suites: &[Suite], fault: Option<OpKind>) -> Vec<Outcome> {
    let mut all = Vec::new();
    for &suite in suites {
        let mut c = Collector {
            suite,
            out: Vec::new(),
        };
        match suite {
            Suite::Ssm => ssm_suite(&mut c),
            Suite::Ldc => ldc_suite(&mut c),
            Suite::Grad => grad_suite(&mut c, fault),
            Suite::Losses => loss_suite(&mut c),
            Suite::Metrics => metric_suite(&mut c),
            Suite::Arch => arch_suite(&mut c),
        }
        all.extend(c.out);
    }
    all
}

/// Largest `|y_rnn - y_conv|` over `instances` random time-invariant systems
/// with `L <= 32`, `N <= 8`.
pub fn lti_max_error(instances: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let (l, n, c) = (
            rng.random_range(1..=32),
            rng.random_range(1..=8),
            rng.random_range(1..=3),
        );
        let a = Tensor::from_fn(&[c, n], |_| -rng.random_range(0.05..2.0));
        let dt: Vec<f64> = (0..c).map(|_| rng.random_range(0.01..1.0)).collect();
        let b_row: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c_row: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let d = Tensor::from_fn(&[c], |_| rng.random_range(-1.0..1.0));
        let x = Tensor::from_fn(&[l, c], |_| rng.random_range(-1.0..1.0));
        let delta = Tensor::from_fn(&[l, c], |i| dt[i % c]);
        let b = Tensor::from_fn(&[l, n], |i| b_row[i % n]);
        let ct = Tensor::from_fn(&[l, n], |i| c_row[i % n]);
        let disc = zoh_discretize(&a, &delta, &b)?;
        let y = ssm_scan_recurrent(&disc, &ct, &d, &x)?;
        for ch in 0..c {
            let k = ssm_kernel(&disc, ch, &c_row, l)?;
            let xs = Tensor::from_fn(&[l], |t| x.data()[t * c + ch]);
            let yc = ssm_apply_conv_form(&xs, &k, d.data()[ch])?;
            for t in 0..l {
                worst = worst.max((y.data()[t * c + ch] - yc.data()[t]).abs());
            }
        }
    }
    Ok(worst)
}

/// Largest jump of `φ` across the series switch.
pub fn zoh_switch_gap() -> f64 {
    let t = ZOH_SERIES_THRESHOLD;
    [t, -t]
        .into_iter()
        .map(|z| (phi(z * (1.0 - 1e-9)) - phi(z * (1.0 + 1e-9))).abs())
        .fold(0.0, f64::max)
}

fn ssm_suite(c: &mut Collector) {
    if let Some(err) = c.result("lti_rnn_vs_conv", lti_max_error(100, 0)) {
        c.within("lti_rnn_vs_conv", err, 1e-10);
    }
    let (ab, bb) = zoh(0.1, -1.0, 2.0);
    let e = (-0.1f64).exp();
    c.within(
        "zoh_scalar",
        (ab - e).abs().max((bb - 2.0 * (1.0 - e)).abs()),
        1e-9,
    );
    c.within("zoh_series_continuity", zoh_switch_gap(), 1e-12);
}

fn random_ldc(seed: u64, c: usize) -> (Tensor, LdcKernel) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::from_fn(&[7, 6, c], |_| rng.random_range(-1.0..1.0));
    let w = Tensor::from_fn(&[3, 3, c], |_| rng.random_range(-1.0..1.0));
    let m = Tensor::from_fn(&[3, 3, c], |_| rng.random_range(-2.0..2.0));
    (x, LdcKernel { w, m, epsilon: 0.0 })
}

/// `(ε = 0 bit-identical to depthwise conv, m ≡ 1 identical for every ε)`.
pub fn ldc_degenerations(seed: u64) -> Result<(bool, bool)> {
    let (x, k) = random_ldc(seed, 5);
    let vanilla = numerics::depthwise_conv2d(&x, &k.w, None)?;
    let eps_zero = ldc_forward(&x, &k)? == vanilla;
    let mut ones = LdcKernel {
        m: Tensor::full(k.w.shape(), 1.0),
        ..k
    };
    let mut mask_one = true;
    for eps in [0.25, 0.5, 1.0] {
        ones.epsilon = eps;
        mask_one &= ldc_forward(&x, &ones)? == vanilla;
    }
    Ok((eps_zero, mask_one))
}

fn ldc_suite(c: &mut Collector) {
    if let Some((a, b)) = c.result("ldc_degenerations", ldc_degenerations(3)) {
        c.record("ldc_eps_zero", a, "bit-identical to depthwise conv");
        c.record("ldc_mask_one", b, "identical for eps in {0.25, 0.5, 1}");
    }
}

fn grad_suite(c: &mut Collector, fault: Option<OpKind>) {
    let mut opts = grad::block_options();
    opts.fault = fault;
    if let Some(blocks) = c.result("blocks", grad::block_checks(&opts)) {
        for (name, report) in blocks {
            c.record(name, report.passed(), grad_detail(&report));
        }
    }
    let mut opts = grad::model_options();
    opts.fault = fault;
    if let Some(report) = c.result("micro_model", grad::model_check(&opts)) {
        c.record("micro_model", report.passed(), grad_detail(&report));
    }
}

fn grad_detail(r: &crate::autodiff::GradCheckReport) -> String {
    format!(
        "{:.3e} <= {:.0e} ({} coords, {} at kinks)",
        r.max_rel_err(),
        r.tol,
        r.coords(),
        r.excluded()
    )
}

/// Loss terms on their minimizers: `(int, text, ssim)`.
pub fn loss_zeros() -> Result<(f64, f64, f64)> {
    let (a, b) = scene_pair(32, 32, 5);
    let target = a.zip_map(&b, f64::max)?;
    let int = intensity_loss(&a, &b, &target)?;
    let flat = Tensor::full(a.shape(), 0.3);
    let text = texture_loss(&a, &flat, &a)?;
    let ssim = ssim_loss(&a, &a, &a)?;
    Ok((int, text, ssim))
}

fn loss_suite(c: &mut Collector) {
    if let Some((int, text, ssim)) = c.result("loss_zeros", loss_zeros()) {
        c.within("intensity_zero", int.abs(), 1e-12);
        c.within("texture_zero", text.abs(), 1e-12);
        c.within("ssim_zero", ssim.abs(), 1e-12);
    }
    let v = LossWeights::DEFAULT.combine(0.01, 0.02, 0.03);
    c.record("weighted_total", v == 1.23, format!("{v}"));
}

/// `+1/-1` checkerboard and stripes of `side x side`, both zero-mean.
pub fn orthogonal_patterns(side: usize) -> (Tensor, Tensor) {
    let checker = Tensor::from_fn(&[side, side], |i| {
        if (i / side + i % side) % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    });
    let stripes = Tensor::from_fn(&[side, side], |i| {
        if (i % side / 2) % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    });
    (checker, stripes)
}

fn metric_suite(c: &mut Collector) {
    let (x, _) = scene_pair(64, 64, 11);
    if let Some(row) = c.result("identity_triple", evaluate_pair("x", &x, &x, &x)) {
        let FusionRow {
            vif,
            msssim,
            fmi,
            qabf,
            ..
        } = row;
        c.within("identity_msssim", (msssim - 1.0).abs(), 1e-12);
        c.within("identity_fmi", (fmi - 1.0).abs(), 1e-12);
        c.within("identity_vif", (vif - 1.0).abs(), 1e-6);
        c.record("identity_qabf", qabf > 0.95, format!("{qabf:.6} > 0.95"));
    }
    let (p, q) = orthogonal_patterns(16);
    let sum = p.zip_map(&q, |a, b| a + b).expect("same shape");
    if let Some(v) = c.result("scd_orthogonal", crate::metrics::scd(&p, &q, &sum)) {
        c.within("scd_orthogonal", (v - 2.0).abs(), 1e-9);
    }
    let (a, b) = scene_pair(48, 48, 12);
    let f = a.zip_map(&b, |u, v| 0.5 * (u + v)).expect("same shape");
    let rows = (|| -> Result<(FusionRow, FusionRow)> {
        let t = |m: &Tensor| m.transpose_spatial();
        Ok((
            evaluate_pair("p", &a, &b, &f)?,
            evaluate_pair("p", &t(&a)?, &t(&b)?, &t(&f)?)?,
        ))
    })();
    if let Some((r, rt)) = c.result("transpose_invariance", rows) {
        let gap = r
            .values()
            .iter()
            .zip(rt.values())
            .map(|(u, v)| (u - v).abs())
            .fold(0.0, f64::max);
        c.within("transpose_invariance", gap, 1e-10);
        let bounded = (0.0..=1.0).contains(&r.msssim)
            && (0.0..=1.0).contains(&r.qabf)
            && (0.0..=1.0).contains(&r.fmi)
            && (-2.0..=2.0).contains(&r.scd);
        c.record("bounds", bounded, format!("{:?}", r.values()));
    }
}

/// Expected `(label, [H, W, C])` stages at 256x256 with the default config.
pub const LADDER: [(&str, [usize; 3]); 5] = [
    ("embed.branchA", [64, 64, 96]),
    ("dffm1", [64, 64, 96]),
    ("dffm2", [32, 32, 192]),
    ("dffm3", [16, 16, 384]),
    ("dffm4", [8, 8, 768]),
];

/// Number of DVSS blocks in branch A of each encoder level.
pub fn dvss_counts(audit: &[crate::autodiff::AuditEntry], levels: usize) -> Vec<usize> {
    (1..=levels)
        .map(|n| {
            let prefix = format!("enc{n}.branchA.dvss");
            audit
                .iter()
                .filter(|e| e.label.starts_with(&prefix))
                .count()
        })
        .collect()
}

/// Flops of one 3x3 convolution (2 -> 4 channels, 4x4, same padding) and
/// one linear map (4 tokens, 2 -> 3).
pub fn single_layer_flops() -> Result<(u64, u64)> {
    let t = Tape::dry_run();
    let x = t.constant(Tensor::zeros(&[4, 4, 2]));
    t.conv2d(
        &x,
        &t.constant(Tensor::zeros(&[3, 3, 2, 4])),
        None,
        Padding::Same,
    )?;
    let conv = t.flops().values().sum();
    let t = Tape::dry_run();
    t.linear(
        &t.constant(Tensor::zeros(&[4, 2])),
        &t.constant(Tensor::zeros(&[2, 3])),
        None,
    )?;
    Ok((conv, t.flops().values().sum()))
}

fn arch_suite(c: &mut Collector) {
    let cfg = ModelConfig::default();
    if let Some(audit) = c.result("shape_ladder", shape_audit(&cfg, 256, 256)) {
        let find = |label: &str| {
            audit
                .iter()
                .find(|e| e.label == label)
                .map(|e| e.shape.clone())
        };
        let mut ok = LADDER
            .iter()
            .all(|(label, shape)| find(label).as_deref() == Some(&shape[..]));
        ok &= find("output").as_deref() == Some(&[256, 256][..]);
        c.record(
            "shape_ladder",
            ok,
            "embed 64x64x96 .. dffm4 8x8x768, output 256x256",
        );
        let counts = dvss_counts(&audit, cfg.levels);
        c.record("dvss_counts", counts == cfg.depths, format!("{counts:?}"));
    }
    if let Some((conv, lin)) = c.result("flop_fixtures", single_layer_flops()) {
        c.record(
            "flop_fixtures",
            (conv, lin) == (2304, 48),
            format!("conv {conv}, linear {lin}"),
        );
    }
    if let Some(report) = c.result("flop_total", count_flops(&cfg, 256, 256)) {
        c.record(
            "flop_total",
            true,
            format!(
                "{:.2} G at 256x256 (reference figure 26.48 G)",
                report.giga()
            ),
        );
    }
}
