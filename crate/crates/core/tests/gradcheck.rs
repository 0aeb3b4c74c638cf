use fmamba::autodiff::{grad, grad_check, Ctx, GradCheckOptions, OpKind};
use fmamba::selfcheck::grad::{block_checks, block_options};
use fmamba::{ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

#[test]
fn linear_square_matches_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (p, cin, cout) = (5, 3, 4);
    let x = random(&[p, cin], &mut rng);
    let w = random(&[cin, cout], &mut rng);
    let store = ParamStore::new().with("w", w.clone());
    let (loss, g) = grad(&store, |ctx: &Ctx| {
        let y = ctx.linear(&ctx.constant(x.clone()), &ctx.p("w")?, None)?;
        ctx.sum(&ctx.mul(&y, &y)?)
    })
    .unwrap();
    let (xd, wd) = (x.data(), w.data());
    let y: Vec<f64> = (0..p * cout)
        .map(|i| (0..cin).map(|c| xd[i / cout * cin + c] * wd[c * cout + i % cout]).sum())
        .collect();
    let expect_loss: f64 = y.iter().map(|v| v * v).sum();
    assert!((loss - expect_loss).abs() < 1e-12);
    for c in 0..cin {
        for o in 0..cout {
            let expect: f64 = (0..p).map(|r| 2.0 * y[r * cout + o] * xd[r * cin + c]).sum();
            assert!((g["w"].data()[c * cout + o] - expect).abs() < 1e-12);
        }
    }
}

#[test]
fn sigmoid_sum_matches_closed_form() {
    let v = Tensor::new(&[4], vec![-2.0, -0.1, 0.0, 3.0]).unwrap();
    let store = ParamStore::new().with("v", v.clone());
    let (_, g) = grad(&store, |ctx: &Ctx| ctx.sum(&ctx.sigmoid(&ctx.p("v")?)?)).unwrap();
    for (gi, &x) in g["v"].data().iter().zip(v.data()) {
        let s = 1.0 / (1.0 + (-x).exp());
        assert!((gi - s * (1.0 - s)).abs() < 1e-15);
    }
}

#[test]
fn unused_parameters_get_zero_gradients() {
    let store = ParamStore::new().with("a", Tensor::full(&[2], 1.0)).with("b", Tensor::full(&[3], 1.0));
    let (_, g) = grad(&store, |ctx: &Ctx| ctx.sum(&ctx.p("a")?)).unwrap();
    assert_eq!(g["b"], Tensor::zeros(&[3]));
    assert_eq!(g["a"], Tensor::full(&[2], 1.0));
}

#[test]
fn grad_check_flags_wrong_rule() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let store = ParamStore::new().with("w", random(&[3, 2], &mut rng));
    let x = random(&[4, 3], &mut rng);
    let f = |ctx: &Ctx| {
        let y = ctx.linear(&ctx.constant(x.clone()), &ctx.p("w")?, None)?;
        ctx.sum(&ctx.mul(&y, &y)?)
    };
    let clean = GradCheckOptions { tol: 1e-6, ..GradCheckOptions::default() };
    assert!(grad_check(&store, f, &clean).unwrap().passed());
    let faulty = GradCheckOptions { fault: Some(OpKind::Linear), ..clean };
    assert!(!grad_check(&store, f, &faulty).unwrap().passed());
}

#[test]
fn injected_faults_are_caught_by_the_block_suite() {
    for kind in [
        OpKind::Linear,
        OpKind::SelectiveScan,
        OpKind::LdcMask,
        OpKind::DepthwiseConv2d,
        OpKind::ChannelConv1d,
        OpKind::Sobel,
        OpKind::LayerNorm,
    ] {
        let opts = GradCheckOptions { fault: Some(kind), ..block_options() };
        let failing: Vec<&str> = block_checks(&opts)
            .unwrap()
            .into_iter()
            .filter(|(_, r)| !r.passed())
            .map(|(n, _)| n)
            .collect();
        assert!(!failing.is_empty(), "fault in {kind:?} went unnoticed");
    }
}

#[test]
fn op_kind_names_parse() {
    for kind in OpKind::ALL {
        assert_eq!(OpKind::parse(&format!("{kind:?}")), Some(kind));
    }
    assert_eq!(OpKind::parse("selective_scan"), Some(OpKind::SelectiveScan));
    assert_eq!(OpKind::parse("nope"), None);
}
