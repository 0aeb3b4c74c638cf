mod common;

use common::Grid;
use fmamba::metrics::{
    evaluate_all, fmi, fmi_detailed, ms_ssim, ms_ssim_fused, ms_ssim_scales, qabf, scd,
    scd_detailed, vif, vif_fused, QABF,
};
use fmamba::synthetic::noise;
use fmamba::Tensor;

const ORACLE_TOL: f64 = 1e-10;

fn triple(h: usize, w: usize, seed: u64) -> (Tensor, Tensor, Tensor) {
    (
        common::textured_image(h, w, seed),
        common::textured_image(h, w, seed + 1),
        common::textured_image(h, w, seed + 2),
    )
}

fn grids(t: &(Tensor, Tensor, Tensor)) -> (Grid, Grid, Grid) {
    (Grid::of(&t.0), Grid::of(&t.1), Grid::of(&t.2))
}

fn close(lib: f64, oracle: f64, what: &str) {
    assert!((lib - oracle).abs() <= ORACLE_TOL, "{what}: {lib} vs oracle {oracle}");
}

#[test]
fn scd_qabf_fmi_match_oracles() {
    for (h, w) in [(8, 8), (9, 13), (16, 16), (20, 12), (32, 32)] {
        for seed in [0, 40, 80] {
            let t = triple(h, w, seed);
            let g = grids(&t);
            let tag = format!("{h}x{w} seed {seed}");
            close(scd(&t.0, &t.1, &t.2).unwrap(), common::scd(&g.0, &g.1, &g.2), &format!("scd {tag}"));
            close(qabf(&t.0, &t.1, &t.2).unwrap(), common::qabf(&g.0, &g.1, &g.2), &format!("qabf {tag}"));
            close(fmi(&t.0, &t.1, &t.2).unwrap(), common::fmi(&g.0, &g.1, &g.2), &format!("fmi {tag}"));
        }
    }
}

#[test]
fn ms_ssim_matches_oracle_at_every_scale_count() {
    for (side, scales) in [(11, 1), (22, 2), (44, 3), (88, 4), (176, 5), (256, 5)] {
        assert_eq!(ms_ssim_scales(side, side + 3), scales);
        let t = triple(side, side + 3, side as u64);
        let g = grids(&t);
        close(ms_ssim(&t.0, &t.2).unwrap(), common::ms_ssim(&g.0, &g.2), &format!("ms_ssim {side}"));
        if side <= 88 {
            close(
                ms_ssim_fused(&t.0, &t.1, &t.2).unwrap(),
                common::ms_ssim_fused(&g.0, &g.1, &g.2),
                &format!("ms_ssim_fused {side}"),
            );
        }
    }
    assert!(ms_ssim(&Tensor::zeros(&[10, 40]), &Tensor::zeros(&[10, 40])).is_err());
}

#[test]
fn vif_matches_oracle() {
    for (h, w, seed) in [(32, 32, 1), (40, 33, 2), (64, 48, 3)] {
        let t = triple(h, w, seed);
        let g = grids(&t);
        close(vif(&t.0, &t.2).unwrap(), common::vif(&g.0, &g.2), &format!("vif {h}x{w}"));
        close(vif_fused(&t.0, &t.1, &t.2).unwrap(), common::vif_fused(&g.0, &g.1, &g.2), &format!("vif_fused {h}x{w}"));
    }
    assert!(vif(&Tensor::zeros(&[31, 64]), &Tensor::zeros(&[31, 64])).is_err());
}

#[test]
fn vif_decreases_with_noise_and_exceeds_one_under_contrast_gain() {
    let x = common::textured_image(64, 64, 9);
    let n = noise(64, 64, 3).map(|v| v - 0.5);
    let values: Vec<f64> = [0.0, 0.02, 0.05, 0.1, 0.2]
        .iter()
        .map(|&s| vif(&x, &x.zip_map(&n, |a, b| a + s * b).unwrap()).unwrap())
        .collect();
    assert!((values[0] - 1.0).abs() < 1e-9, "{values:?}");
    assert!(values.windows(2).all(|p| p[1] < p[0]), "{values:?}");
    let gained = x.map(|v| 1.5 * (v - 0.5) + 0.5);
    assert!(vif(&x, &gained).unwrap() > 1.0);
    let flattened = x.map(|v| 0.5 * (v - 0.5) + 0.5);
    assert!(vif(&x, &flattened).unwrap() < 1.0);
}

fn qabf_factor(gamma: f64, kappa: f64, sigma: f64, v: f64) -> f64 {
    gamma / (1.0 + (kappa * (v - sigma)).exp())
}

#[test]
fn qabf_identity_reaches_sigmoid_ceiling() {
    let x = common::textured_image(48, 48, 4);
    let q = QABF;
    let ceiling = qabf_factor(q.gamma_g, q.kappa_g, q.sigma_g, 1.0)
        * qabf_factor(q.gamma_a, q.kappa_a, q.sigma_a, 1.0);
    let got = qabf(&x, &x, &x).unwrap();
    assert!((got - ceiling).abs() < 1e-12, "{got} vs {ceiling}");
    assert!(got > 0.95);
}

#[test]
fn qabf_constant_fused_is_near_zero() {
    let (a, b, _) = triple(32, 32, 50);
    let q = QABF;
    let bound = qabf_factor(q.gamma_g, q.kappa_g, q.sigma_g, 0.0) * q.gamma_a;
    let got = qabf(&a, &b, &Tensor::full(&[32, 32], 0.5)).unwrap();
    assert!(got >= 0.0 && got <= bound, "{got} > {bound}");
    assert!(got < 1e-3);
}

#[test]
fn fmi_identity_unrelated_and_constant() {
    let x = common::textured_image(64, 64, 21);
    assert!((fmi(&x, &x, &x).unwrap() - 1.0).abs() < 1e-12);
    let blocky = Tensor::from_fn(&[128, 128], |i| (((i / 128) / 16 + (i % 128) / 16) % 4) as f64 / 3.0);
    let unrelated = noise(128, 128, 77);
    let self_fmi = fmi(&blocky, &blocky, &blocky).unwrap();
    let noise_fmi = fmi(&blocky, &blocky, &unrelated).unwrap();
    assert!(noise_fmi < 0.5 * self_fmi, "{noise_fmi} vs {self_fmi}");
    let (v, flags) = fmi_detailed(&x, &x, &Tensor::full(&[64, 64], 0.3)).unwrap();
    assert_eq!(v, 0.0);
    assert!(!flags.is_empty());
}

#[test]
fn scd_orthogonal_sources_and_flat_source() {
    let checker = Tensor::from_fn(&[16, 16], |i| if (i / 16 + i % 16) % 2 == 0 { 1.0 } else { -1.0 });
    let stripes = Tensor::from_fn(&[16, 16], |i| if (i % 16) / 2 % 2 == 0 { 1.0 } else { -1.0 });
    let sum = checker.zip_map(&stripes, |p, q| p + q).unwrap();
    assert!((scd(&checker, &stripes, &sum).unwrap() - 2.0).abs() < 1e-9);
    let flat = Tensor::full(&[16, 16], 0.2);
    let (v, flags) = scd_detailed(&checker, &flat, &checker).unwrap();
    assert!(v.is_finite());
    assert!(!flags.is_empty());
}

#[test]
fn evaluate_all_identity_mean_and_empty() {
    let pairs: Vec<(String, Tensor, Tensor, Tensor)> = (0..3)
        .map(|k| {
            let x = common::textured_image(48, 48, 300 + k);
            (format!("p{k}"), x.clone(), x.clone(), x)
        })
        .collect();
    let report = evaluate_all(&pairs).unwrap();
    assert_eq!(report.rows.len(), 3);
    for row in &report.rows {
        assert!((row.msssim - 1.0).abs() < 1e-12);
        assert!((row.fmi - 1.0).abs() < 1e-12);
        assert!((row.vif - 1.0).abs() < 1e-6);
    }
    let mean = report.mean();
    for (i, m) in mean.iter().enumerate() {
        let direct: f64 = report.rows.iter().map(|r| r.values()[i]).sum::<f64>() / 3.0;
        assert!((m - direct).abs() < 1e-15);
    }
    let csv = report.to_csv();
    assert!(csv.starts_with("pair,vif,scd,qabf,msssim,fmi\n"));
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.lines().last().unwrap().starts_with("mean,"));
    assert!(evaluate_all(&[]).is_err());

    let bad = vec![("odd".to_string(), Tensor::zeros(&[40, 40]), Tensor::zeros(&[40, 41]), Tensor::zeros(&[40, 40]))];
    let msg = evaluate_all(&bad).unwrap_err().to_string();
    assert!(msg.contains("odd"), "{msg}");
}
