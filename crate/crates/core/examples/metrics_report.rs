//! Scores simple fusion rules on synthetic pairs and prints the report as a
//! table and as CSV.

use fmamba::metrics::{evaluate_all, FusionReport};
use fmamba::synthetic::scene_pair;
use fmamba::Tensor;

fn main() -> fmamba::Result<()> {
    let mut triples: Vec<(String, Tensor, Tensor, Tensor)> = Vec::new();
    for seed in 0..3 {
        let (a, b) = scene_pair(96, 96, seed);
        let rules: [(&str, Tensor); 3] = [
            ("mean", a.zip_map(&b, |p, q| 0.5 * (p + q))?),
            ("max", a.zip_map(&b, f64::max)?),
            ("visible", b.clone()),
        ];
        for (rule, fused) in rules {
            triples.push((format!("s{seed}_{rule}"), a.clone(), b.clone(), fused));
        }
    }
    let report: FusionReport = evaluate_all(&triples)?;
    print!("{report}");
    println!();
    print!("{}", report.to_csv());
    for (pair, flag) in report.flags() {
        println!("flag {pair}: {flag}");
    }
    Ok(())
}
