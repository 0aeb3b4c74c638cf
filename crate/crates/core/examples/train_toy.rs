//! Overfits the micro model on one synthetic 64x64 pair.

use fmamba::synthetic::scene_pair;
use fmamba::train::{train_toy, TrainConfig};
use fmamba::{Model, ModelConfig};

fn main() -> fmamba::Result<()> {
    let steps = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(200);
    let pair = scene_pair(64, 64, 0);
    let mut model = Model::init(ModelConfig::micro())?;
    let cfg = TrainConfig {
        steps,
        ..TrainConfig::default()
    };
    let start = std::time::Instant::now();
    let trace = train_toy(&mut model, &[pair], &cfg, |step, loss| {
        if step == 1 || step % 20 == 0 {
            println!("step {step:>4}  {loss}");
        }
    })?;
    let (first, last) = (trace[0].total, trace[trace.len() - 1].total);
    println!(
        "first {first:.6}  last {last:.6}  ratio {:.4}  ({:.1?})",
        last / first,
        start.elapsed()
    );
    Ok(())
}
