//! Learnable descriptive convolution and channel attention on a random
//! feature map.

use fmamba::blocks::{eca_forward, eca_kernel_size, ldc_forward, EcaConfig, LdcKernel};
use fmamba::numerics::depthwise_conv2d;
use fmamba::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> fmamba::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let c = 8;
    let x = Tensor::from_fn(&[12, 12, c], |_| rng.random_range(-1.0..1.0));
    let w = Tensor::from_fn(&[3, 3, c], |_| rng.random_range(-0.5..0.5));
    let m = Tensor::from_fn(&[3, 3, c], |_| rng.random_range(-2.0..2.0));
    let vanilla = depthwise_conv2d(&x, &w, None)?;

    for eps in [0.0, 0.25, 0.5, 1.0] {
        let learned = ldc_forward(&x, &LdcKernel { w: w.clone(), m: m.clone(), epsilon: eps })?;
        let ones = ldc_forward(&x, &LdcKernel { w: w.clone(), m: Tensor::full(&[3, 3, c], 1.0), epsilon: eps })?;
        println!(
            "eps {eps:.2}: |ldc - conv| = {:.3e}, with m = 1: {:.1e}",
            learned.max_abs_diff(&vanilla),
            ones.max_abs_diff(&vanilla)
        );
    }

    for channels in [8, 96, 192, 384, 768] {
        println!("eca kernel for C = {channels}: {}", eca_kernel_size(channels, EcaConfig::default()));
    }
    let k = eca_kernel_size(c, EcaConfig::default());
    let attended = eca_forward(&x, &Tensor::full(&[k], 0.3))?;
    let ratio: Vec<String> = (0..c)
        .map(|ch| format!("{:.3}", attended.data()[ch] / x.data()[ch]))
        .collect();
    println!("per-channel eca gates: {}", ratio.join(" "));
    Ok(())
}
