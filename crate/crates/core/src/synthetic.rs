//! Deterministic synthetic image pairs for demos, self-checks and tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

/// A two-modality scene of `h x w` pixels in `[0, 1]`.
///
/// The first image resembles a thermal view: a dark background with a few
/// bright smooth blobs. The second resembles a visible view: shaded
/// rectangles with sharp edges and a fine periodic texture.
pub fn scene_pair(h: usize, w: usize, seed: u64) -> (Tensor, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (hf, wf) = (h as f64, w as f64);

    let blobs: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            let cy = rng.random_range(0.2..0.8) * hf;
            let cx = rng.random_range(0.2..0.8) * wf;
            let r = rng.random_range(0.08..0.18) * hf.min(wf);
            let amp = rng.random_range(0.5..0.8);
            (cy, cx, r, amp)
        })
        .collect();
    let thermal = Tensor::from_fn(&[h, w], |i| {
        let (y, x) = ((i / w) as f64, (i % w) as f64);
        let heat: f64 = blobs
            .iter()
            .map(|&(cy, cx, r, amp)| {
                amp * (-((y - cy).powi(2) + (x - cx).powi(2)) / (2.0 * r * r)).exp()
            })
            .sum();
        (0.1 + heat).min(1.0)
    });

    let rects: Vec<(f64, f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            let y0 = rng.random_range(0.0..0.7) * hf;
            let x0 = rng.random_range(0.0..0.7) * wf;
            let dy = rng.random_range(0.15..0.4) * hf;
            let dx = rng.random_range(0.15..0.4) * wf;
            (y0, x0, y0 + dy, x0 + dx, rng.random_range(-0.3..0.3))
        })
        .collect();
    let period = rng.random_range(8.0..16.0);
    let visible = Tensor::from_fn(&[h, w], |i| {
        let (y, x) = ((i / w) as f64, (i % w) as f64);
        let mut v = 0.35 + 0.3 * (x / wf);
        for &(y0, x0, y1, x1, shade) in &rects {
            if y >= y0 && y < y1 && x >= x0 && x < x1 {
                v += shade;
            }
        }
        v += 0.08 * (2.0 * std::f64::consts::PI * (x + 0.5 * y) / period).sin();
        v.clamp(0.0, 1.0)
    });
    (thermal, visible)
}

/// Uniform noise in `[0, 1)`.
pub fn noise(h: usize, w: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[h, w], |_| rng.random::<f64>())
}
