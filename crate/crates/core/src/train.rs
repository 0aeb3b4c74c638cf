//! Toy training loop: Adam on the fusion objective over a handful of pairs.

use crate::autodiff::{AdamConfig, AdamState, Ctx, Tape};
use crate::error::{Error, Result};
use crate::losses::{total_term, LossBreakdown, LossWeights};
use crate::network::{forward, Model};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub adam: AdamConfig,
    pub weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            adam: AdamConfig::default(),
            weights: LossWeights::DEFAULT,
        }
    }
}

/// Loss of the model on one pair and the gradient of every parameter.
pub fn loss_and_grad(
    model: &Model,
    i1: &Tensor,
    i2: &Tensor,
    weights: LossWeights,
) -> Result<(LossBreakdown, std::collections::BTreeMap<String, Tensor>)> {
    let tape = Tape::recording();
    let ctx = Ctx::new(&tape, &model.params);
    let a = tape.constant(i1.clone());
    let b = tape.constant(i2.clone());
    let fused = forward(&ctx, &model.config, &a, &b)?;
    let terms = total_term(&tape, &a, &b, &fused, weights)?;
    let grads = tape.gradients(&terms.total)?;
    Ok((terms.breakdown(), grads))
}

/// Runs `cfg.steps` Adam steps with batch size 1, cycling through `pairs`.
/// `on_step` sees the 1-based step index and the loss before that step's
/// update. Returns the loss trace.
pub fn train_toy(
    model: &mut Model,
    pairs: &[(Tensor, Tensor)],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(usize, &LossBreakdown),
) -> Result<Vec<LossBreakdown>> {
    if pairs.is_empty() {
        return Err(Error::Empty("train_toy"));
    }
    if cfg.steps == 0 {
        return Err(Error::Config("steps must be at least 1".into()));
    }
    let mut adam = AdamState::new(cfg.adam);
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 1..=cfg.steps {
        let (a, b) = &pairs[(step - 1) % pairs.len()];
        let (loss, grads) = loss_and_grad(model, a, b, cfg.weights)?;
        if !loss.total.is_finite() || grads.values().any(|g| !g.is_finite()) {
            return Err(Error::Diverged(step));
        }
        on_step(step, &loss);
        trace.push(loss);
        adam.step(&mut model.params, &grads)?;
    }
    Ok(trace)
}
