use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Model;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossProbeCurve {
    pub alphas: Vec<f64>,
    /// `loss(θ − α∇) / loss(θ)` on the probed batch.
    pub relative_losses: Vec<f64>,
    /// Entries whose probe loss was NaN or infinite.
    pub nonfinite: Vec<bool>,
    pub base_loss: f64,
}

/// Zero followed by 25 log-spaced step sizes from 1e-5 to 10.
pub fn default_probe_alphas() -> Vec<f64> {
    std::iter::once(0.0)
        .chain((0..25).map(|i| 10f64.powf(-5.0 + 6.0 * i as f64 / 24.0)))
        .collect()
}

/// Relative minibatch loss along the negative gradient for each step size.
/// Parameters are restored bit-exactly before returning, on success or error.
pub fn loss_step_probe<M: Model>(model: &mut M, batch: &M::Batch, alphas: &[f64]) -> Result<LossProbeCurve> {
    if alphas.is_empty() || !alphas.contains(&0.0) {
        return Err(Error::Value("probe step sizes must include 0".into()));
    }
    if alphas.iter().any(|a| !(*a >= 0.0) || !a.is_finite()) || alphas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Value("probe step sizes must be finite, non-negative and ascending".into()));
    }
    let origin = model.parameters();
    let result = probe_from(model, batch, alphas, &origin);
    model.set_parameters(&origin)?;
    result
}

fn probe_from<M: Model>(model: &mut M, batch: &M::Batch, alphas: &[f64], origin: &[f64]) -> Result<LossProbeCurve> {
    let (base_loss, grad) = model.loss_and_gradient(batch)?;
    let mut relative_losses = Vec::with_capacity(alphas.len());
    let mut nonfinite = Vec::with_capacity(alphas.len());
    let mut shifted = vec![0.0; origin.len()];
    for &alpha in alphas {
        let rel = if alpha == 0.0 {
            1.0
        } else {
            for ((s, p), g) in shifted.iter_mut().zip(origin).zip(&grad) {
                *s = p - alpha * g;
            }
            model.set_parameters(&shifted)?;
            model.loss(batch)? / base_loss
        };
        nonfinite.push(!rel.is_finite());
        relative_losses.push(rel);
    }
    Ok(LossProbeCurve {
        alphas: alphas.to_vec(),
        relative_losses,
        nonfinite,
        base_loss,
    })
}
