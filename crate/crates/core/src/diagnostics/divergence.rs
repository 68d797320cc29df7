use serde::{Deserialize, Serialize};

use super::moments::{depth_moment_profile, MomentProfile};
use crate::error::{Error, Result};
use crate::nn::{Batch, Network};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceConfig {
    pub threshold: f64,
    /// Fractions of the diverging update to re-apply; sorted, containing 0 and 1.
    pub fractions: Vec<f64>,
}

impl Default for DivergenceConfig {
    fn default() -> Self {
        Self {
            threshold: 1e3,
            fractions: vec![0.0, 0.25, 0.5, 0.75, 1.0],
        }
    }
}

impl DivergenceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0) {
            return Err(Error::Config("divergence threshold must be positive".into()));
        }
        let f = &self.fractions;
        if f.first() != Some(&0.0) || f.last() != Some(&1.0) || f.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "divergence fractions must ascend from 0 to 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceEvent {
    pub batch_index: usize,
    pub pre_loss: f64,
    pub post_loss: f64,
    pub fractions: Vec<f64>,
    /// Moment profile with each fraction of the update applied.
    pub profiles: Vec<MomentProfile>,
}

pub fn is_divergent(loss: f64, threshold: f64) -> bool {
    !loss.is_finite() || loss > threshold
}

/// Index of the first divergent loss in a sequence.
pub fn first_divergence(losses: &[f64], threshold: f64) -> Option<usize> {
    losses.iter().position(|&l| is_divergent(l, threshold))
}

/// `pre + f·(post − pre)`, exact at `f = 0` and `f = 1`.
fn interpolate(pre: &[Tensor], post: &[Tensor], f: f64) -> Result<Vec<Tensor>> {
    if f == 0.0 {
        return Ok(pre.to_vec());
    }
    if f == 1.0 {
        return Ok(post.to_vec());
    }
    pre.iter()
        .zip(post)
        .map(|(a, b)| a.zip_with(b, |x, y| x + f * (y - x)))
        .collect()
}

/// If `post_loss` is divergent, re-applies the update from `pre_params` to
/// the network's current (post-update) parameters at each configured
/// fraction and records the moment profile on `batch`. The network's
/// parameters are left as they were on entry.
pub fn capture_divergence(
    net: &mut Network,
    batch: &Batch,
    pre_params: &[Tensor],
    batch_index: usize,
    pre_loss: f64,
    post_loss: f64,
    config: &DivergenceConfig,
) -> Result<Option<DivergenceEvent>> {
    if !is_divergent(post_loss, config.threshold) {
        return Ok(None);
    }
    config.validate()?;
    let post = net.param_snapshot();
    let mut profiles = Vec::with_capacity(config.fractions.len());
    let mut outcome = Ok(());
    for &f in &config.fractions {
        let step = interpolate(pre_params, &post, f)
            .and_then(|p| net.restore_params(&p))
            .and_then(|_| depth_moment_profile(net, batch));
        match step {
            Ok(p) => profiles.push(p),
            Err(e) => {
                outcome = Err(e);
                break;
            }
        }
    }
    net.restore_params(&post)?;
    outcome?;
    Ok(Some(DivergenceEvent {
        batch_index,
        pre_loss,
        post_loss,
        fractions: config.fractions.clone(),
        profiles,
    }))
}

/// Training-loop hook: fires at most once, on the first divergent step.
#[derive(Debug, Clone, Default)]
pub struct DivergenceMonitor {
    pub config: DivergenceConfig,
    event: Option<DivergenceEvent>,
}

impl DivergenceMonitor {
    pub fn new(config: DivergenceConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, event: None })
    }

    pub fn event(&self) -> Option<&DivergenceEvent> {
        self.event.as_ref()
    }

    pub fn into_event(self) -> Option<DivergenceEvent> {
        self.event
    }

    /// Returns true when this step diverged (and captured the event).
    pub fn observe(
        &mut self,
        net: &mut Network,
        batch: &Batch,
        pre_params: &[Tensor],
        batch_index: usize,
        pre_loss: f64,
        post_loss: f64,
    ) -> Result<bool> {
        if self.event.is_some() {
            return Ok(true);
        }
        self.event = capture_divergence(net, batch, pre_params, batch_index, pre_loss, post_loss, &self.config)?;
        Ok(self.event.is_some())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decreasing_losses_never_fire() {
        assert_eq!(first_divergence(&[2.3, 2.1, 1.9], 1e3), None);
        assert_eq!(first_divergence(&[2.3, 1e4, f64::NAN], 1e3), Some(1));
        assert_eq!(first_divergence(&[2.3, f64::INFINITY], 1e3), Some(1));
    }

    #[test]
    fn fractions_must_span_zero_to_one() {
        let bad = DivergenceConfig {
            fractions: vec![0.0, 0.5],
            ..DivergenceConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(DivergenceConfig::default().validate().is_ok());
    }
}
