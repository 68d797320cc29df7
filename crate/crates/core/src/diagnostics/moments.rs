use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Batch, Mode, Network};
use crate::tensor::Tensor;

/// Per-channel mean and population variance over `(b, x, y)`.
pub fn channel_moments(acts: &Tensor) -> Result<Vec<(f64, f64)>> {
    let (b, c, h, w) = acts.dims4()?;
    let plane = h * w;
    let n = (b * plane) as f64;
    let data = acts.data();
    let planes = |ci: usize| (0..b).map(move |bi| &data[(bi * c + ci) * plane..(bi * c + ci + 1) * plane]);
    Ok((0..c)
        .map(|ci| {
            let mean = planes(ci).flatten().sum::<f64>() / n;
            let var = planes(ci).flatten().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            (mean, var)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerMoments {
    pub layer: usize,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

impl LayerMoments {
    pub fn mean_of_means(&self) -> f64 {
        self.means.iter().sum::<f64>() / self.means.len() as f64
    }

    /// Average channel variance of the layer.
    pub fn mean_variance(&self) -> f64 {
        self.variances.iter().sum::<f64>() / self.variances.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentProfile {
    pub layers: Vec<LayerMoments>,
}

impl MomentProfile {
    /// Last layer's mean channel variance over the first layer's.
    pub fn growth_ratio(&self) -> Option<f64> {
        let first = self.layers.first()?.mean_variance();
        let last = self.layers.last()?.mean_variance();
        Some(last / first)
    }
}

pub fn profile_from_taps(taps: &[Tensor]) -> Result<MomentProfile> {
    if taps.is_empty() {
        return Err(Error::dim("no instrumented layers"));
    }
    let layers = taps
        .iter()
        .enumerate()
        .map(|(layer, t)| {
            let (means, variances) = channel_moments(t)?.into_iter().unzip();
            Ok(LayerMoments {
                layer,
                means,
                variances,
            })
        })
        .collect::<Result<_>>()?;
    Ok(MomentProfile { layers })
}

/// Channel moments of every unit's tap (pre-normalization in normalized
/// units, pre-ReLU otherwise), from an inspect-mode forward on `batch`.
pub fn depth_moment_profile(net: &mut Network, batch: &Batch) -> Result<MomentProfile> {
    net.forward(&batch.inputs, Mode::Inspect)?;
    profile_from_taps(&net.activation_snapshot()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_tensor() {
        let m = channel_moments(&Tensor::full(&[2, 3, 2, 2], 3.0).unwrap()).unwrap();
        assert!(m.iter().all(|&(mu, v)| mu == 3.0 && v == 0.0));
    }

    #[test]
    fn hand_example() {
        let t = Tensor::new(&[2, 1, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(channel_moments(&t).unwrap(), vec![(2.5, 1.25)]);
    }

    #[test]
    fn rank_must_be_four() {
        assert!(channel_moments(&Tensor::zeros(&[3, 3]).unwrap()).is_err());
    }
}
