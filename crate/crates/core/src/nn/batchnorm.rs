//! Batch normalization with individually switchable components and an
//! optional statistics refresh period.

use serde::{Deserialize, Serialize};

use super::norm::{apply_norm, group_stats, norm_backward, Grouping, NormCache, NormGradients};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Which parts of the normalization are active. With all four off the
/// layer is the identity map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BnToggles {
    pub use_mean: bool,
    pub use_var: bool,
    pub use_gamma: bool,
    pub use_beta: bool,
}

impl BnToggles {
    pub fn all() -> Self {
        Self {
            use_mean: true,
            use_var: true,
            use_gamma: true,
            use_beta: true,
        }
    }

    pub fn none() -> Self {
        Self {
            use_mean: false,
            use_var: false,
            use_gamma: false,
            use_beta: false,
        }
    }

    /// All sixteen combinations, in binary counting order.
    pub fn every_combination() -> impl Iterator<Item = BnToggles> {
        (0u8..16).map(|m| Self {
            use_mean: m & 1 != 0,
            use_var: m & 2 != 0,
            use_gamma: m & 4 != 0,
            use_beta: m & 8 != 0,
        })
    }
}

impl Default for BnToggles {
    fn default() -> Self {
        Self::all()
    }
}

/// Hyper-parameters shared by every batch-norm layer of a network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BnSettings {
    pub eps: f64,
    /// Running-average coefficient ρ in `running ← ρ·running + (1−ρ)·batch`.
    pub momentum: f64,
    pub toggles: BnToggles,
    /// 1 refreshes statistics every batch, 2 every other batch, and so on.
    pub stat_update_period: usize,
    /// Keep updating running statistics of a component that is toggled off.
    pub track_disabled_stats: bool,
}

impl Default for BnSettings {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            momentum: 0.9,
            toggles: BnToggles::all(),
            stat_update_period: 1,
            track_disabled_stats: true,
        }
    }
}

/// Backward-pass state returned by a training forward. Tied to the layer's
/// forward generation so a cache from an older batch is rejected.
#[derive(Debug, Clone)]
pub struct BnCache {
    pub(crate) norm: NormCache,
    generation: u64,
}

impl BnCache {
    pub fn stats(&self) -> (&[f64], &[f64]) {
        (self.norm.mean(), self.norm.var())
    }

    pub fn fresh(&self) -> bool {
        self.norm.fresh()
    }
}

#[derive(Debug, Clone)]
pub struct BatchNormLayer {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub settings: BnSettings,
    running_mean: Option<Vec<f64>>,
    running_var: Option<Vec<f64>>,
    cached: Option<(Vec<f64>, Vec<f64>)>,
    batch_counter: u64,
    generation: u64,
}

impl BatchNormLayer {
    pub fn new(channels: usize, settings: BnSettings) -> Result<Self> {
        if channels == 0 {
            return Err(Error::dim("batch norm needs at least one channel"));
        }
        if settings.stat_update_period == 0 {
            return Err(Error::Config("stat_update_period must be positive".into()));
        }
        if !(settings.eps > 0.0) {
            return Err(Error::Config("eps must be positive".into()));
        }
        Ok(Self {
            gamma: Tensor::full(&[channels], 1.0)?,
            beta: Tensor::zeros(&[channels])?,
            settings,
            running_mean: None,
            running_var: None,
            cached: None,
            batch_counter: 0,
            generation: 0,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn batch_counter(&self) -> u64 {
        self.batch_counter
    }

    pub fn running_stats(&self) -> Option<(&[f64], &[f64])> {
        match (&self.running_mean, &self.running_var) {
            (Some(m), Some(v)) => Some((m, v)),
            _ => None,
        }
    }

    /// Statistics the next training batch would reuse when it is not a
    /// refresh batch.
    pub fn cached_stats(&self) -> Option<(&[f64], &[f64])> {
        self.cached.as_ref().map(|(m, v)| (m.as_slice(), v.as_slice()))
    }

    pub fn set_running_stats(&mut self, mean: Vec<f64>, var: Vec<f64>) -> Result<()> {
        let c = self.channels();
        if mean.len() != c || var.len() != c {
            return Err(Error::dim("running statistics length differs from channel count"));
        }
        if var.iter().any(|&v| v < 0.0) {
            return Err(Error::Value("running variance must be non-negative".into()));
        }
        self.running_mean = Some(mean);
        self.running_var = Some(var);
        Ok(())
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        let (b, c, h, w) = input.dims4()?;
        if c != self.channels() {
            return Err(Error::dim(format!(
                "input has {c} channels, layer has {}",
                self.channels()
            )));
        }
        if b * h * w < 2 {
            return Err(Error::DegenerateBatch { count: b * h * w });
        }
        Ok(())
    }

    fn is_refresh_batch(&self) -> bool {
        self.cached.is_none() || self.batch_counter % self.settings.stat_update_period as u64 == 0
    }

    /// Statistics a training forward would use now, and whether they were
    /// computed from `input`.
    fn batch_stats(&self, input: &Tensor) -> Result<(Vec<f64>, Vec<f64>, bool)> {
        if self.is_refresh_batch() {
            let s = group_stats(input, Grouping::Batch)?;
            Ok((s.mean, s.var, true))
        } else {
            let (m, v) = self.cached.clone().expect("non-refresh batch has cached stats");
            Ok((m, v, false))
        }
    }

    fn normalize(&self, input: &Tensor, mean: Vec<f64>, var: Vec<f64>, fresh: bool) -> Result<(Tensor, NormCache)> {
        let s = &self.settings;
        let out = apply_norm(input, Grouping::Batch, &mean, &var, &self.gamma, &self.beta, s.toggles, s.eps)?;
        let cache = NormCache {
            grouping: Grouping::Batch,
            input: input.clone(),
            mean,
            var,
            fresh,
            toggles: s.toggles,
            eps: s.eps,
        };
        Ok((out, cache))
    }

    /// Training-mode forward: batch statistics (or the cached ones between
    /// refreshes), running-average update, counter advance.
    pub fn forward_train(&mut self, input: &Tensor) -> Result<(Tensor, BnCache)> {
        self.check_input(input)?;
        let (mean, var, fresh) = self.batch_stats(input)?;
        if fresh {
            self.update_running(&mean, &var);
            self.cached = Some((mean.clone(), var.clone()));
        }
        let (out, norm) = self.normalize(input, mean, var, fresh)?;
        self.batch_counter += 1;
        self.generation += 1;
        Ok((
            out,
            BnCache {
                norm,
                generation: self.generation,
            },
        ))
    }

    /// What [`forward_train`](Self::forward_train) would compute, without
    /// touching any layer state.
    pub fn forward_inspect(&self, input: &Tensor) -> Result<(Tensor, BnCache)> {
        self.check_input(input)?;
        let (mean, var, fresh) = self.batch_stats(input)?;
        let (out, norm) = self.normalize(input, mean, var, fresh)?;
        Ok((
            out,
            BnCache {
                norm,
                generation: self.generation,
            },
        ))
    }

    /// Evaluation-mode forward with the running statistics.
    pub fn forward_eval(&self, input: &Tensor) -> Result<Tensor> {
        let (b, c, _, _) = input.dims4()?;
        if c != self.channels() || b == 0 {
            return Err(Error::dim("input channels differ from layer"));
        }
        let (mean, var) = self.running_stats().ok_or(Error::UninitializedStats)?;
        let s = &self.settings;
        apply_norm(input, Grouping::Batch, mean, var, &self.gamma, &self.beta, s.toggles, s.eps)
    }

    pub fn backward(&self, upstream: &Tensor, cache: &BnCache) -> Result<NormGradients> {
        if cache.generation != self.generation {
            return Err(Error::CacheMismatch(format!(
                "cache from forward generation {} but layer is at {}",
                cache.generation, self.generation
            )));
        }
        norm_backward(upstream, &cache.norm, &self.gamma)
    }

    fn update_running(&mut self, mean: &[f64], var: &[f64]) {
        let rho = self.settings.momentum;
        let t = self.settings.toggles;
        let track = self.settings.track_disabled_stats;
        let blend = |running: &mut Option<Vec<f64>>, batch: &[f64], enabled: bool| {
            if !(enabled || track) {
                return;
            }
            match running {
                Some(r) => {
                    for (rv, &bv) in r.iter_mut().zip(batch) {
                        *rv = rho * *rv + (1.0 - rho) * bv;
                    }
                }
                None => *running = Some(batch.to_vec()),
            }
        };
        blend(&mut self.running_mean, mean, t.use_mean);
        blend(&mut self.running_var, var, t.use_var);
        // A disabled, untracked component still needs a value for eval.
        let c = self.channels();
        self.running_mean.get_or_insert_with(|| vec![0.0; c]);
        self.running_var.get_or_insert_with(|| vec![1.0; c]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn channel_1234() -> Tensor {
        Tensor::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap()
    }

    fn layer_g2_b1() -> BatchNormLayer {
        let mut l = BatchNormLayer::new(1, BnSettings::default()).unwrap();
        l.gamma = Tensor::new(&[1], vec![2.0]).unwrap();
        l.beta = Tensor::new(&[1], vec![1.0]).unwrap();
        l
    }

    // Hand evaluation: μ = 2.5, σ² = 1.25, scale 2/√1.25001.
    const EXPECTED: [f64; 4] = [-1.6832, 0.1056, 1.8944, 3.6832];

    #[test]
    fn train_forward_hand_example() {
        let mut l = layer_g2_b1();
        let (y, cache) = l.forward_train(&channel_1234()).unwrap();
        assert_eq!(cache.stats(), (&[2.5][..], &[1.25][..]));
        for (a, e) in y.data().iter().zip(EXPECTED) {
            assert!((a - e).abs() < 1e-4, "{a} vs {e}");
        }
    }

    #[test]
    fn constant_channel_maps_to_zero() {
        let mut l = BatchNormLayer::new(1, BnSettings::default()).unwrap();
        let (y, _) = l.forward_train(&Tensor::full(&[2, 1, 2, 2], 5.0).unwrap()).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn all_toggles_off_is_bitwise_identity() {
        let settings = BnSettings {
            toggles: BnToggles::none(),
            ..BnSettings::default()
        };
        let mut l = BatchNormLayer::new(2, settings).unwrap();
        l.gamma = Tensor::new(&[2], vec![3.0, -1.0]).unwrap();
        l.beta = Tensor::new(&[2], vec![0.5, 2.0]).unwrap();
        let x = Tensor::new(&[2, 2, 1, 2], vec![1.5, -0.0, 3.0, 1e-300, -7.0, 2.0, 0.25, 9.0]).unwrap();
        let (y, _) = l.forward_train(&x).unwrap();
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&y), bits(&x));
    }

    #[test]
    fn degenerate_batch_rejected() {
        let mut l = BatchNormLayer::new(3, BnSettings::default()).unwrap();
        let x = Tensor::zeros(&[1, 3, 1, 1]).unwrap();
        assert!(matches!(l.forward_train(&x), Err(Error::DegenerateBatch { count: 1 })));
    }

    #[test]
    fn eval_requires_running_stats() {
        let l = BatchNormLayer::new(1, BnSettings::default()).unwrap();
        assert!(matches!(l.forward_eval(&channel_1234()), Err(Error::UninitializedStats)));
    }

    #[test]
    fn eval_with_unit_running_stats() {
        let mut l = BatchNormLayer::new(1, BnSettings::default()).unwrap();
        l.set_running_stats(vec![0.0], vec![1.0]).unwrap();
        let x = channel_1234();
        let y = l.forward_eval(&x).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert_eq!(*a, b / (1.0 + 1e-5f64).sqrt());
        }
    }

    #[test]
    fn eval_with_batch_stats_matches_train() {
        let mut l = layer_g2_b1();
        l.set_running_stats(vec![2.5], vec![1.25]).unwrap();
        let ye = l.forward_eval(&channel_1234()).unwrap();
        let (yt, _) = l.forward_train(&channel_1234()).unwrap();
        assert_eq!(ye, yt);
        for (a, e) in ye.data().iter().zip(EXPECTED) {
            assert!((a - e).abs() < 1e-4);
        }
    }

    #[test]
    fn running_stats_blend_with_rho() {
        let mut l = BatchNormLayer::new(1, BnSettings::default()).unwrap();
        l.forward_train(&channel_1234()).unwrap();
        assert_eq!(l.running_stats().unwrap(), (&[2.5][..], &[1.25][..]));
        let x2 = Tensor::new(&[1, 1, 2, 2], vec![0.0, 0.0, 2.0, 2.0]).unwrap();
        l.forward_train(&x2).unwrap();
        let (m, v) = l.running_stats().unwrap();
        assert!((m[0] - (0.9 * 2.5 + 0.1 * 1.0)).abs() < 1e-15);
        assert!((v[0] - (0.9 * 1.25 + 0.1 * 1.0)).abs() < 1e-15);
    }

    #[test]
    fn alternating_period_reuses_previous_statistics() {
        let settings = BnSettings {
            stat_update_period: 2,
            ..BnSettings::default()
        };
        let mut l = BatchNormLayer::new(1, settings).unwrap();
        let (_, c0) = l.forward_train(&channel_1234()).unwrap();
        let x2 = Tensor::new(&[1, 1, 2, 2], vec![10.0, -3.0, 2.0, 8.0]).unwrap();
        let (_, c1) = l.forward_train(&x2).unwrap();
        assert!(!c1.fresh());
        let bits = |s: &[f64]| s.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(c1.stats().0), bits(c0.stats().0));
        assert_eq!(bits(c1.stats().1), bits(c0.stats().1));
        let (_, c2) = l.forward_train(&x2).unwrap();
        assert!(c2.fresh());
        assert_eq!(c2.stats().0, &[4.25]);
    }

    #[test]
    fn stale_cache_rejected() {
        let mut l = BatchNormLayer::new(1, BnSettings::default()).unwrap();
        let (_, old) = l.forward_train(&channel_1234()).unwrap();
        l.forward_train(&channel_1234()).unwrap();
        let up = Tensor::full(&[1, 1, 2, 2], 1.0).unwrap();
        assert!(matches!(l.backward(&up, &old), Err(Error::CacheMismatch(_))));
    }

    #[test]
    fn grad_beta_is_channel_sum_and_zero_upstream_gives_zero() {
        let mut l = layer_g2_b1();
        let x = Tensor::new(&[2, 1, 1, 3], vec![0.3, -1.0, 2.0, 0.7, 1.1, -0.4]).unwrap();
        let (_, cache) = l.forward_train(&x).unwrap();
        let up = Tensor::new(&[2, 1, 1, 3], vec![0.1, 0.2, -0.3, 0.4, 0.5, 0.6]).unwrap();
        let g = l.backward(&up, &cache).unwrap();
        assert!((g.grad_beta.data()[0] - up.sum()).abs() < 1e-15);
        let g0 = l.backward(&up.zeros_like(), &cache).unwrap();
        assert!(g0.grad_input.data().iter().all(|&v| v == 0.0));
        assert_eq!(g0.grad_gamma.data(), &[0.0]);
        assert_eq!(g0.grad_beta.data(), &[0.0]);
    }

    #[test]
    fn inspect_does_not_mutate() {
        let l = BatchNormLayer::new(1, BnSettings::default()).unwrap();
        let before = format!("{l:?}");
        l.forward_inspect(&channel_1234()).unwrap();
        assert_eq!(before, format!("{l:?}"));
    }
}
