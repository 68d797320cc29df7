//! Shared normalization machinery.
//!
//! Every normalizer here computes a mean and population variance over some
//! grouping of a `[b, c, h, w]` tensor, then applies
//! `γ_c · (x − μ_g) / √(σ²_g + ε) + β_c` with per-channel affine parameters.
//! Batch normalization is the `Batch` grouping; layer, instance and group
//! normalization differ only in which axes the statistics pool over.

use serde::{Deserialize, Serialize};

use super::batchnorm::BnToggles;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Which elements share normalization statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grouping {
    /// `(b, x, y)` per channel.
    Batch,
    /// `(c, x, y)` per sample.
    Layer,
    /// `(x, y)` per sample and channel.
    Instance,
    /// `(channels in group, x, y)` per sample, `G` groups.
    Group(usize),
}

impl Grouping {
    pub(crate) fn validate(&self, channels: usize) -> Result<()> {
        if let Grouping::Group(g) = *self {
            if g == 0 || channels % g != 0 {
                return Err(Error::Grouping {
                    groups: g,
                    channels,
                });
            }
        }
        Ok(())
    }

    fn group_count(&self, b: usize, c: usize) -> usize {
        match *self {
            Grouping::Batch => c,
            Grouping::Layer => b,
            Grouping::Instance => b * c,
            Grouping::Group(g) => b * g,
        }
    }

    #[inline]
    fn group_of(&self, bi: usize, ci: usize, c: usize) -> usize {
        match *self {
            Grouping::Batch => ci,
            Grouping::Layer => bi,
            Grouping::Instance => bi * c + ci,
            Grouping::Group(g) => bi * g + ci / (c / g),
        }
    }

    fn elements_per_group(&self, b: usize, c: usize, plane: usize) -> usize {
        match *self {
            Grouping::Batch => b * plane,
            Grouping::Layer => c * plane,
            Grouping::Instance => plane,
            Grouping::Group(g) => (c / g) * plane,
        }
    }
}

/// Per-group mean and population variance.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// Elements per group.
    pub count: usize,
}

/// Two-pass mean and population variance per group. Within a group the
/// elements are accumulated in memory order.
pub fn group_stats(input: &Tensor, grouping: Grouping) -> Result<GroupStats> {
    let (b, c, h, w) = input.dims4()?;
    grouping.validate(c)?;
    let plane = h * w;
    let groups = grouping.group_count(b, c);
    let count = grouping.elements_per_group(b, c, plane);
    let data = input.data();
    let mut sum = vec![0.0; groups];
    for bi in 0..b {
        for ci in 0..c {
            let g = grouping.group_of(bi, ci, c);
            let off = (bi * c + ci) * plane;
            for &v in &data[off..off + plane] {
                sum[g] += v;
            }
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
    let mut sq = vec![0.0; groups];
    for bi in 0..b {
        for ci in 0..c {
            let g = grouping.group_of(bi, ci, c);
            let m = mean[g];
            let off = (bi * c + ci) * plane;
            for &v in &data[off..off + plane] {
                let d = v - m;
                sq[g] += d * d;
            }
        }
    }
    let var = sq.iter().map(|s| s / count as f64).collect();
    Ok(GroupStats { mean, var, count })
}

/// Everything the backward pass of a normalizer needs.
#[derive(Debug, Clone)]
pub struct NormCache {
    pub(crate) grouping: Grouping,
    pub(crate) input: Tensor,
    pub(crate) mean: Vec<f64>,
    pub(crate) var: Vec<f64>,
    /// Whether `mean`/`var` were computed from `input` (and so depend on it).
    pub(crate) fresh: bool,
    pub(crate) toggles: BnToggles,
    pub(crate) eps: f64,
}

impl NormCache {
    pub fn input_shape(&self) -> &[usize] {
        self.input.shape()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn var(&self) -> &[f64] {
        &self.var
    }

    pub fn fresh(&self) -> bool {
        self.fresh
    }
}

#[derive(Debug, Clone)]
pub struct NormGradients {
    pub grad_input: Tensor,
    pub grad_gamma: Tensor,
    pub grad_beta: Tensor,
}

/// Applies normalization with the given statistics. Disabled components are
/// skipped entirely, so with every toggle off the output is the input bitwise.
pub(crate) fn apply_norm(
    input: &Tensor,
    grouping: Grouping,
    mean: &[f64],
    var: &[f64],
    gamma: &Tensor,
    beta: &Tensor,
    toggles: BnToggles,
    eps: f64,
) -> Result<Tensor> {
    let (b, c, h, w) = input.dims4()?;
    check_affine(gamma, beta, c)?;
    let plane = h * w;
    let mut out = input.clone();
    let od = out.data_mut();
    let (gd, bd) = (gamma.data(), beta.data());
    for bi in 0..b {
        for ci in 0..c {
            let g = grouping.group_of(bi, ci, c);
            let m = mean[g];
            let r = 1.0 / (var[g] + eps).sqrt();
            let off = (bi * c + ci) * plane;
            for v in &mut od[off..off + plane] {
                let mut y = *v;
                if toggles.use_mean {
                    y -= m;
                }
                if toggles.use_var {
                    y *= r;
                }
                if toggles.use_gamma {
                    y *= gd[ci];
                }
                if toggles.use_beta {
                    y += bd[ci];
                }
                *v = y;
            }
        }
    }
    Ok(out)
}

fn check_affine(gamma: &Tensor, beta: &Tensor, c: usize) -> Result<()> {
    if gamma.len() != c || beta.len() != c {
        return Err(Error::dim(format!(
            "affine parameters have {} / {} entries for {c} channels",
            gamma.len(),
            beta.len()
        )));
    }
    Ok(())
}

/// Backward pass for [`apply_norm`], differentiating through the statistics
/// when they were computed from the cached input.
pub(crate) fn norm_backward(upstream: &Tensor, cache: &NormCache, gamma: &Tensor) -> Result<NormGradients> {
    if upstream.shape() != cache.input.shape() {
        return Err(Error::CacheMismatch(format!(
            "upstream shape {:?} does not match cached input {:?}",
            upstream.shape(),
            cache.input.shape()
        )));
    }
    let (b, c, h, w) = cache.input.dims4()?;
    let plane = h * w;
    let grouping = cache.grouping;
    let groups = grouping.group_count(b, c);
    let n = grouping.elements_per_group(b, c, plane) as f64;
    let t = cache.toggles;
    let x = cache.input.data();
    let up = upstream.data();
    let gd = gamma.data();

    let inv_std = |g: usize| {
        if t.use_var {
            1.0 / (cache.var[g] + cache.eps).sqrt()
        } else {
            1.0
        }
    };
    let center = |g: usize| if t.use_mean { cache.mean[g] } else { 0.0 };

    let mut grad_gamma = vec![0.0; c];
    let mut grad_beta = vec![0.0; c];
    // Per-group sums of dxhat and dxhat·(x − m).
    let mut s1 = vec![0.0; groups];
    let mut s2 = vec![0.0; groups];
    for bi in 0..b {
        for ci in 0..c {
            let g = grouping.group_of(bi, ci, c);
            let (m, r) = (center(g), inv_std(g));
            let scale = if t.use_gamma { gd[ci] } else { 1.0 };
            let off = (bi * c + ci) * plane;
            for j in off..off + plane {
                let xc = x[j] - m;
                if t.use_gamma {
                    grad_gamma[ci] += up[j] * xc * r;
                }
                if t.use_beta {
                    grad_beta[ci] += up[j];
                }
                let dxhat = up[j] * scale;
                s1[g] += dxhat;
                s2[g] += dxhat * xc;
            }
        }
    }

    let mut gin = vec![0.0; x.len()];
    for bi in 0..b {
        for ci in 0..c {
            let g = grouping.group_of(bi, ci, c);
            let r = inv_std(g);
            let scale = if t.use_gamma { gd[ci] } else { 1.0 };
            let off = (bi * c + ci) * plane;
            for j in off..off + plane {
                let mut d = r * up[j] * scale;
                if cache.fresh {
                    if t.use_mean {
                        d -= r * s1[g] / n;
                    }
                    if t.use_var {
                        d -= r * r * r * (x[j] - cache.mean[g]) * s2[g] / n;
                    }
                }
                gin[j] = d;
            }
        }
    }
    Ok(NormGradients {
        grad_input: Tensor::new(cache.input.shape(), gin)?,
        grad_gamma: Tensor::new(&[c], grad_gamma)?,
        grad_beta: Tensor::new(&[c], grad_beta)?,
    })
}

/// Normalizes `input` with statistics pooled according to `grouping`,
/// followed by the per-channel affine map. All components are enabled.
pub fn generalized_norm(
    input: &Tensor,
    grouping: Grouping,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
) -> Result<(Tensor, NormCache)> {
    let stats = group_stats(input, grouping)?;
    if stats.count < 2 {
        return Err(Error::DegenerateBatch { count: stats.count });
    }
    let toggles = BnToggles::all();
    let out = apply_norm(input, grouping, &stats.mean, &stats.var, gamma, beta, toggles, eps)?;
    Ok((
        out,
        NormCache {
            grouping,
            input: input.clone(),
            mean: stats.mean,
            var: stats.var,
            fresh: true,
            toggles,
            eps,
        },
    ))
}

pub fn generalized_norm_backward(upstream: &Tensor, cache: &NormCache, gamma: &Tensor) -> Result<NormGradients> {
    norm_backward(upstream, cache, gamma)
}

/// A parameterised layer/instance/group normalizer. These have no running
/// statistics: evaluation uses the same per-sample statistics as training.
#[derive(Debug, Clone)]
pub struct GroupedNorm {
    pub grouping: Grouping,
    pub gamma: Tensor,
    pub beta: Tensor,
    pub eps: f64,
}

impl GroupedNorm {
    pub fn new(channels: usize, grouping: Grouping, eps: f64) -> Result<Self> {
        grouping.validate(channels)?;
        Ok(Self {
            grouping,
            gamma: Tensor::full(&[channels], 1.0)?,
            beta: Tensor::zeros(&[channels])?,
            eps,
        })
    }

    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, NormCache)> {
        generalized_norm(input, self.grouping, &self.gamma, &self.beta, self.eps)
    }

    pub fn backward(&self, upstream: &Tensor, cache: &NormCache) -> Result<NormGradients> {
        norm_backward(upstream, cache, &self.gamma)
    }
}
