//! Minibatch gradient noise: the constant `C = E‖∇ℓ_i − ∇ℓ‖²`, its
//! Monte-Carlo estimate for sampled batches, and closed forms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Model;
use crate::tensor::SeededRng;

/// Per-example gradients, flattened across all parameter groups, with their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    grads: Vec<Vec<f64>>,
    mean: Vec<f64>,
}

impl GradientSet {
    pub fn new(grads: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = grads.first() else {
            return Err(Error::Size("gradient set needs at least one example".into()));
        };
        let d = first.len();
        if grads.iter().any(|g| g.len() != d) {
            return Err(Error::dim("per-example gradients differ in length"));
        }
        let n = grads.len() as f64;
        let mut mean = vec![0.0; d];
        for g in &grads {
            for (m, v) in mean.iter_mut().zip(g) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        Ok(Self { grads, mean })
    }

    /// Scalar gradients, one per example.
    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&v| vec![v]).collect())
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn grads(&self) -> &[Vec<f64>] {
        &self.grads
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    fn deviation_sq(&self, i: usize) -> f64 {
        self.grads[i].iter().zip(&self.mean).map(|(g, m)| (g - m).powi(2)).sum()
    }

    fn check_batch(&self, b: usize) -> Result<()> {
        if b == 0 || b > self.len() {
            return Err(Error::Size(format!("batch size {b} outside 1..={}", self.len())));
        }
        Ok(())
    }
}

/// One gradient per example, each evaluated on its own single-example batch.
pub fn per_example_gradients<M>(model: &mut M, examples: &[M::Batch]) -> Result<GradientSet>
where
    M: Model,
    M::Batch: Sized,
{
    let grads = examples
        .iter()
        .map(|e| model.loss_and_gradient(e).map(|(_, g)| g))
        .collect::<Result<Vec<_>>>()?;
    GradientSet::new(grads)
}

/// `C = (1/N) Σ ‖∇ℓ_i − ∇ℓ‖²`.
pub fn noise_constant(grads: &GradientSet) -> f64 {
    (0..grads.len()).map(|i| grads.deviation_sq(i)).sum::<f64>() / grads.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampling {
    #[default]
    WithReplacement,
    WithoutReplacement,
}

impl Sampling {
    fn draw(self, n: usize, b: usize, rng: &mut SeededRng, out: &mut Vec<usize>) {
        out.clear();
        match self {
            Sampling::WithReplacement => out.extend((0..b).map(|_| rng.below(n))),
            Sampling::WithoutReplacement => {
                let mut pool: Vec<usize> = (0..n).collect();
                for k in 0..b {
                    let j = k + rng.below(n - k);
                    pool.swap(k, j);
                }
                out.extend_from_slice(&pool[..b]);
            }
        }
    }
}

/// Monte-Carlo mean of `‖α∇ℓ − (α/b)Σ_{i∈B} ∇ℓ_i‖²` and its standard error.
/// Trial `t` samples from stream `t` of `seed`.
pub fn empirical_sgd_noise(
    grads: &GradientSet,
    b: usize,
    alpha: f64,
    trials: usize,
    seed: u64,
    mode: Sampling,
) -> Result<(f64, f64)> {
    grads.check_batch(b)?;
    if trials == 0 {
        return Err(Error::Size("need at least one trial".into()));
    }
    let mut idx = Vec::with_capacity(b);
    let mut diff = vec![0.0; grads.dim()];
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for t in 0..trials {
        let mut rng = SeededRng::new(seed, t as u64);
        mode.draw(grads.len(), b, &mut rng, &mut idx);
        // Summing in index order makes a full batch reproduce the mean bit for bit.
        idx.sort_unstable();
        diff.iter_mut().for_each(|d| *d = 0.0);
        for &i in &idx {
            for (d, g) in diff.iter_mut().zip(&grads.grads[i]) {
                *d += g;
            }
        }
        let v = alpha
            * alpha
            * diff
                .iter()
                .zip(grads.mean())
                .map(|(s, m)| (m - s / b as f64).powi(2))
                .sum::<f64>();
        sum += v;
        sum_sq += v * v;
    }
    let n = trials as f64;
    let mean = sum / n;
    let var = if trials > 1 {
        ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok((mean, (var / n).sqrt()))
}

/// `α²·(N−b)/(bN²)·Σ‖Δ_i‖²`.
pub fn closed_form_noise(grads: &GradientSet, b: usize, alpha: f64) -> Result<f64> {
    grads.check_batch(b)?;
    let n = grads.len() as f64;
    let total: f64 = (0..grads.len()).map(|i| grads.deviation_sq(i)).sum();
    Ok(alpha * alpha * (n - b as f64) / (b as f64 * n * n) * total)
}

/// The bound `α²C/b`.
pub fn noise_bound(grads: &GradientSet, b: usize, alpha: f64) -> Result<f64> {
    grads.check_batch(b)?;
    Ok(alpha * alpha * noise_constant(grads) / b as f64)
}

/// Exact expectation under each sampling design: `α²C/b` with replacement,
/// `α²C(N−b)/(b(N−1))` without.
pub fn exact_noise(grads: &GradientSet, b: usize, alpha: f64, mode: Sampling) -> Result<f64> {
    let bound = noise_bound(grads, b, alpha)?;
    let n = grads.len();
    Ok(match mode {
        Sampling::WithReplacement => bound,
        Sampling::WithoutReplacement if n == 1 => 0.0,
        Sampling::WithoutReplacement => bound * (n - b) as f64 / (n - 1) as f64,
    })
}

/// Exhaustive average over all `N^b` ordered with-replacement batches.
pub fn enumerate_noise(grads: &GradientSet, b: usize, alpha: f64) -> Result<f64> {
    grads.check_batch(b)?;
    let n = grads.len();
    let count = n
        .checked_pow(b as u32)
        .filter(|&c| c <= 1 << 24)
        .ok_or_else(|| Error::Size(format!("{n}^{b} batches is too many to enumerate")))?;
    let mut digits = vec![0usize; b];
    let mut total = 0.0;
    for _ in 0..count {
        total += (0..grads.dim())
            .map(|k| {
                let s: f64 = digits.iter().map(|&i| grads.grads[i][k]).sum();
                (alpha * (grads.mean[k] - s / b as f64)).powi(2)
            })
            .sum::<f64>();
        for d in digits.iter_mut() {
            *d += 1;
            if *d < n {
                break;
            }
            *d = 0;
        }
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseEstimate {
    pub alpha: f64,
    pub b: usize,
    #[serde(rename = "C")]
    pub c: f64,
    pub empirical: f64,
    pub std_err: f64,
    pub closed_form: f64,
    pub bound: f64,
    pub exact: f64,
    pub mode: Sampling,
}

pub fn noise_estimate(
    grads: &GradientSet,
    b: usize,
    alpha: f64,
    trials: usize,
    seed: u64,
    mode: Sampling,
) -> Result<NoiseEstimate> {
    let (empirical, std_err) = empirical_sgd_noise(grads, b, alpha, trials, seed, mode)?;
    Ok(NoiseEstimate {
        alpha,
        b,
        c: noise_constant(grads),
        empirical,
        std_err,
        closed_form: closed_form_noise(grads, b, alpha)?,
        bound: noise_bound(grads, b, alpha)?,
        exact: exact_noise(grads, b, alpha, mode)?,
        mode,
    })
}

/// Labelled regression data for [`LeastSquares`].
#[derive(Debug, Clone, PartialEq)]
pub struct Regression {
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<f64>,
}

impl Regression {
    /// `y = wᵀx + noise·ε` with standard normal `x` and `ε`.
    pub fn random(n: usize, dim: usize, noise: f64, seed: u64) -> Self {
        let mut rng = SeededRng::new(seed, 0);
        let w: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.normal()).collect()).collect();
        let ys = xs
            .iter()
            .map(|x| x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + noise * rng.normal())
            .collect();
        Self { xs, ys }
    }

    pub fn examples(&self) -> Vec<Regression> {
        self.xs
            .iter()
            .zip(&self.ys)
            .map(|(x, &y)| Regression {
                xs: vec![x.clone()],
                ys: vec![y],
            })
            .collect()
    }
}

/// Mean squared error `(1/n) Σ (wᵀx_i − y_i)²`.
#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquares {
    pub w: Vec<f64>,
}

impl LeastSquares {
    fn residual(&self, x: &[f64], y: f64) -> f64 {
        x.iter().zip(&self.w).map(|(a, b)| a * b).sum::<f64>() - y
    }
}

impl Model for LeastSquares {
    type Batch = Regression;

    fn parameters(&self) -> Vec<f64> {
        self.w.clone()
    }

    fn set_parameters(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.w.len() {
            return Err(Error::dim("parameter vector length"));
        }
        self.w.copy_from_slice(flat);
        Ok(())
    }

    fn loss(&mut self, data: &Regression) -> Result<f64> {
        if data.xs.is_empty() {
            return Err(Error::Size("empty regression batch".into()));
        }
        let n = data.xs.len() as f64;
        Ok(data.xs.iter().zip(&data.ys).map(|(x, &y)| self.residual(x, y).powi(2)).sum::<f64>() / n)
    }

    fn loss_and_gradient(&mut self, data: &Regression) -> Result<(f64, Vec<f64>)> {
        let loss = self.loss(data)?;
        let n = data.xs.len() as f64;
        let mut g = vec![0.0; self.w.len()];
        for (x, &y) in data.xs.iter().zip(&data.ys) {
            if x.len() != self.w.len() {
                return Err(Error::dim("feature length differs from weight length"));
            }
            let r = 2.0 * self.residual(x, y) / n;
            for (gi, xi) in g.iter_mut().zip(x) {
                *gi += r * xi;
            }
        }
        Ok((loss, g))
    }
}
