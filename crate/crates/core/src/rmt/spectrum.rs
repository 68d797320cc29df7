use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::{gram_eigenvalues, matmul, SeededRng, Tensor};

/// Gram eigenvalues below this are treated as numerically zero.
pub const LAMBDA_FLOOR: f64 = 1e-300;

/// Gram spectra of `X = X₁⋯X_M` over independent trials, where `X_i` has
/// i.i.d. `N(0, σ_i²/N)` entries.
#[derive(Debug, Clone, Serialize)]
pub struct SpectrumSample {
    pub m: usize,
    pub n: usize,
    pub sigmas: Vec<f64>,
    pub seed: u64,
    /// Per-trial ascending eigenvalues of `XᵀX` before rescaling.
    pub raw: Vec<Vec<f64>>,
    /// Per-trial eigenvalues divided by `(Πσ_i)²`.
    pub rescaled: Vec<Vec<f64>>,
}

impl SpectrumSample {
    pub fn trials(&self) -> usize {
        self.rescaled.len()
    }

    /// All rescaled eigenvalues, ascending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut all: Vec<f64> = self.rescaled.iter().flatten().copied().collect();
        all.sort_by(f64::total_cmp);
        all
    }

    pub fn raw_eigenvalues(&self) -> Vec<f64> {
        let mut all: Vec<f64> = self.raw.iter().flatten().copied().collect();
        all.sort_by(f64::total_cmp);
        all
    }
}

/// Trial `t` draws from stream `t` of `seed`, so trials are independent of
/// evaluation order.
pub fn sample_product_spectrum(m: usize, n: usize, sigmas: &[f64], trials: usize, seed: u64) -> Result<SpectrumSample> {
    if m == 0 || trials == 0 {
        return Err(Error::Size("need M ≥ 1 and at least one trial".into()));
    }
    if n < 2 {
        return Err(Error::Size(format!("matrix size N = {n} must be at least 2")));
    }
    if sigmas.len() != m {
        return Err(Error::Size(format!("{} scales for {m} matrices", sigmas.len())));
    }
    if let Some(s) = sigmas.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
        return Err(Error::Value(format!("entry scale {s} must be positive")));
    }
    let scale2 = sigmas.iter().product::<f64>().powi(2);
    let mut raw = Vec::with_capacity(trials);
    for t in 0..trials {
        let mut rng = SeededRng::new(seed, t as u64);
        let mut product: Option<Tensor> = None;
        for &s in sigmas {
            let sd = s / (n as f64).sqrt();
            let factor = Tensor::new(&[n, n], (0..n * n).map(|_| sd * rng.normal()).collect())?;
            product = Some(match product {
                None => factor,
                Some(p) => matmul(&p, &factor)?,
            });
        }
        raw.push(gram_eigenvalues(&product.expect("m ≥ 1"))?);
    }
    let rescaled = raw.iter().map(|ev| ev.iter().map(|v| v / scale2).collect()).collect();
    Ok(SpectrumSample {
        m,
        n,
        sigmas: sigmas.to_vec(),
        seed,
        raw,
        rescaled,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionRow {
    pub m: usize,
    pub trial: usize,
    /// `√(λ_max/λ_min)`; infinite when saturated.
    pub kappa: f64,
    pub sigma_max: f64,
    /// `λ_min` fell below [`LAMBDA_FLOOR`].
    pub saturated: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionSummary {
    pub m: usize,
    pub mean_kappa: f64,
    pub std_kappa: f64,
    pub median_kappa: f64,
    pub mean_sigma_max: f64,
    pub std_sigma_max: f64,
    /// Trials excluded from the κ statistics.
    pub saturated: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionReport {
    pub rows: Vec<ConditionRow>,
    pub summaries: Vec<ConditionSummary>,
}

impl ConditionRow {
    pub fn from_eigenvalues(m: usize, trial: usize, ev: &[f64]) -> Result<Self> {
        let (lo, hi) = ev.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if ev.is_empty() || !(hi > 0.0) {
            return Err(Error::Value("spectrum has no positive eigenvalue".into()));
        }
        let saturated = lo < LAMBDA_FLOOR;
        Ok(Self {
            m,
            trial,
            kappa: if saturated { f64::INFINITY } else { (hi / lo).sqrt() },
            sigma_max: hi.sqrt(),
            saturated,
        })
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// Condition numbers and largest singular values of the rescaled spectra,
/// one summary per sample in input order.
pub fn condition_report(samples: &[SpectrumSample]) -> Result<ConditionReport> {
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for s in samples {
        let these: Vec<ConditionRow> = s
            .rescaled
            .iter()
            .enumerate()
            .map(|(t, ev)| ConditionRow::from_eigenvalues(s.m, t, ev))
            .collect::<Result<_>>()?;
        let mut kappas: Vec<f64> = these.iter().filter(|r| !r.saturated).map(|r| r.kappa).collect();
        let sig: Vec<f64> = these.iter().map(|r| r.sigma_max).collect();
        let (mean_kappa, std_kappa) = mean_std(&kappas);
        let (mean_sigma_max, std_sigma_max) = mean_std(&sig);
        summaries.push(ConditionSummary {
            m: s.m,
            mean_kappa,
            std_kappa,
            median_kappa: median(&mut kappas),
            mean_sigma_max,
            std_sigma_max,
            saturated: these.iter().filter(|r| r.saturated).count(),
        });
        rows.extend(these);
    }
    Ok(ConditionReport { rows, summaries })
}
