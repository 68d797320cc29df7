//! The work behind each CLI subcommand. Every command writes into `out` and
//! returns the files it wrote.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::{ExperimentConfig, Instrument, Schedule};
use super::emit::{emit, write_condition, write_density_table, write_json, write_noise, write_spectrum};
use super::run::run_experiment;
use crate::error::{Error, Result};
use crate::noise::{noise_estimate, per_example_gradients, LeastSquares, NoiseEstimate, Regression};
use crate::rmt::{condition_report, ks_distance, sample_product_spectrum, FussCatalanDensity, SpectrumSample};

fn ensure_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

pub fn train(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    emit(&run_experiment(cfg)?, out)
}

/// Runs one leg with a single instrument attached. `at_init_only` skips
/// training so the instrument sees the freshly initialized network.
fn single_instrument(cfg: &ExperimentConfig, out: &Path, instrument: Instrument, at_init_only: bool) -> Result<Vec<PathBuf>> {
    let mut cfg = cfg.clone();
    cfg.lr_sweep = None;
    cfg.diagnostics = vec![Schedule { instrument, every: 0 }];
    if at_init_only {
        cfg.steps = Some(0);
    }
    train(&cfg, out)
}

/// Loss along the negative gradient, before and after the configured training.
pub fn probe_loss(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    single_instrument(cfg, out, Instrument::Probe, false)
}

pub fn init_moments(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    single_instrument(cfg, out, Instrument::Moments, true)
}

pub fn coherence(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    single_instrument(cfg, out, Instrument::Coherence, true)
}

pub fn class_heatmap(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    single_instrument(cfg, out, Instrument::Heatmap, true)
}

#[derive(Debug, Serialize)]
struct DensitySummary {
    m: usize,
    support_upper: f64,
    total_mass: f64,
}

/// Density tables on a midpoint grid over each support.
pub fn rmt_density(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(out)?;
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &m in &cfg.rmt.ms {
        let d = FussCatalanDensity::new(m)?;
        let upper = d.support_upper();
        let p = cfg.rmt.points;
        for j in 0..p {
            let x = upper * (j as f64 + 0.5) / p as f64;
            rows.push((m, x, d.density(x)?));
        }
        summary.push(DensitySummary {
            m,
            support_upper: upper,
            total_mass: d.total_mass(),
        });
    }
    let table = out.join("density.csv");
    write_density_table(&table, &rows)?;
    let json = out.join("summary.json");
    write_json(&json, &summary)?;
    Ok(vec![table, json])
}

fn spectra(cfg: &ExperimentConfig) -> Result<Vec<SpectrumSample>> {
    let r = &cfg.rmt;
    r.ms.iter()
        .map(|&m| sample_product_spectrum(m, r.n, &vec![r.sigma; m], r.trials, cfg.seed))
        .collect()
}

#[derive(Debug, Serialize)]
struct SpectrumSummary {
    m: usize,
    n: usize,
    trials: usize,
    eigenvalues: usize,
    ks_distance: f64,
    mean_eigenvalue: f64,
}

/// Monte-Carlo spectra and their distance to the limiting distribution.
pub fn rmt_spectrum(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(out)?;
    let samples = spectra(cfg)?;
    let summary = samples
        .iter()
        .map(|s| {
            let d = FussCatalanDensity::new(s.m)?;
            let ev = s.eigenvalues();
            Ok(SpectrumSummary {
                m: s.m,
                n: s.n,
                trials: s.trials(),
                eigenvalues: ev.len(),
                ks_distance: ks_distance(&ev, |x| d.cdf(x).unwrap_or(f64::NAN))?,
                mean_eigenvalue: ev.iter().sum::<f64>() / ev.len() as f64,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let table = out.join("spectrum.csv");
    write_spectrum(&table, &samples)?;
    let json = out.join("summary.json");
    write_json(&json, &summary)?;
    Ok(vec![table, json])
}

pub fn rmt_condition(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(out)?;
    let report = condition_report(&spectra(cfg)?)?;
    let mut files = write_condition(out, &report)?;
    let json = out.join("summary.json");
    write_json(&json, &report.summaries)?;
    files.push(json);
    Ok(files)
}

/// Per-example gradients of a least-squares model at `w = 0`.
pub fn noise_estimates(cfg: &ExperimentConfig) -> Result<Vec<NoiseEstimate>> {
    let nz = &cfg.noise;
    let data = Regression::random(nz.examples, nz.dim, nz.label_noise, cfg.seed);
    let mut model = LeastSquares { w: vec![0.0; nz.dim] };
    let grads = per_example_gradients(&mut model, &data.examples())?;
    let mut rows = Vec::new();
    for &mode in &nz.modes {
        for &alpha in &nz.alphas {
            for &b in &nz.batch_sizes {
                rows.push(noise_estimate(&grads, b, alpha, nz.trials, cfg.seed, mode)?);
            }
        }
    }
    Ok(rows)
}

pub fn noise_bound(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(out)?;
    let rows = noise_estimates(cfg)?;
    let table = out.join("noise.csv");
    write_noise(&table, &rows)?;
    let json = out.join("summary.json");
    write_json(&json, &rows)?;
    Ok(vec![table, json])
}
