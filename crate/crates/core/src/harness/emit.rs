use std::fs::{self, File};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::ExperimentConfig;
use super::data::ChannelStats;
use super::run::{LegOutcome, MetricRow, RunArtifact};
use crate::diagnostics::DivergenceEvent;
use crate::error::{Error, Result};
use crate::noise::NoiseEstimate;
use crate::rmt::{ConditionReport, SpectrumSample};

pub const METRIC_COLUMNS: [&str; 6] = ["step", "epoch", "lr", "loss", "train_acc", "test_acc"];

/// Seventeen significant digits: enough to round-trip every `f64`.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn flag(b: bool) -> String {
    u8::from(b).to_string()
}

/// Writes a CSV file with the given header and rows.
pub fn write_csv<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let ser = |e: csv::Error| Error::Serialize(format!("{}: {e}", path.display()));
    w.write_record(header).map_err(ser)?;
    for row in rows {
        w.write_record(&row).map_err(ser)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a CSV file into its header and string rows.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let ser = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    let header = r.headers().map_err(ser)?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|rec| rec.iter().map(String::from).collect()).map_err(ser))
        .collect::<Result<_>>()?;
    Ok((header, rows))
}

pub fn write_metrics(path: &Path, rows: &[MetricRow]) -> Result<()> {
    write_csv(
        path,
        &METRIC_COLUMNS,
        rows.iter().map(|r| {
            vec![
                r.step.to_string(),
                num(r.epoch),
                num(r.lr),
                num(r.loss),
                num(r.train_acc),
                num(r.test_acc),
            ]
        }),
    )
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRow>> {
    let (header, rows) = read_csv(path)?;
    if header != METRIC_COLUMNS {
        return Err(Error::Format(format!("unexpected metrics header {header:?}")));
    }
    let f = |s: &str| s.parse::<f64>().map_err(|_| Error::Format(format!("bad number `{s}`")));
    rows.iter()
        .map(|r| {
            Ok(MetricRow {
                step: r[0].parse().map_err(|_| Error::Format(format!("bad step `{}`", r[0])))?,
                epoch: f(&r[1])?,
                lr: f(&r[2])?,
                loss: f(&r[3])?,
                train_acc: f(&r[4])?,
                test_acc: f(&r[5])?,
            })
        })
        .collect()
}

fn write_leg_diagnostics(dir: &Path, leg: &LegOutcome, files: &mut Vec<PathBuf>) -> Result<()> {
    let d = &leg.diagnostics;
    let mut emit = |name: &str, header: &[&str], rows: Vec<Vec<String>>, present: bool| -> Result<()> {
        if present {
            let path = dir.join(name);
            write_csv(&path, header, rows)?;
            files.push(path);
        }
        Ok(())
    };
    emit(
        "diag_moments.csv",
        &["step", "layer", "channel", "mean", "variance"],
        d.moments
            .iter()
            .flat_map(|(s, p)| moment_rows(*s, p.layers.iter()))
            .collect(),
        !d.moments.is_empty(),
    )?;
    emit(
        "diag_coherence.csv",
        &["step", "layer", "a", "partial_b", "partial_xy", "b_abs", "ratio", "saturated"],
        d.coherence
            .iter()
            .flat_map(|(s, rows)| {
                rows.iter().map(move |r| {
                    vec![
                        s.to_string(),
                        r.layer.to_string(),
                        num(r.a),
                        num(r.partial_b),
                        num(r.partial_xy),
                        num(r.b_abs),
                        num(r.ratio),
                        flag(r.saturated),
                    ]
                })
            })
            .collect(),
        !d.coherence.is_empty(),
    )?;
    emit(
        "diag_heatmap.csv",
        &["step", "row", "label", "class", "value"],
        d.heatmap
            .iter()
            .flat_map(|(s, h)| {
                let k = h.matrix.shape()[1];
                h.matrix.data().chunks(k).enumerate().flat_map(move |(row, vals)| {
                    vals.iter().enumerate().map(move |(class, v)| {
                        vec![
                            s.to_string(),
                            row.to_string(),
                            h.labels[row].to_string(),
                            class.to_string(),
                            num(*v),
                        ]
                    })
                })
            })
            .collect(),
        !d.heatmap.is_empty(),
    )?;
    let opt = |v: Option<f64>| v.map_or_else(String::new, num);
    emit(
        "diag_histogram.csv",
        &["step", "layer", "count", "mean", "std", "excess_kurtosis", "tail_ratio", "max_abs"],
        d.histogram
            .iter()
            .flat_map(|(s, layers)| {
                layers.iter().map(move |l| {
                    let h = &l.stats;
                    vec![
                        s.to_string(),
                        l.layer.to_string(),
                        h.count.to_string(),
                        num(h.mean),
                        num(h.std),
                        opt(h.excess_kurtosis),
                        opt(h.tail_ratio),
                        num(h.max_abs),
                    ]
                })
            })
            .collect(),
        !d.histogram.is_empty(),
    )?;
    emit(
        "diag_probe.csv",
        &["step", "alpha", "relative_loss", "nonfinite"],
        d.probe
            .iter()
            .flat_map(|(s, c)| {
                c.alphas
                    .iter()
                    .zip(&c.relative_losses)
                    .zip(&c.nonfinite)
                    .map(move |((a, r), nf)| vec![s.to_string(), num(*a), num(*r), flag(*nf)])
            })
            .collect(),
        !d.probe.is_empty(),
    )
}

fn moment_rows<'a>(
    step: usize,
    layers: impl Iterator<Item = &'a crate::diagnostics::LayerMoments> + 'a,
) -> impl Iterator<Item = Vec<String>> + 'a {
    layers.flat_map(move |l| {
        l.means
            .iter()
            .zip(&l.variances)
            .enumerate()
            .map(move |(c, (m, v))| vec![step.to_string(), l.layer.to_string(), c.to_string(), num(*m), num(*v)])
    })
}

/// One row per (fraction, layer, channel) of the captured moment profiles.
pub fn write_divergence(path: &Path, e: &DivergenceEvent) -> Result<()> {
    write_csv(
        path,
        &["batch_index", "pre_loss", "post_loss", "fraction", "layer", "channel", "mean", "variance"],
        e.fractions.iter().zip(&e.profiles).flat_map(|(f, p)| {
            p.layers.iter().flat_map(move |l| {
                l.means.iter().zip(&l.variances).enumerate().map(move |(c, (m, v))| {
                    vec![
                        e.batch_index.to_string(),
                        num(e.pre_loss),
                        num(e.post_loss),
                        num(*f),
                        l.layer.to_string(),
                        c.to_string(),
                        num(*m),
                        num(*v),
                    ]
                })
            })
        }),
    )
}

#[derive(Debug, Serialize)]
struct LegSummary {
    index: usize,
    lr: f64,
    seed: u64,
    directory: PathBuf,
    planned_steps: usize,
    completed_steps: usize,
    diverged: bool,
    divergence_step: Option<usize>,
    final_loss: Option<f64>,
    final_train_acc: Option<f64>,
    final_test_acc: Option<f64>,
    best: bool,
}

#[derive(Debug, Serialize)]
struct RunSummary<'a> {
    config: &'a ExperimentConfig,
    train_size: usize,
    test_size: usize,
    channel_stats: &'a Option<ChannelStats>,
    legs: Vec<LegSummary>,
    best_leg: Option<usize>,
    any_diverged: bool,
    wall_clock_secs: f64,
    files: Vec<PathBuf>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Serialize(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Writes every artifact of a run under `dir`. A single leg writes directly
/// into `dir`; a sweep writes leg `k` into `dir/leg{k}`. Returns the files
/// written, `summary.json` last.
pub fn emit(artifact: &RunArtifact, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let sweep = artifact.legs.len() > 1;
    let mut files = Vec::new();
    let mut legs = Vec::new();
    for (k, leg) in artifact.legs.iter().enumerate() {
        let rel = if sweep { PathBuf::from(format!("leg{k}")) } else { PathBuf::new() };
        let leg_dir = dir.join(&rel);
        fs::create_dir_all(&leg_dir).map_err(|e| Error::io(&leg_dir, e))?;
        let metrics = leg_dir.join("metrics.csv");
        write_metrics(&metrics, &leg.metrics)?;
        files.push(metrics);
        write_leg_diagnostics(&leg_dir, leg, &mut files)?;
        if let Some(e) = &leg.divergence {
            let path = leg_dir.join("divergence.csv");
            write_divergence(&path, e)?;
            files.push(path);
        }
        let last = leg.final_metrics();
        legs.push(LegSummary {
            index: k,
            lr: leg.lr,
            seed: leg.seed,
            directory: rel,
            planned_steps: leg.planned_steps,
            completed_steps: leg.metrics.len(),
            diverged: leg.diverged(),
            divergence_step: leg.divergence.as_ref().map(|e| e.batch_index),
            final_loss: last.map(|m| m.loss),
            final_train_acc: last.map(|m| m.train_acc),
            final_test_acc: last.map(|m| m.test_acc),
            best: artifact.best_leg == Some(k),
        });
    }
    let summary_path = dir.join("summary.json");
    let summary = RunSummary {
        config: &artifact.config,
        train_size: artifact.train_size,
        test_size: artifact.test_size,
        channel_stats: &artifact.channel_stats,
        any_diverged: artifact.legs.iter().any(LegOutcome::diverged),
        legs,
        best_leg: artifact.best_leg,
        wall_clock_secs: artifact.wall_clock_secs,
        files: files
            .iter()
            .map(|f| f.strip_prefix(dir).unwrap_or(f).to_path_buf())
            .collect(),
    };
    write_json(&summary_path, &summary)?;
    files.push(summary_path);
    Ok(files)
}

/// `M, x, rho` rows.
pub fn write_density_table(path: &Path, rows: &[(usize, f64, f64)]) -> Result<()> {
    write_csv(
        path,
        &["M", "x", "rho"],
        rows.iter().map(|(m, x, r)| vec![m.to_string(), num(*x), num(*r)]),
    )
}

/// `M, trial, eigenvalue` rows of the rescaled spectra.
pub fn write_spectrum(path: &Path, samples: &[SpectrumSample]) -> Result<()> {
    write_csv(
        path,
        &["M", "trial", "eigenvalue"],
        samples.iter().flat_map(|s| {
            s.rescaled
                .iter()
                .enumerate()
                .flat_map(move |(t, ev)| ev.iter().map(move |v| vec![s.m.to_string(), t.to_string(), num(*v)]))
        }),
    )
}

pub fn write_condition(dir: &Path, report: &ConditionReport) -> Result<Vec<PathBuf>> {
    let rows = dir.join("condition.csv");
    write_csv(
        &rows,
        &["M", "trial", "kappa", "sigma_max", "saturated"],
        report.rows.iter().map(|r| {
            vec![
                r.m.to_string(),
                r.trial.to_string(),
                num(r.kappa),
                num(r.sigma_max),
                flag(r.saturated),
            ]
        }),
    )?;
    let summary = dir.join("condition_summary.csv");
    write_csv(
        &summary,
        &[
            "M",
            "mean_kappa",
            "std_kappa",
            "median_kappa",
            "mean_sigma_max",
            "std_sigma_max",
            "saturated",
        ],
        report.summaries.iter().map(|s| {
            vec![
                s.m.to_string(),
                num(s.mean_kappa),
                num(s.std_kappa),
                num(s.median_kappa),
                num(s.mean_sigma_max),
                num(s.std_sigma_max),
                s.saturated.to_string(),
            ]
        }),
    )?;
    Ok(vec![rows, summary])
}

/// `alpha, b, C, empirical, std_err, closed_form, bound`, then the sampling
/// mode and its exact expectation.
pub fn write_noise(path: &Path, rows: &[NoiseEstimate]) -> Result<()> {
    write_csv(
        path,
        &["alpha", "b", "C", "empirical", "std_err", "closed_form", "bound", "mode", "exact"],
        rows.iter().map(|r| {
            let mode = serde_json::to_value(r.mode)
                .ok()
                .and_then(|v| v.as_str().map(String::from))
                .unwrap_or_default();
            vec![
                num(r.alpha),
                r.b.to_string(),
                num(r.c),
                num(r.empirical),
                num(r.std_err),
                num(r.closed_form),
                num(r.bound),
                mode,
                num(r.exact),
            ]
        }),
    )
}
