use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Summary of a gradient population's shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramStats {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    /// `m₄/m₂² − 3`; `None` when `m₂ < 1e-30`.
    pub excess_kurtosis: Option<f64>,
    /// 99.9th percentile of `|g|` over the median of `|g|`; `None` when the
    /// median is zero.
    pub tail_ratio: Option<f64>,
    pub max_abs: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn gradient_histogram_stats(values: &[f64]) -> Result<HistogramStats> {
    if values.len() < 4 {
        return Err(Error::Size(format!("need at least 4 entries, got {}", values.len())));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (mut m2, mut m4) = (0.0, 0.0);
    for v in values {
        let d2 = (v - mean) * (v - mean);
        m2 += d2;
        m4 += d2 * d2;
    }
    m2 /= n;
    m4 /= n;
    let mut abs: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    abs.sort_by(f64::total_cmp);
    let median = quantile(&abs, 0.5);
    Ok(HistogramStats {
        count: values.len(),
        mean,
        std: m2.sqrt(),
        excess_kurtosis: (m2 >= 1e-30).then(|| m4 / (m2 * m2) - 3.0),
        tail_ratio: (median > 0.0).then(|| quantile(&abs, 0.999) / median),
        max_abs: *abs.last().expect("non-empty"),
    })
}
