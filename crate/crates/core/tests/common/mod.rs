#![allow(dead_code)]

pub mod gradcheck;

use bnscope::nn::{Batch, Model};
use bnscope::{Error, Result, SeededRng, Tensor};

pub const STEP: f64 = 1e-5;

pub fn random_tensor(shape: &[usize], rng: &mut SeededRng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.normal()).collect()).unwrap()
}

pub fn random_batch(b: usize, shape: [usize; 3], classes: usize, rng: &mut SeededRng) -> Batch {
    let inputs = random_tensor(&[b, shape[0], shape[1], shape[2]], rng);
    Batch::new(inputs, (0..b).map(|_| rng.below(classes)).collect()).unwrap()
}

/// Central-difference gradient of `f` at `x`.
pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + STEP;
            let up = f(&probe);
            probe[i] = x[i] - STEP;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

/// Largest entrywise discrepancy relative to the largest numeric entry.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()))
        / scale
}

/// Absolute slack for central-difference rounding on gradients that vanish.
pub const FD_NOISE: f64 = 1e-9;

/// `None` when `max|a−n| ≤ rtol·max|n| + FD_NOISE`, else a description.
pub fn gradient_mismatch(label: &str, analytic: &[f64], numeric: &[f64], rtol: f64) -> Option<String> {
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let worst = analytic.iter().zip(numeric).fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    (worst > rtol * scale + FD_NOISE).then(|| {
        format!(
            "{label}: max abs error {worst:.3e} against scale {scale:.3e} (relative {:.3e})",
            relative_error(analytic, numeric)
        )
    })
}

pub fn assert_gradient(label: &str, analytic: &[f64], numeric: &[f64], rtol: f64) {
    if let Some(msg) = gradient_mismatch(label, analytic, numeric, rtol) {
        panic!("{msg}");
    }
}

/// Fixed random weights `r` turning a tensor output into the scalar `Σ r·y`.
pub fn projector(shape: &[usize], seed: u64) -> Tensor {
    random_tensor(shape, &mut SeededRng::new(seed, 77))
}

pub fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// `ℓ(x) = ½‖x‖²` on a flat parameter vector.
pub struct Quadratic {
    pub x: Vec<f64>,
}

impl Model for Quadratic {
    type Batch = ();

    fn parameters(&self) -> Vec<f64> {
        self.x.clone()
    }

    fn set_parameters(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.x.len() {
            return Err(Error::Dimension("length".into()));
        }
        self.x.copy_from_slice(flat);
        Ok(())
    }

    fn loss(&mut self, _: &()) -> Result<f64> {
        Ok(0.5 * self.x.iter().map(|v| v * v).sum::<f64>())
    }

    fn loss_and_gradient(&mut self, b: &()) -> Result<(f64, Vec<f64>)> {
        Ok((self.loss(b)?, self.x.clone()))
    }
}

/// Integrates the density in `x` directly after `x = U·t^p`, `p = 2(M+1)`,
/// which turns the `x^{-M/(M+1)}` edge singularity into a factor `t`.
/// Composite Gauss–Legendre on 400 panels.
pub fn mass_in_x(m: usize) -> f64 {
    let d = bnscope::rmt::FussCatalanDensity::new(m).unwrap();
    let u = d.support_upper();
    let pow = 2 * (m as i32 + 1);
    let nodes = [
        (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
        (-0.538_469_310_105_683, 0.478_628_670_499_366_5),
        (0.0, 0.568_888_888_888_888_9),
        (0.538_469_310_105_683, 0.478_628_670_499_366_5),
        (0.906_179_845_938_664, 0.236_926_885_056_189_1),
    ];
    let panels = 400;
    let h = 1.0 / panels as f64;
    (0..panels)
        .map(|p| {
            let (a, b) = (p as f64 * h, (p + 1) as f64 * h);
            nodes
                .iter()
                .map(|(z, w)| {
                    let t = 0.5 * (a + b) + 0.5 * (b - a) * z;
                    let x = u * t.powi(pow);
                    if x <= 0.0 || x >= u {
                        return 0.0;
                    }
                    w * 0.5 * (b - a) * d.density(x).unwrap() * pow as f64 * u * t.powi(pow - 1)
                })
                .sum::<f64>()
        })
        .sum()
}
