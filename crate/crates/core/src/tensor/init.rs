use serde::{Deserialize, Serialize};

use super::{SeededRng, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitKind {
    Xavier,
    He,
    Gaussian,
}

/// Weight initialisation scheme. `scale` is only read by
/// [`InitKind::Gaussian`], where it is the per-entry standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitScheme {
    pub kind: InitKind,
    pub scale: f64,
}

impl InitScheme {
    pub fn xavier() -> Self {
        Self {
            kind: InitKind::Xavier,
            scale: 1.0,
        }
    }

    pub fn he() -> Self {
        Self {
            kind: InitKind::He,
            scale: 1.0,
        }
    }

    pub fn gaussian(std: f64) -> Self {
        Self {
            kind: InitKind::Gaussian,
            scale: std,
        }
    }

    /// Per-entry variance for the given fan counts.
    pub fn variance(&self, fan_in: usize, fan_out: usize) -> f64 {
        match self.kind {
            InitKind::Xavier => 2.0 / (fan_in + fan_out) as f64,
            InitKind::He => 2.0 / fan_in as f64,
            InitKind::Gaussian => self.scale * self.scale,
        }
    }
}

impl Default for InitScheme {
    fn default() -> Self {
        Self::xavier()
    }
}

/// Fan counts for a weight shape: `[out, in]` for dense layers and
/// `[out, in, kh, kw]` for convolutions (the receptive field multiplies both).
pub fn fans_for_shape(shape: &[usize]) -> Result<(usize, usize)> {
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::dim(format!("non-positive dimension in {shape:?}")));
    }
    match *shape {
        [n] => Ok((n, n)),
        [out, inp] => Ok((inp, out)),
        [out, inp, ref rest @ ..] => {
            let field: usize = rest.iter().product();
            Ok((inp * field, out * field))
        }
        [] => Err(Error::dim("empty shape")),
    }
}

pub fn init_tensor(shape: &[usize], scheme: InitScheme, rng: &mut SeededRng) -> Result<Tensor> {
    let (fan_in, fan_out) = fans_for_shape(shape)?;
    init_tensor_with_fans(shape, fan_in, fan_out, scheme, rng)
}

/// I.i.d. zero-mean Gaussian entries with the scheme's variance for explicit
/// fan counts.
pub fn init_tensor_with_fans(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    scheme: InitScheme,
    rng: &mut SeededRng,
) -> Result<Tensor> {
    if fan_in == 0 || fan_out == 0 {
        return Err(Error::dim("fan counts must be positive"));
    }
    let std = scheme.variance(fan_in, fan_out).sqrt();
    let len: usize = shape.iter().product();
    let data = (0..len).map(|_| std * rng.normal()).collect();
    Tensor::new(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(t: &Tensor) -> (f64, f64) {
        let n = t.len() as f64;
        let mean = t.sum() / n;
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        (mean, var)
    }

    #[test]
    fn xavier_variance_matches_fans() {
        let mut rng = SeededRng::new(2024, 0);
        let t = init_tensor_with_fans(&[100_000], 50, 50, InitScheme::xavier(), &mut rng).unwrap();
        let (mean, var) = moments(&t);
        assert!((var - 0.02).abs() / 0.02 < 0.05, "var {var}");
        let se = (0.02f64 / 1e5).sqrt();
        assert!(mean.abs() < 4.0 * se, "mean {mean}");
    }

    #[test]
    fn he_variance() {
        let mut rng = SeededRng::new(5, 1);
        let t = init_tensor(&[200, 500], InitScheme::he(), &mut rng).unwrap();
        let (_, var) = moments(&t);
        assert!((var - 2.0 / 500.0).abs() / (2.0 / 500.0) < 0.05);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = init_tensor(&[8, 4, 3, 3], InitScheme::xavier(), &mut SeededRng::new(9, 0)).unwrap();
        let b = init_tensor(&[8, 4, 3, 3], InitScheme::xavier(), &mut SeededRng::new(9, 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn conv_fans_include_receptive_field() {
        assert_eq!(fans_for_shape(&[16, 8, 3, 3]).unwrap(), (72, 144));
        assert_eq!(fans_for_shape(&[10, 64]).unwrap(), (64, 10));
        assert!(fans_for_shape(&[0, 3]).is_err());
    }
}
