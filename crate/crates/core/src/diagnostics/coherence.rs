//! Sign coherence of convolution-kernel gradients.
//!
//! For kernel parameter `(o, i, x', y')` the gradient is a sum of summands
//! `d^{bxy} = ∂L/∂O[b,o,x,y] · I[b,i,x+x',y+y']`. Comparing the sum of their
//! magnitudes with the magnitude of their sum measures how much the
//! summands agree in sign.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{softmax_xent, BackwardOptions, Batch, LayerKind, Mode, Network};
use crate::tensor::{conv2d_backward, Tensor};

/// Ratio reported when the summed gradient is numerically zero.
pub const RATIO_SENTINEL: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoherenceRow {
    pub layer: usize,
    /// `Σ_{b,x,y} |d|`
    pub a: f64,
    /// `Σ_b |Σ_{x,y} d|`
    pub partial_b: f64,
    /// `Σ_{x,y} |Σ_b d|`
    pub partial_xy: f64,
    /// `|Σ_{b,x,y} d|`
    pub b_abs: f64,
    /// `a / b_abs`, or [`RATIO_SENTINEL`] when `b_abs < 1e-30`.
    pub ratio: f64,
    pub saturated: bool,
}

impl CoherenceRow {
    pub fn new(layer: usize, a: f64, partial_b: f64, partial_xy: f64, b_abs: f64) -> Self {
        let saturated = b_abs < 1e-30 || a / b_abs > RATIO_SENTINEL;
        Self {
            layer,
            a,
            partial_b,
            partial_xy,
            b_abs,
            ratio: if saturated { RATIO_SENTINEL } else { a / b_abs },
            saturated,
        }
    }
}

/// `(a, partial_b, partial_xy, b_abs)` for summands laid out as
/// `d[b * positions + s]`.
pub fn coherence_from_summands(d: &[f64], batch: usize, positions: usize) -> Result<(f64, f64, f64, f64)> {
    if d.len() != batch * positions || d.is_empty() {
        return Err(Error::dim(format!(
            "{} summands for {batch} examples × {positions} positions",
            d.len()
        )));
    }
    let a = d.iter().map(|v| v.abs()).sum();
    let partial_b = d.chunks(positions).map(|row| row.iter().sum::<f64>().abs()).sum();
    let partial_xy = (0..positions)
        .map(|s| (0..batch).map(|b| d[b * positions + s]).sum::<f64>().abs())
        .sum();
    let b_abs = d.iter().sum::<f64>().abs();
    Ok((a, partial_b, partial_xy, b_abs))
}

/// Fills `out[b * h * w + x * w + y]` with the summands of kernel entry
/// `(o, i, kx, ky)`; out-of-image reads contribute zero.
pub fn conv_summands(
    input: &Tensor,
    upstream: &Tensor,
    (o, i, kx, ky): (usize, usize, usize, usize),
    out: &mut [f64],
) -> Result<()> {
    let (b, ci, h, w) = input.dims4()?;
    let (ub, co, uh, uw) = upstream.dims4()?;
    if (ub, uh, uw) != (b, h, w) || o >= co || i >= ci || kx > 2 || ky > 2 || out.len() != b * h * w {
        return Err(Error::dim("summand request inconsistent with layer shapes"));
    }
    let (inp, up) = (input.data(), upstream.data());
    let plane = h * w;
    for bi in 0..b {
        for x in 0..h {
            for y in 0..w {
                let (xx, yy) = ((x + kx) as isize - 1, (y + ky) as isize - 1);
                let v = if xx < 0 || yy < 0 || xx >= h as isize || yy >= w as isize {
                    0.0
                } else {
                    up[(bi * co + o) * plane + x * w + y] * inp[(bi * ci + i) * plane + xx as usize * w + yy as usize]
                };
                out[bi * plane + x * w + y] = v;
            }
        }
    }
    Ok(())
}

/// Coherence statistics averaged over every kernel parameter of one conv
/// layer, from its input and the gradient arriving at its output.
pub fn layer_coherence(layer: usize, input: &Tensor, upstream: &Tensor) -> Result<CoherenceRow> {
    let (b, ci, h, w) = input.dims4()?;
    let co = upstream.dims4()?.1;
    let mut buf = vec![0.0; b * h * w];
    let mut sums = [0.0; 4];
    for o in 0..co {
        for i in 0..ci {
            for kx in 0..3 {
                for ky in 0..3 {
                    conv_summands(input, upstream, (o, i, kx, ky), &mut buf)?;
                    let (a, pb, pxy, babs) = coherence_from_summands(&buf, b, h * w)?;
                    for (s, v) in sums.iter_mut().zip([a, pb, pxy, babs]) {
                        *s += v;
                    }
                }
            }
        }
    }
    let n = (co * ci * 9) as f64;
    Ok(CoherenceRow::new(layer, sums[0] / n, sums[1] / n, sums[2] / n, sums[3] / n))
}

/// One row per conv unit, measured on `batch` with an inspect-mode forward.
pub fn sign_coherence(net: &mut Network, batch: &Batch) -> Result<Vec<CoherenceRow>> {
    let conv_units: Vec<usize> = (0..net.unit_count())
        .filter(|&k| net.unit_kind(k) == LayerKind::Conv)
        .collect();
    let logits = net.forward(&batch.inputs, Mode::Inspect)?;
    let (_, g) = softmax_xent(&logits, &batch.labels)?;
    let bp = net.backward(&g, &BackwardOptions { expose: conv_units.clone() })?;
    conv_units
        .iter()
        .map(|&k| {
            let up = bp.unit_upstream[k].as_ref().expect("exposed unit");
            layer_coherence(k, net.unit_input(k)?, up)
        })
        .collect()
}

/// `M[i][o] = Σ_{x',y'} |∂L/∂K[o,i,x',y']|`, where each kernel gradient is
/// the full `(b,x,y)` sum of its summands.
pub fn channel_grad_matrix(grad_kernel: &Tensor) -> Result<Vec<Vec<f64>>> {
    let (co, ci, kh, kw) = grad_kernel.dims4()?;
    let g = grad_kernel.data();
    Ok((0..ci)
        .map(|i| {
            (0..co)
                .map(|o| {
                    let base = (o * ci + i) * kh * kw;
                    g[base..base + kh * kw].iter().map(|v| v.abs()).sum()
                })
                .collect()
        })
        .collect())
}

pub fn channel_grad_matrix_for(net: &mut Network, batch: &Batch, layer: usize) -> Result<Vec<Vec<f64>>> {
    if layer >= net.unit_count() || net.unit_kind(layer) != LayerKind::Conv {
        return Err(Error::dim(format!("unit {layer} is not a conv layer")));
    }
    let logits = net.forward(&batch.inputs, Mode::Inspect)?;
    let (_, g) = softmax_xent(&logits, &batch.labels)?;
    let bp = net.backward(&g, &BackwardOptions { expose: vec![layer] })?;
    let up = bp.unit_upstream[layer].as_ref().expect("exposed unit");
    let gk = conv2d_backward(up, net.unit_input(layer)?, net.unit_weight(layer))?.grad_kernel;
    channel_grad_matrix(&gk)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_summands_are_perfectly_coherent() {
        let d = vec![0.1; 12];
        let (a, pb, pxy, babs) = coherence_from_summands(&d, 3, 4).unwrap();
        let row = CoherenceRow::new(0, a, pb, pxy, babs);
        assert!((row.a - row.b_abs).abs() < 1e-15);
        assert!((row.ratio - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cancelling_summands_saturate() {
        let (a, pb, pxy, babs) = coherence_from_summands(&[1.0, -1.0], 1, 2).unwrap();
        let row = CoherenceRow::new(0, a, pb, pxy, babs);
        assert_eq!(row.b_abs, 0.0);
        assert!(row.saturated);
        assert_eq!(row.ratio, RATIO_SENTINEL);
    }

    #[test]
    fn table_scale_ratio() {
        let row = CoherenceRow::new(18, 7.5e-5, 1e-5, 1e-5, 3.0e-7);
        assert!((row.ratio - 250.0).abs() < 1e-9);
    }

    #[test]
    fn partial_sums_split_by_axis() {
        // Two examples × two positions: [[1, -1], [1, 1]].
        let (a, pb, pxy, babs) = coherence_from_summands(&[1.0, -1.0, 1.0, 1.0], 2, 2).unwrap();
        assert_eq!((a, pb, pxy, babs), (4.0, 2.0, 2.0, 2.0));
    }

    #[test]
    fn zero_gradient_matrix() {
        let m = channel_grad_matrix(&Tensor::zeros(&[2, 3, 3, 3]).unwrap()).unwrap();
        assert_eq!(m, vec![vec![0.0; 2]; 3]);
    }

    #[test]
    fn single_entry_lands_at_transposed_position() {
        let mut g = Tensor::zeros(&[2, 3, 3, 3]).unwrap();
        g.set(&[1, 2, 0, 1], -0.4);
        let m = channel_grad_matrix(&g).unwrap();
        for (i, row) in m.iter().enumerate() {
            for (o, &v) in row.iter().enumerate() {
                assert_eq!(v, if (i, o) == (2, 1) { 0.4 } else { 0.0 });
            }
        }
    }
}
