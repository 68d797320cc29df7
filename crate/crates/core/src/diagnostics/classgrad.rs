//! Output-gradient structure and the per-class and per-channel gradient views.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{per_example_logit_grads, softmax_xent, BackwardOptions, Batch, Mode, Network};
use crate::tensor::Tensor;

/// `∂L_b/∂logit_{b,j}` for every example and class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassGradHeatmap {
    /// `[b, K]`
    pub matrix: Tensor,
    pub labels: Vec<usize>,
    /// Column holding the largest positive entry in the most rows.
    pub dominant_column: usize,
    /// Fraction of rows whose largest positive entry is in `dominant_column`.
    pub dominant_fraction: f64,
}

impl ClassGradHeatmap {
    pub fn from_logits(logits: &Tensor, labels: &[usize]) -> Result<Self> {
        let matrix = per_example_logit_grads(logits, labels)?;
        let (b, k) = matrix.dims2()?;
        let mut votes = vec![0usize; k];
        for row in matrix.data().chunks(k) {
            let best = row
                .iter()
                .enumerate()
                .filter(|(_, &v)| v > 0.0)
                .fold(None, |best: Option<(usize, f64)>, (j, &v)| match best {
                    Some((_, bv)) if bv >= v => best,
                    _ => Some((j, v)),
                });
            if let Some((j, _)) = best {
                votes[j] += 1;
            }
        }
        let (dominant_column, count) = votes
            .iter()
            .enumerate()
            .fold((0, 0), |acc, (j, &c)| if c > acc.1 { (j, c) } else { acc });
        Ok(Self {
            matrix,
            labels: labels.to_vec(),
            dominant_column,
            dominant_fraction: count as f64 / b as f64,
        })
    }
}

pub fn class_grad_heatmap(net: &mut Network, batch: &Batch) -> Result<ClassGradHeatmap> {
    let logits = net.forward(&batch.inputs, Mode::Inspect)?;
    ClassGradHeatmap::from_logits(&logits, &batch.labels)
}

/// Parameter gradients when only some logit columns pass gradient.
/// Uses the network's last forward pass.
pub fn masked_backward(net: &Network, labels: &[usize], keep: &[bool]) -> Result<Vec<Tensor>> {
    let logits = net.logits()?;
    let (_, k) = logits.dims2()?;
    if keep.len() != k {
        return Err(Error::dim(format!("mask of length {} for {k} classes", keep.len())));
    }
    let (_, mut g) = softmax_xent(logits, labels)?;
    for row in g.data_mut().chunks_mut(k) {
        for (v, &on) in row.iter_mut().zip(keep) {
            if !on {
                *v = 0.0;
            }
        }
    }
    Ok(net.backward(&g, &BackwardOptions::default())?.grads)
}

/// Gradients attributed to one class.
#[derive(Debug, Clone)]
pub struct ClassMask {
    pub class: usize,
    pub grads: Vec<Tensor>,
    /// `(parameter name, ‖grad‖₂)` in parameter order.
    pub norms: Vec<(String, f64)>,
}

/// Backpropagates only the class-`j` logit column, for each requested class,
/// after a single inspect-mode forward.
pub fn classwise_gradient_mask(net: &mut Network, batch: &Batch, classes: &[usize]) -> Result<Vec<ClassMask>> {
    let k = net.config().class_count;
    if let Some(&label) = classes.iter().find(|&&j| j >= k) {
        return Err(Error::Label { label, classes: k });
    }
    net.forward(&batch.inputs, Mode::Inspect)?;
    let names: Vec<String> = net.param_info().into_iter().map(|p| p.name).collect();
    classes
        .iter()
        .map(|&class| {
            let keep: Vec<bool> = (0..k).map(|j| j == class).collect();
            let grads = masked_backward(net, &batch.labels, &keep)?;
            let norms = names.iter().cloned().zip(grads.iter().map(Tensor::norm)).collect();
            Ok(ClassMask { class, grads, norms })
        })
        .collect()
}

/// One (layer, in-channel, out-channel) weight group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanGradPair {
    pub layer: usize,
    pub in_channel: usize,
    pub out_channel: usize,
    /// Mean of the in-channel's pre-ReLU activation over `(b, x, y)`.
    pub activation_mean: f64,
    /// Mean `|∂L/∂W|` over the group's entries.
    pub grad_mean_abs: f64,
}

/// Pairs for one layer from the pre-ReLU tensor feeding it (`[b, c_in, h, w]`)
/// and its weight gradient (`[c_out, c_in, ...]`).
pub fn mean_vs_grad_from(layer: usize, pre_relu: &Tensor, grad_weight: &Tensor) -> Result<Vec<MeanGradPair>> {
    let (b, ci, h, w) = pre_relu.dims4()?;
    let shape = grad_weight.shape();
    if shape.len() < 2 || shape[1] != ci {
        return Err(Error::dim("weight gradient does not match activation channels"));
    }
    let co = shape[0];
    let group = grad_weight.len() / (co * ci);
    let plane = h * w;
    let x = pre_relu.data();
    let g = grad_weight.data();
    let means: Vec<f64> = (0..ci)
        .map(|i| {
            (0..b)
                .flat_map(|bi| &x[(bi * ci + i) * plane..(bi * ci + i + 1) * plane])
                .sum::<f64>()
                / (b * plane) as f64
        })
        .collect();
    Ok((0..ci)
        .flat_map(|i| {
            let means = &means;
            (0..co).map(move |o| {
                let base = (o * ci + i) * group;
                MeanGradPair {
                    layer,
                    in_channel: i,
                    out_channel: o,
                    activation_mean: means[i],
                    grad_mean_abs: g[base..base + group].iter().map(|v| v.abs()).sum::<f64>() / group as f64,
                }
            })
        })
        .collect())
}

/// Mean-vs-gradient pairs for every unit whose input is a ReLU output
/// (all units but the first), averaged over the given batches.
pub fn mean_vs_grad_pairs(net: &mut Network, sample: &[Batch]) -> Result<Vec<MeanGradPair>> {
    if sample.is_empty() {
        return Err(Error::Size("empty sample".into()));
    }
    let info = net.param_info();
    let mut acc: Vec<MeanGradPair> = Vec::new();
    for batch in sample {
        let logits = net.forward(&batch.inputs, Mode::Inspect)?;
        let (_, g) = softmax_xent(&logits, &batch.labels)?;
        let grads = net.backward(&g, &BackwardOptions::default())?.grads;
        let mut pairs = Vec::new();
        for k in 1..net.unit_count() {
            let idx = info
                .iter()
                .position(|p| p.unit == Some(k) && p.role == crate::nn::ParamRole::Weight)
                .expect("every unit has a weight");
            let pre = net.unit_pre_relu(k - 1)?;
            pairs.extend(mean_vs_grad_from(k, pre, &grads[idx])?);
        }
        if acc.is_empty() {
            acc = pairs;
        } else {
            for (a, p) in acc.iter_mut().zip(pairs) {
                a.activation_mean += p.activation_mean;
                a.grad_mean_abs += p.grad_mean_abs;
            }
        }
    }
    let n = sample.len() as f64;
    for a in &mut acc {
        a.activation_mean /= n;
        a.grad_mean_abs /= n;
    }
    Ok(acc)
}

/// `|Σ_{b,x,y} ∂L/∂u[b,c,x,y]|` per channel: the gradient a per-channel
/// bias would receive.
pub fn channel_gradients_from(upstream: &Tensor) -> Result<Vec<f64>> {
    let (b, c, h, w) = upstream.dims4()?;
    let plane = h * w;
    let d = upstream.data();
    Ok((0..c)
        .map(|ci| {
            (0..b)
                .flat_map(|bi| &d[(bi * c + ci) * plane..(bi * c + ci + 1) * plane])
                .sum::<f64>()
                .abs()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerChannelGradients {
    pub layer: usize,
    pub magnitudes: Vec<f64>,
}

pub fn channel_gradients(net: &mut Network, batch: &Batch) -> Result<Vec<LayerChannelGradients>> {
    let logits = net.forward(&batch.inputs, Mode::Inspect)?;
    let (_, g) = softmax_xent(&logits, &batch.labels)?;
    let n = net.unit_count();
    let bp = net.backward(&g, &BackwardOptions::all(n))?;
    bp.unit_upstream
        .iter()
        .enumerate()
        .map(|(layer, up)| {
            Ok(LayerChannelGradients {
                layer,
                magnitudes: channel_gradients_from(up.as_ref().expect("all units exposed"))?,
            })
        })
        .collect()
}
