//! Small feed-forward, plain convolutional and residual networks with
//! read-only access to every layer's activations and gradients.
//!
//! A *unit* is one weight layer (3×3 conv or dense) with its optional
//! normalizer. Units are numbered in depth order and are the granularity at
//! which diagnostics are reported.

use serde::{Deserialize, Serialize};

use super::batchnorm::{BatchNormLayer, BnCache, BnSettings};
use super::layers::{
    global_avg_pool, global_avg_pool_backward, pad_channels, relu, relu_backward, unpad_channels, Conv3x3, Dense,
};
use super::loss::softmax_xent;
use super::model::Model;
use super::norm::{GroupedNorm, Grouping, NormCache, NormGradients};
use crate::error::{Error, Result};
use crate::tensor::{init_tensor, InitScheme, SeededRng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    /// Fully connected layers on the flattened input.
    Dense,
    /// A plain stack of 3×3 convolutions.
    Conv,
    /// Two-convolution residual blocks with identity shortcuts.
    Resnet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormPlacement {
    /// After every weight layer, before its ReLU.
    PerLayer,
    /// A single normalizer after the last block, before pooling.
    FinalOnly,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub arch: Arch,
    /// `[channels, height, width]` of one input example.
    pub input_shape: [usize; 3],
    /// Channels (conv) or units (dense) of every hidden layer.
    pub width: usize,
    /// Number of weight layers before the classifier.
    pub depth: usize,
    pub class_count: usize,
    pub placement: NormPlacement,
    pub norm: Grouping,
    pub bn: BnSettings,
    pub init: InitScheme,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            arch: Arch::Resnet,
            input_shape: [3, 8, 8],
            width: 8,
            depth: 8,
            class_count: 10,
            placement: NormPlacement::PerLayer,
            norm: Grouping::Batch,
            bn: BnSettings::default(),
            init: InitScheme::xavier(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv,
    Dense,
}

/// One entry of the derived layer chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub normalized: bool,
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let [c, h, w] = self.input_shape;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::Config("input shape has a zero dimension".into()));
        }
        if self.width == 0 || self.depth == 0 {
            return Err(Error::Config("width and depth must be positive".into()));
        }
        if self.class_count < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        if self.arch == Arch::Resnet {
            if self.depth % 2 != 0 {
                return Err(Error::Config(format!(
                    "residual networks need an even depth, got {}",
                    self.depth
                )));
            }
            if self.width < c {
                return Err(Error::Config(format!(
                    "identity shortcut cannot narrow {c} input channels to width {}",
                    self.width
                )));
            }
        }
        if self.placement != NormPlacement::None {
            self.norm.validate(self.width).map_err(|e| Error::Config(e.to_string()))?;
            if self.arch == Arch::Dense && self.norm == Grouping::Instance {
                return Err(Error::Config("instance norm is undefined on dense features".into()));
            }
            if self.norm == Grouping::Batch && self.bn.stat_update_period == 0 {
                return Err(Error::Config("stat_update_period must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        let kind = match self.arch {
            Arch::Dense => LayerKind::Dense,
            _ => LayerKind::Conv,
        };
        let [c, h, w] = self.input_shape;
        let first_in = if kind == LayerKind::Dense { c * h * w } else { c };
        let mut specs: Vec<LayerSpec> = (0..self.depth)
            .map(|k| {
                let in_channels = match self.arch {
                    Arch::Resnet if k == 0 => first_in,
                    Arch::Resnet => self.width,
                    _ if k == 0 => first_in,
                    _ => self.width,
                };
                LayerSpec {
                    kind,
                    in_channels,
                    out_channels: self.width,
                    normalized: self.placement == NormPlacement::PerLayer,
                }
            })
            .collect();
        specs.push(LayerSpec {
            kind: LayerKind::Dense,
            in_channels: self.width,
            out_channels: self.class_count,
            normalized: false,
        });
        specs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running averages and counters advance.
    Train,
    /// Running statistics; no state changes; no backward.
    Eval,
    /// What `Train` would compute, without touching any state.
    Inspect,
}

#[derive(Debug, Clone)]
enum NormLayer {
    Batch(BatchNormLayer),
    Grouped(GroupedNorm),
}

#[derive(Debug, Clone)]
enum NormState {
    Batch(BnCache),
    Grouped(NormCache),
}

impl NormLayer {
    fn new(channels: usize, config: &NetworkConfig) -> Result<Self> {
        Ok(match config.norm {
            Grouping::Batch => NormLayer::Batch(BatchNormLayer::new(channels, config.bn)?),
            g => NormLayer::Grouped(GroupedNorm::new(channels, g, config.bn.eps)?),
        })
    }

    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, Option<NormState>)> {
        match self {
            NormLayer::Batch(l) => match mode {
                Mode::Train => l.forward_train(x).map(|(y, c)| (y, Some(NormState::Batch(c)))),
                Mode::Inspect => l.forward_inspect(x).map(|(y, c)| (y, Some(NormState::Batch(c)))),
                Mode::Eval => l.forward_eval(x).map(|y| (y, None)),
            },
            NormLayer::Grouped(g) => g.forward(x).map(|(y, c)| (y, Some(NormState::Grouped(c)))),
        }
    }

    fn backward(&self, upstream: &Tensor, state: &NormState) -> Result<NormGradients> {
        match (self, state) {
            (NormLayer::Batch(l), NormState::Batch(c)) => l.backward(upstream, c),
            (NormLayer::Grouped(g), NormState::Grouped(c)) => g.backward(upstream, c),
            _ => Err(Error::CacheMismatch("normalizer kind changed".into())),
        }
    }

    fn affine(&self) -> (&Tensor, &Tensor) {
        match self {
            NormLayer::Batch(l) => (&l.gamma, &l.beta),
            NormLayer::Grouped(g) => (&g.gamma, &g.beta),
        }
    }

    fn affine_mut(&mut self) -> (&mut Tensor, &mut Tensor) {
        match self {
            NormLayer::Batch(l) => (&mut l.gamma, &mut l.beta),
            NormLayer::Grouped(g) => (&mut g.gamma, &mut g.beta),
        }
    }
}

#[derive(Debug, Clone)]
enum Weight {
    Conv(Conv3x3),
    Dense(Dense),
}

#[derive(Debug, Clone)]
struct Unit {
    weight: Weight,
    norm: Option<NormLayer>,
}

/// Forward record of one unit. All tensors are rank 4; dense features are
/// stored as `[b, d, 1, 1]`.
#[derive(Debug, Clone)]
struct UnitTrace {
    input: Tensor,
    pre: Tensor,
    norm: Option<NormState>,
    /// The tensor this unit's ReLU is applied to (normalized output, plus
    /// the shortcut for the second unit of a residual block).
    relu_in: Tensor,
}

#[derive(Debug, Clone)]
struct Trace {
    mode: Mode,
    units: Vec<UnitTrace>,
    final_norm: Option<NormState>,
    features_shape: Vec<usize>,
    pooled: Tensor,
    logits: Tensor,
}

/// A labelled minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// `[b, c, h, w]`.
    pub inputs: Tensor,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Tensor, labels: Vec<usize>) -> Result<Self> {
        let b = inputs.shape()[0];
        if inputs.rank() != 4 || labels.len() != b {
            return Err(Error::dim(format!(
                "batch of shape {:?} with {} labels",
                inputs.shape(),
                labels.len()
            )));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamRole {
    Weight,
    Bias,
    Gamma,
    Beta,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamInfo {
    pub name: String,
    /// Unit index; `None` for the final normalizer and the classifier.
    pub unit: Option<usize>,
    pub role: ParamRole,
    /// Weight decay applies (conv/dense weights only).
    pub decay: bool,
}

/// Which units' output gradients `∂L/∂u_k` to keep.
#[derive(Debug, Clone, Default)]
pub struct BackwardOptions {
    pub expose: Vec<usize>,
}

impl BackwardOptions {
    pub fn all(units: usize) -> Self {
        Self {
            expose: (0..units).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Backprop {
    /// One gradient per parameter, in [`Network::param_info`] order.
    pub grads: Vec<Tensor>,
    /// `∂L/∂u_k` for exposed units (weight-layer outputs, rank 4).
    pub unit_upstream: Vec<Option<Tensor>>,
    pub grad_input: Tensor,
}

#[derive(Debug, Clone)]
pub struct Network {
    config: NetworkConfig,
    units: Vec<Unit>,
    final_norm: Option<NormLayer>,
    head: Dense,
    trace: Option<Trace>,
}

pub fn build_network(config: &NetworkConfig, rng: &mut SeededRng) -> Result<Network> {
    Network::new(config, rng)
}

impl Network {
    pub fn new(config: &NetworkConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let specs = config.layer_specs();
        let (hidden, head_spec) = specs.split_at(config.depth);
        let mut units = Vec::with_capacity(config.depth);
        for spec in hidden {
            let weight = match spec.kind {
                LayerKind::Conv => Weight::Conv(Conv3x3 {
                    kernel: init_tensor(&[spec.out_channels, spec.in_channels, 3, 3], config.init, rng)?,
                }),
                LayerKind::Dense => Weight::Dense(Dense::new(
                    init_tensor(&[spec.out_channels, spec.in_channels], config.init, rng)?,
                    Tensor::zeros(&[spec.out_channels])?,
                )?),
            };
            let norm = if spec.normalized {
                Some(NormLayer::new(spec.out_channels, config)?)
            } else {
                None
            };
            units.push(Unit { weight, norm });
        }
        let final_norm = match config.placement {
            NormPlacement::FinalOnly => Some(NormLayer::new(config.width, config)?),
            _ => None,
        };
        let h = head_spec[0];
        let head = Dense::new(
            init_tensor(&[h.out_channels, h.in_channels], config.init, rng)?,
            Tensor::zeros(&[h.out_channels])?,
        )?;
        Ok(Self {
            config: config.clone(),
            units,
            final_norm,
            head,
            trace: None,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn unit_count(&self) -> usize {
        self.units.len()
    }

    pub fn unit_kind(&self, k: usize) -> LayerKind {
        match self.units[k].weight {
            Weight::Conv(_) => LayerKind::Conv,
            Weight::Dense(_) => LayerKind::Dense,
        }
    }

    pub fn is_unit_normalized(&self, k: usize) -> bool {
        self.units[k].norm.is_some()
    }

    /// Weight tensor of unit `k` (`[out, in, 3, 3]` or `[out, in]`).
    pub fn unit_weight(&self, k: usize) -> &Tensor {
        match &self.units[k].weight {
            Weight::Conv(c) => &c.kernel,
            Weight::Dense(d) => &d.weight,
        }
    }

    pub fn batch_norm(&self, k: usize) -> Option<&BatchNormLayer> {
        match &self.units[k].norm {
            Some(NormLayer::Batch(l)) => Some(l),
            _ => None,
        }
    }

    pub fn forward(&mut self, inputs: &Tensor, mode: Mode) -> Result<Tensor> {
        self.trace = None;
        let (b, c, h, w) = inputs.dims4()?;
        if [c, h, w] != self.config.input_shape {
            return Err(Error::dim(format!(
                "input example shape [{c}, {h}, {w}] differs from configured {:?}",
                self.config.input_shape
            )));
        }
        let resnet = self.config.arch == Arch::Resnet;
        let width = self.config.width;
        let mut traces: Vec<UnitTrace> = Vec::with_capacity(self.units.len());
        let mut x = inputs.clone();
        let mut shortcut: Option<Tensor> = None;
        for (k, unit) in self.units.iter_mut().enumerate() {
            if resnet && k % 2 == 0 {
                shortcut = Some(x.clone());
            }
            let input = x;
            let pre = match &unit.weight {
                Weight::Conv(conv) => conv.forward(&input)?,
                Weight::Dense(d) => {
                    let flat = input.reshape(&[b, input.len() / b])?;
                    let out = d.forward(&flat)?;
                    out.into_reshaped(&[b, d.outputs(), 1, 1])?
                }
            };
            let (normed, norm) = match &mut unit.norm {
                Some(n) => n.forward(&pre, mode)?,
                None => (pre.clone(), None),
            };
            let relu_in = if resnet && k % 2 == 1 {
                let s = shortcut.take().expect("shortcut saved on even unit");
                normed.add(&pad_channels(&s, width)?)?
            } else {
                normed
            };
            x = relu(&relu_in);
            traces.push(UnitTrace {
                input,
                pre,
                norm,
                relu_in,
            });
        }
        let (features, final_norm) = match &mut self.final_norm {
            Some(n) => n.forward(&x, mode)?,
            None => (x, None),
        };
        let pooled = global_avg_pool(&features)?;
        let logits = self.head.forward(&pooled)?;
        self.trace = Some(Trace {
            mode,
            units: traces,
            final_norm,
            features_shape: features.shape().to_vec(),
            pooled,
            logits: logits.clone(),
        });
        Ok(logits)
    }

    fn trace(&self) -> Result<&Trace> {
        self.trace
            .as_ref()
            .ok_or_else(|| Error::CacheMismatch("no forward pass since the last parameter change".into()))
    }

    pub fn logits(&self) -> Result<&Tensor> {
        Ok(&self.trace()?.logits)
    }

    /// Input to unit `k`'s weight layer in the last forward.
    pub fn unit_input(&self, k: usize) -> Result<&Tensor> {
        Ok(&self.trace()?.units.get(k).ok_or_else(|| Error::dim("unit index"))?.input)
    }

    /// Output of unit `k`'s weight layer (pre-normalization) in the last forward.
    pub fn unit_output(&self, k: usize) -> Result<&Tensor> {
        Ok(&self.trace()?.units.get(k).ok_or_else(|| Error::dim("unit index"))?.pre)
    }

    /// The pre-ReLU tensor of unit `k`.
    pub fn unit_pre_relu(&self, k: usize) -> Result<&Tensor> {
        Ok(&self.trace()?.units.get(k).ok_or_else(|| Error::dim("unit index"))?.relu_in)
    }

    /// Activation tapped for moment profiles: pre-normalization where a unit
    /// is normalized, pre-ReLU otherwise.
    pub fn moment_tap(&self, k: usize) -> Result<&Tensor> {
        let t = self.trace()?.units.get(k).ok_or_else(|| Error::dim("unit index"))?;
        Ok(if t.norm.is_some() || self.units[k].norm.is_some() {
            &t.pre
        } else {
            &t.relu_in
        })
    }

    /// Owned copies of every unit's moment tap, in depth order.
    pub fn activation_snapshot(&self) -> Result<Vec<Tensor>> {
        (0..self.units.len()).map(|k| self.moment_tap(k).cloned()).collect()
    }

    /// Gradients for the upstream `∂L/∂logits` of the last forward. Pure, so
    /// it can be repeated with different upstreams (e.g. class masks).
    pub fn backward(&self, grad_logits: &Tensor, options: &BackwardOptions) -> Result<Backprop> {
        let trace = self.trace()?;
        if trace.mode == Mode::Eval {
            return Err(Error::CacheMismatch("backward needs a train or inspect forward".into()));
        }
        if grad_logits.shape() != trace.logits.shape() {
            return Err(Error::dim("logit gradient shape differs from logits"));
        }
        let resnet = self.config.arch == Arch::Resnet;
        let hg = self.head.backward(grad_logits, &trace.pooled)?;
        let mut dx = global_avg_pool_backward(&hg.grad_input, &trace.features_shape)?;
        let mut final_grads = None;
        if let (Some(n), Some(state)) = (&self.final_norm, &trace.final_norm) {
            let g = n.backward(&dx, state)?;
            dx = g.grad_input.clone();
            final_grads = Some(g);
        }

        let n = self.units.len();
        let mut unit_grads: Vec<Vec<Tensor>> = vec![Vec::new(); n];
        let mut unit_upstream: Vec<Option<Tensor>> = vec![None; n];
        let mut pending_shortcut: Option<Tensor> = None;
        for k in (0..n).rev() {
            let (unit, t) = (&self.units[k], &trace.units[k]);
            let dr = relu_backward(&dx, &t.relu_in)?;
            if resnet && k % 2 == 1 {
                let c_in = trace.units[k - 1].input.shape()[1];
                pending_shortcut = Some(unpad_channels(&dr, c_in)?);
            }
            let (du, norm_grads) = match (&unit.norm, &t.norm) {
                (Some(nl), Some(state)) => {
                    let g = nl.backward(&dr, state)?;
                    (g.grad_input.clone(), Some(g))
                }
                _ => (dr, None),
            };
            let grads = &mut unit_grads[k];
            dx = match &unit.weight {
                Weight::Conv(conv) => {
                    let (gi, gk) = conv.backward(&du, &t.input)?;
                    grads.push(gk);
                    gi
                }
                Weight::Dense(d) => {
                    let b = du.shape()[0];
                    let up2 = du.reshape(&[b, d.outputs()])?;
                    let in2 = t.input.reshape(&[b, d.inputs()])?;
                    let g = d.backward(&up2, &in2)?;
                    grads.push(g.grad_weight);
                    grads.push(g.grad_bias);
                    g.grad_input.into_reshaped(t.input.shape())?
                }
            };
            if let Some(g) = norm_grads {
                grads.push(g.grad_gamma);
                grads.push(g.grad_beta);
            }
            if options.expose.contains(&k) {
                unit_upstream[k] = Some(du);
            }
            if resnet && k % 2 == 0 {
                let s = pending_shortcut.take().expect("shortcut gradient from odd unit");
                dx = dx.add(&s)?;
            }
        }

        let mut grads: Vec<Tensor> = unit_grads.into_iter().flatten().collect();
        if let Some(g) = final_grads {
            grads.push(g.grad_gamma);
            grads.push(g.grad_beta);
        }
        grads.push(hg.grad_weight);
        grads.push(hg.grad_bias);
        Ok(Backprop {
            grads,
            unit_upstream,
            grad_input: dx,
        })
    }

    pub fn param_info(&self) -> Vec<ParamInfo> {
        let mut out = Vec::new();
        let mut push = |name: String, unit, role| {
            out.push(ParamInfo {
                name,
                unit,
                role,
                decay: role == ParamRole::Weight,
            })
        };
        for (k, u) in self.units.iter().enumerate() {
            push(format!("unit{k}.weight"), Some(k), ParamRole::Weight);
            if matches!(u.weight, Weight::Dense(_)) {
                push(format!("unit{k}.bias"), Some(k), ParamRole::Bias);
            }
            if u.norm.is_some() {
                push(format!("unit{k}.gamma"), Some(k), ParamRole::Gamma);
                push(format!("unit{k}.beta"), Some(k), ParamRole::Beta);
            }
        }
        if self.final_norm.is_some() {
            push("final_norm.gamma".into(), None, ParamRole::Gamma);
            push("final_norm.beta".into(), None, ParamRole::Beta);
        }
        push("head.weight".into(), None, ParamRole::Weight);
        push("head.bias".into(), None, ParamRole::Bias);
        out
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = Vec::new();
        for u in &self.units {
            match &u.weight {
                Weight::Conv(c) => out.push(&c.kernel),
                Weight::Dense(d) => {
                    out.push(&d.weight);
                    out.push(&d.bias);
                }
            }
            if let Some(n) = &u.norm {
                let (g, b) = n.affine();
                out.extend([g, b]);
            }
        }
        if let Some(n) = &self.final_norm {
            let (g, b) = n.affine();
            out.extend([g, b]);
        }
        out.push(&self.head.weight);
        out.push(&self.head.bias);
        out
    }

    /// Mutable parameter access. Invalidates the forward trace.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.trace = None;
        let mut out: Vec<&mut Tensor> = Vec::new();
        for u in &mut self.units {
            match &mut u.weight {
                Weight::Conv(c) => out.push(&mut c.kernel),
                Weight::Dense(d) => {
                    out.push(&mut d.weight);
                    out.push(&mut d.bias);
                }
            }
            if let Some(n) = &mut u.norm {
                let (g, b) = n.affine_mut();
                out.extend([g, b]);
            }
        }
        if let Some(n) = &mut self.final_norm {
            let (g, b) = n.affine_mut();
            out.extend([g, b]);
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    pub fn param_snapshot(&self) -> Vec<Tensor> {
        self.params().into_iter().cloned().collect()
    }

    pub fn restore_params(&mut self, snapshot: &[Tensor]) -> Result<()> {
        let mut params = self.params_mut();
        if params.len() != snapshot.len() {
            return Err(Error::dim("snapshot parameter count differs"));
        }
        for (p, s) in params.iter_mut().zip(snapshot) {
            if p.shape() != s.shape() {
                return Err(Error::dim("snapshot parameter shape differs"));
            }
            p.data_mut().copy_from_slice(s.data());
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Forward, loss and full backward in one call.
    pub fn loss_and_grads(&mut self, batch: &Batch, mode: Mode) -> Result<(f64, Vec<Tensor>)> {
        let logits = self.forward(&batch.inputs, mode)?;
        let (loss, g) = softmax_xent(&logits, &batch.labels)?;
        let bp = self.backward(&g, &BackwardOptions::default())?;
        Ok((loss, bp.grads))
    }

    pub fn loss(&mut self, batch: &Batch, mode: Mode) -> Result<f64> {
        let logits = self.forward(&batch.inputs, mode)?;
        Ok(softmax_xent(&logits, &batch.labels)?.0)
    }
}

/// Parameter-space view used by probes: losses evaluated without touching
/// normalization state.
impl Model for Network {
    type Batch = Batch;

    fn parameters(&self) -> Vec<f64> {
        self.params().iter().flat_map(|p| p.data().iter().copied()).collect()
    }

    fn set_parameters(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::dim("flat parameter vector length"));
        }
        let mut off = 0;
        for p in self.params_mut() {
            let n = p.len();
            p.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    fn loss(&mut self, batch: &Batch) -> Result<f64> {
        Network::loss(self, batch, Mode::Inspect)
    }

    fn loss_and_gradient(&mut self, batch: &Batch) -> Result<(f64, Vec<f64>)> {
        let (loss, grads) = self.loss_and_grads(batch, Mode::Inspect)?;
        Ok((loss, grads.iter().flat_map(|g| g.data().iter().copied()).collect()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::channel_moments;

    fn config(arch: Arch, depth: usize, placement: NormPlacement) -> NetworkConfig {
        NetworkConfig {
            arch,
            input_shape: [2, 4, 4],
            width: 3,
            depth,
            class_count: 4,
            placement,
            ..NetworkConfig::default()
        }
    }

    fn batch(b: usize, shape: [usize; 3], seed: u64) -> Batch {
        let mut rng = SeededRng::new(seed, 9);
        let n = b * shape.iter().product::<usize>();
        let x = Tensor::new(&[b, shape[0], shape[1], shape[2]], (0..n).map(|_| rng.normal()).collect()).unwrap();
        Batch::new(x, (0..b).map(|i| i % 4).collect()).unwrap()
    }

    #[test]
    fn dense_net_on_zero_input_gives_zero_logits() {
        let mut cfg = config(Arch::Dense, 4, NormPlacement::None);
        cfg.class_count = 4;
        let mut net = Network::new(&cfg, &mut SeededRng::new(1, 0)).unwrap();
        let logits = net.forward(&Tensor::zeros(&[3, 2, 4, 4]).unwrap(), Mode::Train).unwrap();
        assert!(logits.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn per_layer_bn_normalizes_every_pre_relu_activation() {
        let cfg = config(Arch::Conv, 4, NormPlacement::PerLayer);
        let mut net = Network::new(&cfg, &mut SeededRng::new(2, 0)).unwrap();
        net.forward(&batch(6, cfg.input_shape, 3).inputs, Mode::Train).unwrap();
        for k in 0..4 {
            for (m, v) in channel_moments(net.unit_pre_relu(k).unwrap()).unwrap() {
                assert!(m.abs() < 1e-10);
                assert!((v - 1.0).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn resnet_requires_even_depth() {
        let cfg = config(Arch::Resnet, 3, NormPlacement::PerLayer);
        assert!(matches!(Network::new(&cfg, &mut SeededRng::new(0, 0)), Err(Error::Config(_))));
    }

    #[test]
    fn parameter_lists_align() {
        for arch in [Arch::Dense, Arch::Conv, Arch::Resnet] {
            for placement in [NormPlacement::PerLayer, NormPlacement::FinalOnly, NormPlacement::None] {
                let cfg = config(arch, 4, placement);
                let mut net = Network::new(&cfg, &mut SeededRng::new(5, 0)).unwrap();
                let info = net.param_info();
                let b = batch(4, cfg.input_shape, 1);
                let (_, grads) = net.loss_and_grads(&b, Mode::Train).unwrap();
                assert_eq!(info.len(), net.params().len());
                assert_eq!(grads.len(), info.len());
                for (g, p) in grads.iter().zip(net.params()) {
                    assert_eq!(g.shape(), p.shape());
                }
            }
        }
    }

    #[test]
    fn eval_forward_rejects_backward() {
        let cfg = config(Arch::Conv, 2, NormPlacement::None);
        let mut net = Network::new(&cfg, &mut SeededRng::new(5, 0)).unwrap();
        let logits = net.forward(&batch(2, cfg.input_shape, 1).inputs, Mode::Eval).unwrap();
        assert!(net.backward(&logits, &BackwardOptions::default()).is_err());
    }

    #[test]
    fn inspect_leaves_batch_norm_state_untouched() {
        let cfg = config(Arch::Resnet, 2, NormPlacement::PerLayer);
        let mut net = Network::new(&cfg, &mut SeededRng::new(5, 0)).unwrap();
        let b = batch(3, cfg.input_shape, 4);
        net.forward(&b.inputs, Mode::Inspect).unwrap();
        assert!(net.batch_norm(0).unwrap().running_stats().is_none());
        net.forward(&b.inputs, Mode::Train).unwrap();
        assert_eq!(net.batch_norm(1).unwrap().batch_counter(), 1);
    }
}
