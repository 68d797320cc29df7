//! Line-oriented `key = value` experiment configuration.
//!
//! ```text
//! # comments run to end of line
//! seed = 3
//! dataset = synthetic
//! dataset.separation = 4
//! network.depth = 20
//! network.placement = none
//! diagnostics = moments:50, coherence:0
//! ```

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use serde::Serialize;

use super::data::SyntheticSpec;
use crate::diagnostics::{default_probe_alphas, DivergenceConfig};
use crate::error::{Error, Result};
use crate::nn::{Arch, BnSettings, Grouping, LrSchedule, NetworkConfig, NormPlacement};
use crate::noise::Sampling;
use crate::tensor::InitScheme;

pub const DEFAULT_BATCH_SIZE: usize = 128;
pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_WEIGHT_DECAY: f64 = 5e-4;
pub const DEFAULT_LR: f64 = 0.1;
pub const CIFAR_SHAPE: [usize; 3] = [3, 32, 32];

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSource {
    Synthetic {
        spec: SyntheticSpec,
        test_per_class: usize,
    },
    Cifar10 {
        dir: PathBuf,
        train_limit: Option<usize>,
        test_limit: Option<usize>,
    },
}

impl DatasetSource {
    pub fn image_shape(&self) -> [usize; 3] {
        match self {
            DatasetSource::Synthetic { spec, .. } => spec.image_shape,
            DatasetSource::Cifar10 { .. } => CIFAR_SHAPE,
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            DatasetSource::Synthetic { spec, .. } => spec.classes,
            DatasetSource::Cifar10 { .. } => 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Instrument {
    Moments,
    Coherence,
    Heatmap,
    Histogram,
    Probe,
}

impl Instrument {
    pub const ALL: [Instrument; 5] = [
        Instrument::Moments,
        Instrument::Coherence,
        Instrument::Heatmap,
        Instrument::Histogram,
        Instrument::Probe,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Instrument::Moments => "moments",
            Instrument::Coherence => "coherence",
            Instrument::Heatmap => "heatmap",
            Instrument::Histogram => "histogram",
            Instrument::Probe => "probe",
        }
    }
}

impl FromStr for Instrument {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Instrument::ALL
            .into_iter()
            .find(|i| i.name() == s)
            .ok_or_else(|| format!("unknown instrument `{s}`"))
    }
}

/// An instrument runs at step 0, at every multiple of `every` (when
/// non-zero), and after the final step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Schedule {
    pub instrument: Instrument,
    pub every: usize,
}

impl Schedule {
    pub fn due(&self, step: usize, total: usize) -> bool {
        step == 0 || step == total || (self.every > 0 && step % self.every == 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreak {
    #[default]
    LargerLr,
    SmallerLr,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RmtConfig {
    pub ms: Vec<usize>,
    pub n: usize,
    pub trials: usize,
    pub sigma: f64,
    /// Grid points per density table.
    pub points: usize,
}

impl Default for RmtConfig {
    fn default() -> Self {
        Self {
            ms: vec![1, 2, 4, 8],
            n: 200,
            trials: 10,
            sigma: 1.0,
            points: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseConfig {
    pub examples: usize,
    pub dim: usize,
    pub label_noise: f64,
    pub batch_sizes: Vec<usize>,
    pub alphas: Vec<f64>,
    pub trials: usize,
    pub modes: Vec<Sampling>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            examples: 100,
            dim: 10,
            label_noise: 0.5,
            batch_sizes: vec![1, 5, 25],
            alphas: vec![0.1, 1.0],
            trials: 10_000,
            modes: vec![Sampling::WithReplacement, Sampling::WithoutReplacement],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub network: NetworkConfig,
    pub dataset: DatasetSource,
    pub batch_size: usize,
    pub base_lr: f64,
    pub lr_sweep: Option<Vec<f64>>,
    pub epochs: usize,
    /// Overrides `epochs` when set.
    pub steps: Option<usize>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub schedule: LrSchedule,
    pub augment: bool,
    pub preprocess: bool,
    /// Test-set evaluation interval in steps; 0 evaluates after the last step only.
    pub eval_every: usize,
    pub seed: u64,
    pub data_seed: Option<u64>,
    pub tie_break: TieBreak,
    pub diagnostics: Vec<Schedule>,
    pub divergence: DivergenceConfig,
    pub probe_alphas: Vec<f64>,
    pub output: Option<PathBuf>,
    pub rmt: RmtConfig,
    pub noise: NoiseConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let dataset = DatasetSource::Synthetic {
            spec: SyntheticSpec::default(),
            test_per_class: 20,
        };
        Self {
            network: NetworkConfig::default(),
            dataset,
            batch_size: DEFAULT_BATCH_SIZE,
            base_lr: DEFAULT_LR,
            lr_sweep: None,
            epochs: 1,
            steps: None,
            momentum: DEFAULT_MOMENTUM,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            schedule: LrSchedule::step_decay(),
            augment: false,
            preprocess: true,
            eval_every: 0,
            seed: 0,
            data_seed: None,
            tie_break: TieBreak::LargerLr,
            diagnostics: Vec::new(),
            divergence: DivergenceConfig::default(),
            probe_alphas: default_probe_alphas(),
            output: None,
            rmt: RmtConfig::default(),
            noise: NoiseConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Learning rates to train, in configured order.
    pub fn learning_rates(&self) -> Vec<f64> {
        self.lr_sweep.clone().unwrap_or_else(|| vec![self.base_lr])
    }

    /// Total optimizer steps for a training set of `n` examples.
    pub fn total_steps(&self, n: usize) -> usize {
        self.steps
            .unwrap_or_else(|| self.epochs * (n / self.batch_size.max(1)))
    }

    /// Seed of the synthetic data: pinned by `dataset.seed`, else the run seed.
    pub fn data_seed(&self) -> u64 {
        self.data_seed.unwrap_or(self.seed)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size < 2 {
            return bad(format!(
                "batch_size = {} leaves batch normalization a degenerate batch; need at least 2",
                self.batch_size
            ));
        }
        for &lr in self.lr_sweep.iter().flatten().chain([&self.base_lr]) {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("learning rate {lr} must be positive"));
            }
        }
        if matches!(&self.lr_sweep, Some(v) if v.is_empty()) {
            return bad("lr_sweep is empty".into());
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return bad("momentum must lie in [0,1) and weight_decay be non-negative".into());
        }
        self.schedule.validate()?;
        self.divergence.validate()?;
        self.network.validate()?;
        if self.network.input_shape != self.dataset.image_shape() || self.network.class_count != self.dataset.classes() {
            return bad("network input shape or class count disagrees with the dataset".into());
        }
        if let DatasetSource::Synthetic { spec, .. } = &self.dataset {
            if spec.classes < 2 || spec.per_class == 0 {
                return bad("synthetic data needs at least two classes and one example per class".into());
            }
        }
        if self.rmt.ms.is_empty() || self.rmt.ms.contains(&0) || self.rmt.n < 2 || self.rmt.trials == 0 || self.rmt.points == 0 {
            return bad("rmt needs M ≥ 1, n ≥ 2, at least one trial and one grid point".into());
        }
        if !(self.rmt.sigma > 0.0) {
            return bad("rmt.sigma must be positive".into());
        }
        let nz = &self.noise;
        if nz.examples == 0 || nz.dim == 0 || nz.trials == 0 || nz.modes.is_empty() {
            return bad("noise needs examples, dimensions, trials and a sampling mode".into());
        }
        if nz.batch_sizes.iter().any(|&b| b == 0 || b > nz.examples) {
            return bad(format!("noise batch sizes must lie in 1..={}", nz.examples));
        }
        Ok(())
    }
}

struct Entry {
    line: usize,
    value: String,
}

/// Raw key/value pairs, consumed as they are interpreted so that anything
/// left over is an unknown key.
struct Fields {
    entries: BTreeMap<String, Entry>,
}

impl Fields {
    fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(Error::Parse {
                    line,
                    key: content.to_string(),
                    message: "expected `key = value`".into(),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() || key.split('.').any(|p| p.is_empty() || p.contains(char::is_whitespace)) {
                return Err(Error::Parse {
                    line,
                    key: key.into(),
                    message: "malformed key".into(),
                });
            }
            let entry = Entry {
                line,
                value: value.to_string(),
            };
            if let Some(prev) = entries.insert(key.to_string(), entry) {
                return Err(Error::Parse {
                    line,
                    key: key.into(),
                    message: format!("duplicate key, first set on line {}", prev.line),
                });
            }
        }
        Ok(Self { entries })
    }

    fn take_with<T>(&mut self, key: &str, parse: impl FnOnce(&str) -> Result<T, String>) -> Result<Option<T>> {
        let Some(e) = self.entries.remove(key) else {
            return Ok(None);
        };
        parse(&e.value).map(Some).map_err(|message| Error::Parse {
            line: e.line,
            key: key.into(),
            message,
        })
    }

    fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        self.take_with(key, |v| {
            v.parse::<T>()
                .map_err(|_| format!("cannot read `{v}` as {}", short_type_name::<T>()))
        })
    }

    fn take_list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>> {
        self.take_with(key, |v| {
            split_list(v)
                .map(|s| s.parse::<T>().map_err(|_| format!("cannot read list item `{s}`")))
                .collect()
        })
    }

    fn require<T: FromStr>(&mut self, key: &str) -> Result<T> {
        self.take(key)?.ok_or_else(|| Error::Parse {
            line: 0,
            key: key.into(),
            message: "missing required key".into(),
        })
    }

    fn reject_leftovers(self) -> Result<()> {
        match self.entries.into_iter().min_by_key(|(_, e)| e.line) {
            None => Ok(()),
            Some((key, e)) => Err(Error::Parse {
                line: e.line,
                key,
                message: "unknown key".into(),
            }),
        }
    }
}

fn short_type_name<T>() -> &'static str {
    let full = std::any::type_name::<T>();
    full.rsplit("::").next().unwrap_or(full)
}

fn split_list(v: &str) -> impl Iterator<Item = &str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty())
}

fn parse_arch(v: &str) -> Result<Arch, String> {
    match v {
        "dense" => Ok(Arch::Dense),
        "conv" => Ok(Arch::Conv),
        "resnet" => Ok(Arch::Resnet),
        _ => Err(format!("unknown architecture `{v}` (dense, conv, resnet)")),
    }
}

fn parse_placement(v: &str) -> Result<NormPlacement, String> {
    match v {
        "per-layer" => Ok(NormPlacement::PerLayer),
        "final-only" => Ok(NormPlacement::FinalOnly),
        "none" => Ok(NormPlacement::None),
        _ => Err(format!("unknown placement `{v}` (per-layer, final-only, none)")),
    }
}

fn parse_grouping(v: &str) -> Result<Grouping, String> {
    match v.split_once(':') {
        None => match v {
            "batch" => Ok(Grouping::Batch),
            "layer" => Ok(Grouping::Layer),
            "instance" => Ok(Grouping::Instance),
            _ => Err(format!("unknown normalization `{v}` (batch, layer, instance, group:G)")),
        },
        Some(("group", g)) => g
            .trim()
            .parse()
            .ok()
            .filter(|&g| g > 0)
            .map(Grouping::Group)
            .ok_or_else(|| format!("group count `{g}` must be a positive integer")),
        Some(_) => Err(format!("unknown normalization `{v}`")),
    }
}

fn parse_init(v: &str) -> Result<InitScheme, String> {
    match v.split_once(':') {
        None if v == "xavier" => Ok(InitScheme::xavier()),
        None if v == "he" => Ok(InitScheme::he()),
        Some(("gaussian", s)) => s
            .trim()
            .parse::<f64>()
            .ok()
            .filter(|s| *s > 0.0)
            .map(InitScheme::gaussian)
            .ok_or_else(|| format!("gaussian std `{s}` must be positive")),
        _ => Err(format!("unknown init `{v}` (xavier, he, gaussian:STD)")),
    }
}

fn parse_shape(v: &str) -> Result<[usize; 3], String> {
    let parts: Vec<usize> = v
        .split('x')
        .map(|p| p.trim().parse().map_err(|_| format!("bad shape component `{p}`")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [c, h, w] if c > 0 && h > 0 && w > 0 => Ok([c, h, w]),
        _ => Err(format!("shape `{v}` must look like 3x8x8")),
    }
}

fn parse_schedule(v: &str) -> Result<LrSchedule, String> {
    match v {
        "step" => Ok(LrSchedule::step_decay()),
        "constant" => Ok(LrSchedule::constant()),
        _ => split_list(v)
            .map(|item| {
                let (f, d) = item
                    .split_once(':')
                    .ok_or_else(|| format!("schedule entry `{item}` must be FRACTION:DIVISOR"))?;
                let f = f.trim().parse().map_err(|_| format!("bad fraction `{f}`"))?;
                let d = d.trim().parse().map_err(|_| format!("bad divisor `{d}`"))?;
                Ok((f, d))
            })
            .collect::<Result<_, String>>()
            .map(|steps| LrSchedule { steps }),
    }
}

fn parse_diagnostics(v: &str) -> Result<Vec<Schedule>, String> {
    split_list(v)
        .map(|item| {
            let (name, every) = item.split_once(':').unwrap_or((item, "0"));
            Ok(Schedule {
                instrument: name.trim().parse()?,
                every: every.trim().parse().map_err(|_| format!("bad interval `{every}`"))?,
            })
        })
        .collect()
}

fn parse_sampling(v: &str) -> Result<Sampling, String> {
    match v {
        "with-replacement" | "with" => Ok(Sampling::WithReplacement),
        "without-replacement" | "without" => Ok(Sampling::WithoutReplacement),
        _ => Err(format!("unknown sampling mode `{v}`")),
    }
}

fn parse_tie_break(v: &str) -> Result<TieBreak, String> {
    match v {
        "larger-lr" => Ok(TieBreak::LargerLr),
        "smaller-lr" => Ok(TieBreak::SmallerLr),
        _ => Err(format!("unknown tie break `{v}` (larger-lr, smaller-lr)")),
    }
}

fn parse_list_with<T>(v: &str, f: fn(&str) -> Result<T, String>) -> Result<Vec<T>, String> {
    split_list(v).map(f).collect()
}

/// Parses and validates a configuration. `network.depth` and `dataset` are
/// required; everything else has a default.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut f = Fields::parse(text)?;
    let mut cfg = ExperimentConfig::default();

    let net = &mut cfg.network;
    net.depth = f.require("network.depth")?;
    if let Some(v) = f.take_with("network.arch", parse_arch)? {
        net.arch = v;
    }
    if let Some(v) = f.take("network.width")? {
        net.width = v;
    }
    if let Some(v) = f.take_with("network.placement", parse_placement)? {
        net.placement = v;
    }
    if let Some(v) = f.take_with("network.norm", parse_grouping)? {
        net.norm = v;
    }
    if let Some(v) = f.take_with("network.init", parse_init)? {
        net.init = v;
    }
    let bn: &mut BnSettings = &mut net.bn;
    if let Some(v) = f.take("network.bn.eps")? {
        bn.eps = v;
    }
    if let Some(v) = f.take("network.bn.momentum")? {
        bn.momentum = v;
    }
    if let Some(v) = f.take("network.bn.period")? {
        bn.stat_update_period = v;
    }
    if let Some(v) = f.take("network.bn.track_disabled")? {
        bn.track_disabled_stats = v;
    }
    for (key, slot) in [
        ("network.bn.use_mean", &mut bn.toggles.use_mean),
        ("network.bn.use_var", &mut bn.toggles.use_var),
        ("network.bn.use_gamma", &mut bn.toggles.use_gamma),
        ("network.bn.use_beta", &mut bn.toggles.use_beta),
    ] {
        if let Some(v) = f.take(key)? {
            *slot = v;
        }
    }

    let kind: String = f.require("dataset")?;
    cfg.data_seed = f.take("dataset.seed")?;
    cfg.dataset = match kind.as_str() {
        "synthetic" => {
            let mut spec = SyntheticSpec::default();
            if let Some(v) = f.take("dataset.classes")? {
                spec.classes = v;
            }
            if let Some(v) = f.take("dataset.per_class")? {
                spec.per_class = v;
            }
            if let Some(v) = f.take_with("dataset.shape", parse_shape)? {
                spec.image_shape = v;
            }
            if let Some(v) = f.take("dataset.separation")? {
                spec.separation = v;
            }
            let test_per_class = f.take("dataset.test_per_class")?.unwrap_or(20);
            DatasetSource::Synthetic { spec, test_per_class }
        }
        "cifar10" => DatasetSource::Cifar10 {
            dir: f.require::<String>("dataset.path")?.into(),
            train_limit: f.take("dataset.train_limit")?,
            test_limit: f.take("dataset.test_limit")?,
        },
        other => {
            return Err(Error::Parse {
                line: 0,
                key: "dataset".into(),
                message: format!("unknown dataset `{other}` (synthetic, cifar10)"),
            })
        }
    };
    cfg.network.input_shape = cfg.dataset.image_shape();
    cfg.network.class_count = cfg.dataset.classes();
    cfg.augment = matches!(cfg.dataset, DatasetSource::Cifar10 { .. });

    if let Some(v) = f.take("seed")? {
        cfg.seed = v;
    }
    if let Some(v) = f.take("batch_size")? {
        cfg.batch_size = v;
    }
    if let Some(v) = f.take("lr")? {
        cfg.base_lr = v;
    }
    cfg.lr_sweep = f.take_list("lr_sweep")?;
    if let Some(v) = f.take("epochs")? {
        cfg.epochs = v;
    }
    cfg.steps = f.take("steps")?;
    if let Some(v) = f.take("momentum")? {
        cfg.momentum = v;
    }
    if let Some(v) = f.take("weight_decay")? {
        cfg.weight_decay = v;
    }
    if let Some(v) = f.take_with("schedule", parse_schedule)? {
        cfg.schedule = v;
    }
    if let Some(v) = f.take("augment")? {
        cfg.augment = v;
    }
    if let Some(v) = f.take("preprocess")? {
        cfg.preprocess = v;
    }
    if let Some(v) = f.take("eval_every")? {
        cfg.eval_every = v;
    }
    if let Some(v) = f.take_with("tie_break", parse_tie_break)? {
        cfg.tie_break = v;
    }
    if let Some(v) = f.take_with("diagnostics", parse_diagnostics)? {
        cfg.diagnostics = v;
    }
    if let Some(v) = f.take_list("probe.alphas")? {
        cfg.probe_alphas = v;
    }
    if let Some(v) = f.take::<String>("output")? {
        cfg.output = Some(v.into());
    }
    if let Some(v) = f.take("divergence.threshold")? {
        cfg.divergence.threshold = v;
    }
    if let Some(v) = f.take_list("divergence.fractions")? {
        cfg.divergence.fractions = v;
    }

    let rmt = &mut cfg.rmt;
    if let Some(v) = f.take_list("rmt.m")? {
        rmt.ms = v;
    }
    if let Some(v) = f.take("rmt.n")? {
        rmt.n = v;
    }
    if let Some(v) = f.take("rmt.trials")? {
        rmt.trials = v;
    }
    if let Some(v) = f.take("rmt.sigma")? {
        rmt.sigma = v;
    }
    if let Some(v) = f.take("rmt.points")? {
        rmt.points = v;
    }

    let nz = &mut cfg.noise;
    if let Some(v) = f.take("noise.examples")? {
        nz.examples = v;
    }
    if let Some(v) = f.take("noise.dim")? {
        nz.dim = v;
    }
    if let Some(v) = f.take("noise.label_noise")? {
        nz.label_noise = v;
    }
    if let Some(v) = f.take_list("noise.batch_sizes")? {
        nz.batch_sizes = v;
    }
    if let Some(v) = f.take_list("noise.alphas")? {
        nz.alphas = v;
    }
    if let Some(v) = f.take("noise.trials")? {
        nz.trials = v;
    }
    if let Some(v) = f.take_with("noise.modes", |v| parse_list_with(v, parse_sampling))? {
        nz.modes = v;
    }

    f.reject_leftovers()?;
    cfg.validate()?;
    Ok(cfg)
}
