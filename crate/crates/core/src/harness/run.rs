use std::time::Instant;

use serde::Serialize;

use super::config::{DatasetSource, ExperimentConfig, Instrument, TieBreak};
use super::data::{augment_batch, load_cifar10_dir, preprocess, synth_dataset, ChannelStats, LabeledImageSet};
use crate::diagnostics::{
    class_grad_heatmap, depth_moment_profile, gradient_histogram_stats, loss_step_probe, sign_coherence,
    ClassGradHeatmap, CoherenceRow, DivergenceEvent, DivergenceMonitor, HistogramStats, LossProbeCurve,
    MomentProfile,
};
use crate::error::{Error, Result};
use crate::nn::{accuracy, Batch, Mode, Network, ParamRole, SgdState};
use crate::tensor::SeededRng;

#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: LabeledImageSet,
    pub test: LabeledImageSet,
    pub stats: Option<ChannelStats>,
}

/// Loads or generates the configured data and standardizes it with the
/// training set's channel statistics when `preprocess` is on.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let (mut train, mut test) = match &cfg.dataset {
        DatasetSource::Synthetic { spec, test_per_class } => {
            let per = spec.per_class + test_per_class;
            let mut full_spec = spec.clone();
            full_spec.per_class = per;
            full_spec.seed = cfg.data_seed();
            let full = synth_dataset(&full_spec)?;
            let split = |range: std::ops::Range<usize>| -> Vec<usize> {
                (0..spec.classes).flat_map(|k| range.clone().map(move |i| k * per + i)).collect()
            };
            (
                full.subset(&split(0..spec.per_class))?,
                full.subset(&split(spec.per_class..per))?,
            )
        }
        DatasetSource::Cifar10 {
            dir,
            train_limit,
            test_limit,
        } => {
            let (train, test) = load_cifar10_dir(dir)?;
            let head = |set: LabeledImageSet, limit: &Option<usize>| match limit {
                Some(n) if *n < set.len() => set.subset(&(0..*n).collect::<Vec<_>>()),
                _ => Ok(set),
            };
            (head(train, train_limit)?, head(test, test_limit)?)
        }
    };
    let stats = if cfg.preprocess {
        Some(preprocess(&mut train, &mut [&mut test])?)
    } else {
        None
    };
    Ok(PreparedData { train, test, stats })
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the sweep leg at learning rate `lr`; depends on nothing else, so
/// legs can run in any order.
pub fn leg_seed(seed: u64, lr: f64) -> u64 {
    splitmix64(seed ^ splitmix64(lr.to_bits()))
}

/// Reshuffles the training indices each time fewer than a full batch remain.
struct BatchStream {
    n: usize,
    size: usize,
    order: Vec<usize>,
    pos: usize,
    rng: SeededRng,
}

impl BatchStream {
    fn new(n: usize, size: usize, mut rng: SeededRng) -> Result<Self> {
        if size > n {
            return Err(Error::Config(format!("batch size {size} exceeds the {n} training examples")));
        }
        let order = rng.permutation(n);
        Ok(Self {
            n,
            size,
            order,
            pos: 0,
            rng,
        })
    }

    fn next_indices(&mut self) -> &[usize] {
        if self.pos + self.size > self.n {
            self.order = self.rng.permutation(self.n);
            self.pos = 0;
        }
        self.pos += self.size;
        &self.order[self.pos - self.size..self.pos]
    }
}

/// The batch every instrument measures on: the first minibatch of a
/// permutation drawn from the run seed, shared by all sweep legs.
pub fn diagnostics_batch(cfg: &ExperimentConfig, train: &LabeledImageSet) -> Result<Batch> {
    let mut rng = SeededRng::new(cfg.seed, 3);
    let order = rng.permutation(train.len());
    train.batch(&order[..cfg.batch_size.min(train.len())])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricRow {
    /// Optimizer steps taken.
    pub step: usize,
    pub epoch: f64,
    pub lr: f64,
    /// Minibatch loss before the update.
    pub loss: f64,
    pub train_acc: f64,
    /// NaN when the test set was not evaluated at this step.
    pub test_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerHistogram {
    pub layer: usize,
    pub stats: HistogramStats,
}

/// Instrument reports keyed by the number of steps taken when they ran.
#[derive(Debug, Clone, Default)]
pub struct DiagnosticsLog {
    pub moments: Vec<(usize, MomentProfile)>,
    pub coherence: Vec<(usize, Vec<CoherenceRow>)>,
    pub heatmap: Vec<(usize, ClassGradHeatmap)>,
    pub histogram: Vec<(usize, Vec<LayerHistogram>)>,
    pub probe: Vec<(usize, LossProbeCurve)>,
}

impl DiagnosticsLog {
    pub fn is_empty(&self) -> bool {
        self.moments.is_empty()
            && self.coherence.is_empty()
            && self.heatmap.is_empty()
            && self.histogram.is_empty()
            && self.probe.is_empty()
    }

    fn record(&mut self, cfg: &ExperimentConfig, net: &mut Network, batch: &Batch, step: usize, total: usize) -> Result<()> {
        for s in cfg.diagnostics.iter().filter(|s| s.due(step, total)) {
            match s.instrument {
                Instrument::Moments => self.moments.push((step, depth_moment_profile(net, batch)?)),
                Instrument::Coherence => self.coherence.push((step, sign_coherence(net, batch)?)),
                Instrument::Heatmap => self.heatmap.push((step, class_grad_heatmap(net, batch)?)),
                Instrument::Histogram => self.histogram.push((step, weight_gradient_histograms(net, batch)?)),
                Instrument::Probe => self.probe.push((step, loss_step_probe(net, batch, &cfg.probe_alphas)?)),
            }
        }
        Ok(())
    }
}

/// Gradient statistics over all weights of each unit.
pub fn weight_gradient_histograms(net: &mut Network, batch: &Batch) -> Result<Vec<LayerHistogram>> {
    let (_, grads) = net.loss_and_grads(batch, Mode::Inspect)?;
    net.param_info()
        .iter()
        .zip(&grads)
        .filter(|(info, _)| info.role == ParamRole::Weight && info.unit.is_some())
        .map(|(info, g)| {
            Ok(LayerHistogram {
                layer: info.unit.expect("filtered"),
                stats: gradient_histogram_stats(g.data())?,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct LegOutcome {
    pub lr: f64,
    pub seed: u64,
    pub planned_steps: usize,
    pub metrics: Vec<MetricRow>,
    pub diagnostics: DiagnosticsLog,
    pub divergence: Option<DivergenceEvent>,
}

impl LegOutcome {
    pub fn diverged(&self) -> bool {
        self.divergence.is_some()
    }

    pub fn final_metrics(&self) -> Option<&MetricRow> {
        self.metrics.last()
    }

    pub fn final_test_acc(&self) -> f64 {
        self.final_metrics().map_or(f64::NAN, |m| m.test_acc)
    }
}

/// Test accuracy with running statistics, or NaN when the set is empty or
/// the statistics were never collected.
pub fn evaluate(net: &mut Network, set: &LabeledImageSet, batch_size: usize) -> Result<f64> {
    if set.is_empty() {
        return Ok(f64::NAN);
    }
    let mut hits = 0.0;
    let idx: Vec<usize> = (0..set.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let b = set.batch(chunk)?;
        let logits = match net.forward(&b.inputs, Mode::Eval) {
            Err(Error::UninitializedStats) => return Ok(f64::NAN),
            other => other?,
        };
        hits += accuracy(&logits, &b.labels)? * chunk.len() as f64;
    }
    Ok(hits / set.len() as f64)
}

/// Trains one leg at learning rate `lr`. Stops early, keeping everything
/// recorded so far, when the post-update minibatch loss diverges.
pub fn run_leg(cfg: &ExperimentConfig, data: &PreparedData, lr: f64) -> Result<LegOutcome> {
    let seed = leg_seed(cfg.seed, lr);
    let mut net = Network::new(&cfg.network, &mut SeededRng::new(seed, 0))?;
    let n = data.train.len();
    let mut stream = BatchStream::new(n, cfg.batch_size, SeededRng::new(seed, 1))?;
    let mut aug_rng = SeededRng::new(seed, 2);
    let probe_batch = diagnostics_batch(cfg, &data.train)?;
    let total = cfg.total_steps(n);
    let mut sgd = SgdState::new(lr, cfg.momentum, cfg.weight_decay, cfg.schedule.clone())?;
    let decay: Vec<bool> = net.param_info().iter().map(|p| p.decay).collect();
    let mut monitor = DivergenceMonitor::new(cfg.divergence.clone())?;
    let mut log = DiagnosticsLog::default();
    let mut metrics = Vec::with_capacity(total);

    log.record(cfg, &mut net, &probe_batch, 0, total)?;
    for step in 0..total {
        let mut batch = data.train.batch(stream.next_indices())?;
        if cfg.augment {
            batch = augment_batch(&batch, &mut aug_rng)?;
        }
        let pre_params = net.param_snapshot();
        let (loss, grads) = net.loss_and_grads(&batch, Mode::Train)?;
        let train_acc = accuracy(net.logits()?, &batch.labels)?;
        let report = sgd.step(&mut net.params_mut(), &grads, &decay, step as f64 / total as f64)?;
        let post_loss = net.loss(&batch, Mode::Inspect)?;
        let diverged = monitor.observe(&mut net, &batch, &pre_params, step, loss, post_loss)?;
        let done = step + 1;
        let eval_now = done == total || (cfg.eval_every > 0 && done % cfg.eval_every == 0);
        let test_acc = if eval_now && !diverged {
            evaluate(&mut net, &data.test, cfg.batch_size)?
        } else {
            f64::NAN
        };
        metrics.push(MetricRow {
            step: done,
            epoch: (done * cfg.batch_size) as f64 / n as f64,
            lr: report.lr,
            loss,
            train_acc,
            test_acc,
        });
        if diverged {
            break;
        }
        log.record(cfg, &mut net, &probe_batch, done, total)?;
    }
    Ok(LegOutcome {
        lr,
        seed,
        planned_steps: total,
        metrics,
        diagnostics: log,
        divergence: monitor.into_event(),
    })
}

/// Index of the best completed leg by final test accuracy.
pub fn select_best(legs: &[LegOutcome], tie: TieBreak) -> Option<usize> {
    legs.iter()
        .enumerate()
        .filter(|(_, l)| !l.diverged() && l.final_test_acc().is_finite())
        .max_by(|(_, a), (_, b)| {
            let by_acc = a.final_test_acc().total_cmp(&b.final_test_acc());
            let by_lr = match tie {
                TieBreak::LargerLr => a.lr.total_cmp(&b.lr),
                TieBreak::SmallerLr => b.lr.total_cmp(&a.lr),
            };
            by_acc.then(by_lr)
        })
        .map(|(i, _)| i)
}

#[derive(Debug, Clone)]
pub struct RunArtifact {
    pub config: ExperimentConfig,
    pub legs: Vec<LegOutcome>,
    pub best_leg: Option<usize>,
    pub channel_stats: Option<ChannelStats>,
    pub train_size: usize,
    pub test_size: usize,
    pub wall_clock_secs: f64,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunArtifact> {
    cfg.validate()?;
    let started = Instant::now();
    let data = prepare_data(cfg)?;
    let legs = cfg
        .learning_rates()
        .into_iter()
        .map(|lr| run_leg(cfg, &data, lr))
        .collect::<Result<Vec<_>>>()?;
    Ok(RunArtifact {
        config: cfg.clone(),
        best_leg: select_best(&legs, cfg.tie_break),
        legs,
        channel_stats: data.stats,
        train_size: data.train.len(),
        test_size: data.test.len(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
    })
}
