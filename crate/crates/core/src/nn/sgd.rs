use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Piecewise-constant step schedule: at each `(fraction, divisor)` with
/// `epoch_fraction ≥ fraction`, the rate is divided by `divisor`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub steps: Vec<(f64, f64)>,
}

impl LrSchedule {
    pub fn constant() -> Self {
        Self { steps: Vec::new() }
    }

    /// Divide by 10 at half and at three quarters of training.
    pub fn step_decay() -> Self {
        Self {
            steps: vec![(0.5, 10.0), (0.75, 10.0)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for &(f, d) in &self.steps {
            if !(0.0..=1.0).contains(&f) || !(d >= 1.0) {
                return Err(Error::Config(format!(
                    "schedule entry ({f}, {d}) needs fraction in [0,1] and divisor ≥ 1"
                )));
            }
        }
        Ok(())
    }

    pub fn lr(&self, base: f64, epoch_fraction: f64) -> f64 {
        self.steps
            .iter()
            .filter(|(f, _)| epoch_fraction >= *f)
            .fold(base, |lr, (_, d)| lr / d)
    }
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self::step_decay()
    }
}

#[derive(Debug, Clone)]
pub struct SgdState {
    pub momentum: f64,
    pub weight_decay: f64,
    pub base_lr: f64,
    pub schedule: LrSchedule,
    velocity: Vec<Tensor>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub lr: f64,
    /// Some gradient entry was NaN or infinite.
    pub nonfinite_grad: bool,
}

impl SgdState {
    pub fn new(base_lr: f64, momentum: f64, weight_decay: f64, schedule: LrSchedule) -> Result<Self> {
        if !(base_lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {base_lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("momentum must be in [0,1), got {momentum}")));
        }
        if !(weight_decay >= 0.0) {
            return Err(Error::Config(format!("weight decay must be ≥ 0, got {weight_decay}")));
        }
        schedule.validate()?;
        Ok(Self {
            momentum,
            weight_decay,
            base_lr,
            schedule,
            velocity: Vec::new(),
        })
    }

    pub fn lr_at(&self, epoch_fraction: f64) -> f64 {
        self.schedule.lr(self.base_lr, epoch_fraction)
    }

    pub fn velocity(&self) -> &[Tensor] {
        &self.velocity
    }

    /// `v ← m·v + (g + wd·p)` (decay only where `decay[i]`), `p ← p − lr·v`.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor],
        grads: &[Tensor],
        decay: &[bool],
        epoch_fraction: f64,
    ) -> Result<StepReport> {
        if params.len() != grads.len() || params.len() != decay.len() {
            return Err(Error::dim("parameter, gradient and decay lists differ in length"));
        }
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| p.zeros_like()).collect();
        }
        if self.velocity.len() != params.len() {
            return Err(Error::dim("parameter count changed between steps"));
        }
        for ((p, g), v) in params.iter().zip(grads).zip(&self.velocity) {
            if p.shape() != g.shape() || p.shape() != v.shape() {
                return Err(Error::dim(format!(
                    "parameter {:?} / gradient {:?} / velocity {:?}",
                    p.shape(),
                    g.shape(),
                    v.shape()
                )));
            }
        }
        let lr = self.lr_at(epoch_fraction);
        let mut nonfinite = false;
        for (((p, g), v), &dec) in params.iter_mut().zip(grads).zip(&mut self.velocity).zip(decay) {
            let wd = if dec { self.weight_decay } else { 0.0 };
            for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                nonfinite |= !gv.is_finite();
                let d = if wd != 0.0 { gv + wd * *pv } else { gv };
                *vv = self.momentum * *vv + d;
                *pv -= lr * *vv;
            }
        }
        Ok(StepReport {
            lr,
            nonfinite_grad: nonfinite,
        })
    }
}
