use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::backward::Gradients;
use super::model::{ModelParams, ParamKind};

/// SGD with momentum, optional linear warmup and step decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSchedule {
    pub base_lr: f64,
    pub warmup_start_lr: f64,
    /// Warmup only runs when `batch_size > 256`.
    pub warmup_epochs: usize,
    /// Epochs (0-based) at which the rate is divided by `decay_factor`.
    pub milestones: Vec<usize>,
    pub decay_factor: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl OptimizerSchedule {
    pub fn cifar() -> Self {
        Self {
            base_lr: 0.05,
            warmup_start_lr: 0.01,
            warmup_epochs: 10,
            milestones: vec![100, 150],
            decay_factor: 10.0,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 512,
            epochs: 200,
        }
    }

    pub fn imagenet100() -> Self {
        Self {
            milestones: vec![100, 150, 180],
            batch_size: 128,
            ..Self::cifar()
        }
    }

    pub fn warmup_active(&self) -> bool {
        self.warmup_epochs > 0 && self.batch_size > 256
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.warmup_active() && epoch < self.warmup_epochs {
            let t = epoch as f64 / self.warmup_epochs as f64;
            return self.warmup_start_lr + (self.base_lr - self.warmup_start_lr) * t;
        }
        let passed = self.milestones.iter().filter(|&&m| m <= epoch).count();
        self.base_lr / self.decay_factor.powi(passed as i32)
    }

    pub fn problems(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        if !(self.base_lr > 0.0) {
            out.push(("base_lr".into(), format!("{} is not positive", self.base_lr)));
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            out.push(("milestones".into(), format!("{:?} not strictly increasing", self.milestones)));
        }
        if !(self.decay_factor > 0.0) {
            out.push(("decay_factor".into(), format!("{} is not positive", self.decay_factor)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            out.push(("momentum".into(), format!("{} not in [0, 1)", self.momentum)));
        }
        if !(self.weight_decay >= 0.0) {
            out.push(("weight_decay".into(), format!("{} is negative", self.weight_decay)));
        }
        if self.batch_size < 2 {
            out.push(("batch_size".into(), "must be at least 2 for batch statistics".into()));
        }
        if self.epochs == 0 {
            out.push(("epochs".into(), "must be at least 1".into()));
        }
        out
    }
}

/// Momentum buffers, one per trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    velocity: Vec<Vec<f64>>,
}

impl SgdState {
    pub fn new(params: &ModelParams) -> Self {
        let n = params.trainable_count();
        Self {
            velocity: params.tensors()[..n].iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    /// `v ← μ·v + (g + wd·p)`, `p ← p − lr·v`; decay on affine weights only.
    pub fn step(&mut self, params: &mut ModelParams, grads: &Gradients, schedule: &OptimizerSchedule, lr: f64) -> Result<()> {
        let n = params.trainable_count();
        let kinds: Vec<ParamKind> = params.layout().iter().map(|p| p.kind).collect();
        let grads = grads.tensors();
        if grads.len() != n || self.velocity.len() != n {
            return Err(Error::DimMismatch("gradient layout does not match parameters".into()));
        }
        for (((p, g), v), kind) in params.tensors_mut().into_iter().zip(grads).zip(&mut self.velocity).zip(kinds) {
            if p.len() != g.len() {
                return Err(Error::DimMismatch(format!("tensor of {} values, gradient of {}", p.len(), g.len())));
            }
            let wd = if kind == ParamKind::Weight { schedule.weight_decay } else { 0.0 };
            momentum_update(p, g, v, schedule.momentum, wd, lr);
        }
        Ok(())
    }
}

/// Heavy-ball update applied element-wise.
pub fn momentum_update(params: &mut [f64], grads: &[f64], velocity: &mut [f64], momentum: f64, weight_decay: f64, lr: f64) {
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v + (g + weight_decay * *p);
        *p -= lr * *v;
    }
}

/// One optimizer step at the learning rate scheduled for `epoch`.
pub fn sgd_step(
    params: &mut ModelParams,
    grads: &Gradients,
    state: &mut SgdState,
    schedule: &OptimizerSchedule,
    epoch: usize,
) -> Result<()> {
    let lr = schedule.lr_at(epoch);
    state.step(params, grads, schedule, lr)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn milestones_divide_by_ten() {
        let s = OptimizerSchedule::cifar();
        assert_eq!(s.lr_at(10), 0.05);
        assert!((s.lr_at(99) / s.lr_at(100) - 10.0).abs() < 1e-12);
        assert!((s.lr_at(149) / s.lr_at(150) - 10.0).abs() < 1e-12);
        assert!((s.lr_at(199) - 0.0005).abs() < 1e-15);
    }

    #[test]
    fn warmup_only_for_large_batches() {
        let s = OptimizerSchedule::cifar();
        assert_eq!(s.lr_at(0), 0.01);
        assert!((s.lr_at(5) - 0.03).abs() < 1e-15);
        let small = OptimizerSchedule::imagenet100();
        assert_eq!(small.lr_at(0), 0.05);
    }

    #[test]
    fn quadratic_trajectory_matches_recursion() {
        // f(p) = a/2 · p², so g = a·p
        let (a, lr, mu, wd) = (2.0, 0.1, 0.9, 0.01);
        let mut p = [1.0];
        let mut v = [0.0];
        // hand-unrolled: v1 = g0 + wd p0 = 2.01, p1 = 0.799
        // v2 = 0.9·2.01 + 2.01·0.799 = 1.809 + 1.60599 = 3.41499, p2 = 0.457501
        // v3 = 0.9·3.41499 + 2.01·0.457501 = 3.073491 + 0.91957701 = 3.99306801, p3 = 0.058194199
        let expected = [0.799, 0.457501, 0.058194199];
        for want in expected {
            let g = [a * p[0]];
            momentum_update(&mut p, &g, &mut v, mu, wd, lr);
            assert!((p[0] - want).abs() < 1e-12, "{} vs {want}", p[0]);
        }
    }

    #[test]
    fn non_increasing_milestones_flagged() {
        let mut s = OptimizerSchedule::cifar();
        s.milestones = vec![100, 100];
        assert_eq!(s.problems().len(), 1);
    }
}
