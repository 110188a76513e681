//! Hyperparameter block shared by the manifest, the CLI and the experiment plans.

use serde::{Deserialize, Serialize};

use crate::fake_embed::SelectionMetric;
use crate::trainer::OptimizerSchedule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    /// Percentage of each class taken as periphery embeddings.
    pub alpha: f64,
    /// Radial step lengths; every periphery row yields one fake per value.
    pub gammas: Vec<f64>,
    /// Foreground-area gate for background images, in percent.
    pub beta_percent: f64,
    /// Mean-filter kernel size.
    pub kernel_size: u32,
    pub tau: f64,
    pub lambda: f64,
    pub seed: u64,
    #[serde(default)]
    pub metric: SelectionMetric,
    #[serde(default = "default_shrinkage")]
    pub shrinkage: f64,
    /// L2-normalize embeddings before computing class statistics.
    #[serde(default)]
    pub pre_normalize: bool,
    pub optimizer: OptimizerSchedule,
}

fn default_shrinkage() -> f64 {
    0.1
}

impl Hyperparameters {
    /// Settings used for the CIFAR-10/100 benchmarks.
    pub fn cifar() -> Self {
        Self {
            alpha: 30.0,
            gammas: vec![3e-5, 6e-5, 9e-5, 1.2e-4, 1.5e-4],
            beta_percent: 50.0,
            kernel_size: 50,
            tau: 0.1,
            lambda: 1.0,
            seed: 0,
            metric: SelectionMetric::Cosine,
            shrinkage: default_shrinkage(),
            pre_normalize: false,
            optimizer: OptimizerSchedule::cifar(),
        }
    }

    /// Settings used for the ImageNet-100 benchmark.
    pub fn imagenet100() -> Self {
        Self {
            alpha: 20.0,
            gammas: vec![1e-5, 5e-5, 9e-5],
            optimizer: OptimizerSchedule::imagenet100(),
            ..Self::cifar()
        }
    }

    /// Range problems as `(field, reason)` pairs; empty when everything is usable.
    pub fn problems(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let mut bad = |field: &str, reason: String| out.push((field.to_string(), reason));
        if !(self.alpha > 0.0 && self.alpha <= 100.0) {
            bad("alpha", format!("{} not in (0, 100]", self.alpha));
        }
        if self.gammas.is_empty() {
            bad("gammas", "empty list".into());
        }
        if let Some(g) = self.gammas.iter().find(|g| !(g.is_finite() && **g > 0.0)) {
            bad("gammas", format!("{g} is not a positive step"));
        }
        if !(self.beta_percent > 0.0 && self.beta_percent <= 100.0) {
            bad("beta_percent", format!("{} not in (0, 100]", self.beta_percent));
        }
        if self.kernel_size < 1 {
            bad("kernel_size", "must be at least 1".into());
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            bad("tau", format!("{} is not positive", self.tau));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            bad("lambda", format!("{} is negative", self.lambda));
        }
        if !(0.0..1.0).contains(&self.shrinkage) {
            bad("shrinkage", format!("{} not in [0, 1)", self.shrinkage));
        }
        for (field, reason) in self.optimizer.problems() {
            bad(&format!("optimizer.{field}"), reason);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid() {
        assert!(Hyperparameters::cifar().problems().is_empty());
        assert!(Hyperparameters::imagenet100().problems().is_empty());
    }

    #[test]
    fn out_of_range_fields_reported() {
        let mut h = Hyperparameters::cifar();
        h.alpha = 0.0;
        h.tau = 0.0;
        h.gammas.clear();
        let fields: Vec<_> = h.problems().into_iter().map(|(f, _)| f).collect();
        assert_eq!(fields, ["alpha", "gammas", "tau"]);
    }
}
