use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::ScoreMethod;
use crate::trainer::PROJECTION_DIM;

use super::fixture::SyntheticFixtureSpec;

/// Environment variable that replaces the plan's seeds.
pub const SEED_ENV: &str = "FODFOM_SEED";

/// Which fake-outlier sources and losses a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Stages {
    pub supcon: bool,
    pub bg_ood: bool,
    pub sd_ood: bool,
}

impl Stages {
    pub const NONE: Stages = Stages::new(false, false, false);
    pub const ALL: Stages = Stages::new(true, true, true);

    pub const fn new(supcon: bool, bg_ood: bool, sd_ood: bool) -> Self {
        Self { supcon, bg_ood, sd_ood }
    }

    /// All eight combinations in ablation-table order: baseline, each stage alone,
    /// the fake pair, contrastive with each fake source, everything.
    pub const TABLE_ORDER: [Stages; 8] = [
        Stages::new(false, false, false),
        Stages::new(true, false, false),
        Stages::new(false, true, false),
        Stages::new(false, false, true),
        Stages::new(false, true, true),
        Stages::new(true, true, false),
        Stages::new(true, false, true),
        Stages::new(true, true, true),
    ];

    pub fn is_subset_of(self, other: Stages) -> bool {
        (!self.supcon || other.supcon) && (!self.bg_ood || other.bg_ood) && (!self.sd_ood || other.sd_ood)
    }

    pub fn any(self) -> bool {
        self.supcon || self.bg_ood || self.sd_ood
    }

    /// Subsets of `self` in table order, baseline first.
    pub fn power_set(self) -> Vec<Stages> {
        Self::TABLE_ORDER.into_iter().filter(|s| s.is_subset_of(self)).collect()
    }
}

impl fmt::Display for Stages {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = [(self.supcon, "supcon"), (self.bg_ood, "bg_ood"), (self.sd_ood, "sd_ood")]
            .into_iter()
            .filter_map(|(on, n)| on.then_some(n))
            .collect();
        if parts.is_empty() {
            f.write_str("baseline")
        } else {
            f.write_str(&parts.join("+"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Lambda,
    Tau,
    Alpha,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Lambda => "lambda",
            SweepAxis::Tau => "tau",
            SweepAxis::Alpha => "alpha",
        }
    }
}

impl FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda" => Ok(Self::Lambda),
            "tau" => Ok(Self::Tau),
            "alpha" => Ok(Self::Alpha),
            other => Err(Error::InvalidArgument(format!("unknown sweep axis {other:?}"))),
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Values per sweep axis; an empty list means the default grid.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    #[serde(default)]
    pub lambda: Vec<f64>,
    #[serde(default)]
    pub tau: Vec<f64>,
    #[serde(default)]
    pub alpha: Vec<f64>,
}

impl SweepGrid {
    pub fn values(&self, axis: SweepAxis) -> Vec<f64> {
        let (given, default): (&[f64], &[f64]) = match axis {
            SweepAxis::Lambda => (&self.lambda, &[0.05, 0.5, 1.0, 2.0]),
            SweepAxis::Tau => (&self.tau, &[0.01, 0.1, 1.0, 4.0]),
            SweepAxis::Alpha => (&self.alpha, &[10.0, 20.0, 30.0]),
        };
        if given.is_empty() { default } else { given }.to_vec()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelShape {
    pub encoder_widths: Vec<usize>,
    #[serde(default = "default_projection_dim")]
    pub projection_dim: usize,
}

fn default_projection_dim() -> usize {
    PROJECTION_DIM
}

impl Default for ModelShape {
    fn default() -> Self {
        Self {
            encoder_widths: vec![32],
            projection_dim: PROJECTION_DIM,
        }
    }
}

/// Everything needed to run ablations and sweeps. Data comes from `manifest`
/// when set, otherwise from `fixture`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    #[serde(default)]
    pub fixture: Option<SyntheticFixtureSpec>,
    #[serde(default = "all_stages")]
    pub stages: Stages,
    #[serde(default)]
    pub sweep: SweepGrid,
    pub seeds: Vec<u64>,
    #[serde(default = "default_methods")]
    pub score_methods: Vec<ScoreMethod>,
    #[serde(default = "default_percentile")]
    pub react_percentile: f64,
    #[serde(default)]
    pub model: ModelShape,
}

fn all_stages() -> Stages {
    Stages::ALL
}
fn default_methods() -> Vec<ScoreMethod> {
    vec![ScoreMethod::React]
}
fn default_percentile() -> f64 {
    90.0
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            manifest: None,
            fixture: Some(SyntheticFixtureSpec::default()),
            stages: Stages::ALL,
            sweep: SweepGrid::default(),
            seeds: vec![0, 1, 2, 3, 4],
            score_methods: default_methods(),
            react_percentile: default_percentile(),
            model: ModelShape::default(),
        }
    }
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.into()));
        if !self.stages.any() {
            return bad("plan enables no stage");
        }
        if self.seeds.is_empty() {
            return bad("plan has no seeds");
        }
        if self.score_methods.is_empty() {
            return bad("plan has no score methods");
        }
        if self.manifest.is_none() && self.fixture.is_none() {
            return bad("plan needs a manifest or a fixture spec");
        }
        if !(self.react_percentile > 0.0 && self.react_percentile < 100.0) {
            return bad("react_percentile must lie in (0, 100)");
        }
        if let Some(f) = &self.fixture {
            f.validate()?;
        }
        Ok(())
    }

    /// Loads a JSON plan; a relative manifest path is taken relative to the plan file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut plan: Self = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        if let (Some(m), Some(dir)) = (&plan.manifest, path.parent()) {
            if m.is_relative() {
                plan.manifest = Some(dir.join(m));
            }
        }
        plan.validate()?;
        Ok(plan)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Replaces the seeds with `base, base+1, ...`, keeping their count.
    pub fn override_seed(&mut self, base: u64) {
        let n = self.seeds.len().max(1) as u64;
        self.seeds = (0..n).map(|i| base.wrapping_add(i)).collect();
    }

    /// Applies [`SEED_ENV`] if it is set.
    pub fn apply_seed_env(&mut self) -> Result<()> {
        if let Some(base) = seed_from_env()? {
            self.override_seed(base);
        }
        Ok(())
    }
}

/// Parses [`SEED_ENV`]; unset or empty means no override.
pub fn seed_from_env() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) if v.trim().is_empty() => Ok(None),
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::InvalidArgument(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}
