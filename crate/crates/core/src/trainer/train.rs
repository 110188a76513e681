use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

use super::backward::{backward, Batch};
use super::model::{Architecture, ModelParams, PROJECTION_DIM};
use super::optim::{OptimizerSchedule, SgdState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda: f64,
    pub tau: f64,
    pub schedule: OptimizerSchedule,
    pub seed: u64,
    #[serde(default)]
    pub encoder_widths: Vec<usize>,
    #[serde(default = "default_projection_dim")]
    pub projection_dim: usize,
}

fn default_projection_dim() -> usize {
    PROJECTION_DIM
}

impl TrainConfig {
    pub fn problems(&self) -> Vec<(String, String)> {
        let mut out = self.schedule.problems();
        if !(self.tau > 0.0) {
            out.push(("tau".into(), format!("{} is not positive", self.tau)));
        }
        if !(self.lambda >= 0.0) {
            out.push(("lambda".into(), format!("{} is negative", self.lambda)));
        }
        out
    }
}

/// ID features (labels `0..C`) plus fake-OOD features (label `C`).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl TrainingSet {
    pub fn new(features: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::DimMismatch(format!(
                "{} rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l > num_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {l} exceeds the fake-OOD label {num_classes}"
            )));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
        })
    }

    /// Appends rows under the fake-OOD label `C`.
    pub fn add_fakes(&mut self, fakes: &Matrix) -> Result<()> {
        self.features = self.features.vstack(fakes)?;
        self.labels.extend(std::iter::repeat_n(self.num_classes, fakes.rows()));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Mean over the epoch's batches.
    pub ce: f64,
    /// Mean over batches where the contrastive term was defined.
    pub supcon: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,lr,ce,supcon\n");
        for e in &self.epochs {
            let sc = e.supcon.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{}\n", e.epoch, e.lr, e.ce, sc));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Trains encoder, head and projection with SGD on `L_CE + λ·L_SC`.
///
/// Deterministic for a given seed: the same ChaCha stream draws the initial
/// weights and then one shuffle per epoch. A trailing single-sample batch is
/// dropped because batch statistics need two rows.
pub fn train(set: &TrainingSet, config: &TrainConfig) -> Result<(ModelParams, TrainLog)> {
    if let Some((field, reason)) = config.problems().into_iter().next() {
        return Err(Error::InvalidArgument(format!("train config {field}: {reason}")));
    }
    if set.len() < 2 {
        return Err(Error::EmptyInput("training needs at least two samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let arch = Architecture {
        input_dim: set.features.cols(),
        encoder_widths: config.encoder_widths.clone(),
        num_classes: set.num_classes,
        projection_dim: config.projection_dim,
    };
    let mut params = ModelParams::init(arch, &mut rng)?;
    let mut sgd = SgdState::new(&params);
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..set.len()).collect();
    let bs = config.schedule.batch_size;

    for epoch in 0..config.schedule.epochs {
        let lr = config.schedule.lr_at(epoch);
        order.shuffle(&mut rng);
        let (mut ce_sum, mut ce_n) = (0.0, 0usize);
        let (mut sc_sum, mut sc_n) = (0.0, 0usize);
        for chunk in order.chunks(bs) {
            if chunk.len() < 2 {
                continue;
            }
            let batch = Batch {
                features: set.features.select_rows(chunk),
                labels: chunk.iter().map(|&i| set.labels[i]).collect(),
            };
            let (grads, loss, fwd) = backward(&params, &batch, config.lambda, config.tau)?;
            ce_sum += loss.ce;
            ce_n += 1;
            if let Some(sc) = loss.supcon {
                sc_sum += sc;
                sc_n += 1;
            }
            params.proj_norm.absorb(&fwd.cache.stats);
            sgd.step(&mut params, &grads, &config.schedule, lr)?;
        }
        log.epochs.push(EpochLog {
            epoch,
            lr,
            ce: if ce_n > 0 { ce_sum / ce_n as f64 } else { f64::NAN },
            supcon: (sc_n > 0).then(|| sc_sum / sc_n as f64),
        });
    }
    Ok((params, log))
}
