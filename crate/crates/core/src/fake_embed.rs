//! Fake OOD text embeddings: per-class statistics, periphery selection and the
//! outward radial step.
//!
//! All geometry is done in `f64`; embeddings are `f32` only at the I/O boundary.

use std::fmt;
use std::str::FromStr;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_io::{LabeledEmbeddingSet, TensorF32};

/// How "peripheral" an embedding is relative to its class mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMetric {
    /// Lowest cosine similarity to the mean first.
    #[default]
    Cosine,
    /// Largest Euclidean distance to the mean first.
    Euclidean,
    /// Largest Mahalanobis distance under the shrunk class covariance first.
    Mahalanobis,
}

impl fmt::Display for SelectionMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectionMetric::Cosine => "cosine",
            SelectionMetric::Euclidean => "euclidean",
            SelectionMetric::Mahalanobis => "mahalanobis",
        })
    }
}

impl FromStr for SelectionMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(SelectionMetric::Cosine),
            "euclidean" => Ok(SelectionMetric::Euclidean),
            "mahalanobis" => Ok(SelectionMetric::Mahalanobis),
            other => Err(Error::InvalidArgument(format!("unknown metric {other:?}"))),
        }
    }
}

/// Shrunk class covariance `(1 - ρ)Σ + ρ·diag(Σ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariance {
    pub matrix: DMatrix<f64>,
    pub shrinkage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassStats {
    pub class_index: usize,
    pub mean: Vec<f64>,
    pub count: usize,
    pub covariance: Option<Covariance>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeripherySelection {
    pub class_index: usize,
    /// Selected rows, most peripheral first.
    pub selected_rows: Vec<usize>,
    /// Metric value of the last (boundary) selected row.
    pub threshold: f64,
    pub metric: SelectionMetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_row: usize,
    pub class_index: usize,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FakeEmbeddingBatch {
    pub embeddings: TensorF32,
    pub provenance: Vec<Provenance>,
}

/// A periphery row that produced no fakes because it coincides with its class mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedRow {
    pub source_row: usize,
    pub class_index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FakeSynthesis {
    /// `None` when every selected row was skipped.
    pub batch: Option<FakeEmbeddingBatch>,
    pub skipped: Vec<SkippedRow>,
}

/// Exact per-class means, accumulated in `f64`.
pub fn class_means(set: &LabeledEmbeddingSet) -> Result<Vec<ClassStats>> {
    let d = set.dim();
    let c = set.num_classes();
    let mut sums = vec![vec![0.0f64; d]; c];
    let mut counts = vec![0usize; c];
    for (i, &label) in set.labels().iter().enumerate() {
        counts[label] += 1;
        for (s, &v) in sums[label].iter_mut().zip(set.row(i)) {
            *s += f64::from(v);
        }
    }
    sums.into_iter()
        .zip(counts)
        .enumerate()
        .map(|(class_index, (sum, count))| {
            if count == 0 {
                return Err(Error::MissingClass(class_index));
            }
            let n = count as f64;
            Ok(ClassStats {
                class_index,
                mean: sum.into_iter().map(|s| s / n).collect(),
                count,
                covariance: None,
            })
        })
        .collect()
}

/// Class means plus shrunk per-class covariance (unbiased, `n - 1` denominator;
/// a single-row class gets a zero matrix).
pub fn class_statistics(set: &LabeledEmbeddingSet, shrinkage: f64) -> Result<Vec<ClassStats>> {
    if !(0.0..1.0).contains(&shrinkage) {
        return Err(Error::InvalidArgument(format!("shrinkage {shrinkage} not in [0, 1)")));
    }
    let mut stats = class_means(set)?;
    let d = set.dim();
    for s in &mut stats {
        let mut cov = DMatrix::<f64>::zeros(d, d);
        for i in set.rows_of_class(s.class_index) {
            let diff = DVector::from_iterator(d, set.row(i).iter().zip(&s.mean).map(|(&v, m)| f64::from(v) - m));
            cov.ger(1.0, &diff, &diff, 1.0);
        }
        if s.count > 1 {
            cov /= (s.count - 1) as f64;
        }
        let diag = DMatrix::from_diagonal(&cov.diagonal());
        s.covariance = Some(Covariance {
            matrix: cov * (1.0 - shrinkage) + diag * shrinkage,
            shrinkage,
        });
    }
    Ok(stats)
}

/// Number of periphery rows for a class of `n` rows: `floor(alpha% · n)`, at least 1.
pub fn periphery_count(n: usize, alpha: f64) -> usize {
    let k = (alpha * n as f64 / 100.0).floor() as usize;
    k.clamp(1, n.max(1))
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

pub fn euclidean_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn row_f64(set: &LabeledEmbeddingSet, i: usize) -> Vec<f64> {
    set.row(i).iter().map(|&v| f64::from(v)).collect()
}

/// Picks the `alpha`% most peripheral rows of every class.
///
/// Rows are ordered ascending by cosine similarity to the class mean, or
/// descending by Euclidean/Mahalanobis distance; ties go to the lower row index.
pub fn select_periphery(
    set: &LabeledEmbeddingSet,
    stats: &[ClassStats],
    alpha: f64,
    metric: SelectionMetric,
) -> Result<Vec<PeripherySelection>> {
    if !(alpha > 0.0 && alpha <= 100.0) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} not in (0, 100]")));
    }
    if stats.len() != set.num_classes() {
        return Err(Error::DimMismatch(format!(
            "{} class stats for {} classes",
            stats.len(),
            set.num_classes()
        )));
    }
    stats
        .par_iter()
        .map(|s| select_class(set, s, alpha, metric))
        .collect()
}

fn select_class(
    set: &LabeledEmbeddingSet,
    stats: &ClassStats,
    alpha: f64,
    metric: SelectionMetric,
) -> Result<PeripherySelection> {
    let rows = set.rows_of_class(stats.class_index);
    if rows.is_empty() {
        return Err(Error::MissingClass(stats.class_index));
    }
    let mut scored: Vec<(f64, usize)> = match metric {
        SelectionMetric::Cosine => rows
            .iter()
            .map(|&i| (cosine_similarity(&row_f64(set, i), &stats.mean), i))
            .collect(),
        SelectionMetric::Euclidean => rows
            .iter()
            .map(|&i| (euclidean_distance(&row_f64(set, i), &stats.mean), i))
            .collect(),
        SelectionMetric::Mahalanobis => {
            let cov = stats.covariance.as_ref().ok_or_else(|| {
                Error::InvalidArgument("mahalanobis selection needs class covariance".into())
            })?;
            let chol = cov.matrix.clone().cholesky().ok_or(Error::SingularCovariance {
                class: stats.class_index,
                shrinkage: cov.shrinkage,
            })?;
            let mean = DVector::from_column_slice(&stats.mean);
            rows.iter()
                .map(|&i| {
                    let diff = DVector::from_vec(row_f64(set, i)) - &mean;
                    let solved = chol.solve(&diff);
                    (diff.dot(&solved).max(0.0).sqrt(), i)
                })
                .collect()
        }
    };
    match metric {
        SelectionMetric::Cosine => scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))),
        _ => scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))),
    }
    let k = periphery_count(rows.len(), alpha);
    scored.truncate(k);
    Ok(PeripherySelection {
        class_index: stats.class_index,
        threshold: scored[k - 1].0,
        selected_rows: scored.into_iter().map(|(_, i)| i).collect(),
        metric,
    })
}

/// `t + γ·(t - μ)/‖t - μ‖`, or `None` when `t == μ`.
pub fn radial_step(t: &[f64], mean: &[f64], gamma: f64) -> Option<Vec<f64>> {
    let diff: Vec<f64> = t.iter().zip(mean).map(|(a, b)| a - b).collect();
    let norm = diff.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return None;
    }
    Some(t.iter().zip(&diff).map(|(a, d)| a + gamma * d / norm).collect())
}

/// One fake per (selected row, γ), ordered by class, then selection order, then γ.
pub fn synthesize_fakes(
    set: &LabeledEmbeddingSet,
    stats: &[ClassStats],
    selection: &[PeripherySelection],
    gammas: &[f64],
) -> Result<FakeSynthesis> {
    if let Some(g) = gammas.iter().find(|g| !(g.is_finite() && **g >= 0.0)) {
        return Err(Error::InvalidArgument(format!("gamma {g} must be finite and non-negative")));
    }
    let d = set.dim();
    let mut data = Vec::new();
    let mut provenance = Vec::new();
    let mut skipped = Vec::new();
    for sel in selection {
        let stats = stats
            .iter()
            .find(|s| s.class_index == sel.class_index)
            .ok_or(Error::MissingClass(sel.class_index))?;
        for &row in &sel.selected_rows {
            let t = row_f64(set, row);
            if radial_step(&t, &stats.mean, 0.0).is_none() {
                warn!(
                    "row {row} of class {} equals its class mean; no fakes produced",
                    sel.class_index
                );
                skipped.push(SkippedRow {
                    source_row: row,
                    class_index: sel.class_index,
                    reason: "zero-norm direction: embedding equals class mean".into(),
                });
                continue;
            }
            for &gamma in gammas {
                let fake = radial_step(&t, &stats.mean, gamma).expect("non-zero direction");
                data.extend(fake.iter().map(|&v| v as f32));
                provenance.push(Provenance {
                    source_row: row,
                    class_index: sel.class_index,
                    gamma,
                });
            }
        }
    }
    let batch = if provenance.is_empty() {
        None
    } else {
        Some(FakeEmbeddingBatch {
            embeddings: TensorF32::new(vec![provenance.len(), d], data)?,
            provenance,
        })
    };
    Ok(FakeSynthesis { batch, skipped })
}

/// Full pipeline over a labeled set: statistics, selection, synthesis.
pub fn generate_fakes(
    set: &LabeledEmbeddingSet,
    alpha: f64,
    gammas: &[f64],
    metric: SelectionMetric,
    shrinkage: f64,
) -> Result<FakeSynthesis> {
    let stats = match metric {
        SelectionMetric::Mahalanobis => class_statistics(set, shrinkage)?,
        _ => class_means(set)?,
    };
    let selection = select_periphery(set, &stats, alpha, metric)?;
    synthesize_fakes(set, &stats, &selection, gammas)
}
