//! FPR at a target TPR, tie-corrected AUROC, ROC points and report tables.
//!
//! Convention: a sample whose score is `>= λ` is called ID.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

fn check_non_empty(id: &[f64], ood: &[f64]) -> Result<()> {
    if id.is_empty() {
        return Err(Error::EmptyInput("no ID scores".into()));
    }
    if ood.is_empty() {
        return Err(Error::EmptyInput("no OOD scores".into()));
    }
    Ok(())
}

/// Probability that a random ID score beats a random OOD score, ties counting
/// one half. Computed from mid-ranks of the pooled sample.
pub fn auroc(id: &[f64], ood: &[f64]) -> Result<f64> {
    check_non_empty(id, ood)?;
    let mut pooled: Vec<(f64, bool)> = id
        .iter()
        .map(|&s| (s, true))
        .chain(ood.iter().map(|&s| (s, false)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    // twice the mid-rank sum keeps everything integral
    let mut rank_sum_x2: u128 = 0;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j < pooled.len() && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        // ranks i+1..=j share mid-rank (i+1+j)/2
        let ids = pooled[i..j].iter().filter(|p| p.1).count() as u128;
        rank_sum_x2 += ids * (i as u128 + 1 + j as u128);
        i = j;
    }
    let (n_id, n_ood) = (id.len() as u128, ood.len() as u128);
    let u_x2 = rank_sum_x2 - n_id * (n_id + 1);
    Ok(u_x2 as f64 / (2.0 * n_id as f64 * n_ood as f64))
}

/// Threshold `λ*`: the largest score with `#{id >= λ*} / N_id >= target`.
pub fn threshold_at_tpr(id: &[f64], target: f64) -> Result<f64> {
    if id.is_empty() {
        return Err(Error::EmptyInput("no ID scores".into()));
    }
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::InvalidArgument(format!("TPR target {target} not in (0, 1]")));
    }
    let mut sorted = id.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let n = sorted.len() as f64;
    let mut k = 0;
    while k < sorted.len() {
        let v = sorted[k];
        while k < sorted.len() && sorted[k] == v {
            k += 1;
        }
        if k as f64 / n >= target {
            return Ok(v);
        }
    }
    Ok(sorted[sorted.len() - 1])
}

/// OOD false-positive rate at the threshold where ID TPR first reaches `target`.
pub fn fpr_at_tpr(id: &[f64], ood: &[f64], target: f64) -> Result<f64> {
    check_non_empty(id, ood)?;
    let lambda = threshold_at_tpr(id, target)?;
    Ok(ood.iter().filter(|&&s| s >= lambda).count() as f64 / ood.len() as f64)
}

pub fn fpr95(id: &[f64], ood: &[f64]) -> Result<f64> {
    fpr_at_tpr(id, ood, 0.95)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

/// ROC curve with one point per distinct score, thresholds descending.
pub fn roc_curve(id: &[f64], ood: &[f64]) -> Result<Vec<RocPoint>> {
    check_non_empty(id, ood)?;
    let mut pooled: Vec<(f64, bool)> = id
        .iter()
        .map(|&s| (s, true))
        .chain(ood.iter().map(|&s| (s, false)))
        .collect();
    pooled.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (n_id, n_ood) = (id.len() as f64, ood.len() as f64);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut out = Vec::new();
    let mut i = 0;
    while i < pooled.len() {
        let v = pooled[i].0;
        while i < pooled.len() && pooled[i].0 == v {
            if pooled[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push(RocPoint {
            threshold: v,
            tpr: tp as f64 / n_id,
            fpr: fp as f64 / n_ood,
        });
    }
    Ok(out)
}

/// Replaces `+∞` sentinels with `f64::MAX`; NaN is rejected. Returns the number replaced.
pub fn sanitize_scores(scores: &mut [f64]) -> Result<usize> {
    let mut replaced = 0;
    for s in scores.iter_mut() {
        if s.is_nan() {
            return Err(Error::InvalidArgument("NaN score".into()));
        }
        if *s == f64::INFINITY {
            *s = f64::MAX;
            replaced += 1;
        } else if *s == f64::NEG_INFINITY {
            *s = f64::MIN;
            replaced += 1;
        }
    }
    Ok(replaced)
}

/// ID scores plus any number of named OOD score sets.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoredSplit {
    pub id_scores: Vec<f64>,
    pub ood_scores: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetMetrics {
    pub name: String,
    pub fpr95: f64,
    pub auroc: f64,
    #[serde(skip)]
    pub roc: Vec<RocPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sets: Vec<SetMetrics>,
    pub average_fpr95: f64,
    pub average_auroc: f64,
    pub config_hash: String,
    /// How many `±∞` scores were clamped before computing metrics.
    pub sentinels_replaced: usize,
}

/// SHA-256 of a configuration's JSON, first 16 hex digits.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    let json = serde_json::to_vec(config).expect("configuration serializes");
    let digest = Sha256::digest(&json);
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Per-set metrics plus the macro average over OOD sets.
pub fn make_report<T: Serialize>(split: &ScoredSplit, config: &T) -> Result<EvalReport> {
    if split.ood_scores.is_empty() {
        return Err(Error::EmptyInput("no OOD sets".into()));
    }
    let mut id = split.id_scores.clone();
    let mut sentinels = sanitize_scores(&mut id)?;
    let mut ood_sets = Vec::new();
    for (name, scores) in &split.ood_scores {
        let mut s = scores.clone();
        sentinels += sanitize_scores(&mut s)?;
        ood_sets.push((name.clone(), s));
    }
    let sets = ood_sets
        .par_iter()
        .map(|(name, ood)| {
            Ok(SetMetrics {
                name: name.clone(),
                fpr95: fpr95(&id, ood)?,
                auroc: auroc(&id, ood)?,
                roc: roc_curve(&id, ood)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = sets.len() as f64;
    Ok(EvalReport {
        average_fpr95: sets.iter().map(|s| s.fpr95).sum::<f64>() / n,
        average_auroc: sets.iter().map(|s| s.auroc).sum::<f64>() / n,
        sets,
        config_hash: config_hash(config),
        sentinels_replaced: sentinels,
    })
}

impl EvalReport {
    /// Raw values; one row per OOD set, then the `average` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("ood_set,fpr95,auroc\n");
        for s in &self.sets {
            writeln!(out, "{},{},{}", s.name, s.fpr95, s.auroc).unwrap();
        }
        writeln!(out, "average,{},{}", self.average_fpr95, self.average_auroc).unwrap();
        out
    }

    /// Percentages with two decimals, benchmark-table style.
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        writeln!(out, "| OOD set | FPR95 ↓ | AUROC ↑ |").unwrap();
        writeln!(out, "|---|---:|---:|").unwrap();
        for s in &self.sets {
            writeln!(out, "| {} | {:.2} | {:.2} |", s.name, 100.0 * s.fpr95, 100.0 * s.auroc).unwrap();
        }
        writeln!(
            out,
            "| **Average** | {:.2} | {:.2} |",
            100.0 * self.average_fpr95,
            100.0 * self.average_auroc
        )
        .unwrap();
        writeln!(out, "\nAll values are percentages. Config hash `{}`.", self.config_hash).unwrap();
        out
    }

    /// ROC points for every set: `ood_set,threshold,tpr,fpr`.
    pub fn roc_csv(&self) -> String {
        let mut out = String::from("ood_set,threshold,tpr,fpr\n");
        for s in &self.sets {
            for p in &s.roc {
                writeln!(out, "{},{},{},{}", s.name, p.threshold, p.tpr, p.fpr).unwrap();
            }
        }
        out
    }

    /// Writes `<stem>.csv`, `<stem>.md` and `<stem>.roc.csv` next to `path`,
    /// whatever extension `path` carries.
    pub fn write_all(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let write = |ext: &str, body: String| {
            let p = path.with_extension(ext);
            fs::write(&p, body).map_err(|e| Error::io(&p, e))
        };
        write("csv", self.to_csv())?;
        write("md", self.to_markdown())?;
        write("roc.csv", self.roc_csv())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[2.0, 3.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(auroc(&[1.0], &[1.0]).unwrap(), 0.5);
        assert_eq!(auroc(&[0.0], &[1.0]).unwrap(), 0.0);
        assert!(auroc(&[], &[1.0]).is_err());
    }

    #[test]
    fn fpr_examples() {
        let id = [5.0, 4.0, 3.0, 2.0, 1.0];
        assert_eq!(threshold_at_tpr(&id, 0.95).unwrap(), 1.0);
        assert_eq!(fpr95(&id, &[0.5, 1.5]).unwrap(), 0.5);
        assert_eq!(fpr95(&[10.0, 11.0], &[1.0, 2.0]).unwrap(), 0.0);
        let same = [1.0, 2.0, 3.0, 4.0];
        assert!(fpr95(&same, &same).unwrap() >= 0.95);
        assert!(fpr_at_tpr(&id, &[1.0], 0.0).is_err());
        assert!(fpr_at_tpr(&id, &[], 0.5).is_err());
    }

    #[test]
    fn averages() {
        let mut split = ScoredSplit {
            id_scores: vec![1.0, 2.0, 3.0, 4.0, 5.0],
            ..Default::default()
        };
        split.ood_scores.insert("a".into(), vec![0.0, 4.5]);
        let one = make_report(&split, &"cfg").unwrap();
        assert_eq!(one.average_fpr95, one.sets[0].fpr95);
        assert_eq!(one.average_auroc, one.sets[0].auroc);
        assert_eq!(one.to_csv().lines().count(), 3);
    }

    #[test]
    fn sentinel_clamped() {
        let mut s = vec![1.0, f64::INFINITY];
        assert_eq!(sanitize_scores(&mut s).unwrap(), 1);
        assert_eq!(s[1], f64::MAX);
        assert!(sanitize_scores(&mut [f64::NAN]).is_err());
    }

    #[test]
    fn roc_ends_at_one_one() {
        let roc = roc_curve(&[1.0, 2.0, 2.0], &[2.0, 0.0]).unwrap();
        let last = roc.last().unwrap();
        assert_eq!((last.tpr, last.fpr), (1.0, 1.0));
        assert_eq!(roc[0].threshold, 2.0);
        assert_eq!(roc.len(), 3);
    }

    #[test]
    fn markdown_uses_percentages() {
        let mut split = ScoredSplit {
            id_scores: vec![3.0, 4.0],
            ..Default::default()
        };
        split.ood_scores.insert("svhn".into(), vec![1.0, 3.5]);
        let md = make_report(&split, &1u8).unwrap().to_markdown();
        assert!(md.contains("| svhn | 50.00 | 75.00 |"));
    }
}
