//! Post-hoc OOD scores over (C+1)-way logits. Higher always means "more ID".

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::trainer::{log_sum_exp, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMethod {
    /// Max softmax probability over the first C logits alone.
    Msp,
    /// Negative energy over the first C logits.
    Energy,
    /// Energy after clamping penultimate activations.
    React,
    /// Max of the first C entries of the (C+1)-way softmax.
    MspPreC,
    /// `MspPreC` divided by the probability of the fake-OOD class.
    MspRatio,
}

impl ScoreMethod {
    pub const ALL: [ScoreMethod; 5] = [
        ScoreMethod::Msp,
        ScoreMethod::Energy,
        ScoreMethod::React,
        ScoreMethod::MspPreC,
        ScoreMethod::MspRatio,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScoreMethod::Msp => "msp",
            ScoreMethod::Energy => "energy",
            ScoreMethod::React => "react",
            ScoreMethod::MspPreC => "msp_pre_c",
            ScoreMethod::MspRatio => "msp_ratio",
        }
    }
}

impl fmt::Display for ScoreMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScoreMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScoreMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown score method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MspVariant {
    Msp,
    PreC,
    Ratio,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreConfig {
    pub method: ScoreMethod,
    /// Percentile in the open interval (0, 100).
    pub react_percentile: f64,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            method: ScoreMethod::React,
            react_percentile: 90.0,
        }
    }
}

/// Activation clip value estimated from ID penultimate features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RectifyThreshold {
    pub clip_value: f64,
    pub percentile: f64,
    pub sample_count: usize,
}

impl RectifyThreshold {
    /// A threshold that never clips.
    pub fn disabled() -> Self {
        Self {
            clip_value: f64::INFINITY,
            percentile: 100.0,
            sample_count: 0,
        }
    }
}

fn check_classes(logits: &[f64], num_classes: usize) -> Result<()> {
    if num_classes == 0 || logits.len() != num_classes + 1 {
        return Err(Error::DimMismatch(format!(
            "expected {} logits for {num_classes} ID classes, got {}",
            num_classes + 1,
            logits.len()
        )));
    }
    Ok(())
}

/// `log Σ_{i<C} exp(h_i)`; the fake-OOD logit is ignored.
pub fn energy_score(logits: &[f64], num_classes: usize) -> Result<f64> {
    check_classes(logits, num_classes)?;
    Ok(log_sum_exp(&logits[..num_classes]))
}

/// MSP variants. `Ratio` returns `+∞` when the fake-OOD probability underflows to 0
/// (or the ratio itself exceeds the `f64` range).
pub fn msp_score(logits: &[f64], num_classes: usize, variant: MspVariant) -> Result<f64> {
    check_classes(logits, num_classes)?;
    let id = &logits[..num_classes];
    let max_id = id.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(match variant {
        MspVariant::Msp => (max_id - log_sum_exp(id)).exp(),
        MspVariant::PreC => (max_id - log_sum_exp(logits)).exp(),
        MspVariant::Ratio => {
            let lse = log_sum_exp(logits);
            let p_ood = (logits[num_classes] - lse).exp();
            if p_ood == 0.0 {
                f64::INFINITY
            } else {
                // p_max / p_ood, with the shared normalizer cancelled
                (max_id - logits[num_classes]).exp()
            }
        }
    })
}

/// Linear-interpolated percentile of the flattened activations.
pub fn estimate_rectify(id_features: &Matrix, percentile: f64) -> Result<RectifyThreshold> {
    if !(percentile > 0.0 && percentile < 100.0) {
        return Err(Error::InvalidArgument(format!("percentile {percentile} not in (0, 100)")));
    }
    if id_features.data().is_empty() {
        return Err(Error::EmptyInput("no ID activations to estimate a threshold from".into()));
    }
    let mut values = id_features.data().to_vec();
    values.sort_by(f64::total_cmp);
    let pos = percentile / 100.0 * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    let clip_value = if lo == hi {
        values[lo]
    } else {
        values[lo] + (values[hi] - values[lo]) * frac
    };
    Ok(RectifyThreshold {
        clip_value,
        percentile,
        sample_count: id_features.rows(),
    })
}

/// Clamps penultimate activations at the threshold, applies the head, and
/// returns the energy score of the result.
pub fn react_score(params: &ModelParams, feature: &[f64], threshold: &RectifyThreshold) -> Result<f64> {
    if feature.len() != params.feature_dim() {
        return Err(Error::DimMismatch(format!(
            "head expects {} activations, got {}",
            params.feature_dim(),
            feature.len()
        )));
    }
    let clipped: Vec<f64> = feature.iter().map(|&a| a.min(threshold.clip_value)).collect();
    energy_score(&params.head.forward_one(&clipped), params.num_classes())
}

/// Scores a batch of model inputs. `threshold` is required for `React`.
pub fn score_inputs(
    params: &ModelParams,
    inputs: &Matrix,
    method: ScoreMethod,
    threshold: Option<&RectifyThreshold>,
) -> Result<Vec<f64>> {
    let c = params.num_classes();
    let features = params.features(inputs)?;
    if method == ScoreMethod::React {
        let t = threshold.ok_or_else(|| Error::InvalidArgument("react needs a rectification threshold".into()))?;
        return (0..features.rows()).map(|i| react_score(params, features.row(i), t)).collect();
    }
    let logits = params.head.forward(&features)?;
    (0..logits.rows())
        .map(|i| score_logits(logits.row(i), c, method))
        .collect()
}

/// Scores one logit vector with any non-ReAct method.
pub fn score_logits(logits: &[f64], num_classes: usize, method: ScoreMethod) -> Result<f64> {
    match method {
        ScoreMethod::Energy | ScoreMethod::React => energy_score(logits, num_classes),
        ScoreMethod::Msp => msp_score(logits, num_classes, MspVariant::Msp),
        ScoreMethod::MspPreC => msp_score(logits, num_classes, MspVariant::PreC),
        ScoreMethod::MspRatio => msp_score(logits, num_classes, MspVariant::Ratio),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn energy_examples() {
        assert!((energy_score(&[0.0, 0.0, 42.0], 2).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(energy_score(&[1.25, -7.0], 1).unwrap(), 1.25);
        let e = energy_score(&[1.0, 2.0, 3.0, 100.0], 3).unwrap();
        assert!((e - 3.407605964444380).abs() < 1e-12);
    }

    #[test]
    fn msp_examples() {
        let u = [0.3, 0.3, 0.3];
        assert!((msp_score(&u, 2, MspVariant::PreC).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((msp_score(&u, 2, MspVariant::Ratio).unwrap() - 1.0).abs() < 1e-15);
        assert!((msp_score(&u, 2, MspVariant::Msp).unwrap() - 0.5).abs() < 1e-15);
        let r = msp_score(&[0.0, 0.0, -1000.0], 2, MspVariant::Ratio).unwrap();
        assert!(r > 1e300);
    }

    #[test]
    fn ratio_sentinel() {
        assert_eq!(msp_score(&[0.0, 0.0, -1e6], 2, MspVariant::Ratio).unwrap(), f64::INFINITY);
    }

    #[test]
    fn wrong_logit_count() {
        assert!(energy_score(&[1.0, 2.0], 2).is_err());
        assert!(msp_score(&[1.0], 0, MspVariant::Msp).is_err());
    }

    #[test]
    fn percentile_examples() {
        let flat = Matrix::new(10, 10, (1..=100).map(f64::from).collect()).unwrap();
        let t = estimate_rectify(&flat, 90.0).unwrap();
        assert!((t.clip_value - 90.1).abs() < 1e-12);
        let constant = Matrix::new(3, 4, vec![5.0; 12]).unwrap();
        for p in [1.0, 50.0, 99.9] {
            assert_eq!(estimate_rectify(&constant, p).unwrap().clip_value, 5.0);
        }
        assert!(estimate_rectify(&flat, 100.0).is_err());
        assert!(estimate_rectify(&flat, 0.0).is_err());
        assert!(estimate_rectify(&Matrix::zeros(0, 3), 50.0).is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in ScoreMethod::ALL {
            assert_eq!(m.name().parse::<ScoreMethod>().unwrap(), m);
        }
    }
}
