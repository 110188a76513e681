//! Central finite-difference check of the analytic gradients.

use crate::error::{Error, Result};

use super::backward::{backward, objective, Batch, LossBreakdown};
use super::model::{Mode, ModelParams, Part};

/// Which part of the objective is differentiated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Term {
    CrossEntropy,
    /// The contrastive loss alone; its analytic gradient is the difference of
    /// the `λ = 1` and `λ = 0` backward passes.
    SupCon,
    /// `L_CE + λ·L_SC`
    Combined { lambda: f64 },
}

impl Term {
    fn value(self, l: &LossBreakdown) -> Result<f64> {
        match self {
            Term::CrossEntropy => Ok(l.ce),
            Term::SupCon => l.supcon.ok_or(Error::UndefinedLoss),
            Term::Combined { .. } => Ok(l.total),
        }
    }

    fn lambda(self) -> f64 {
        match self {
            Term::CrossEntropy => 0.0,
            Term::SupCon => 1.0,
            Term::Combined { lambda } => lambda,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_err: f64,
    /// Layout name and flat index of the worst entry.
    pub worst: (String, usize),
    /// Worst error per model part, in encoder, head, projection order.
    pub by_part: Vec<(Part, f64)>,
    pub checked: usize,
}

/// Distance from the nearest non-differentiable point: the smallest `|x|` over
/// ReLU inputs (encoder pre-activations, batch-normed projection) and the
/// smallest projection norm `‖z_i‖` (cosine normalization is singular at 0).
/// Finite differences are only meaningful when this clearly exceeds the step.
pub fn kink_margin(params: &ModelParams, batch: &Batch) -> Result<f64> {
    let fwd = params.forward(&batch.features, Mode::Train)?;
    let relu = fwd
        .cache
        .pre_acts
        .iter()
        .chain(std::iter::once(&fwd.cache.normed))
        .flat_map(|m| m.data().iter())
        .fold(f64::INFINITY, |acc, v| acc.min(v.abs()));
    let norm = (0..fwd.z.rows())
        .map(|i| fwd.z.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(f64::INFINITY, f64::min);
    Ok(relu.min(norm))
}

fn analytic(params: &ModelParams, batch: &Batch, term: Term, tau: f64) -> Result<Vec<Vec<f64>>> {
    let grads = |lambda| -> Result<Vec<Vec<f64>>> {
        let (g, _, _) = backward(params, batch, lambda, tau)?;
        Ok(g.tensors().into_iter().map(<[f64]>::to_vec).collect())
    };
    match term {
        Term::SupCon => {
            let with = grads(1.0)?;
            let without = grads(0.0)?;
            Ok(with
                .iter()
                .zip(&without)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
                .collect())
        }
        _ => grads(term.lambda()),
    }
}

/// Compares every trainable parameter's analytic gradient with
/// `(L(p+h) − L(p−h)) / 2h`, computed in `f64`.
pub fn check_gradients(
    params: &ModelParams,
    batch: &Batch,
    term: Term,
    tau: f64,
    h: f64,
    floor: f64,
) -> Result<GradCheck> {
    let analytic = analytic(params, batch, term, tau)?;
    let layout = params.layout();
    let lambda = term.lambda();
    let mut probe = params.clone();
    let mut out = GradCheck {
        max_rel_err: 0.0,
        worst: (String::new(), 0),
        by_part: vec![(Part::Encoder, 0.0), (Part::Head, 0.0), (Part::Projection, 0.0)],
        checked: 0,
    };
    for (t, grad) in analytic.iter().enumerate() {
        for (i, &a) in grad.iter().enumerate() {
            let orig = probe.tensors_mut()[t][i];
            probe.tensors_mut()[t][i] = orig + h;
            let up = term.value(&objective(&probe, batch, lambda, tau)?)?;
            probe.tensors_mut()[t][i] = orig - h;
            let down = term.value(&objective(&probe, batch, lambda, tau)?)?;
            probe.tensors_mut()[t][i] = orig;
            let n = (up - down) / (2.0 * h);
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(floor);
            if rel > out.max_rel_err {
                out.max_rel_err = rel;
                out.worst = (layout[t].name.clone(), i);
            }
            if let Some(slot) = out.by_part.iter_mut().find(|(p, _)| *p == layout[t].part) {
                slot.1 = slot.1.max(rel);
            }
            out.checked += 1;
        }
    }
    Ok(out)
}
