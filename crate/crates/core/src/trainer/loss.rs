use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Max-shifted `log Σ exp(v)`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn check_labels(rows: usize, labels: &[usize], classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::DimMismatch(format!("{rows} rows but {} labels", labels.len())));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::InvalidArgument(format!("label {l} out of range for {classes} outputs")));
    }
    Ok(())
}

/// Mean negative log-softmax of the true class.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<f64> {
    cross_entropy_with_grad(logits, labels).map(|(l, _)| l)
}

/// Loss and `∂L/∂logits`.
pub(crate) fn cross_entropy_with_grad(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    check_labels(logits.rows(), labels, logits.cols())?;
    let b = logits.rows();
    if b == 0 {
        return Err(Error::EmptyInput("cross-entropy of an empty batch".into()));
    }
    let mut grad = Matrix::zeros(b, logits.cols());
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let lse = log_sum_exp(row);
        total += lse - row[y];
        let g = grad.row_mut(i);
        for (gk, &v) in g.iter_mut().zip(row) {
            *gk = (v - lse).exp() / b as f64;
        }
        g[y] -= 1.0 / b as f64;
    }
    Ok((total / b as f64, grad))
}

/// Supervised contrastive loss over cosine similarities.
///
/// For every anchor `i`, the contrast set is every other sample in the batch and
/// the positives are those sharing its label. Anchors without positives are left
/// out, and the outer mean runs over the remaining anchors.
pub fn supcon_loss(z: &Matrix, labels: &[usize], tau: f64) -> Result<f64> {
    supcon_with_grad(z, labels, tau, false).map(|(l, _)| l)
}

pub(crate) fn supcon_with_grad(z: &Matrix, labels: &[usize], tau: f64, want_grad: bool) -> Result<(f64, Option<Matrix>)> {
    if labels.len() != z.rows() {
        return Err(Error::DimMismatch(format!("{} rows but {} labels", z.rows(), labels.len())));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature {tau} must be positive")));
    }
    let b = z.rows();
    if b < 2 {
        return Err(Error::UndefinedLoss);
    }
    let d = z.cols();
    let norms: Vec<f64> = (0..b)
        .map(|i| z.row(i).iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12))
        .collect();
    let mut u = Matrix::zeros(b, d);
    for i in 0..b {
        for (o, v) in u.row_mut(i).iter_mut().zip(z.row(i)) {
            *o = v / norms[i];
        }
    }
    let mut sim = vec![0.0; b * b];
    for i in 0..b {
        for j in 0..b {
            sim[i * b + j] = u.row(i).iter().zip(u.row(j)).map(|(a, c)| a * c).sum();
        }
    }

    let anchors: Vec<usize> = (0..b)
        .filter(|&i| (0..b).any(|j| j != i && labels[j] == labels[i]))
        .collect();
    if anchors.is_empty() {
        return Err(Error::UndefinedLoss);
    }
    let m = anchors.len() as f64;

    // ∂L/∂s_ij, accumulated per anchor
    let mut dsim = vec![0.0; b * b];
    let mut total = 0.0;
    let mut logits = vec![0.0; b - 1];
    for &i in &anchors {
        let others: Vec<usize> = (0..b).filter(|&j| j != i).collect();
        for (slot, &j) in logits.iter_mut().zip(&others) {
            *slot = sim[i * b + j] / tau;
        }
        let lse = log_sum_exp(&logits);
        let positives: Vec<usize> = others.iter().copied().filter(|&j| labels[j] == labels[i]).collect();
        let np = positives.len() as f64;
        let mut anchor_loss = 0.0;
        for &p in &positives {
            anchor_loss -= sim[i * b + p] / tau - lse;
        }
        total += anchor_loss / np;
        if want_grad {
            for (&j, &l) in others.iter().zip(&logits) {
                let q = (l - lse).exp();
                let target = if labels[j] == labels[i] { 1.0 / np } else { 0.0 };
                dsim[i * b + j] += (q - target) / (tau * m);
            }
        }
    }
    let loss = total / m;
    if !want_grad {
        return Ok((loss, None));
    }

    // s_ij = u_i·u_j, so ∂L/∂u_i collects dsim[i][j]·u_j and dsim[j][i]·u_j
    let mut du = Matrix::zeros(b, d);
    for i in 0..b {
        for j in 0..b {
            let g = dsim[i * b + j] + dsim[j * b + i];
            if g == 0.0 || i == j {
                continue;
            }
            let uj = u.row(j).to_vec();
            for (o, v) in du.row_mut(i).iter_mut().zip(&uj) {
                *o += g * v;
            }
        }
    }
    // through u = z/‖z‖
    let mut dz = Matrix::zeros(b, d);
    for i in 0..b {
        let ui = u.row(i);
        let dui = du.row(i);
        let proj: f64 = ui.iter().zip(dui).map(|(a, c)| a * c).sum();
        for ((o, &g), &uv) in dz.row_mut(i).iter_mut().zip(dui).zip(ui) {
            *o = (g - uv * proj) / norms[i];
        }
    }
    Ok((loss, Some(dz)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_classes() {
        let logits = Matrix::new(2, 3, vec![0.7; 6]).unwrap();
        let l = cross_entropy(&logits, &[0, 2]).unwrap();
        assert!((l - 3f64.ln()).abs() < 1e-15);
        assert!((l - 1.098612).abs() < 1e-6);
    }

    #[test]
    fn confident_logit_gives_near_zero() {
        let logits = Matrix::new(1, 3, vec![0.0, 1000.0, 0.0]).unwrap();
        assert!(cross_entropy(&logits, &[1]).unwrap() < 1e-300);
    }

    #[test]
    fn label_out_of_range() {
        let logits = Matrix::zeros(1, 3);
        assert!(cross_entropy(&logits, &[3]).is_err());
    }

    #[test]
    fn identical_pair_has_zero_supcon() {
        let z = Matrix::new(2, 2, vec![0.6, 0.8, 0.6, 0.8]).unwrap();
        assert_eq!(supcon_loss(&z, &[1, 1], 0.1).unwrap(), 0.0);
    }

    #[test]
    fn pair_of_distinct_classes_is_undefined() {
        let z = Matrix::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(matches!(supcon_loss(&z, &[0, 1], 0.1), Err(Error::UndefinedLoss)));
        let single = Matrix::new(1, 2, vec![1.0, 0.0]).unwrap();
        assert!(matches!(supcon_loss(&single, &[0], 0.1), Err(Error::UndefinedLoss)));
    }

    #[test]
    fn anchors_without_positives_are_skipped() {
        // sample 2 has no positive; the loss equals the two-anchor average
        let z = Matrix::new(3, 2, vec![1.0, 0.0, 0.8, 0.6, 0.0, 1.0]).unwrap();
        let full = supcon_loss(&z, &[0, 0, 1], 0.5).unwrap();
        let s01: f64 = 0.8;
        let s02: f64 = 0.0;
        let s12: f64 = 0.6;
        let a0 = -(s01 / 0.5 - log_sum_exp(&[s01 / 0.5, s02 / 0.5]));
        let a1 = -(s01 / 0.5 - log_sum_exp(&[s01 / 0.5, s12 / 0.5]));
        assert!((full - (a0 + a1) / 2.0).abs() < 1e-14);
    }

    #[test]
    fn lse_handles_large_values() {
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }
}
