use crate::error::{Error, Result};
use crate::matrix::Matrix;

use super::loss::{cross_entropy_with_grad, supcon_with_grad};
use super::model::{Affine, Forward, Mode, ModelParams};

#[derive(Debug, Clone, PartialEq)]
pub struct AffineGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl AffineGrad {
    fn zeros(layer: &Affine) -> Self {
        Self {
            weight: vec![0.0; layer.weight.len()],
            bias: vec![0.0; layer.bias.len()],
        }
    }
}

/// Gradients for every trainable tensor of a [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub encoder: Vec<AffineGrad>,
    pub head: AffineGrad,
    pub proj_in: AffineGrad,
    pub norm_gamma: Vec<f64>,
    pub norm_beta: Vec<f64>,
    pub proj_out: AffineGrad,
}

impl Gradients {
    pub fn zeros(params: &ModelParams) -> Self {
        Self {
            encoder: params.encoder.iter().map(AffineGrad::zeros).collect(),
            head: AffineGrad::zeros(&params.head),
            proj_in: AffineGrad::zeros(&params.proj_in),
            norm_gamma: vec![0.0; params.proj_norm.dim],
            norm_beta: vec![0.0; params.proj_norm.dim],
            proj_out: AffineGrad::zeros(&params.proj_out),
        }
    }

    /// Trainable gradients in the same order as `ModelParams::tensors()`.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for g in &self.encoder {
            out.push(&g.weight);
            out.push(&g.bias);
        }
        out.extend([
            &self.head.weight[..],
            &self.head.bias,
            &self.proj_in.weight,
            &self.proj_in.bias,
            &self.norm_gamma,
            &self.norm_beta,
            &self.proj_out.weight,
            &self.proj_out.bias,
        ]);
        out
    }

    /// The projection-head gradients only.
    pub fn projection_tensors(&self) -> Vec<&[f64]> {
        vec![
            &self.proj_in.weight,
            &self.proj_in.bias,
            &self.norm_gamma,
            &self.norm_beta,
            &self.proj_out.weight,
            &self.proj_out.bias,
        ]
    }
}

/// A mini-batch of features with labels in `[0, C]`; label `C` marks fake OOD.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub features: Matrix,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub ce: f64,
    /// `None` when no anchor in the batch has a positive, or when `λ = 0`.
    pub supcon: Option<f64>,
    pub total: f64,
}

/// Combined objective `L_CE + λ·L_SC` without gradients.
pub fn objective(params: &ModelParams, batch: &Batch, lambda: f64, tau: f64) -> Result<LossBreakdown> {
    let fwd = params.forward(&batch.features, Mode::Train)?;
    let (ce, _) = cross_entropy_with_grad(&fwd.logits, &batch.labels)?;
    let supcon = supcon_term(&fwd, batch, lambda, tau, false)?.map(|(l, _)| l);
    Ok(LossBreakdown {
        ce,
        supcon,
        total: ce + supcon.map_or(0.0, |s| lambda * s),
    })
}

fn supcon_term(fwd: &Forward, batch: &Batch, lambda: f64, tau: f64, want_grad: bool) -> Result<Option<(f64, Option<Matrix>)>> {
    if lambda == 0.0 {
        return Ok(None);
    }
    match supcon_with_grad(&fwd.z, &batch.labels, tau, want_grad) {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedLoss) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Analytic gradients of `L_CE + λ·L_SC` for a training-mode forward pass.
///
/// Also returns the forward pass so callers can fold its batch-norm statistics
/// into the running estimates.
pub fn backward(params: &ModelParams, batch: &Batch, lambda: f64, tau: f64) -> Result<(Gradients, LossBreakdown, Forward)> {
    let fwd = params.forward(&batch.features, Mode::Train)?;
    let cache = &fwd.cache;
    let b = batch.features.rows();
    let f = params.feature_dim();
    let mut grads = Gradients::zeros(params);

    let (ce, dlogits) = cross_entropy_with_grad(&fwd.logits, &batch.labels)?;
    let mut dfeat = affine_backward(&params.head, &cache.features, &dlogits, &mut grads.head);

    let supcon = supcon_term(&fwd, batch, lambda, tau, true)?;
    if let Some((_, Some(dz_unscaled))) = &supcon {
        // λ enters once, here, so every projection gradient is linear in it
        let dz = dz_unscaled.map(|v| lambda * v);
        let mut dhidden = affine_backward(&params.proj_out, &cache.hidden, &dz, &mut grads.proj_out);
        for (g, &n) in dhidden.data_mut().iter_mut().zip(cache.normed.data()) {
            if n <= 0.0 {
                *g = 0.0;
            }
        }
        let gamma = &params.proj_norm.gamma;
        let mut dxhat = Matrix::zeros(b, f);
        for i in 0..b {
            for j in 0..f {
                let dy = dhidden.get(i, j);
                grads.norm_gamma[j] += dy * cache.xhat.get(i, j);
                grads.norm_beta[j] += dy;
                dxhat.row_mut(i)[j] = dy * gamma[j];
            }
        }
        let mut sum_dxhat = vec![0.0; f];
        let mut sum_dxhat_xhat = vec![0.0; f];
        for i in 0..b {
            for j in 0..f {
                sum_dxhat[j] += dxhat.get(i, j);
                sum_dxhat_xhat[j] += dxhat.get(i, j) * cache.xhat.get(i, j);
            }
        }
        let bf = b as f64;
        let mut dpre = Matrix::zeros(b, f);
        for i in 0..b {
            for j in 0..f {
                dpre.row_mut(i)[j] = cache.inv_std[j] / bf
                    * (bf * dxhat.get(i, j) - sum_dxhat[j] - cache.xhat.get(i, j) * sum_dxhat_xhat[j]);
            }
        }
        let dfeat_proj = affine_backward(&params.proj_in, &cache.features, &dpre, &mut grads.proj_in);
        for (a, c) in dfeat.data_mut().iter_mut().zip(dfeat_proj.data()) {
            *a += c;
        }
    }

    for (k, layer) in params.encoder.iter().enumerate().rev() {
        for (g, &p) in dfeat.data_mut().iter_mut().zip(cache.pre_acts[k].data()) {
            if p <= 0.0 {
                *g = 0.0;
            }
        }
        dfeat = affine_backward(layer, &cache.layer_inputs[k], &dfeat, &mut grads.encoder[k]);
    }

    let supcon = supcon.map(|(l, _)| l);
    let breakdown = LossBreakdown {
        ce,
        supcon,
        total: ce + supcon.map_or(0.0, |s| lambda * s),
    };
    Ok((grads, breakdown, fwd))
}

/// Accumulates `dW = doutᵀ·input`, `db = Σ dout` and returns `dinput = dout·W`.
fn affine_backward(layer: &Affine, input: &Matrix, dout: &Matrix, grad: &mut AffineGrad) -> Matrix {
    let (n_in, n_out) = (layer.in_dim, layer.out_dim);
    let mut dinput = Matrix::zeros(input.rows(), n_in);
    for i in 0..input.rows() {
        let x = input.row(i);
        let d = dout.row(i);
        for o in 0..n_out {
            let g = d[o];
            grad.bias[o] += g;
            let w = &layer.weight[o * n_in..(o + 1) * n_in];
            let gw = &mut grad.weight[o * n_in..(o + 1) * n_in];
            for ((gwk, &xk), (dik, &wk)) in gw.iter_mut().zip(x).zip(dinput.row_mut(i).iter_mut().zip(w)) {
                *gwk += g * xk;
                *dik += g * wk;
            }
        }
    }
    dinput
}
