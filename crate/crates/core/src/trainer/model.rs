use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const PROJECTION_DIM: usize = 128;
pub const BATCH_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_MOMENTUM: f64 = 0.1;

/// Fully connected layer `y = W x + b`, `W` stored `out × in` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Affine {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Weights uniform in `±1/sqrt(in_dim)`, zero bias.
    pub fn init(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Self {
            in_dim,
            out_dim,
            weight: (0..in_dim * out_dim).map(|_| rng.random_range(-bound..bound)).collect(),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.in_dim {
            return Err(Error::DimMismatch(format!(
                "layer expects {} inputs, got {}",
                self.in_dim,
                x.cols()
            )));
        }
        let mut out = Matrix::zeros(x.rows(), self.out_dim);
        for b in 0..x.rows() {
            let xin = x.row(b);
            let y = out.row_mut(b);
            for (o, yo) in y.iter_mut().enumerate() {
                let w = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
                *yo = self.bias[o] + w.iter().zip(xin).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        Ok(out)
    }

    pub fn forward_one(&self, x: &[f64]) -> Vec<f64> {
        (0..self.out_dim)
            .map(|o| {
                let w = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
                self.bias[o] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }
}

/// Batch normalization with learnable scale/shift and running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub dim: usize,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
            eps: BATCH_NORM_EPS,
            momentum: BATCH_NORM_MOMENTUM,
        }
    }

    /// Folds one batch's statistics into the running estimates
    /// (variance stored with the unbiased `B - 1` denominator).
    pub fn absorb(&mut self, stats: &BatchStats) {
        let b = stats.batch_size as f64;
        let unbias = if stats.batch_size > 1 { b / (b - 1.0) } else { 1.0 };
        let m = self.momentum;
        for j in 0..self.dim {
            self.running_mean[j] = (1.0 - m) * self.running_mean[j] + m * stats.mean[j];
            self.running_var[j] = (1.0 - m) * self.running_var[j] + m * stats.var[j] * unbias;
        }
    }
}

/// Per-feature batch mean and biased variance from a training-mode forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub batch_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch-norm normalizes with the batch's own statistics.
    Train,
    /// Batch-norm uses running statistics.
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    /// Hidden widths of the ReLU encoder; empty means the identity encoder.
    pub encoder_widths: Vec<usize>,
    /// Number of ID classes `C`; the head has `C + 1` outputs.
    pub num_classes: usize,
    #[serde(default = "default_projection_dim")]
    pub projection_dim: usize,
}

fn default_projection_dim() -> usize {
    PROJECTION_DIM
}

impl Architecture {
    pub fn feature_dim(&self) -> usize {
        self.encoder_widths.last().copied().unwrap_or(self.input_dim)
    }
}

/// Encoder `f`, head `h` (C+1 outputs) and projection `g` =
/// Linear → BatchNorm → ReLU → Linear.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub architecture: Architecture,
    pub encoder: Vec<Affine>,
    pub head: Affine,
    pub proj_in: Affine,
    pub proj_norm: BatchNorm,
    pub proj_out: Affine,
}

/// What kind of parameter a tensor is; weight decay applies to `Weight` only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Weight,
    Bias,
    NormScale,
    NormShift,
    /// Running statistics; saved but never trained.
    Buffer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    Encoder,
    Head,
    Projection,
}

#[derive(Debug, Clone)]
pub struct ParamInfo {
    pub name: String,
    pub kind: ParamKind,
    pub part: Part,
    pub shape: Vec<usize>,
}

impl ModelParams {
    pub fn init(arch: Architecture, rng: &mut impl Rng) -> Result<Self> {
        if arch.input_dim == 0 || arch.num_classes == 0 || arch.projection_dim == 0 {
            return Err(Error::InvalidArgument(format!("degenerate architecture {arch:?}")));
        }
        if arch.encoder_widths.contains(&0) {
            return Err(Error::InvalidArgument("encoder widths must be positive".into()));
        }
        let mut encoder = Vec::new();
        let mut prev = arch.input_dim;
        for &w in &arch.encoder_widths {
            encoder.push(Affine::init(prev, w, rng));
            prev = w;
        }
        let f = arch.feature_dim();
        let head = Affine::init(f, arch.num_classes + 1, rng);
        let proj_in = Affine::init(f, f, rng);
        let proj_out = Affine::init(f, arch.projection_dim, rng);
        Ok(Self {
            encoder,
            head,
            proj_in,
            proj_norm: BatchNorm::new(f),
            proj_out,
            architecture: arch,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.architecture.num_classes
    }

    pub fn input_dim(&self) -> usize {
        self.architecture.input_dim
    }

    pub fn feature_dim(&self) -> usize {
        self.architecture.feature_dim()
    }

    /// Layout of every stored tensor, trainable ones first, in a fixed order.
    pub fn layout(&self) -> Vec<ParamInfo> {
        let mut out = Vec::new();
        let mut affine = |name: &str, part: Part, a: &Affine| {
            out.push(ParamInfo {
                name: format!("{name}.weight"),
                kind: ParamKind::Weight,
                part,
                shape: vec![a.out_dim, a.in_dim],
            });
            out.push(ParamInfo {
                name: format!("{name}.bias"),
                kind: ParamKind::Bias,
                part,
                shape: vec![a.out_dim],
            });
        };
        for (i, layer) in self.encoder.iter().enumerate() {
            affine(&format!("encoder.{i}"), Part::Encoder, layer);
        }
        affine("head", Part::Head, &self.head);
        affine("projection.0", Part::Projection, &self.proj_in);
        let f = self.proj_norm.dim;
        let norm = |name: &str, kind| ParamInfo {
            name: format!("projection.1.{name}"),
            kind,
            part: Part::Projection,
            shape: vec![f],
        };
        let mut out = out;
        out.push(norm("gamma", ParamKind::NormScale));
        out.push(norm("beta", ParamKind::NormShift));
        out.push(ParamInfo {
            name: "projection.3.weight".into(),
            kind: ParamKind::Weight,
            part: Part::Projection,
            shape: vec![self.proj_out.out_dim, self.proj_out.in_dim],
        });
        out.push(ParamInfo {
            name: "projection.3.bias".into(),
            kind: ParamKind::Bias,
            part: Part::Projection,
            shape: vec![self.proj_out.out_dim],
        });
        out.push(norm("running_mean", ParamKind::Buffer));
        out.push(norm("running_var", ParamKind::Buffer));
        out
    }

    /// All stored tensors in [`layout`](Self::layout) order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.encoder {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out.extend([
            &self.head.weight[..],
            &self.head.bias,
            &self.proj_in.weight,
            &self.proj_in.bias,
            &self.proj_norm.gamma,
            &self.proj_norm.beta,
            &self.proj_out.weight,
            &self.proj_out.bias,
            &self.proj_norm.running_mean,
            &self.proj_norm.running_var,
        ]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out: Vec<&mut Vec<f64>> = Vec::new();
        for l in &mut self.encoder {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.extend([
            &mut self.head.weight,
            &mut self.head.bias,
            &mut self.proj_in.weight,
            &mut self.proj_in.bias,
            &mut self.proj_norm.gamma,
            &mut self.proj_norm.beta,
            &mut self.proj_out.weight,
            &mut self.proj_out.bias,
            &mut self.proj_norm.running_mean,
            &mut self.proj_norm.running_var,
        ]);
        out
    }

    /// Number of trainable tensors (the leading entries of `tensors()`).
    pub fn trainable_count(&self) -> usize {
        2 * self.encoder.len() + 8
    }

    /// Penultimate activations `f(x)`.
    pub fn features(&self, x: &Matrix) -> Result<Matrix> {
        let mut h = x.clone();
        for layer in &self.encoder {
            h = layer.forward(&h)?.map(relu);
        }
        if h.cols() != self.feature_dim() {
            return Err(Error::DimMismatch(format!(
                "model expects {} input features, got {}",
                self.input_dim(),
                x.cols()
            )));
        }
        Ok(h)
    }

    /// `h(f(x))` for a batch; batch-norm is not involved.
    pub fn logits(&self, x: &Matrix) -> Result<Matrix> {
        self.head.forward(&self.features(x)?)
    }

    pub fn forward(&self, x: &Matrix, mode: Mode) -> Result<Forward> {
        if x.cols() != self.input_dim() {
            return Err(Error::DimMismatch(format!(
                "model expects {} input features, got {}",
                self.input_dim(),
                x.cols()
            )));
        }
        let b = x.rows();
        if mode == Mode::Train && b < 2 {
            return Err(Error::BatchTooSmall(b));
        }
        let mut layer_inputs = Vec::with_capacity(self.encoder.len());
        let mut pre_acts = Vec::with_capacity(self.encoder.len());
        let mut h = x.clone();
        for layer in &self.encoder {
            let pre = layer.forward(&h)?;
            layer_inputs.push(h);
            h = pre.map(relu);
            pre_acts.push(pre);
        }
        let features = h;
        let logits = self.head.forward(&features)?;

        let proj_pre = self.proj_in.forward(&features)?;
        let f = self.proj_norm.dim;
        let (mean, var) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0; f];
                for i in 0..b {
                    for (m, v) in mean.iter_mut().zip(proj_pre.row(i)) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= b as f64);
                let mut var = vec![0.0; f];
                for i in 0..b {
                    for ((s, v), m) in var.iter_mut().zip(proj_pre.row(i)).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                var.iter_mut().for_each(|s| *s /= b as f64);
                (mean, var)
            }
            Mode::Eval => (self.proj_norm.running_mean.clone(), self.proj_norm.running_var.clone()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.proj_norm.eps).sqrt()).collect();
        let mut xhat = Matrix::zeros(b, f);
        let mut normed = Matrix::zeros(b, f);
        for i in 0..b {
            for j in 0..f {
                let xh = (proj_pre.get(i, j) - mean[j]) * inv_std[j];
                xhat.row_mut(i)[j] = xh;
                normed.row_mut(i)[j] = self.proj_norm.gamma[j] * xh + self.proj_norm.beta[j];
            }
        }
        let hidden = normed.map(relu);
        let z = self.proj_out.forward(&hidden)?;
        Ok(Forward {
            logits,
            z,
            cache: Cache {
                layer_inputs,
                pre_acts,
                features,
                xhat,
                inv_std,
                normed,
                hidden,
                stats: BatchStats {
                    mean,
                    var,
                    batch_size: b,
                },
            },
        })
    }
}

#[inline]
pub(crate) fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

/// Output of a forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// `[B, C+1]`
    pub logits: Matrix,
    /// `[B, projection_dim]`
    pub z: Matrix,
    pub cache: Cache,
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    pub layer_inputs: Vec<Matrix>,
    pub pre_acts: Vec<Matrix>,
    pub features: Matrix,
    pub xhat: Matrix,
    pub inv_std: Vec<f64>,
    /// Batch-norm output before the ReLU.
    pub normed: Matrix,
    pub hidden: Matrix,
    pub stats: BatchStats,
}
