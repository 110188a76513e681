#![allow(dead_code)]

use fodfom::matrix::Matrix;
use fodfom::trainer::{kink_margin, Architecture, Batch, ModelParams};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random small net and batch whose ReLU inputs all sit at least `margin` from 0.
/// Batch-norm scale and shift are randomized so that path is exercised too.
pub fn random_net(rng: &mut ChaCha8Rng, margin: f64) -> (ModelParams, Batch) {
    loop {
        let input_dim = rng.random_range(2..=5);
        let depth = rng.random_range(1..=2);
        let arch = Architecture {
            input_dim,
            encoder_widths: (0..depth).map(|_| rng.random_range(3..=6)).collect(),
            num_classes: rng.random_range(2..=3),
            projection_dim: rng.random_range(3..=6),
        };
        let c = arch.num_classes;
        let mut params = ModelParams::init(arch, rng).unwrap();
        for v in params.proj_norm.gamma.iter_mut() {
            *v = rng.random_range(0.5..1.5);
        }
        for v in params.proj_norm.beta.iter_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
        let b = rng.random_range(5..=8);
        let data = (0..b * input_dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        // labels cycle so every batch has positives for the contrastive term
        let labels = (0..b).map(|i| i % (c + 1)).collect();
        let batch = Batch {
            features: Matrix::new(b, input_dim, data).unwrap(),
            labels,
        };
        if kink_margin(&params, &batch).unwrap() > margin {
            return (params, batch);
        }
    }
}

/// Cosine similarity written out directly.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Gaussian elimination with partial pivoting; `a` is row-major `n × n`.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// Brute-force periphery ranking: score every row and fully sort with the tie
/// rule. `kind` is 0 cosine, 1 Euclidean, 2 Mahalanobis with shrinkage `rho`.
pub fn periphery_ranking(rows: &[Vec<f64>], kind: u8, rho: f64) -> Vec<(f64, usize)> {
    let n = rows.len();
    let d = rows[0].len();
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let mut cov = vec![vec![0.0; d]; d];
    for r in rows {
        for a in 0..d {
            for b in 0..d {
                cov[a][b] += (r[a] - mean[a]) * (r[b] - mean[b]);
            }
        }
    }
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    for a in 0..d {
        for b in 0..d {
            cov[a][b] /= denom;
            if a != b {
                cov[a][b] *= 1.0 - rho;
            }
        }
    }
    let mut scored: Vec<(f64, usize)> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let diff: Vec<f64> = r.iter().zip(&mean).map(|(x, m)| x - m).collect();
            let s = match kind {
                0 => cosine(r, &mean),
                1 => diff.iter().map(|x| x * x).sum::<f64>().sqrt(),
                _ => {
                    let y = solve(cov.clone(), diff.clone());
                    diff.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>().max(0.0).sqrt()
                }
            };
            (s, i)
        })
        .collect();
    if kind == 0 {
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    } else {
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    }
    scored
}

/// Count of periphery rows, `floor(alpha% · n)` but at least one.
pub fn periphery_k(n: usize, alpha: f64) -> usize {
    ((alpha * n as f64 / 100.0).floor() as usize).max(1)
}

/// Direct per-pixel window mean with clipping and half-away-from-zero rounding.
pub fn naive_blur(
    img: &fodfom::background::ImageU8,
    b: &fodfom::tensor_io::BoundingBox,
    k: u32,
) -> fodfom::background::ImageU8 {
    let mut out = img.clone();
    let lo = -((k as i64 - 1) / 2);
    let hi = k as i64 / 2;
    let (w, h) = (img.width() as i64, img.height() as i64);
    for y in b.y0..b.y1 {
        for x in b.x0..b.x1 {
            for c in 0..img.channels() {
                let (mut sum, mut cnt) = (0u64, 0u64);
                for dy in lo..=hi {
                    for dx in lo..=hi {
                        let (xx, yy) = (x as i64 + dx, y as i64 + dy);
                        if xx >= 0 && yy >= 0 && xx < w && yy < h {
                            sum += u64::from(img.get(xx as u32, yy as u32, c));
                            cnt += 1;
                        }
                    }
                }
                let mean = sum as f64 / cnt as f64;
                out.set(x, y, c, mean.round() as u8);
            }
        }
    }
    out
}

/// `log Σ exp(x_i)` from the largest term with a compensated sum of the rest.
pub fn lse_oracle(x: &[f64]) -> f64 {
    let (imax, &m) = x.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
    let (mut s, mut comp) = (0.0f64, 0.0f64);
    for (i, &v) in x.iter().enumerate() {
        if i == imax {
            continue;
        }
        let t = (v - m).exp();
        let y = s + t;
        comp += if s.abs() >= t.abs() { (s - y) + t } else { (t - y) + s };
        s = y;
    }
    m + (s + comp).ln_1p()
}

/// Softmax over all entries via the oracle normalizer.
pub fn softmax_oracle(x: &[f64]) -> Vec<f64> {
    let z = lse_oracle(x);
    x.iter().map(|v| (v - z).exp()).collect()
}

/// AUROC by counting every (ID, OOD) pair.
pub fn auroc_pairs(id: &[f64], ood: &[f64]) -> f64 {
    let mut wins = 0u64;
    let mut ties = 0u64;
    for &a in id {
        for &b in ood {
            if a > b {
                wins += 1;
            } else if a == b {
                ties += 1;
            }
        }
    }
    (wins as f64 + 0.5 * ties as f64) / (id.len() as f64 * ood.len() as f64)
}

/// FPR at a TPR target by trying every candidate threshold (every observed score).
pub fn fpr_sweep(id: &[f64], ood: &[f64], target: f64) -> f64 {
    let mut best: Option<f64> = None;
    for &t in id.iter().chain(ood) {
        let tpr = id.iter().filter(|&&s| s >= t).count() as f64 / id.len() as f64;
        if tpr >= target && best.is_none_or(|b| t > b) {
            best = Some(t);
        }
    }
    let t = best.expect("the minimum ID score always qualifies");
    ood.iter().filter(|&&s| s >= t).count() as f64 / ood.len() as f64
}

fn dense(x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let n_in = x.len();
    (0..b.len())
        .map(|o| b[o] + (0..n_in).map(|k| w[o * n_in + k] * x[k]).sum::<f64>())
        .collect()
}

/// Straight-line training-mode forward pass, one row at a time:
/// returns (logits, projections).
pub fn oracle_forward(p: &ModelParams, x: &Matrix) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let b = x.rows();
    let mut feats = Vec::new();
    let mut logits = Vec::new();
    for i in 0..b {
        let mut h = x.row(i).to_vec();
        for layer in &p.encoder {
            h = dense(&h, &layer.weight, &layer.bias).into_iter().map(|v| v.max(0.0)).collect();
        }
        logits.push(dense(&h, &p.head.weight, &p.head.bias));
        feats.push(h);
    }
    let pre: Vec<Vec<f64>> = feats.iter().map(|f| dense(f, &p.proj_in.weight, &p.proj_in.bias)).collect();
    let f = pre[0].len();
    let mut z = Vec::new();
    let mean: Vec<f64> = (0..f).map(|j| pre.iter().map(|r| r[j]).sum::<f64>() / b as f64).collect();
    let var: Vec<f64> = (0..f)
        .map(|j| pre.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / b as f64)
        .collect();
    for r in &pre {
        let hidden: Vec<f64> = (0..f)
            .map(|j| {
                let xh = (r[j] - mean[j]) / (var[j] + p.proj_norm.eps).sqrt();
                (p.proj_norm.gamma[j] * xh + p.proj_norm.beta[j]).max(0.0)
            })
            .collect();
        z.push(dense(&hidden, &p.proj_out.weight, &p.proj_out.bias));
    }
    (logits, z)
}

/// Cross-entropy and contrastive loss from their textbook definitions.
pub fn oracle_losses(logits: &[Vec<f64>], z: &[Vec<f64>], labels: &[usize], tau: f64) -> (f64, Option<f64>) {
    let b = labels.len();
    let ce = (0..b).map(|i| lse_oracle(&logits[i]) - logits[i][labels[i]]).sum::<f64>() / b as f64;
    let mut total = 0.0;
    let mut anchors = 0;
    for i in 0..b {
        let pos: Vec<usize> = (0..b).filter(|&j| j != i && labels[j] == labels[i]).collect();
        if pos.is_empty() {
            continue;
        }
        anchors += 1;
        let denom: f64 = (0..b).filter(|&j| j != i).map(|j| (cosine(&z[i], &z[j]) / tau).exp()).sum();
        let s: f64 = pos.iter().map(|&p| -((cosine(&z[i], &z[p]) / tau).exp() / denom).ln()).sum();
        total += s / pos.len() as f64;
    }
    (ce, (anchors > 0).then(|| total / anchors as f64))
}

pub fn oracle_objective(p: &ModelParams, batch: &Batch, lambda: f64, tau: f64) -> f64 {
    let (logits, z) = oracle_forward(p, &batch.features);
    let (ce, sc) = oracle_losses(&logits, &z, &batch.labels, tau);
    ce + lambda * sc.unwrap_or(0.0)
}
