//! Fixed random image featurizer: 4×4 average pooling per channel, centered, then
//! a seeded Gaussian projection into the embedding dimension.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::background::ImageU8;
use crate::error::Result;
use crate::matrix::Matrix;

const GRID: u32 = 4;
const POOLED: usize = (GRID * GRID * 3) as usize;

#[derive(Debug, Clone, PartialEq)]
pub struct ImageFeaturizer {
    /// `dim × 48`
    projection: Matrix,
}

impl ImageFeaturizer {
    pub fn new(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (POOLED as f64).sqrt();
        let data = (0..dim * POOLED)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self {
            projection: Matrix::new(dim, POOLED, data).expect("sized above"),
        }
    }

    pub fn dim(&self) -> usize {
        self.projection.rows()
    }

    /// Pooled values in `[-0.5, 0.5]`; grayscale images are replicated over RGB.
    pub fn pool(img: &ImageU8) -> Vec<f64> {
        let (w, h) = (img.width(), img.height());
        let mut out = vec![0.0; POOLED];
        for gy in 0..GRID {
            for gx in 0..GRID {
                let (x0, x1) = (gx * w / GRID, ((gx + 1) * w / GRID).max(gx * w / GRID + 1).min(w));
                let (y0, y1) = (gy * h / GRID, ((gy + 1) * h / GRID).max(gy * h / GRID + 1).min(h));
                for c in 0..3u8 {
                    let src = c.min(img.channels() - 1);
                    let mut sum = 0u64;
                    for y in y0..y1 {
                        for x in x0..x1 {
                            sum += u64::from(img.get(x, y, src));
                        }
                    }
                    let n = (u64::from(x1 - x0) * u64::from(y1 - y0)) as f64;
                    out[((gy * GRID + gx) * 3 + u32::from(c)) as usize] = sum as f64 / n / 255.0 - 0.5;
                }
            }
        }
        out
    }

    pub fn featurize(&self, img: &ImageU8) -> Vec<f64> {
        let v = Self::pool(img);
        (0..self.dim())
            .map(|i| self.projection.row(i).iter().zip(&v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn featurize_all(&self, images: &[ImageU8]) -> Result<Matrix> {
        let rows: Vec<Vec<f64>> = images.iter().map(|i| self.featurize(i)).collect();
        if rows.is_empty() {
            return Ok(Matrix::zeros(0, self.dim()));
        }
        Matrix::from_rows(&rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_gray_pools_to_constant() {
        let img = ImageU8::filled(10, 7, 1, 255).unwrap();
        assert!(ImageFeaturizer::pool(&img).iter().all(|&v| v == 0.5));
        let f = ImageFeaturizer::new(3, 1);
        let mid = ImageU8::filled(8, 8, 3, 0).unwrap();
        let out = f.featurize(&mid);
        let sum: Vec<f64> = (0..3).map(|i| -0.5 * f.projection.row(i).iter().sum::<f64>()).collect();
        for (a, b) in out.iter().zip(&sum) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn seeded() {
        assert_eq!(ImageFeaturizer::new(4, 9), ImageFeaturizer::new(4, 9));
        assert_ne!(ImageFeaturizer::new(4, 9), ImageFeaturizer::new(4, 10));
    }
}
