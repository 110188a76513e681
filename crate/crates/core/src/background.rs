//! Background fake-OOD images: blur the detected foreground box with a mean
//! filter, but only when the box covers less than `beta_percent` of the image.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_io::{BoundingBox, DetectionRecord};

/// 8-bit raster, row-major, channels interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageU8 {
    width: u32,
    height: u32,
    channels: u8,
    pixels: Vec<u8>,
}

impl ImageU8 {
    pub fn new(width: u32, height: u32, channels: u8, pixels: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!("{channels} channels; expected 1 or 3")));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument("image must be non-empty".into()));
        }
        let expected = width as usize * height as usize * channels as usize;
        if pixels.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "{}x{}x{} image needs {expected} bytes, got {}",
                width,
                height,
                channels,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn filled(width: u32, height: u32, channels: u8, value: u8) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width as usize * height as usize * channels as usize])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32, c: u8) -> u8 {
        self.pixels[self.index(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, c: u8, v: u8) {
        let i = self.index(x, y, c);
        self.pixels[i] = v;
    }

    #[inline]
    fn index(&self, x: u32, y: u32, c: u8) -> usize {
        (y as usize * self.width as usize + x as usize) * self.channels as usize + c as usize
    }

    /// Loads a PNG; grayscale stays single-channel, everything else becomes RGB.
    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path.as_ref())?;
        let (w, h) = (img.width(), img.height());
        match img.color().channel_count() {
            1 | 2 => Self::new(w, h, 1, img.into_luma8().into_raw()),
            _ => Self::new(w, h, 3, img.into_rgb8().into_raw()),
        }
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let color = if self.channels == 1 {
            image::ExtendedColorType::L8
        } else {
            image::ExtendedColorType::Rgb8
        };
        image::save_buffer_with_format(
            path.as_ref(),
            &self.pixels,
            self.width,
            self.height,
            color,
            image::ImageFormat::Png,
        )?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlurSpec {
    pub kernel_size: u32,
    pub beta_percent: f64,
}

impl Default for BlurSpec {
    fn default() -> Self {
        Self {
            kernel_size: 50,
            beta_percent: 50.0,
        }
    }
}

fn check_box(img: &ImageU8, b: &BoundingBox) -> Result<()> {
    if b.fits(img.width, img.height) {
        Ok(())
    } else {
        Err(Error::BoxOutOfBounds {
            x0: b.x0,
            y0: b.y0,
            x1: b.x1,
            y1: b.y1,
            width: img.width,
            height: img.height,
        })
    }
}

/// Box area over image area.
pub fn foreground_fraction(img: &ImageU8, b: &BoundingBox) -> Result<f64> {
    check_box(img, b)?;
    Ok(b.area() as f64 / (u64::from(img.width) * u64::from(img.height)) as f64)
}

/// Window offsets `[-(k-1)/2, k/2]` for kernel size `k`.
pub fn window_offsets(k: u32) -> (i64, i64) {
    (-(i64::from(k - 1) / 2), i64::from(k / 2))
}

/// Per-channel summed-area table with a zero top row and left column.
struct IntegralImage {
    stride: usize,
    channels: usize,
    sums: Vec<u64>,
}

impl IntegralImage {
    fn new(img: &ImageU8) -> Self {
        let (w, h, ch) = (img.width as usize, img.height as usize, img.channels as usize);
        let stride = w + 1;
        let mut sums = vec![0u64; stride * (h + 1) * ch];
        for y in 0..h {
            let mut row = vec![0u64; ch];
            for x in 0..w {
                for c in 0..ch {
                    row[c] += u64::from(img.pixels[(y * w + x) * ch + c]);
                    let above = sums[(y * stride + x + 1) * ch + c];
                    sums[((y + 1) * stride + x + 1) * ch + c] = above + row[c];
                }
            }
        }
        Self { stride, channels: ch, sums }
    }

    /// Sum over `[x0, x1) × [y0, y1)`.
    #[inline]
    fn rect(&self, x0: usize, y0: usize, x1: usize, y1: usize, c: usize) -> u64 {
        let at = |x: usize, y: usize| self.sums[(y * self.stride + x) * self.channels + c];
        at(x1, y1) + at(x0, y0) - at(x0, y1) - at(x1, y0)
    }
}

/// Integer mean rounded half away from zero.
#[inline]
fn rounded_mean(sum: u64, count: u64) -> u8 {
    ((2 * sum + count) / (2 * count)) as u8
}

/// Mean-filters the pixels inside `b` with a `k × k` window clipped to the image
/// and normalized by the in-image pixel count. Pixels outside `b` are untouched.
pub fn blur_box(img: &ImageU8, b: &BoundingBox, k: u32) -> Result<ImageU8> {
    check_box(img, b)?;
    if k == 0 {
        return Err(Error::InvalidArgument("kernel size must be at least 1".into()));
    }
    let mut out = img.clone();
    if k == 1 {
        return Ok(out);
    }
    let integral = IntegralImage::new(img);
    let (lo, hi) = window_offsets(k);
    let (w, h) = (i64::from(img.width), i64::from(img.height));
    for y in b.y0..b.y1 {
        let ya = (i64::from(y) + lo).max(0) as usize;
        let yb = (i64::from(y) + hi + 1).min(h) as usize;
        for x in b.x0..b.x1 {
            let xa = (i64::from(x) + lo).max(0) as usize;
            let xb = (i64::from(x) + hi + 1).min(w) as usize;
            let count = ((xb - xa) * (yb - ya)) as u64;
            for c in 0..img.channels {
                let sum = integral.rect(xa, ya, xb, yb, c as usize);
                out.set(x, y, c, rounded_mean(sum, count));
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Emitted,
    #[serde(rename = "skipped: area gate")]
    SkippedAreaGate,
    #[serde(rename = "skipped: no detection")]
    SkippedNoDetection,
}

/// One line of the background decision log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub image_id: String,
    pub decision: Decision,
    #[serde(rename = "box")]
    pub bbox: Option<BoundingBox>,
    pub fraction: Option<f64>,
}

/// Blurs the highest-confidence box when its area fraction is strictly below
/// `beta_percent / 100`.
pub fn make_background(
    img: &ImageU8,
    detections: &DetectionRecord,
    spec: &BlurSpec,
) -> Result<(Option<ImageU8>, DecisionRecord)> {
    let Some(best) = detections.best_box() else {
        return Ok((
            None,
            DecisionRecord {
                image_id: detections.image_id.clone(),
                decision: Decision::SkippedNoDetection,
                bbox: None,
                fraction: None,
            },
        ));
    };
    let fraction = foreground_fraction(img, best)?;
    // compared as integers scaled by 100 so the boundary case is exact
    let total = (u64::from(img.width) * u64::from(img.height)) as f64;
    let passes = (best.area() as f64) * 100.0 < spec.beta_percent * total;
    let record = |decision| DecisionRecord {
        image_id: detections.image_id.clone(),
        decision,
        bbox: Some(*best),
        fraction: Some(fraction),
    };
    if passes {
        Ok((Some(blur_box(img, best, spec.kernel_size)?), record(Decision::Emitted)))
    } else {
        Ok((None, record(Decision::SkippedAreaGate)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: u32, h: u32) -> ImageU8 {
        let px = (0..w * h).map(|i| ((i * 7) % 256) as u8).collect();
        ImageU8::new(w, h, 1, px).unwrap()
    }

    /// Direct O(k²) window average.
    fn naive_blur(img: &ImageU8, b: &BoundingBox, k: u32) -> ImageU8 {
        let mut out = img.clone();
        let lo = -((k as i64 - 1) / 2);
        let hi = k as i64 / 2;
        for y in b.y0..b.y1 {
            for x in b.x0..b.x1 {
                for c in 0..img.channels() {
                    let (mut sum, mut n) = (0u64, 0u64);
                    for dy in lo..=hi {
                        for dx in lo..=hi {
                            let (xx, yy) = (x as i64 + dx, y as i64 + dy);
                            if xx >= 0 && yy >= 0 && xx < img.width() as i64 && yy < img.height() as i64 {
                                sum += img.get(xx as u32, yy as u32, c) as u64;
                                n += 1;
                            }
                        }
                    }
                    out.set(x, y, c, (sum as f64 / n as f64).round() as u8);
                }
            }
        }
        out
    }

    #[test]
    fn fractions() {
        let img = ImageU8::filled(100, 100, 1, 0).unwrap();
        assert_eq!(foreground_fraction(&img, &BoundingBox::new(0, 0, 50, 100, 1.0)).unwrap(), 0.5);
        assert_eq!(foreground_fraction(&img, &BoundingBox::new(0, 0, 100, 100, 1.0)).unwrap(), 1.0);
        let img = ImageU8::filled(224, 224, 3, 0).unwrap();
        let f = foreground_fraction(&img, &BoundingBox::new(10, 10, 110, 110, 1.0)).unwrap();
        assert_eq!(f, 10000.0 / 50176.0);
        assert!((f - 0.199298).abs() < 1e-6);
    }

    #[test]
    fn out_of_bounds_box() {
        let img = ImageU8::filled(10, 10, 1, 0).unwrap();
        let b = BoundingBox::new(5, 5, 11, 6, 1.0);
        assert!(matches!(foreground_fraction(&img, &b), Err(Error::BoxOutOfBounds { .. })));
        assert!(blur_box(&img, &b, 3).is_err());
    }

    #[test]
    fn constant_image_unchanged() {
        let img = ImageU8::filled(20, 17, 3, 91).unwrap();
        for k in [1, 2, 3, 5, 50] {
            assert_eq!(blur_box(&img, &BoundingBox::new(3, 2, 19, 17, 0.5), k).unwrap(), img);
        }
    }

    #[test]
    fn unit_kernel_is_identity() {
        let img = ramp(13, 9);
        assert_eq!(blur_box(&img, &BoundingBox::new(0, 0, 13, 9, 1.0), 1).unwrap(), img);
    }

    #[test]
    fn ramp_matches_naive() {
        let img = ramp(8, 8);
        let b = BoundingBox::new(2, 2, 6, 6, 1.0);
        assert_eq!(blur_box(&img, &b, 3).unwrap(), naive_blur(&img, &b, 3));
    }

    #[test]
    fn even_kernel_window() {
        assert_eq!(window_offsets(50), (-24, 25));
        assert_eq!(window_offsets(2), (0, 1));
        assert_eq!(window_offsets(3), (-1, 1));
        let img = ramp(9, 7);
        let b = BoundingBox::new(0, 0, 9, 7, 1.0);
        assert_eq!(blur_box(&img, &b, 2).unwrap(), naive_blur(&img, &b, 2));
        assert_eq!(blur_box(&img, &b, 50).unwrap(), naive_blur(&img, &b, 50));
    }

    #[test]
    fn half_rounds_away_from_zero() {
        assert_eq!(rounded_mean(1, 2), 1);
        assert_eq!(rounded_mean(5, 2), 3);
        assert_eq!(rounded_mean(4, 3), 1);
        assert_eq!(rounded_mean(5, 3), 2);
    }

    #[test]
    fn area_gate() {
        let img = ramp(100, 100);
        let spec = BlurSpec::default();
        let det = |b: BoundingBox| DetectionRecord {
            image_id: "a".into(),
            boxes: vec![b],
        };
        // 0.6 of the image
        let (out, rec) = make_background(&img, &det(BoundingBox::new(0, 0, 60, 100, 0.8)), &spec).unwrap();
        assert!(out.is_none());
        assert_eq!(rec.decision, Decision::SkippedAreaGate);
        // exactly beta/100 is not "smaller than"
        let (out, rec) = make_background(&img, &det(BoundingBox::new(0, 0, 50, 100, 0.8)), &spec).unwrap();
        assert!(out.is_none());
        assert_eq!(rec.fraction, Some(0.5));
        // tiny box passes and only its pixels change
        let tiny = BoundingBox::new(40, 40, 42, 41, 0.8);
        let (out, rec) = make_background(&img, &det(tiny), &spec).unwrap();
        assert_eq!(rec.decision, Decision::Emitted);
        let out = out.unwrap();
        for y in 0..100 {
            for x in 0..100 {
                if !(40..42).contains(&x) || y != 40 {
                    assert_eq!(out.get(x, y, 0), img.get(x, y, 0));
                }
            }
        }
    }

    #[test]
    fn highest_confidence_box_used() {
        let img = ramp(40, 40);
        let det = DetectionRecord {
            image_id: "a".into(),
            boxes: vec![BoundingBox::new(0, 0, 5, 5, 0.4), BoundingBox::new(20, 20, 30, 30, 0.9)],
        };
        let (out, rec) = make_background(&img, &det, &BlurSpec { kernel_size: 3, beta_percent: 50.0 }).unwrap();
        assert_eq!(rec.bbox.unwrap().x0, 20);
        assert_eq!(out.unwrap(), blur_box(&img, &det.boxes[1], 3).unwrap());
    }

    #[test]
    fn no_detection() {
        let img = ramp(4, 4);
        let det = DetectionRecord {
            image_id: "z".into(),
            boxes: vec![],
        };
        let (out, rec) = make_background(&img, &det, &BlurSpec::default()).unwrap();
        assert!(out.is_none());
        assert_eq!(rec.decision, Decision::SkippedNoDetection);
        let line = serde_json::to_string(&rec).unwrap();
        assert!(line.contains("\"skipped: no detection\""));
    }
}
