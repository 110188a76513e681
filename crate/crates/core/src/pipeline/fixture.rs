//! Synthetic stand-in for a captioned, detected image dataset with precomputed embeddings.
//!
//! ID classes are isotropic Gaussian clusters at `spread` from the origin; every OOD
//! test set is drawn around a further, unseen center at the same radius. Each ID
//! training row also gets a small RGB image (a textured, class-colored box on a noisy
//! background) plus detector output, so the background stage has real pixels to blur.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::background::ImageU8;
use crate::config::Hyperparameters;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::tensor_io::{
    labels_to_tensor, write_jsonl, write_tensor, BoundingBox, CaptionRecord, DetectionRecord, LabeledEmbeddingSet,
    Manifest, TestSplit,
};
use crate::trainer::OptimizerSchedule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticFixtureSpec {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub dim: usize,
    /// Distance of every cluster center from the origin.
    pub spread: f64,
    /// Per-coordinate standard deviation inside a cluster.
    pub noise: f64,
    /// Step length of the fakes; the manifest lists `0.5r, r, 1.5r`.
    pub fake_ring_radius: f64,
    pub seed: u64,
    #[serde(default = "default_test_per_class")]
    pub test_per_class: usize,
    #[serde(default = "default_ood_sets")]
    pub ood_sets: usize,
    #[serde(default = "default_ood_per_set")]
    pub ood_per_set: usize,
    /// Side length of the generated images; 0 disables images and detections.
    #[serde(default = "default_image_size")]
    pub image_size: u32,
}

fn default_test_per_class() -> usize {
    50
}
fn default_ood_sets() -> usize {
    2
}
fn default_ood_per_set() -> usize {
    100
}
fn default_image_size() -> u32 {
    32
}

impl Default for SyntheticFixtureSpec {
    fn default() -> Self {
        Self {
            num_classes: 4,
            samples_per_class: 100,
            dim: 8,
            spread: 4.0,
            noise: 1.0,
            fake_ring_radius: 1.0,
            seed: 0,
            test_per_class: default_test_per_class(),
            ood_sets: default_ood_sets(),
            ood_per_set: default_ood_per_set(),
            image_size: default_image_size(),
        }
    }
}

impl SyntheticFixtureSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.num_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if self.dim < 2 {
            return bad(format!("need dim >= 2, got {}", self.dim));
        }
        if self.samples_per_class < 2 {
            return bad("need at least 2 samples per class".into());
        }
        if !(self.spread >= 0.0 && self.spread.is_finite()) || !(self.noise > 0.0 && self.noise.is_finite()) {
            return bad("spread must be >= 0 and noise > 0".into());
        }
        if !(self.fake_ring_radius >= 0.0 && self.fake_ring_radius.is_finite()) {
            return bad("fake_ring_radius must be >= 0".into());
        }
        if self.ood_sets == 0 || self.ood_per_set == 0 || self.test_per_class == 0 {
            return bad("test and OOD splits must be non-empty".into());
        }
        if self.image_size != 0 && self.image_size < 8 {
            return bad("image_size must be 0 or at least 8".into());
        }
        Ok(())
    }

    /// Hyperparameters written into the fixture manifest: the standard CIFAR loss/selection
    /// settings with a schedule sized for a few hundred samples.
    pub fn hyperparameters(&self) -> Hyperparameters {
        let r = self.fake_ring_radius;
        Hyperparameters {
            gammas: vec![0.5 * r, r, 1.5 * r],
            seed: self.seed,
            optimizer: desk_schedule(),
            ..Hyperparameters::cifar()
        }
    }
}

/// 40 epochs of batch-64 SGD, decayed at epochs 25 and 35.
pub fn desk_schedule() -> OptimizerSchedule {
    OptimizerSchedule {
        warmup_epochs: 0,
        milestones: vec![25, 35],
        batch_size: 64,
        epochs: 40,
        ..OptimizerSchedule::cifar()
    }
}

/// In-memory fixture; [`Fixture::write`] lays it out as manifest + files.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub spec: SyntheticFixtureSpec,
    pub train: LabeledEmbeddingSet,
    pub test_id: Matrix,
    pub test_ood: BTreeMap<String, Matrix>,
    pub captions: Vec<CaptionRecord>,
    pub detections: Vec<DetectionRecord>,
    /// `(image_id, image)` per training row; empty when `image_size == 0`.
    pub images: Vec<(String, ImageU8)>,
}

// one independent stream per artifact family
const STREAM_CENTERS: u64 = 0;
const STREAM_TRAIN: u64 = 1;
const STREAM_TEST: u64 = 2;
const STREAM_OOD: u64 = 3;
const STREAM_IMAGES: u64 = 4;

fn stream(seed: u64, s: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(s);
    rng
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn cluster(rng: &mut ChaCha8Rng, center: &[f64], noise: f64, n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            center
                .iter()
                .map(|&c| c + noise * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect()
}

pub fn class_name(c: usize) -> String {
    format!("class-{c}")
}

pub fn image_id(row: usize) -> String {
    format!("img-{row:05}")
}

fn class_color(c: usize, num_classes: usize) -> [f64; 3] {
    let h = 2.0 * PI * c as f64 / num_classes as f64;
    [0.0, 2.0 * PI / 3.0, 4.0 * PI / 3.0].map(|o| 128.0 + 100.0 * (h + o).cos())
}

fn render(rng: &mut ChaCha8Rng, size: u32, class: usize, num_classes: usize) -> (ImageU8, BoundingBox, bool) {
    let base: f64 = rng.random_range(60.0..200.0);
    let mut img = ImageU8::filled(size, size, 3, 0).expect("valid size");
    for y in 0..size {
        for x in 0..size {
            for c in 0..3 {
                let v = base + rng.random_range(-20.0..20.0);
                img.set(x, y, c, v.clamp(0.0, 255.0) as u8);
            }
        }
    }
    let w = rng.random_range(size / 4..=size * 9 / 10);
    let h = rng.random_range(size / 4..=size * 9 / 10);
    let x0 = rng.random_range(0..=size - w);
    let y0 = rng.random_range(0..=size - h);
    let striped: bool = rng.random();
    let color = class_color(class, num_classes);
    for y in y0..y0 + h {
        for x in x0..x0 + w {
            let on = if striped { (x / 2) % 2 == 0 } else { ((x / 3) + (y / 3)) % 2 == 0 };
            let t = if on { 30.0 } else { -30.0 };
            for (c, &col) in color.iter().enumerate() {
                img.set(x, y, c as u8, (col + t).clamp(0.0, 255.0) as u8);
            }
        }
    }
    let conf = rng.random_range(0.5..1.0);
    (img, BoundingBox::new(x0, y0, x0 + w, y0 + h, conf), striped)
}

impl Fixture {
    pub fn generate(spec: &SyntheticFixtureSpec) -> Result<Self> {
        spec.validate()?;
        let (c, d) = (spec.num_classes, spec.dim);
        let mut centers_rng = stream(spec.seed, STREAM_CENTERS);
        let centers: Vec<Vec<f64>> = (0..c + spec.ood_sets)
            .map(|_| unit_vector(&mut centers_rng, d).iter().map(|x| x * spec.spread).collect())
            .collect();

        let mut rng = stream(spec.seed, STREAM_TRAIN);
        let mut rows = Vec::with_capacity(c * spec.samples_per_class);
        let mut labels = Vec::with_capacity(rows.capacity());
        for (k, center) in centers.iter().take(c).enumerate() {
            rows.extend(cluster(&mut rng, center, spec.noise, spec.samples_per_class));
            labels.extend(std::iter::repeat_n(k, spec.samples_per_class));
        }
        let train_matrix = Matrix::from_rows(&rows)?;
        let names = (0..c).map(class_name).collect();
        let train = LabeledEmbeddingSet::new(train_matrix.to_tensor()?, labels.clone(), names)?;

        let mut rng = stream(spec.seed, STREAM_TEST);
        let mut test_rows = Vec::new();
        for center in centers.iter().take(c) {
            test_rows.extend(cluster(&mut rng, center, spec.noise, spec.test_per_class));
        }
        let test_id = Matrix::from_rows(&test_rows)?;

        let mut rng = stream(spec.seed, STREAM_OOD);
        let mut test_ood = BTreeMap::new();
        for (j, center) in centers.iter().skip(c).enumerate() {
            let m = Matrix::from_rows(&cluster(&mut rng, center, spec.noise, spec.ood_per_set))?;
            test_ood.insert(format!("ood-{j}"), m);
        }

        let mut captions = Vec::with_capacity(labels.len());
        let mut detections = Vec::new();
        let mut images = Vec::new();
        let mut rng = stream(spec.seed, STREAM_IMAGES);
        for (row, &label) in labels.iter().enumerate() {
            let id = image_id(row);
            if spec.image_size == 0 {
                captions.push(CaptionRecord {
                    image_id: id,
                    class_index: label,
                    blip_caption: "a plain object".into(),
                });
                continue;
            }
            let (img, truth, striped) = render(&mut rng, spec.image_size, label, c);
            let roll: f64 = rng.random();
            let mut boxes = Vec::new();
            if roll >= 0.05 {
                boxes.push(truth);
                if roll > 0.7 {
                    // weaker decoy that must never win over the true box
                    let s = spec.image_size;
                    let (x0, y0) = (rng.random_range(0..s / 2), rng.random_range(0..s / 2));
                    let conf = truth.confidence * rng.random_range(0.3..0.9);
                    boxes.push(BoundingBox::new(x0, y0, x0 + s / 4, y0 + s / 4, conf));
                }
            }
            captions.push(CaptionRecord {
                image_id: id.clone(),
                class_index: label,
                blip_caption: format!(
                    "a {} object on a {} background",
                    if striped { "striped" } else { "checkered" },
                    if img.get(0, 0, 0) > 128 { "light" } else { "dark" }
                ),
            });
            detections.push(DetectionRecord {
                image_id: id.clone(),
                boxes,
            });
            images.push((id, img));
        }

        Ok(Self {
            spec: spec.clone(),
            train,
            test_id,
            test_ood,
            captions,
            detections,
            images,
        })
    }

    /// Writes every artifact under `dir` and returns the saved manifest.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<Manifest> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut m = Manifest::new("synthetic", self.spec.num_classes, self.spec.hyperparameters());
        m.class_names = self.train.class_names().to_vec();
        write_tensor(self.train.embeddings(), dir.join(&m.embeddings))?;
        write_tensor(&labels_to_tensor(self.train.labels())?, dir.join(&m.labels))?;

        let captions = PathBuf::from("captions.jsonl");
        write_jsonl(dir.join(&captions), &self.captions)?;
        m.captions = Some(captions);

        if !self.images.is_empty() {
            let detections = PathBuf::from("detections.jsonl");
            write_jsonl(dir.join(&detections), &self.detections)?;
            m.detections = Some(detections);
            let images = PathBuf::from("images");
            let img_dir = dir.join(&images);
            fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
            for (id, img) in &self.images {
                img.save_png(img_dir.join(format!("{id}.png")))?;
            }
            m.images = Some(images);
        }

        let id = PathBuf::from("test_id.fodf");
        write_tensor(&self.test_id.to_tensor()?, dir.join(&id))?;
        let mut ood = BTreeMap::new();
        for (name, mat) in &self.test_ood {
            let p = PathBuf::from(format!("test_{name}.fodf"));
            write_tensor(&mat.to_tensor()?, dir.join(&p))?;
            ood.insert(name.clone(), p);
        }
        m.test = Some(TestSplit { id, ood });
        m.save(dir.join("manifest.json"))?;
        m.set_base_dir(dir);
        Ok(m)
    }
}

/// Generates the fixture and writes it under `dir`.
pub fn gen_fixture(spec: &SyntheticFixtureSpec, dir: impl AsRef<Path>) -> Result<Manifest> {
    Fixture::generate(spec)?.write(dir)
}
