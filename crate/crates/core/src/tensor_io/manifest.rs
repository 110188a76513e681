//! The JSON manifest that ties a dataset's files and hyperparameters together.
//!
//! Relative paths are resolved against the directory holding the manifest.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::Hyperparameters;
use crate::error::{Error, Result};

use super::{
    labels_from_tensor, read_jsonl, read_tensor, validate_captions, validate_detections,
    CaptionRecord, DetectionRecord, Diagnostic, LabeledEmbeddingSet,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSplit {
    /// ID test features `[N_id, D]`.
    pub id: PathBuf,
    /// OOD test features keyed by set name.
    pub ood: BTreeMap<String, PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dataset: String,
    pub num_classes: usize,
    #[serde(default)]
    pub class_names: Vec<String>,
    pub embeddings: PathBuf,
    pub labels: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub captions: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detections: Option<PathBuf>,
    /// Directory of `{image_id}.png` files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub images: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fake_embeddings: Option<PathBuf>,
    /// Featurized background images, `[M, D]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background_features: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<TestSplit>,
    pub hyperparameters: Hyperparameters,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl Manifest {
    pub fn new(dataset: impl Into<String>, num_classes: usize, hyperparameters: Hyperparameters) -> Self {
        Self {
            dataset: dataset.into(),
            num_classes,
            class_names: Vec::new(),
            embeddings: PathBuf::from("embeddings.fodf"),
            labels: PathBuf::from("labels.fodf"),
            captions: None,
            detections: None,
            images: None,
            fake_embeddings: None,
            background_features: None,
            test: None,
            hyperparameters,
            base_dir: PathBuf::from("."),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Manifest = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        m.base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn set_base_dir(&mut self, dir: impl Into<PathBuf>) {
        self.base_dir = dir.into();
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn class_names_or_generic(&self) -> Vec<String> {
        if self.class_names.len() == self.num_classes {
            self.class_names.clone()
        } else {
            (0..self.num_classes).map(|c| format!("class_{c}")).collect()
        }
    }

    /// Loads the ID embeddings and labels as a labeled set.
    pub fn load_embedding_set(&self) -> Result<LabeledEmbeddingSet> {
        let emb = read_tensor(self.resolve(&self.embeddings))?;
        let labels = labels_from_tensor(&read_tensor(self.resolve(&self.labels))?, Some(self.num_classes))?;
        LabeledEmbeddingSet::new(emb, labels, self.class_names_or_generic())
    }

    pub fn image_path(&self, image_id: &str) -> Option<PathBuf> {
        self.images
            .as_ref()
            .map(|dir| self.resolve(dir).join(format!("{image_id}.png")))
    }
}

/// Checks every referenced file and every hyperparameter. Returns an empty list
/// iff the manifest is fully usable.
pub fn validate_manifest(m: &Manifest) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    let manifest_file = "manifest";

    if m.num_classes == 0 {
        diags.push(Diagnostic::new(manifest_file, "num_classes", "must be at least 1"));
    }
    if !m.class_names.is_empty() && m.class_names.len() != m.num_classes {
        diags.push(Diagnostic::new(
            manifest_file,
            "class_names",
            format!("{} names for {} classes", m.class_names.len(), m.num_classes),
        ));
    }
    if let Some(i) = m.class_names.iter().position(String::is_empty) {
        diags.push(Diagnostic::new(manifest_file, format!("class_names[{i}]"), "empty name"));
    }
    for (field, reason) in m.hyperparameters.problems() {
        diags.push(Diagnostic::new(manifest_file, format!("hyperparameters.{field}"), reason));
    }

    // embeddings + labels
    let emb_path = m.resolve(&m.embeddings);
    let mut dim = None;
    let mut rows = None;
    match load_matrix(&emb_path) {
        Ok((n, d)) => {
            rows = Some(n);
            dim = Some(d);
        }
        Err(d) => diags.push(d),
    }
    let labels_path = m.resolve(&m.labels);
    match read_tensor(&labels_path) {
        Err(e) => diags.push(Diagnostic::new(labels_path.display().to_string(), "file", e.to_string())),
        Ok(t) => match labels_from_tensor(&t, None) {
            Err(e) => diags.push(Diagnostic::new(labels_path.display().to_string(), "labels", e.to_string())),
            Ok(labels) => {
                if let Some(n) = rows {
                    if labels.len() != n {
                        diags.push(Diagnostic::new(
                            labels_path.display().to_string(),
                            "labels",
                            format!("{} labels for {n} embedding rows", labels.len()),
                        ));
                    }
                }
                let out_of_range: Vec<usize> = labels.iter().copied().filter(|&l| l >= m.num_classes).collect();
                if !out_of_range.is_empty() {
                    diags.push(Diagnostic::new(
                        labels_path.display().to_string(),
                        "labels",
                        format!(
                            "{} labels out of range [0, {}), first {}",
                            out_of_range.len(),
                            m.num_classes,
                            out_of_range[0]
                        ),
                    ));
                } else {
                    let present: HashSet<usize> = labels.iter().copied().collect();
                    let missing: Vec<usize> = (0..m.num_classes).filter(|c| !present.contains(c)).collect();
                    if !missing.is_empty() {
                        diags.push(Diagnostic::new(
                            labels_path.display().to_string(),
                            "labels",
                            format!("classes without rows: {missing:?}"),
                        ));
                    }
                }
            }
        },
    }

    // images directory
    if let Some(dir) = &m.images {
        let dir = m.resolve(dir);
        if !dir.is_dir() {
            diags.push(Diagnostic::new(dir.display().to_string(), "images", "directory does not exist"));
        }
    }

    if let Some(p) = &m.captions {
        let path = m.resolve(p);
        match read_jsonl::<CaptionRecord>(&path) {
            Ok(recs) => diags.extend(validate_captions(&path.display().to_string(), &recs, m.num_classes)),
            Err(e) => diags.push(Diagnostic::new(path.display().to_string(), "file", e.to_string())),
        }
    }

    if let Some(p) = &m.detections {
        let path = m.resolve(p);
        match read_jsonl::<DetectionRecord>(&path) {
            Ok(recs) => {
                let file = path.display().to_string();
                let mut missing = Vec::new();
                let found = validate_detections(&file, &recs, |id| {
                    let img = m.image_path(id)?;
                    match image::image_dimensions(&img) {
                        Ok(size) => Some(size),
                        Err(_) => {
                            missing.push(img.display().to_string());
                            None
                        }
                    }
                });
                diags.extend(found);
                for img in missing {
                    diags.push(Diagnostic::new(img, "image", "referenced by a detection but not readable"));
                }
            }
            Err(e) => diags.push(Diagnostic::new(path.display().to_string(), "file", e.to_string())),
        }
    }

    let check_features = |diags: &mut Vec<Diagnostic>, p: &Path, what: &str| {
        let path = m.resolve(p);
        match load_matrix(&path) {
            Ok((_, d)) => {
                if let Some(expected) = dim {
                    if d != expected {
                        diags.push(Diagnostic::new(
                            path.display().to_string(),
                            what.to_string(),
                            format!("dimension {d} differs from embeddings dimension {expected}"),
                        ));
                    }
                }
            }
            Err(d) => diags.push(d),
        }
    };
    if let Some(p) = &m.fake_embeddings {
        check_features(&mut diags, p, "fake_embeddings");
    }
    if let Some(p) = &m.background_features {
        check_features(&mut diags, p, "background_features");
    }
    if let Some(test) = &m.test {
        check_features(&mut diags, &test.id, "test.id");
        if test.ood.is_empty() {
            diags.push(Diagnostic::new(manifest_file, "test.ood", "no OOD sets"));
        }
        for (name, p) in &test.ood {
            check_features(&mut diags, p, &format!("test.ood.{name}"));
        }
    }

    diags
}

fn load_matrix(path: &Path) -> std::result::Result<(usize, usize), Diagnostic> {
    let file = path.display().to_string();
    if !path.exists() {
        return Err(Diagnostic::new(file, "file", "does not exist"));
    }
    let t = read_tensor(path).map_err(|e| Diagnostic::new(file.clone(), "file", e.to_string()))?;
    t.matrix_shape()
        .map_err(|e| Diagnostic::new(file, "dims", e.to_string()))
}
