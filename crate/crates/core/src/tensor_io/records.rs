//! JSON-lines records exchanged with the model adapters, and caption composition.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const CAPTION_PROMPT: &str = "This is a photo of ";

/// Prefixes the class-specific prompt to a generated caption.
///
/// The prompt comes first and is joined to the caption with `" and "`, so
/// `("Brambling", "a bird perched on a branch")` becomes
/// `"This is a photo of Brambling and a bird perched on a branch"`.
pub fn compose_caption(class_name: &str, caption: &str) -> Result<String> {
    if class_name.is_empty() {
        return Err(Error::InvalidArgument("class name must not be empty".into()));
    }
    Ok(format!("{CAPTION_PROMPT}{class_name} and {caption}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub image_id: String,
    pub class_index: usize,
    pub blip_caption: String,
}

/// Half-open pixel box `[x0, x1) × [y0, y1)` with detector confidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
    pub confidence: f32,
}

impl BoundingBox {
    pub fn new(x0: u32, y0: u32, x1: u32, y1: u32, confidence: f32) -> Self {
        Self {
            x0,
            y0,
            x1,
            y1,
            confidence,
        }
    }

    pub fn area(&self) -> u64 {
        u64::from(self.x1.saturating_sub(self.x0)) * u64::from(self.y1.saturating_sub(self.y0))
    }

    pub fn fits(&self, width: u32, height: u32) -> bool {
        self.x0 < self.x1 && self.y0 < self.y1 && self.x1 <= width && self.y1 <= height
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: String,
    pub boxes: Vec<BoundingBox>,
}

impl DetectionRecord {
    /// Highest-confidence box; the earliest wins a tie.
    pub fn best_box(&self) -> Option<&BoundingBox> {
        self.boxes.iter().fold(None, |best: Option<&BoundingBox>, b| match best {
            Some(cur) if cur.confidence >= b.confidence => Some(cur),
            _ => Some(b),
        })
    }
}

/// A validation finding: which file, which field, and what is wrong.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub file: String,
    pub field: String,
    pub reason: String,
}

impl Diagnostic {
    pub fn new(file: impl Into<String>, field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            file: file.into(),
            field: field.into(),
            reason: reason.into(),
        }
    }
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}: {}", self.file, self.field, self.reason)
    }
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::json(path, e))?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, records: &[T]) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| Error::json(path, e))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Checks caption records for unique ids and in-range class indices.
pub fn validate_captions(file: &str, records: &[CaptionRecord], num_classes: usize) -> Vec<Diagnostic> {
    let mut seen = std::collections::HashSet::new();
    let mut diags = Vec::new();
    for (line, r) in records.iter().enumerate() {
        if !seen.insert(r.image_id.as_str()) {
            diags.push(Diagnostic::new(
                file,
                format!("line {}: image_id", line + 1),
                format!("duplicate image_id {:?}", r.image_id),
            ));
        }
        if r.class_index >= num_classes {
            diags.push(Diagnostic::new(
                file,
                format!("line {}: class_index", line + 1),
                format!("{} is out of range for {num_classes} classes", r.class_index),
            ));
        }
    }
    diags
}

/// Checks detection boxes. `image_size` resolves an image id to `(width, height)`
/// when the images are available; otherwise only box ordering is checked.
pub fn validate_detections(
    file: &str,
    records: &[DetectionRecord],
    mut image_size: impl FnMut(&str) -> Option<(u32, u32)>,
) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    for (line, r) in records.iter().enumerate() {
        let size = image_size(&r.image_id);
        for (k, b) in r.boxes.iter().enumerate() {
            let field = format!("line {}: boxes[{k}]", line + 1);
            if !(0.0..=1.0).contains(&b.confidence) {
                diags.push(Diagnostic::new(
                    file,
                    field.clone(),
                    format!("confidence {} outside [0, 1]", b.confidence),
                ));
            }
            let (w, h) = size.unwrap_or((u32::MAX, u32::MAX));
            if !b.fits(w, h) {
                diags.push(Diagnostic::new(
                    file,
                    field,
                    format!(
                        "box ({}, {}, {}, {}) is empty or outside the image",
                        b.x0, b.y0, b.x1, b.y1
                    ),
                ));
            }
        }
    }
    diags
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn caption_prompt_first() {
        assert_eq!(
            compose_caption("Brambling", "a bird perched on a branch").unwrap(),
            "This is a photo of Brambling and a bird perched on a branch"
        );
        assert_eq!(
            compose_caption("Night snake", "a snake on a rock").unwrap(),
            "This is a photo of Night snake and a snake on a rock"
        );
        assert_eq!(compose_caption("snake", "").unwrap(), "This is a photo of snake and ");
    }

    #[test]
    fn empty_class_name_rejected() {
        assert!(matches!(
            compose_caption("", "x"),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn best_box_prefers_confidence_then_order() {
        let rec = DetectionRecord {
            image_id: "a".into(),
            boxes: vec![
                BoundingBox::new(0, 0, 2, 2, 0.4),
                BoundingBox::new(1, 1, 3, 3, 0.9),
                BoundingBox::new(2, 2, 4, 4, 0.9),
            ],
        };
        assert_eq!(rec.best_box().unwrap().x0, 1);
        let empty = DetectionRecord {
            image_id: "b".into(),
            boxes: vec![],
        };
        assert!(empty.best_box().is_none());
    }

    #[test]
    fn detection_validation() {
        let recs = vec![DetectionRecord {
            image_id: "a".into(),
            boxes: vec![
                BoundingBox::new(0, 0, 10, 10, 0.5),
                BoundingBox::new(5, 0, 5, 10, 0.5),
                BoundingBox::new(0, 0, 11, 10, 1.5),
            ],
        }];
        let diags = validate_detections("d.jsonl", &recs, |_| Some((10, 10)));
        // empty box, then out-of-bounds + bad confidence
        assert_eq!(diags.len(), 3);
    }

    #[test]
    fn duplicate_caption_ids() {
        let recs = vec![
            CaptionRecord {
                image_id: "x".into(),
                class_index: 0,
                blip_caption: "c".into(),
            },
            CaptionRecord {
                image_id: "x".into(),
                class_index: 5,
                blip_caption: "c".into(),
            },
        ];
        assert_eq!(validate_captions("c.jsonl", &recs, 2).len(), 2);
    }
}
