//! On-disk formats: FODF tensors, label tensors, JSONL caption/detection records
//! and the dataset manifest.

mod embeddings;
mod manifest;
mod records;
mod tensor;

pub use embeddings::LabeledEmbeddingSet;
pub use manifest::{validate_manifest, Manifest, TestSplit};
pub use records::{
    compose_caption, read_jsonl, validate_captions, validate_detections, write_jsonl, BoundingBox,
    CaptionRecord, DetectionRecord, Diagnostic,
};
pub use tensor::{
    labels_from_tensor, labels_to_tensor, read_csv_tensor, read_tensor, read_tensor_with, write_tensor,
    TensorF32, Validation, DTYPE_F32, FORMAT_VERSION, MAGIC,
};
