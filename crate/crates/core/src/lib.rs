//! Fake-outlier construction, (C+1)-class training and post-hoc OOD scoring.
//!
//! The crate works on files written by external model adapters: embeddings and
//! features as FODF tensors, captions and detections as JSONL, tied together by
//! a JSON [`Manifest`](tensor_io::Manifest). Each stage is a plain library call:
//!
//! - [`tensor_io`]: formats, caption prompts, manifest validation
//! - [`fake_embed`]: class statistics, periphery selection, radial fake embeddings
//! - [`background`]: foreground-blurred background images
//! - [`trainer`]: MLP with projection head, CE + SupCon objective, SGD
//! - [`scoring`]: Energy, MSP variants, ReAct
//! - [`eval`]: FPR95, AUROC, ROC curves, report tables
//! - [`pipeline`]: synthetic fixtures, ablation grids and sweeps
//!
//! See the crate `examples/` directory for one runnable program per stage.

pub mod background;
pub mod commands;
pub mod config;
pub mod error;
pub mod eval;
pub mod fake_embed;
pub mod matrix;
pub mod pipeline;
pub mod scoring;
pub mod tensor_io;
pub mod trainer;

pub use error::{Error, Result};
