//! Parameter checkpoints: one flat FODF tensor plus a JSON layout sidecar at
//! `<path>.layout.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_io::{read_tensor, write_tensor, TensorF32};

use super::model::{Architecture, ModelParams, ParamKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub kind: ParamKind,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointLayout {
    pub format: String,
    pub architecture: Architecture,
    pub tensors: Vec<TensorEntry>,
}

const LAYOUT_FORMAT: &str = "fodfom-params/1";

pub fn layout_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".layout.json");
    PathBuf::from(s)
}

/// Writes parameters (rounded to `f32`) and the layout sidecar.
pub fn save_checkpoint(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut flat = Vec::new();
    let mut entries = Vec::new();
    for (info, data) in params.layout().into_iter().zip(params.tensors()) {
        entries.push(TensorEntry {
            name: info.name,
            kind: info.kind,
            shape: info.shape,
            offset: flat.len(),
            len: data.len(),
        });
        flat.extend(data.iter().map(|&v| v as f32));
    }
    let layout = CheckpointLayout {
        format: LAYOUT_FORMAT.into(),
        architecture: params.architecture.clone(),
        tensors: entries,
    };
    write_tensor(&TensorF32::new(vec![flat.len()], flat)?, path)?;
    let sidecar = layout_path(path);
    let text = serde_json::to_string_pretty(&layout).map_err(|e| Error::json(&sidecar, e))?;
    fs::write(&sidecar, text + "\n").map_err(|e| Error::io(&sidecar, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let sidecar = layout_path(path);
    let text = fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
    let layout: CheckpointLayout = serde_json::from_str(&text).map_err(|e| Error::json(&sidecar, e))?;
    if layout.format != LAYOUT_FORMAT {
        return Err(Error::InvalidArgument(format!("unknown checkpoint format {:?}", layout.format)));
    }
    let flat = read_tensor(path)?;
    // rng is irrelevant: every tensor is overwritten below
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let mut params = ModelParams::init(layout.architecture.clone(), &mut rng)?;
    let expected = params.layout();
    if expected.len() != layout.tensors.len() {
        return Err(Error::DimMismatch(format!(
            "layout lists {} tensors, architecture needs {}",
            layout.tensors.len(),
            expected.len()
        )));
    }
    for ((entry, info), dst) in layout.tensors.iter().zip(&expected).zip(params.tensors_mut()) {
        if entry.name != info.name || entry.shape != info.shape || entry.len != dst.len() {
            return Err(Error::DimMismatch(format!(
                "checkpoint tensor {} {:?} does not match expected {} {:?}",
                entry.name, entry.shape, info.name, info.shape
            )));
        }
        let src = flat
            .data()
            .get(entry.offset..entry.offset + entry.len)
            .ok_or_else(|| Error::DimMismatch(format!("tensor {} runs past the payload", entry.name)))?;
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = f64::from(s);
        }
    }
    Ok(params)
}
