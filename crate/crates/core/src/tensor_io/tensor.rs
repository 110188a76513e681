//! Dense row-major `f32` tensors and the FODF container they are stored in.
//!
//! Layout of a FODF file (all integers little-endian):
//!
//! | offset | size      | field                               |
//! |--------|-----------|-------------------------------------|
//! | 0      | 4         | magic `b"FODF"`                     |
//! | 4      | 2         | format version (`u16`, currently 1) |
//! | 6      | 1         | dtype code (`u8`, 0 = f32)          |
//! | 7      | 1         | ndim (`u8`)                         |
//! | 8      | 8 × ndim  | dims (`u64` each)                   |
//! | …      | 4 × Π dims | payload, `f32` row-major            |

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FODF";
pub const FORMAT_VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 0;

const FIXED_HEADER: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorF32 {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl TensorF32 {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected = element_count(&dims)?;
        if expected != data.len() {
            return Err(Error::LengthMismatch {
                dims,
                expected,
                found: data.len(),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        let n = element_count(&dims)?;
        Ok(Self {
            dims,
            data: vec![0.0; n],
        })
    }

    /// Builds an `[N, D]` tensor from `f64` rows, rounding to `f32`.
    pub fn from_rows_f64(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::DimMismatch("ragged rows".into()));
        }
        let data = rows.iter().flatten().map(|&v| v as f32).collect();
        Self::new(vec![n, d], data)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Shape as `(rows, cols)`; errors unless the tensor is 2-D.
    pub fn matrix_shape(&self) -> Result<(usize, usize)> {
        match self.dims.as_slice() {
            &[r, c] => Ok((r, c)),
            other => Err(Error::DimMismatch(format!(
                "expected a 2-D tensor, got dims {other:?}"
            ))),
        }
    }

    /// Row `i` of a 2-D tensor.
    pub fn row(&self, i: usize) -> &[f32] {
        let cols = self.dims[self.dims.len() - 1];
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn first_non_finite(&self) -> Option<(usize, f32)> {
        self.data
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite())
            .map(|(i, &v)| (i, v))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(FIXED_HEADER + 8 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(DTYPE_F32);
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], validation: Validation) -> Result<Self> {
        if bytes.len() >= 4 && &bytes[..4] != MAGIC {
            return Err(Error::BadMagic {
                found: bytes[..4].to_vec(),
            });
        }
        if bytes.len() < FIXED_HEADER {
            return Err(Error::TruncatedHeader(bytes.len()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        if bytes[6] != DTYPE_F32 {
            return Err(Error::UnsupportedDtype(bytes[6]));
        }
        let ndim = bytes[7] as usize;
        let header_len = FIXED_HEADER + 8 * ndim;
        if bytes.len() < header_len {
            return Err(Error::TruncatedHeader(bytes.len()));
        }
        let dims = bytes[FIXED_HEADER..header_len]
            .chunks_exact(8)
            .map(|c| {
                let d = u64::from_le_bytes(c.try_into().expect("8-byte chunk"));
                usize::try_from(d)
                    .map_err(|_| Error::InvalidArgument(format!("dimension {d} overflows usize")))
            })
            .collect::<Result<Vec<_>>>()?;
        let count = element_count(&dims)?;
        let expected = count
            .checked_mul(4)
            .ok_or_else(|| Error::InvalidArgument(format!("dims {dims:?} overflow")))?;
        let payload = &bytes[header_len..];
        if payload.len() < expected {
            return Err(Error::TruncatedPayload {
                expected,
                found: payload.len(),
            });
        }
        if payload.len() > expected {
            return Err(Error::TrailingBytes {
                found: payload.len() - expected,
            });
        }
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
            .collect();
        let tensor = Self { dims, data };
        if validation == Validation::Finite {
            if let Some((index, value)) = tensor.first_non_finite() {
                return Err(Error::NonFinite { index, value });
            }
        }
        Ok(tensor)
    }
}

/// Element checks applied when decoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Validation {
    /// Reject NaN and ±inf.
    #[default]
    Finite,
    /// Structural checks only; score files may carry `+inf` sentinels.
    Structural,
}

fn element_count(dims: &[usize]) -> Result<usize> {
    if dims.is_empty() || dims.len() > u8::MAX as usize {
        return Err(Error::InvalidArgument(format!(
            "tensor rank must be in 1..=255, got {}",
            dims.len()
        )));
    }
    if dims.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "dims must be positive, got {dims:?}"
        )));
    }
    dims.iter().try_fold(1usize, |acc, &d| {
        acc.checked_mul(d)
            .ok_or_else(|| Error::InvalidArgument(format!("dims {dims:?} overflow")))
    })
}

pub fn write_tensor(tensor: &TensorF32, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&tensor.to_bytes())
        .map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<TensorF32> {
    read_tensor_with(path, Validation::Finite)
}

pub fn read_tensor_with(path: impl AsRef<Path>, validation: Validation) -> Result<TensorF32> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    TensorF32::from_bytes(&bytes, validation)
}

/// Reads a headerless CSV of numbers into an `[rows, cols]` tensor.
pub fn read_csv_tensor(path: impl AsRef<Path>) -> Result<TensorF32> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let row = record
            .iter()
            .map(|field| {
                field.parse::<f64>().map_err(|_| {
                    Error::InvalidArgument(format!(
                        "{}: record {}: {field:?} is not a number",
                        path.display(),
                        line + 1
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput(format!("{} has no rows", path.display())));
    }
    TensorF32::from_rows_f64(&rows)
}

/// Stores class labels as exact small integers in an `[N]` tensor.
pub fn labels_to_tensor(labels: &[usize]) -> Result<TensorF32> {
    TensorF32::new(vec![labels.len()], labels.iter().map(|&l| l as f32).collect())
}

/// Decodes an `[N]` label tensor; each entry must be an exact non-negative integer
/// below `num_classes` (when given).
pub fn labels_from_tensor(tensor: &TensorF32, num_classes: Option<usize>) -> Result<Vec<usize>> {
    if tensor.dims().len() != 1 {
        return Err(Error::DimMismatch(format!(
            "labels must be 1-D, got dims {:?}",
            tensor.dims()
        )));
    }
    tensor
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if !(v >= 0.0 && v.fract() == 0.0 && v < 16_777_216.0) {
                return Err(Error::InvalidArgument(format!(
                    "label {i} = {v} is not a non-negative integer"
                )));
            }
            let label = v as usize;
            match num_classes {
                Some(c) if label >= c => Err(Error::InvalidArgument(format!(
                    "label {i} = {label} is out of range for {c} classes"
                ))),
                _ => Ok(label),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_matrix_round_trip() {
        let t = TensorF32::new(vec![2, 2], vec![0.0; 4]).unwrap();
        let back = TensorF32::from_bytes(&t.to_bytes(), Validation::Finite).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn bit_exact_round_trip() {
        let values = [1.5f32, -2.25, 3e-5];
        let t = TensorF32::new(vec![3], values.to_vec()).unwrap();
        let bytes = t.to_bytes();
        // 8 fixed + 8 dims + 12 payload
        assert_eq!(bytes.len(), 28);
        assert_eq!(&bytes[..4], b"FODF");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 1]);
        assert_eq!(&bytes[8..16], &3u64.to_le_bytes());
        assert_eq!(&bytes[16..20], &1.5f32.to_le_bytes());
        let back = TensorF32::from_bytes(&bytes, Validation::Finite).unwrap();
        for (a, b) in back.data().iter().zip(values) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn short_payload_is_truncated() {
        let t = TensorF32::new(vec![2, 3], vec![1.0; 6]).unwrap();
        let mut bytes = t.to_bytes();
        bytes.truncate(bytes.len() - 5);
        assert!(matches!(
            TensorF32::from_bytes(&bytes, Validation::Finite),
            Err(Error::TruncatedPayload {
                expected: 24,
                found: 19
            })
        ));
    }

    #[test]
    fn each_decode_failure_is_distinct() {
        let good = TensorF32::new(vec![2], vec![1.0, 2.0]).unwrap().to_bytes();

        let mut magic = good.clone();
        magic[0] = b'X';
        assert!(matches!(
            TensorF32::from_bytes(&magic, Validation::Finite),
            Err(Error::BadMagic { .. })
        ));

        let mut extra = good.clone();
        extra.push(0);
        assert!(matches!(
            TensorF32::from_bytes(&extra, Validation::Finite),
            Err(Error::TrailingBytes { found: 1 })
        ));

        let mut dtype = good.clone();
        dtype[6] = 7;
        assert!(matches!(
            TensorF32::from_bytes(&dtype, Validation::Finite),
            Err(Error::UnsupportedDtype(7))
        ));

        assert!(matches!(
            TensorF32::from_bytes(&good[..6], Validation::Finite),
            Err(Error::TruncatedHeader(6))
        ));

        assert!(matches!(
            TensorF32::new(vec![2, 2], vec![0.0; 3]),
            Err(Error::LengthMismatch { expected: 4, found: 3, .. })
        ));
    }

    #[test]
    fn nan_rejected_only_when_validating() {
        let t = TensorF32::new(vec![3], vec![0.0, f32::NAN, 1.0]).unwrap();
        let bytes = t.to_bytes();
        assert!(matches!(
            TensorF32::from_bytes(&bytes, Validation::Finite),
            Err(Error::NonFinite { index: 1, .. })
        ));
        let loose = TensorF32::from_bytes(&bytes, Validation::Structural).unwrap();
        assert!(loose.data()[1].is_nan());
    }

    #[test]
    fn labels_must_be_exact_integers() {
        let t = labels_to_tensor(&[0, 2, 1]).unwrap();
        assert_eq!(labels_from_tensor(&t, Some(3)).unwrap(), vec![0, 2, 1]);
        assert!(labels_from_tensor(&t, Some(2)).is_err());
        let frac = TensorF32::new(vec![2], vec![0.0, 1.5]).unwrap();
        assert!(labels_from_tensor(&frac, None).is_err());
    }

    #[test]
    fn zero_dims_rejected() {
        assert!(TensorF32::new(vec![0, 3], vec![]).is_err());
        assert!(TensorF32::new(vec![], vec![1.0]).is_err());
    }
}
