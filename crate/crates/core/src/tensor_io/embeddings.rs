use crate::error::{Error, Result};

use super::TensorF32;

/// `N × D` embeddings with one class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEmbeddingSet {
    embeddings: TensorF32,
    labels: Vec<usize>,
    class_names: Vec<String>,
}

impl LabeledEmbeddingSet {
    pub fn new(embeddings: TensorF32, labels: Vec<usize>, class_names: Vec<String>) -> Result<Self> {
        let (n, _) = embeddings.matrix_shape()?;
        if labels.len() != n {
            return Err(Error::DimMismatch(format!(
                "{n} embedding rows but {} labels",
                labels.len()
            )));
        }
        if class_names.is_empty() {
            return Err(Error::InvalidArgument("at least one class is required".into()));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= class_names.len()) {
            return Err(Error::InvalidArgument(format!(
                "label {i} = {l} is out of range for {} classes",
                class_names.len()
            )));
        }
        Ok(Self {
            embeddings,
            labels,
            class_names,
        })
    }

    /// Convenience constructor naming classes `class_0 … class_{C-1}`.
    pub fn with_generic_names(embeddings: TensorF32, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let names = (0..num_classes).map(|c| format!("class_{c}")).collect();
        Self::new(embeddings, labels, names)
    }

    pub fn embeddings(&self) -> &TensorF32 {
        &self.embeddings
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.dims()[1]
    }

    pub fn row(&self, i: usize) -> &[f32] {
        self.embeddings.row(i)
    }

    /// Row indices belonging to class `c`, ascending.
    pub fn rows_of_class(&self, c: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| (l == c).then_some(i))
            .collect()
    }

    /// Copy with every row scaled to unit L2 norm (zero rows are left as is).
    pub fn l2_normalized(&self) -> Self {
        let d = self.dim();
        let mut data = self.embeddings.data().to_vec();
        for row in data.chunks_exact_mut(d) {
            let norm = row.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt();
            if norm > 0.0 {
                for v in row.iter_mut() {
                    *v = (f64::from(*v) / norm) as f32;
                }
            }
        }
        Self {
            embeddings: TensorF32::new(self.embeddings.dims().to_vec(), data).expect("same shape"),
            labels: self.labels.clone(),
            class_names: self.class_names.clone(),
        }
    }
}
