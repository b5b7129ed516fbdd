//! Multimodal sample storage, the rotating 10-fold splitter, a synthetic
//! generator and the on-disk fold format.

mod folds;
mod io;
mod synthetic;

pub use folds::{make_folds, shuffled_indices, FoldSpec, MIN_SAMPLES, NUM_FOLDS};
pub use io::{load_dataset, load_fold, save_dataset, save_folds, DatasetMeta, SCHEMA_VERSION};
pub use synthetic::{generate_synthetic, SyntheticSpec};

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::model::ModalityShape;
use crate::numerics::Tensor;

/// One modality: `[N, C, T]` single-precision, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityArray {
    pub channels: usize,
    pub timesteps: usize,
    pub data: Vec<f32>,
}

impl ModalityArray {
    pub fn sample_len(&self) -> usize {
        self.channels * self.timesteps
    }

    pub fn sample(&self, j: usize) -> &[f32] {
        let s = self.sample_len();
        &self.data[j * s..(j + 1) * s]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalDataset {
    modalities: Vec<ModalityArray>,
    labels: Vec<u32>,
    sample_ids: Vec<i64>,
    num_classes: usize,
}

impl MultimodalDataset {
    pub fn new(
        modalities: Vec<ModalityArray>,
        labels: Vec<u32>,
        sample_ids: Vec<i64>,
        num_classes: usize,
    ) -> Result<Self> {
        let n = labels.len();
        if modalities.is_empty() {
            return Err(Error::config("dataset needs at least one modality"));
        }
        for (i, m) in modalities.iter().enumerate() {
            if m.channels == 0 || m.timesteps == 0 || m.data.len() != n * m.sample_len() {
                return Err(Error::dim(format!(
                    "modality {i}: {} values for {n} samples of [{}, {}]",
                    m.data.len(),
                    m.channels,
                    m.timesteps
                )));
            }
        }
        if sample_ids.len() != n {
            return Err(Error::dim(format!("{} sample ids for {n} labels", sample_ids.len())));
        }
        if let Some(bad) = labels.iter().find(|&&y| y as usize >= num_classes) {
            return Err(Error::config(format!("label {bad} outside {num_classes} classes")));
        }
        let mut seen = HashSet::with_capacity(n);
        if let Some(dup) = sample_ids.iter().find(|id| !seen.insert(**id)) {
            return Err(Error::config(format!("duplicate sample id {dup}")));
        }
        Ok(Self { modalities, labels, sample_ids, num_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_modalities(&self) -> usize {
        self.modalities.len()
    }

    pub fn modalities(&self) -> &[ModalityArray] {
        &self.modalities
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn sample_ids(&self) -> &[i64] {
        &self.sample_ids
    }

    pub fn shapes(&self) -> Vec<ModalityShape> {
        self.modalities.iter().map(|m| ModalityShape { channels: m.channels, timesteps: m.timesteps }).collect()
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&j| j >= self.len()) {
            return Err(Error::dim(format!("index {bad} outside dataset of {} samples", self.len())));
        }
        let modalities = self
            .modalities
            .iter()
            .map(|m| ModalityArray {
                channels: m.channels,
                timesteps: m.timesteps,
                data: indices.iter().flat_map(|&j| m.sample(j).iter().copied()).collect(),
            })
            .collect();
        Ok(Self {
            modalities,
            labels: indices.iter().map(|&j| self.labels[j]).collect(),
            sample_ids: indices.iter().map(|&j| self.sample_ids[j]).collect(),
            num_classes: self.num_classes,
        })
    }

    /// Model input for `indices`: one `[B, C_m, T_m]` double tensor per modality.
    pub fn batch(&self, indices: &[usize]) -> Result<Vec<Tensor>> {
        self.modalities
            .iter()
            .map(|m| {
                let data = indices.iter().flat_map(|&j| m.sample(j).iter().map(|&v| v as f64)).collect();
                Tensor::new(&[indices.len(), m.channels, m.timesteps], data)
            })
            .collect()
    }

    pub fn batch_labels(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&j| self.labels[j] as usize).collect()
    }
}
