//! Datasets and non-IID client partitioning.

mod cifar;
mod partition;
mod synthetic;

pub use cifar::{
    load_cifar10, read_cifar10_batch, CIFAR10_FILES, CIFAR10_MEAN, CIFAR10_RECORD_BYTES,
    CIFAR10_STD,
};
pub use partition::{
    class_histogram, dirichlet_partition, largest_remainder, sample_dirichlet, ClientSplit,
    Partition,
};
pub use synthetic::{gen_synthetic, SyntheticSpec};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Labeled samples; `inputs` has shape `[N, sample_shape...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        if inputs.shape()[0] != labels.len() {
            return Err(Error::shape("dataset", inputs.shape(), &[labels.len()]));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange { label, num_classes });
        }
        Ok(Dataset {
            inputs,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    /// Reinterprets every sample with a new shape of equal size.
    pub fn with_sample_shape(self, shape: &[usize]) -> Result<Self> {
        let mut full = vec![self.len()];
        full.extend_from_slice(shape);
        Ok(Dataset {
            inputs: self.inputs.reshape(&full)?,
            ..self
        })
    }

    /// Gathers a batch `(inputs, labels)` for the given sample indices.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        (
            self.inputs.gather_rows(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    pub fn class_counts(&self) -> Vec<usize> {
        class_histogram(&self.labels, self.num_classes, 0..self.len())
    }
}
