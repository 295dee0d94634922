//! CIFAR-10 binary format: 3073-byte records, one label byte followed by
//! 1024 red, 1024 green and 1024 blue bytes, each channel row-major 32×32.

use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const CIFAR10_RECORD_BYTES: usize = 3073;
pub const CIFAR10_FILES: [&str; 6] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
    "test_batch.bin",
];
/// Per-channel normalization applied after scaling pixels to [0, 1].
pub const CIFAR10_MEAN: [f64; 3] = [0.4914, 0.4822, 0.4465];
pub const CIFAR10_STD: [f64; 3] = [0.2470, 0.2435, 0.2616];

const PIXELS: usize = 32 * 32;

fn decode(bytes: &[u8], path: &Path, inputs: &mut Vec<f64>, labels: &mut Vec<usize>) -> Result<()> {
    let whole = bytes.len() / CIFAR10_RECORD_BYTES * CIFAR10_RECORD_BYTES;
    if whole != bytes.len() {
        return Err(Error::TruncatedRecord {
            path: path.to_path_buf(),
            offset: whole,
        });
    }
    for (r, record) in bytes.chunks_exact(CIFAR10_RECORD_BYTES).enumerate() {
        let label = record[0] as usize;
        if label >= 10 {
            return Err(Error::InvalidArgument(format!(
                "{}: label {label} at byte offset {}",
                path.display(),
                r * CIFAR10_RECORD_BYTES
            )));
        }
        labels.push(label);
        for (c, channel) in record[1..].chunks_exact(PIXELS).enumerate() {
            inputs.extend(
                channel
                    .iter()
                    .map(|&b| (b as f64 / 255.0 - CIFAR10_MEAN[c]) / CIFAR10_STD[c]),
            );
        }
    }
    Ok(())
}

fn to_dataset(inputs: Vec<f64>, labels: Vec<usize>) -> Result<Dataset> {
    if labels.is_empty() {
        return Err(Error::Empty("CIFAR-10 input"));
    }
    Dataset::new(
        Tensor::new(vec![labels.len(), 3, 32, 32], inputs)?,
        labels,
        10,
    )
}

/// Reads a single batch file of any number of records.
pub fn read_cifar10_batch(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (mut inputs, mut labels) = (Vec::new(), Vec::new());
    decode(&bytes, path, &mut inputs, &mut labels)?;
    to_dataset(inputs, labels)
}

/// Loads the five training batches followed by the test batch into one pool.
pub fn load_cifar10(directory: impl AsRef<Path>) -> Result<Dataset> {
    let (mut inputs, mut labels) = (Vec::new(), Vec::new());
    for name in CIFAR10_FILES {
        let path = directory.as_ref().join(name);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        decode(&bytes, &path, &mut inputs, &mut labels)?;
    }
    to_dataset(inputs, labels)
}
