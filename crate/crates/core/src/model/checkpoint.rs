//! Model checkpoints as JSON.
//!
//! ```text
//! {
//!   "format": "lipsfl-checkpoint",
//!   "version": 1,
//!   "model": {
//!     "arch": "vgg_mini",
//!     "input_shape": [3, 8, 8],
//!     "num_classes": 10,
//!     "layers": [
//!       { "name": "conv1", "kind": { "conv": { "stride": 1, "pad": 1 } },
//!         "weight": { "shape": [4, 3, 3, 3], "data": [ ... ] },
//!         "bias": { "shape": [4], "data": [ ... ] },
//!         "running": null, "role": "first", "shareable": true },
//!       ...
//!     ]
//!   }
//! }
//! ```
//!
//! Layers appear in forward order and tensor data is row-major. Floats are
//! written in shortest round-trip form and parsed with exact rounding, so a
//! save/load cycle is bitwise lossless.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ModelParams;
use crate::error::{Error, Result};

const FORMAT: &str = "lipsfl-checkpoint";
const VERSION: u32 = 1;

#[derive(Serialize)]
struct CheckpointRef<'a> {
    format: &'a str,
    version: u32,
    model: &'a ModelParams,
}

#[derive(Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    model: ModelParams,
}

pub fn write_checkpoint(model: &ModelParams, writer: impl Write) -> Result<()> {
    let doc = CheckpointRef {
        format: FORMAT,
        version: VERSION,
        model,
    };
    serde_json::to_writer(writer, &doc).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn read_checkpoint(reader: impl Read) -> Result<ModelParams> {
    let doc: Checkpoint =
        serde_json::from_reader(reader).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if doc.format != FORMAT || doc.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format {} v{}",
            doc.format, doc.version
        )));
    }
    let reference = super::build_model(
        doc.model.arch,
        &doc.model.input_shape,
        doc.model.num_classes,
        0,
    )?;
    if !reference.is_aligned_with(&doc.model) {
        return Err(Error::Checkpoint(format!(
            "layers do not match the {} architecture",
            doc.model.arch
        )));
    }
    Ok(doc.model)
}

pub fn save_checkpoint(model: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_checkpoint(model, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(file))
}
