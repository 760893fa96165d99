//! Checkpoints: `params.bin` holds every tensor back to back in the
//! container format and `params.json` maps parameter names to byte offsets.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Seek, SeekFrom, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use ttt_core::model::ModelParams;
use ttt_core::{DType, Real, Tensor};

use crate::container::{encoded_len, read_tensor, write_tensor};
use crate::error::{HarnessError, IoContext, Result};

pub const TENSORS_FILE: &str = "params.bin";
pub const INDEX_FILE: &str = "params.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointIndex {
    pub dtype: DType,
    pub offsets: BTreeMap<String, u64>,
}

pub fn save_checkpoint<T: Real>(dir: &Path, params: &ModelParams<Tensor<T>>) -> Result<()> {
    fs::create_dir_all(dir).at(dir)?;
    let bin = dir.join(TENSORS_FILE);
    let mut w = BufWriter::new(fs::File::create(&bin).at(&bin)?);
    let mut offsets = BTreeMap::new();
    let mut offset = 0u64;
    let mut result = Ok(());
    params.map_named(|name, t| {
        if result.is_ok() {
            offsets.insert(name.to_string(), offset);
            offset += encoded_len(t) as u64;
            result = write_tensor(&mut w, t);
        }
    });
    result?;
    w.flush().at(&bin)?;
    let index = CheckpointIndex { dtype: T::DTYPE, offsets };
    let json = dir.join(INDEX_FILE);
    fs::write(&json, serde_json::to_vec_pretty(&index)?).at(&json)?;
    Ok(())
}

/// Loads tensors into the structure of `template`, checking every shape.
pub fn load_checkpoint<T: Real>(dir: &Path, template: &ModelParams<Tensor<T>>) -> Result<ModelParams<Tensor<T>>> {
    let json = dir.join(INDEX_FILE);
    let index: CheckpointIndex = serde_json::from_slice(&fs::read(&json).at(&json)?)?;
    if index.dtype != T::DTYPE {
        return Err(HarnessError::format("checkpoint", format!("stored {:?}, expected {:?}", index.dtype, T::DTYPE)));
    }
    let bin = dir.join(TENSORS_FILE);
    let mut r = BufReader::new(fs::File::open(&bin).at(&bin)?);
    let mut loaded = Vec::new();
    for (name, want) in template.names().iter().zip(template.flatten()) {
        let offset = *index
            .offsets
            .get(name)
            .ok_or_else(|| HarnessError::format("checkpoint", format!("missing tensor {name}")))?;
        r.seek(SeekFrom::Start(offset)).at(&bin)?;
        let t = read_tensor::<T>(&mut r)?;
        if t.shape() != want.shape() {
            return Err(HarnessError::format(
                "checkpoint",
                format!("{name} has shape {:?}, expected {:?}", t.shape(), want.shape()),
            ));
        }
        loaded.push(t);
    }
    Ok(template.with_values(&loaded)?)
}
