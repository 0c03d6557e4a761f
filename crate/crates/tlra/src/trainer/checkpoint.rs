//! JSON checkpoint format: config, named parameter tensors, prototype
//! bank, and the epoch that produced it.

use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TlraError};
use crate::numeric::Tensor;
use crate::prototypes::PrototypeBank;

use super::{Model, TrainerConfig};

const CKPT_FORMAT: &str = "tlra-ckpt-v1";

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    config: TrainerConfig,
    dims: [usize; 3],
    params: BTreeMap<String, ParamEntry>,
    bank: PrototypeBank,
    epoch: usize,
}

/// A model restored from disk together with its training configuration.
pub struct Checkpoint {
    pub config: TrainerConfig,
    pub dims: [usize; 3],
    pub epoch: usize,
    pub model: Model,
}

pub fn save_checkpoint(path: &Path, model: &Model, cfg: &TrainerConfig, epoch: usize) -> Result<()> {
    let params: BTreeMap<String, ParamEntry> = model
        .params
        .iter()
        .map(|p| {
            (p.name.clone(), ParamEntry { shape: p.value.shape().to_vec(), values: p.value.values().to_vec() })
        })
        .collect();
    let file = CheckpointFile {
        format: CKPT_FORMAT.to_string(),
        config: cfg.clone(),
        dims: model.dims,
        params,
        bank: model.bank.clone(),
        epoch,
    };
    let out = BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(out, &file)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file: CheckpointFile = serde_json::from_reader(BufReader::new(std::fs::File::open(path)?))?;
    if file.format != CKPT_FORMAT {
        return Err(TlraError::Config(format!("unknown checkpoint format \"{}\"", file.format)));
    }
    let mut model = Model::new(&file.config, file.dims)?;
    let mut restored = 0usize;
    for (name, entry) in &file.params {
        let id = model
            .params
            .id_of(name)
            .ok_or_else(|| TlraError::Config(format!("checkpoint has unknown parameter \"{name}\"")))?;
        let current = model.params.get(id);
        if current.value.shape() != entry.shape.as_slice() {
            return Err(TlraError::Config(format!(
                "parameter \"{name}\" shape {:?} does not match model shape {:?}",
                entry.shape,
                current.value.shape()
            )));
        }
        model.params.get_mut(id).value = Tensor::new(entry.shape.clone(), entry.values.clone())?;
        restored += 1;
    }
    if restored != model.params.len() {
        return Err(TlraError::Config(format!(
            "checkpoint restored {restored} of {} parameters",
            model.params.len()
        )));
    }
    model.bank = file.bank;
    Ok(Checkpoint { config: file.config, dims: file.dims, epoch: file.epoch, model })
}
