//! Checkpoint file: a magic line, one JSON metadata line, then every parameter
//! as little-endian `f32` in traversal order.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::Params;
use super::{ModelConfig, TseModel};
use crate::error::{Result, TseError};
use crate::synthesis::ClassVocabulary;

const MAGIC: &str = "TSECKPT 1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    pub vocabulary: Vec<String>,
    pub vocabulary_fingerprint: String,
    pub system: String,
    pub step: u64,
    pub epoch: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub val_snri: Option<f64>,
    #[serde(default)]
    pub tensors: Vec<TensorEntry>,
}

impl CheckpointMeta {
    pub fn new(config: ModelConfig, vocab: &ClassVocabulary, system: &str, master_seed: u64) -> Self {
        Self {
            config,
            vocabulary: vocab.names().to_vec(),
            vocabulary_fingerprint: vocab.fingerprint(),
            system: system.to_string(),
            step: 0,
            epoch: 0,
            master_seed,
            val_snri: None,
            tensors: Vec::new(),
        }
    }
}

pub fn save_checkpoint(path: &Path, model: &TseModel<f32>, meta: &CheckpointMeta) -> Result<()> {
    if meta.config != *model.config() {
        return Err(TseError::Checkpoint("metadata config differs from the model".into()));
    }
    let tensors = model.params.tensors();
    let mut meta = meta.clone();
    meta.tensors = tensors.iter().map(|(name, t)| TensorEntry { name: name.clone(), len: t.len() }).collect();
    let mut buf = Vec::with_capacity(model.params.num_params() * 4 + 4096);
    writeln!(buf, "{MAGIC}")?;
    serde_json::to_writer(&mut buf, &meta)?;
    buf.push(b'\n');
    for (_, t) in &tensors {
        for v in t.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &buf)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Loads a checkpoint. When `vocab` is given, its fingerprint must match the
/// one the model was trained with.
pub fn load_checkpoint(path: &Path, vocab: Option<&ClassVocabulary>) -> Result<(TseModel<f32>, CheckpointMeta)> {
    if !path.exists() {
        return Err(TseError::MissingArtifact(path.to_path_buf()));
    }
    let mut reader = BufReader::new(fs::File::open(path)?);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    if line.trim_end() != MAGIC {
        return Err(TseError::Checkpoint(format!("{} is not a checkpoint file", path.display())));
    }
    line.clear();
    reader.read_line(&mut line)?;
    let meta: CheckpointMeta = serde_json::from_str(line.trim_end())?;
    if let Some(v) = vocab {
        if v.fingerprint() != meta.vocabulary_fingerprint {
            return Err(TseError::IncompatibleVocabulary(format!(
                "checkpoint vocabulary {:?} differs from {:?}",
                meta.vocabulary,
                v.names()
            )));
        }
    }
    let mut model = TseModel::<f32>::new(meta.config.clone(), 0)?;
    let mut blob = Vec::new();
    reader.read_to_end(&mut blob)?;
    let mut tensors = model.params.tensors_mut();
    if tensors.len() != meta.tensors.len() {
        return Err(TseError::Checkpoint(format!(
            "checkpoint has {} tensors, config implies {}",
            meta.tensors.len(),
            tensors.len()
        )));
    }
    let expected: usize = tensors.iter().map(|(_, t)| t.len()).sum();
    if blob.len() != expected * 4 {
        return Err(TseError::Checkpoint(format!("blob holds {} bytes, expected {}", blob.len(), expected * 4)));
    }
    let mut chunks = blob.chunks_exact(4);
    for ((name, dst), entry) in tensors.iter_mut().zip(&meta.tensors) {
        if *name != entry.name || dst.len() != entry.len {
            return Err(TseError::Checkpoint(format!("tensor {} does not match {}", entry.name, name)));
        }
        for d in dst.iter_mut() {
            let c = chunks.next().expect("length checked");
            *d = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
        }
    }
    Ok((model, meta))
}
