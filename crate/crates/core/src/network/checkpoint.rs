//! Checkpoint files: `<stem>.json` describes the architecture and the
//! parameter table, `<stem>.bin` holds every parameter buffer as
//! little-endian `f64` in [`ParamStore`](super::ParamStore) order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::model::{Model, ModelConfig};
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "mspnet-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
    /// Offset into the blob, in `f64` elements.
    pub offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    /// Free-form metadata stored alongside the model (training settings).
    #[serde(default)]
    pub metadata: serde_json::Value,
    pub blob: String,
    pub parameters: Vec<ParamRecord>,
}

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    let stem = match stem.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("bin") => stem.with_extension(""),
        _ => stem.to_path_buf(),
    };
    let with = |ext: &str| {
        let mut s = stem.clone().into_os_string();
        s.push(".");
        s.push(ext);
        PathBuf::from(s)
    };
    (with("json"), with("bin"))
}

pub fn save_checkpoint(model: &Model, stem: &Path, metadata: serde_json::Value) -> Result<()> {
    let (json, bin) = paths(stem);
    let mut offset = 0;
    let mut parameters = Vec::with_capacity(model.store.len());
    let mut blob = Vec::with_capacity(8 * model.store.entries().iter().map(|e| e.values.len()).sum::<usize>());
    for e in model.store.entries() {
        parameters.push(ParamRecord { name: e.name.clone(), shape: e.shape.clone(), trainable: e.trainable, offset });
        offset += e.values.len();
        for v in e.values.iter() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        config: model.config.clone(),
        metadata,
        blob: bin.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        parameters,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&json, text)?;
    fs::write(&bin, blob)?;
    Ok(())
}

pub fn load_checkpoint(stem: &Path) -> Result<(Model, serde_json::Value)> {
    let (json, _) = paths(stem);
    let manifest: CheckpointManifest = serde_json::from_str(&fs::read_to_string(&json)?)?;
    if manifest.format != CHECKPOINT_FORMAT || manifest.version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("{} is not a version {CHECKPOINT_VERSION} checkpoint", json.display())));
    }
    let bin = json.with_file_name(&manifest.blob);
    let bytes = fs::read(&bin)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Format(format!("{}: truncated parameter blob", bin.display())));
    }
    let values: Vec<f64> = bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
    let mut model = Model::new(manifest.config, 0)?;
    if manifest.parameters.len() != model.store.len() {
        return Err(Error::Format(format!(
            "checkpoint lists {} parameters, architecture has {}",
            manifest.parameters.len(),
            model.store.len()
        )));
    }
    let ids: Vec<_> = model.store.ids().collect();
    for (id, rec) in ids.into_iter().zip(&manifest.parameters) {
        let e = model.store.entry(id);
        if e.name != rec.name || e.shape != rec.shape {
            return Err(Error::Format(format!(
                "parameter {} {:?} does not match architecture entry {} {:?}",
                rec.name, rec.shape, e.name, e.shape
            )));
        }
        let len = e.values.len();
        let slice = values
            .get(rec.offset..rec.offset + len)
            .ok_or_else(|| Error::Format(format!("blob too short for parameter {}", rec.name)))?;
        *model.store.values_mut(id) = slice.to_vec();
    }
    Ok((model, manifest.metadata))
}
