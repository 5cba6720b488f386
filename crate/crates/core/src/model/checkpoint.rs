//! Checkpoint directory: `meta.json`, `index.json` and one little-endian
//! `f32` blob per named tensor under `tensors/`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::network::{Model, TargetScaler};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub version: u32,
    pub config: ModelConfig,
    /// Subject ids in head order.
    pub subjects: Vec<String>,
    /// Subject id to head index.
    pub heads: BTreeMap<String, usize>,
    pub seed: u64,
    pub epoch: usize,
    pub scaler: TargetScaler,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn pretty<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v).map_err(|e| Error::invalid(format!("serializing checkpoint metadata: {e}")))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        context: path.display().to_string(),
        detail: e.to_string(),
    })
}

impl Model {
    pub fn save(&self, dir: &Path, epoch: usize) -> Result<()> {
        let tensors = dir.join("tensors");
        fs::create_dir_all(&tensors).map_err(|e| Error::io(&tensors, e))?;
        let mut index = Vec::with_capacity(self.params.tensors.len());
        for t in &self.params.tensors {
            let file = format!("{}.bin", t.name);
            let bytes: Vec<u8> = self.params.values[t.offset..t.offset + t.len]
                .iter()
                .flat_map(|v| v.to_le_bytes())
                .collect();
            write_atomic(&tensors.join(&file), &bytes)?;
            index.push(IndexEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
                file,
            });
        }
        let heads = self
            .subjects
            .iter()
            .map(|s| Ok((s.clone(), self.head_index(s)?)))
            .collect::<Result<_>>()?;
        let meta = CheckpointMeta {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            subjects: self.subjects.clone(),
            heads,
            seed: self.seed,
            epoch,
            scaler: self.scaler,
        };
        write_atomic(&dir.join("index.json"), pretty(&index)?.as_bytes())?;
        write_atomic(&dir.join("meta.json"), pretty(&meta)?.as_bytes())
    }

    /// Load and validate every tensor against the layout implied by the
    /// stored config and subject list.
    pub fn load(dir: &Path) -> Result<(Self, CheckpointMeta)> {
        let meta: CheckpointMeta = read_json(&dir.join("meta.json"))?;
        if meta.version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported checkpoint version {}",
                meta.version
            )));
        }
        let index: Vec<IndexEntry> = read_json(&dir.join("index.json"))?;
        let mut model = Model::new(meta.config.clone(), meta.subjects.clone(), meta.seed)?;
        for (id, &h) in &meta.heads {
            if model.head_index(id)? != h {
                return Err(Error::invalid(format!(
                    "head map entry {id} -> {h} disagrees with subject order"
                )));
            }
        }
        model.scaler = meta.scaler;
        if index.len() != model.params.tensors.len() {
            return Err(Error::ShapeMismatch {
                context: "checkpoint index".into(),
                detail: format!("{} tensors, config implies {}", index.len(), model.params.tensors.len()),
            });
        }
        for entry in &index {
            let info = model
                .params
                .tensor(&entry.name)
                .ok_or_else(|| Error::invalid(format!("unexpected tensor {}", entry.name)))?
                .clone();
            if info.shape != entry.shape {
                return Err(Error::ShapeMismatch {
                    context: format!("tensor {}", entry.name),
                    detail: format!("stored {:?}, config implies {:?}", entry.shape, info.shape),
                });
            }
            let path = dir.join("tensors").join(&entry.file);
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            if bytes.len() != info.len * 4 {
                return Err(Error::ShapeMismatch {
                    context: format!("tensor {}", entry.name),
                    detail: format!("{} bytes for {} values", bytes.len(), info.len),
                });
            }
            let dst = &mut model.params.values[info.offset..info.offset + info.len];
            for (d, c) in dst.iter_mut().zip(bytes.chunks_exact(4)) {
                *d = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            }
            if dst.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("tensor {}", entry.name),
                });
            }
        }
        Ok((model, meta))
    }
}
