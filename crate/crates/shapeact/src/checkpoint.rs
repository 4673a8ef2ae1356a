//! Checkpoints: a directory holding `manifest.json` (configuration, stage,
//! epoch, tensor names and shapes) and one little-endian `f64` blob per
//! tensor. Parameters and optimizer moments reload bit for bit.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use shapeact_core::field::{FieldConfig, ParamStore, ShapeField, Tensor};
use shapeact_core::training::{Adam, AdamConfig, Stage, TrainConfig};

use crate::{json, Error, Result};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamEntry {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<TensorEntry>,
    pub v: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: Stage,
    /// Last completed epoch.
    pub epoch: usize,
    /// Set when training stopped on an error after this epoch's state.
    pub aborted: bool,
    pub field: FieldConfig,
    pub train: TrainConfig,
    pub tensors: Vec<TensorEntry>,
    pub adam: Option<AdamEntry>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub stage: Stage,
    pub epoch: usize,
    pub aborted: bool,
    pub train: TrainConfig,
    pub field: ShapeField,
    pub adam: Option<Adam>,
}

pub fn encode_f64(data: &[f64]) -> Vec<u8> {
    data.iter().flat_map(|x| x.to_le_bytes()).collect()
}

pub fn decode_f64(bytes: &[u8]) -> Option<Vec<f64>> {
    if bytes.len() % 8 != 0 {
        return None;
    }
    Some(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

fn write_store(dir: &Path, prefix: &str, store: &ParamStore) -> Result<Vec<TensorEntry>> {
    store
        .tensors()
        .iter()
        .map(|t| {
            let file = format!("{prefix}.{}.bin", t.name);
            let path = dir.join(&file);
            fs::write(&path, encode_f64(&t.data)).map_err(|e| Error::io(&path, e))?;
            Ok(TensorEntry { name: t.name.clone(), shape: t.shape.clone(), file })
        })
        .collect()
}

fn read_store(dir: &Path, entries: &[TensorEntry]) -> Result<ParamStore> {
    let tensors = entries
        .iter()
        .map(|e| {
            if e.file.contains(['/', '\\']) || e.file.starts_with("..") {
                return Err(Error::format(&dir.join(MANIFEST), format!("tensor file {:?} escapes the checkpoint", e.file)));
            }
            let path = dir.join(&e.file);
            let bytes = fs::read(&path).map_err(|err| Error::io(&path, err))?;
            let data = decode_f64(&bytes).ok_or_else(|| Error::format(&path, "length is not a multiple of 8"))?;
            let expected: usize = e.shape.iter().product();
            if data.len() != expected {
                return Err(Error::format(&path, format!("{} values for shape {:?}", data.len(), e.shape)));
            }
            Ok(Tensor { name: e.name.clone(), shape: e.shape.clone(), data })
        })
        .collect::<Result<Vec<_>>>()?;
    ParamStore::from_tensors(tensors).map_err(|e| Error::format(&dir.join(MANIFEST), e))
}

impl Checkpoint {
    /// Writes into `dir`, replacing any previous checkpoint there. The new
    /// contents are staged in a sibling directory and swapped in.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let staging = sibling(dir, "tmp");
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
        }
        fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
        let tensors = write_store(&staging, "param", self.field.params())?;
        let adam = match &self.adam {
            Some(a) => Some(AdamEntry {
                config: a.config,
                step: a.step,
                m: write_store(&staging, "adam_m", &a.m)?,
                v: write_store(&staging, "adam_v", &a.v)?,
            }),
            None => None,
        };
        let manifest = Manifest {
            stage: self.stage,
            epoch: self.epoch,
            aborted: self.aborted,
            field: self.field.config().clone(),
            train: self.train.clone(),
            tensors,
            adam,
        };
        json::write(&staging.join(MANIFEST), &manifest, true)?;
        let old = sibling(dir, "old");
        if dir.exists() {
            if old.exists() {
                fs::remove_dir_all(&old).map_err(|e| Error::io(&old, e))?;
            }
            fs::rename(dir, &old).map_err(|e| Error::io(dir, e))?;
        }
        fs::rename(&staging, dir).map_err(|e| Error::io(dir, e))?;
        if old.exists() {
            fs::remove_dir_all(&old).map_err(|e| Error::io(&old, e))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST);
        let m: Manifest = json::read(&manifest_path)?;
        let params = read_store(dir, &m.tensors)?;
        let field = ShapeField::from_params(m.field.clone(), params).map_err(|e| Error::format(&manifest_path, e))?;
        let adam = match &m.adam {
            Some(a) => {
                let (mm, vv) = (read_store(dir, &a.m)?, read_store(dir, &a.v)?);
                if !mm.same_layout(field.params()) || !vv.same_layout(field.params()) {
                    return Err(Error::format(&manifest_path, "optimizer moments do not match the parameters"));
                }
                Some(Adam { config: a.config, m: mm, v: vv, step: a.step })
            }
            None => None,
        };
        Ok(Checkpoint { stage: m.stage, epoch: m.epoch, aborted: m.aborted, train: m.train, field, adam })
    }
}

fn sibling(dir: &Path, suffix: &str) -> PathBuf {
    let mut name = dir.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(format!(".{suffix}"));
    dir.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_encoding_is_little_endian() {
        assert_eq!(encode_f64(&[1.0]), vec![0, 0, 0, 0, 0, 0, 0xf0, 0x3f]);
        assert_eq!(decode_f64(&[0; 7]), None);
    }
}
