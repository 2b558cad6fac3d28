//! Checkpoints: `manifest.json` plus one raw little-endian `f64` blob per
//! parameter set.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::params::{ParamSet, Role};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
const DTYPE: &str = "f64-le";

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct SetEntry {
    role: Role,
    blob: String,
    params: Vec<ParamEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Manifest {
    format: u32,
    dtype: String,
    sets: Vec<SetEntry>,
    #[serde(default)]
    meta: serde_json::Value,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub sets: Vec<ParamSet>,
    /// Free-form metadata stored next to the parameters.
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn get(&self, role: Role) -> Option<&ParamSet> {
        self.sets.iter().find(|s| s.role() == role)
    }

    pub fn require(&self, role: Role) -> Result<&ParamSet> {
        self.get(role).ok_or_else(|| {
            Error::Checkpoint(format!("checkpoint has no {} parameters", role.as_str()))
        })
    }
}

pub fn save(dir: &Path, sets: &[&ParamSet], meta: serde_json::Value) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(sets.len());
    for (i, set) in sets.iter().enumerate() {
        let blob = format!("{i}_{}.bin", set.role().as_str());
        let mut bytes = Vec::with_capacity(set.num_params() * 8);
        for (_, t) in set.iter() {
            for v in t.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let path = dir.join(&blob);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        entries.push(SetEntry {
            role: set.role(),
            blob,
            params: set
                .iter()
                .map(|(name, t)| ParamEntry {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        });
    }
    let manifest = Manifest {
        format: FORMAT_VERSION,
        dtype: DTYPE.into(),
        sets: entries,
        meta,
    };
    let path = dir.join(MANIFEST);
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn load(dir: &Path) -> Result<Checkpoint> {
    let path = dir.join(MANIFEST);
    let text = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_slice(&text)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if manifest.format != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint format {} (expected {FORMAT_VERSION})",
            manifest.format
        )));
    }
    if manifest.dtype != DTYPE {
        return Err(Error::Checkpoint(format!(
            "unsupported dtype `{}`",
            manifest.dtype
        )));
    }
    let mut sets = Vec::with_capacity(manifest.sets.len());
    for entry in manifest.sets {
        if entry.blob.contains(['/', '\\']) {
            return Err(Error::Checkpoint(format!(
                "blob name `{}` is not a plain file name",
                entry.blob
            )));
        }
        let blob_path = dir.join(&entry.blob);
        let bytes = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
        let expected: usize = entry
            .params
            .iter()
            .map(|p| p.shape.iter().product::<usize>())
            .sum();
        if bytes.len() != expected * 8 {
            return Err(Error::Checkpoint(format!(
                "{} holds {} bytes, manifest implies {}",
                entry.blob,
                bytes.len(),
                expected * 8
            )));
        }
        let mut values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")));
        let mut set = ParamSet::new(entry.role);
        for p in entry.params {
            let n = p.shape.iter().product();
            let data: Vec<f64> = values.by_ref().take(n).collect();
            set.push(p.name, Tensor::new(p.shape, data)?)?;
        }
        sets.push(set);
    }
    Ok(Checkpoint {
        sets,
        meta: manifest.meta,
    })
}
