//! Checkpoint directory layout (format version 1).
//!
//! ```text
//! <dir>/config.json   {"format_version", "kind", "config": {...}}
//! <dir>/params.json   {"format_version", "groups": {group: {"file", "tensors": [{name, shape, offset}]}}}
//! <dir>/<group>.bin   f32 little-endian values of every tensor in the group, concatenated
//! ```
//!
//! A tensor's group is the prefix of its name before the first `.`.
//! The fingerprint is the SHA-256 of `config.json`, `params.json` and every
//! group blob in name order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
pub const CONFIG_FILE: &str = "config.json";
pub const PARAMS_FILE: &str = "params.json";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedArray {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Self {
        let a = NamedArray {
            name: name.into(),
            shape,
            data,
        };
        debug_assert_eq!(a.shape.iter().product::<usize>(), a.data.len());
        a
    }

    fn group(&self) -> &str {
        self.name.split('.').next().unwrap_or(&self.name)
    }
}

#[derive(Serialize, Deserialize)]
struct ConfigFile<C> {
    format_version: u32,
    kind: String,
    config: C,
}

#[derive(Serialize, Deserialize)]
struct ParamsIndex {
    format_version: u32,
    groups: BTreeMap<String, GroupEntry>,
}

#[derive(Serialize, Deserialize)]
struct GroupEntry {
    file: String,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

/// Write a checkpoint and return its fingerprint. Existing checkpoints are
/// never overwritten unless `overwrite` is set.
pub fn write_checkpoint<C: Serialize>(
    dir: &Path,
    kind: &str,
    config: &C,
    arrays: &[NamedArray],
    overwrite: bool,
) -> Result<String> {
    if dir.join(CONFIG_FILE).exists() && !overwrite {
        return Err(Error::Exists(dir.to_path_buf()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut groups: BTreeMap<String, (GroupEntry, Vec<u8>)> = BTreeMap::new();
    for a in arrays {
        let (entry, blob) = groups.entry(a.group().to_string()).or_insert_with(|| {
            (
                GroupEntry {
                    file: format!("{}.bin", a.group()),
                    tensors: Vec::new(),
                },
                Vec::new(),
            )
        });
        entry.tensors.push(TensorEntry {
            name: a.name.clone(),
            shape: a.shape.clone(),
            offset: blob.len() / 4,
        });
        blob.extend(a.data.iter().flat_map(|v| v.to_le_bytes()));
    }

    let config_bytes = serde_json::to_vec_pretty(&ConfigFile {
        format_version: CHECKPOINT_FORMAT_VERSION,
        kind: kind.to_string(),
        config,
    })?;
    let mut index = ParamsIndex {
        format_version: CHECKPOINT_FORMAT_VERSION,
        groups: BTreeMap::new(),
    };
    let mut blobs = Vec::new();
    for (name, (entry, blob)) in groups {
        blobs.push((entry.file.clone(), blob));
        index.groups.insert(name, entry);
    }
    let index_bytes = serde_json::to_vec_pretty(&index)?;

    let write = |name: &str, bytes: &[u8]| {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(|e| Error::io(p, e))
    };
    for (file, blob) in &blobs {
        write(file, blob)?;
    }
    write(PARAMS_FILE, &index_bytes)?;
    write(CONFIG_FILE, &config_bytes)?;
    Ok(fingerprint_parts(&config_bytes, &index_bytes, blobs.iter().map(|(_, b)| b.as_slice())))
}

fn fingerprint_parts<'a>(config: &[u8], index: &[u8], blobs: impl Iterator<Item = &'a [u8]>) -> String {
    let mut h = Sha256::new();
    h.update(config);
    h.update(index);
    for b in blobs {
        h.update(b);
    }
    hex::encode(h.finalize())
}

pub struct LoadedCheckpoint<C> {
    pub config: C,
    pub arrays: Vec<NamedArray>,
    pub fingerprint: String,
}

impl<C> LoadedCheckpoint<C> {
    pub fn take(&mut self, name: &str) -> Result<NamedArray> {
        let i = self
            .arrays
            .iter()
            .position(|a| a.name == name)
            .ok_or_else(|| Error::Argument(format!("checkpoint lacks tensor {name}")))?;
        Ok(self.arrays.remove(i))
    }
}

pub fn read_checkpoint<C: DeserializeOwned>(dir: &Path, kind: &str) -> Result<LoadedCheckpoint<C>> {
    let cfg_path = dir.join(CONFIG_FILE);
    if !cfg_path.exists() {
        return Err(Error::Prerequisite(format!("no checkpoint at {}", dir.display())));
    }
    let config_bytes = fs::read(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
    let head: serde_json::Value = serde_json::from_slice(&config_bytes)
        .map_err(|e| Error::format(&cfg_path, e.to_string()))?;
    let version = head.get("format_version").and_then(|v| v.as_u64());
    if version != Some(CHECKPOINT_FORMAT_VERSION as u64) {
        return Err(Error::format(
            &cfg_path,
            format!("checkpoint format version {version:?}, expected {CHECKPOINT_FORMAT_VERSION}"),
        ));
    }
    let cfg: ConfigFile<C> =
        serde_json::from_slice(&config_bytes).map_err(|e| Error::format(&cfg_path, e.to_string()))?;
    if cfg.kind != kind {
        return Err(Error::format(
            &cfg_path,
            format!("checkpoint kind {:?}, expected {kind:?}", cfg.kind),
        ));
    }

    let idx_path = dir.join(PARAMS_FILE);
    let index_bytes = fs::read(&idx_path).map_err(|e| Error::io(&idx_path, e))?;
    let index: ParamsIndex =
        serde_json::from_slice(&index_bytes).map_err(|e| Error::format(&idx_path, e.to_string()))?;
    if index.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::format(&idx_path, format!("params format version {}", index.format_version)));
    }

    let mut arrays = Vec::new();
    let mut blobs = Vec::new();
    for entry in index.groups.values() {
        let p = dir.join(&entry.file);
        let blob = fs::read(&p).map_err(|e| Error::io(&p, e))?;
        if blob.len() % 4 != 0 {
            return Err(Error::format(&p, "blob length not a multiple of 4"));
        }
        let floats: Vec<f32> = blob
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        for t in &entry.tensors {
            let n: usize = t.shape.iter().product();
            if t.offset + n > floats.len() {
                return Err(Error::format(&p, format!("tensor {} runs past end of blob", t.name)));
            }
            arrays.push(NamedArray::new(t.name.clone(), t.shape.clone(), floats[t.offset..t.offset + n].to_vec()));
        }
        blobs.push(blob);
    }
    let fingerprint = fingerprint_parts(&config_bytes, &index_bytes, blobs.iter().map(|b| b.as_slice()));
    Ok(LoadedCheckpoint {
        config: cfg.config,
        arrays,
        fingerprint,
    })
}
