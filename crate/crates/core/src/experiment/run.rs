//! Run directory layout and the `run.json` provenance record.
//!
//! ```text
//! <run>/run.json             provenance: config hash, artifact fingerprints, history
//! <run>/config.toml          resolved configuration of the last command
//! <run>/data/                dataset (+ spec.json)
//! <run>/extractor/           evaluation feature extractor
//! <run>/rvq/                 codec checkpoint
//! <run>/predictor/           predictor checkpoint
//! <run>/reports/             eval.json, sweep.csv, sweep.json, ablation.{csv,md,json}
//! <run>/generations/         exported generations
//! <run>/ablate/<preset>/     rvq/, predictor/, reports/ per ablation preset
//! ```
//!
//! Everything in a run directory is a function of the configuration except
//! the `unix_time` fields of `run.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, Preset};
use crate::error::{Error, Result};

pub const RUN_FILE: &str = "run.json";
pub const CONFIG_FILE: &str = "config.toml";

/// Paths of one run. Models (codec, predictor, reports, generations) may live
/// in a preset subdirectory while data and the extractor stay shared.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunLayout {
    pub root: PathBuf,
    pub models: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        let root = root.into();
        RunLayout {
            models: root.clone(),
            root,
        }
    }

    /// Layout whose models live under `ablate/<preset>/`.
    pub fn for_preset(&self, preset: Preset) -> Self {
        RunLayout {
            root: self.root.clone(),
            models: self.root.join("ablate").join(preset.name()),
        }
    }

    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn extractor(&self) -> PathBuf {
        self.root.join("extractor")
    }

    pub fn rvq(&self) -> PathBuf {
        self.models.join("rvq")
    }

    pub fn predictor(&self) -> PathBuf {
        self.models.join("predictor")
    }

    pub fn reports(&self) -> PathBuf {
        self.models.join("reports")
    }

    pub fn generations(&self) -> PathBuf {
        self.models.join("generations")
    }

    /// Reports that compare presets.
    pub fn root_reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn run_file(&self) -> PathBuf {
        self.root.join(RUN_FILE)
    }

    /// Artifact key used in `run.json`, e.g. `ablate/plus_ns/rvq`.
    pub fn key(&self, path: &Path) -> String {
        path.strip_prefix(&self.root)
            .unwrap_or(path)
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandRecord {
    pub command: String,
    pub config_hash: String,
    /// Artifact keys written by the command.
    pub wrote: Vec<String>,
    /// Seconds since the epoch; the only nondeterministic field.
    pub unix_time: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub version: String,
    pub config_hash: String,
    pub config: serde_json::Value,
    /// Artifact key -> fingerprint.
    pub artifacts: BTreeMap<String, String>,
    pub history: Vec<CommandRecord>,
}

impl RunRecord {
    pub fn load(path: &Path) -> Result<Option<Self>> {
        match fs::read(path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map(Some)
                .map_err(|e| Error::format(path, e.to_string())),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(path, e)),
        }
    }
}

/// Merge a finished command into `run.json` and rewrite `config.toml`.
pub fn record_command(
    layout: &RunLayout,
    config: &ExperimentConfig,
    command: &str,
    artifacts: &[(PathBuf, String)],
) -> Result<RunRecord> {
    fs::create_dir_all(&layout.root).map_err(|e| Error::io(&layout.root, e))?;
    let path = layout.run_file();
    let mut rec = RunRecord::load(&path)?.unwrap_or_default();
    let hash = config.hash()?;
    if !rec.config_hash.is_empty() && rec.config_hash != hash {
        log::warn!("run directory was last used with config {}; now {}", &rec.config_hash[..12], &hash[..12]);
    }
    rec.version = env!("CARGO_PKG_VERSION").to_string();
    rec.config_hash = hash.clone();
    rec.config = serde_json::to_value(config)?;
    let mut wrote = Vec::new();
    for (p, fp) in artifacts {
        let key = layout.key(p);
        rec.artifacts.insert(key.clone(), fp.clone());
        wrote.push(key);
    }
    let unix_time = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    rec.history.push(CommandRecord {
        command: command.to_string(),
        config_hash: hash,
        wrote,
        unix_time,
    });
    fs::write(&path, serde_json::to_vec_pretty(&rec)?).map_err(|e| Error::io(&path, e))?;
    let cfg_path = layout.root.join(CONFIG_FILE);
    fs::write(&cfg_path, config.to_toml()?).map_err(|e| Error::io(&cfg_path, e))?;
    Ok(rec)
}

/// SHA-256 over the named files of `dir`, in the given order.
pub fn fingerprint_files(dir: &Path, files: &[&str]) -> Result<String> {
    let mut h = Sha256::new();
    for f in files {
        let p = dir.join(f);
        let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
        h.update((f.len() as u64).to_le_bytes());
        h.update(f.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

/// Fail with [`Error::Exists`] if `path` exists and `force` is off; with
/// `force`, remove it.
pub fn claim(path: &Path, force: bool) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    if !force {
        return Err(Error::Exists(path.to_path_buf()));
    }
    let res = if path.is_dir() {
        fs::remove_dir_all(path)
    } else {
        fs::remove_file(path)
    };
    res.map_err(|e| Error::io(path, e))
}
