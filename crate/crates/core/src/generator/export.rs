//! CSV and JSON export of generated motions.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::decode::{GenerationRequest, GenerationResult, StepTrace};
use crate::error::{Error, Result};
use crate::syndata::{ChannelMap, MotionSequence};

/// Column names following the renderer's channel groups.
pub fn channel_names(dim: usize) -> Result<Vec<String>> {
    let map = ChannelMap::for_dim(dim)?;
    let mut names = Vec::with_capacity(dim);
    for (label, r) in [
        ("gait", map.gait),
        ("direction", map.direction),
        ("speed", map.speed),
        ("posture", map.posture),
        ("free", map.free),
    ] {
        names.extend(r.enumerate().map(|(i, _)| format!("{label}_{i}")));
    }
    Ok(names)
}

pub fn write_motion_csv(motion: &MotionSequence, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let mut header = vec!["frame".to_string()];
    header.extend(channel_names(motion.dim())?);
    w.write_record(&header)?;
    for t in 0..motion.len() {
        let mut rec = vec![t.to_string()];
        rec.extend(motion.frame(t).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationSidecar {
    pub caption: String,
    pub seed: u64,
    pub w: f64,
    pub decode_steps: usize,
    pub frames: usize,
    pub tokens: usize,
    /// `tokens x layers` code indices.
    pub codes: Vec<Vec<usize>>,
    pub trace: Vec<StepTrace>,
}

/// Write `<stem>.csv` and `<stem>.json` into `dir`; returns both paths.
pub fn export_generation(
    dir: &Path,
    stem: &str,
    request: &GenerationRequest,
    result: &GenerationResult,
) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_path = dir.join(format!("{stem}.csv"));
    write_motion_csv(&result.motion, &csv_path)?;
    let side = GenerationSidecar {
        caption: request.caption.text(),
        seed: request.seed,
        w: request.w,
        decode_steps: request.decode_steps,
        frames: result.motion.len(),
        tokens: result.codes.len(),
        codes: result.codes.indices.clone(),
        trace: result.trace.clone(),
    };
    let json_path = dir.join(format!("{stem}.json"));
    std::fs::write(&json_path, serde_json::to_vec_pretty(&side)?).map_err(|e| Error::io(&json_path, e))?;
    Ok((csv_path, json_path))
}
