use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::extractor::EvalExtractor;
use super::metrics::{fid, mean_ci, mm_dist, multimodality, r_precision, MM_GENERATIONS};
use crate::error::{Error, Result};
use crate::generator::{GenerationRequest, Generator, LengthMode};
use crate::rng::{derive_seed, labeled_seed, rng_from};
use crate::syndata::{CaptionTokens, Dataset, MotionSequence, Sample};

pub const METRICS: [&str; 6] = ["top1", "top2", "top3", "fid", "mm_dist", "multimodality"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub repeats: usize,
    pub pool_size: usize,
    pub w: f64,
    pub decode_steps: usize,
    /// Captions used for MultiModality (30 generations each).
    pub mm_captions: usize,
    /// Cap on held-out samples per repeat; 0 means the whole test split.
    pub max_samples: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            repeats: 20,
            pool_size: 32,
            w: crate::generator::DEFAULT_GUIDANCE,
            decode_steps: crate::generator::DEFAULT_DECODE_STEPS,
            mm_captions: 10,
            max_samples: 0,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl EvalSettings {
    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 || self.mm_captions == 0 || self.batch_size == 0 || self.decode_steps == 0 {
            return Err(Error::Config("eval repeats, mm_captions, batch_size and decode_steps must be positive".into()));
        }
        if !(self.w >= 0.0) {
            return Err(Error::Config(format!("eval.w {} must be non-negative", self.w)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// 95% confidence half-width.
    pub ci95: f64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metrics: BTreeMap<String, MetricSummary>,
    pub repeats: usize,
    pub single_repeat: bool,
    pub w: f64,
    /// Hash of the settings and the evaluated artifacts.
    pub fingerprint: String,
    /// Metrics of the held-out real motions against their own captions.
    pub real: BTreeMap<String, f64>,
}

impl EvalReport {
    pub fn get(&self, metric: &str) -> Option<&MetricSummary> {
        self.metrics.get(metric)
    }

    pub fn mean(&self, metric: &str) -> f64 {
        self.metrics.get(metric).map_or(f64::NAN, |m| m.mean)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

pub fn report_fingerprint(settings: &EvalSettings, artifacts: &str) -> Result<String> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(settings)?);
    h.update(artifacts.as_bytes());
    Ok(hex::encode(h.finalize()))
}

fn eval_samples<'a>(dataset: &'a Dataset, settings: &EvalSettings) -> Vec<&'a Sample> {
    let test: Vec<&Sample> = dataset.test().collect();
    if settings.max_samples > 0 && test.len() > settings.max_samples {
        test[..settings.max_samples].to_vec()
    } else {
        test
    }
}

/// The first `n` held-out samples with pairwise distinct captions.
fn mm_samples<'a>(samples: &[&'a Sample], n: usize) -> Vec<&'a Sample> {
    let mut out: Vec<&Sample> = Vec::new();
    for s in samples {
        if out.len() == n {
            break;
        }
        if out.iter().all(|o| o.caption.tokens != s.caption.tokens) {
            out.push(s);
        }
    }
    out
}

fn generate_motions(gen: &Generator, requests: &[GenerationRequest], batch: usize) -> Result<Vec<MotionSequence>> {
    let mut out = Vec::with_capacity(requests.len());
    for chunk in requests.chunks(batch) {
        out.extend(gen.generate_batch(chunk)?.into_iter().map(|r| r.motion));
    }
    Ok(out)
}

/// Generate for every held-out caption (at its ground-truth length) in each
/// repeat, and score all metrics.
pub fn evaluate(
    gen: &Generator,
    extractor: &EvalExtractor,
    dataset: &Dataset,
    settings: &EvalSettings,
    artifacts: &str,
) -> Result<EvalReport> {
    settings.validate()?;
    let samples = eval_samples(dataset, settings);
    let mm = mm_samples(&samples, settings.mm_captions);
    if mm.len() < settings.mm_captions {
        return Err(Error::Argument(format!(
            "only {} distinct held-out captions for {} MultiModality captions",
            mm.len(),
            settings.mm_captions
        )));
    }
    let captions: Vec<&CaptionTokens> = samples.iter().map(|s| &s.caption).collect();
    let text_feats = extractor.embed_texts(&captions)?;
    let real_motions: Vec<&MotionSequence> = samples.iter().map(|s| &s.motion).collect();
    let real_feats = extractor.embed_motions(&real_motions)?;

    let mut real = BTreeMap::new();
    {
        let mut rng = rng_from(labeled_seed(settings.seed, "real-rprec"));
        let r = r_precision(&real_feats, &text_feats, &captions, settings.pool_size, &mut rng)?;
        real.insert("top1".to_string(), r[0]);
        real.insert("top2".to_string(), r[1]);
        real.insert("top3".to_string(), r[2]);
        real.insert("mm_dist".to_string(), mm_dist(&text_feats, &real_feats)?);
    }

    let mut values: BTreeMap<&str, Vec<f64>> = METRICS.iter().map(|m| (*m, Vec::new())).collect();
    for rep in 0..settings.repeats {
        let rep_seed = derive_seed(labeled_seed(settings.seed, "eval-repeat"), rep as u64);
        let requests: Vec<GenerationRequest> = samples
            .iter()
            .enumerate()
            .map(|(i, s)| GenerationRequest {
                caption: s.caption.clone(),
                w: settings.w,
                length: LengthMode::Frames(s.motion.len()),
                decode_steps: settings.decode_steps,
                seed: derive_seed(rep_seed, i as u64),
            })
            .collect();
        let motions = generate_motions(gen, &requests, settings.batch_size)?;
        let feats = extractor.embed_motions(&motions.iter().collect::<Vec<_>>())?;
        let mut rng = rng_from(derive_seed(rep_seed, u64::MAX));
        let r = r_precision(&feats, &text_feats, &captions, settings.pool_size, &mut rng)?;
        values.get_mut("top1").unwrap().push(r[0]);
        values.get_mut("top2").unwrap().push(r[1]);
        values.get_mut("top3").unwrap().push(r[2]);
        values.get_mut("fid").unwrap().push(fid(&real_feats, &feats)?);
        values.get_mut("mm_dist").unwrap().push(mm_dist(&text_feats, &feats)?);

        let mm_seed = derive_seed(rep_seed, u64::MAX - 1);
        let mm_requests: Vec<GenerationRequest> = mm
            .iter()
            .enumerate()
            .flat_map(|(c, s)| {
                (0..MM_GENERATIONS).map(move |g| GenerationRequest {
                    caption: s.caption.clone(),
                    w: settings.w,
                    length: LengthMode::Frames(s.motion.len()),
                    decode_steps: settings.decode_steps,
                    seed: derive_seed(mm_seed, (c * MM_GENERATIONS + g) as u64),
                })
            })
            .collect();
        let mm_motions = generate_motions(gen, &mm_requests, settings.batch_size)?;
        let mm_feats = extractor.embed_motions(&mm_motions.iter().collect::<Vec<_>>())?;
        let grouped: Vec<Vec<Vec<f32>>> = mm_feats.chunks(MM_GENERATIONS).map(|c| c.to_vec()).collect();
        values.get_mut("multimodality").unwrap().push(multimodality(&grouped, mm_seed)?);
    }

    let metrics = values
        .into_iter()
        .map(|(k, v)| {
            let (mean, ci95) = mean_ci(&v);
            (k.to_string(), MetricSummary { mean, ci95, values: v })
        })
        .collect();
    Ok(EvalReport {
        metrics,
        repeats: settings.repeats,
        single_repeat: settings.repeats == 1,
        w: settings.w,
        fingerprint: report_fingerprint(settings, artifacts)?,
        real,
    })
}

/// Evaluate at each guidance weight.
pub fn sweep_w(
    gen: &Generator,
    extractor: &EvalExtractor,
    dataset: &Dataset,
    settings: &EvalSettings,
    w_values: &[f64],
    artifacts: &str,
) -> Result<Vec<EvalReport>> {
    if w_values.is_empty() {
        return Err(Error::Argument("sweep needs at least one w value".into()));
    }
    w_values
        .iter()
        .map(|&w| {
            let s = EvalSettings { w, ..settings.clone() };
            evaluate(gen, extractor, dataset, &s, artifacts)
        })
        .collect()
}

/// One row per report: `w` then `<metric>,<metric>_ci` for every metric.
pub fn write_sweep_csv(path: &Path, reports: &[EvalReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let mut header = vec!["w".to_string()];
    for m in METRICS {
        header.push(m.to_string());
        header.push(format!("{m}_ci"));
    }
    w.write_record(&header)?;
    for r in reports {
        let mut row = vec![r.w.to_string()];
        for m in METRICS {
            let s = r.get(m).ok_or_else(|| Error::Argument(format!("report lacks {m}")))?;
            row.push(format!("{:.6}", s.mean));
            row.push(format!("{:.6}", s.ci95));
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fingerprint_tracks_settings() {
        let a = EvalSettings::default();
        let b = EvalSettings { w: 1.0, ..a.clone() };
        assert_ne!(report_fingerprint(&a, "x").unwrap(), report_fingerprint(&b, "x").unwrap());
        assert_eq!(report_fingerprint(&a, "x").unwrap(), report_fingerprint(&a, "x").unwrap());
        assert_ne!(report_fingerprint(&a, "x").unwrap(), report_fingerprint(&a, "y").unwrap());
    }
}
