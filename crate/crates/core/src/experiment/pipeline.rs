//! Pipeline stages behind the command-line subcommands.
//!
//! Each stage reads its inputs from a [`RunLayout`], refuses to replace
//! existing outputs unless `force` is set, and records what it wrote in
//! `run.json`. A stage whose input was produced under a different
//! configuration fails with a prerequisite error instead of silently mixing
//! artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Preset};
use super::run::{claim, fingerprint_files, record_command, RunLayout};
use crate::error::{Error, Result};
use crate::evalsuite::{
    evaluate, matched_pair_accuracy, sweep_w, train_eval_extractor, write_sweep_csv, EvalExtractor, EvalReport,
    METRICS,
};
use crate::generator::{export_generation, GenerationRequest, Generator, LengthMode};
use crate::predictor::{heldout_nll, train_predictor, HeldOutNll, PredictorCheckpoint};
use crate::rng::{derive_seed, labeled_seed};
use crate::rvq::{reconstruction_report, train_rvq, MotionCodec, ReconstructionReport, RvqCheckpoint, RvqConfig};
use crate::syndata::format::{CAPTIONS_FILE, DATA_FILE, MANIFEST_FILE};
use crate::syndata::{generate_corpus, read_dataset, write_dataset, CaptionTokens, CorpusSpec, Dataset};

pub const SPEC_FILE: &str = "spec.json";
pub const RECONSTRUCTION_FILE: &str = "reconstruction.json";
pub const HELDOUT_FILE: &str = "heldout.json";
pub const RETRIEVAL_FILE: &str = "retrieval.json";
const DATA_FILES: [&str; 4] = [MANIFEST_FILE, DATA_FILE, CAPTIONS_FILE, SPEC_FILE];
const CHECKPOINT_CONFIG: &str = "config.json";

fn missing(what: &str, path: &Path, command: &str) -> Error {
    Error::Prerequisite(format!("{what} not found at {} (run `{command}` first)", path.display()))
}

fn stale(what: &str, path: &Path, command: &str) -> Error {
    Error::Prerequisite(format!(
        "{what} at {} was produced under a different configuration (rerun `{command} --force`)",
        path.display()
    ))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, serde_json::to_vec_pretty(value)?).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
}

// ---------------------------------------------------------------- data

pub fn gen_data(cfg: &ExperimentConfig, layout: &RunLayout, force: bool) -> Result<(Dataset, String)> {
    let dir = layout.data();
    claim(&dir, force)?;
    let ds = generate_corpus(&cfg.corpus)?;
    write_dataset(&ds, &dir)?;
    write_json(&dir.join(SPEC_FILE), &cfg.corpus)?;
    let fp = fingerprint_files(&dir, &DATA_FILES)?;
    record_command(layout, cfg, "gen-data", &[(dir, fp.clone())])?;
    Ok((ds, fp))
}

pub fn load_data(cfg: &ExperimentConfig, layout: &RunLayout) -> Result<(Dataset, String)> {
    let dir = layout.data();
    if !dir.join(MANIFEST_FILE).exists() {
        return Err(missing("dataset", &dir, "gen-data"));
    }
    let spec: CorpusSpec = read_json(&dir.join(SPEC_FILE))?;
    if spec != cfg.corpus {
        return Err(stale("dataset", &dir, "gen-data"));
    }
    let ds = read_dataset(&dir)?;
    Ok((ds, fingerprint_files(&dir, &DATA_FILES)?))
}

/// Load the dataset, generating it first if the run has none.
pub fn ensure_data(cfg: &ExperimentConfig, layout: &RunLayout) -> Result<(Dataset, String)> {
    if layout.data().join(MANIFEST_FILE).exists() {
        load_data(cfg, layout)
    } else {
        gen_data(cfg, layout, false)
    }
}

// ---------------------------------------------------------------- codec

fn fit_codec(ds: &Dataset, rvq: &RvqConfig, dir: &Path) -> Result<(MotionCodec, String, ReconstructionReport)> {
    let t0 = Instant::now();
    let ck = train_rvq(ds, rvq)?;
    let fp = ck.save(dir, false)?;
    let report = reconstruction_report(&ck.codec, ds)?;
    write_json(&dir.join(RECONSTRUCTION_FILE), &report)?;
    log::info!(
        "codec trained in {:.1?}: held-out L1/std {:.4}",
        t0.elapsed(),
        report.relative_l1
    );
    let RvqCheckpoint { codec, .. } = ck;
    Ok((codec, fp, report))
}

pub fn train_rvq_stage(
    cfg: &ExperimentConfig,
    layout: &RunLayout,
    force: bool,
) -> Result<(MotionCodec, String, ReconstructionReport)> {
    let (ds, _) = load_data(cfg, layout)?;
    let dir = layout.rvq();
    claim(&dir, force)?;
    let out = fit_codec(&ds, &cfg.rvq, &dir)?;
    record_command(layout, cfg, "train-rvq", &[(dir, out.1.clone())])?;
    Ok(out)
}

/// Whether `codec` was trained on `ds`: same feature width and the same
/// training-split normalisation.
fn fitted_to(codec: &MotionCodec, ds: &Dataset) -> bool {
    let (mean, std) = Dataset::channel_stats(ds.train(), ds.feature_dim);
    let std: Vec<f32> = std.into_iter().map(|s| s.max(1e-3)).collect();
    codec.config.feature_dim == ds.feature_dim && codec.mean == mean && codec.std == std
}

pub fn load_codec(cfg: &ExperimentConfig, layout: &RunLayout) -> Result<(MotionCodec, String)> {
    let dir = layout.rvq();
    if !dir.join(CHECKPOINT_CONFIG).exists() {
        return Err(missing("codec checkpoint", &dir, "train-rvq"));
    }
    let (codec, fp) = MotionCodec::load(&dir)?;
    if codec.config.rvq != cfg.rvq || codec.config.feature_dim != cfg.corpus.feature_dim {
        return Err(stale("codec checkpoint", &dir, "train-rvq"));
    }
    Ok((codec, fp))
}

// ---------------------------------------------------------------- predictor

fn fit_predictor(
    ds: &Dataset,
    codec: &MotionCodec,
    codec_fp: &str,
    cfg: &ExperimentConfig,
    dir: &Path,
) -> Result<(PredictorCheckpoint, String, HeldOutNll)> {
    let t0 = Instant::now();
    let ck = train_predictor(ds, codec, codec_fp, &cfg.predictor)?;
    let fp = ck.save(dir, false)?;
    let nll = heldout_nll(&ck.model, codec, ds, labeled_seed(cfg.predictor.seed, "heldout"))?;
    write_json(&dir.join(HELDOUT_FILE), &nll)?;
    log::info!(
        "predictor trained in {:.1?}: held-out masked NLL {:.3} (uniform {:.3})",
        t0.elapsed(),
        nll.masked_nll,
        nll.uniform
    );
    Ok((ck, fp, nll))
}

pub fn train_predictor_stage(
    cfg: &ExperimentConfig,
    layout: &RunLayout,
    force: bool,
) -> Result<(PredictorCheckpoint, String, HeldOutNll)> {
    let (ds, _) = load_data(cfg, layout)?;
    let (codec, codec_fp) = load_codec(cfg, layout)?;
    let dir = layout.predictor();
    claim(&dir, force)?;
    let out = fit_predictor(&ds, &codec, &codec_fp, cfg, &dir)?;
    record_command(layout, cfg, "train-predictor", &[(dir, out.1.clone())])?;
    Ok(out)
}

pub fn load_predictor(
    cfg: &ExperimentConfig,
    layout: &RunLayout,
    codec: &MotionCodec,
    codec_fp: &str,
) -> Result<(PredictorCheckpoint, String)> {
    let dir = layout.predictor();
    if !dir.join(CHECKPOINT_CONFIG).exists() {
        return Err(missing("predictor checkpoint", &dir, "train-predictor"));
    }
    let (ck, fp) = PredictorCheckpoint::load(&dir, codec, codec_fp)?;
    if ck.model.config != cfg.predictor {
        return Err(stale("predictor checkpoint", &dir, "train-predictor"));
    }
    Ok((ck, fp))
}

// ---------------------------------------------------------------- extractor

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetrievalCheck {
    /// Held-out triples where the true caption is closer than another.
    pub matched_pair_accuracy: f64,
    pub curve: Vec<f32>,
}

fn fit_extractor(ds: &Dataset, cfg: &ExperimentConfig, dir: &Path) -> Result<(EvalExtractor, String, RetrievalCheck)> {
    let t0 = Instant::now();
    let (ex, curve) = train_eval_extractor(ds, &cfg.extractor)?;
    let fp = ex.save(dir, false)?;
    let check = RetrievalCheck {
        matched_pair_accuracy: matched_pair_accuracy(&ex, ds, labeled_seed(cfg.extractor.seed, "check"))?,
        curve,
    };
    write_json(&dir.join(RETRIEVAL_FILE), &check)?;
    log::info!(
        "extractor trained in {:.1?}: matched-pair accuracy {:.3}",
        t0.elapsed(),
        check.matched_pair_accuracy
    );
    Ok((ex, fp, check))
}

pub fn train_eval_stage(
    cfg: &ExperimentConfig,
    layout: &RunLayout,
    force: bool,
) -> Result<(EvalExtractor, String, RetrievalCheck)> {
    let (ds, _) = load_data(cfg, layout)?;
    let dir = layout.extractor();
    claim(&dir, force)?;
    let out = fit_extractor(&ds, cfg, &dir)?;
    record_command(layout, cfg, "train-eval", &[(dir, out.1.clone())])?;
    Ok(out)
}

pub fn load_extractor(cfg: &ExperimentConfig, layout: &RunLayout) -> Result<(EvalExtractor, String)> {
    let dir = layout.extractor();
    if !dir.join(CHECKPOINT_CONFIG).exists() {
        return Err(missing("evaluation extractor", &dir, "train-eval"));
    }
    let (ex, fp) = EvalExtractor::load(&dir)?;
    if ex.config != cfg.extractor {
        return Err(stale("evaluation extractor", &dir, "train-eval"));
    }
    Ok((ex, fp))
}

// ---------------------------------------------------------------- inference

/// Everything needed to generate and evaluate, loaded from one layout.
pub struct TrainedModels {
    pub dataset: Dataset,
    pub codec: MotionCodec,
    pub predictor: PredictorCheckpoint,
    pub extractor: EvalExtractor,
    /// `data:codec:predictor:extractor` fingerprints.
    pub fingerprints: String,
}

impl TrainedModels {
    pub fn load(cfg: &ExperimentConfig, layout: &RunLayout) -> Result<Self> {
        let (dataset, data_fp) = load_data(cfg, layout)?;
        let (codec, codec_fp) = load_codec(cfg, layout)?;
        let (predictor, pred_fp) = load_predictor(cfg, layout, &codec, &codec_fp)?;
        let (extractor, ex_fp) = load_extractor(cfg, layout)?;
        Ok(TrainedModels {
            dataset,
            codec,
            predictor,
            extractor,
            fingerprints: format!("{data_fp}:{codec_fp}:{pred_fp}:{ex_fp}"),
        })
    }

    pub fn generator(&self) -> Generator<'_> {
        Generator::new(&self.codec, &self.predictor, self.dataset.length_range)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateOptions {
    pub caption: String,
    pub w: Option<f64>,
    pub length: LengthMode,
    pub decode_steps: Option<usize>,
    pub seed: u64,
    pub count: usize,
}

fn slug(text: &str) -> String {
    let s: String = text
        .split_whitespace()
        .map(|w| w.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_lowercase())
        .filter(|w| !w.is_empty())
        .collect::<Vec<_>>()
        .join("-");
    let s: String = s.chars().take(40).collect();
    if s.is_empty() {
        "empty".into()
    } else {
        s
    }
}

/// Generate `count` motions for one caption. Item `i` uses seed
/// `derive_seed(seed, i)`. Returns the written CSV paths.
pub fn generate_stage(
    cfg: &ExperimentConfig,
    layout: &RunLayout,
    opts: &GenerateOptions,
    force: bool,
) -> Result<Vec<PathBuf>> {
    if opts.count == 0 {
        return Err(Error::Argument("--count must be at least 1".into()));
    }
    let caption = CaptionTokens::parse(&opts.caption)?;
    let (codec, codec_fp) = load_codec(cfg, layout)?;
    let (predictor, pred_fp) = load_predictor(cfg, layout, &codec, &codec_fp)?;
    let gen = Generator::new(&codec, &predictor, cfg.corpus.length_range);
    let requests: Vec<GenerationRequest> = (0..opts.count)
        .map(|i| GenerationRequest {
            caption: caption.clone(),
            w: opts.w.unwrap_or(cfg.generation.w),
            length: opts.length,
            decode_steps: opts.decode_steps.unwrap_or(cfg.generation.decode_steps),
            seed: derive_seed(opts.seed, i as u64),
        })
        .collect();
    for r in &requests {
        r.validate()?;
    }
    let dir = layout.generations();
    let stem = format!("{}_s{}", slug(&opts.caption), opts.seed);
    let stems: Vec<String> = (0..opts.count).map(|i| format!("{stem}_{i:03}")).collect();
    for s in &stems {
        for ext in ["csv", "json"] {
            claim(&dir.join(format!("{s}.{ext}")), force)?;
        }
    }
    let results = gen.generate_batch(&requests)?;
    let mut written = Vec::with_capacity(results.len());
    let mut artifacts = Vec::new();
    for ((req, res), s) in requests.iter().zip(&results).zip(&stems) {
        let (csv, _) = export_generation(&dir, s, req, res)?;
        artifacts.push((csv.clone(), fingerprint_files(&dir, &[&format!("{s}.csv"), &format!("{s}.json")])?));
        written.push(csv);
    }
    log::info!("generated {} motion(s) with predictor {}", written.len(), &pred_fp[..12]);
    record_command(layout, cfg, "generate", &artifacts)?;
    Ok(written)
}

// ---------------------------------------------------------------- evaluation

pub fn evaluate_stage(cfg: &ExperimentConfig, layout: &RunLayout, force: bool) -> Result<EvalReport> {
    let out = layout.reports().join("eval.json");
    claim(&out, force)?;
    let models = TrainedModels::load(cfg, layout)?;
    let report = evaluate(
        &models.generator(),
        &models.extractor,
        &models.dataset,
        &cfg.eval_settings(),
        &models.fingerprints,
    )?;
    write_json(&out, &report)?;
    record_command(layout, cfg, "evaluate", &[(out, report.fingerprint.clone())])?;
    Ok(report)
}

pub fn sweep_stage(cfg: &ExperimentConfig, layout: &RunLayout, w_values: &[f64], force: bool) -> Result<Vec<EvalReport>> {
    let csv = layout.reports().join("sweep.csv");
    let json = layout.reports().join("sweep.json");
    claim(&csv, force)?;
    claim(&json, force)?;
    let models = TrainedModels::load(cfg, layout)?;
    let reports = sweep_w(
        &models.generator(),
        &models.extractor,
        &models.dataset,
        &cfg.eval_settings(),
        w_values,
        &models.fingerprints,
    )?;
    write_json(&json, &reports)?;
    write_sweep_csv(&csv, &reports)?;
    let fp = fingerprint_files(&layout.reports(), &["sweep.csv", "sweep.json"])?;
    record_command(layout, cfg, "sweep", &[(csv, fp)])?;
    Ok(reports)
}

// ---------------------------------------------------------------- ablation

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub preset: Preset,
    pub label: String,
    pub report: EvalReport,
    /// Held-out codec L1 over channel std.
    pub codec_relative_l1: f32,
    pub heldout: HeldOutNll,
    /// Wall-clock seconds; not written to disk.
    #[serde(skip)]
    pub train_seconds: f64,
    #[serde(skip)]
    pub eval_seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

const TABLE_HEADERS: [&str; 6] = ["Top-1", "Top-2", "Top-3", "FID", "MM-Dist", "MultiModality"];

impl AblationTable {
    pub fn row(&self, preset: Preset) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.preset == preset)
    }

    pub fn to_markdown(&self) -> String {
        let mut s = format!("| Method | {} |\n", TABLE_HEADERS.join(" | "));
        s.push_str(&format!("|---|{}\n", "---|".repeat(TABLE_HEADERS.len())));
        for r in &self.rows {
            let cells: Vec<String> = METRICS
                .iter()
                .map(|m| {
                    let v = r.report.get(m).expect("every metric is reported");
                    format!("{:.3} ± {:.3}", v.mean, v.ci95)
                })
                .collect();
            s.push_str(&format!("| {} | {} |\n", r.label, cells.join(" | ")));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
        let mut header = vec!["preset".to_string(), "label".to_string()];
        for m in METRICS {
            header.push(m.to_string());
            header.push(format!("{m}_ci"));
        }
        w.write_record(&header)?;
        for r in &self.rows {
            let mut row = vec![r.preset.name().to_string(), r.label.clone()];
            for m in METRICS {
                let v = r.report.get(m).expect("every metric is reported");
                row.push(format!("{:.6}", v.mean));
                row.push(format!("{:.6}", v.ci95));
            }
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn copy_flat_dir(from: &Path, to: &Path) -> Result<()> {
    fs::create_dir_all(to).map_err(|e| Error::io(to, e))?;
    for entry in fs::read_dir(from).map_err(|e| Error::io(from, e))? {
        let entry = entry.map_err(|e| Error::io(from, e))?;
        let dst = to.join(entry.file_name());
        fs::copy(entry.path(), &dst).map_err(|e| Error::io(&dst, e))?;
    }
    Ok(())
}

/// Train and evaluate each preset from the shared seed. Data and the
/// extractor are reused when present (and created otherwise); presets with
/// identical codec settings share one trained codec.
pub fn ablate_stage(cfg: &ExperimentConfig, layout: &RunLayout, presets: &[Preset], force: bool) -> Result<AblationTable> {
    let mut presets = presets.to_vec();
    presets.dedup();
    if presets.is_empty() {
        return Err(Error::Argument("ablate needs at least one preset".into()));
    }
    let report_dir = layout.root_reports();
    let outputs = ["ablation.csv", "ablation.md", "ablation.json"].map(|f| report_dir.join(f));
    for p in &outputs {
        claim(p, force)?;
    }
    for &p in &presets {
        claim(&layout.for_preset(p).models, force)?;
    }

    let (ds, data_fp) = ensure_data(cfg, layout)?;
    let (extractor, ex_fp) = if layout.extractor().join(CHECKPOINT_CONFIG).exists() {
        load_extractor(cfg, layout)?
    } else {
        let dir = layout.extractor();
        let (ex, fp, _) = fit_extractor(&ds, cfg, &dir)?;
        record_command(layout, cfg, "train-eval", &[(dir, fp.clone())])?;
        (ex, fp)
    };

    let mut codecs: BTreeMap<String, (PathBuf, f32)> = BTreeMap::new();
    // a codec from `train-rvq` in the run root is reused by presets with the same codec settings
    if layout.rvq().join(CHECKPOINT_CONFIG).exists() {
        let (root, _) = MotionCodec::load(&layout.rvq())?;
        if fitted_to(&root, &ds) {
            let rel = match fs::read(layout.rvq().join(RECONSTRUCTION_FILE)) {
                Ok(b) => serde_json::from_slice::<ReconstructionReport>(&b)
                    .map_err(|e| Error::format(layout.rvq().join(RECONSTRUCTION_FILE), e.to_string()))?
                    .relative_l1,
                Err(_) => reconstruction_report(&root, &ds)?.relative_l1,
            };
            log::info!("reusing codec {}", layout.rvq().display());
            codecs.insert(serde_json::to_string(&root.config.rvq)?, (layout.rvq(), rel));
        }
    }
    let mut rows = Vec::new();
    let mut artifacts = Vec::new();
    for &preset in &presets {
        let sub = cfg.with_preset(preset)?;
        let pl = layout.for_preset(preset);
        let t0 = Instant::now();
        let key = serde_json::to_string(&sub.rvq)?;
        let (codec, codec_fp, rel) = match codecs.get(&key) {
            Some((src, rel)) => {
                copy_flat_dir(src, &pl.rvq())?;
                let (c, fp) = MotionCodec::load(&pl.rvq())?;
                (c, fp, *rel)
            }
            None => {
                let (c, fp, rep) = fit_codec(&ds, &sub.rvq, &pl.rvq())?;
                codecs.insert(key, (pl.rvq(), rep.relative_l1));
                (c, fp, rep.relative_l1)
            }
        };
        let (predictor, pred_fp, heldout) = fit_predictor(&ds, &codec, &codec_fp, &sub, &pl.predictor())?;
        let train_seconds = t0.elapsed().as_secs_f64();
        let t1 = Instant::now();
        let gen = Generator::new(&codec, &predictor, ds.length_range);
        let fps = format!("{data_fp}:{codec_fp}:{pred_fp}:{ex_fp}");
        let report = evaluate(&gen, &extractor, &ds, &sub.eval_settings(), &fps)?;
        let eval_seconds = t1.elapsed().as_secs_f64();
        let out = pl.reports().join("eval.json");
        write_json(&out, &report)?;
        log::info!(
            "{preset}: MultiModality {:.3} ± {:.3}, Top-1 {:.3} (train {train_seconds:.0}s, eval {eval_seconds:.0}s)",
            report.mean("multimodality"),
            report.get("multimodality").map_or(0.0, |m| m.ci95),
            report.mean("top1")
        );
        artifacts.push((pl.rvq(), codec_fp));
        artifacts.push((pl.predictor(), pred_fp));
        artifacts.push((out, report.fingerprint.clone()));
        rows.push(AblationRow {
            preset,
            label: preset.label().to_string(),
            report,
            codec_relative_l1: rel,
            heldout,
            train_seconds,
            eval_seconds,
        });
    }

    let table = AblationTable { rows };
    fs::create_dir_all(&report_dir).map_err(|e| Error::io(&report_dir, e))?;
    table.write_csv(&outputs[0])?;
    fs::write(&outputs[1], table.to_markdown()).map_err(|e| Error::io(&outputs[1], e))?;
    write_json(&outputs[2], &table)?;
    let fp = fingerprint_files(&report_dir, &["ablation.csv", "ablation.md", "ablation.json"])?;
    artifacts.push((outputs[2].clone(), fp));
    record_command(layout, cfg, "ablate", &artifacts)?;
    Ok(table)
}
