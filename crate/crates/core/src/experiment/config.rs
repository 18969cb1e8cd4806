//! Experiment configuration: one TOML file with a section per stage.
//!
//! ```toml
//! seed = 7
//! preset = "plus_ns"
//!
//! [corpus]
//! n_samples = 2000
//!
//! [rvq]
//! epochs = 200
//!
//! [generation]
//! w = 3.0
//! ```
//!
//! Omitted keys take their defaults. A stage `seed` of 0 is replaced by a
//! seed derived from the top-level `seed`. The preset owns the quantizer
//! layer count, the variational switch and the noise probability; setting
//! those keys to anything else is a configuration error.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evalsuite::{EvalSettings, ExtractorConfig};
use crate::generator::{DEFAULT_DECODE_STEPS, DEFAULT_GUIDANCE};
use crate::predictor::PredictorConfig;
use crate::rng::labeled_seed;
use crate::rvq::RvqConfig;
use crate::syndata::CorpusSpec;

/// Noise-conditioning probability used by [`Preset::PlusNs`].
pub const PLUS_NS_P_NOISE: f64 = 0.1;

/// Ablation ladder: quantizer depth, variational latent, noise conditioning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    BaselineVq,
    BaselineRvq,
    PlusVp,
    PlusNs,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::BaselineVq, Preset::BaselineRvq, Preset::PlusVp, Preset::PlusNs];

    pub fn name(self) -> &'static str {
        match self {
            Preset::BaselineVq => "baseline_vq",
            Preset::BaselineRvq => "baseline_rvq",
            Preset::PlusVp => "plus_vp",
            Preset::PlusNs => "plus_ns",
        }
    }

    /// Row label in the ablation table.
    pub fn label(self) -> &'static str {
        match self {
            Preset::BaselineVq => "Baseline (VQ)",
            Preset::BaselineRvq => "Baseline (RVQ)",
            Preset::PlusVp => "+ VP",
            Preset::PlusNs => "+ NS",
        }
    }

    /// `(quantizer layers, variational, p_noise)`.
    pub fn axes(self) -> (usize, bool, f64) {
        match self {
            Preset::BaselineVq => (1, false, 0.0),
            Preset::BaselineRvq => (3, false, 0.0),
            Preset::PlusVp => (3, true, 0.0),
            Preset::PlusNs => (3, true, PLUS_NS_P_NOISE),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Preset::ALL.iter().map(|p| p.name()).collect();
            Error::Config(format!("unknown preset `{s}` (expected one of {})", names.join(", ")))
        })
    }
}

/// Parse a comma-separated preset list.
pub fn parse_presets(list: &str) -> Result<Vec<Preset>> {
    let out: Vec<Preset> = list.split(',').map(|s| s.trim().parse()).collect::<Result<_>>()?;
    if out.is_empty() {
        return Err(Error::Config("empty preset list".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationDefaults {
    /// Guidance weight.
    pub w: f64,
    pub decode_steps: usize,
}

impl Default for GenerationDefaults {
    fn default() -> Self {
        GenerationDefaults {
            w: DEFAULT_GUIDANCE,
            decode_steps: DEFAULT_DECODE_STEPS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub repeats: usize,
    /// R-Precision pool (one match plus `pool_size - 1` mismatches).
    pub pool_size: usize,
    pub mm_captions: usize,
    /// Cap on held-out samples per repeat; 0 means all.
    pub max_samples: usize,
    pub batch_size: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        let e = EvalSettings::default();
        EvalSection {
            repeats: e.repeats,
            pool_size: e.pool_size,
            mm_captions: e.mm_captions,
            max_samples: e.max_samples,
            batch_size: e.batch_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub preset: Preset,
    pub corpus: CorpusSpec,
    pub rvq: RvqConfig,
    pub predictor: PredictorConfig,
    pub extractor: ExtractorConfig,
    pub generation: GenerationDefaults,
    pub eval: EvalSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let preset = Preset::PlusNs;
        let (layers, variational, p_noise) = preset.axes();
        ExperimentConfig {
            seed: 0,
            preset,
            corpus: CorpusSpec::default(),
            rvq: RvqConfig {
                num_layers: layers,
                ..Default::default()
            },
            predictor: PredictorConfig {
                variational,
                p_noise,
                ..Default::default()
            },
            extractor: ExtractorConfig::default(),
            generation: GenerationDefaults::default(),
            eval: EvalSection::default(),
        }
    }
}

// Seeds stay within TOML's signed integer range.
fn stage_seed(global: u64, label: &str) -> u64 {
    labeled_seed(global, label) & (i64::MAX as u64)
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Apply `section.key=value` overrides. Values are parsed as TOML
    /// literals, falling back to a bare string.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, sets: &[S]) -> Result<()> {
        if sets.is_empty() {
            return Ok(());
        }
        let mut root = toml::Table::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        for set in sets {
            let set = set.as_ref();
            let (key, raw) = set
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{set}` is not key=value")))?;
            let value = toml::from_str::<toml::Table>(&format!("v = {}", raw.trim()))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
            let path: Vec<&str> = key.trim().split('.').collect();
            let (last, parents) = path.split_last().expect("split yields one item");
            let mut table = &mut root;
            for p in parents {
                table = table
                    .get_mut(*p)
                    .and_then(|v| v.as_table_mut())
                    .ok_or_else(|| Error::Config(format!("unknown config section `{p}` in `{key}`")))?;
            }
            if !table.contains_key(*last) {
                return Err(Error::Config(format!("unknown config key `{key}`")));
            }
            table.insert(last.to_string(), value);
        }
        *self = root.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Ok(())
    }

    /// Fill derived seeds, then validate.
    pub fn resolve(mut self) -> Result<Self> {
        let g = self.seed;
        if self.corpus.seed == 0 {
            self.corpus.seed = stage_seed(g, "corpus");
        }
        if self.rvq.seed == 0 {
            self.rvq.seed = stage_seed(g, "rvq");
        }
        if self.predictor.seed == 0 {
            self.predictor.seed = stage_seed(g, "predictor");
        }
        if self.extractor.seed == 0 {
            self.extractor.seed = stage_seed(g, "extractor");
        }
        self.validate()?;
        Ok(self)
    }

    /// The same experiment under another preset, with its axes applied.
    pub fn with_preset(&self, preset: Preset) -> Result<Self> {
        let mut c = self.clone();
        let (layers, variational, p_noise) = preset.axes();
        c.preset = preset;
        c.rvq.num_layers = layers;
        c.predictor.variational = variational;
        c.predictor.p_noise = p_noise;
        c.resolve()
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.rvq.validate()?;
        self.predictor.validate()?;
        self.extractor.validate()?;
        let (layers, variational, p_noise) = self.preset.axes();
        if self.rvq.num_layers != layers || self.predictor.variational != variational || self.predictor.p_noise != p_noise {
            return Err(Error::Config(format!(
                "preset {} requires rvq.num_layers = {layers}, predictor.variational = {variational}, \
                 predictor.p_noise = {p_noise}; found {}, {}, {}",
                self.preset, self.rvq.num_layers, self.predictor.variational, self.predictor.p_noise
            )));
        }
        if self.rvq.crop_frames > self.corpus.length_range.0 {
            log::debug!("rvq.crop_frames exceeds the shortest motion; crops shrink to fit");
        }
        self.eval_settings().validate()
    }

    pub fn eval_settings(&self) -> EvalSettings {
        EvalSettings {
            repeats: self.eval.repeats,
            pool_size: self.eval.pool_size,
            w: self.generation.w,
            decode_steps: self.generation.decode_steps,
            mm_captions: self.eval.mm_captions,
            max_samples: self.eval.max_samples,
            batch_size: self.eval.batch_size,
            seed: stage_seed(self.seed, "eval"),
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(serde_json::to_vec(self)?)))
    }
}
