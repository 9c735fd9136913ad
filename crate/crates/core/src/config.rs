//! Model, training and sampling configuration with `paper` and `toy` presets.
//!
//! Config files are flat JSON objects. Keys name fields of [`ModelConfig`],
//! [`TrainConfig`] or [`SamplerConfig`] directly (`"d_model": 128`); a key
//! present in several sections (`seed`) sets all of them. Duration-predictor
//! keys carry a `duration.` prefix (`"duration.lr_peak": 1e-3`). The optional
//! `"preset"` key selects the base preset (`toy` by default).

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkdMode {
    None,
    Discrete,
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Paper,
    Toy,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "toy" => Ok(Preset::Toy),
            other => Err(Error::invalid("preset", format!("unknown preset `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// RVQ layers (K).
    pub n_codebooks: usize,
    /// Tokens per codebook (V).
    pub codebook_size: usize,
    /// Phoneme alphabet size (P).
    pub n_phonemes: usize,
    /// Speakers in the corpus (S).
    pub n_speakers: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub skd_mode: SkdMode,
    /// Continuous semantic feature width (D_sem).
    pub semantic_dim: usize,
    /// Discrete semantic codebook size (C).
    pub semantic_vocab: usize,
    pub speaker_dim: usize,
    pub max_frames: usize,
    /// Sum embeddings of external semantic codes onto the audio inputs
    /// (second stage of the two-stage baseline).
    pub semantic_conditioning: bool,
}

impl ModelConfig {
    pub fn toy() -> Self {
        Self {
            n_codebooks: 4,
            codebook_size: 64,
            n_phonemes: 16,
            n_speakers: 8,
            d_model: 128,
            n_layers: 4,
            n_heads: 4,
            d_ff: 256,
            skd_mode: SkdMode::None,
            semantic_dim: 16,
            semantic_vocab: 16,
            speaker_dim: 16,
            max_frames: 2048,
            semantic_conditioning: false,
        }
    }

    pub fn paper() -> Self {
        Self {
            n_codebooks: 9,
            codebook_size: 1024,
            n_phonemes: 40,
            n_speakers: 1151,
            d_model: 1024,
            n_layers: 16,
            n_heads: 16,
            d_ff: 4096,
            skd_mode: SkdMode::None,
            semantic_dim: 768,
            semantic_vocab: 500,
            speaker_dim: 256,
            max_frames: 2048,
            semantic_conditioning: false,
        }
    }

    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Paper => Self::paper(),
            Preset::Toy => Self::toy(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_codebooks", self.n_codebooks),
            ("codebook_size", self.codebook_size),
            ("n_phonemes", self.n_phonemes),
            ("n_speakers", self.n_speakers),
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("speaker_dim", self.speaker_dim),
            ("max_frames", self.max_frames),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid("model config", format!("{name} must be positive")));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::invalid(
                "model config",
                format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads),
            ));
        }
        if self.skd_mode == SkdMode::Discrete && self.semantic_vocab == 0 {
            return Err(Error::invalid("model config", "discrete SKD needs semantic_vocab >= 1"));
        }
        if self.skd_mode == SkdMode::Continuous && self.semantic_dim == 0 {
            return Err(Error::invalid("model config", "continuous SKD needs semantic_dim >= 1"));
        }
        if self.semantic_conditioning && self.semantic_vocab == 0 {
            return Err(Error::invalid("model config", "semantic conditioning needs semantic_vocab >= 1"));
        }
        Ok(())
    }

    /// Width of the SKD head output, if any.
    pub fn skd_width(&self) -> Option<usize> {
        match self.skd_mode {
            SkdMode::None => None,
            SkdMode::Discrete => Some(self.semantic_vocab),
            SkdMode::Continuous => Some(self.semantic_dim),
        }
    }

    /// Trainable parameter count, computed from the shapes alone.
    pub fn param_count(&self) -> usize {
        let d = self.d_model;
        let adaln = 2 * d + 2 * (self.speaker_dim * d + d);
        let block = 2 * adaln + 4 * (d * d + d) + (d * self.d_ff + self.d_ff) + (self.d_ff * d + d);
        let embeddings = (self.n_phonemes + 1) * d + self.n_codebooks * self.codebook_size * d + d;
        let cond = if self.semantic_conditioning { self.semantic_vocab * d } else { 0 };
        let heads = self.n_codebooks * (d * self.codebook_size + self.codebook_size);
        let skd = self.skd_width().map_or(0, |w| d * w + w);
        embeddings + cond + self.n_layers * block + adaln + heads + skd
    }
}

/// Duration predictor: CLS-prefixed phoneme encoder regressing log-seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DurationConfig {
    pub n_phonemes: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
}

impl DurationConfig {
    pub fn toy() -> Self {
        Self {
            n_phonemes: 16,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 128,
        }
    }

    pub fn paper() -> Self {
        Self {
            n_phonemes: 40,
            d_model: 256,
            n_layers: 6,
            n_heads: 16,
            d_ff: 1024,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.n_phonemes, self.d_model, self.n_layers, self.n_heads, self.d_ff].contains(&0) {
            return Err(Error::invalid("duration config", "all sizes must be positive"));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::invalid("duration config", "d_model not divisible by n_heads"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the masked audio cross-entropy.
    pub alpha: f64,
    /// Weight of the semantic distillation loss.
    pub beta: f64,
    pub lr_peak: f64,
    pub lr_final: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub poly_power: f64,
    pub cfg_dropout_p: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub huber_delta: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    /// Equal-size shards per batch; gradients are averaged across shards.
    pub grad_accum_steps: usize,
    pub checkpoint_interval: usize,
    pub log_interval: usize,
}

impl TrainConfig {
    pub fn paper() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.0,
            lr_peak: 1e-4,
            lr_final: 5e-7,
            warmup_steps: 2_000,
            total_steps: 700_000,
            poly_power: 0.9,
            cfg_dropout_p: 0.1,
            batch_size: 64,
            seed: 0,
            huber_delta: 1.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.0,
            grad_accum_steps: 1,
            checkpoint_interval: 10_000,
            log_interval: 100,
        }
    }

    pub fn toy() -> Self {
        Self {
            lr_peak: 1e-3,
            warmup_steps: 200,
            total_steps: 5_000,
            batch_size: 16,
            checkpoint_interval: 500,
            log_interval: 10,
            ..Self::paper()
        }
    }

    pub fn duration_paper() -> Self {
        Self {
            lr_peak: 1e-3,
            total_steps: 20_000,
            ..Self::paper()
        }
    }

    pub fn duration_toy() -> Self {
        Self {
            lr_peak: 1e-3,
            warmup_steps: 100,
            total_steps: 2_000,
            batch_size: 16,
            cfg_dropout_p: 0.0,
            checkpoint_interval: 500,
            log_interval: 10,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |r: &str| Err(Error::invalid("train config", r.to_string()));
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.alpha + self.beta > 0.0) {
            return bad("need alpha >= 0, beta >= 0, alpha + beta > 0");
        }
        if !(0.0..=1.0).contains(&self.cfg_dropout_p) {
            return bad("cfg_dropout_p must lie in [0, 1]");
        }
        if self.warmup_steps >= self.total_steps {
            return bad("warmup_steps must be < total_steps");
        }
        if self.batch_size == 0 || self.grad_accum_steps == 0 || self.batch_size % self.grad_accum_steps != 0 {
            return bad("batch_size must be a positive multiple of grad_accum_steps");
        }
        if !(self.lr_peak > 0.0 && self.lr_final >= 0.0 && self.poly_power > 0.0 && self.huber_delta > 0.0) {
            return bad("lr_peak, poly_power, huber_delta must be positive and lr_final >= 0");
        }
        if self.log_interval == 0 || self.checkpoint_interval == 0 {
            return bad("log_interval and checkpoint_interval must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub n_steps: usize,
    pub noise_var_start: f64,
    pub noise_var_end: f64,
    pub guidance_start: f64,
    pub guidance_end: f64,
    /// Run the unconditional branch and combine with guidance.
    pub use_cfg: bool,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_steps: 20,
            noise_var_start: 3.0,
            noise_var_end: 0.0,
            guidance_start: 3.0,
            guidance_end: 0.75,
            use_cfg: true,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 {
            return Err(Error::invalid("sampler config", "n_steps must be >= 1"));
        }
        if !(self.noise_var_start >= self.noise_var_end && self.noise_var_end >= 0.0) {
            return Err(Error::invalid("sampler config", "need noise_var_start >= noise_var_end >= 0"));
        }
        if self.guidance_start < self.guidance_end {
            return Err(Error::invalid("sampler config", "need guidance_start >= guidance_end"));
        }
        Ok(())
    }
}

/// Which continuous semantic representation the SKD head regresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SemanticTarget {
    /// One fixed encoder layer.
    Layer,
    /// Mean over all encoder layers.
    LayerAverage,
}

/// Training variants of the experiment matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Base,
    Codes,
    Feats,
    Avg,
    /// Two-stage baseline, text to semantic codes.
    StageA,
    /// Two-stage baseline, semantic codes to audio tokens.
    StageB,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Base,
        Variant::Codes,
        Variant::Feats,
        Variant::Avg,
        Variant::StageA,
        Variant::StageB,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::Codes => "codes",
            Variant::Feats => "feats",
            Variant::Avg => "avg",
            Variant::StageA => "stagea",
            Variant::StageB => "stageb",
        }
    }

    pub fn skd_mode(self) -> SkdMode {
        match self {
            Variant::Codes => SkdMode::Discrete,
            Variant::Feats | Variant::Avg => SkdMode::Continuous,
            _ => SkdMode::None,
        }
    }

    pub fn semantic_target(self) -> SemanticTarget {
        match self {
            Variant::Avg => SemanticTarget::LayerAverage,
            _ => SemanticTarget::Layer,
        }
    }

    /// `(alpha, beta)` loss weights.
    pub fn loss_weights(self) -> (f64, f64) {
        match self {
            Variant::Codes => (0.95, 0.05),
            Variant::Feats | Variant::Avg => (0.5, 0.5),
            _ => (1.0, 0.0),
        }
    }

    /// Derives this variant's model and training config from a shared base.
    pub fn configure(self, model: &ModelConfig, train: &TrainConfig) -> (ModelConfig, TrainConfig) {
        let mut model = model.clone();
        let mut train = train.clone();
        model.skd_mode = self.skd_mode();
        model.semantic_conditioning = self == Variant::StageB;
        if self == Variant::StageA {
            model.n_codebooks = 1;
            model.codebook_size = model.semantic_vocab;
        }
        (train.alpha, train.beta) = self.loss_weights();
        (model, train)
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::invalid("variant", format!("unknown variant `{s}`")))
    }
}

/// Everything a run needs, assembled from a preset plus flat overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sampler: SamplerConfig,
    pub duration: DurationConfig,
    pub duration_train: TrainConfig,
}

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Paper => Self {
                model: ModelConfig::paper(),
                train: TrainConfig::paper(),
                sampler: SamplerConfig::default(),
                duration: DurationConfig::paper(),
                duration_train: TrainConfig::duration_paper(),
            },
            Preset::Toy => Self {
                model: ModelConfig::toy(),
                train: TrainConfig::toy(),
                sampler: SamplerConfig::default(),
                duration: DurationConfig::toy(),
                duration_train: TrainConfig::duration_toy(),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.sampler.validate()?;
        self.duration.validate()?;
        self.duration_train.validate()
    }

    pub fn from_flat_json(text: &str) -> Result<Self> {
        let doc: Map<String, Value> = serde_json::from_str(text)?;
        let preset = match doc.get("preset") {
            None => Preset::Toy,
            Some(Value::String(s)) => s.parse()?,
            Some(other) => return Err(Error::invalid("config", format!("preset must be a string, got {other}"))),
        };
        let base = Self::preset(preset);
        let mut sections = [
            to_map(&base.model)?,
            to_map(&base.train)?,
            to_map(&base.sampler)?,
        ];
        let mut duration_sections = [to_map(&base.duration)?, to_map(&base.duration_train)?];

        for (key, value) in &doc {
            if key == "preset" {
                continue;
            }
            let (targets, field) = match key.strip_prefix("duration.") {
                Some(rest) => (&mut duration_sections[..], rest),
                None => (&mut sections[..], key.as_str()),
            };
            let mut hit = false;
            for section in targets.iter_mut() {
                if section.contains_key(field) {
                    section.insert(field.to_string(), value.clone());
                    hit = true;
                }
            }
            if !hit {
                return Err(Error::invalid("config", format!("unknown key `{key}`")));
            }
        }

        let [model, train, sampler] = sections;
        let [duration, duration_train] = duration_sections;
        let cfg = Self {
            model: serde_json::from_value(Value::Object(model))?,
            train: serde_json::from_value(Value::Object(train))?,
            sampler: serde_json::from_value(Value::Object(sampler))?,
            duration: serde_json::from_value(Value::Object(duration))?,
            duration_train: serde_json::from_value(Value::Object(duration_train))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_flat_json(&text)
    }
}

fn to_map<T: Serialize>(v: &T) -> Result<Map<String, Value>> {
    match serde_json::to_value(v)? {
        Value::Object(m) => Ok(m),
        _ => unreachable!("config sections serialize to objects"),
    }
}
