//! Domain types shared by every module.

use std::fmt;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A positive rational rate in hertz, e.g. `44100/512` codec frames per second.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rate {
    pub num: u64,
    pub den: u64,
}

impl Rate {
    pub const fn new(num: u64, den: u64) -> Self {
        Self { num, den }
    }

    pub fn hz(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn validate(self) -> Result<()> {
        if self.num == 0 || self.den == 0 {
            return Err(Error::invalid("rate", format!("{}/{} must be positive", self.num, self.den)));
        }
        Ok(())
    }

    /// Frames at this rate covering the span of `frames` frames at `other`,
    /// rounded half up in exact integer arithmetic.
    pub fn resample_len(self, frames: usize, other: Rate) -> usize {
        let num = frames as u128 * self.num as u128 * other.den as u128;
        let den = self.den as u128 * other.num as u128;
        ((2 * num + den) / (2 * den)) as usize
    }

    /// Seconds spanned by `frames` frames at this rate.
    pub fn seconds(self, frames: usize) -> f64 {
        frames as f64 * self.den as f64 / self.num as f64
    }
}

impl fmt::Display for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{} Hz", self.num, self.den)
    }
}

/// Corpus split tag carried by every manifest record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid("split", format!("unknown split `{other}`"))),
        }
    }
}

/// Audio tokens, one row per RVQ layer and one column per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrid {
    tokens: Array2<u32>,
    vocab: usize,
    frame_rate: Rate,
}

impl TokenGrid {
    pub fn new(tokens: Array2<u32>, vocab: usize, frame_rate: Rate) -> Result<Self> {
        let (layers, frames) = tokens.dim();
        if layers == 0 || frames == 0 {
            return Err(Error::invalid("tokens", format!("grid must be at least 1x1, got {layers}x{frames}")));
        }
        frame_rate.validate()?;
        if let Some(bad) = tokens.iter().find(|&&t| t as usize >= vocab) {
            return Err(Error::invalid("tokens", format!("token {bad} outside [0, {vocab})")));
        }
        Ok(Self {
            tokens,
            vocab,
            frame_rate,
        })
    }

    pub fn layers(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn frames(&self) -> usize {
        self.tokens.ncols()
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn frame_rate(&self) -> Rate {
        self.frame_rate
    }

    pub fn get(&self, layer: usize, frame: usize) -> u32 {
        self.tokens[[layer, frame]]
    }

    pub fn layer(&self, layer: usize) -> ArrayView1<'_, u32> {
        self.tokens.row(layer)
    }

    pub fn as_array(&self) -> &Array2<u32> {
        &self.tokens
    }

    pub fn duration_s(&self) -> f64 {
        self.frame_rate.seconds(self.frames())
    }

    /// Overwrites one cell. Panics if `token` is outside the vocabulary.
    pub fn set(&mut self, layer: usize, frame: usize, token: u32) {
        assert!((token as usize) < self.vocab, "token {token} outside vocab {}", self.vocab);
        self.tokens[[layer, frame]] = token;
    }
}

/// Nonempty phoneme id sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PhonemeSeq(Vec<u32>);

impl PhonemeSeq {
    pub fn new(ids: Vec<u32>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::invalid("phonemes", "sequence is empty"));
        }
        Ok(Self(ids))
    }

    pub fn ids(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Checks every id against an alphabet of `n_phonemes` symbols.
    pub fn validate(&self, n_phonemes: usize) -> Result<()> {
        if let Some(bad) = self.0.iter().find(|&&p| p as usize >= n_phonemes) {
            return Err(Error::invalid("phonemes", format!("id {bad} outside [0, {n_phonemes})")));
        }
        Ok(())
    }

    pub fn has_adjacent_repeat(&self) -> bool {
        self.0.windows(2).any(|w| w[0] == w[1])
    }
}

/// Boolean grid aligned with a [`TokenGrid`]; `true` marks a masked cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskGrid {
    mask: Array2<bool>,
}

impl MaskGrid {
    pub fn new(mask: Array2<bool>) -> Self {
        Self { mask }
    }

    pub fn all(layers: usize, frames: usize) -> Self {
        Self::new(Array2::from_elem((layers, frames), true))
    }

    pub fn none(layers: usize, frames: usize) -> Self {
        Self::new(Array2::from_elem((layers, frames), false))
    }

    pub fn dim(&self) -> (usize, usize) {
        self.mask.dim()
    }

    pub fn is_masked(&self, layer: usize, frame: usize) -> bool {
        self.mask[[layer, frame]]
    }

    pub fn set(&mut self, layer: usize, frame: usize, masked: bool) {
        self.mask[[layer, frame]] = masked;
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn as_array(&self) -> &Array2<bool> {
        &self.mask
    }

    pub fn check_matches(&self, grid: &TokenGrid) -> Result<()> {
        let want = (grid.layers(), grid.frames());
        if self.dim() != want {
            return Err(Error::shape("mask grid", want, self.dim()));
        }
        Ok(())
    }
}

/// Unit-norm speaker conditioning vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SpeakerEmbedding(Vec<f64>);

impl SpeakerEmbedding {
    /// L2-normalizes `v`. A zero vector has no direction and is rejected.
    pub fn normalized(v: Vec<f64>) -> Result<Self> {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if v.is_empty() || norm <= f64::EPSILON || !norm.is_finite() {
            return Err(Error::DegenerateEnrollment);
        }
        Ok(Self(v.into_iter().map(|x| x / norm).collect()))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn cosine(&self, other: &SpeakerEmbedding) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }
}

/// One corpus record: content, speaker, audio tokens and semantic targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub split: Split,
    pub phonemes: PhonemeSeq,
    pub speaker_id: usize,
    pub tokens: TokenGrid,
    pub duration_s: f64,
    /// `T_sem x D_sem` continuous semantic features.
    pub semantic_feats: Array2<f64>,
    /// Length-`T_sem` discrete semantic codes.
    pub semantic_codes: Vec<u32>,
    pub semantic_rate: Rate,
}

impl Utterance {
    pub fn frames(&self) -> usize {
        self.tokens.frames()
    }

    pub fn semantic_frames(&self) -> usize {
        self.semantic_codes.len()
    }
}

/// Half-away-from-zero rounding, the single rounding convention of the crate.
pub fn round_half_away(x: f64) -> f64 {
    x.round()
}
