//! Deterministic synthetic world standing in for the codec, the G2P front end,
//! the semantic encoder and the speaker encoder.
//!
//! Phoneme `p` spoken by speaker `s` occupies `base + (p mod 4)` frames. At
//! global frame `f` inside that segment, layer 0 holds `p` and layer `k >= 1`
//! holds `(p + 11k + 17s + (f mod 2)) mod V`. Content is therefore readable
//! from layer 0 alone and speaker identity from the upper layers, which makes
//! both intelligibility and speaker similarity exactly measurable.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::types::{PhonemeSeq, Rate, SpeakerEmbedding, Split, TokenGrid, Utterance};

const CONTENT_STRIDE: u64 = 11;
const SPEAKER_STRIDE: u64 = 17;
/// Phoneme sequences are assigned to splits by hash class, so held-out
/// sequences can never occur in training regardless of corpus sizes.
const SPLIT_CLASSES: u64 = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyWorldSpec {
    pub n_phonemes: usize,
    pub n_speakers: usize,
    pub codebook_size: usize,
    pub n_codebooks: usize,
    pub phoneme_len_base: usize,
    pub speaker_dim: usize,
    pub frame_rate: Rate,
    pub seed: u64,
    pub n_utterances: usize,
    pub phonemes_per_utt: (usize, usize),
}

impl ToyWorldSpec {
    pub fn toy() -> Self {
        Self::for_model(&ModelConfig::toy())
    }

    pub fn for_model(cfg: &ModelConfig) -> Self {
        Self {
            n_phonemes: cfg.n_phonemes,
            n_speakers: cfg.n_speakers,
            codebook_size: cfg.codebook_size,
            n_codebooks: cfg.n_codebooks,
            phoneme_len_base: 4,
            speaker_dim: cfg.speaker_dim,
            frame_rate: Rate::new(44_100, 512),
            seed: 0,
            n_utterances: 64,
            phonemes_per_utt: (3, 8),
        }
    }

    pub fn semantic_rate(&self) -> Rate {
        Rate::new(self.frame_rate.num, self.frame_rate.den * 2)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |r: String| Err(Error::invalid("toy world spec", r));
        if self.n_phonemes == 0 || self.n_speakers == 0 || self.speaker_dim == 0 {
            return bad("n_phonemes, n_speakers and speaker_dim must be positive".into());
        }
        if self.codebook_size < self.n_phonemes {
            return bad(format!("codebook_size {} < n_phonemes {}", self.codebook_size, self.n_phonemes));
        }
        if gcd(SPEAKER_STRIDE, self.codebook_size as u64) != 1 {
            return bad(format!("17 must be invertible mod codebook_size {}", self.codebook_size));
        }
        if self.n_codebooks < 2 {
            return bad("speaker identity needs at least 2 codebooks".into());
        }
        if self.phoneme_len_base < 2 {
            return bad("phoneme_len_base must be >= 2".into());
        }
        let (lo, hi) = self.phonemes_per_utt;
        if lo == 0 || lo > hi {
            return bad(format!("bad phonemes_per_utt range ({lo}, {hi})"));
        }
        if hi > 1 && self.n_phonemes < 2 {
            return bad("adjacent-distinct sequences need at least 2 phonemes".into());
        }
        self.frame_rate.validate()
    }

    pub fn segment_len(&self, phoneme: u32) -> usize {
        self.phoneme_len_base + (phoneme as usize % 4)
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Expected upper-layer token for phoneme `p` at frame `f`.
fn upper_token(p: u64, layer: usize, speaker: usize, frame: usize, vocab: usize) -> u32 {
    ((p + CONTENT_STRIDE * layer as u64 + SPEAKER_STRIDE * speaker as u64 + (frame % 2) as u64) % vocab as u64) as u32
}

/// Phoneme active at every frame of the encoded utterance.
pub fn phoneme_timeline(phonemes: &PhonemeSeq, spec: &ToyWorldSpec) -> Vec<u32> {
    phonemes
        .ids()
        .iter()
        .flat_map(|&p| std::iter::repeat_n(p, spec.segment_len(p)))
        .collect()
}

pub fn toy_encode(phonemes: &PhonemeSeq, speaker_id: usize, spec: &ToyWorldSpec) -> Result<TokenGrid> {
    if speaker_id >= spec.n_speakers {
        return Err(Error::invalid("speaker_id", format!("{speaker_id} outside [0, {})", spec.n_speakers)));
    }
    phonemes.validate(spec.n_phonemes)?;
    let timeline = phoneme_timeline(phonemes, spec);
    let mut grid = Array2::zeros((spec.n_codebooks, timeline.len()));
    for (f, &p) in timeline.iter().enumerate() {
        grid[[0, f]] = p;
        for k in 1..spec.n_codebooks {
            grid[[k, f]] = upper_token(p as u64, k, speaker_id, f, spec.codebook_size);
        }
    }
    TokenGrid::new(grid, spec.codebook_size, spec.frame_rate)
}

/// Run-length collapse of layer 0. Tokens outside the phoneme alphabet decode
/// to the reserved garbage id `n_phonemes`.
pub fn oracle_decode_phonemes(tokens: &TokenGrid, n_phonemes: usize) -> PhonemeSeq {
    let garbage = n_phonemes as u32;
    let mut ids: Vec<u32> = Vec::new();
    for &t in tokens.layer(0) {
        let p = if (t as usize) < n_phonemes { t } else { garbage };
        if ids.last() != Some(&p) {
            ids.push(p);
        }
    }
    PhonemeSeq::new(ids).expect("token grids have at least one frame")
}

/// Fraction of frames whose layer-1 token matches what `speaker_id` would
/// produce for the layer-0 phoneme at that frame.
pub fn oracle_speaker_consistency(tokens: &TokenGrid, speaker_id: usize, spec: &ToyWorldSpec) -> f64 {
    if tokens.layers() < 2 {
        return 0.0;
    }
    let frames = tokens.frames();
    let hits = (0..frames)
        .filter(|&f| {
            let p = tokens.get(0, f) as u64;
            tokens.get(1, f) == upper_token(p, 1, speaker_id, f, spec.codebook_size)
        })
        .count();
    hits as f64 / frames as f64
}

/// One-hot semantic features and codes at half the audio frame rate.
///
/// Semantic frame `j` reads the phoneme active at audio frame `min(2j, T-1)`.
pub fn toy_semantic(timeline: &[u32], semantic_dim: usize) -> (Array2<f64>, Vec<u32>) {
    let t = timeline.len();
    let t_sem = t.div_ceil(2);
    let codes: Vec<u32> = (0..t_sem).map(|j| timeline[(2 * j).min(t - 1)]).collect();
    let mut feats = Array2::zeros((t_sem, semantic_dim));
    for (j, &p) in codes.iter().enumerate() {
        feats[[j, p as usize]] = 1.0;
    }
    (feats, codes)
}

pub fn toy_speaker_embedding(speaker_id: usize, spec: &ToyWorldSpec) -> SpeakerEmbedding {
    let mut rng = SeededRng::split(spec.seed, "spk", speaker_id as u64);
    let v = (0..spec.speaker_dim).map(|_| rng.normal()).collect();
    SpeakerEmbedding::normalized(v).expect("gaussian draw is almost surely nonzero")
}

/// Toy speaker encoder: recovers the speaker id by majority vote over frames
/// from layers 0 and 1, and returns that speaker's embedding.
pub fn toy_speaker_encoder(tokens: &TokenGrid, spec: &ToyWorldSpec) -> Result<SpeakerEmbedding> {
    let v = spec.codebook_size as u64;
    let inverse = (1..v)
        .find(|a| (SPEAKER_STRIDE * a) % v == 1)
        .ok_or_else(|| Error::invalid("toy world spec", "17 is not invertible mod codebook_size"))?;
    if tokens.layers() < 2 {
        return Err(Error::invalid("speaker encoder", "needs at least 2 layers"));
    }
    let mut votes = vec![0usize; spec.n_speakers];
    for f in 0..tokens.frames() {
        let p = tokens.get(0, f) as u64;
        if p >= spec.n_phonemes as u64 {
            continue;
        }
        let offset = (p + CONTENT_STRIDE + (f % 2) as u64) % v;
        let s = ((tokens.get(1, f) as u64 + v - offset) % v * inverse) % v;
        if let Some(count) = votes.get_mut(s as usize) {
            *count += 1;
        }
    }
    let (best, &count) = votes.iter().enumerate().max_by_key(|&(i, c)| (*c, std::cmp::Reverse(i))).unwrap();
    if count == 0 {
        return Err(Error::DegenerateEnrollment);
    }
    Ok(toy_speaker_embedding(best, spec))
}

/// Mean of the enrollment embeddings, renormalized.
pub fn enrollment_average(embs: &[SpeakerEmbedding]) -> Result<SpeakerEmbedding> {
    let first = embs
        .first()
        .ok_or_else(|| Error::invalid("enrollment", "no embeddings"))?;
    let dim = first.dim();
    if embs.iter().any(|e| e.dim() != dim) {
        return Err(Error::invalid("enrollment", "embedding dimensions differ"));
    }
    let mut mean = vec![0.0; dim];
    for e in embs {
        for (m, x) in mean.iter_mut().zip(e.as_slice()) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= embs.len() as f64;
    }
    SpeakerEmbedding::normalized(mean)
}

fn split_class(phonemes: &[u32]) -> u64 {
    let mut hasher = Sha256::new();
    for p in phonemes {
        hasher.update(p.to_le_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap()) % SPLIT_CLASSES
}

/// Which split a phoneme sequence belongs to.
pub fn split_of(phonemes: &PhonemeSeq) -> Split {
    match split_class(phonemes.ids()) {
        0 => Split::Test,
        1 => Split::Dev,
        _ => Split::Train,
    }
}

fn draw_phonemes(rng: &mut SeededRng, spec: &ToyWorldSpec) -> Vec<u32> {
    let (lo, hi) = spec.phonemes_per_utt;
    let n = lo + rng.below(hi - lo + 1);
    let mut ids = Vec::with_capacity(n);
    while ids.len() < n {
        let p = rng.below(spec.n_phonemes) as u32;
        if ids.last() != Some(&p) {
            ids.push(p);
        }
    }
    ids
}

/// Builds a complete utterance for a given prompt and speaker.
pub fn toy_utterance(
    id: String,
    split: Split,
    phonemes: PhonemeSeq,
    speaker_id: usize,
    spec: &ToyWorldSpec,
) -> Result<Utterance> {
    let tokens = toy_encode(&phonemes, speaker_id, spec)?;
    let timeline = phoneme_timeline(&phonemes, spec);
    let (semantic_feats, semantic_codes) = toy_semantic(&timeline, spec.n_phonemes);
    Ok(Utterance {
        id,
        split,
        duration_s: tokens.duration_s(),
        phonemes,
        speaker_id,
        tokens,
        semantic_feats,
        semantic_codes,
        semantic_rate: spec.semantic_rate(),
    })
}

/// Generates `spec.n_utterances` utterances for `split`. Utterance `i` depends
/// only on `(seed, split, i)`, so larger corpora extend smaller ones.
pub fn gen_corpus(spec: &ToyWorldSpec, split: Split) -> Result<Vec<Utterance>> {
    spec.validate()?;
    (0..spec.n_utterances)
        .map(|i| {
            let mut rng = SeededRng::split(spec.seed, &format!("corpus-{}", split.as_str()), i as u64);
            let phonemes = loop {
                let ids = PhonemeSeq::new(draw_phonemes(&mut rng, spec)).unwrap();
                if split_of(&ids) == split {
                    break ids;
                }
            };
            let speaker = rng.below(spec.n_speakers);
            toy_utterance(format!("{}-{i:05}", split.as_str()), split, phonemes, speaker, spec)
        })
        .collect()
}

/// Embedding of every speaker id, indexed by id.
pub fn speaker_table(spec: &ToyWorldSpec) -> Vec<SpeakerEmbedding> {
    (0..spec.n_speakers).map(|s| toy_speaker_embedding(s, spec)).collect()
}
