//! The masked audio token Transformer.
//!
//! Input sequence per utterance: phoneme embeddings (or a single learnable
//! unconditional token) followed by one row per audio frame holding the sum
//! over RVQ layers of either the token embedding or the mask embedding.
//! Sinusoidal positions are added over the whole concatenation, the speaker
//! embedding modulates every normalization, and the `K` output heads plus the
//! optional semantic head read the audio rows only.

use ndarray::{s, Array2, Array3, Axis};

use super::layers::{Encoder, EncoderCache, Linear, RowCond, Segment, WEIGHT_STD};
use super::ops::add_positional_encoding;
use super::params::{ParamId, ParamStore};
use crate::config::{ModelConfig, SkdMode};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::types::{MaskGrid, PhonemeSeq, SpeakerEmbedding, TokenGrid};

const EMBED_STD: f64 = 1.0;

/// Text conditioning of one forward pass.
#[derive(Debug, Clone, Copy)]
pub enum Prefix<'a> {
    Phonemes(&'a PhonemeSeq),
    /// Text replaced by the learnable unconditional token.
    Uncond,
}

#[derive(Debug, Clone, Copy)]
pub struct NetworkInput<'a> {
    pub prefix: Prefix<'a>,
    /// Token values at masked cells are ignored.
    pub tokens: &'a TokenGrid,
    pub mask: &'a MaskGrid,
    pub speaker: &'a SpeakerEmbedding,
    /// Frame-aligned semantic codes; required iff the model is semantically
    /// conditioned.
    pub semantic_codes: Option<&'a [u32]>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SemanticOutput {
    /// `T x C` logits over semantic codes.
    Logits(Array2<f64>),
    /// `T x D_sem` regressed features.
    Features(Array2<f64>),
}

impl SemanticOutput {
    pub fn as_array(&self) -> &Array2<f64> {
        match self {
            SemanticOutput::Logits(a) | SemanticOutput::Features(a) => a,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkOutput {
    /// `K x T x V`.
    pub audio_logits: Array3<f64>,
    pub semantic: Option<SemanticOutput>,
}

/// Loss gradient with respect to one [`NetworkOutput`].
#[derive(Debug, Clone)]
pub struct OutputGrad {
    pub audio_logits: Array3<f64>,
    pub semantic: Option<Array2<f64>>,
}

#[derive(Debug)]
struct ItemLayout {
    start: usize,
    prefix_ids: Vec<usize>,
    frames: usize,
    tokens: Array2<u32>,
    mask: Array2<bool>,
    semantic_codes: Option<Vec<u32>>,
}

impl ItemLayout {
    fn audio_start(&self) -> usize {
        self.start + self.prefix_ids.len()
    }
}

/// Activations kept by [`Network::forward_train`] for the backward pass.
#[derive(Debug)]
pub struct ForwardCache {
    items: Vec<ItemLayout>,
    segments: Vec<Segment>,
    row_item: Vec<usize>,
    speakers: Array2<f64>,
    total_rows: usize,
    encoder: EncoderCache,
    audio_hidden: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct Network {
    cfg: ModelConfig,
    params: ParamStore,
    phoneme_emb: ParamId,
    audio_emb: Vec<ParamId>,
    mask_emb: ParamId,
    semantic_emb: Option<ParamId>,
    encoder: Encoder,
    heads: Vec<Linear>,
    skd_head: Option<Linear>,
}

impl Network {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = SeededRng::keyed(seed, "init");
        let mut ps = ParamStore::new();
        let d = cfg.d_model;
        let phoneme_emb = ps.normal("phoneme_emb", (cfg.n_phonemes + 1, d), EMBED_STD, &mut rng);
        let audio_emb = (0..cfg.n_codebooks)
            .map(|k| ps.normal(format!("audio_emb.{k}"), (cfg.codebook_size, d), EMBED_STD, &mut rng))
            .collect();
        let mask_emb = ps.normal("mask_emb", (1, d), EMBED_STD, &mut rng);
        let semantic_emb = cfg
            .semantic_conditioning
            .then(|| ps.normal("semantic_emb", (cfg.semantic_vocab, d), EMBED_STD, &mut rng));
        let encoder = Encoder::new(
            &mut ps,
            "encoder",
            cfg.n_layers,
            d,
            cfg.n_heads,
            cfg.d_ff,
            Some(cfg.speaker_dim),
            &mut rng,
        );
        let heads = (0..cfg.n_codebooks)
            .map(|k| Linear::new(&mut ps, &format!("head.{k}"), d, cfg.codebook_size, WEIGHT_STD, &mut rng))
            .collect();
        let skd_head = cfg
            .skd_width()
            .map(|w| Linear::new(&mut ps, "skd_head", d, w, WEIGHT_STD, &mut rng));
        Ok(Self {
            cfg: cfg.clone(),
            params: ps,
            phoneme_emb,
            audio_emb,
            mask_emb,
            semantic_emb,
            encoder,
            heads,
            skd_head,
        })
    }

    /// Rebuilds a network around existing parameters, checking their layout.
    pub fn from_params(cfg: &ModelConfig, params: ParamStore) -> Result<Self> {
        let mut net = Self::new(cfg, 0)?;
        if !net.params.same_layout(&params) {
            return Err(Error::invalid("network parameters", "layout does not match config"));
        }
        net.params = params;
        Ok(net)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Copy of this network with speaker modulation removed from every
    /// normalization, i.e. plain pre-LN.
    pub fn without_speaker_conditioning(&self) -> Self {
        Self {
            encoder: self.encoder.unmodulated(),
            ..self.clone()
        }
    }

    fn check_input(&self, input: &NetworkInput<'_>) -> Result<()> {
        let cfg = &self.cfg;
        let (k, t) = (input.tokens.layers(), input.tokens.frames());
        if k != cfg.n_codebooks || input.tokens.vocab() != cfg.codebook_size {
            return Err(Error::shape(
                "token grid (layers, vocab)",
                (cfg.n_codebooks, cfg.codebook_size),
                (k, input.tokens.vocab()),
            ));
        }
        input.mask.check_matches(input.tokens)?;
        if t > cfg.max_frames {
            return Err(Error::invalid("frames", format!("{t} exceeds max_frames {}", cfg.max_frames)));
        }
        if input.speaker.dim() != cfg.speaker_dim {
            return Err(Error::shape("speaker embedding", cfg.speaker_dim, input.speaker.dim()));
        }
        if let Prefix::Phonemes(p) = input.prefix {
            p.validate(cfg.n_phonemes)?;
        }
        match (cfg.semantic_conditioning, input.semantic_codes) {
            (true, Some(codes)) => {
                if codes.len() != t {
                    return Err(Error::shape("semantic conditioning codes", t, codes.len()));
                }
                if let Some(bad) = codes.iter().find(|&&c| c as usize >= cfg.semantic_vocab) {
                    return Err(Error::invalid("semantic codes", format!("{bad} outside [0, {})", cfg.semantic_vocab)));
                }
            }
            (true, None) => return Err(Error::invalid("network input", "model needs semantic conditioning codes")),
            (false, Some(_)) => return Err(Error::invalid("network input", "model takes no semantic conditioning")),
            (false, None) => {}
        }
        Ok(())
    }

    /// Sum over layers of token or mask embeddings, one row per frame.
    pub fn embed_audio(&self, tokens: &TokenGrid, mask: &MaskGrid) -> Result<Array2<f64>> {
        if tokens.layers() != self.cfg.n_codebooks {
            return Err(Error::shape("token grid layers", self.cfg.n_codebooks, tokens.layers()));
        }
        if tokens.vocab() > self.cfg.codebook_size {
            return Err(Error::invalid("tokens", "vocabulary larger than the model's"));
        }
        mask.check_matches(tokens)?;
        let mut out = Array2::zeros((tokens.frames(), self.cfg.d_model));
        self.write_audio_rows(tokens.as_array(), mask.as_array(), None, &mut out);
        Ok(out)
    }

    fn write_audio_rows(
        &self,
        tokens: &Array2<u32>,
        mask: &Array2<bool>,
        semantic_codes: Option<&[u32]>,
        out: &mut Array2<f64>,
    ) {
        let ps = &self.params;
        let mask_row = ps.get(self.mask_emb).row(0);
        for (t, mut row) in out.rows_mut().into_iter().enumerate() {
            for (k, &table) in self.audio_emb.iter().enumerate() {
                if mask[[k, t]] {
                    row += &mask_row;
                } else {
                    row += &ps.get(table).row(tokens[[k, t]] as usize);
                }
            }
            if let (Some(codes), Some(table)) = (semantic_codes, self.semantic_emb) {
                row += &ps.get(table).row(codes[t] as usize);
            }
        }
    }

    fn layout(&self, inputs: &[NetworkInput<'_>]) -> Result<Vec<ItemLayout>> {
        let mut start = 0;
        inputs
            .iter()
            .map(|input| {
                self.check_input(input)?;
                let prefix_ids = match input.prefix {
                    Prefix::Phonemes(p) => p.ids().iter().map(|&i| i as usize).collect(),
                    Prefix::Uncond => vec![self.cfg.n_phonemes],
                };
                let item = ItemLayout {
                    start,
                    frames: input.tokens.frames(),
                    tokens: input.tokens.as_array().clone(),
                    mask: input.mask.as_array().clone(),
                    semantic_codes: input.semantic_codes.map(<[u32]>::to_vec),
                    prefix_ids,
                };
                start += item.prefix_ids.len() + item.frames;
                Ok(item)
            })
            .collect()
    }

    fn run(&self, inputs: &[NetworkInput<'_>], record: bool) -> Result<(Vec<NetworkOutput>, Option<ForwardCache>)> {
        if inputs.is_empty() {
            return Ok((Vec::new(), None));
        }
        let items = self.layout(inputs)?;
        let d = self.cfg.d_model;
        let last = items.last().unwrap();
        let total_rows = last.audio_start() + last.frames;

        let mut x = Array2::zeros((total_rows, d));
        let mut segments = Vec::with_capacity(items.len());
        let mut row_item = vec![0; total_rows];
        let phonemes = self.params.get(self.phoneme_emb);
        for (i, item) in items.iter().enumerate() {
            let len = item.prefix_ids.len() + item.frames;
            segments.push(Segment { start: item.start, len });
            row_item[item.start..item.start + len].fill(i);
            for (j, &id) in item.prefix_ids.iter().enumerate() {
                x.row_mut(item.start + j).assign(&phonemes.row(id));
            }
            let mut audio = x.slice_mut(s![item.audio_start()..item.audio_start() + item.frames, ..]).to_owned();
            self.write_audio_rows(&item.tokens, &item.mask, item.semantic_codes.as_deref(), &mut audio);
            x.slice_mut(s![item.audio_start()..item.audio_start() + item.frames, ..]).assign(&audio);
            for pos in 0..len {
                add_positional_encoding(x.row_mut(item.start + pos), pos);
            }
        }

        let mut speakers = Array2::zeros((items.len(), self.cfg.speaker_dim));
        for (i, input) in inputs.iter().enumerate() {
            speakers.row_mut(i).assign(&ndarray::ArrayView1::from(input.speaker.as_slice()));
        }
        let cond = RowCond {
            vectors: &speakers,
            row_item: &row_item,
        };
        let (z, enc_cache) = self.encoder.forward(&self.params, x, &segments, Some(cond), record);

        let n_audio: usize = items.iter().map(|it| it.frames).sum();
        let mut audio_hidden = Array2::zeros((n_audio, d));
        let mut offset = 0;
        for item in &items {
            audio_hidden
                .slice_mut(s![offset..offset + item.frames, ..])
                .assign(&z.slice(s![item.audio_start()..item.audio_start() + item.frames, ..]));
            offset += item.frames;
        }

        let head_logits: Vec<Array2<f64>> = self.heads.iter().map(|h| h.forward(&self.params, &audio_hidden)).collect();
        let skd = self.skd_head.as_ref().map(|h| h.forward(&self.params, &audio_hidden));

        let v = self.cfg.codebook_size;
        let mut outputs = Vec::with_capacity(items.len());
        let mut offset = 0;
        for item in &items {
            let rows = offset..offset + item.frames;
            let mut audio_logits = Array3::zeros((self.cfg.n_codebooks, item.frames, v));
            for (k, logits) in head_logits.iter().enumerate() {
                audio_logits.index_axis_mut(Axis(0), k).assign(&logits.slice(s![rows.clone(), ..]));
            }
            let semantic = skd.as_ref().map(|all| {
                let a = all.slice(s![rows.clone(), ..]).to_owned();
                match self.cfg.skd_mode {
                    SkdMode::Discrete => SemanticOutput::Logits(a),
                    _ => SemanticOutput::Features(a),
                }
            });
            outputs.push(NetworkOutput { audio_logits, semantic });
            offset += item.frames;
        }

        let cache = enc_cache.map(|encoder| ForwardCache {
            items,
            segments,
            row_item,
            speakers,
            total_rows,
            encoder,
            audio_hidden,
        });
        Ok((outputs, cache))
    }

    pub fn forward(&self, input: &NetworkInput<'_>) -> Result<NetworkOutput> {
        Ok(self.run(std::slice::from_ref(input), false)?.0.pop().unwrap())
    }

    /// Evaluates several independent inputs packed into one pass.
    pub fn forward_batch(&self, inputs: &[NetworkInput<'_>]) -> Result<Vec<NetworkOutput>> {
        Ok(self.run(inputs, false)?.0)
    }

    pub fn forward_train(&self, inputs: &[NetworkInput<'_>]) -> Result<(Vec<NetworkOutput>, ForwardCache)> {
        if inputs.is_empty() {
            return Err(Error::invalid("batch", "empty"));
        }
        let (out, cache) = self.run(inputs, true)?;
        Ok((out, cache.expect("recorded forward keeps its cache")))
    }

    /// Accumulates parameter gradients of a loss whose output gradients are
    /// `output_grads` (one per batch item) into `grads`.
    pub fn backward(&self, cache: &ForwardCache, output_grads: &[OutputGrad], grads: &mut ParamStore) -> Result<()> {
        if output_grads.len() != cache.items.len() {
            return Err(Error::shape("output gradients", cache.items.len(), output_grads.len()));
        }
        let ps = &self.params;
        let n_audio = cache.audio_hidden.nrows();
        let v = self.cfg.codebook_size;
        let mut d_audio = Array2::zeros(cache.audio_hidden.raw_dim());
        for (k, head) in self.heads.iter().enumerate() {
            let mut dlogits = Array2::zeros((n_audio, v));
            let mut offset = 0;
            for (item, g) in cache.items.iter().zip(output_grads) {
                if g.audio_logits.dim() != (self.cfg.n_codebooks, item.frames, v) {
                    return Err(Error::shape("audio logit gradient", (self.cfg.n_codebooks, item.frames, v), g.audio_logits.dim()));
                }
                dlogits
                    .slice_mut(s![offset..offset + item.frames, ..])
                    .assign(&g.audio_logits.index_axis(Axis(0), k));
                offset += item.frames;
            }
            d_audio += &head.backward(ps, grads, &cache.audio_hidden, &dlogits);
        }
        if let Some(head) = &self.skd_head {
            let width = self.cfg.skd_width().unwrap();
            let mut dsem = Array2::zeros((n_audio, width));
            let mut offset = 0;
            for (item, g) in cache.items.iter().zip(output_grads) {
                if let Some(gs) = &g.semantic {
                    if gs.dim() != (item.frames, width) {
                        return Err(Error::shape("semantic gradient", (item.frames, width), gs.dim()));
                    }
                    dsem.slice_mut(s![offset..offset + item.frames, ..]).assign(gs);
                }
                offset += item.frames;
            }
            d_audio += &head.backward(ps, grads, &cache.audio_hidden, &dsem);
        }

        let mut dz = Array2::zeros((cache.total_rows, self.cfg.d_model));
        let mut offset = 0;
        for item in &cache.items {
            dz.slice_mut(s![item.audio_start()..item.audio_start() + item.frames, ..])
                .assign(&d_audio.slice(s![offset..offset + item.frames, ..]));
            offset += item.frames;
        }
        let cond = RowCond {
            vectors: &cache.speakers,
            row_item: &cache.row_item,
        };
        let dx = self.encoder.backward(ps, grads, &cache.encoder, &cache.segments, Some(cond), &dz);

        for item in &cache.items {
            for (j, &id) in item.prefix_ids.iter().enumerate() {
                let mut row = grads.get_mut(self.phoneme_emb).row_mut(id);
                row += &dx.row(item.start + j);
            }
            for t in 0..item.frames {
                let dr = dx.row(item.audio_start() + t);
                for (k, &table) in self.audio_emb.iter().enumerate() {
                    if item.mask[[k, t]] {
                        let mut row = grads.get_mut(self.mask_emb).row_mut(0);
                        row += &dr;
                    } else {
                        let mut row = grads.get_mut(table).row_mut(item.tokens[[k, t]] as usize);
                        row += &dr;
                    }
                }
                if let (Some(codes), Some(table)) = (&item.semantic_codes, self.semantic_emb) {
                    let mut row = grads.get_mut(table).row_mut(codes[t] as usize);
                    row += &dr;
                }
            }
        }
        Ok(())
    }
}
