//! Utterance-level duration predictor: a classification token is prepended
//! to the phoneme embeddings and its final hidden state is regressed onto
//! log-seconds.

use ndarray::{s, Array2};

use super::layers::{Encoder, EncoderCache, Linear, Segment, WEIGHT_STD};
use super::ops::add_positional_encoding;
use super::params::{ParamId, ParamStore};
use crate::config::DurationConfig;
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::types::{round_half_away, PhonemeSeq, Rate};

#[derive(Debug, Clone)]
pub struct DurationNet {
    cfg: DurationConfig,
    params: ParamStore,
    phoneme_emb: ParamId,
    cls: ParamId,
    encoder: Encoder,
    head: Linear,
}

#[derive(Debug)]
pub struct DurationCache {
    segments: Vec<Segment>,
    ids: Vec<Vec<usize>>,
    encoder: EncoderCache,
    cls_hidden: Array2<f64>,
    total_rows: usize,
}

impl DurationNet {
    pub fn new(cfg: &DurationConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = SeededRng::keyed(seed, "duration-init");
        let mut ps = ParamStore::new();
        let d = cfg.d_model;
        let phoneme_emb = ps.normal("phoneme_emb", (cfg.n_phonemes, d), 1.0, &mut rng);
        let cls = ps.normal("cls", (1, d), 1.0, &mut rng);
        let encoder = Encoder::new(&mut ps, "encoder", cfg.n_layers, d, cfg.n_heads, cfg.d_ff, None, &mut rng);
        let head = Linear::new(&mut ps, "head", d, 1, WEIGHT_STD, &mut rng);
        Ok(Self {
            cfg: cfg.clone(),
            params: ps,
            phoneme_emb,
            cls,
            encoder,
            head,
        })
    }

    pub fn from_params(cfg: &DurationConfig, params: ParamStore) -> Result<Self> {
        let mut net = Self::new(cfg, 0)?;
        if !net.params.same_layout(&params) {
            return Err(Error::invalid("duration parameters", "layout does not match config"));
        }
        net.params = params;
        Ok(net)
    }

    pub fn config(&self) -> &DurationConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn run(&self, batch: &[&PhonemeSeq], record: bool) -> Result<(Vec<f64>, Option<DurationCache>)> {
        let d = self.cfg.d_model;
        let mut segments = Vec::with_capacity(batch.len());
        let mut ids = Vec::with_capacity(batch.len());
        let mut start = 0;
        for p in batch {
            p.validate(self.cfg.n_phonemes)?;
            segments.push(Segment { start, len: p.len() + 1 });
            ids.push(p.ids().iter().map(|&i| i as usize).collect::<Vec<_>>());
            start += p.len() + 1;
        }
        let total_rows = start;
        let mut x = Array2::zeros((total_rows, d));
        let table = self.params.get(self.phoneme_emb);
        let cls = self.params.get(self.cls).row(0);
        for (seg, seq) in segments.iter().zip(&ids) {
            x.row_mut(seg.start).assign(&cls);
            for (j, &id) in seq.iter().enumerate() {
                x.row_mut(seg.start + 1 + j).assign(&table.row(id));
            }
            for pos in 0..seg.len {
                add_positional_encoding(x.row_mut(seg.start + pos), pos);
            }
        }
        let (z, enc) = self.encoder.forward(&self.params, x, &segments, None, record);
        let mut cls_hidden = Array2::zeros((batch.len(), d));
        for (i, seg) in segments.iter().enumerate() {
            cls_hidden.row_mut(i).assign(&z.row(seg.start));
        }
        let out = self.head.forward(&self.params, &cls_hidden);
        let preds = out.column(0).to_vec();
        let cache = enc.map(|encoder| DurationCache {
            segments,
            ids,
            encoder,
            cls_hidden,
            total_rows,
        });
        Ok((preds, cache))
    }

    /// Predicted natural-log duration in seconds.
    pub fn forward(&self, phonemes: &PhonemeSeq) -> Result<f64> {
        Ok(self.run(&[phonemes], false)?.0[0])
    }

    pub fn forward_batch(&self, batch: &[&PhonemeSeq]) -> Result<Vec<f64>> {
        Ok(self.run(batch, false)?.0)
    }

    pub fn forward_train(&self, batch: &[&PhonemeSeq]) -> Result<(Vec<f64>, DurationCache)> {
        if batch.is_empty() {
            return Err(Error::invalid("batch", "empty"));
        }
        let (p, c) = self.run(batch, true)?;
        Ok((p, c.unwrap()))
    }

    pub fn backward(&self, cache: &DurationCache, dpred: &[f64], grads: &mut ParamStore) -> Result<()> {
        if dpred.len() != cache.segments.len() {
            return Err(Error::shape("duration gradients", cache.segments.len(), dpred.len()));
        }
        let dout = Array2::from_shape_vec((dpred.len(), 1), dpred.to_vec()).unwrap();
        let dcls = self.head.backward(&self.params, grads, &cache.cls_hidden, &dout);
        let mut dz = Array2::zeros((cache.total_rows, self.cfg.d_model));
        for (i, seg) in cache.segments.iter().enumerate() {
            dz.row_mut(seg.start).assign(&dcls.row(i));
        }
        let dx = self.encoder.backward(&self.params, grads, &cache.encoder, &cache.segments, None, &dz);
        for (seg, seq) in cache.segments.iter().zip(&cache.ids) {
            let mut c = grads.get_mut(self.cls).row_mut(0);
            c += &dx.row(seg.start);
            for (j, &id) in seq.iter().enumerate() {
                let mut row = grads.get_mut(self.phoneme_emb).row_mut(id);
                row += &dx.slice(s![seg.start + 1 + j, ..]);
            }
        }
        Ok(())
    }
}

/// Frame count for a predicted log-duration, at least one frame.
pub fn predicted_frames(log_s: f64, frame_rate: Rate) -> usize {
    let frames = round_half_away(log_s.exp() * frame_rate.hz());
    if frames.is_nan() || frames < 1.0 {
        1
    } else {
        frames as usize
    }
}
