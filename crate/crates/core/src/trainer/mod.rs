//! Optimization loops for the token model (every variant) and the duration
//! predictor.
//!
//! Each step draws its batch, masks and conditioning dropout from substreams
//! keyed by `(seed, step)`, so a run resumed from a checkpoint replays the
//! uninterrupted trajectory exactly from parameters, moments and step alone.

pub mod duration;
pub mod optim;

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2, Axis};

use crate::checkpoint::{AdamMoments, Checkpoint, CheckpointHeader, CheckpointModel};
use crate::config::{ModelConfig, SemanticTarget, SkdMode, TrainConfig, Variant};
use crate::error::{Error, Result};
use crate::masking::sample_training_mask;
use crate::nn::{Network, NetworkInput, OutputGrad, ParamStore, Prefix, SemanticOutput};
use crate::objectives::{
    combined_loss, interpolate_codes, masked_cross_entropy_grad, semantic_ce_grad, semantic_cosine_grad, LossBreakdown,
};
use crate::rng::SeededRng;
use crate::types::{MaskGrid, PhonemeSeq, SpeakerEmbedding, Split, TokenGrid, Utterance};

pub use duration::{DurationItem, DurationTrainer};
pub use optim::{lr_at, AdamW};

/// Loss above which training is considered diverged.
pub const DIVERGENCE_LOSS: f64 = 50.0;

/// What the semantic head is trained against.
#[derive(Debug, Clone, PartialEq)]
pub enum SemanticData {
    None,
    Codes(Vec<u32>),
    Features(Array2<f64>),
}

/// One utterance prepared for a specific variant.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    pub id: String,
    pub phonemes: PhonemeSeq,
    pub speaker: SpeakerEmbedding,
    /// Grid the model learns to fill in: audio tokens, or semantic codes for
    /// the first stage of the two-stage baseline.
    pub tokens: TokenGrid,
    /// Frame-aligned semantic codes fed as input (second stage only).
    pub semantic_input: Option<Vec<u32>>,
    pub semantic_target: SemanticData,
}

/// Mean over encoder layers of frame-aligned semantic features.
pub fn average_feature_layers(layers: &[ArrayView2<'_, f64>]) -> Result<Array2<f64>> {
    let first = layers
        .first()
        .ok_or_else(|| Error::invalid("feature layers", "none given"))?;
    let mut sum = first.to_owned();
    for l in &layers[1..] {
        if l.dim() != sum.dim() {
            return Err(Error::shape("feature layer", sum.dim(), l.dim()));
        }
        sum += l;
    }
    Ok(sum / layers.len() as f64)
}

/// Builds training items for `variant` under the already configured `model`.
/// Test-split utterances are rejected.
pub fn prepare_items(
    corpus: &[Utterance],
    variant: Variant,
    model: &ModelConfig,
    speakers: &[SpeakerEmbedding],
) -> Result<Vec<TrainItem>> {
    corpus
        .iter()
        .map(|u| {
            if u.split == Split::Test {
                return Err(Error::invalid(
                    "training corpus",
                    format!("utterance {} belongs to the test split", u.id),
                ));
            }
            let speaker = speakers
                .get(u.speaker_id)
                .ok_or_else(|| Error::invalid("speaker", format!("no embedding for speaker {}", u.speaker_id)))?
                .clone();
            let tokens = match variant {
                Variant::StageA => {
                    let codes = Array2::from_shape_vec((1, u.semantic_codes.len()), u.semantic_codes.clone())
                        .map_err(|e| Error::invalid("semantic codes", e.to_string()))?;
                    TokenGrid::new(codes, model.codebook_size, u.semantic_rate)?
                }
                _ => u.tokens.clone(),
            };
            let semantic_input = match variant {
                Variant::StageB => Some(interpolate_codes(&u.semantic_codes, u.frames())?),
                _ => None,
            };
            let semantic_target = match variant.skd_mode() {
                SkdMode::None => SemanticData::None,
                SkdMode::Discrete => SemanticData::Codes(u.semantic_codes.clone()),
                SkdMode::Continuous => SemanticData::Features(match variant.semantic_target() {
                    SemanticTarget::Layer => u.semantic_feats.clone(),
                    // the toy encoder has a single layer
                    SemanticTarget::LayerAverage => average_feature_layers(&[u.semantic_feats.view()])?,
                }),
            };
            Ok(TrainItem {
                id: u.id.clone(),
                phonemes: u.phonemes.clone(),
                speaker,
                tokens,
                semantic_input,
                semantic_target,
            })
        })
        .collect()
}

/// Per-item flags: `true` means the text is replaced by the unconditional
/// token. Speaker conditioning is never dropped.
pub fn apply_cfg_dropout(n_items: usize, p: f64, rng: &mut SeededRng) -> Result<Vec<bool>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid("cfg dropout", format!("p = {p} outside [0, 1]")));
    }
    Ok((0..n_items).map(|_| rng.bernoulli(p)).collect())
}

/// Where and how far [`Trainer::fit`] runs.
#[derive(Debug, Clone, Default)]
pub struct FitOptions {
    /// Directory for `metrics.csv` and checkpoints; nothing is written if
    /// unset.
    pub out_dir: Option<PathBuf>,
    /// Stop after this many total steps instead of `total_steps`.
    pub until_step: Option<usize>,
    /// Print each metrics row to stderr.
    pub verbose: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitSummary {
    pub final_step: usize,
    /// One entry per step taken in this call.
    pub losses: Vec<LossBreakdown>,
}

pub const METRICS_HEADER: &str = "step,lr,audio_ce,semantic,total";

/// CSV metrics log that survives resumption: rows past the resume step are
/// discarded before appending.
pub(crate) struct MetricsLog {
    file: Option<File>,
    verbose: bool,
}

impl MetricsLog {
    pub(crate) fn open(out_dir: Option<&Path>, header: &str, resume_step: usize, verbose: bool) -> Result<Self> {
        let Some(dir) = out_dir else {
            return Ok(Self { file: None, verbose });
        };
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("metrics.csv");
        let mut kept = vec![header.to_string()];
        if resume_step > 0 && path.exists() {
            let f = File::open(&path).map_err(|e| Error::io(&path, e))?;
            for line in BufReader::new(f).lines().skip(1) {
                let line = line.map_err(|e| Error::io(&path, e))?;
                let step: usize = line.split(',').next().and_then(|s| s.parse().ok()).unwrap_or(usize::MAX);
                if step <= resume_step {
                    kept.push(line);
                }
            }
        }
        fs::write(&path, kept.join("\n") + "\n").map_err(|e| Error::io(&path, e))?;
        let file = OpenOptions::new().append(true).open(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            file: Some(file),
            verbose,
        })
    }

    pub(crate) fn row(&mut self, fields: &[String]) -> Result<()> {
        let line = fields.join(",");
        if self.verbose {
            eprintln!("{line}");
        }
        if let Some(f) = self.file.as_mut() {
            writeln!(f, "{line}").map_err(|e| Error::io("metrics.csv", e))?;
        }
        Ok(())
    }
}

pub(crate) fn save_checkpoints(dir: &Path, ck: &Checkpoint) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    ck.save(&dir.join(format!("step-{:07}.ckpt", ck.step)))?;
    ck.save(&dir.join("latest.ckpt"))
}

pub(crate) fn batch_indices(seed: u64, step: usize, n_items: usize, batch_size: usize) -> Vec<usize> {
    let mut rng = SeededRng::split(seed, "batch", step as u64);
    rng.sample_indices(n_items, batch_size.min(n_items))
}

/// Training state of the token model.
#[derive(Debug, Clone)]
pub struct Trainer {
    variant: Variant,
    train: TrainConfig,
    net: Network,
    opt: AdamW,
    step: usize,
    grads: ParamStore,
}

impl Trainer {
    /// Fresh run; `model` and `train` are the shared base configs, adjusted
    /// here for `variant`.
    pub fn new(variant: Variant, model: &ModelConfig, train: &TrainConfig) -> Result<Self> {
        let (model, train) = variant.configure(model, train);
        train.validate()?;
        let net = Network::new(&model, train.seed)?;
        let opt = AdamW::new(net.params(), &train);
        let grads = net.params().zeros_like();
        Ok(Self {
            variant,
            train,
            net,
            opt,
            step: 0,
            grads,
        })
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        let CheckpointModel::Main { variant, model } = ck.header.model else {
            return Err(Error::invalid("checkpoint", "not a token-model checkpoint"));
        };
        let train = ck.header.train;
        train.validate()?;
        let net = Network::from_params(&model, ck.params)?;
        let mut opt = AdamW::new(net.params(), &train);
        if let Some(m) = ck.moments {
            if !net.params().same_layout(&m.m) || !net.params().same_layout(&m.v) {
                return Err(Error::invalid("checkpoint", "optimizer moments do not match parameters"));
            }
            opt.m = m.m;
            opt.v = m.v;
        }
        let grads = net.params().zeros_like();
        Ok(Self {
            variant,
            train,
            net,
            opt,
            step: ck.step,
            grads,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            header: CheckpointHeader {
                model: CheckpointModel::Main {
                    variant: self.variant,
                    model: self.net.config().clone(),
                },
                train: self.train.clone(),
            },
            step: self.step,
            params: self.net.params().clone(),
            moments: Some(AdamMoments {
                m: self.opt.m.clone(),
                v: self.opt.v.clone(),
            }),
        }
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn train_config(&self) -> &TrainConfig {
        &self.train
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn into_network(self) -> Network {
        self.net
    }

    /// Items prepared for this trainer's variant and model.
    pub fn prepare(&self, corpus: &[Utterance], speakers: &[SpeakerEmbedding]) -> Result<Vec<TrainItem>> {
        prepare_items(corpus, self.variant, self.net.config(), speakers)
    }

    /// One optimizer step on `batch`.
    pub fn train_step(&mut self, batch: &[&TrainItem]) -> Result<LossBreakdown> {
        if batch.is_empty() {
            return Err(Error::invalid("batch", "empty"));
        }
        let seed = self.train.seed;
        let step = self.step as u64;
        let uncond = apply_cfg_dropout(batch.len(), self.train.cfg_dropout_p, &mut SeededRng::split(seed, "cfg", step))?;
        let mut mask_rng = SeededRng::split(seed, "mask", step);
        let masks: Vec<MaskGrid> = batch
            .iter()
            .map(|it| sample_training_mask(it.tokens.layers(), it.tokens.frames(), &mut mask_rng).0)
            .collect();

        self.grads.fill_zero();
        let losses = loss_and_grad(&self.net, batch, &masks, &uncond, &self.train, &mut self.grads)?;
        if !losses.total.is_finite() || losses.total > DIVERGENCE_LOSS || !self.grads.all_finite() {
            return Err(Error::Diverged {
                step: self.step,
                loss: losses.total,
                batch_ids: batch.iter().map(|it| it.id.clone()).collect(),
            });
        }
        let lr = lr_at(self.step, &self.train);
        self.opt.update(self.net.params_mut(), &self.grads, lr, self.step + 1);
        self.step += 1;
        Ok(losses)
    }

    /// Trains until `total_steps` (or `until_step`), logging averaged losses
    /// every `log_interval` steps and checkpointing every
    /// `checkpoint_interval` steps and at the end.
    pub fn fit(&mut self, items: &[TrainItem], opts: &FitOptions) -> Result<FitSummary> {
        if items.is_empty() {
            return Err(Error::invalid("training corpus", "no utterances"));
        }
        let until = opts.until_step.unwrap_or(self.train.total_steps).min(self.train.total_steps);
        let out_dir = opts.out_dir.as_deref();
        let mut log = MetricsLog::open(out_dir, METRICS_HEADER, self.step, opts.verbose)?;
        let mut window = [0.0; 3];
        let mut window_len = 0;
        let mut losses = Vec::new();
        while self.step < until {
            let idx = batch_indices(self.train.seed, self.step, items.len(), self.train.batch_size);
            let batch: Vec<&TrainItem> = idx.iter().map(|&i| &items[i]).collect();
            let lr = lr_at(self.step, &self.train);
            let l = self.train_step(&batch)?;
            losses.push(l);
            window[0] += l.audio_ce;
            window[1] += l.semantic;
            window[2] += l.total;
            window_len += 1;
            if self.step % self.train.log_interval == 0 {
                let n = window_len as f64;
                log.row(&[
                    self.step.to_string(),
                    format!("{lr:.6e}"),
                    format!("{:.6}", window[0] / n),
                    format!("{:.6}", window[1] / n),
                    format!("{:.6}", window[2] / n),
                ])?;
                window = [0.0; 3];
                window_len = 0;
            }
            if let Some(dir) = out_dir {
                if self.step % self.train.checkpoint_interval == 0 || self.step == until {
                    save_checkpoints(dir, &self.checkpoint())?;
                }
            }
        }
        Ok(FitSummary {
            final_step: self.step,
            losses,
        })
    }
}

/// Batch loss with the given masks and dropout flags. Gradients of the total
/// loss are accumulated into `grads`.
pub fn loss_and_grad(
    net: &Network,
    batch: &[&TrainItem],
    masks: &[MaskGrid],
    uncond: &[bool],
    train: &TrainConfig,
    grads: &mut ParamStore,
) -> Result<LossBreakdown> {
    if batch.is_empty() || masks.len() != batch.len() || uncond.len() != batch.len() {
        return Err(Error::invalid("batch", "items, masks and dropout flags must be non-empty and equal in length"));
    }
    let (alpha, beta) = (train.alpha, train.beta);
    let b = batch.len() as f64;
    let mut audio_sum = 0.0;
    let mut semantic_sum = 0.0;
    let mut n_masked = 0;
    let shard = batch.len().div_ceil(train.grad_accum_steps.max(1));
    for start in (0..batch.len()).step_by(shard) {
        let end = (start + shard).min(batch.len());
        let inputs: Vec<NetworkInput<'_>> = (start..end)
            .map(|i| NetworkInput {
                prefix: if uncond[i] { Prefix::Uncond } else { Prefix::Phonemes(&batch[i].phonemes) },
                tokens: &batch[i].tokens,
                mask: &masks[i],
                speaker: &batch[i].speaker,
                semantic_codes: batch[i].semantic_input.as_deref(),
            })
            .collect();
        let (outputs, cache) = net.forward_train(&inputs)?;
        let mut out_grads = Vec::with_capacity(outputs.len());
        for (j, out) in outputs.iter().enumerate() {
            let item = batch[start + j];
            let mask = &masks[start + j];
            let (ce, mut g_audio) = masked_cross_entropy_grad(&out.audio_logits, &item.tokens, mask)?;
            g_audio *= alpha / b;
            audio_sum += ce;
            n_masked += mask.count();
            let g_sem = match (&item.semantic_target, &out.semantic) {
                (SemanticData::None, None) => None,
                (SemanticData::Codes(codes), Some(SemanticOutput::Logits(logits))) => {
                    let (l, g) = semantic_ce_grad(logits, codes)?;
                    semantic_sum += l;
                    Some(g * (beta / b))
                }
                (SemanticData::Features(feats), Some(SemanticOutput::Features(pred))) => {
                    let (l, g) = semantic_cosine_grad(pred, feats)?;
                    semantic_sum += l.loss;
                    Some(g * (beta / b))
                }
                _ => return Err(Error::invalid("train item", "semantic target does not match the model head")),
            };
            out_grads.push(OutputGrad {
                audio_logits: g_audio,
                semantic: g_sem,
            });
        }
        net.backward(&cache, &out_grads, grads)?;
    }

    Ok(combined_loss(audio_sum / b, semantic_sum / b, alpha, beta, n_masked))
}

/// Fraction of masked cells whose argmax prediction is correct, over
/// `draws` random training masks per item.
pub fn masked_accuracy(net: &Network, items: &[TrainItem], seed: u64, draws: usize) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for (i, item) in items.iter().enumerate() {
        let mut rng = SeededRng::split(seed, "accuracy", i as u64);
        for _ in 0..draws {
            let (mask, _) = sample_training_mask(item.tokens.layers(), item.tokens.frames(), &mut rng);
            let out = net.forward(&NetworkInput {
                prefix: Prefix::Phonemes(&item.phonemes),
                tokens: &item.tokens,
                mask: &mask,
                speaker: &item.speaker,
                semantic_codes: item.semantic_input.as_deref(),
            })?;
            for ((k, t), &m) in mask.as_array().indexed_iter() {
                if !m {
                    continue;
                }
                let row = out.audio_logits.index_axis(Axis(0), k);
                let row = row.row(t);
                let best = row
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(v, _)| v)
                    .unwrap();
                correct += usize::from(best as u32 == item.tokens.get(k, t));
                total += 1;
            }
        }
    }
    Ok(correct as f64 / total.max(1) as f64)
}

/// Reads `latest.ckpt` from `dir`, if any.
pub fn latest_checkpoint(dir: &Path) -> Result<Option<Checkpoint>> {
    let path = dir.join("latest.ckpt");
    if path.exists() {
        Checkpoint::load(&path).map(Some)
    } else {
        Ok(None)
    }
}
