use crate::checkpoint::{AdamMoments, Checkpoint, CheckpointHeader, CheckpointModel};
use crate::config::{DurationConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::nn::{DurationNet, ParamStore};
use crate::objectives::huber_log_duration_grad;
use crate::types::{PhonemeSeq, Split, Utterance};

use super::{batch_indices, lr_at, save_checkpoints, AdamW, FitOptions, MetricsLog, DIVERGENCE_LOSS};

pub const DURATION_METRICS_HEADER: &str = "step,lr,huber";

#[derive(Debug, Clone, PartialEq)]
pub struct DurationItem {
    pub id: String,
    pub phonemes: PhonemeSeq,
    pub duration_s: f64,
}

impl DurationItem {
    /// Duration targets from a corpus; test-split utterances are rejected.
    pub fn from_corpus(corpus: &[Utterance]) -> Result<Vec<Self>> {
        corpus
            .iter()
            .map(|u| {
                if u.split == Split::Test {
                    return Err(Error::invalid(
                        "training corpus",
                        format!("utterance {} belongs to the test split", u.id),
                    ));
                }
                Ok(Self {
                    id: u.id.clone(),
                    phonemes: u.phonemes.clone(),
                    duration_s: u.duration_s,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct DurationTrainer {
    train: TrainConfig,
    net: DurationNet,
    opt: AdamW,
    step: usize,
    grads: ParamStore,
}

impl DurationTrainer {
    pub fn new(model: &DurationConfig, train: &TrainConfig) -> Result<Self> {
        train.validate()?;
        let net = DurationNet::new(model, train.seed)?;
        let opt = AdamW::new(net.params(), train);
        let grads = net.params().zeros_like();
        Ok(Self {
            train: train.clone(),
            net,
            opt,
            step: 0,
            grads,
        })
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        let CheckpointModel::Duration { model } = ck.header.model else {
            return Err(Error::invalid("checkpoint", "not a duration checkpoint"));
        };
        let mut tr = Self::new(&model, &ck.header.train)?;
        tr.net = DurationNet::from_params(&model, ck.params)?;
        if let Some(m) = ck.moments {
            if !tr.net.params().same_layout(&m.m) || !tr.net.params().same_layout(&m.v) {
                return Err(Error::invalid("checkpoint", "optimizer moments do not match parameters"));
            }
            tr.opt.m = m.m;
            tr.opt.v = m.v;
        }
        tr.step = ck.step;
        Ok(tr)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            header: CheckpointHeader {
                model: CheckpointModel::Duration {
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

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn network(&self) -> &DurationNet {
        &self.net
    }

    pub fn into_network(self) -> DurationNet {
        self.net
    }

    /// One optimizer step; returns the mean Huber loss of the batch.
    pub fn train_step(&mut self, batch: &[&DurationItem]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::invalid("batch", "empty"));
        }
        let seqs: Vec<&PhonemeSeq> = batch.iter().map(|it| &it.phonemes).collect();
        let (preds, cache) = self.net.forward_train(&seqs)?;
        let b = batch.len() as f64;
        let mut loss = 0.0;
        let mut dpred = Vec::with_capacity(batch.len());
        for (p, it) in preds.iter().zip(batch) {
            let (l, g) = huber_log_duration_grad(*p, it.duration_s, self.train.huber_delta)?;
            loss += l / b;
            dpred.push(g / b);
        }
        self.grads.fill_zero();
        self.net.backward(&cache, &dpred, &mut self.grads)?;
        if !loss.is_finite() || loss > DIVERGENCE_LOSS || !self.grads.all_finite() {
            return Err(Error::Diverged {
                step: self.step,
                loss,
                batch_ids: batch.iter().map(|it| it.id.clone()).collect(),
            });
        }
        let lr = lr_at(self.step, &self.train);
        self.opt.update(self.net.params_mut(), &self.grads, lr, self.step + 1);
        self.step += 1;
        Ok(loss)
    }

    /// Same loop as the token trainer, logging `step,lr,huber`.
    pub fn fit(&mut self, items: &[DurationItem], opts: &FitOptions) -> Result<Vec<f64>> {
        if items.is_empty() {
            return Err(Error::invalid("training corpus", "no utterances"));
        }
        let until = opts.until_step.unwrap_or(self.train.total_steps).min(self.train.total_steps);
        let out_dir = opts.out_dir.as_deref();
        let mut log = MetricsLog::open(out_dir, DURATION_METRICS_HEADER, self.step, opts.verbose)?;
        let mut window = 0.0;
        let mut window_len = 0;
        let mut losses = Vec::new();
        while self.step < until {
            let idx = batch_indices(self.train.seed, self.step, items.len(), self.train.batch_size);
            let batch: Vec<&DurationItem> = idx.iter().map(|&i| &items[i]).collect();
            let lr = lr_at(self.step, &self.train);
            let l = self.train_step(&batch)?;
            losses.push(l);
            window += l;
            window_len += 1;
            if self.step % self.train.log_interval == 0 {
                log.row(&[
                    self.step.to_string(),
                    format!("{lr:.6e}"),
                    format!("{:.6}", window / window_len as f64),
                ])?;
                window = 0.0;
                window_len = 0;
            }
            if let Some(dir) = out_dir {
                if self.step % self.train.checkpoint_interval == 0 || self.step == until {
                    save_checkpoints(dir, &self.checkpoint())?;
                }
            }
        }
        Ok(losses)
    }
}

/// Median of `|exp(pred) - true| / true` over `items`.
pub fn median_relative_error(net: &DurationNet, items: &[DurationItem]) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::invalid("duration evaluation", "no utterances"));
    }
    let mut errs = Vec::with_capacity(items.len());
    for chunk in items.chunks(32) {
        let seqs: Vec<&PhonemeSeq> = chunk.iter().map(|it| &it.phonemes).collect();
        for (p, it) in net.forward_batch(&seqs)?.into_iter().zip(chunk) {
            errs.push((p.exp() - it.duration_s).abs() / it.duration_s);
        }
    }
    errs.sort_by(f64::total_cmp);
    let n = errs.len();
    Ok(if n % 2 == 1 {
        errs[n / 2]
    } else {
        0.5 * (errs[n / 2 - 1] + errs[n / 2])
    })
}
