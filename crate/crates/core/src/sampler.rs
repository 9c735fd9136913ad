//! Iterative parallel decoding: start fully masked, and at every step reveal
//! the most confident sampled tokens until nothing is masked.

use ndarray::{s, Array2, Array3};
use serde::Serialize;

use crate::config::SamplerConfig;
use crate::error::{Error, Result};
use crate::masking::build_unmask_plan;
use crate::nn::ops::softmax_inplace;
use crate::nn::{Network, NetworkInput, Prefix};
use crate::objectives::interpolate_codes;
use crate::rng::SeededRng;
use crate::types::{MaskGrid, PhonemeSeq, Rate, SpeakerEmbedding, TokenGrid};

/// Linear guidance ramp; `start` when there is a single step.
pub fn guidance_level(i: usize, n_steps: usize, cfg: &SamplerConfig) -> f64 {
    if n_steps <= 1 {
        return cfg.guidance_start;
    }
    cfg.guidance_start + (cfg.guidance_end - cfg.guidance_start) * i as f64 / (n_steps - 1) as f64
}

/// Linear logit-noise variance ramp; `end` when there is a single step.
pub fn noise_variance(i: usize, n_steps: usize, cfg: &SamplerConfig) -> f64 {
    if n_steps <= 1 {
        return cfg.noise_var_end;
    }
    let v = cfg.noise_var_start + (cfg.noise_var_end - cfg.noise_var_start) * i as f64 / (n_steps - 1) as f64;
    v.max(0.0)
}

/// `(1 - w) * uncond + w * cond`, which returns either input exactly at
/// `w = 0` or `w = 1`.
pub fn cfg_combine(cond: &Array3<f64>, uncond: &Array3<f64>, w: f64) -> Result<Array3<f64>> {
    if cond.dim() != uncond.dim() {
        return Err(Error::shape("guidance logits", cond.dim(), uncond.dim()));
    }
    let mut out = uncond.mapv(|u| (1.0 - w) * u);
    out.zip_mut_with(cond, |o, &c| *o += w * c);
    Ok(out)
}

/// Partially decoded grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeState {
    /// Values at masked cells are placeholders.
    pub tokens: TokenGrid,
    pub mask: MaskGrid,
}

impl DecodeState {
    pub fn fully_masked(layers: usize, frames: usize, vocab: usize, frame_rate: Rate) -> Result<Self> {
        let tokens = TokenGrid::new(Array2::zeros((layers, frames)), vocab, frame_rate)?;
        Ok(Self {
            tokens,
            mask: MaskGrid::all(layers, frames),
        })
    }
}

/// Reveals the `n_to_unmask` most confident masked cells.
///
/// Every masked cell draws a candidate from `softmax(logits + noise)`; its
/// confidence is the probability of that candidate. Ties go to the smaller
/// `(layer, frame)`. Unmasked cells are never touched.
pub fn step_unmask(
    state: &mut DecodeState,
    logits: &Array3<f64>,
    n_to_unmask: usize,
    noise_var: f64,
    rng: &mut SeededRng,
) -> Result<()> {
    let (k, t) = state.mask.dim();
    let v = state.tokens.vocab();
    if logits.dim() != (k, t, v) {
        return Err(Error::shape("step logits", (k, t, v), logits.dim()));
    }
    let masked = state.mask.count();
    if n_to_unmask > masked {
        return Err(Error::invalid(
            "unmask count",
            format!("{n_to_unmask} exceeds the {masked} masked cells"),
        ));
    }
    if !(noise_var >= 0.0) {
        return Err(Error::invalid("noise variance", format!("{noise_var} must be >= 0")));
    }
    let std = noise_var.sqrt();
    let mut candidates = Vec::with_capacity(masked);
    let mut probs = vec![0.0; v];
    for layer in 0..k {
        for frame in 0..t {
            if !state.mask.is_masked(layer, frame) {
                continue;
            }
            for (p, &x) in probs.iter_mut().zip(logits.slice(s![layer, frame, ..])) {
                *p = if std > 0.0 { x + std * rng.normal() } else { x };
            }
            softmax_inplace(ndarray::ArrayViewMut1::from(&mut probs[..]));
            let token = rng.categorical(&probs);
            candidates.push((probs[token], layer, frame, token as u32));
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    for &(_, layer, frame, token) in candidates.iter().take(n_to_unmask) {
        state.tokens.set(layer, frame, token);
        state.mask.set(layer, frame, false);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    /// Decoding stage, 0 unless two-stage.
    pub stage: usize,
    pub step: usize,
    pub masked_before: usize,
    pub unmasked: usize,
    pub guidance: f64,
    pub noise_variance: f64,
    pub forward_passes: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DecodeTrace {
    pub steps: Vec<StepRecord>,
}

impl DecodeTrace {
    pub fn forward_passes(&self) -> usize {
        self.steps.iter().map(|s| s.forward_passes).sum()
    }
}

struct Job<'a> {
    phonemes: &'a PhonemeSeq,
    speaker: &'a SpeakerEmbedding,
    frames: usize,
    frame_rate: Rate,
    semantic_codes: Option<&'a [u32]>,
    stage: usize,
}

fn run_decode(net: &Network, job: Job<'_>, cfg: &SamplerConfig, rng: &mut SeededRng, trace: &mut DecodeTrace) -> Result<TokenGrid> {
    cfg.validate()?;
    if job.frames == 0 {
        return Err(Error::invalid("frames", "must be >= 1"));
    }
    let mc = net.config();
    let mut state = DecodeState::fully_masked(mc.n_codebooks, job.frames, mc.codebook_size, job.frame_rate)?;
    let plan = build_unmask_plan(mc.n_codebooks * job.frames, cfg.n_steps)?;
    for i in 0..cfg.n_steps {
        let cond = NetworkInput {
            prefix: Prefix::Phonemes(job.phonemes),
            tokens: &state.tokens,
            mask: &state.mask,
            speaker: job.speaker,
            semantic_codes: job.semantic_codes,
        };
        let w = guidance_level(i, cfg.n_steps, cfg);
        let (logits, passes) = if cfg.use_cfg {
            let uncond = NetworkInput {
                prefix: Prefix::Uncond,
                ..cond
            };
            let mut out = net.forward_batch(&[cond, uncond])?;
            let u = out.pop().unwrap().audio_logits;
            let c = out.pop().unwrap().audio_logits;
            (cfg_combine(&c, &u, w)?, 2)
        } else {
            (net.forward(&cond)?.audio_logits, 1)
        };
        let noise = noise_variance(i, cfg.n_steps, cfg);
        let masked_before = state.mask.count();
        let n = plan.unmask_count(i);
        step_unmask(&mut state, &logits, n, noise, rng)?;
        trace.steps.push(StepRecord {
            stage: job.stage,
            step: i,
            masked_before,
            unmasked: n,
            guidance: if cfg.use_cfg { w } else { 1.0 },
            noise_variance: noise,
            forward_passes: passes,
        });
    }
    debug_assert_eq!(state.mask.count(), 0);
    Ok(state.tokens)
}

/// Decodes a `K x frames` grid for `phonemes` in `speaker`'s voice.
pub fn decode(
    net: &Network,
    phonemes: &PhonemeSeq,
    speaker: &SpeakerEmbedding,
    frames: usize,
    frame_rate: Rate,
    cfg: &SamplerConfig,
    rng: &mut SeededRng,
) -> Result<(TokenGrid, DecodeTrace)> {
    if net.config().semantic_conditioning {
        return Err(Error::invalid("network", "semantically conditioned model needs decode_two_stage"));
    }
    let mut trace = DecodeTrace::default();
    let job = Job {
        phonemes,
        speaker,
        frames,
        frame_rate,
        semantic_codes: None,
        stage: 0,
    };
    let grid = run_decode(net, job, cfg, rng, &mut trace)?;
    Ok((grid, trace))
}

/// Output of [`decode_two_stage`].
#[derive(Debug, Clone, PartialEq)]
pub struct TwoStageOutput {
    pub tokens: TokenGrid,
    /// Stage-A semantic codes at the semantic rate.
    pub semantic_codes: Vec<u32>,
    pub trace: DecodeTrace,
}

/// Text to semantic codes with `stage_a`, then codes (resampled to `frames`)
/// plus text to audio tokens with `stage_b`.
#[allow(clippy::too_many_arguments)]
pub fn decode_two_stage(
    stage_a: &Network,
    stage_b: &Network,
    phonemes: &PhonemeSeq,
    speaker: &SpeakerEmbedding,
    semantic_frames: usize,
    frames: usize,
    frame_rate: Rate,
    cfg: &SamplerConfig,
    rng: &mut SeededRng,
) -> Result<TwoStageOutput> {
    let a = stage_a.config();
    if a.n_codebooks != 1 || a.codebook_size != stage_b.config().semantic_vocab {
        return Err(Error::invalid(
            "stage A network",
            "needs one layer over the stage-B semantic vocabulary",
        ));
    }
    if !stage_b.config().semantic_conditioning {
        return Err(Error::invalid("stage B network", "is not semantically conditioned"));
    }
    let semantic_rate = Rate::new(frame_rate.num, frame_rate.den * 2);
    let mut trace = DecodeTrace::default();
    let job_a = Job {
        phonemes,
        speaker,
        frames: semantic_frames,
        frame_rate: semantic_rate,
        semantic_codes: None,
        stage: 0,
    };
    let codes = run_decode(stage_a, job_a, cfg, rng, &mut trace)?.layer(0).to_vec();
    let aligned = interpolate_codes(&codes, frames)?;
    let job_b = Job {
        phonemes,
        speaker,
        frames,
        frame_rate,
        semantic_codes: Some(&aligned),
        stage: 1,
    };
    let tokens = run_decode(stage_b, job_b, cfg, rng, &mut trace)?;
    Ok(TwoStageOutput {
        tokens,
        semantic_codes: codes,
        trace,
    })
}
