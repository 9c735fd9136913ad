//! Intelligibility and speaker metrics through the toy oracles, experiment
//! reports, and the decode-cost benchmark.

use std::fmt::Write as _;
use std::time::Instant;

use serde::Serialize;

use crate::config::{SamplerConfig, SkdMode};
use crate::error::{Error, Result};
use crate::nn::{predicted_frames, DurationNet, Network};
use crate::rng::SeededRng;
use crate::sampler::{decode, decode_two_stage, DecodeTrace};
use crate::toy_world::{enrollment_average, oracle_decode_phonemes, oracle_speaker_consistency, toy_speaker_encoder, ToyWorldSpec};
use crate::types::{round_half_away, PhonemeSeq, Rate, SpeakerEmbedding, Split, TokenGrid, Utterance};

/// Utterances averaged into each target speaker's conditioning vector.
pub const ENROLLMENT_SIZE: usize = 3;
/// Benchmark buckets in seconds.
pub const BENCH_BUCKETS_S: [f64; 4] = [4.0, 8.0, 12.0, 16.0];

pub fn levenshtein(a: &[u32], b: &[u32]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit distance over reference length. May exceed 1 with many insertions.
pub fn phoneme_error_rate(hyp: &[u32], reference: &PhonemeSeq) -> f64 {
    levenshtein(hyp, reference.ids()) as f64 / reference.len() as f64
}

/// How the number of frames to decode is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LengthMode {
    /// Ground-truth frame count.
    Oracle,
    /// From the duration predictor.
    Predicted,
}

impl LengthMode {
    pub fn as_str(self) -> &'static str {
        match self {
            LengthMode::Oracle => "oracle",
            LengthMode::Predicted => "predicted",
        }
    }
}

/// A decoder under evaluation.
#[derive(Debug, Clone, Copy)]
pub enum Pipeline<'a> {
    OneStage(&'a Network),
    TwoStage { stage_a: &'a Network, stage_b: &'a Network },
}

impl Pipeline<'_> {
    fn skd_mode(&self) -> SkdMode {
        match self {
            Pipeline::OneStage(n) => n.config().skd_mode,
            Pipeline::TwoStage { stage_b, .. } => stage_b.config().skd_mode,
        }
    }

    /// Decodes `frames` frames; returns the grid and its trace.
    pub fn generate(
        &self,
        phonemes: &PhonemeSeq,
        speaker: &SpeakerEmbedding,
        frames: usize,
        frame_rate: Rate,
        cfg: &SamplerConfig,
        rng: &mut SeededRng,
    ) -> Result<(TokenGrid, DecodeTrace)> {
        match *self {
            Pipeline::OneStage(net) => decode(net, phonemes, speaker, frames, frame_rate, cfg, rng),
            Pipeline::TwoStage { stage_a, stage_b } => {
                let out = decode_two_stage(stage_a, stage_b, phonemes, speaker, frames.div_ceil(2), frames, frame_rate, cfg, rng)?;
                Ok((out.tokens, out.trace))
            }
        }
    }
}

/// Per-utterance evaluation record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UtteranceResult {
    pub id: String,
    pub length_mode: LengthMode,
    pub frames: usize,
    pub true_frames: usize,
    pub per: f64,
    pub speaker_consistency: f64,
    /// Index of the decode substream, `split(seed, "decode", index)`.
    pub decode_stream: u64,
    pub forward_passes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub variant: String,
    pub skd_mode: SkdMode,
    pub length_mode: LengthMode,
    pub n: usize,
    pub phoneme_error_rate: f64,
    pub speaker_consistency: f64,
    /// Mean `|T - T_true| / T_true`.
    pub duration_error: f64,
    pub forward_passes: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub utterances: Vec<(String, UtteranceResult)>,
}

impl EvalReport {
    pub fn extend(&mut self, other: EvalReport) {
        self.rows.extend(other.rows);
        self.utterances.extend(other.utterances);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,skd_mode,length_mode,n,per,speaker_consistency,duration_error,forward_passes\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{:.6},{:.6},{:.6},{:.1}",
                r.variant,
                skd_name(r.skd_mode),
                r.length_mode.as_str(),
                r.n,
                r.phoneme_error_rate,
                r.speaker_consistency,
                r.duration_error,
                r.forward_passes
            );
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<10} {:<10} {:<10} {:>8} {:>12} {:>9} {:>9}\n",
            "variant", "skd", "length", "PER", "consistency", "dur.err", "passes"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<10} {:<10} {:<10} {:>8.4} {:>12.4} {:>9.4} {:>9.1}",
                r.variant,
                skd_name(r.skd_mode),
                r.length_mode.as_str(),
                r.phoneme_error_rate,
                r.speaker_consistency,
                r.duration_error,
                r.forward_passes
            );
        }
        out
    }
}

fn skd_name(m: SkdMode) -> &'static str {
    match m {
        SkdMode::None => "none",
        SkdMode::Discrete => "discrete",
        SkdMode::Continuous => "continuous",
    }
}

/// Conditioning vector for `speaker_id`: the renormalized mean of the toy
/// speaker encoder over `ENROLLMENT_SIZE` train utterances of that speaker,
/// picked with `split(seed, "enroll", speaker_id)`.
pub fn enroll_speaker(speaker_id: usize, pool: &[Utterance], spec: &ToyWorldSpec, seed: u64) -> Result<SpeakerEmbedding> {
    let own: Vec<&Utterance> = pool
        .iter()
        .filter(|u| u.speaker_id == speaker_id && u.split == Split::Train)
        .collect();
    if own.is_empty() {
        return Err(Error::invalid("enrollment", format!("no train utterances for speaker {speaker_id}")));
    }
    let mut rng = SeededRng::split(seed, "enroll", speaker_id as u64);
    let picks = rng.sample_indices(own.len(), ENROLLMENT_SIZE.min(own.len()));
    let embs = picks
        .iter()
        .map(|&i| toy_speaker_encoder(&own[i].tokens, spec))
        .collect::<Result<Vec<_>>>()?;
    enrollment_average(&embs)
}

/// Shared settings of an evaluation run.
#[derive(Debug, Clone)]
pub struct EvalSettings<'a> {
    pub spec: &'a ToyWorldSpec,
    /// Train-split utterances used for enrollment.
    pub enrollment_pool: &'a [Utterance],
    pub sampler: SamplerConfig,
    pub seed: u64,
}

/// Decodes every utterance of `test` once per requested length mode and
/// aggregates oracle PER and speaker consistency.
pub fn evaluate(
    label: &str,
    pipeline: Pipeline<'_>,
    duration: Option<&DurationNet>,
    modes: &[LengthMode],
    test: &[Utterance],
    settings: &EvalSettings<'_>,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::invalid("evaluation corpus", "no utterances"));
    }
    if modes.contains(&LengthMode::Predicted) && duration.is_none() {
        return Err(Error::invalid(
            "evaluation",
            "predicted-length mode needs a duration checkpoint",
        ));
    }
    let spec = settings.spec;
    let mut enrolled: Vec<Option<SpeakerEmbedding>> = vec![None; spec.n_speakers];
    let mut report = EvalReport::default();
    for &mode in modes {
        let mut results = Vec::with_capacity(test.len());
        for (i, u) in test.iter().enumerate() {
            let slot = enrolled
                .get_mut(u.speaker_id)
                .ok_or_else(|| Error::invalid("speaker", format!("{} outside the toy world", u.speaker_id)))?;
            if slot.is_none() {
                *slot = Some(enroll_speaker(u.speaker_id, settings.enrollment_pool, spec, settings.seed)?);
            }
            let speaker = slot.as_ref().unwrap();
            let frames = match mode {
                LengthMode::Oracle => u.frames(),
                LengthMode::Predicted => predicted_frames(duration.unwrap().forward(&u.phonemes)?, spec.frame_rate),
            };
            let mut rng = SeededRng::split(settings.seed, "decode", i as u64);
            let (grid, trace) = pipeline.generate(&u.phonemes, speaker, frames, spec.frame_rate, &settings.sampler, &mut rng)?;
            let hyp = oracle_decode_phonemes(&grid, spec.n_phonemes);
            results.push(UtteranceResult {
                id: u.id.clone(),
                length_mode: mode,
                frames,
                true_frames: u.frames(),
                per: phoneme_error_rate(hyp.ids(), &u.phonemes),
                speaker_consistency: oracle_speaker_consistency(&grid, u.speaker_id, spec),
                decode_stream: i as u64,
                forward_passes: trace.forward_passes(),
            });
        }
        let n = results.len() as f64;
        let mean = |f: &dyn Fn(&UtteranceResult) -> f64| results.iter().map(f).sum::<f64>() / n;
        report.rows.push(EvalRow {
            variant: label.to_string(),
            skd_mode: pipeline.skd_mode(),
            length_mode: mode,
            n: results.len(),
            phoneme_error_rate: mean(&|r| r.per.min(1.0)),
            speaker_consistency: mean(&|r| r.speaker_consistency),
            duration_error: mean(&|r| (r.frames as f64 - r.true_frames as f64).abs() / r.true_frames as f64),
            forward_passes: mean(&|r| r.forward_passes as f64),
        });
        report.utterances.extend(results.into_iter().map(|r| (label.to_string(), r)));
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub bucket_s: f64,
    pub frames: usize,
    pub one_stage_passes: usize,
    pub two_stage_passes: usize,
    pub one_stage_median_s: f64,
    pub two_stage_median_s: f64,
}

impl BenchRow {
    pub fn pass_ratio(&self) -> f64 {
        self.two_stage_passes as f64 / self.one_stage_passes as f64
    }
}

pub fn bench_to_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("bucket_s,frames,one_stage_passes,two_stage_passes,pass_ratio,one_stage_median_s,two_stage_median_s\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{:.3},{:.6},{:.6}",
            r.bucket_s,
            r.frames,
            r.one_stage_passes,
            r.two_stage_passes,
            r.pass_ratio(),
            r.one_stage_median_s,
            r.two_stage_median_s
        );
    }
    out
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Times one-stage against two-stage decoding at every bucket length and
/// checks the forward-pass ratio is exactly 2.
#[allow(clippy::too_many_arguments)]
pub fn bench(
    one_stage: &Network,
    stage_a: &Network,
    stage_b: &Network,
    phonemes: &PhonemeSeq,
    speaker: &SpeakerEmbedding,
    frame_rate: Rate,
    buckets_s: &[f64],
    runs: usize,
    cfg: &SamplerConfig,
) -> Result<Vec<BenchRow>> {
    if runs == 0 {
        return Err(Error::invalid("bench", "runs must be >= 1"));
    }
    let one = Pipeline::OneStage(one_stage);
    let two = Pipeline::TwoStage { stage_a, stage_b };
    let mut rows = Vec::with_capacity(buckets_s.len());
    for (b, &secs) in buckets_s.iter().enumerate() {
        let frames = round_half_away(secs * frame_rate.hz()) as usize;
        let mut times = [Vec::with_capacity(runs), Vec::with_capacity(runs)];
        let mut passes = [0; 2];
        for run in 0..runs {
            // alternate the order so drift affects both pipelines alike
            let order = if run % 2 == 0 { [0, 1] } else { [1, 0] };
            for which in order {
                let p = if which == 0 { one } else { two };
                let mut rng = SeededRng::split(cfg.seed, "bench", (b * runs + run) as u64);
                let start = Instant::now();
                let (_, trace) = p.generate(phonemes, speaker, frames, frame_rate, cfg, &mut rng)?;
                times[which].push(start.elapsed().as_secs_f64());
                passes[which] = trace.forward_passes();
            }
        }
        if passes[1] != 2 * passes[0] {
            return Err(Error::invalid(
                "bench",
                format!("forward-pass counts {} vs {} are not in ratio 2", passes[1], passes[0]),
            ));
        }
        let [t1, t2] = times;
        rows.push(BenchRow {
            bucket_s: secs,
            frames,
            one_stage_passes: passes[0],
            two_stage_passes: passes[1],
            one_stage_median_s: median(t1),
            two_stage_median_s: median(t2),
        });
    }
    Ok(rows)
}
