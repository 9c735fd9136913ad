//! Trains the base, codes and feats variants with the same seed and compares
//! held-out phoneme error rates.
//!
//! cargo run --release --example semantic_distillation -- [steps] [seed]

use matm_tts::config::{ModelConfig, SamplerConfig, TrainConfig, Variant};
use matm_tts::eval::{evaluate, EvalReport, EvalSettings, LengthMode, Pipeline};
use matm_tts::toy_world::{gen_corpus, speaker_table, ToyWorldSpec};
use matm_tts::trainer::{FitOptions, Trainer};
use matm_tts::Split;

fn main() -> matm_tts::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps = args.next().and_then(|s| s.parse().ok()).unwrap_or(3000);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let spec = ToyWorldSpec {
        n_utterances: 256,
        ..ToyWorldSpec::toy()
    };
    let train_set = gen_corpus(&spec, Split::Train)?;
    let test_set = gen_corpus(&ToyWorldSpec { n_utterances: 64, ..spec.clone() }, Split::Test)?;
    let speakers = speaker_table(&spec);
    let cfg = TrainConfig {
        total_steps: steps,
        seed,
        ..TrainConfig::toy()
    };
    let settings = EvalSettings {
        spec: &spec,
        enrollment_pool: &train_set,
        sampler: SamplerConfig { seed, ..SamplerConfig::default() },
        seed,
    };

    let mut report = EvalReport::default();
    for variant in [Variant::Base, Variant::Codes, Variant::Feats] {
        let mut trainer = Trainer::new(variant, &ModelConfig::toy(), &cfg)?;
        let items = trainer.prepare(&train_set, &speakers)?;
        let summary = trainer.fit(&items, &FitOptions::default())?;
        let last = summary.losses.last().unwrap();
        println!(
            "{:<6} final audio CE {:.4}, semantic {:.4}",
            variant.name(),
            last.audio_ce,
            last.semantic
        );
        let net = trainer.into_network();
        report.extend(evaluate(variant.name(), Pipeline::OneStage(&net), None, &[LengthMode::Oracle], &test_set, &settings)?);
    }
    print!("\n{}", report.to_table());
    Ok(())
}
