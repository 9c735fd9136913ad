//! Trains both stages of the semantic-token baseline and decodes through
//! them.
//!
//! cargo run --release --example two_stage_baseline -- [steps]

use matm_tts::config::{ModelConfig, SamplerConfig, TrainConfig, Variant};
use matm_tts::eval::{evaluate, EvalSettings, LengthMode, Pipeline};
use matm_tts::toy_world::{gen_corpus, speaker_table, ToyWorldSpec};
use matm_tts::trainer::{FitOptions, Trainer};
use matm_tts::Split;

fn main() -> matm_tts::Result<()> {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let spec = ToyWorldSpec::toy();
    let corpus = gen_corpus(&spec, Split::Train)?;
    let speakers = speaker_table(&spec);
    let cfg = TrainConfig {
        total_steps: steps,
        ..TrainConfig::toy()
    };

    let mut stages = Vec::new();
    for variant in [Variant::StageA, Variant::StageB] {
        let mut trainer = Trainer::new(variant, &ModelConfig::toy(), &cfg)?;
        let items = trainer.prepare(&corpus, &speakers)?;
        let summary = trainer.fit(&items, &FitOptions::default())?;
        println!("{}: final loss {:.4}", variant.name(), summary.losses.last().unwrap().total);
        stages.push(trainer.into_network());
    }

    let settings = EvalSettings {
        spec: &spec,
        enrollment_pool: &corpus,
        sampler: SamplerConfig::default(),
        seed: 0,
    };
    let pipeline = Pipeline::TwoStage {
        stage_a: &stages[0],
        stage_b: &stages[1],
    };
    let report = evaluate("two-stage", pipeline, None, &[LengthMode::Oracle], &corpus[..16], &settings)?;
    print!("{}", report.to_table());
    Ok(())
}
