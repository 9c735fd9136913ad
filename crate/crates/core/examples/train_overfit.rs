//! Overfits the base variant on 64 toy utterances, then decodes them with
//! oracle lengths and scores them with the toy oracles.
//!
//! cargo run --release --example train_overfit -- [steps]

use std::time::Instant;

use matm_tts::config::{ModelConfig, SamplerConfig, TrainConfig, Variant};
use matm_tts::eval::{evaluate, EvalSettings, LengthMode, Pipeline};
use matm_tts::toy_world::{gen_corpus, speaker_table, ToyWorldSpec};
use matm_tts::trainer::{masked_accuracy, FitOptions, Trainer};
use matm_tts::Split;

fn main() -> matm_tts::Result<()> {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5000);
    let spec = ToyWorldSpec::toy();
    let corpus = gen_corpus(&spec, Split::Train)?;
    let train = TrainConfig {
        total_steps: steps,
        warmup_steps: TrainConfig::toy().warmup_steps.min(steps / 2),
        ..TrainConfig::toy()
    };
    let mut trainer = Trainer::new(Variant::Base, &ModelConfig::toy(), &train)?;
    let items = trainer.prepare(&corpus, &speaker_table(&spec))?;

    let start = Instant::now();
    let summary = trainer.fit(&items, &FitOptions::default())?;
    for (i, l) in summary.losses.iter().enumerate().step_by((steps / 10).max(1)) {
        println!("step {i:5}  loss {:.4}", l.total);
    }
    println!("trained {steps} steps in {:.0?}", start.elapsed());

    let net = trainer.into_network();
    println!("masked accuracy on train: {:.4}", masked_accuracy(&net, &items, 1, 4)?);
    let settings = EvalSettings {
        spec: &spec,
        enrollment_pool: &corpus,
        sampler: SamplerConfig::default(),
        seed: 0,
    };
    let report = evaluate("base", Pipeline::OneStage(&net), None, &[LengthMode::Oracle], &corpus, &settings)?;
    print!("{}", report.to_table());
    Ok(())
}
