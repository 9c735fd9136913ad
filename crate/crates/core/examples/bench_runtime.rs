//! Wall-clock and forward-pass comparison of one-stage and two-stage
//! decoding at 4, 8, 12 and 16 seconds of toy audio.
//!
//! cargo run --release --example bench_runtime -- [runs] [steps]

use matm_tts::config::{ModelConfig, TrainConfig, Variant};
use matm_tts::eval::{bench, bench_to_csv, BENCH_BUCKETS_S};
use matm_tts::nn::Network;
use matm_tts::toy_world::{toy_speaker_embedding, ToyWorldSpec};
use matm_tts::{PhonemeSeq, SamplerConfig};

fn main() -> matm_tts::Result<()> {
    let mut args = std::env::args().skip(1);
    let runs = args.next().and_then(|s| s.parse().ok()).unwrap_or(3);
    let steps = args.next().and_then(|s| s.parse().ok()).unwrap_or(4);
    let model = ModelConfig::toy();
    let train = TrainConfig::toy();
    let one = Network::new(&model, 0)?;
    let stage_a = Network::new(&Variant::StageA.configure(&model, &train).0, 0)?;
    let stage_b = Network::new(&Variant::StageB.configure(&model, &train).0, 0)?;
    let world = ToyWorldSpec::for_model(&model);
    let sampler = SamplerConfig {
        n_steps: steps,
        ..SamplerConfig::default()
    };
    let rows = bench(
        &one,
        &stage_a,
        &stage_b,
        &PhonemeSeq::new(vec![1, 2, 3])?,
        &toy_speaker_embedding(0, &world),
        world.frame_rate,
        &BENCH_BUCKETS_S,
        runs,
        &sampler,
    )?;
    print!("{}", bench_to_csv(&rows));
    Ok(())
}
