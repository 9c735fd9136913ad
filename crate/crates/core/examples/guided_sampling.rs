//! Guidance and noise annealing, and how the forward-pass count depends on
//! classifier-free guidance. Uses an untrained network.

use matm_tts::config::ModelConfig;
use matm_tts::nn::Network;
use matm_tts::sampler::{cfg_combine, decode, guidance_level, noise_variance};
use matm_tts::toy_world::{toy_speaker_embedding, ToyWorldSpec};
use matm_tts::{PhonemeSeq, SamplerConfig, SeededRng};
use ndarray::Array3;

fn main() -> matm_tts::Result<()> {
    let cfg = SamplerConfig::default();
    println!("step  guidance  noise var");
    for i in 0..cfg.n_steps {
        println!("{i:4}  {:8.5}  {:9.5}", guidance_level(i, cfg.n_steps, &cfg), noise_variance(i, cfg.n_steps, &cfg));
    }

    let cond = Array3::from_elem((1, 1, 2), 2.0);
    let uncond = Array3::zeros((1, 1, 2));
    println!("\ncombine(cond=2, uncond=0, w=3) = {}", cfg_combine(&cond, &uncond, 3.0)?[[0, 0, 0]]);

    let model = ModelConfig {
        d_model: 32,
        n_layers: 2,
        n_heads: 2,
        d_ff: 64,
        ..ModelConfig::toy()
    };
    let net = Network::new(&model, 0)?;
    let world = ToyWorldSpec::for_model(&model);
    let phonemes = PhonemeSeq::new(vec![3, 1, 4, 1, 5])?;
    let speaker = toy_speaker_embedding(2, &world);
    for use_cfg in [true, false] {
        let c = SamplerConfig { use_cfg, ..cfg.clone() };
        let (grid, trace) = decode(&net, &phonemes, &speaker, 30, world.frame_rate, &c, &mut SeededRng::new(7))?;
        println!(
            "use_cfg = {use_cfg}: {} x {} grid, {} forward passes",
            grid.layers(),
            grid.frames(),
            trace.forward_passes()
        );
    }
    Ok(())
}
