//! Trains the utterance-level duration predictor and converts predictions to
//! frame counts.

use matm_tts::config::{DurationConfig, TrainConfig};
use matm_tts::nn::predicted_frames;
use matm_tts::toy_world::{gen_corpus, ToyWorldSpec};
use matm_tts::trainer::duration::median_relative_error;
use matm_tts::trainer::{DurationItem, DurationTrainer, FitOptions};
use matm_tts::Split;

fn main() -> matm_tts::Result<()> {
    let spec = ToyWorldSpec::toy();
    let corpus = gen_corpus(&spec, Split::Train)?;
    let items = DurationItem::from_corpus(&corpus)?;
    let mut trainer = DurationTrainer::new(&DurationConfig::toy(), &TrainConfig::duration_toy())?;
    let losses = trainer.fit(&items, &FitOptions::default())?;
    println!("huber loss: first {:.4}, last {:.4}", losses[0], losses[losses.len() - 1]);

    let net = trainer.network();
    println!("median relative error on train: {:.4}", median_relative_error(net, &items)?);
    for u in corpus.iter().take(5) {
        let log_s = net.forward(&u.phonemes)?;
        println!(
            "{}: true {:3} frames, predicted {:3}",
            u.id,
            u.frames(),
            predicted_frames(log_s, spec.frame_rate)
        );
    }
    println!("ln(4 s) -> {} frames", predicted_frames(4f64.ln(), spec.frame_rate));
    Ok(())
}
