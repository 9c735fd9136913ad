//! Generates a small toy corpus, writes it to a directory and checks the
//! oracles on it.
//!
//! cargo run --release --example toy_corpus -- /tmp/toy

use std::path::PathBuf;

use matm_tts::corpus::{load_split, load_world, write_corpus};
use matm_tts::eval::phoneme_error_rate;
use matm_tts::toy_world::{oracle_decode_phonemes, oracle_speaker_consistency, ToyWorldSpec};
use matm_tts::Split;

fn main() -> matm_tts::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("matm-toy-corpus"));
    let spec = ToyWorldSpec::toy();
    write_corpus(&dir, &spec, &[(Split::Train, 64), (Split::Dev, 16), (Split::Test, 16)])?;

    let world = load_world(&dir)?;
    let train = load_split(&dir, &world, Split::Train)?;
    let u = &train[0];
    println!("{}: phonemes {:?}, speaker {}, {} frames ({:.3} s)", u.id, u.phonemes.ids(), u.speaker_id, u.frames(), u.duration_s);
    for k in 0..u.tokens.layers() {
        let row: Vec<String> = u.tokens.layer(k).iter().take(12).map(|t| format!("{t:2}")).collect();
        println!("  layer {k}: {} ...", row.join(" "));
    }

    let mut per = 0.0;
    let mut consistency = 0.0;
    for u in &train {
        let decoded = oracle_decode_phonemes(&u.tokens, world.n_phonemes);
        per += phoneme_error_rate(decoded.ids(), &u.phonemes);
        consistency += oracle_speaker_consistency(&u.tokens, u.speaker_id, &world);
    }
    let n = train.len() as f64;
    println!("oracle PER {:.3}, speaker consistency {:.3} over {} utterances", per / n, consistency / n, train.len());
    println!("corpus written to {}", dir.display());
    Ok(())
}
