//! Prints the cosine masking schedule, a training mask and the 20-step
//! decoding plan.

use matm_tts::masking::{build_unmask_plan, mask_fraction, sample_training_mask};
use matm_tts::SeededRng;

fn main() -> matm_tts::Result<()> {
    for r in [0.0, 0.25, 0.5, 0.75, 1.0] {
        println!("gamma({r:.2}) = {:.4}", mask_fraction(r)?);
    }

    let mut rng = SeededRng::new(0);
    let (mask, r) = sample_training_mask(4, 24, &mut rng);
    println!("\ntraining mask at r = {r:.3} ({} of 96 cells):", mask.count());
    for k in 0..4 {
        let row: String = (0..24).map(|t| if mask.is_masked(k, t) { '#' } else { '.' }).collect();
        println!("  {row}");
    }

    let draws = 10_000;
    let mean: f64 = (0..draws)
        .map(|_| sample_training_mask(4, 50, &mut rng).0.count() as f64 / 200.0)
        .sum::<f64>()
        / draws as f64;
    println!("\nmean masked fraction over {draws} draws: {mean:.4} (2/pi = {:.4})", 2.0 / std::f64::consts::PI);

    let plan = build_unmask_plan(4 * 345, 20)?;
    println!("\nstill masked after each of 20 steps for a 4 x 345 grid:");
    println!("  {:?}", plan.masked_after_step);
    Ok(())
}
