//! Cosine masking schedule shared by training and iterative decoding.

use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::types::{round_half_away, MaskGrid};

/// Fraction of cells still masked at progress `r`: `cos(pi r / 2)`.
pub fn mask_fraction(r: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::invalid("mask progress", format!("{r} outside [0, 1]")));
    }
    Ok((FRAC_PI_2 * r).cos())
}

/// Number of masked cells for progress `r` over `n` cells, at least one.
pub fn masked_count(r: f64, n: usize) -> usize {
    let gamma = (FRAC_PI_2 * r).cos();
    (round_half_away(gamma * n as f64) as usize).clamp(1, n)
}

/// Masks `masked_count(r)` distinct cells of a `layers x frames` grid.
pub fn training_mask_with_ratio(layers: usize, frames: usize, r: f64, rng: &mut SeededRng) -> MaskGrid {
    let n = layers * frames;
    let m = masked_count(r, n);
    let mut mask = MaskGrid::none(layers, frames);
    for idx in rng.sample_indices(n, m) {
        mask.set(idx / frames, idx % frames, true);
    }
    mask
}

/// Draws `r ~ U(0, 1)` and a training mask for it. Returns the mask and `r`.
pub fn sample_training_mask(layers: usize, frames: usize, rng: &mut SeededRng) -> (MaskGrid, f64) {
    let r = rng.uniform();
    (training_mask_with_ratio(layers, frames, r, rng), r)
}

/// Cells remaining masked after each decoding step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnmaskPlan {
    pub masked_after_step: Vec<usize>,
    pub n_positions: usize,
}

impl UnmaskPlan {
    pub fn n_steps(&self) -> usize {
        self.masked_after_step.len()
    }

    /// Cells revealed at `step`.
    pub fn unmask_count(&self, step: usize) -> usize {
        let before = if step == 0 {
            self.n_positions
        } else {
            self.masked_after_step[step - 1]
        };
        before - self.masked_after_step[step]
    }
}

pub fn build_unmask_plan(n_positions: usize, n_steps: usize) -> Result<UnmaskPlan> {
    if n_positions == 0 || n_steps == 0 {
        return Err(Error::invalid("unmask plan", "n_positions and n_steps must be >= 1"));
    }
    let mut plan = Vec::with_capacity(n_steps);
    let mut floor = n_positions;
    for i in 0..n_steps {
        let gamma = (FRAC_PI_2 * (i + 1) as f64 / n_steps as f64).cos();
        let m = (round_half_away(gamma * n_positions as f64) as usize).min(floor);
        floor = m;
        plan.push(m);
    }
    *plan.last_mut().unwrap() = 0;
    Ok(UnmaskPlan {
        masked_after_step: plan,
        n_positions,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn fraction_endpoints_and_midpoint() {
        assert_eq!(mask_fraction(0.0).unwrap(), 1.0);
        assert!(mask_fraction(1.0).unwrap().abs() < 1e-15);
        assert!((mask_fraction(0.5).unwrap() - 0.707_106_78).abs() < 1e-8);
        assert!(mask_fraction(-0.1).is_err());
        assert!(mask_fraction(1.1).is_err());
    }

    #[test]
    fn training_mask_counts() {
        let mut rng = SeededRng::new(0);
        let full = training_mask_with_ratio(3, 5, 0.0, &mut rng);
        assert_eq!(full.count(), 15);
        let half = training_mask_with_ratio(2, 10, 0.5, &mut rng);
        assert_eq!(half.count(), 14);
        let tail = training_mask_with_ratio(2, 10, 1.0, &mut rng);
        assert_eq!(tail.count(), 1);
        for _ in 0..200 {
            let (m, _) = sample_training_mask(2, 3, &mut rng);
            assert!(m.count() >= 1);
        }
    }

    #[test]
    fn plan_examples() {
        let plan = build_unmask_plan(100, 20).unwrap();
        assert_eq!(*plan.masked_after_step.last().unwrap(), 0);
        assert_eq!(plan.masked_after_step[9], 71);
        assert_eq!(build_unmask_plan(37, 1).unwrap().masked_after_step, vec![0]);
        assert!(build_unmask_plan(0, 3).is_err());
    }

    #[test]
    fn monte_carlo_mean_fraction() {
        let mut rng = SeededRng::keyed(1, "mask");
        let n = 10_000;
        let total: usize = (0..n).map(|_| sample_training_mask(4, 25, &mut rng).0.count()).sum();
        let mean = total as f64 / (n as f64 * 100.0);
        assert!((mean - 2.0 / std::f64::consts::PI).abs() < 0.03, "{mean}");
    }

    proptest! {
        #[test]
        fn plan_is_monotone_and_complete(n in 1usize..5000, steps in 1usize..64) {
            let plan = build_unmask_plan(n, steps).unwrap();
            prop_assert_eq!(plan.n_steps(), steps);
            prop_assert_eq!(*plan.masked_after_step.last().unwrap(), 0);
            prop_assert!(plan.masked_after_step.windows(2).all(|w| w[0] >= w[1]));
            prop_assert!(plan.masked_after_step.iter().all(|&m| m <= n));
            let revealed: usize = (0..steps).map(|i| plan.unmask_count(i)).sum();
            prop_assert_eq!(revealed, n);
        }

        #[test]
        fn training_mask_exact_popcount(layers in 1usize..5, frames in 1usize..40, r in 0.0f64..=1.0, seed in any::<u64>()) {
            let mut rng = SeededRng::new(seed);
            let m = training_mask_with_ratio(layers, frames, r, &mut rng);
            prop_assert_eq!(m.count(), masked_count(r, layers * frames));
            prop_assert!(m.count() >= 1);
        }
    }
}
