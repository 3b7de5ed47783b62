//! Balanced mini-batch construction.
//!
//! [`isf_run`] packs samples into groups whose vision and text totals sit in a
//! narrow band below fixed caps, so every data-parallel rank receives
//! micro-batches of nearly the same size. The baseline batchers reproduce the
//! usual random, length-sorted and device-grouped strategies for comparison.

mod baseline;
mod evaluate;
mod isf;
mod thresholds;

pub use baseline::{
    baseline_batches, baseline_device_group, baseline_random, baseline_sorted, BaselineStrategy,
};
pub use evaluate::{evaluate_plan, BalanceReport, BatchLayout};
pub use isf::{
    isf_filter, isf_run, isf_run_with, isf_sample, CandidateSet, IterationMetrics, PackedBatchPlan,
    DEFAULT_METRIC_RANKS,
};
pub use thresholds::derive_thresholds;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator behind every seeded permutation in this crate.
pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// In-place Fisher-Yates shuffle: for `i` from `n-1` down to 1, swap slot `i`
/// with a uniform slot in `0..=i`.
pub fn fisher_yates<T, R: Rng + ?Sized>(items: &mut [T], rng: &mut R) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shuffle_is_reproducible_permutation() {
        let mut a: Vec<u32> = (0..100).collect();
        let mut b = a.clone();
        fisher_yates(&mut a, &mut seeded_rng(7));
        fisher_yates(&mut b, &mut seeded_rng(7));
        assert_eq!(a, b);
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, (0..100).collect::<Vec<_>>());
        assert_ne!(a, sorted);
    }
}
