//! The augmentation sweep ladder: 10% to 200% of the original dataset size
//! in 10% increments.

use serde::{Deserialize, Serialize};

pub const SWEEP_PERCENTS: [u32; 20] = [
    10, 20, 30, 40, 50, 60, 70, 80, 90, 100, 110, 120, 130, 140, 150, 160, 170, 180, 190, 200,
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepPlan {
    /// Original dataset size.
    pub n: usize,
    /// `(percent, synthetic_count)` pairs, percents 10..=200 step 10.
    pub levels: Vec<(u32, usize)>,
}

impl SweepPlan {
    pub fn count_for(&self, percent: u32) -> Option<usize> {
        self.levels
            .iter()
            .find(|(p, _)| *p == percent)
            .map(|(_, c)| *c)
    }

    pub fn max_count(&self) -> usize {
        self.levels.iter().map(|(_, c)| *c).max().unwrap_or(0)
    }
}

/// Synthetic counts per level; percent-to-count rounding is half-up, done in
/// integer arithmetic so there is no floating-point edge at exact halves.
pub fn plan_sweep(n: usize) -> SweepPlan {
    assert!(n >= 1, "dataset size must be positive");
    let levels = SWEEP_PERCENTS
        .iter()
        .map(|&p| (p, (n * p as usize + 50) / 100))
        .collect();
    SweepPlan { n, levels }
}
