//! Variance schedules: beta_t in (0,1) and the cumulative noise factor
//! alpha_bar_t = prod_{s<=t} (1 - beta_s).

use serde::{Deserialize, Serialize};

use super::DiffusionError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Total step count T.
    pub fn t_max(&self) -> usize {
        self.betas.len()
    }

    /// beta_t for t in 1..=T.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// alpha_bar_t for t in 0..=T, with alpha_bar_0 = 1 (no noise).
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    /// Variance-exploding sigma at t: sqrt((1 - alpha_bar) / alpha_bar).
    pub fn sigma(&self, t: usize) -> f64 {
        let ab = self.alpha_bar(t);
        ((1.0 - ab) / ab).sqrt()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }
}

/// Builds a schedule with linearly interpolated betas and cumulative
/// alpha-bar products.
pub fn make_schedule(
    t: usize,
    beta_start: f64,
    beta_end: f64,
    kind: ScheduleKind,
) -> Result<NoiseSchedule, DiffusionError> {
    if t < 1 {
        return Err(DiffusionError::InvalidSchedule(
            "need at least one step".to_string(),
        ));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(DiffusionError::InvalidSchedule(format!(
            "betas must satisfy 0 < start <= end < 1, got [{beta_start}, {beta_end}]"
        )));
    }
    let ScheduleKind::Linear = kind;
    let betas: Vec<f64> = (0..t)
        .map(|i| {
            if t == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (t - 1) as f64
            }
        })
        .collect();
    let mut alpha_bars = Vec::with_capacity(t);
    let mut prod = 1.0;
    for &b in &betas {
        prod *= 1.0 - b;
        alpha_bars.push(prod);
    }
    Ok(NoiseSchedule { betas, alpha_bars })
}
