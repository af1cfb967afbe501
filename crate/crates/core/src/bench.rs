//! Latency, peak-memory and model-size measurement.
//!
//! The clock is injected so all timing statistics are unit-testable without
//! wall time; peak memory counts toolkit-managed tensor buffers only (see
//! `tensor::alloc`), which keeps the numbers deterministic.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{live_tracked_bytes, peak_tracked_bytes, reset_peak_to_live, Precision};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("baseline must be positive, got {0}")]
    NonPositiveBaseline(f64),
    #[error("need at least one run")]
    NoRuns,
}

/// Time source for the harness. `now_ns` is called immediately before and
/// after the measured op.
pub trait Clock {
    fn now_ns(&mut self) -> u128;
}

/// Monotonic wall clock.
pub struct WallClock {
    origin: std::time::Instant,
}

impl Default for WallClock {
    fn default() -> Self {
        Self {
            origin: std::time::Instant::now(),
        }
    }
}

impl Clock for WallClock {
    fn now_ns(&mut self) -> u128 {
        self.origin.elapsed().as_nanos()
    }
}

/// Deterministic clock fed by a script of intervals; each call advances by
/// the next interval (cycling), so run k observes interval k.
pub struct ScriptedClock {
    intervals_ns: Vec<u128>,
    now: u128,
    idx: usize,
}

impl ScriptedClock {
    pub fn from_millis(intervals_ms: &[f64]) -> Self {
        Self {
            intervals_ns: intervals_ms
                .iter()
                .map(|ms| (ms * 1e6).round() as u128)
                .collect(),
            now: 0,
            idx: 0,
        }
    }
}

impl Clock for ScriptedClock {
    fn now_ns(&mut self) -> u128 {
        let t = self.now;
        if !self.intervals_ns.is_empty() {
            if self.idx % 2 == 0 {
                // start of a measured span: the matching stop call lands one
                // scripted interval later
                let k = (self.idx / 2) % self.intervals_ns.len();
                self.now += self.intervals_ns[k];
            }
            self.idx += 1;
        }
        t
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchResult {
    pub label: String,
    pub runs: usize,
    pub mean_ms: f64,
    pub sd_ms: f64,
    pub peak_bytes: u64,
}

/// Runs `warmup` discarded iterations then `runs` timed ones; reports the
/// sample mean and standard deviation of the per-run latency plus the
/// allocation high-water mark over the timed phase.
pub fn time_op(
    label: &str,
    mut op: impl FnMut(),
    warmup: usize,
    runs: usize,
    clock: &mut dyn Clock,
) -> Result<BenchResult, BenchError> {
    if runs == 0 {
        return Err(BenchError::NoRuns);
    }
    for _ in 0..warmup {
        op();
    }
    let base = live_tracked_bytes();
    reset_peak_to_live();
    let mut samples_ms = Vec::with_capacity(runs);
    for _ in 0..runs {
        let t0 = clock.now_ns();
        op();
        let t1 = clock.now_ns();
        samples_ms.push((t1 - t0) as f64 / 1e6);
    }
    let peak = (peak_tracked_bytes() - base).max(0) as u64;
    let mean = samples_ms.iter().sum::<f64>() / runs as f64;
    let sd = if runs > 1 {
        (samples_ms.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (runs as f64 - 1.0))
            .sqrt()
    } else {
        0.0
    };
    Ok(BenchResult {
        label: label.to_string(),
        runs,
        mean_ms: mean,
        sd_ms: sd,
        peak_bytes: peak,
    })
}

/// High-water mark of live tracked allocations during `op`, relative to the
/// live total at entry.
pub fn peak_memory(op: impl FnOnce()) -> u64 {
    let base = live_tracked_bytes();
    reset_peak_to_live();
    op();
    (peak_tracked_bytes() - base).max(0) as u64
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SizeEntry {
    pub precision: Precision,
    pub payload_bytes: u64,
    pub overhead_bytes: u64,
    pub total_bytes: u64,
}

/// Model size at a storage precision: `param_count` elements at the format's
/// bytes-per-element plus format overhead (headers, manifests, engine data).
pub fn model_size(
    param_count: u64,
    precision: Precision,
    overhead_model: &dyn Fn(Precision) -> u64,
) -> SizeEntry {
    let payload_bytes = param_count * precision.bytes_per_element();
    let overhead_bytes = overhead_model(precision);
    SizeEntry {
        precision,
        payload_bytes,
        overhead_bytes,
        total_bytes: payload_bytes + overhead_bytes,
    }
}

/// `100 * (baseline - candidate) / baseline`.
pub fn percent_reduction(baseline: f64, candidate: f64) -> Result<f64, BenchError> {
    if baseline <= 0.0 {
        return Err(BenchError::NonPositiveBaseline(baseline));
    }
    Ok(100.0 * (baseline - candidate) / baseline)
}

/// Markdown table shaped like a latency/memory comparison.
pub fn render_latency_table(results: &[BenchResult]) -> String {
    let mut out = String::from(
        "| Op | Inference time (mean ± SD) ms | Peak memory (bytes) | Latency vs first (%) |\n|---|---|---|---|\n",
    );
    let baseline = results.first().map(|r| r.mean_ms).unwrap_or(1.0);
    for r in results {
        let red = if baseline > 0.0 {
            100.0 * (baseline - r.mean_ms) / baseline
        } else {
            0.0
        };
        out.push_str(&format!(
            "| {} | {:.3} ± {:.3} | {} | {:.1} |\n",
            r.label, r.mean_ms, r.sd_ms, r.peak_bytes, red
        ));
    }
    out
}

/// Markdown table shaped like a model-size comparison.
pub fn render_size_table(label: &str, entries: &[SizeEntry]) -> String {
    let mut out = format!("| Model | Precision | Payload (bytes) | Overhead | Total | Size vs fp32 (%) |\n|---|---|---|---|---|---|\n");
    let baseline = entries
        .iter()
        .find(|e| e.precision == Precision::Fp32)
        .map(|e| e.total_bytes as f64);
    for e in entries {
        let red = baseline
            .map(|b| 100.0 * (b - e.total_bytes as f64) / b)
            .unwrap_or(0.0);
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} | {:.1} |\n",
            label,
            e.precision.label(),
            e.payload_bytes,
            e.overhead_bytes,
            e.total_bytes,
            red
        ));
    }
    out
}
