//! Nonparametric analysis of sweep results: Friedman omnibus test on
//! within-row ranks, post-hoc Wilcoxon signed-rank with Bonferroni
//! correction, and compact-letter grouping of the treatments.

mod cld;
mod io;

pub use cld::compact_letter_display;
pub use io::{load_result_csv, parse_result_csv, ResultMatrix};

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("need at least {need} {what}, got {got}")]
    TooSmall {
        what: &'static str,
        need: usize,
        got: usize,
    },
    #[error("all paired differences are zero")]
    AllZeroDifferences,
    #[error("vectors must have equal length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("csv schema error: {0}")]
    Schema(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Average ranks (1-based) with ties sharing the mean of their positions.
pub(crate) fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j share the average rank
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FriedmanResult {
    pub statistic: f64,
    pub p_value: f64,
    pub dof: usize,
}

/// Friedman test over a rows-by-treatments matrix: within-row average ranks,
/// chi-squared statistic with k-1 degrees of freedom, p from the survival
/// function.
pub fn friedman(m: &ResultMatrix) -> Result<FriedmanResult, StatsError> {
    let n = m.rows();
    let k = m.cols();
    if k < 2 {
        return Err(StatsError::TooSmall {
            what: "columns",
            need: 2,
            got: k,
        });
    }
    if n < 2 {
        return Err(StatsError::TooSmall {
            what: "rows",
            need: 2,
            got: n,
        });
    }
    let mut rank_sums = vec![0.0; k];
    for row in m.cells() {
        for (j, r) in average_ranks(row).into_iter().enumerate() {
            rank_sums[j] += r;
        }
    }
    let nf = n as f64;
    let kf = k as f64;
    let sum_sq: f64 = rank_sums.iter().map(|r| r * r).sum();
    let statistic = 12.0 / (nf * kf * (kf + 1.0)) * sum_sq - 3.0 * nf * (kf + 1.0);
    let statistic = statistic.max(0.0);
    let dist = ChiSquared::new((k - 1) as f64).expect("k >= 2");
    let p_value = dist.sf(statistic).clamp(0.0, 1.0);
    Ok(FriedmanResult {
        statistic,
        p_value,
        dof: k - 1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WilcoxonMethod {
    /// Exact two-sided p by enumerating sign assignments (n <= 25).
    Exact,
    /// Normal approximation with continuity and tie corrections.
    NormalApprox,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WilcoxonResult {
    /// min(W+, W-) over the nonzero differences.
    pub statistic: f64,
    pub p_value: f64,
    /// Number of nonzero differences that entered the test.
    pub n_used: usize,
    pub method: WilcoxonMethod,
}

const WILCOXON_EXACT_LIMIT: usize = 25;
const WILCOXON_MIN_N: usize = 5;

/// Two-sided Wilcoxon signed-rank test for paired samples. Zero differences
/// are dropped; at least five informative pairs are required.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64]) -> Result<WilcoxonResult, StatsError> {
    wilcoxon_signed_rank_with_margin(x, y, 0.0)
}

/// Same test, but differences with `|d| <= zero_margin` count as zeros.
///
/// When the inputs are transcribed from a rounded table, differences at the
/// printing resolution are indistinguishable from zero; the caller can pass
/// that resolution here instead of letting rounding residue drive the test.
pub fn wilcoxon_signed_rank_with_margin(
    x: &[f64],
    y: &[f64],
    zero_margin: f64,
) -> Result<WilcoxonResult, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    let diffs: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(&a, &b)| a - b)
        .filter(|d| d.abs() > zero_margin)
        .collect();
    if diffs.is_empty() {
        return Err(StatsError::AllZeroDifferences);
    }
    let n = diffs.len();
    if n < WILCOXON_MIN_N {
        return Err(StatsError::TooSmall {
            what: "nonzero differences",
            need: WILCOXON_MIN_N,
            got: n,
        });
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();
    let total: f64 = ranks.iter().sum();
    let w_minus = total - w_plus;
    let statistic = w_plus.min(w_minus);

    let p_value = if n <= WILCOXON_EXACT_LIMIT {
        exact_two_sided_p(&ranks, statistic)
    } else {
        normal_approx_p(&abs, &ranks, statistic)
    };
    Ok(WilcoxonResult {
        statistic,
        p_value: p_value.clamp(0.0, 1.0),
        n_used: n,
        method: if n <= WILCOXON_EXACT_LIMIT {
            WilcoxonMethod::Exact
        } else {
            WilcoxonMethod::NormalApprox
        },
    })
}

/// Exact null distribution over all 2^n sign assignments via a subset-sum
/// table on doubled ranks (average ranks are half-integers). Two-sided p is
/// the probability of min(W+, W-) at or below the observed statistic.
fn exact_two_sided_p(ranks: &[f64], statistic: f64) -> f64 {
    let doubled: Vec<u64> = ranks.iter().map(|r| (r * 2.0).round() as u64).collect();
    let total: u64 = doubled.iter().sum();
    let mut counts = vec![0u64; total as usize + 1];
    counts[0] = 1;
    for &r in &doubled {
        for s in (r as usize..counts.len()).rev() {
            counts[s] += counts[s - r as usize];
        }
    }
    let w2 = (statistic * 2.0).round() as u64;
    let hi_cut = total.saturating_sub(w2);
    let mut favorable: u64 = 0;
    for (s, &c) in counts.iter().enumerate() {
        let s = s as u64;
        if s <= w2 || s >= hi_cut {
            favorable += c;
        }
    }
    favorable as f64 / 2f64.powi(ranks.len() as i32)
}

/// Normal approximation with continuity correction and the tie-correction
/// term sum(t^3 - t)/48 removed from the variance.
fn normal_approx_p(abs: &[f64], ranks: &[f64], statistic: f64) -> f64 {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0;
    // group tied |d| values
    let mut sorted = abs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        if t > 1.0 {
            var -= (t * t * t - t) / 48.0;
        }
        i = j + 1;
    }
    if var <= 0.0 {
        return 1.0;
    }
    let z = (statistic - mean + 0.5) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    2.0 * normal.cdf(z)
}

/// Bonferroni correction: each p is multiplied by the comparison count and
/// capped at 1.
pub fn bonferroni(pvals: &[f64], m: usize) -> Vec<f64> {
    pvals.iter().map(|p| (p * m as f64).min(1.0)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnSummary {
    pub mean: f64,
    pub sd: f64,
}

/// Arithmetic mean and sample standard deviation (n-1) per column.
pub fn column_summary(m: &ResultMatrix) -> Vec<ColumnSummary> {
    let n = m.rows() as f64;
    (0..m.cols())
        .map(|j| {
            let col: Vec<f64> = m.cells().iter().map(|row| row[j]).collect();
            let mean = col.iter().sum::<f64>() / n;
            let sd = if m.rows() > 1 {
                (col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            ColumnSummary { mean, sd }
        })
        .collect()
}

/// Largest power-of-ten resolution (1e-1 .. 1e-9) that all values are exact
/// multiples of, or `None` for full-precision data. Used to treat
/// printed-table rounding residue as ties.
pub fn detect_resolution(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    for k in 1..=9u32 {
        let r = 10f64.powi(-(k as i32));
        let all_multiples = values.iter().all(|v| {
            let scaled = v / r;
            (scaled - scaled.round()).abs() < 1e-6
        });
        if all_multiples {
            return Some(r);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn matrix(rows: Vec<Vec<f64>>) -> ResultMatrix {
        let labels = (0..rows.len()).map(|i| format!("r{i}")).collect();
        let cols = (0..rows[0].len()).map(|j| format!("c{j}")).collect();
        ResultMatrix::new(labels, cols, rows).unwrap()
    }

    #[test]
    fn average_ranks_handle_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 2.0]), vec![3.0, 1.0, 2.0]);
        assert_eq!(average_ranks(&[1.0, 1.0, 2.0]), vec![1.5, 1.5, 3.0]);
        assert_eq!(average_ranks(&[5.0, 5.0, 5.0]), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn friedman_textbook_matrix() {
        // hand-computed rank sums R = (3, 7, 8) give 12/(3*3*4)*122 - 36
        let m = matrix(vec![
            vec![1.0, 2.0, 3.0],
            vec![1.0, 2.0, 3.0],
            vec![1.0, 3.0, 2.0],
        ]);
        let r = friedman(&m).unwrap();
        assert_relative_eq!(r.statistic, 14.0 / 3.0, epsilon = 1e-12);
        assert_eq!(r.dof, 2);
        assert!(r.p_value > 0.05 && r.p_value < 0.2);
    }

    #[test]
    fn friedman_identical_columns() {
        let m = matrix(vec![vec![1.0, 1.0, 1.0], vec![2.0, 2.0, 2.0]]);
        let r = friedman(&m).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_relative_eq!(r.p_value, 1.0);
    }

    #[test]
    fn friedman_is_rank_based() {
        let m1 = matrix(vec![vec![1.0, 2.0, 3.0], vec![4.0, 6.0, 5.0]]);
        // strictly monotone transform of each row must not change the statistic
        let m2 = matrix(vec![vec![10.0, 200.0, 3000.0], vec![0.4, 0.6, 0.5]]);
        assert_eq!(
            friedman(&m1).unwrap().statistic,
            friedman(&m2).unwrap().statistic
        );
    }

    #[test]
    fn wilcoxon_all_positive_n6_exact() {
        let x = [2.0, 3.0, 4.0, 5.0, 6.0, 7.0];
        let y = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0];
        let r = wilcoxon_signed_rank(&x, &y).unwrap();
        assert_eq!(r.method, WilcoxonMethod::Exact);
        assert_eq!(r.statistic, 0.0);
        assert_relative_eq!(r.p_value, 2.0 / 64.0, epsilon = 1e-12);
    }

    #[test]
    fn wilcoxon_exact_agrees_with_brute_force_enumeration() {
        // independent oracle: enumerate all 2^n sign assignments directly
        let x = [1.2, -0.4, 2.5, 0.3, -1.0, 0.8, 1.4];
        let y = [0.2, 0.1, 1.5, 0.9, -0.2, 0.1, 1.4];
        let diffs: Vec<f64> = x
            .iter()
            .zip(&y)
            .map(|(a, b)| a - b)
            .filter(|d| *d != 0.0)
            .collect();
        let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
        let ranks = average_ranks(&abs);
        let w_plus: f64 = diffs
            .iter()
            .zip(&ranks)
            .filter(|(d, _)| **d > 0.0)
            .map(|(_, r)| *r)
            .sum();
        let total: f64 = ranks.iter().sum();
        let observed = w_plus.min(total - w_plus);
        let n = ranks.len();
        let mut favorable = 0u64;
        for mask in 0..(1u64 << n) {
            let wp: f64 = (0..n)
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| ranks[i])
                .sum();
            if wp.min(total - wp) <= observed + 1e-12 {
                favorable += 1;
            }
        }
        let oracle_p = favorable as f64 / (1u64 << n) as f64;
        let r = wilcoxon_signed_rank(&x, &y).unwrap();
        assert_relative_eq!(r.p_value, oracle_p, epsilon = 1e-12);
    }

    #[test]
    fn wilcoxon_identical_vectors_error() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert!(matches!(
            wilcoxon_signed_rank(&x, &x),
            Err(StatsError::AllZeroDifferences)
        ));
    }

    #[test]
    fn wilcoxon_too_few_nonzero_pairs() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y = [1.0, 2.0, 3.0, 4.0, 6.0];
        assert!(matches!(
            wilcoxon_signed_rank(&x, &y),
            Err(StatsError::TooSmall { .. })
        ));
    }

    #[test]
    fn wilcoxon_shift_invariance() {
        let x = [1.0, 4.0, 2.0, 8.0, 5.0, 7.0, 3.5, 0.5];
        let y = [2.0, 3.0, 2.5, 6.0, 5.5, 4.0, 3.0, 1.5];
        let a = wilcoxon_signed_rank(&x, &y).unwrap();
        let xs: Vec<f64> = x.iter().map(|v| v + 100.0).collect();
        let ys: Vec<f64> = y.iter().map(|v| v + 100.0).collect();
        let b = wilcoxon_signed_rank(&xs, &ys).unwrap();
        assert_eq!(a.statistic, b.statistic);
        assert_eq!(a.p_value, b.p_value);
    }

    #[test]
    fn wilcoxon_margin_drops_resolution_noise() {
        let x = [0.911, 0.905, 0.907, 0.913, 0.902, 0.909];
        let y = [0.912, 0.906, 0.908, 0.914, 0.903, 0.910];
        // exact test on the raw values sees 6 systematic -0.001 differences
        assert!(wilcoxon_signed_rank(&x, &y).unwrap().p_value < 0.05);
        // with the table resolution as margin they are ties
        assert!(matches!(
            wilcoxon_signed_rank_with_margin(&x, &y, 0.001),
            Err(StatsError::AllZeroDifferences)
        ));
    }

    #[test]
    fn wilcoxon_large_n_uses_normal_approximation() {
        let x: Vec<f64> = (0..30).map(|i| i as f64 + if i % 3 == 0 { 1.5 } else { -0.5 }).collect();
        let y: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let r = wilcoxon_signed_rank(&x, &y).unwrap();
        assert_eq!(r.method, WilcoxonMethod::NormalApprox);
        assert!(r.p_value > 0.0 && r.p_value < 1.0);
    }

    #[test]
    fn bonferroni_caps_at_one() {
        assert_eq!(bonferroni(&[0.01], 3), vec![0.03]);
        assert_eq!(bonferroni(&[0.5], 3), vec![1.0]);
        let ps = [0.001, 0.01, 0.04];
        let adj = bonferroni(&ps, 3);
        assert!(adj.windows(2).all(|w| w[0] <= w[1])); // order preserved
    }

    #[test]
    fn summary_mean_and_sample_sd() {
        let m = matrix(vec![vec![1.0, 5.0], vec![2.0, 5.0], vec![3.0, 5.0]]);
        let s = column_summary(&m);
        assert_relative_eq!(s[0].mean, 2.0);
        assert_relative_eq!(s[0].sd, 1.0);
        assert_relative_eq!(s[1].sd, 0.0);
    }

    #[test]
    fn resolution_detection() {
        assert_eq!(detect_resolution(&[0.924, 0.837, 0.8]), Some(0.001));
        assert_eq!(detect_resolution(&[0.5, 0.7, 0.9]), Some(0.1));
        assert_eq!(detect_resolution(&[0.12345678901, 0.5]), None);
    }
}
