//! The statistical pipeline over one result matrix: column summaries,
//! Friedman omnibus, pairwise Wilcoxon with Bonferroni correction, and the
//! compact-letter grouping, rendered both as JSON and as a table in the
//! familiar layout.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::stats::{
    bonferroni, column_summary, compact_letter_display, detect_resolution, friedman,
    load_result_csv, wilcoxon_signed_rank_with_margin, ResultMatrix, StatsError, WilcoxonMethod,
};

use super::config::StatsConfig;
use super::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairwiseEntry {
    pub a: String,
    pub b: String,
    /// Raw two-sided p, 1.0 when too few informative pairs remained.
    pub p_value: f64,
    pub p_adjusted: f64,
    pub significant: bool,
    pub statistic: Option<f64>,
    pub n_used: usize,
    pub method: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnReport {
    pub label: String,
    pub mean: f64,
    pub sd: f64,
    pub letters: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub friedman_statistic: f64,
    pub friedman_p: f64,
    pub alpha: f64,
    /// Zero-difference margin used by the pairwise tests (data resolution).
    pub tie_margin: f64,
    pub baseline_excluded: bool,
    pub columns: Vec<ColumnReport>,
    pub pairwise: Vec<PairwiseEntry>,
}

/// Runs the full analysis over a result matrix. The baseline row, when
/// present, is excluded from both the summary and the tests.
pub fn analyze_matrix(
    matrix: &ResultMatrix,
    options: &StatsConfig,
) -> Result<AnalysisReport, CliError> {
    let (body, baseline) = matrix.split_baseline();
    if body.rows() < 2 || body.cols() < 2 {
        return Err(CliError::Data(format!(
            "matrix too small for analysis: {}x{}",
            body.rows(),
            body.cols()
        )));
    }

    let fr = friedman(&body).map_err(|e| CliError::Data(e.to_string()))?;
    let summaries = column_summary(&body);

    // Tie margin: transcribed tables carry rounding residue at their printing
    // resolution; differences at or below it are treated as zeros.
    let tie_margin = options
        .tie_margin
        .or_else(|| detect_resolution(&body.values()))
        .unwrap_or(0.0);

    let k = body.cols();
    let m = k * (k - 1) / 2;
    let mut raw = Vec::with_capacity(m);
    let mut meta = Vec::with_capacity(m);
    for i in 0..k {
        for j in i + 1..k {
            let x = body.column(i);
            let y = body.column(j);
            let outcome = wilcoxon_signed_rank_with_margin(&x, &y, tie_margin);
            let (p, stat, n_used, method) = match outcome {
                Ok(r) => (
                    r.p_value,
                    Some(r.statistic),
                    r.n_used,
                    match r.method {
                        WilcoxonMethod::Exact => "exact",
                        WilcoxonMethod::NormalApprox => "normal_approx",
                    },
                ),
                // No informative pairs left: nothing to reject with.
                Err(StatsError::AllZeroDifferences) => (1.0, None, 0, "degenerate"),
                Err(StatsError::TooSmall { got, .. }) => (1.0, None, got, "degenerate"),
                Err(e) => return Err(CliError::Data(e.to_string())),
            };
            raw.push(p);
            meta.push((i, j, stat, n_used, method));
        }
    }
    let adjusted = bonferroni(&raw, m);

    let mut sig = vec![vec![false; k]; k];
    let mut pairwise = Vec::with_capacity(m);
    for (slot, &(i, j, stat, n_used, method)) in meta.iter().enumerate() {
        let significant = adjusted[slot] < options.alpha;
        sig[i][j] = significant;
        sig[j][i] = significant;
        pairwise.push(PairwiseEntry {
            a: body.col_labels()[i].clone(),
            b: body.col_labels()[j].clone(),
            p_value: raw[slot],
            p_adjusted: adjusted[slot],
            significant,
            statistic: stat,
            n_used,
            method: method.to_string(),
        });
    }

    let means: Vec<f64> = summaries.iter().map(|s| s.mean).collect();
    let letters = compact_letter_display(body.col_labels(), &sig, &means);

    Ok(AnalysisReport {
        friedman_statistic: fr.statistic,
        friedman_p: fr.p_value,
        alpha: options.alpha,
        tie_margin,
        baseline_excluded: baseline.is_some(),
        columns: body
            .col_labels()
            .iter()
            .zip(&summaries)
            .zip(&letters)
            .map(|((label, s), letter)| ColumnReport {
                label: label.clone(),
                mean: s.mean,
                sd: s.sd,
                letters: letter.clone(),
            })
            .collect(),
        pairwise,
    })
}

/// Renders the matrix plus the analysis rows in the familiar table layout.
pub fn render_table(matrix: &ResultMatrix, report: &AnalysisReport) -> String {
    let mut out = String::new();
    out.push_str("| Augmentation |");
    for c in matrix.col_labels() {
        out.push_str(&format!(" {c} |"));
    }
    out.push('\n');
    out.push_str("|---|");
    for _ in matrix.col_labels() {
        out.push_str("---|");
    }
    out.push('\n');
    for (label, row) in matrix.row_labels().iter().zip(matrix.cells()) {
        out.push_str(&format!("| {label} |"));
        for v in row {
            out.push_str(&format!(" {v:.3} |"));
        }
        out.push('\n');
    }
    out.push_str("| Mean ± SD (Augmentation) |");
    for c in &report.columns {
        out.push_str(&format!(" {:.3} ± {:.3} |", c.mean, c.sd));
    }
    out.push('\n');
    out.push_str("| Stat. Group (Augmentation) |");
    for c in &report.columns {
        out.push_str(&format!(" {} |", c.letters));
    }
    out.push('\n');
    out.push_str(&format!(
        "\nFriedman chi2 = {:.4}, p = {:.3e} (alpha = {}, tie margin = {})\n",
        report.friedman_statistic, report.friedman_p, report.alpha, report.tie_margin
    ));
    for p in &report.pairwise {
        out.push_str(&format!(
            "{} vs {}: p = {:.3e}, adjusted = {:.3e} ({}{})\n",
            p.a,
            p.b,
            p.p_value,
            p.p_adjusted,
            if p.significant { "significant" } else { "ns" },
            if p.method == "degenerate" {
                ", too few informative pairs"
            } else {
                ""
            },
        ));
    }
    out
}

/// `analyze` subcommand: CSV in, JSON + rendered table out.
pub fn cmd_analyze(
    csv_path: &Path,
    options: &StatsConfig,
    out_json: Option<&Path>,
) -> Result<(ResultMatrix, AnalysisReport), CliError> {
    let matrix = load_result_csv(csv_path).map_err(|e| CliError::Data(e.to_string()))?;
    let report = analyze_matrix(&matrix, options)?;
    if let Some(path) = out_json {
        let text = serde_json::to_string_pretty(&report)
            .map_err(|e| CliError::Internal(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| CliError::Data(e.to_string()))?;
    }
    Ok((matrix, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::parse_result_csv;

    /// Constant matrix: single group A everywhere.
    #[test]
    fn constant_matrix_is_one_group() {
        let csv = "augmentation,fp32,fp16,int8\n\
                   10,0.9,0.9,0.9\n20,0.9,0.9,0.9\n30,0.9,0.9,0.9\n40,0.9,0.9,0.9\n50,0.9,0.9,0.9\n";
        let m = parse_result_csv(csv).unwrap();
        let report = analyze_matrix(&m, &StatsConfig::default()).unwrap();
        assert!((report.friedman_p - 1.0).abs() < 1e-12);
        for c in &report.columns {
            assert_eq!(c.letters, "A");
        }
    }

    #[test]
    fn clear_separation_gives_two_groups() {
        let mut csv = String::from("augmentation,fp32,fp16,int8\n");
        for i in 0..12 {
            let base = 0.9 + 0.001 * (i % 3) as f64;
            csv.push_str(&format!(
                "{},{:.4},{:.4},{:.4}\n",
                (i + 1) * 10,
                base,
                base,
                base - 0.08 - 0.001 * (i % 4) as f64
            ));
        }
        let m = parse_result_csv(&csv).unwrap();
        let report = analyze_matrix(&m, &StatsConfig::default()).unwrap();
        assert!(report.friedman_p < 0.05);
        let letters: Vec<&str> = report.columns.iter().map(|c| c.letters.as_str()).collect();
        assert_eq!(letters, vec!["A", "A", "B"]);
        let render = render_table(&m, &report);
        assert!(render.contains("Stat. Group"));
    }
}
