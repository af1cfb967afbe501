//! Detection evaluation: IoU, greedy score-ordered matching, precision/recall
//! curves, average precision with the monotone-envelope integral, and the
//! class-mean mAP50 / mAP50-95 summaries.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::RoiBox;
use crate::toydet::Detection;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no ground truth boxes")]
    NoGroundTruth,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("format error: {0}")]
    Format(String),
}

/// Intersection over union of two boxes; 0 for disjoint boxes.
pub fn iou(a: &RoiBox, b: &RoiBox) -> f64 {
    let iw = (a.right().min(b.right()) - a.x.max(b.x)).max(0.0);
    let ih = (a.bottom().min(b.bottom()) - a.y.max(b.y)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// One matched prediction in score order.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchEntry {
    /// Index into the caller's prediction list.
    pub pred_index: usize,
    pub score: f64,
    pub is_tp: bool,
}

/// Outcome of matching a prediction list against ground truth at one IoU
/// threshold. Entries are sorted by descending score (ties keep input order).
#[derive(Debug, Clone, PartialEq)]
pub struct MatchTable {
    pub entries: Vec<MatchEntry>,
    pub num_gt: usize,
}

impl MatchTable {
    pub fn tp_count(&self) -> usize {
        self.entries.iter().filter(|e| e.is_tp).count()
    }

    pub fn fp_count(&self) -> usize {
        self.entries.len() - self.tp_count()
    }

    pub fn fn_count(&self) -> usize {
        self.num_gt - self.tp_count()
    }
}

/// Greedy matching in descending score order. Each prediction takes the
/// unmatched ground-truth box with the highest IoU, provided it reaches the
/// threshold; every ground truth is matched at most once. Score ties keep
/// the deterministic input order.
pub fn match_detections(preds: &[Detection], gts: &[RoiBox], iou_thresh: f64) -> MatchTable {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        preds[b]
            .score
            .partial_cmp(&preds[a].score)
            .expect("finite scores")
    });
    let mut taken = vec![false; gts.len()];
    let mut entries = Vec::with_capacity(preds.len());
    for &pi in &order {
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in gts.iter().enumerate() {
            if taken[gi] {
                continue;
            }
            let ov = iou(&preds[pi].bbox, gt);
            if ov >= iou_thresh && best.map_or(true, |(_, b)| ov > b) {
                best = Some((gi, ov));
            }
        }
        let is_tp = if let Some((gi, _)) = best {
            taken[gi] = true;
            true
        } else {
            false
        };
        entries.push(MatchEntry {
            pred_index: pi,
            score: preds[pi].score,
            is_tp,
        });
    }
    MatchTable {
        entries,
        num_gt: gts.len(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

/// Cumulative precision/recall over the score-ordered match table.
pub fn pr_curve(table: &MatchTable) -> Result<Vec<PrPoint>, MetricsError> {
    if table.num_gt == 0 {
        return Err(MetricsError::NoGroundTruth);
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut curve = Vec::with_capacity(table.entries.len());
    for e in &table.entries {
        if e.is_tp {
            tp += 1;
        } else {
            fp += 1;
        }
        curve.push(PrPoint {
            recall: tp as f64 / table.num_gt as f64,
            precision: tp as f64 / (tp + fp) as f64,
        });
    }
    Ok(curve)
}

/// Area under the precision/recall curve using all-point interpolation with
/// the monotone precision envelope (COCO-style continuous integral).
pub fn average_precision(curve: &[PrPoint]) -> f64 {
    if curve.is_empty() {
        return 0.0;
    }
    // Envelope: precision at recall r becomes max precision at recall >= r.
    let mut env: Vec<PrPoint> = curve.to_vec();
    let mut running = 0.0f64;
    for p in env.iter_mut().rev() {
        running = running.max(p.precision);
        p.precision = running;
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for p in &env {
        if p.recall > prev_recall {
            ap += (p.recall - prev_recall) * p.precision;
            prev_recall = p.recall;
        }
    }
    ap
}

fn gt_classes(gts: &[RoiBox]) -> BTreeSet<u32> {
    gts.iter().map(|g| g.class_id).collect()
}

fn ap_for_class(preds: &[Detection], gts: &[RoiBox], class: u32, thresh: f64) -> f64 {
    let cls_preds: Vec<Detection> = preds
        .iter()
        .filter(|p| p.class_id == class)
        .cloned()
        .collect();
    let cls_gts: Vec<RoiBox> = gts
        .iter()
        .filter(|g| g.class_id == class)
        .cloned()
        .collect();
    let table = match_detections(&cls_preds, &cls_gts, thresh);
    match pr_curve(&table) {
        Ok(curve) => average_precision(&curve),
        Err(_) => 0.0,
    }
}

fn mean_ap_at(preds: &[Detection], gts: &[RoiBox], thresh: f64) -> Result<f64, MetricsError> {
    let classes = gt_classes(gts);
    if classes.is_empty() {
        return Err(MetricsError::NoGroundTruth);
    }
    let total: f64 = classes
        .iter()
        .map(|&c| ap_for_class(preds, gts, c, thresh))
        .sum();
    Ok(total / classes.len() as f64)
}

/// Class-mean average precision at IoU 0.50.
pub fn map50(preds: &[Detection], gts: &[RoiBox]) -> Result<f64, MetricsError> {
    mean_ap_at(preds, gts, 0.5)
}

/// IoU thresholds 0.50, 0.55, ..., 0.95 used by mAP50-95.
pub fn map5095_thresholds() -> Vec<f64> {
    (0..10).map(|k| (50 + 5 * k) as f64 / 100.0).collect()
}

/// Mean over IoU thresholds 0.50..0.95 (step 0.05) of the class-mean AP.
pub fn map5095(preds: &[Detection], gts: &[RoiBox]) -> Result<f64, MetricsError> {
    let thresholds = map5095_thresholds();
    let mut total = 0.0;
    for &t in &thresholds {
        total += mean_ap_at(preds, gts, t)?;
    }
    Ok(total / thresholds.len() as f64)
}

/// Evaluation summary written by the CLI.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub map50: f64,
    pub map5095: f64,
    pub per_class: Vec<PerClassAp>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerClassAp {
    pub class_id: u32,
    pub ap50: f64,
}

pub fn evaluate(preds: &[Detection], gts: &[RoiBox]) -> Result<MetricReport, MetricsError> {
    let per_class = gt_classes(gts)
        .into_iter()
        .map(|c| PerClassAp {
            class_id: c,
            ap50: ap_for_class(preds, gts, c, 0.5),
        })
        .collect();
    Ok(MetricReport {
        map50: map50(preds, gts)?,
        map5095: map5095(preds, gts)?,
        per_class,
    })
}

pub fn save_report(path: &Path, report: &MetricReport) -> Result<(), MetricsError> {
    let text = serde_json::to_string_pretty(report).map_err(|e| MetricsError::Format(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn det(x: f64, y: f64, w: f64, h: f64, class: u32, score: f64) -> Detection {
        Detection {
            bbox: RoiBox::new(x, y, w, h, class),
            class_id: class,
            score,
        }
    }

    #[test]
    fn iou_examples() {
        let a = RoiBox::new(0.0, 0.0, 2.0, 2.0, 0);
        assert_eq!(iou(&a, &a), 1.0);
        let far = RoiBox::new(10.0, 10.0, 2.0, 2.0, 0);
        assert_eq!(iou(&a, &far), 0.0);
        let b = RoiBox::new(1.0, 1.0, 2.0, 2.0, 0);
        // 1x1 overlap, union 4+4-1: pixel-area counting gives 1/7
        assert_relative_eq!(iou(&a, &b), 1.0 / 7.0);
        assert_relative_eq!(iou(&b, &a), iou(&a, &b));
    }

    #[test]
    fn single_perfect_match() {
        let gt = vec![RoiBox::new(0.0, 0.0, 4.0, 4.0, 0)];
        let preds = vec![det(0.0, 0.0, 4.0, 4.0, 0, 0.9)];
        let table = match_detections(&preds, &gt, 0.5);
        assert_eq!((table.tp_count(), table.fp_count(), table.fn_count()), (1, 0, 0));
    }

    #[test]
    fn second_prediction_on_same_gt_is_fp() {
        let gt = vec![RoiBox::new(0.0, 0.0, 4.0, 4.0, 0)];
        let preds = vec![
            det(0.0, 0.0, 4.0, 4.0, 0, 0.6),
            det(0.5, 0.0, 4.0, 4.0, 0, 0.9),
        ];
        let table = match_detections(&preds, &gt, 0.5);
        // higher score goes first and takes the box
        assert_eq!(table.entries[0].pred_index, 1);
        assert!(table.entries[0].is_tp);
        assert!(!table.entries[1].is_tp);
    }

    #[test]
    fn pr_curve_basics() {
        let gt = vec![
            RoiBox::new(0.0, 0.0, 4.0, 4.0, 0),
            RoiBox::new(10.0, 10.0, 4.0, 4.0, 0),
        ];
        let preds = vec![
            det(0.0, 0.0, 4.0, 4.0, 0, 0.9),
            det(10.0, 10.0, 4.0, 4.0, 0, 0.8),
        ];
        let curve = pr_curve(&match_detections(&preds, &gt, 0.5)).unwrap();
        assert_eq!(curve.len(), 2);
        assert_relative_eq!(curve[0].recall, 0.5);
        assert_relative_eq!(curve[0].precision, 1.0);
        assert_relative_eq!(curve[1].recall, 1.0);
        assert_relative_eq!(curve[1].precision, 1.0);

        // all FP: zero recall and zero precision at every point
        let misses = vec![det(50.0, 50.0, 2.0, 2.0, 0, 0.9)];
        let curve = pr_curve(&match_detections(&misses, &gt, 0.5)).unwrap();
        assert_eq!(curve[0].precision, 0.0);
        assert_eq!(curve[0].recall, 0.0);

        assert!(pr_curve(&match_detections(&preds, &[], 0.5)).is_err());
    }

    #[test]
    fn hand_computed_three_prediction_curve() {
        // TP, FP, TP over 2 GT: points (0.5,1), (0.5,0.5), (1.0,2/3)
        let gt = vec![
            RoiBox::new(0.0, 0.0, 4.0, 4.0, 0),
            RoiBox::new(10.0, 10.0, 4.0, 4.0, 0),
        ];
        let preds = vec![
            det(0.0, 0.0, 4.0, 4.0, 0, 0.9),
            det(40.0, 40.0, 4.0, 4.0, 0, 0.8),
            det(10.0, 10.0, 4.0, 4.0, 0, 0.7),
        ];
        let curve = pr_curve(&match_detections(&preds, &gt, 0.5)).unwrap();
        let expect = [(0.5, 1.0), (0.5, 0.5), (1.0, 2.0 / 3.0)];
        for (p, (r, pr)) in curve.iter().zip(expect) {
            assert_relative_eq!(p.recall, r);
            assert_relative_eq!(p.precision, pr);
        }
    }

    #[test]
    fn ap_two_point_example() {
        let curve = vec![
            PrPoint { recall: 0.5, precision: 1.0 },
            PrPoint { recall: 1.0, precision: 0.5 },
        ];
        assert_relative_eq!(average_precision(&curve), 0.75);
    }

    #[test]
    fn ap_extremes() {
        let perfect = vec![PrPoint { recall: 1.0, precision: 1.0 }];
        assert_eq!(average_precision(&perfect), 1.0);
        let nothing = vec![PrPoint { recall: 0.0, precision: 0.0 }];
        assert_eq!(average_precision(&nothing), 0.0);
        assert_eq!(average_precision(&[]), 0.0);
    }

    #[test]
    fn perfect_detections_score_one() {
        let gt = vec![
            RoiBox::new(0.0, 0.0, 4.0, 4.0, 0),
            RoiBox::new(10.0, 10.0, 4.0, 4.0, 1),
        ];
        let preds = vec![
            det(0.0, 0.0, 4.0, 4.0, 0, 0.9),
            det(10.0, 10.0, 4.0, 4.0, 1, 0.95),
        ];
        assert_relative_eq!(map50(&preds, &gt).unwrap(), 1.0);
        assert_relative_eq!(map5095(&preds, &gt).unwrap(), 1.0);
    }

    #[test]
    fn localization_error_hurts_map5095_first() {
        let gt = vec![RoiBox::new(0.0, 0.0, 10.0, 10.0, 0)];
        // IoU ~ 0.68: counts at 0.5 but fails the higher thresholds
        let preds = vec![det(1.5, 1.5, 10.0, 10.0, 0, 0.9)];
        let m50 = map50(&preds, &gt).unwrap();
        let m5095 = map5095(&preds, &gt).unwrap();
        assert_eq!(m50, 1.0);
        assert!(m5095 < m50);
    }
}
