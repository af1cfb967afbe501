//! A deliberately simple, quantizable detector: per-class templates from
//! normalized crops, scored by sliding-window normalized cross-correlation,
//! pruned by greedy per-class NMS.
//!
//! The point is not detection quality — it is that the whole forward path is
//! small enough that mAP differences across storage precisions and
//! augmentation levels stay attributable. The INT8 path routes its
//! correlation through the integer conv kernel and sees only the quantized
//! image, mirroring a real INT8 engine.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::RoiBox;
use crate::quant::{
    calibrate, qconv2d, quantize, CalibScheme, QuantError, QuantParams, QuantizedTensor, Symmetry,
};
use crate::tensor::{Precision, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum ToydetError {
    #[error("class {0} has no exemplar")]
    EmptyClass(u32),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Quant(#[from] QuantError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("format error: {0}")]
    Format(String),
}

/// One scored box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: RoiBox,
    pub class_id: u32,
    pub score: f64,
}

/// An image plus its ground-truth boxes, the in-memory form of one manifest row.
#[derive(Debug, Clone)]
pub struct LabeledImage {
    pub image: Tensor,
    pub boxes: Vec<RoiBox>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub template_size: usize,
    pub score_thresh: f64,
    pub nms_iou: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            template_size: 8,
            score_thresh: 0.3,
            nms_iou: 0.45,
        }
    }
}

/// INT8 execution state: quantized templates plus offline activation params.
#[derive(Debug, Clone)]
pub struct Int8State {
    pub templates: Vec<QuantizedTensor>,
    pub activation: QuantParams,
}

/// Per-class templates with a storage-precision tag.
///
/// Templates are kept in canonical f64; `fp32`/`fp16` tags mean the templates
/// were round-tripped through that storage format before use (compute stays
/// in f64), `int8` adds quantized templates and activation calibration.
#[derive(Debug, Clone)]
pub struct DetectorWeights {
    size: usize,
    classes: Vec<u32>,
    templates: Vec<Tensor>,
    precision: Precision,
    int8: Option<Int8State>,
}

impl DetectorWeights {
    pub fn classes(&self) -> &[u32] {
        &self.classes
    }

    pub fn template(&self, class: u32) -> Option<&Tensor> {
        self.classes
            .iter()
            .position(|&c| c == class)
            .map(|i| &self.templates[i])
    }

    pub fn template_size(&self) -> usize {
        self.size
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn param_count(&self) -> usize {
        self.templates.iter().map(|t| t.len()).sum()
    }

    /// Re-tags the weights for a storage precision. FP32/FP16 round-trip the
    /// templates through the codec; INT8 quantizes the templates symmetrically
    /// and calibrates activations min/max from the held-out batch.
    pub fn with_precision(
        &self,
        precision: Precision,
        calibration: &[&Tensor],
    ) -> Result<DetectorWeights, ToydetError> {
        let mut out = self.clone();
        out.precision = precision;
        out.int8 = None;
        match precision {
            Precision::Fp32 | Precision::Fp16 => {
                out.templates = self
                    .templates
                    .iter()
                    .map(|t| t.store_round_trip(precision))
                    .collect();
            }
            Precision::Int8 => {
                let mut qtemplates = Vec::with_capacity(self.templates.len());
                for t in &self.templates {
                    let params = calibrate(t, CalibScheme::MinMax, Symmetry::Symmetric)?;
                    let shaped = t.reshape(vec![1, 1, self.size, self.size])?;
                    qtemplates.push(quantize(&shaped, &params)?);
                }
                let mut pool = Vec::new();
                for img in calibration {
                    pool.extend_from_slice(img.data());
                }
                if pool.is_empty() {
                    return Err(ToydetError::ShapeMismatch(
                        "int8 weights need a calibration batch".to_string(),
                    ));
                }
                let act = calibrate(
                    &Tensor::from_vec(vec![pool.len()], pool)?,
                    CalibScheme::MinMax,
                    Symmetry::Asymmetric,
                )?;
                out.int8 = Some(Int8State {
                    templates: qtemplates,
                    activation: act,
                });
            }
        }
        Ok(out)
    }
}

fn crop_resized(image: &Tensor, b: &RoiBox, size: usize) -> Tensor {
    let (h, w) = (image.shape()[0], image.shape()[1]);
    Tensor::from_fn(vec![size, size], |i| {
        let ty = i / size;
        let tx = i % size;
        let sy = (b.y + (ty as f64 + 0.5) * b.h / size as f64).floor() as isize;
        let sx = (b.x + (tx as f64 + 0.5) * b.w / size as f64).floor() as isize;
        let sy = sy.clamp(0, h as isize - 1) as usize;
        let sx = sx.clamp(0, w as isize - 1) as usize;
        image.at2(sy, sx)
    })
}

/// Zero-mean, unit-L2 version of a crop; `None` for flat crops.
fn normalize_crop(crop: &Tensor) -> Option<Tensor> {
    let mu = crop.mean();
    let centered = crop.map(|v| v - mu);
    let norm = centered.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-12 {
        return None;
    }
    Some(centered.map(|v| v / norm))
}

/// Builds per-class templates as the arithmetic mean of normalized crops.
/// Deterministic given dataset order; every listed class needs an exemplar.
pub fn train_template_detector(
    dataset: &[LabeledImage],
    classes: &[u32],
    config: &DetectorConfig,
) -> Result<DetectorWeights, ToydetError> {
    let size = config.template_size;
    let mut sums: BTreeMap<u32, (Tensor, usize)> = BTreeMap::new();
    for item in dataset {
        for b in &item.boxes {
            if !classes.contains(&b.class_id) {
                continue;
            }
            let crop = crop_resized(&item.image, b, size);
            let Some(normed) = normalize_crop(&crop) else {
                continue;
            };
            match sums.get_mut(&b.class_id) {
                Some((acc, count)) => {
                    *acc = acc.zip_map(&normed, |a, b| a + b)?;
                    *count += 1;
                }
                None => {
                    sums.insert(b.class_id, (normed, 1));
                }
            }
        }
    }
    let mut out_classes = Vec::with_capacity(classes.len());
    let mut templates = Vec::with_capacity(classes.len());
    for &c in classes {
        let (sum, count) = sums.remove(&c).ok_or(ToydetError::EmptyClass(c))?;
        out_classes.push(c);
        templates.push(sum.map(|v| v / count as f64));
    }
    Ok(DetectorWeights {
        size,
        classes: out_classes,
        templates,
        precision: Precision::Fp32,
        int8: None,
    })
}

struct WindowStats {
    /// Per-window sums of the image, indexed `[oy * ow + ox]`.
    sum: Vec<f64>,
    /// Per-window sums of squares.
    sum_sq: Vec<f64>,
    ow: usize,
    oh: usize,
}

fn window_stats(image: &Tensor, size: usize) -> WindowStats {
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let oh = h - size + 1;
    let ow = w - size + 1;
    let mut sum = vec![0.0; oh * ow];
    let mut sum_sq = vec![0.0; oh * ow];
    for oy in 0..oh {
        for ox in 0..ow {
            let mut s = 0.0;
            let mut ss = 0.0;
            for dy in 0..size {
                for dx in 0..size {
                    let v = image.at2(oy + dy, ox + dx);
                    s += v;
                    ss += v * v;
                }
            }
            sum[oy * ow + ox] = s;
            sum_sq[oy * ow + ox] = ss;
        }
    }
    WindowStats { sum, sum_sq, ow, oh }
}

fn correlation_f64(image: &Tensor, template: &Tensor) -> Tensor {
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let size = template.shape()[0];
    let oh = h - size + 1;
    let ow = w - size + 1;
    Tensor::from_fn(vec![oh, ow], |i| {
        let oy = i / ow;
        let ox = i % ow;
        let mut acc = 0.0;
        for dy in 0..size {
            for dx in 0..size {
                acc += image.at2(oy + dy, ox + dx) * template.at2(dy, dx);
            }
        }
        acc
    })
}

/// Normalized cross-correlation score from raw pieces.
///
/// `corr` is `sum(I_w * T)` over the window; centering both sides turns it
/// into the cosine between the centered window and centered template, which
/// bounds the value to [-1, 1] regardless of storage error in `T`.
#[allow(clippy::too_many_arguments)]
fn ncc_score(
    corr: f64,
    win_sum: f64,
    win_sum_sq: f64,
    n: f64,
    t_sum: f64,
    t_centered_norm: f64,
) -> f64 {
    let win_mu = win_sum / n;
    let centered = corr - win_mu * t_sum;
    let win_var = (win_sum_sq - win_sum * win_sum / n).max(0.0);
    let denom = win_var.sqrt() * t_centered_norm;
    if denom < 1e-12 {
        return 0.0;
    }
    centered / denom
}

fn template_stats(t: &Tensor) -> (f64, f64) {
    let sum = t.sum();
    let mu = sum / t.len() as f64;
    let norm = t
        .data()
        .iter()
        .map(|v| (v - mu) * (v - mu))
        .sum::<f64>()
        .sqrt();
    (sum, norm)
}

/// Sliding-window detection at the weights' storage precision.
///
/// Scores are clamped to [0, 1]; candidate boxes below `score_thresh` are
/// dropped, survivors are pruned by greedy per-class NMS and returned sorted
/// by descending score (deterministic scan-order tiebreak).
pub fn detect(
    image: &Tensor,
    weights: &DetectorWeights,
    score_thresh: f64,
    nms_iou: f64,
) -> Result<Vec<Detection>, ToydetError> {
    if image.rank() != 2 {
        return Err(ToydetError::ShapeMismatch(format!(
            "image must be [H, W], got {:?}",
            image.shape()
        )));
    }
    let size = weights.size;
    let (h, w) = (image.shape()[0], image.shape()[1]);
    if h < size || w < size {
        return Err(ToydetError::ShapeMismatch(format!(
            "image {h}x{w} smaller than template {size}x{size}"
        )));
    }

    // The INT8 engine only ever sees the quantized image: correlation runs on
    // integer codes and the window statistics come from the dequantized image.
    let (stats_image, correlations): (Tensor, Vec<Tensor>) = match (&weights.int8, weights.precision)
    {
        (Some(state), Precision::Int8) => {
            let shaped = image.reshape(vec![1, h, w])?;
            let qimage = quantize(&shaped, &state.activation)?;
            let dequant = crate::quant::dequantize(&qimage).reshape(vec![h, w])?;
            let mut corrs = Vec::with_capacity(state.templates.len());
            for qt in &state.templates {
                let c = qconv2d(&qimage, qt, (1, 1), (0, 0))?;
                let oh = c.shape()[1];
                let ow = c.shape()[2];
                corrs.push(c.reshape(vec![oh, ow])?);
            }
            (dequant, corrs)
        }
        _ => {
            let corrs = weights
                .templates
                .iter()
                .map(|t| correlation_f64(image, t))
                .collect();
            (image.clone(), corrs)
        }
    };

    let stats = window_stats(&stats_image, size);
    let n = (size * size) as f64;

    let mut candidates: Vec<Detection> = Vec::new();
    for (ci, &class) in weights.classes.iter().enumerate() {
        let template_exec: Tensor = match (&weights.int8, weights.precision) {
            (Some(state), Precision::Int8) => crate::quant::dequantize(&state.templates[ci])
                .reshape(vec![size, size])?,
            _ => weights.templates[ci].clone(),
        };
        let (t_sum, t_norm) = template_stats(&template_exec);
        let corr = &correlations[ci];
        for oy in 0..stats.oh {
            for ox in 0..stats.ow {
                let idx = oy * stats.ow + ox;
                let score = ncc_score(
                    corr.at2(oy, ox),
                    stats.sum[idx],
                    stats.sum_sq[idx],
                    n,
                    t_sum,
                    t_norm,
                )
                .clamp(0.0, 1.0);
                if score >= score_thresh {
                    candidates.push(Detection {
                        bbox: RoiBox::new(ox as f64, oy as f64, size as f64, size as f64, class),
                        class_id: class,
                        score,
                    });
                }
            }
        }
    }

    Ok(nms(candidates, nms_iou))
}

/// Greedy per-class non-maximum suppression; keeps boxes whose IoU with every
/// already-kept box of the same class is at most `nms_iou`.
pub fn nms(mut candidates: Vec<Detection>, nms_iou: f64) -> Vec<Detection> {
    candidates.sort_by(|a, b| b.score.partial_cmp(&a.score).expect("finite scores"));
    let mut kept: Vec<Detection> = Vec::new();
    for cand in candidates {
        let suppressed = kept.iter().any(|k| {
            k.class_id == cand.class_id && crate::metrics::iou(&k.bbox, &cand.bbox) > nms_iou
        });
        if !suppressed {
            kept.push(cand);
        }
    }
    kept
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub image: String,
    pub class: u32,
    pub score: f64,
    #[serde(rename = "box")]
    pub bbox: RoiBox,
}

pub fn save_predictions(path: &Path, records: &[PredictionRecord]) -> Result<(), ToydetError> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| ToydetError::Format(e.to_string()))?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn load_predictions(path: &Path) -> Result<Vec<PredictionRecord>, ToydetError> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| ToydetError::Format(format!("line {}: {e}", lineno + 1)))?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 8x8 asymmetric pattern with nonzero variance.
    fn pattern() -> Tensor {
        Tensor::from_fn(vec![8, 8], |i| {
            let y = i / 8;
            let x = i % 8;
            0.2 + 0.08 * y as f64 + if x >= 4 { 0.3 } else { 0.0 }
        })
    }

    fn image_with_pattern(at: (usize, usize)) -> Tensor {
        let p = pattern();
        Tensor::from_fn(vec![20, 20], |i| {
            let y = i / 20;
            let x = i % 20;
            if y >= at.0 && y < at.0 + 8 && x >= at.1 && x < at.1 + 8 {
                p.at2(y - at.0, x - at.1)
            } else {
                0.05
            }
        })
    }

    fn trained() -> DetectorWeights {
        let img = image_with_pattern((3, 5));
        let data = vec![LabeledImage {
            image: img,
            boxes: vec![RoiBox::new(5.0, 3.0, 8.0, 8.0, 0)],
        }];
        train_template_detector(&data, &[0], &DetectorConfig::default()).unwrap()
    }

    #[test]
    fn single_exemplar_template_is_the_normalized_crop() {
        let weights = trained();
        let t = weights.template(0).unwrap();
        assert!((t.sum()).abs() < 1e-9); // zero mean
        let norm: f64 = t.data().iter().map(|v| v * v).sum();
        assert!((norm - 1.0).abs() < 1e-9); // unit L2
    }

    #[test]
    fn duplicated_dataset_gives_identical_weights() {
        let img = image_with_pattern((2, 2));
        let one = vec![LabeledImage {
            image: img.clone(),
            boxes: vec![RoiBox::new(2.0, 2.0, 8.0, 8.0, 0)],
        }];
        let two = vec![one[0].clone(), one[0].clone()];
        let w1 = train_template_detector(&one, &[0], &DetectorConfig::default()).unwrap();
        let w2 = train_template_detector(&two, &[0], &DetectorConfig::default()).unwrap();
        assert_eq!(w1.template(0).unwrap().data(), w2.template(0).unwrap().data());
    }

    #[test]
    fn template_updates_by_running_mean() {
        let a = image_with_pattern((0, 0));
        let mut b = image_with_pattern((0, 0));
        // perturb the second image's pattern
        b = b.map(|v| v * 0.8 + 0.02);
        let item_a = LabeledImage {
            image: a,
            boxes: vec![RoiBox::new(0.0, 0.0, 8.0, 8.0, 0)],
        };
        let item_b = LabeledImage {
            image: b,
            boxes: vec![RoiBox::new(0.0, 0.0, 8.0, 8.0, 0)],
        };
        let w_a = train_template_detector(
            &[item_a.clone()],
            &[0],
            &DetectorConfig::default(),
        )
        .unwrap();
        let w_b = train_template_detector(
            &[item_b.clone()],
            &[0],
            &DetectorConfig::default(),
        )
        .unwrap();
        let w_ab = train_template_detector(&[item_a, item_b], &[0], &DetectorConfig::default())
            .unwrap();
        let ta = w_a.template(0).unwrap();
        let tb = w_b.template(0).unwrap();
        let tab = w_ab.template(0).unwrap();
        for i in 0..ta.len() {
            let mean = (ta.data()[i] + tb.data()[i]) / 2.0;
            assert!((tab.data()[i] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_class_errors() {
        let img = image_with_pattern((0, 0));
        let data = vec![LabeledImage {
            image: img,
            boxes: vec![RoiBox::new(0.0, 0.0, 8.0, 8.0, 0)],
        }];
        let err = train_template_detector(&data, &[0, 1], &DetectorConfig::default()).unwrap_err();
        assert!(matches!(err, ToydetError::EmptyClass(1)));
    }

    #[test]
    fn pattern_on_flat_background_is_found_with_high_score() {
        let weights = trained();
        let image = image_with_pattern((7, 4));
        let dets = detect(&image, &weights, 0.5, 0.4).unwrap();
        assert!(!dets.is_empty());
        assert_eq!(dets[0].bbox.x, 4.0);
        assert_eq!(dets[0].bbox.y, 7.0);
        assert!(dets[0].score > 0.99, "score {}", dets[0].score);
    }

    #[test]
    fn blank_image_yields_nothing() {
        let weights = trained();
        let blank = Tensor::zeros(vec![20, 20]);
        let dets = detect(&blank, &weights, 0.1, 0.4).unwrap();
        assert!(dets.is_empty());
    }

    #[test]
    fn nms_output_is_an_antichain() {
        let weights = trained();
        let image = image_with_pattern((7, 4));
        let dets = detect(&image, &weights, 0.2, 0.35).unwrap();
        for i in 0..dets.len() {
            for j in i + 1..dets.len() {
                if dets[i].class_id == dets[j].class_id {
                    assert!(crate::metrics::iou(&dets[i].bbox, &dets[j].bbox) <= 0.35);
                }
            }
        }
        // scores sorted descending
        for pair in dets.windows(2) {
            assert!(pair[0].score >= pair[1].score);
        }
    }

    #[test]
    fn fp16_path_equals_fp32_path_on_roundtripped_weights() {
        let weights = trained();
        let image = image_with_pattern((5, 5));
        let fp16 = weights.with_precision(Precision::Fp16, &[]).unwrap();
        // manually round-trip the canonical templates, keep the fp32 tag
        let mut manual = weights.clone();
        manual.templates = weights
            .templates
            .iter()
            .map(|t| t.store_round_trip(Precision::Fp16))
            .collect();
        let a = detect(&image, &fp16, 0.3, 0.4).unwrap();
        let b = detect(&image, &manual, 0.3, 0.4).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.bbox, y.bbox);
            assert_eq!(x.score, y.score);
        }
    }

    #[test]
    fn int8_matches_fp32_locations_when_margins_dominate_the_bound() {
        let weights = trained();
        let image = image_with_pattern((6, 9));
        let calib: Vec<&Tensor> = vec![&image];
        let int8 = weights.with_precision(Precision::Int8, &calib).unwrap();
        let dets32 = detect(&image, &weights, 0.6, 0.4).unwrap();
        let dets8 = detect(&image, &int8, 0.6, 0.4).unwrap();
        assert_eq!(dets32.len(), 1);
        assert_eq!(dets8.len(), 1);
        assert_eq!(dets32[0].bbox, dets8[0].bbox);
        // the constructed margin (~1.0 vs background) dwarfs the round-trip
        // error bound s/2 * (template l1 energy)
        let state = int8.int8.as_ref().unwrap();
        let s_img = state.activation.scales[0];
        let t_l1: f64 = weights.template(0).unwrap().data().iter().map(|v| v.abs()).sum();
        let bound = s_img / 2.0 * t_l1 * 4.0; // slack for both operands
        assert!((dets32[0].score - dets8[0].score).abs() <= bound.max(0.05));
    }

    #[test]
    fn predictions_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("preds.jsonl");
        let recs = vec![PredictionRecord {
            image: "val_0".into(),
            class: 1,
            score: 0.75,
            bbox: RoiBox::new(1.0, 2.0, 8.0, 8.0, 1),
        }];
        save_predictions(&path, &recs).unwrap();
        let back = load_predictions(&path).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].image, "val_0");
        assert_eq!(back[0].bbox, recs[0].bbox);
    }
}
