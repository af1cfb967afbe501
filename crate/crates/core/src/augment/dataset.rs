//! Dataset manifests and label files.
//!
//! A manifest is JSON lines, one record per image with its boxes, provenance
//! tag and the seed that produced it. Labels are the usual normalized
//! `class cx cy w h` text lines, one file per image.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{AugmentError, RoiBox};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Original,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestItem {
    pub path: String,
    pub boxes: Vec<RoiBox>,
    pub provenance: Provenance,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub items: Vec<ManifestItem>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn count_by(&self, provenance: Provenance) -> usize {
        self.items
            .iter()
            .filter(|i| i.provenance == provenance)
            .count()
    }
}

/// Combines the full original dataset with `count` synthetic items drawn
/// without replacement from the pool.
pub fn assemble_dataset(
    original: &DatasetManifest,
    synthetic_pool: &DatasetManifest,
    count: usize,
    seed: u64,
) -> Result<DatasetManifest, AugmentError> {
    if synthetic_pool.len() < count {
        return Err(AugmentError::InsufficientPool {
            need: count,
            have: synthetic_pool.len(),
        });
    }
    let mut items = original.items.clone();
    let mut indices: Vec<usize> = (0..synthetic_pool.len()).collect();
    let mut rng = rng::stream(seed, "augment:assemble");
    indices.shuffle(&mut rng);
    for &i in indices.iter().take(count) {
        items.push(synthetic_pool.items[i].clone());
    }
    Ok(DatasetManifest { items })
}

pub fn save_manifest(path: &Path, manifest: &DatasetManifest) -> Result<(), AugmentError> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in &manifest.items {
        let line = serde_json::to_string(item).map_err(|e| AugmentError::Format(e.to_string()))?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest, AugmentError> {
    let r = BufReader::new(File::open(path)?);
    let mut items = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item: ManifestItem = serde_json::from_str(&line)
            .map_err(|e| AugmentError::Format(format!("line {}: {e}", lineno + 1)))?;
        items.push(item);
    }
    Ok(DatasetManifest { items })
}

pub fn write_label_file(
    path: &Path,
    boxes: &[RoiBox],
    img_w: f64,
    img_h: f64,
) -> Result<(), AugmentError> {
    let mut w = BufWriter::new(File::create(path)?);
    for b in boxes {
        let (class, cx, cy, bw, bh) = b.to_normalized(img_w, img_h);
        writeln!(w, "{class} {cx} {cy} {bw} {bh}")?;
    }
    Ok(())
}

pub fn read_label_file(path: &Path, img_w: f64, img_h: f64) -> Result<Vec<RoiBox>, AugmentError> {
    let r = BufReader::new(File::open(path)?);
    let mut boxes = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        if toks.len() != 5 {
            return Err(AugmentError::Format(format!(
                "line {}: want 5 fields, got {}",
                lineno + 1,
                toks.len()
            )));
        }
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| AugmentError::Format(format!("line {}: {e}", lineno + 1)))
        };
        let class = toks[0]
            .parse::<u32>()
            .map_err(|e| AugmentError::Format(format!("line {}: {e}", lineno + 1)))?;
        boxes.push(RoiBox::from_normalized(
            class,
            parse(toks[1])?,
            parse(toks[2])?,
            parse(toks[3])?,
            parse(toks[4])?,
            img_w,
            img_h,
        ));
    }
    Ok(boxes)
}
