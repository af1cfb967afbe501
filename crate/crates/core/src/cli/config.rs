//! Experiment configuration: one TOML file, flag overrides on top, and a
//! canonical hash embedded in every emitted artifact so runs are
//! reproducible and self-identifying.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffusion::SamplerKind;
use crate::quant::{CalibScheme, Symmetry};
use crate::tensor::Precision;

use super::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: String,
    pub schedule: ScheduleConfig,
    pub sampler: SamplerConfig,
    pub world: WorldConfig,
    pub denoiser: DenoiserTrainConfig,
    pub sweep: SweepConfig,
    pub quantization: QuantizationConfig,
    pub detector: DetectorCfg,
    pub augment: AugmentConfig,
    pub stats: StatsConfig,
    pub bench: BenchConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub scheduler: String,
    pub inference_steps: usize,
    pub guidance_scale: f64,
    pub strength: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub classes: u32,
    pub train_images: usize,
    pub val_images: usize,
    pub pixel_noise: f64,
    pub intensity_jitter: f64,
    pub clutter_per_val_image: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserTrainConfig {
    pub backbone: String,
    pub channels: usize,
    pub hidden: usize,
    pub time_embed_dim: usize,
    pub train_steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub uncond_prob: f64,
    pub loss_window: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Augmentation percents; 0 is the no-augmentation baseline. Empty means
    /// the full ladder 0, 10, ..., 200.
    pub levels: Vec<u32>,
    pub inpaint_precisions: Vec<Precision>,
    pub model_precisions: Vec<Precision>,
    pub keep_cell_predictions: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantizationConfig {
    pub scheme: String,
    pub percentile: f64,
    pub symmetry: String,
    pub granularity: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorCfg {
    pub template_size: usize,
    pub score_thresh: f64,
    pub nms_iou: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub mask_attempts: u32,
    pub annotation_jitter_px: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsConfig {
    pub alpha: f64,
    /// Tie margin for the pairwise tests; `None` auto-detects the data's
    /// printing resolution.
    pub tie_margin: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub warmup: usize,
    pub runs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 17,
            output_dir: "runs/out".to_string(),
            schedule: ScheduleConfig::default(),
            sampler: SamplerConfig::default(),
            world: WorldConfig::default(),
            denoiser: DenoiserTrainConfig::default(),
            sweep: SweepConfig::default(),
            quantization: QuantizationConfig::default(),
            detector: DetectorCfg::default(),
            augment: AugmentConfig::default(),
            stats: StatsConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 400,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            scheduler: "euler_ancestral".to_string(),
            inference_steps: 30,
            guidance_scale: 2.0,
            strength: 0.75,
        }
    }
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            image_size: 20,
            patch_size: 8,
            classes: 2,
            train_images: 14,
            val_images: 16,
            pixel_noise: 0.1,
            intensity_jitter: 0.25,
            clutter_per_val_image: 1,
        }
    }
}

impl Default for DenoiserTrainConfig {
    fn default() -> Self {
        Self {
            backbone: "conv2".to_string(),
            channels: 10,
            hidden: 64,
            time_embed_dim: 8,
            train_steps: 1200,
            batch_size: 32,
            learning_rate: 2e-3,
            uncond_prob: 0.1,
            loss_window: 50,
        }
    }
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            levels: Vec::new(),
            inpaint_precisions: vec![Precision::Fp32, Precision::Fp16, Precision::Int8],
            model_precisions: vec![Precision::Fp32, Precision::Fp16, Precision::Int8],
            keep_cell_predictions: true,
        }
    }
}

impl Default for QuantizationConfig {
    fn default() -> Self {
        Self {
            scheme: "minmax".to_string(),
            percentile: 1.0,
            symmetry: "symmetric".to_string(),
            granularity: "per_tensor".to_string(),
        }
    }
}

impl Default for DetectorCfg {
    fn default() -> Self {
        Self {
            template_size: 8,
            score_thresh: 0.25,
            nms_iou: 0.45,
        }
    }
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            mask_attempts: 500,
            annotation_jitter_px: 0.5,
        }
    }
}

impl Default for StatsConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            tie_margin: None,
        }
    }
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            warmup: 2,
            runs: 10,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Data(format!("config parse error: {e}")))
    }

    pub fn sampler_kind(&self) -> Result<SamplerKind, CliError> {
        self.sampler
            .scheduler
            .parse()
            .map_err(|e: String| CliError::Data(e))
    }

    pub fn calib_scheme(&self) -> Result<CalibScheme, CliError> {
        match self.quantization.scheme.as_str() {
            "minmax" => Ok(CalibScheme::MinMax),
            "percentile" => Ok(CalibScheme::Percentile(self.quantization.percentile)),
            other => Err(CliError::Data(format!("unknown calibration scheme '{other}'"))),
        }
    }

    pub fn symmetry(&self) -> Result<Symmetry, CliError> {
        match self.quantization.symmetry.as_str() {
            "symmetric" => Ok(Symmetry::Symmetric),
            "asymmetric" => Ok(Symmetry::Asymmetric),
            other => Err(CliError::Data(format!("unknown symmetry '{other}'"))),
        }
    }

    /// Sweep percents with the baseline first; empty config means the full
    /// 10%..200% ladder.
    pub fn sweep_levels(&self) -> Vec<u32> {
        if self.sweep.levels.is_empty() {
            let mut levels = vec![0u32];
            levels.extend(crate::augment::SWEEP_PERCENTS);
            levels
        } else {
            self.sweep.levels.clone()
        }
    }

    /// Canonical hash of the resolved configuration. Serializing through
    /// `serde_json::Value` sorts object keys, so formatting and field order
    /// in the source file do not matter.
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let canonical = serde_json::to_string(&value).expect("value serializes");
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        let digest = hasher.finalize();
        let mut out = String::with_capacity(16);
        for b in &digest[..8] {
            out.push_str(&format!("{b:02x}"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn hash_is_stable_under_field_reordering() {
        let a: ExperimentConfig = toml::from_str("seed = 5\noutput_dir = \"x\"\n").unwrap();
        let b: ExperimentConfig = toml::from_str("output_dir = \"x\"\nseed = 5\n").unwrap();
        assert_eq!(a.hash(), b.hash());
        let c: ExperimentConfig = toml::from_str("seed = 6\noutput_dir = \"x\"\n").unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let err = toml::from_str::<ExperimentConfig>("nonsense = 1\n");
        assert!(err.is_err());
    }

    #[test]
    fn default_levels_are_the_full_ladder() {
        let cfg = ExperimentConfig::default();
        let levels = cfg.sweep_levels();
        assert_eq!(levels.len(), 21);
        assert_eq!(levels[0], 0);
        assert_eq!(*levels.last().unwrap(), 200);
    }
}
