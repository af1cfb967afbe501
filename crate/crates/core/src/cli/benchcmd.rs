//! Latency/size benchmarking of the two model paths across precisions.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::bench::{
    model_size, percent_reduction, render_latency_table, render_size_table, time_op, BenchResult,
    Clock, ScriptedClock, SizeEntry, WallClock,
};
use crate::diffusion::{make_schedule, reverse_step, ScheduleKind};
use crate::rng::stream_seed;
use crate::tensor::{Precision, Tensor};
use crate::toydet::{detect, train_template_detector, DetectorConfig};

use super::config::ExperimentConfig;
use super::sweep::train_sweep_denoiser;
use super::toyworld::build_world;
use super::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub config_hash: String,
    pub seed: u64,
    pub denoiser_step: Vec<BenchResult>,
    pub detector: Vec<BenchResult>,
    pub denoiser_sizes: Vec<SizeEntry>,
    pub detector_sizes: Vec<SizeEntry>,
    pub latency_reduction_vs_fp32: Vec<(String, f64)>,
}

const PRECISIONS: [Precision; 3] = [Precision::Fp32, Precision::Fp16, Precision::Int8];

/// Times one reverse-process step of the denoiser and one full detector pass
/// at each precision, reports sizes and percent reductions, and writes
/// markdown + JSON artifacts.
pub fn cmd_bench(
    cfg: &ExperimentConfig,
    mock_intervals_ms: Option<Vec<f64>>,
) -> Result<(BenchReport, PathBuf), CliError> {
    let hash = cfg.hash();
    let out_dir = std::path::Path::new(&cfg.output_dir).join(format!("bench_{hash}"));
    std::fs::create_dir_all(&out_dir).map_err(|e| CliError::Data(e.to_string()))?;

    let world = build_world(&cfg.world, stream_seed(cfg.seed, "world"));
    let sched = make_schedule(
        cfg.schedule.steps,
        cfg.schedule.beta_start,
        cfg.schedule.beta_end,
        ScheduleKind::Linear,
    )
    .map_err(|e| CliError::Data(e.to_string()))?;
    let trained = train_sweep_denoiser(cfg, &world, &sched)?;

    let calib: Vec<(Tensor, usize, Option<u32>)> = {
        let mut rng = crate::rng::stream(cfg.seed, "bench:calib");
        world
            .patches
            .iter()
            .enumerate()
            .map(|(i, (x, c))| {
                let t = 1 + (i * 53) % sched.t_max();
                let eps = crate::diffusion::randn(&mut rng, vec![x.len()]);
                let xt = crate::diffusion::forward_diffuse(x, t, &eps, &sched)
                    .expect("t within schedule");
                (xt, t, *c)
            })
            .collect()
    };

    let det_cfg = DetectorConfig {
        template_size: cfg.detector.template_size,
        score_thresh: cfg.detector.score_thresh,
        nms_iou: cfg.detector.nms_iou,
    };
    let classes: Vec<u32> = (0..cfg.world.classes).collect();
    let detector = train_template_detector(&world.train, &classes, &det_cfg)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let calib_images: Vec<&Tensor> = world.train.iter().map(|t| &t.image).collect();

    let mut clock: Box<dyn Clock> = match &mock_intervals_ms {
        Some(ms) => Box::new(ScriptedClock::from_millis(ms)),
        None => Box::new(WallClock::default()),
    };

    let mid_t = sched.t_max() / 2;
    let probe = world.patches[0].0.clone();
    let val_img = &world.val[0].image;

    let mut denoiser_step = Vec::new();
    let mut detector_runs = Vec::new();
    for &p in &PRECISIONS {
        let model = trained
            .model
            .with_precision(p, &calib)
            .map_err(|e| CliError::Internal(e.to_string()))?;
        let mut rng = crate::rng::stream(cfg.seed, "bench:step");
        let r = time_op(
            &format!("denoiser_step_{}", p.label()),
            || {
                let out = reverse_step(&probe, mid_t, &model, &sched, &mut rng, Some(0))
                    .expect("probe matches model dims");
                std::hint::black_box(out.data()[0]);
            },
            cfg.bench.warmup,
            cfg.bench.runs,
            clock.as_mut(),
        )
        .map_err(|e| CliError::Internal(e.to_string()))?;
        denoiser_step.push(r);

        let weights = detector
            .with_precision(p, &calib_images)
            .map_err(|e| CliError::Internal(e.to_string()))?;
        let r = time_op(
            &format!("detect_{}", p.label()),
            || {
                let dets = detect(val_img, &weights, det_cfg.score_thresh, det_cfg.nms_iou)
                    .expect("valid image");
                std::hint::black_box(dets.len());
            },
            cfg.bench.warmup,
            cfg.bench.runs,
            clock.as_mut(),
        )
        .map_err(|e| CliError::Internal(e.to_string()))?;
        detector_runs.push(r);
    }

    // overhead model: the serialized checkpoint manifest (same for every
    // precision at this scale)
    let manifest_bytes = {
        let dir = out_dir.join("checkpoint");
        crate::diffusion::save_checkpoint(&dir, &trained.model)
            .map_err(|e| CliError::Data(e.to_string()))?;
        std::fs::metadata(dir.join("manifest.json"))
            .map(|m| m.len())
            .unwrap_or(0)
    };
    let overhead = move |_: Precision| manifest_bytes;
    let denoiser_sizes: Vec<SizeEntry> = PRECISIONS
        .iter()
        .map(|&p| model_size(trained.model.param_count() as u64, p, &overhead))
        .collect();
    let det_overhead = |_: Precision| 0u64;
    let detector_sizes: Vec<SizeEntry> = PRECISIONS
        .iter()
        .map(|&p| model_size(detector.param_count() as u64, p, &det_overhead))
        .collect();

    let fp32_latency = denoiser_step[0].mean_ms;
    let latency_reduction_vs_fp32 = denoiser_step
        .iter()
        .map(|r| {
            let red = percent_reduction(fp32_latency, r.mean_ms).unwrap_or(0.0);
            (r.label.clone(), red)
        })
        .collect();

    let report = BenchReport {
        config_hash: hash,
        seed: cfg.seed,
        denoiser_step,
        detector: detector_runs,
        denoiser_sizes,
        detector_sizes,
        latency_reduction_vs_fp32,
    };

    let mut md = String::new();
    md.push_str("# Quantization benchmark\n\n## Denoiser step latency\n\n");
    md.push_str(&render_latency_table(&report.denoiser_step));
    md.push_str("\n## Detector latency\n\n");
    md.push_str(&render_latency_table(&report.detector));
    md.push_str("\n## Model sizes\n\n");
    md.push_str(&render_size_table("denoiser", &report.denoiser_sizes));
    md.push('\n');
    md.push_str(&render_size_table("detector", &report.detector_sizes));
    std::fs::write(out_dir.join("bench.md"), &md).map_err(|e| CliError::Data(e.to_string()))?;
    let text =
        serde_json::to_string_pretty(&report).map_err(|e| CliError::Internal(e.to_string()))?;
    std::fs::write(out_dir.join("bench.json"), text)
        .map_err(|e| CliError::Data(e.to_string()))?;

    Ok((report, out_dir))
}
