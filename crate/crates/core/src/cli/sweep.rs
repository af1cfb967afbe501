//! The end-to-end experiment: train a patch denoiser once, run it at each
//! inpainting precision to fill synthetic pools, assemble datasets along the
//! augmentation ladder, train/evaluate the template detector at each model
//! precision, and persist records, per-setting result CSVs and a
//! deterministic report.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::{
    assemble_dataset, auto_annotate, generate_mask, plan_sweep, save_manifest, write_label_file,
    DatasetManifest, Jitter, ManifestItem, Provenance, RoiBox,
};
use crate::diffusion::{
    inpaint, make_schedule, train_toy_denoiser, BackboneKind, Denoiser, DenoiserConfig,
    InpaintRequest, NoiseSchedule, ScheduleKind, TrainConfig,
};
use crate::metrics::evaluate;
use crate::rng::stream_seed;
use crate::tensor::{save_tensor, Precision, Tensor};
use crate::toydet::{
    detect, save_predictions, train_template_detector, DetectorConfig, DetectorWeights,
    LabeledImage, PredictionRecord,
};

use super::config::ExperimentConfig;
use super::toyworld::{build_world, ToyWorld};
use super::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub seed: u64,
    pub inpaint_precision: Precision,
    pub level_percent: u32,
    pub model_precision: Precision,
    pub map50: f64,
    pub map5095: f64,
    /// Wall-clock of the evaluation; diagnostic only, not part of the
    /// deterministic report.
    pub eval_ms: f64,
    pub timestamp_unix_ms: u128,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepCell {
    pub inpaint_precision: Precision,
    pub level_percent: u32,
    pub model_precision: Precision,
    pub map50: f64,
    pub map5095: f64,
}

/// Deterministic sweep summary: byte-identical across runs with equal config.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub config_hash: String,
    pub seed: u64,
    pub levels: Vec<u32>,
    pub denoiser_initial_loss: f64,
    pub denoiser_final_loss: f64,
    pub cells: Vec<SweepCell>,
}

struct SynthPool {
    images: Vec<LabeledImage>,
    manifest: DatasetManifest,
}

fn denoiser_config(cfg: &ExperimentConfig) -> Result<DenoiserConfig, CliError> {
    let s = cfg.world.patch_size;
    let backbone = match cfg.denoiser.backbone.as_str() {
        "conv2" => BackboneKind::Conv2 {
            channels: cfg.denoiser.channels,
        },
        "mlp" => BackboneKind::Mlp {
            hidden: cfg.denoiser.hidden,
        },
        other => return Err(CliError::Data(format!("unknown backbone '{other}'"))),
    };
    Ok(DenoiserConfig {
        backbone,
        data_dim: s * s,
        spatial: Some((s, s)),
        num_classes: cfg.world.classes,
        time_embed_dim: cfg.denoiser.time_embed_dim,
    })
}

/// Trains the canonical patch denoiser on crops from the original images.
pub fn train_sweep_denoiser(
    cfg: &ExperimentConfig,
    world: &ToyWorld,
    sched: &NoiseSchedule,
) -> Result<crate::diffusion::TrainOutcome, CliError> {
    let model = Denoiser::new(denoiser_config(cfg)?, stream_seed(cfg.seed, "denoiser:init"))
        .map_err(|e| CliError::Data(e.to_string()))?;
    let train_cfg = TrainConfig {
        steps: cfg.denoiser.train_steps,
        batch_size: cfg.denoiser.batch_size,
        learning_rate: cfg.denoiser.learning_rate,
        uncond_prob: cfg.denoiser.uncond_prob,
        loss_window: cfg.denoiser.loss_window,
        seed: stream_seed(cfg.seed, "denoiser:train"),
    };
    train_toy_denoiser(model, &world.patches, sched, &train_cfg)
        .map_err(|e| CliError::Internal(e.to_string()))
}

/// Border-preserving patch mask: a one-pixel ring stays pinned to the
/// original crop so pasted patches blend in at the seams.
fn interior_mask(size: usize) -> Tensor {
    Tensor::from_fn(vec![size, size], |i| {
        let y = i / size;
        let x = i % size;
        if y == 0 || x == 0 || y == size - 1 || x == size - 1 {
            0.0
        } else {
            1.0
        }
    })
}

fn crop(image: &Tensor, b: &RoiBox, size: usize) -> Tensor {
    let (x0, y0) = (b.x as usize, b.y as usize);
    Tensor::from_fn(vec![size, size], |i| image.at2(y0 + i / size, x0 + i % size))
}

fn paste(image: &Tensor, patch: &Tensor, b: &RoiBox, size: usize) -> Tensor {
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let (x0, y0) = (b.x as usize, b.y as usize);
    Tensor::from_fn(vec![h, w], |i| {
        let y = i / w;
        let x = i % w;
        if y >= y0 && y < y0 + size && x >= x0 && x < x0 + size {
            patch.at2(y - y0, x - x0)
        } else {
            image.at2(y, x)
        }
    })
}

/// Fills a synthetic pool by inpainting new objects into ROI-free regions of
/// the original images with the model at one inpainting precision.
#[allow(clippy::too_many_arguments)]
fn build_pool(
    cfg: &ExperimentConfig,
    world: &ToyWorld,
    sched: &NoiseSchedule,
    model: &Denoiser,
    precision: Precision,
    pool_size: usize,
) -> Result<SynthPool, CliError> {
    let patch = cfg.world.patch_size;
    let mask = interior_mask(patch);
    let kind = cfg.sampler_kind()?;
    let jitter = Jitter {
        translate: cfg.augment.annotation_jitter_px,
        resize: cfg.augment.annotation_jitter_px,
    };
    let ptag = precision.label();
    let mut images = Vec::with_capacity(pool_size);
    let mut items = Vec::with_capacity(pool_size);
    for i in 0..pool_size {
        let base = &world.train[i % world.train.len()];
        let class = (i as u32) % cfg.world.classes;
        let mask_seed = stream_seed(cfg.seed, &format!("sweep:{ptag}:mask:{i}"));
        let spec = generate_mask(
            (cfg.world.image_size as u32, cfg.world.image_size as u32),
            &base.boxes,
            (patch as u32, patch as u32),
            class,
            mask_seed,
            cfg.augment.mask_attempts,
        )
        .map_err(|e| CliError::Data(e.to_string()))?;

        let base_patch = crop(&base.image, &spec.placement, patch);
        let req = InpaintRequest {
            image: base_patch,
            mask: mask.clone(),
            condition: Some(class),
            strength: cfg.sampler.strength,
            steps: cfg.sampler.inference_steps,
            guidance: cfg.sampler.guidance_scale,
        };
        let mut rng = crate::rng::stream(
            stream_seed(cfg.seed, &format!("sweep:{ptag}:inpaint:{i}")),
            "inpaint",
        );
        let synth_patch = inpaint(&req, model, sched, kind, &mut rng)
            .map_err(|e| CliError::Internal(e.to_string()))?;
        let image = paste(&base.image, &synth_patch, &spec.placement, patch);

        let label = auto_annotate(
            &spec,
            jitter,
            (cfg.world.image_size as u32, cfg.world.image_size as u32),
            stream_seed(cfg.seed, &format!("sweep:{ptag}:label:{i}")),
        );
        let mut boxes = base.boxes.clone();
        boxes.push(label);
        images.push(LabeledImage { image, boxes: boxes.clone() });
        items.push(ManifestItem {
            path: format!("data/{ptag}/syn_{i:04}.tensor"),
            boxes,
            provenance: Provenance::Synthetic,
            seed: mask_seed,
        });
    }
    Ok(SynthPool {
        images,
        manifest: DatasetManifest { items },
    })
}

fn original_manifest(world: &ToyWorld) -> DatasetManifest {
    DatasetManifest {
        items: world
            .train
            .iter()
            .enumerate()
            .map(|(i, img)| ManifestItem {
                path: format!("data/original/img_{i:04}.tensor"),
                boxes: img.boxes.clone(),
                provenance: Provenance::Original,
                seed: 0,
            })
            .collect(),
    }
}

/// Offsets every validation image into its own region of the plane so pooled
/// matching is exactly per-image matching with a global score ranking.
fn pooled_eval(
    weights: &DetectorWeights,
    val: &[LabeledImage],
    det_cfg: &DetectorConfig,
) -> Result<(Vec<crate::toydet::Detection>, Vec<RoiBox>, Vec<PredictionRecord>), CliError> {
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    let mut records = Vec::new();
    for (idx, item) in val.iter().enumerate() {
        let offset = idx as f64 * 10_000.0;
        let dets = detect(&item.image, weights, det_cfg.score_thresh, det_cfg.nms_iou)
            .map_err(|e| CliError::Internal(e.to_string()))?;
        for mut d in dets {
            d.bbox.x += offset;
            records.push(PredictionRecord {
                image: format!("val_{idx:04}"),
                class: d.class_id,
                score: d.score,
                bbox: d.bbox,
            });
            preds.push(d);
        }
        for b in &item.boxes {
            let mut g = *b;
            g.x += offset;
            gts.push(g);
        }
    }
    Ok((preds, gts, records))
}

fn write_pool_data(dir: &Path, world: &ToyWorld, pools: &[(Precision, &SynthPool)]) -> Result<(), CliError> {
    let io_err = |e: std::io::Error| CliError::Data(e.to_string());
    let orig_dir = dir.join("data/original");
    std::fs::create_dir_all(&orig_dir).map_err(io_err)?;
    for (i, img) in world.train.iter().enumerate() {
        let path = orig_dir.join(format!("img_{i:04}.tensor"));
        save_tensor(&path, &img.image).map_err(|e| CliError::Data(e.to_string()))?;
        write_label_file(
            &orig_dir.join(format!("img_{i:04}.txt")),
            &img.boxes,
            img.image.shape()[1] as f64,
            img.image.shape()[0] as f64,
        )
        .map_err(|e| CliError::Data(e.to_string()))?;
    }
    for (precision, pool) in pools {
        let pdir = dir.join("data").join(precision.label());
        std::fs::create_dir_all(&pdir).map_err(io_err)?;
        for (i, img) in pool.images.iter().enumerate() {
            let path = pdir.join(format!("syn_{i:04}.tensor"));
            save_tensor(&path, &img.image).map_err(|e| CliError::Data(e.to_string()))?;
            write_label_file(
                &pdir.join(format!("syn_{i:04}.txt")),
                &img.boxes,
                img.image.shape()[1] as f64,
                img.image.shape()[0] as f64,
            )
            .map_err(|e| CliError::Data(e.to_string()))?;
        }
        save_manifest(&pdir.join("pool_manifest.jsonl"), &pool.manifest)
            .map_err(|e| CliError::Data(e.to_string()))?;
    }
    Ok(())
}

/// Runs the sweep and writes all artifacts under
/// `<output_dir>/sweep_<config-hash>/`. Returns the deterministic report.
pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<(SweepReport, PathBuf), CliError> {
    let hash = cfg.hash();
    let out_dir = Path::new(&cfg.output_dir).join(format!("sweep_{hash}"));
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
    let denoiser = trained.model.clone();
    // held-out calibration batch for the int8 denoiser: noised patches at a
    // spread of timesteps
    let calib: Vec<(Tensor, usize, Option<u32>)> = {
        let mut rng = crate::rng::stream(cfg.seed, "sweep:calib");
        world
            .patches
            .iter()
            .enumerate()
            .map(|(i, (x, c))| {
                let t = 1 + (i * 37) % sched.t_max();
                let eps = crate::diffusion::randn(&mut rng, vec![x.len()]);
                let xt = crate::diffusion::forward_diffuse(x, t, &eps, &sched)
                    .expect("t within schedule");
                (xt, t, *c)
            })
            .collect()
    };

    let plan = plan_sweep(world.train.len());
    let levels = cfg.sweep_levels();
    let max_count = levels
        .iter()
        .map(|&p| if p == 0 { 0 } else { plan.count_for(p).unwrap_or((world.train.len() * p as usize + 50) / 100) })
        .max()
        .unwrap_or(0);

    let det_cfg = DetectorConfig {
        template_size: cfg.detector.template_size,
        score_thresh: cfg.detector.score_thresh,
        nms_iou: cfg.detector.nms_iou,
    };
    let classes: Vec<u32> = (0..cfg.world.classes).collect();
    let calib_images: Vec<&Tensor> = world.train.iter().map(|t| &t.image).collect();
    let originals = original_manifest(&world);

    let mut records: Vec<RunRecord> = Vec::new();
    let mut cells: Vec<SweepCell> = Vec::new();
    let mut pools: Vec<(Precision, SynthPool)> = Vec::new();

    for &ip in &cfg.sweep.inpaint_precisions {
        let model_p = denoiser
            .with_precision(ip, &calib)
            .map_err(|e| CliError::Internal(e.to_string()))?;
        let pool = build_pool(cfg, &world, &sched, &model_p, ip, max_count)?;

        for &level in &levels {
            let count = if level == 0 {
                0
            } else {
                plan.count_for(level)
                    .unwrap_or((world.train.len() * level as usize + 50) / 100)
            };
            let manifest = assemble_dataset(
                &originals,
                &pool.manifest,
                count,
                stream_seed(cfg.seed, &format!("sweep:{}:assemble:{level}", ip.label())),
            )
            .map_err(|e| CliError::Data(e.to_string()))?;
            // materialize the assembled dataset in memory (manifest order)
            let mut train_set: Vec<LabeledImage> = Vec::with_capacity(manifest.len());
            for item in &manifest.items {
                match item.provenance {
                    Provenance::Original => {
                        let idx: usize = item
                            .path
                            .trim_start_matches("data/original/img_")
                            .trim_end_matches(".tensor")
                            .parse()
                            .map_err(|_| CliError::Internal("bad manifest path".to_string()))?;
                        train_set.push(world.train[idx].clone());
                    }
                    Provenance::Synthetic => {
                        let idx: usize = item
                            .path
                            .rsplit("syn_")
                            .next()
                            .and_then(|s| s.trim_end_matches(".tensor").parse().ok())
                            .ok_or_else(|| CliError::Internal("bad manifest path".to_string()))?;
                        train_set.push(pool.images[idx].clone());
                    }
                }
            }

            let canonical = train_template_detector(&train_set, &classes, &det_cfg)
                .map_err(|e| CliError::Data(e.to_string()))?;
            for &mp in &cfg.sweep.model_precisions {
                let weights = canonical
                    .with_precision(mp, &calib_images)
                    .map_err(|e| CliError::Internal(e.to_string()))?;
                let started = std::time::Instant::now();
                let (preds, gts, pred_records) = pooled_eval(&weights, &world.val, &det_cfg)?;
                let report = evaluate(&preds, &gts).map_err(|e| CliError::Internal(e.to_string()))?;
                let eval_ms = started.elapsed().as_secs_f64() * 1e3;

                if cfg.sweep.keep_cell_predictions {
                    let cell_dir = out_dir.join("cells").join(format!(
                        "{}_{:03}_{}",
                        ip.label(),
                        level,
                        mp.label()
                    ));
                    std::fs::create_dir_all(&cell_dir)
                        .map_err(|e| CliError::Data(e.to_string()))?;
                    save_predictions(&cell_dir.join("preds.jsonl"), &pred_records)
                        .map_err(|e| CliError::Data(e.to_string()))?;
                    save_manifest(&cell_dir.join("manifest.jsonl"), &manifest)
                        .map_err(|e| CliError::Data(e.to_string()))?;
                }

                records.push(RunRecord {
                    config_hash: hash.clone(),
                    seed: cfg.seed,
                    inpaint_precision: ip,
                    level_percent: level,
                    model_precision: mp,
                    map50: report.map50,
                    map5095: report.map5095,
                    eval_ms,
                    timestamp_unix_ms: std::time::SystemTime::now()
                        .duration_since(std::time::UNIX_EPOCH)
                        .map(|d| d.as_millis())
                        .unwrap_or(0),
                });
                cells.push(SweepCell {
                    inpaint_precision: ip,
                    level_percent: level,
                    model_precision: mp,
                    map50: report.map50,
                    map5095: report.map5095,
                });
            }
        }
        pools.push((ip, pool));
    }

    let pool_refs: Vec<(Precision, &SynthPool)> =
        pools.iter().map(|(p, pool)| (*p, pool)).collect();
    write_pool_data(&out_dir, &world, &pool_refs)?;

    // records.jsonl carries timing/timestamps and is diagnostic; the report
    // and CSVs below are the deterministic artifacts
    let mut w = BufWriter::new(
        File::create(out_dir.join("records.jsonl")).map_err(|e| CliError::Data(e.to_string()))?,
    );
    for r in &records {
        let line = serde_json::to_string(r).map_err(|e| CliError::Internal(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| CliError::Data(e.to_string()))?;
    }
    drop(w);

    for &ip in &cfg.sweep.inpaint_precisions {
        let csv = render_results_csv(&cells, ip, &cfg.sweep.model_precisions, &hash, cfg.seed);
        std::fs::write(
            out_dir.join(format!("results_inpaint_{}.csv", ip.label())),
            csv,
        )
        .map_err(|e| CliError::Data(e.to_string()))?;
    }

    let report = SweepReport {
        config_hash: hash,
        seed: cfg.seed,
        levels,
        denoiser_initial_loss: trained.initial_smoothed,
        denoiser_final_loss: trained.final_smoothed,
        cells,
    };
    let text =
        serde_json::to_string_pretty(&report).map_err(|e| CliError::Internal(e.to_string()))?;
    std::fs::write(out_dir.join("report.json"), text)
        .map_err(|e| CliError::Data(e.to_string()))?;
    Ok((report, out_dir))
}

/// One CSV per inpainting precision in the stats module's schema.
pub fn render_results_csv(
    cells: &[SweepCell],
    inpaint: Precision,
    model_precisions: &[Precision],
    config_hash: &str,
    seed: u64,
) -> String {
    let mut out = format!("# config_hash={config_hash} seed={seed}\n");
    out.push_str("augmentation");
    for mp in model_precisions {
        out.push_str(&format!(",{}", mp.label()));
    }
    out.push('\n');
    let mut levels: Vec<u32> = cells
        .iter()
        .filter(|c| c.inpaint_precision == inpaint)
        .map(|c| c.level_percent)
        .collect();
    levels.sort_unstable();
    levels.dedup();
    for level in levels {
        let label = if level == 0 {
            "none".to_string()
        } else {
            level.to_string()
        };
        out.push_str(&label);
        for &mp in model_precisions {
            let cell = cells
                .iter()
                .find(|c| {
                    c.inpaint_precision == inpaint
                        && c.level_percent == level
                        && c.model_precision == mp
                })
                .expect("every sweep cell was produced");
            out.push_str(&format!(",{}", cell.map50));
        }
        out.push('\n');
    }
    out
}
