//! File-level subcommands: tensor quantization and the single-image
//! inpainting demo.

use std::path::Path;

use crate::augment::generate_mask;
use crate::diffusion::{make_schedule, InpaintRequest, ScheduleKind};
use crate::quant::{
    calibrate, calibrate_per_channel, dequantize, quantize, save_quantized, QuantizedTensor,
};
use crate::rng::stream_seed;
use crate::tensor::{load_tensor, load_tensor_csv, save_tensor, Tensor};

use super::config::ExperimentConfig;
use super::sweep::train_sweep_denoiser;
use super::toyworld::build_world;
use super::CliError;

fn load_any_tensor(path: &Path) -> Result<Tensor, CliError> {
    let loaded = if path.extension().is_some_and(|e| e == "csv") {
        load_tensor_csv(path)
    } else {
        load_tensor(path)
    };
    loaded.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// `quantize` subcommand: file -> file affine quantization with a short
/// round-trip summary on stdout.
pub fn cmd_quantize(
    input: &Path,
    output: &Path,
    cfg: &ExperimentConfig,
    per_channel_axis: Option<usize>,
) -> Result<QuantizedTensor, CliError> {
    let tensor = load_any_tensor(input)?;
    let scheme = cfg.calib_scheme()?;
    let symmetry = cfg.symmetry()?;
    let params = match per_channel_axis {
        Some(axis) => calibrate_per_channel(&tensor, axis, scheme, symmetry),
        None => calibrate(&tensor, scheme, symmetry),
    }
    .map_err(|e| CliError::Data(e.to_string()))?;
    let q = quantize(&tensor, &params).map_err(|e| CliError::Data(e.to_string()))?;
    save_quantized(output, &q).map_err(|e| CliError::Data(e.to_string()))?;

    let back = dequantize(&q);
    let max_err = tensor
        .data()
        .iter()
        .zip(back.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    let max_scale = params.scales.iter().cloned().fold(0.0f64, f64::max);
    println!(
        "quantized {} -> {} ({} elements, {} channel(s))",
        input.display(),
        output.display(),
        q.len(),
        params.channels()
    );
    println!("max round-trip error {max_err:.6e} (half-scale bound {:.6e})", max_scale / 2.0);
    Ok(q)
}

/// `inpaint` subcommand: demo of the mask-blended synthesis on one image.
///
/// With `--image`, inpaints that tensor (mask from the flag rectangle);
/// otherwise it builds the toy world, picks a training image and an
/// ROI-avoiding mask, and synthesizes the requested class into it.
pub fn cmd_inpaint(
    cfg: &ExperimentConfig,
    image_path: Option<&Path>,
    class: u32,
    out_dir: &Path,
) -> Result<(), CliError> {
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::Data(e.to_string()))?;
    let sched = make_schedule(
        cfg.schedule.steps,
        cfg.schedule.beta_start,
        cfg.schedule.beta_end,
        ScheduleKind::Linear,
    )
    .map_err(|e| CliError::Data(e.to_string()))?;
    let world = build_world(&cfg.world, stream_seed(cfg.seed, "world"));
    let trained = train_sweep_denoiser(cfg, &world, &sched)?;
    let model = trained.model;

    let patch = cfg.world.patch_size;
    let (base, excluded) = match image_path {
        Some(p) => (load_any_tensor(p)?, Vec::new()),
        None => (world.train[0].image.clone(), world.train[0].boxes.clone()),
    };
    if base.rank() != 2 {
        return Err(CliError::Data("inpaint wants a [H, W] image".to_string()));
    }
    let (h, w) = (base.shape()[0], base.shape()[1]);
    let spec = generate_mask(
        (w as u32, h as u32),
        &excluded,
        (patch as u32, patch as u32),
        class,
        stream_seed(cfg.seed, "inpaint:mask"),
        cfg.augment.mask_attempts,
    )
    .map_err(|e| CliError::Data(e.to_string()))?;

    // crop, synthesize, paste back
    let (x0, y0) = (spec.placement.x as usize, spec.placement.y as usize);
    let crop = Tensor::from_fn(vec![patch, patch], |i| base.at2(y0 + i / patch, x0 + i % patch));
    let mask = Tensor::from_fn(vec![patch, patch], |i| {
        let y = i / patch;
        let x = i % patch;
        if y == 0 || x == 0 || y == patch - 1 || x == patch - 1 {
            0.0
        } else {
            1.0
        }
    });
    let req = InpaintRequest {
        image: crop,
        mask,
        condition: Some(class),
        strength: cfg.sampler.strength,
        steps: cfg.sampler.inference_steps,
        guidance: cfg.sampler.guidance_scale,
    };
    let mut rng = crate::rng::stream(cfg.seed, "inpaint:run");
    let synth = crate::diffusion::inpaint(&req, &model, &sched, cfg.sampler_kind()?, &mut rng)
        .map_err(|e| CliError::Internal(e.to_string()))?;
    let out = Tensor::from_fn(vec![h, w], |i| {
        let y = i / w;
        let x = i % w;
        if y >= y0 && y < y0 + patch && x >= x0 && x < x0 + patch {
            synth.at2(y - y0, x - x0)
        } else {
            base.at2(y, x)
        }
    });

    save_tensor(&out_dir.join("before.tensor"), &base)
        .map_err(|e| CliError::Data(e.to_string()))?;
    save_tensor(&out_dir.join("after.tensor"), &out)
        .map_err(|e| CliError::Data(e.to_string()))?;

    println!(
        "inpainted class {class} at ({}, {}) size {patch}x{patch} (seed {})",
        spec.placement.x, spec.placement.y, spec.seed
    );
    println!("{}", ascii_render(&base));
    println!("->");
    println!("{}", ascii_render(&out));
    println!(
        "wrote {} and {}",
        out_dir.join("before.tensor").display(),
        out_dir.join("after.tensor").display()
    );
    Ok(())
}

/// Coarse terminal rendering of a grayscale image.
pub fn ascii_render(img: &Tensor) -> String {
    const RAMP: &[u8] = b" .:-=+*#%@";
    let (h, w) = (img.shape()[0], img.shape()[1]);
    let mut out = String::with_capacity(h * (w + 1));
    for y in 0..h {
        for x in 0..w {
            let v = img.at2(y, x).clamp(0.0, 1.0);
            let idx = ((v * (RAMP.len() - 1) as f64).round() as usize).min(RAMP.len() - 1);
            out.push(RAMP[idx] as char);
        }
        out.push('\n');
    }
    out
}
