//! quantsweep: a desk-scale numeric pipeline for studying how reduced
//! precision interacts with generative augmentation and detection quality.
//!
//! The toolkit covers six connected subsystems:
//!
//! * [`tensor`] — dense f64 tensors plus bit-exact FP32/FP16 software codecs.
//! * [`quant`] — affine INT8 quantization, calibration, the quantization-aware
//!   loss penalty, and integer-accumulated matmul/conv kernels.
//! * [`diffusion`] — a toy denoising-diffusion engine with DDIM and
//!   Euler-ancestral samplers and mask-blended inpainting.
//! * [`augment`] — ROI-avoiding inpainting-mask generation, augmentation sweep
//!   planning (10%..200%), dataset assembly, and auto-annotation.
//! * [`toydet`] + [`metrics`] — a deliberately simple template-correlation
//!   detector and the IoU/AP/mAP evaluation stack.
//! * [`stats`] + [`bench`] — Friedman/Wilcoxon/Bonferroni analysis with
//!   compact-letter grouping, and a latency/peak-memory/model-size harness
//!   with an injectable clock.
//!
//! The [`cli`] module ties everything into reproducible experiments; the
//! `quantsweep` binary exposes it as `sweep`, `analyze`, `bench`, `quantize`
//! and `inpaint` subcommands.
//!
//! Start with the runnable examples, one per capability:
//!
//! ```bash
//! cargo run --example fp16_codec
//! cargo run --example int8_quantization
//! cargo run --example diffusion_two_mode
//! cargo run --example inpaint_patch
//! cargo run --example roi_masks
//! cargo run --example augmentation_sweep
//! cargo run --example detect_eval
//! cargo run --example table_analysis
//! cargo run --example bench_report
//! ```

pub mod augment;
pub mod bench;
pub mod cli;
pub mod diffusion;
pub mod metrics;
pub mod quant;
pub mod rng;
pub mod stats;
pub mod tensor;
pub mod toydet;

pub use tensor::{Precision, Tensor};
