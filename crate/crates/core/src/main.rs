use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use quantsweep::cli::{self, CliError, ExperimentConfig};

#[derive(Parser)]
#[command(
    name = "quantsweep",
    about = "Quantized diffusion inpainting, augmentation sweeps, toy detection and benchmark statistics",
    version
)]
struct Args {
    /// TOML experiment configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full augmentation x precision sweep and persist results.
    Sweep,
    /// Analyze a results CSV: summaries, Friedman, pairwise Wilcoxon, letters.
    Analyze {
        /// CSV with header `augmentation,<col>,...`.
        results_csv: PathBuf,
        /// Where to write the analysis JSON (defaults next to the CSV).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Tie margin for the pairwise tests; default auto-detects the data
        /// resolution.
        #[arg(long)]
        tie_margin: Option<f64>,
    },
    /// Time the denoiser step and detector across precisions; report sizes.
    Bench {
        /// Comma-separated mock intervals in ms; replaces the wall clock.
        #[arg(long)]
        mock_intervals: Option<String>,
    },
    /// Quantize a tensor file (binary or csv) to the int8 container format.
    Quantize {
        input: PathBuf,
        output: PathBuf,
        /// Quantize per channel along this axis instead of per tensor.
        #[arg(long)]
        per_channel_axis: Option<usize>,
    },
    /// Single-image inpainting demo.
    Inpaint {
        /// Optional [H, W] tensor to inpaint; defaults to a generated scene.
        #[arg(long)]
        image: Option<PathBuf>,
        /// Class id to synthesize.
        #[arg(long, default_value_t = 0)]
        class: u32,
    },
}

fn load_config(args: &Args) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    // flags take precedence over config fields
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &args.output_dir {
        cfg.output_dir = dir.display().to_string();
    }
    Ok(cfg)
}

fn run(args: Args) -> Result<(), CliError> {
    let cfg = load_config(&args)?;
    match args.command {
        Command::Sweep => {
            let (report, out_dir) = cli::cmd_sweep(&cfg)?;
            println!(
                "sweep {} finished: {} cells, denoiser loss {:.4} -> {:.4}",
                report.config_hash,
                report.cells.len(),
                report.denoiser_initial_loss,
                report.denoiser_final_loss
            );
            println!("artifacts in {}", out_dir.display());
        }
        Command::Analyze {
            results_csv,
            out,
            tie_margin,
        } => {
            let mut options = cfg.stats.clone();
            if tie_margin.is_some() {
                options.tie_margin = tie_margin;
            }
            let out_path = out.unwrap_or_else(|| results_csv.with_extension("analysis.json"));
            let (matrix, report) = cli::cmd_analyze(&results_csv, &options, Some(&out_path))?;
            print!("{}", cli::render_table(&matrix, &report));
            println!("analysis written to {}", out_path.display());
        }
        Command::Bench { mock_intervals } => {
            let mock = match mock_intervals {
                Some(text) => Some(
                    text.split(',')
                        .map(|t| t.trim().parse::<f64>())
                        .collect::<Result<Vec<f64>, _>>()
                        .map_err(|e| CliError::Usage(format!("bad --mock-intervals: {e}")))?,
                ),
                None => None,
            };
            let (report, out_dir) = cli::cmd_bench(&cfg, mock)?;
            for r in report.denoiser_step.iter().chain(&report.detector) {
                println!(
                    "{}: {:.3} ± {:.3} ms, peak {} bytes",
                    r.label, r.mean_ms, r.sd_ms, r.peak_bytes
                );
            }
            for (label, red) in &report.latency_reduction_vs_fp32 {
                println!("{label}: {red:.1}% latency reduction vs fp32");
            }
            println!("artifacts in {}", out_dir.display());
        }
        Command::Quantize {
            input,
            output,
            per_channel_axis,
        } => {
            cli::cmd_quantize(&input, &output, &cfg, per_channel_axis)?;
        }
        Command::Inpaint { image, class } => {
            let out_dir = PathBuf::from(&cfg.output_dir).join("inpaint");
            cli::cmd_inpaint(&cfg, image.as_deref(), class, &out_dir)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(args) => args,
        Err(e) => {
            // help/version are successful exits; everything else is usage
            let code = if e.use_stderr() { cli::EXIT_USAGE } else { cli::EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(args) {
        Ok(()) => ExitCode::from(cli::EXIT_OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
