use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lspect::config::{load_config, ExperimentConfig};
use lspect::pipeline::{self, PipelineError, RunOptions, Stage};

#[derive(Parser)]
#[command(name = "lspect", version, about = "Lightfield SPECT simulation and reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Run directory; each stage writes into its own subdirectory.
    #[arg(long)]
    out: PathBuf,
    /// Override the phantom seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Cap the number of worker threads.
    #[arg(long)]
    workers: Option<usize>,
    /// Override the scanning-center shift, mm.
    #[arg(long, allow_negative_numbers = true)]
    shift: Option<f64>,
}

#[derive(Args, Clone, Default)]
struct Outputs {
    /// Write 8-bit PGM previews of every projection.
    #[arg(long)]
    previews: bool,
    /// Also write the half-maximum binary volume.
    #[arg(long)]
    threshold_halfmax: bool,
    /// Write central XY and XZ slices as PGM.
    #[arg(long)]
    slices: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Print the closed-form geometry of the configured system.
    Plan {
        #[arg(long)]
        config: PathBuf,
        /// Also write plan.txt and plan.csv under this run directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, allow_negative_numbers = true)]
        shift: Option<f64>,
        /// Print CSV instead of the text table.
        #[arg(long)]
        csv: bool,
    },
    /// Phantom utilities.
    Phantom {
        #[command(subcommand)]
        command: PhantomCommand,
    },
    /// Forward-project the phantom into per-module projection images.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        previews: bool,
    },
    /// Backproject stored projections into a volume.
    Reconstruct {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        threshold_halfmax: bool,
        #[arg(long)]
        slices: bool,
    },
    /// Profile, Gaussian fit, FWHM and MTF of a reconstructed volume.
    Analyze {
        #[command(flatten)]
        common: Common,
    },
    /// Run plan, simulate, reconstruct and analyze in order.
    Run {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        outputs: Outputs,
    },
    /// Siddon traversal throughput on random rays.
    #[command(hide = true)]
    TraceBench {
        #[arg(long, default_value_t = 100_000)]
        rays: usize,
        #[arg(long, default_value_t = 128)]
        grid: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum PhantomCommand {
    /// Write the ground-truth occupancy volume.
    Voxelize {
        #[command(flatten)]
        common: Common,
    },
}

fn load(path: &Path, seed: Option<u64>, shift: Option<f64>) -> Result<ExperimentConfig, PipelineError> {
    let cfg = load_config(path)?;
    Ok(pipeline::apply_overrides(cfg, seed, shift)?)
}

fn options(common: &Common, outputs: Outputs) -> RunOptions {
    RunOptions {
        out_dir: common.out.clone(),
        workers: common.workers,
        previews: outputs.previews,
        threshold_halfmax: outputs.threshold_halfmax,
        slices: outputs.slices,
    }
}

fn print_analysis(report: &pipeline::AnalysisReport) {
    for a in &report.axes {
        println!(
            "{:?}: FWHM {:.4} mm (sigma {:.4} mm, rmse {:.4}), high-band MTF {:.5}",
            a.axis, a.fwhm_mm, a.fit.sigma, a.fit.rmse, a.mtf_high_band_mean
        );
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Plan { config, out, shift, csv } => {
            let cfg = load(&config, None, shift)?;
            let report = pipeline::PlanReport::new(&cfg.plan()?);
            if let Some(out) = out {
                pipeline::run_plan(&cfg, &RunOptions::new(out))?;
            }
            print!("{}", if csv { report.to_csv() } else { report.to_text() });
        }
        Command::Phantom { command: PhantomCommand::Voxelize { common } } => {
            let cfg = load(&common.config, common.seed, common.shift)?;
            let n = pipeline::run_voxelize(&cfg, &options(&common, Outputs::default()))?;
            println!("{n} voxels inside the phantom");
        }
        Command::Simulate { common, previews } => {
            let cfg = load(&common.config, common.seed, common.shift)?;
            let stats = pipeline::run_simulate(&cfg, &options(&common, Outputs { previews, ..Default::default() }))?;
            println!("{}", serde_json::to_string(&stats).expect("stats serialize"));
        }
        Command::Reconstruct { common, threshold_halfmax, slices } => {
            let cfg = load(&common.config, common.seed, common.shift)?;
            let outputs = Outputs { threshold_halfmax, slices, ..Default::default() };
            let vol = pipeline::run_reconstruct(&cfg, &options(&common, outputs))?;
            println!("volume max {:.6e} at {:?}", vol.max(), vol.argmax());
        }
        Command::Analyze { common } => {
            let cfg = load(&common.config, common.seed, common.shift)?;
            print_analysis(&pipeline::run_analyze(&cfg, &options(&common, Outputs::default()))?);
        }
        Command::Run { common, outputs } => {
            let cfg = load(&common.config, common.seed, common.shift)?;
            let summary = pipeline::run_pipeline(&cfg, &Stage::ALL, &options(&common, outputs))?;
            if let Some(report) = &summary.analysis {
                print_analysis(report);
            }
        }
        Command::TraceBench { rays, grid, seed } => {
            let report = pipeline::trace_bench(rays, grid, seed);
            println!(
                "{} rays through {}^3 in {:.3} s: {:.0} rays/s, {} segments",
                report.rays, report.grid, report.seconds, report.rays_per_second, report.segments
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
