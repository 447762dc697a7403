use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use splatforge::config::PipelineConfig;
use splatforge::ledger::verify_run;
use splatforge::stages::{run_all, run_stage, Context, Overrides};
use splatforge::{dataset, Error, Result};
use splatforge_core::synth::default_sequence_spec;

/// Panoramic RGB + LiDAR to Gaussian-splatting initialization.
#[derive(Parser)]
#[command(name = "splatforge", version)]
struct Cli {
    /// Pipeline configuration (JSON).
    #[arg(long, global = true, default_value = "pipeline.json")]
    config: PathBuf,
    /// Run directory for artifacts, ledgers and the run manifest.
    #[arg(long, global = true, default_value = "run", visible_alias = "out-dir")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Clone, Default)]
struct Sweep {
    /// Comma-separated PRISM capacities, e.g. 5,50,100.
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<usize>>,
}

#[derive(Subcommand)]
enum Command {
    /// Every stage in order.
    Run {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sweep: Sweep,
        #[arg(long)]
        bins: Option<usize>,
        #[arg(long)]
        init_from_trajectory: bool,
    },
    /// Overlap-based keyframe selection.
    Keyframes(Common),
    /// ERP keyframes to six cube faces.
    Cubemap(Common),
    /// Parse the sparse model and compute reuse ratios.
    IngestSfm(Common),
    /// Pair RGB frames with LiDAR scans by timestamp.
    Match(Common),
    /// Scan-to-scan ICP and map accumulation.
    Odometry(Common),
    /// Project cube-face colors onto the map.
    Colorize(Common),
    /// Color-stratified downsampling.
    Prism {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sweep: Sweep,
        #[arg(long)]
        bins: Option<usize>,
        /// Colored cloud to sample instead of the colorize output.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Scale, global registration and ICP per capacity.
    Align {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sweep: Sweep,
        /// Initialize from SfM centers vs. odometry instead of FPFH matching.
        #[arg(long)]
        init_from_trajectory: bool,
    },
    /// Fuse, initialize Gaussians and write the assets.
    Export {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sweep: Sweep,
    },
    /// Recompute every hash in a run directory and check the chain.
    Verify,
    /// Write a synthetic dataset with ground truth and a pipeline.json.
    Synth {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        frames: Option<usize>,
    },
}

fn stage_overrides(c: &Command) -> Option<(&'static str, Overrides)> {
    let base = |common: &Common| Overrides {
        seed: common.seed,
        ..Default::default()
    };
    Some(match c {
        Command::Keyframes(c) => ("keyframes", base(c)),
        Command::Cubemap(c) => ("cubemap", base(c)),
        Command::IngestSfm(c) => ("ingest-sfm", base(c)),
        Command::Match(c) => ("match", base(c)),
        Command::Odometry(c) => ("odometry", base(c)),
        Command::Colorize(c) => ("colorize", base(c)),
        Command::Prism {
            common,
            sweep,
            bins,
            input,
        } => (
            "prism",
            Overrides {
                k: sweep.k.clone(),
                bins: *bins,
                prism_input: input.clone(),
                ..base(common)
            },
        ),
        Command::Align {
            common,
            sweep,
            init_from_trajectory,
        } => (
            "align",
            Overrides {
                k: sweep.k.clone(),
                init_from_trajectory: init_from_trajectory.then_some(true),
                ..base(common)
            },
        ),
        Command::Export { common, sweep } => (
            "export",
            Overrides {
                k: sweep.k.clone(),
                ..base(common)
            },
        ),
        _ => return None,
    })
}

fn report_trips(trips: &[splatforge::ledger::GateTrip]) {
    for t in trips {
        eprintln!(
            "gate tripped: {} {} fitness {:.4} < {:.4}",
            t.stage, t.scope, t.fitness, t.gate
        );
    }
}

fn execute(cli: Cli) -> Result<i32> {
    match &cli.command {
        Command::Synth { seed, frames } => {
            let mut spec = default_sequence_spec(*seed);
            if let Some(n) = frames {
                spec.frames = *n;
            }
            let seq = dataset::generate_dataset(&spec, &cli.out)?;
            println!(
                "wrote {} frames and {} scans to {}",
                seq.frames.len(),
                seq.scans.len(),
                cli.out.display()
            );
            Ok(0)
        }
        Command::Verify => {
            let report = verify_run(&cli.out)?;
            for c in report.failures() {
                println!("FAIL {} {}: {}", c.stage, c.name, c.detail);
            }
            if report.passed() {
                println!("verified {} checks", report.checks.len());
                Ok(0)
            } else {
                Err(Error::VerificationFailed(report.failed_stages()))
            }
        }
        Command::Run {
            common,
            sweep,
            bins,
            init_from_trajectory,
        } => {
            let cfg = PipelineConfig::load(&cli.config)?;
            let overrides = Overrides {
                seed: common.seed,
                k: sweep.k.clone(),
                bins: *bins,
                init_from_trajectory: init_from_trajectory.then_some(true),
                prism_input: None,
            };
            let summary = run_all(&cfg, &cli.out, overrides)?;
            report_trips(&summary.manifest.gate_trips);
            println!("{}: {}", cli.out.display(), summary.manifest.status);
            Ok(summary.exit_code())
        }
        other => {
            let (stage, overrides) = stage_overrides(other).expect("stage command");
            let cfg = PipelineConfig::load(&cli.config)?;
            let ctx = Context::new(&cfg, &cli.out, overrides)?;
            let out = run_stage(&ctx, stage)?;
            report_trips(&out.gate_trips);
            println!("{stage}: ok");
            Ok(if out.gate_trips.is_empty() { 0 } else { 2 })
        }
    }
}

fn main() -> ExitCode {
    if let Some(n) = std::env::var("SPLATFORGE_THREADS").ok().and_then(|v| v.parse().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
