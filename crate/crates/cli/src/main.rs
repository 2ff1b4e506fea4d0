//! `detkit` command-line entry point.
//!
//! Exit codes: 0 success, 1 a check failed, 2 usage or input error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use detkit_core::{BBox, LossVariant};

mod commands;

#[derive(Debug, Parser)]
#[command(
    name = "detkit",
    version,
    about = "Box-regression losses, attention demos, EMA smoothing and mAP evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate one loss for a predicted/target box pair.
    Loss {
        #[arg(long)]
        variant: LossVariant,
        /// x1,y1,x2,y2
        #[arg(long, allow_hyphen_values = true)]
        pred: BBox,
        /// x1,y1,x2,y2
        #[arg(long, allow_hyphen_values = true)]
        gt: BBox,
        #[arg(long)]
        json: bool,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "aiou")]
        variant: LossVariant,
        #[arg(long, default_value_t = detkit_core::gradcheck::DEFAULT_TOLERANCE)]
        tol: f64,
    },
    /// mAP evaluation of a prediction file against ground truth.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// start:stop:step or a comma-separated list
        #[arg(long, default_value = "0.5:0.95:0.05")]
        thresholds: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// EMA-smooth a detection stream.
    Smooth {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0.3)]
        decay: f64,
        #[arg(long, default_value_t = 0.3)]
        gate: f64,
        #[arg(long, default_value_t = 5)]
        max_age: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Gradient-descent box regression with one loss.
    Train {
        #[arg(long = "loss", default_value = "aiou")]
        variant: LossVariant,
        #[command(flatten)]
        run: commands::RunArgs,
    },
    /// Convergence comparison across several losses.
    Compare {
        /// Comma-separated loss variants.
        #[arg(long, value_delimiter = ',', default_value = "iou,ciou,eiou,aiou")]
        losses: Vec<LossVariant>,
        #[command(flatten)]
        run: commands::RunArgs,
    },
    /// Run the global attention block on a seeded random feature map.
    Attn {
        /// C,H,W
        #[arg(long)]
        shape: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = detkit_core::attention::DEFAULT_REDUCTION)]
        reduction: usize,
        #[arg(long, default_value_t = detkit_core::attention::DEFAULT_KERNEL)]
        kernel: usize,
        #[arg(long)]
        stats: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
