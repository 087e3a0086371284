mod config;
mod dataset;
mod eval;
mod gen;
mod infer;
mod inspect;
mod render;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use panolayout::error::{Error, ErrorKind, Result};
use panolayout::layout::ShapeKind;
use panolayout::model::PostProc;

/// Room layout estimation over synthetic panoramic rooms.
#[derive(Parser)]
#[command(name = "panolayout", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with a train/val/test manifest.
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated shapes: cuboid, L, T, rectilinear-K.
        #[arg(long, value_delimiter = ',', default_value = "cuboid,L,T")]
        shapes: Vec<ShapeKind>,
        /// Cue noise standard deviation recorded for the dataset.
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
    },
    /// Train a model from a run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue from a training checkpoint of the same config.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Threads for per-sample gradients; results do not depend on it.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Evaluate a checkpoint on one split, writing metrics.csv and summary.json.
    Eval {
        /// Required unless --oracle is set.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Run config; its model must match the checkpoint. Supplies the
        /// dataset, metric options and post-processing.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directory; overrides the one in --config.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: PathBuf,
        /// Score each ground-truth layout against itself.
        #[arg(long)]
        oracle: bool,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Predict a layout from a room's cues or from a cue file.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Layout document to synthesize cues from.
        #[arg(long, conflicts_with = "cues", required_unless_present = "cues")]
        layout: Option<PathBuf>,
        /// JSON array of N rows of 5 cue channels.
        #[arg(long)]
        cues: Option<PathBuf>,
        /// Run config whose model must match the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Cue noise seed; defaults to the model seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Camera height for --cues input, meters.
        #[arg(long, default_value_t = panolayout::geometry::DEFAULT_CAMERA_HEIGHT)]
        camera_height: f64,
        #[arg(long, default_value = "none")]
        postproc: PostProc,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render boundaries and floor plan of a layout or a prediction as SVG.
    Render {
        /// Layout document.
        #[arg(long)]
        input: PathBuf,
        /// Render the model's prediction for the input room instead.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        show_gradients: bool,
        #[arg(long, default_value_t = 1024)]
        width: usize,
        #[arg(long, default_value_t = 512)]
        height: usize,
    },
    /// Print depths, normals, gradients and losses of a layout against a
    /// perturbed copy.
    Inspect {
        #[arg(long)]
        layout: PathBuf,
        /// Samples per panorama.
        #[arg(long, default_value_t = 64)]
        n: usize,
        /// TERM DELTA, with TERM depth or height. Repeatable.
        #[arg(long, num_args = 2, value_names = ["TERM", "DELTA"], allow_hyphen_values = true)]
        perturb: Vec<String>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen {
            out,
            count,
            seed,
            shapes,
            noise,
        } => gen::run(&out, count, seed, &shapes, noise),
        Command::Train {
            config,
            resume,
            jobs,
        } => train::run(&config, resume.as_deref(), jobs),
        Command::Eval {
            checkpoint,
            config,
            data,
            split,
            out,
            oracle,
            jobs,
        } => eval::run(eval::Args {
            checkpoint,
            config,
            data,
            split,
            out,
            oracle,
            jobs,
        }),
        Command::Infer {
            checkpoint,
            layout,
            cues,
            config,
            seed,
            camera_height,
            postproc,
            out,
        } => infer::run(infer::Args {
            checkpoint,
            layout,
            cues,
            config,
            seed,
            camera_height,
            postproc,
            out,
        }),
        Command::Render {
            input,
            checkpoint,
            out,
            show_gradients,
            width,
            height,
        } => render::run(
            &input,
            checkpoint.as_deref(),
            &out,
            show_gradients,
            width,
            height,
        ),
        Command::Inspect { layout, n, perturb } => inspect::run(&layout, n, &perturb),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Validation => 2,
        ErrorKind::Numeric => 3,
        ErrorKind::Io => 4,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
