//! The `volfuse` command line: generate phantom data, train either model
//! variant, run inference, score predictions, and print structure reports.
//! Exit codes: 0 success, 1 runtime failure (divergence, numeric trouble),
//! 2 usage or bad configuration/data.

mod commands;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use volfuse_core::Error;

#[derive(Parser, Debug)]
#[command(name = "volfuse", version, about = "Volumetric segmentation at desk scale")]
struct Cli {
    /// Cap the worker-thread pool (numeric results never depend on this).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic ellipsoid phantom volumes plus a manifest.
    GenData {
        /// Phantom spec file (`key value` lines); defaults apply when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// How many volumes to write.
        #[arg(long, default_value_t = 4)]
        count: usize,
        /// Base seed; per-sample seeds derive from it.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for .mvol files and manifest.txt.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on every volume in a directory.
    Train {
        /// Model config file; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory of .mvol training volumes.
        #[arg(long)]
        data: PathBuf,
        /// Output directory for model.ckpt and train.log.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Iterations per half learning-rate cycle.
        #[arg(long, default_value_t = 100)]
        half_cycle: u64,
        /// Override the config's architecture (focal_fuse or msf3d).
        #[arg(long)]
        variant: Option<String>,
        /// Override the config's stem width.
        #[arg(long)]
        base_channels: Option<usize>,
        /// Optional global gradient-norm ceiling.
        #[arg(long)]
        grad_clip: Option<f64>,
        /// Epochs between validation passes (the last epoch always runs one).
        #[arg(long, default_value_t = 10)]
        val_every: usize,
    },
    /// Predict a label volume for one input volume.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Input .mvol volume (its image payload is required).
        #[arg(long)]
        volume: PathBuf,
        /// Output .mvol path (labels only).
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predicted label volumes against ground truth by id.
    Eval {
        /// Directory of predicted .mvol files.
        #[arg(long)]
        pred: PathBuf,
        /// Directory of ground-truth .mvol files.
        #[arg(long)]
        truth: PathBuf,
        /// Where to write per-volume and aggregate reports; stdout only when
        /// omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the layer/parameter structure of a configuration.
    Describe {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        base_channels: Option<usize>,
    },
}

/// What a finished subcommand wants the process to report.
enum Outcome {
    Success,
    /// Training aborted on a non-finite loss; artifacts are on disk.
    Diverged(u64),
}

fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Numeric(_) => 1,
        _ => 2,
    }
}

pub fn run() -> i32 {
    run_from(std::env::args_os())
}

/// Same as `run`, but with the argument vector supplied by the caller so
/// tests can drive the CLI in-process.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders its own message; --help/--version land on stdout
            // and count as success
            let is_error = e.use_stderr();
            let _ = e.print();
            return if is_error { 2 } else { 0 };
        }
    };

    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return 2;
        }
        // ignore the error if a pool already exists (tests call run_from
        // repeatedly in one process)
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }

    let result = match cli.command {
        Command::GenData { spec, count, seed, out } => {
            commands::gen_data(spec.as_deref(), count, seed, &out)
        }
        Command::Train {
            config,
            data,
            out,
            epochs,
            seed,
            half_cycle,
            variant,
            base_channels,
            grad_clip,
            val_every,
        } => commands::train(
            config.as_deref(),
            &data,
            &out,
            commands::TrainFlags {
                epochs,
                seed,
                half_cycle,
                variant,
                base_channels,
                grad_clip,
                val_every,
            },
        ),
        Command::Infer { checkpoint, volume, out } => {
            commands::infer(&checkpoint, &volume, &out)
        }
        Command::Eval { pred, truth, out } => {
            commands::eval(&pred, &truth, out.as_deref())
        }
        Command::Describe { config, variant, base_channels } => {
            commands::describe(config.as_deref(), variant, base_channels)
        }
    };

    match result {
        Ok(Outcome::Success) => 0,
        Ok(Outcome::Diverged(iter)) => {
            eprintln!("error: training diverged at iteration {iter}; log retained");
            1
        }
        Err(err) => {
            eprintln!("error: {err}");
            exit_code_for(&err)
        }
    }
}
