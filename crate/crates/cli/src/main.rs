mod commands;
mod config;
mod fail;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use config::RunConfig;
use fail::Failure;

#[derive(Parser)]
#[command(
    name = "spinecarve",
    version,
    about = "Level-set segmentation with learned intensity, location and shape priors"
)]
struct Cli {
    /// JSON config file; explicit flags override its values
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Seed for anything stochastic [default: 0]
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Worker threads, 0 = one per CPU; SPINECARVE_THREADS is the fallback [default: 0]
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a prior model from name-matched images and masks
    Train {
        /// Directory of training images (.pgm or .mhd)
        #[arg(long, value_name = "DIR")]
        images: PathBuf,
        /// Directory of masks named <image stem>_mask.<ext>
        #[arg(long, value_name = "DIR")]
        masks: PathBuf,
        /// Output model archive path
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Segment an image with a trained model
    Segment {
        #[arg(long, value_name = "FILE")]
        image: PathBuf,
        /// Model archive written by train
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        /// Output directory (mask, level set, energy trace, overlay)
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Reference mask; prints the Dice score when given
        #[arg(long, value_name = "FILE")]
        ground_truth: Option<PathBuf>,
        /// full | data+context | data+shape | data-only | piecewise-constant [default: full]
        #[arg(long, value_name = "NAME")]
        method: Option<String>,
    },
    /// Generate a phantom image/mask dataset from a JSON spec
    Phantom {
        /// JSON spec; missing keys take the 2-D defaults [default: built-in 2-D spec]
        #[arg(long, value_name = "FILE")]
        spec: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Leave-one-out method comparison over one dataset directory
    Loo {
        /// Directory holding images plus their <stem>_mask files
        #[arg(long, value_name = "DIR")]
        dataset: PathBuf,
        /// Comma-separated methods [default: all five]
        #[arg(long, value_delimiter = ',', value_name = "LIST")]
        methods: Vec<String>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Dice score between two mask files
    Evaluate {
        #[arg(long, value_name = "FILE")]
        prediction: PathBuf,
        #[arg(long, value_name = "FILE")]
        truth: PathBuf,
    },
}

fn resolve_threads(flag: Option<usize>, cfg: &RunConfig) -> usize {
    if let Some(n) = flag {
        return n;
    }
    if let Ok(v) = std::env::var("SPINECARVE_THREADS") {
        if let Ok(n) = v.parse() {
            return n;
        }
    }
    cfg.threads
}

fn run(cli: Cli) -> Result<i32, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.threads = resolve_threads(cli.threads, &cfg);
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .map_err(|e| fail::fail(fail::EXIT_SPEC, format!("thread pool: {e}")))?;
    }

    match &cli.command {
        Command::Train { images, masks, out } => commands::cmd_train(images, masks, out, &cfg),
        Command::Segment {
            image,
            model,
            out,
            ground_truth,
            method,
        } => commands::cmd_segment(
            image,
            model,
            out,
            ground_truth.as_deref(),
            method.as_deref(),
            &cfg,
        ),
        Command::Phantom { spec, out } => {
            commands::cmd_phantom(spec.as_deref(), out, cli.seed, &cfg)
        }
        Command::Loo {
            dataset,
            methods,
            out,
        } => commands::cmd_loo(dataset, methods, out, &cfg),
        Command::Evaluate { prediction, truth } => commands::cmd_evaluate(prediction, truth),
    }
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            std::process::exit(f.code);
        }
    }
}
