use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bfg_cli::commands;
use bfg_cli::config::{config_help, Fold, RunConfig};
use bfg_cli::error::Result;

/// Few-shot point-cloud segmentation workbench: synthetic data,
/// episodic training with bidirectional prototype globalization,
/// evaluation, ablations, sweeps, and visualization export.
#[derive(Parser)]
#[command(name = "bfg", version, after_help = config_help())]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Options shared by every subcommand.
#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

/// Options shared by commands that read a generated dataset.
#[derive(Args)]
struct DataArgs {
    /// Dataset directory produced by gen-data.
    #[arg(long)]
    data: PathBuf,
    /// Class split fold: s0 trains on data.split_s0, s1 swaps sides.
    #[arg(long, default_value = "s0")]
    split: String,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate synthetic scenes plus a manifest.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Overrides data.seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train on the fold's train-side classes; writes checkpoints and loss.csv.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// Overrides bfg.variant (baseline | spgen | spgen+po2prg | full_bfg).
        #[arg(long)]
        variant: Option<String>,
        /// Overrides trainer.iterations.
        #[arg(long)]
        iterations: Option<u64>,
        /// Overrides trainer.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from the latest checkpoint in --out.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a checkpoint over fixed episodes; writes eval.csv.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// Checkpoint file written by train.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Episode class pool: the fold's train or test side.
        #[arg(long, default_value = "test")]
        side: String,
        /// Overrides eval.episodes.
        #[arg(long)]
        episodes: Option<usize>,
        /// Overrides eval.seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train and evaluate all four variants with paired episodes; writes ablation.csv.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// Overrides trainer.iterations.
        #[arg(long)]
        iterations: Option<u64>,
        /// Overrides eval.episodes.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Train and evaluate once per value of one hyper-parameter; writes sweep.csv.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// One of: k, lambda, xi, measure_combo.
        #[arg(long)]
        param: String,
        /// Comma-separated values; measure_combo pairs look like N+IP or l2norm+inner_product.
        #[arg(long)]
        values: String,
        /// Overrides trainer.iterations.
        #[arg(long)]
        iterations: Option<u64>,
        /// Overrides eval.episodes.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Render one episode's ground truth and predictions as paired PLY files.
    ExportViz {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// Checkpoint file written by train.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Episode class pool: the fold's train or test side.
        #[arg(long, default_value = "test")]
        side: String,
        /// Base seed of the episode to render.
        #[arg(long, default_value_t = 777)]
        episode_seed: u64,
        /// Index within the episode stream.
        #[arg(long, default_value_t = 0)]
        episode_index: u64,
    },
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenData { common, seed } => {
            let mut cfg = load_config(&common.config)?;
            if let Some(s) = seed {
                cfg.data.seed = s;
            }
            commands::gen_data(&cfg, &common.out)
        }
        Cmd::Train { common, data, variant, iterations, seed, resume } => {
            let mut cfg = load_config(&common.config)?;
            if let Some(v) = variant {
                cfg.bfg.variant = v;
            }
            if let Some(n) = iterations {
                cfg.trainer.iterations = n;
            }
            if let Some(s) = seed {
                cfg.trainer.seed = s;
            }
            let fold = Fold::from_name(&data.split)?;
            commands::train(&cfg, &data.data, &common.out, fold, resume)
        }
        Cmd::Eval { common, data, checkpoint, side, episodes, seed } => {
            let mut cfg = load_config(&common.config)?;
            if let Some(n) = episodes {
                cfg.eval.episodes = n;
            }
            if let Some(s) = seed {
                cfg.eval.seed = s;
            }
            let fold = Fold::from_name(&data.split)?;
            let side = commands::parse_side(&side)?;
            commands::eval(&cfg, &data.data, &checkpoint, &common.out, fold, side)
        }
        Cmd::Ablate { common, data, iterations, episodes } => {
            let mut cfg = load_config(&common.config)?;
            if let Some(n) = iterations {
                cfg.trainer.iterations = n;
            }
            if let Some(n) = episodes {
                cfg.eval.episodes = n;
            }
            let fold = Fold::from_name(&data.split)?;
            commands::ablate(&cfg, &data.data, &common.out, fold)
        }
        Cmd::Sweep { common, data, param, values, iterations, episodes } => {
            let mut cfg = load_config(&common.config)?;
            if let Some(n) = iterations {
                cfg.trainer.iterations = n;
            }
            if let Some(n) = episodes {
                cfg.eval.episodes = n;
            }
            let fold = Fold::from_name(&data.split)?;
            commands::sweep(&cfg, &data.data, &common.out, fold, &param, &values)
        }
        Cmd::ExportViz { common, data, checkpoint, side, episode_seed, episode_index } => {
            let cfg = load_config(&common.config)?;
            let fold = Fold::from_name(&data.split)?;
            let side = commands::parse_side(&side)?;
            commands::export_viz(
                &cfg,
                &data.data,
                &checkpoint,
                &common.out,
                fold,
                side,
                episode_seed,
                episode_index,
            )
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let first = e.to_string();
            let first = first.lines().next().unwrap_or("invalid arguments");
            let first = first.strip_prefix("error: ").unwrap_or(first);
            eprintln!("error: config: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = u8::try_from(e.exit_code()).unwrap_or(1);
            ExitCode::from(code)
        }
    }
}
