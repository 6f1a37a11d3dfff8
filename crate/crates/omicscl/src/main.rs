use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use omicscl::commands::{self, SplitName};
use omicscl::{CliError, Config};

#[derive(Parser)]
#[command(name = "omicscl", version, about = "Survival-aware contrastive multi-omics clustering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config file; defaults apply to absent keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the survival loss weight.
    #[arg(long)]
    alpha: Option<f64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl Common {
    fn config(&self) -> Result<Config, CliError> {
        let mut cfg = match &self.config {
            Some(path) => Config::load(path)?,
            None => Config::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(alpha) = self.alpha {
            cfg.alpha = alpha;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured cohort (synthetic unless data_dir is set) as CSVs.
    Generate(Common),
    /// Train the encoders; writes checkpoint, per-epoch log and embeddings.
    Train(Common),
    /// Cluster one split with a trained checkpoint and report all metrics.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Defaults to <out>/checkpoint.json.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Number of clusters; defaults to eval_k from the config.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitName,
    },
    /// Train with the configured alpha and with alpha = 0, compare test C-index.
    Ablate(Common),
    /// Train once, then report metrics for each k in a range.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        k_min: Option<usize>,
        #[arg(long)]
        k_max: Option<usize>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(c) => commands::cmd_generate(&c.config()?, &c.out),
        Command::Train(c) => {
            let fitted = commands::cmd_train(&c.config()?, &c.out)?;
            let r = &fitted.outcome.report;
            println!(
                "best epoch {} of {}, validation C-index {:.4}",
                r.best_epoch,
                r.epochs.len(),
                r.best_val_c_index
            );
            Ok(())
        }
        Command::Evaluate { common, checkpoint, k, split } => {
            let cfg = common.config()?;
            let ckpt = commands::default_checkpoint(&common.out, checkpoint);
            let report = commands::cmd_evaluate(&cfg, &ckpt, split, k.unwrap_or(cfg.eval_k), &common.out)?;
            println!("C-index {:.4} at k = {}", report.c_index, report.k);
            Ok(())
        }
        Command::Ablate(c) => {
            let r = commands::cmd_ablate(&c.config()?, &c.out)?;
            println!(
                "test C-index {:.4} (alpha = {}) vs {:.4} (alpha = 0), delta {:+.4}",
                r.with_survival.test_c_index, r.with_survival.alpha, r.without_survival.test_c_index, r.delta
            );
            Ok(())
        }
        Command::Sweep { common, k_min, k_max } => {
            let cfg = common.config()?;
            let r = commands::cmd_sweep(
                &cfg,
                k_min.unwrap_or(cfg.sweep_k_min),
                k_max.unwrap_or(cfg.sweep_k_max),
                &common.out,
            )?;
            for row in &r.rows {
                println!("k = {:2}  C-index {:.4}", row.k, row.c_index);
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
