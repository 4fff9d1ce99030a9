use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use feanet::model::Variant;
use feanet::runner::{self, RunConfig, CHECKPOINT_FILE};

#[derive(Parser)]
#[command(name = "feanet", version, about = "RGB-thermal segmentation experiments on synthetic scenes")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// `key = value` run configuration; every key is optional.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output directory (the dataset directory for `generate`).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_parser = parse_variant)]
    variant: Option<Variant>,
    /// Dataset directory.
    #[arg(long, global = true, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Extra `key=value` overrides applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic RGB-thermal dataset.
    Generate,
    /// Train on the train split, keep the best checkpoint by val mIoU.
    Train,
    /// Per-class accuracy and IoU of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        split: Option<String>,
    },
    /// Render colorized predictions next to the inputs.
    Predict {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value_t = 8)]
        limit: usize,
    },
    /// Train and score all four FEAM variants over several seeds.
    Ablate,
    /// Eval-mode forward throughput.
    Bench {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Finite-difference audit of every differentiable op and the reduced model.
    Gradcheck {
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse().map_err(|e: feanet::Error| e.to_string())
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    for kv in &common.overrides {
        let (k, v) = kv
            .split_once('=')
            .with_context(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(v) = common.variant {
        cfg.variant = v;
    }
    if let Some(d) = &common.data {
        cfg.data_root = d.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<bool> {
    let mut cfg = load_config(&cli.common)?;
    let default_checkpoint = |cfg: &RunConfig| cfg.out_dir.join(CHECKPOINT_FILE);
    match cli.command {
        Command::Generate => {
            let root = cli.common.out.clone().unwrap_or_else(|| cfg.data_root.clone());
            let ds = runner::run_generate(&cfg, &root)?;
            println!(
                "wrote {} samples to {} (train {}, val {}, test {})",
                ds.samples.len(),
                root.display(),
                ds.split.train.len(),
                ds.split.val.len(),
                ds.split.test.len()
            );
        }
        Command::Train => {
            if let Some(out) = cli.common.out {
                cfg.out_dir = out;
            }
            let report = runner::run_train(&cfg)?;
            if let Some(last) = report.log.last() {
                println!(
                    "{} epochs, {} steps, final loss {:.5}, val mIoU {:.4}",
                    last.epoch, report.steps, last.loss, last.val_miou
                );
            }
            println!("checkpoint {}", report.checkpoint.display());
        }
        Command::Eval { checkpoint, split } => {
            if let Some(out) = cli.common.out {
                cfg.out_dir = out;
            }
            let ckpt = checkpoint.unwrap_or_else(|| default_checkpoint(&cfg));
            let split = split.unwrap_or_else(|| cfg.eval_split.clone());
            let report = runner::run_eval(&cfg, &ckpt, &split)?;
            print!("{}", report.csv);
        }
        Command::Predict { checkpoint, split, limit } => {
            if let Some(out) = cli.common.out {
                cfg.out_dir = out;
            }
            let ckpt = checkpoint.unwrap_or_else(|| default_checkpoint(&cfg));
            let written = runner::run_predict(&cfg, &ckpt, &split, limit)?;
            println!("wrote {} images under {}", written.len(), cfg.out_dir.join("predict").display());
        }
        Command::Ablate => {
            if let Some(out) = cli.common.out {
                cfg.out_dir = out;
            }
            let report = runner::run_ablation(&cfg)?;
            print!("{}", runner::format_rows(&report.rows));
        }
        Command::Bench { checkpoint } => {
            let report = runner::run_bench(&cfg, checkpoint.as_deref())?;
            println!("{}", report.summary());
        }
        Command::Gradcheck { inject_fault } => {
            let report = runner::run_gradcheck(inject_fault)?;
            print!("{}", report.format());
            return Ok(report.passed());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("gradient check failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
