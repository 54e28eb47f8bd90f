use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use ocrl::data::Split;
use ocrl::harness::{self, gradcheck, Prepared, RunConfig};
use ocrl::{OcrlError, Result};

#[derive(Parser)]
#[command(name = "ocrl", version, about = "Object-centric video question answering on synthetic scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Extra `key=value` overrides, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate scenes, detections and questions.
    Generate(Common),
    /// Train a model, checkpointing after every epoch.
    Train {
        #[command(flatten)]
        common: Common,
        /// Ablation variant to train.
        #[arg(long)]
        variant: Option<String>,
        /// Split evaluated after training.
        #[arg(long)]
        split: Option<String>,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        split: Option<String>,
        /// Defaults to the checkpoint in the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Finite-difference check of every parameter on a tiny fixture.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Break one backward rule: gating, tanh or product.
        #[arg(long)]
        corrupt: Option<String>,
    },
    /// Train and evaluate ablation variants over several seeds.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Variant to run; repeatable. `all` runs every variant, none runs the
        /// default model alone.
        #[arg(long)]
        variant: Vec<String>,
    },
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| OcrlError::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k, v)?;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    }
    if let Some(d) = &common.data {
        cfg.data = d.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn with_split(mut cfg: RunConfig, split: &Option<String>) -> Result<RunConfig> {
    if let Some(s) = split {
        cfg.split = Split::parse(s)?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let started = Instant::now();
    match cli.command {
        Command::Generate(common) => {
            let cfg = resolve(&common)?;
            let ds = harness::generate(&cfg, &cfg.out)?;
            println!(
                "wrote {} scenes and {} questions to {}",
                ds.scenes.len(),
                ds.records.len(),
                cfg.out.display()
            );
        }
        Command::Train {
            common,
            variant,
            split,
            resume,
        } => {
            let mut cfg = with_split(resolve(&common)?, &split)?;
            if let Some(v) = &variant {
                cfg = cfg.with_variant(v)?;
            }
            let prep = Prepared::load(&cfg)?;
            let out = harness::train_run(&cfg, &prep, Some(&cfg.out), resume)?;
            for (e, l) in out.history.iter().enumerate() {
                println!("epoch {e:>4}  loss {l:.5}");
            }
            print!("{}", out.report.table());
        }
        Command::Eval {
            common,
            split,
            checkpoint,
        } => {
            let cfg = with_split(resolve(&common)?, &split)?;
            let ck = checkpoint.unwrap_or_else(|| harness::checkpoint_path(&cfg.out));
            let report = harness::eval_run(&cfg, &ck, Some(&cfg.out))?;
            print!("{}", report.table());
        }
        Command::Gradcheck { common, corrupt } => {
            let cfg = resolve(&common)?;
            let corruption = corrupt.as_deref().map(gradcheck::Corruption::parse).transpose()?;
            let fx = gradcheck::fixture(cfg.seed)?;
            let r = gradcheck::check(&fx, corruption)?;
            let (name, idx) = r.worst.clone().unwrap_or_default();
            println!(
                "checked {} scalars, max relative error {:.3e} at {name}[{idx}] (analytic {:.6e}, numeric {:.6e}), tolerance {:e}",
                r.checked, r.max_rel_error, r.worst_analytic, r.worst_numeric, r.tolerance
            );
            if !r.passed {
                return Err(OcrlError::Input(format!(
                    "gradient check failed: {:.3e} exceeds {:e}",
                    r.max_rel_error, r.tolerance
                )));
            }
            println!("gradient check passed");
        }
        Command::Ablate { common, variant } => {
            let mut cfg = resolve(&common)?;
            if !variant.is_empty() {
                cfg.variants = variant;
            }
            let prep = Prepared::load(&cfg)?;
            let rows = harness::ablate(&cfg, &prep)?;
            harness::write_ablation(&cfg.out, &rows)?;
            print!("{}", harness::ablation_table(&rows));
        }
    }
    eprintln!("done in {:.1?}", started.elapsed());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
