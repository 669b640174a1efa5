//! Command-line front end for the experiment pipeline.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use ventrl::algorithms::Algo;
use ventrl::experiment::{
    env_overrides, evaluate_stage, generate_stage, preprocess_stage, prepare_run_dir,
    report_stage, run_pipeline, run_stage, train_stage, write_config, Datasets, ExperimentConfig,
};
use ventrl::mdp::{apache_score, ApacheInput};

#[derive(Parser)]
#[command(name = "ventrl", version, about = "Offline RL for mechanical ventilation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (JSON). Defaults to the run directory's
    /// config.json when present.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Cohort/split seed; also replaces the training seed list.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace an existing run directory instead of creating a new one.
    #[arg(long)]
    overwrite: bool,
    /// Sample-and-hold limit in 4-hour steps.
    #[arg(long)]
    impute_limit: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate (or import) a cohort into a new run directory.
    Generate(Common),
    /// Impute, normalize and build replay datasets.
    Preprocess(Common),
    /// Train the configured arms.
    Train {
        #[command(flatten)]
        common: Common,
        /// Only train arms using this algorithm.
        #[arg(long)]
        algo: Option<Algo>,
    },
    /// Fitted Q evaluation, OOD diagnostics and action distributions.
    Evaluate(Common),
    /// Summary table and plot data.
    Report(Common),
    /// Modified APACHE II score of the inputs in a JSON file (an object or a
    /// list of objects).
    Score {
        #[arg(long)]
        input: PathBuf,
    },
    /// All stages in a fresh run directory.
    RunAll(Common),
}

fn resolve(common: &Common, run_dir: Option<&Path>) -> Result<ExperimentConfig> {
    let from_dir = run_dir.map(|d| d.join("config.json")).filter(|p| p.exists());
    let text = match common.config.as_ref().or(from_dir.as_ref()) {
        Some(path) => {
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?
        }
        None => "{}".to_string(),
    };
    let mut cfg = ExperimentConfig::from_json_with_overrides(&text, env_overrides())?;
    if let Some(seed) = common.seed {
        cfg.cohort.seed = seed;
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    if let Some(limit) = common.impute_limit {
        cfg.preprocess.window_limit = limit;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Configuration and directory of an existing run.
fn existing_run(common: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let dir = match &common.out {
        Some(d) => d.clone(),
        None => resolve(common, None)?.out,
    };
    if !dir.is_dir() {
        bail!("run directory {} does not exist; run `generate` first", dir.display());
    }
    let mut cfg = resolve(common, Some(&dir))?;
    cfg.out = dir.clone();
    write_config(&cfg, &dir)?;
    Ok((cfg, dir))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Generate(common) => {
            let cfg = resolve(&common, None)?;
            let dir = prepare_run_dir(&cfg.out, common.overwrite)?;
            write_config(&cfg, &dir)?;
            let eps = run_stage(&dir, "generate", || generate_stage(&cfg, &dir))?;
            println!("{} episodes written to {}", eps.len(), dir.display());
        }
        Command::Preprocess(common) => {
            let (cfg, dir) = existing_run(&common)?;
            let ds = run_stage(&dir, "preprocess", || preprocess_stage(&cfg, &dir))?;
            println!(
                "{} training and {} validation transitions in {}",
                ds.train_shaped.len(),
                ds.validation_shaped.len(),
                dir.display()
            );
        }
        Command::Train { common, algo } => {
            let (cfg, dir) = existing_run(&common)?;
            let ds = Datasets::load(&dir)?;
            run_stage(&dir, "train", || train_stage(&cfg, &dir, &ds, algo))?;
            println!("checkpoints written to {}", dir.join("checkpoints").display());
        }
        Command::Evaluate(common) => {
            let (cfg, dir) = existing_run(&common)?;
            let ds = Datasets::load(&dir)?;
            let values = run_stage(&dir, "evaluate", || evaluate_stage(&cfg, &dir, &ds))?;
            for v in values {
                println!("{} seed {}: {:.4} ± {:.4}", v.policy, v.seed, v.mean, v.std_error);
            }
        }
        Command::Report(common) => {
            let (cfg, dir) = existing_run(&common)?;
            run_stage(&dir, "report", || report_stage(&cfg, &dir))?;
            print!("{}", fs::read_to_string(dir.join("summary.txt"))?);
        }
        Command::Score { input } => {
            let text = fs::read_to_string(&input)
                .with_context(|| format!("reading {}", input.display()))?;
            let value: serde_json::Value = serde_json::from_str(&text)?;
            let inputs: Vec<ApacheInput> = match value {
                serde_json::Value::Array(_) => serde_json::from_value(value)?,
                other => vec![serde_json::from_value(other)?],
            };
            for inp in &inputs {
                println!("{}", apache_score(inp)?);
            }
        }
        Command::RunAll(common) => {
            let cfg = resolve(&common, None)?;
            let dir = run_pipeline(&cfg, common.overwrite)?;
            print!("{}", fs::read_to_string(dir.join("summary.txt"))?);
            println!("run directory: {}", dir.display());
        }
    }
    Ok(())
}
