//! Run the whole pipeline on a synthetic cohort and print the summary table.
//!
//! ```text
//! cargo run --release --example full_pipeline -- [config.json] [out-dir]
//! ```
//!
//! Without a config file a small desk-scale configuration is used. Any field
//! can be overridden through `VENTRL__<path>` environment variables, for
//! example `VENTRL__cohort__n_patients=200`.

use std::path::PathBuf;

use ventrl::experiment::{env_overrides, run_pipeline, ExperimentConfig};

fn desk_scale() -> serde_json::Value {
    let train = serde_json::json!({
        "steps": 4000, "eta": 1e-3, "batch_size": 64, "hidden": [64, 64],
        "target_sync_period": 500, "log_every": 500
    });
    serde_json::json!({
        "cohort": { "n_patients": 300, "seed": 1 },
        "arms": [
            { "name": "BC", "algo": "bc", "reward_mode": "shaped", "train": train },
            { "name": "DeepVent-", "algo": "cql", "reward_mode": "terminal_only", "train": train },
            { "name": "DeepVent", "algo": "cql", "reward_mode": "shaped", "train": train },
            { "name": "DDQN", "algo": "ddqn", "reward_mode": "shaped", "train": train }
        ],
        "fqe": { "iterations": 25, "steps_per_iteration": 300, "eta": 1e-3, "hidden": [64, 64] },
        "seeds": [0, 1],
        "out": "runs/full_pipeline"
    })
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let text = match args.next() {
        Some(path) => std::fs::read_to_string(path)?,
        None => desk_scale().to_string(),
    };
    let mut cfg = ExperimentConfig::from_json_with_overrides(&text, env_overrides())?;
    if let Some(out) = args.next() {
        cfg.out = PathBuf::from(out);
    }
    let dir = run_pipeline(&cfg, false)?;
    println!("{}", std::fs::read_to_string(dir.join("summary.txt"))?);
    println!("{}", std::fs::read_to_string(dir.join("ood_values.csv"))?);
    println!("run directory: {}", dir.display());
    Ok(())
}
