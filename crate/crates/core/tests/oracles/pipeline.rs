//! End-to-end determinism of the pipeline.

use ventrl::experiment::{run_pipeline, ExperimentConfig};

fn tiny_config(out: &std::path::Path) -> ExperimentConfig {
    let train = serde_json::json!({
        "steps": 500, "eta": 1e-3, "batch_size": 16, "hidden": [16],
        "target_sync_period": 100, "log_every": 100
    });
    let cfg = serde_json::json!({
        "cohort": { "n_patients": 30, "seed": 5 },
        "arms": [
            { "name": "BC", "algo": "bc", "reward_mode": "shaped", "train": train },
            { "name": "CQL", "algo": "cql", "reward_mode": "shaped", "train": train },
            { "name": "DDQN", "algo": "ddqn", "reward_mode": "terminal_only", "train": train }
        ],
        "fqe": { "iterations": 3, "steps_per_iteration": 50, "batch_size": 16, "hidden": [16] },
        "seeds": [3],
        "out": out
    });
    serde_json::from_value(cfg).unwrap()
}

/// Run an identical configuration twice in separate directories and return
/// both `summary.csv` files.
pub fn run_twice() -> (String, String) {
    let root = tempfile::tempdir().unwrap();
    let read = |name: &str| {
        let dir = run_pipeline(&tiny_config(&root.path().join(name)), false).unwrap();
        std::fs::read_to_string(dir.join("summary.csv")).unwrap()
    };
    (read("first"), read("second"))
}
