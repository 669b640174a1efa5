//! Experiments on generated cohorts: behavior-policy FQE against Monte Carlo
//! returns, and the multi-seed policy comparison.

use std::sync::OnceLock;
use std::time::Instant;

use ventrl::dataset::{generate_synthetic_cohort, BehaviorProfile};
use ventrl::dataset::{default_features, RewardMode};
use ventrl::evaluation::{fqe_fit, initial_state_value, physician_return, EvalPolicy, FqeConfig};
use ventrl::experiment::{run_pipeline, ExperimentConfig};
use ventrl::mdp::{build_replay, ActionBinning, RewardConfig};
use ventrl::preprocess::{FittedPreprocessor, PreprocessConfig};

/// Behavior-policy FQE and the mean discounted logged return on the
/// terminal-only dataset of an `n`-patient cohort.
pub fn behavior_fqe_versus_monte_carlo(n: usize) -> (f64, f64) {
    let eps = generate_synthetic_cohort(n, 21, &BehaviorProfile::noisy_suboptimal()).unwrap();
    let pre = FittedPreprocessor::fit(&eps, default_features(), PreprocessConfig::default()).unwrap();
    let (prepared, _) = pre.transform(&eps, &ActionBinning::default()).unwrap();
    let ds = build_replay(&prepared, &RewardConfig::default(), RewardMode::TerminalOnly).unwrap();
    let cfg = FqeConfig {
        iterations: 30,
        steps_per_iteration: 500,
        eta: 1e-3,
        hidden: vec![64, 64],
        ..FqeConfig::default()
    };
    let est = fqe_fit(&ds, EvalPolicy::Behavior, &cfg).unwrap();
    let fqe = initial_state_value(&est, &ds).unwrap().mean;
    (fqe, physician_return(&ds, cfg.gamma).mean)
}

/// Values of one training seed.
#[derive(Debug, Clone, Default)]
pub struct SeedValues {
    pub seed: u64,
    pub cql_shaped: f64,
    pub cql_terminal: f64,
    pub bc: f64,
    pub physician: f64,
    pub ddqn_id: f64,
    pub ddqn_ood: f64,
    pub cql_id: f64,
    pub cql_ood: f64,
    /// `max_a Q(s0, a)` of the DDQN and CQL networks themselves, reported
    /// for comparison only.
    pub ddqn_own: (f64, f64),
    pub cql_own: (f64, f64),
}

pub struct Study {
    pub seconds: f64,
    pub seeds: Vec<SeedValues>,
}

/// The study configuration, shipped with the examples.
pub fn study_config() -> ExperimentConfig {
    let text = include_str!("../../examples/configs/study.json");
    ExperimentConfig::from_json_with_overrides(text, std::iter::empty()).unwrap()
}

fn run_study() -> Study {
    let root = tempfile::tempdir().unwrap();
    let mut cfg = study_config();
    cfg.out = root.path().join("study");
    let started = Instant::now();
    let dir = run_pipeline(&cfg, false).unwrap();
    let seconds = started.elapsed().as_secs_f64();

    let physician: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("physician.json")).unwrap()).unwrap();
    let physician = physician["mean"].as_f64().unwrap();
    let mut seeds: Vec<SeedValues> = cfg
        .seeds
        .iter()
        .map(|&seed| SeedValues {
            seed,
            physician,
            ..SeedValues::default()
        })
        .collect();
    let index = |seeds: &[SeedValues], s: u64| seeds.iter().position(|v| v.seed == s).unwrap();

    let mut values = csv::Reader::from_path(dir.join("values.csv")).unwrap();
    for rec in values.records() {
        let rec = rec.unwrap();
        let i = index(&seeds, rec[1].parse().unwrap());
        let mean: f64 = rec[2].parse().unwrap();
        match &rec[0] {
            "DeepVent" => seeds[i].cql_shaped = mean,
            "DeepVent-" => seeds[i].cql_terminal = mean,
            "BC" => seeds[i].bc = mean,
            _ => {}
        }
    }
    let mut ood = csv::Reader::from_path(dir.join("ood_values.csv")).unwrap();
    for rec in ood.records() {
        let rec = rec.unwrap();
        let i = index(&seeds, rec[1].parse().unwrap());
        let f = |k: usize| rec[k].parse::<f64>().unwrap_or(f64::NAN);
        let v = &mut seeds[i];
        match &rec[0] {
            "DDQN" => (v.ddqn_id, v.ddqn_ood, v.ddqn_own) = (f(2), f(3), (f(4), f(5))),
            "DeepVent" => (v.cql_id, v.cql_ood, v.cql_own) = (f(2), f(3), (f(4), f(5))),
            _ => {}
        }
    }
    Study { seconds, seeds }
}

/// The study is shared by the ordering and overestimation criteria.
pub fn shared_study() -> &'static Study {
    static STUDY: OnceLock<Study> = OnceLock::new();
    STUDY.get_or_init(run_study)
}
