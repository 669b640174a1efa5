//! Split patients into in- and out-of-distribution by their initial states
//! and compare how DDQN and CQL value each group.

use ventrl::algorithms::{train, Algo, TrainConfig};
use ventrl::dataset::{default_features, generate_synthetic_cohort, BehaviorProfile, RewardMode};
use ventrl::evaluation::{
    fqe_fit, ood_split, overestimation_report, EvalPolicy, FqeConfig, OverestimationInput,
};
use ventrl::mdp::{build_replay, ActionBinning, RewardConfig};
use ventrl::preprocess::{FittedPreprocessor, PreprocessConfig};

fn fmt(v: Option<f64>) -> String {
    v.map_or("-".into(), |v| format!("{v:.3}"))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cohort = generate_synthetic_cohort(400, 5, &BehaviorProfile::noisy_suboptimal())?;
    let pre = FittedPreprocessor::fit(&cohort, default_features(), PreprocessConfig::default())?;
    let (episodes, _) = pre.transform(&cohort, &ActionBinning::default())?;
    let reward = RewardConfig::default();
    let terminal = build_replay(&episodes, &reward, RewardMode::TerminalOnly)?;

    let ood = ood_split(&terminal);
    println!(
        "{} of {} patients are out of distribution ({:.1}%)",
        ood.outliers.len(),
        terminal.episodes.len(),
        100.0 * ood.outlier_fraction()
    );

    let cfg = TrainConfig {
        steps: 3000,
        eta: 1e-3,
        batch_size: 64,
        hidden: vec![64, 64],
        target_sync_period: 500,
        log_every: 0,
        ..TrainConfig::default()
    };
    let fqe = FqeConfig {
        iterations: 25,
        steps_per_iteration: 300,
        eta: 1e-3,
        hidden: vec![64, 64],
        ..FqeConfig::default()
    };
    let ddqn = train(&terminal, &cfg, Algo::Ddqn)?;
    let cql = train(&terminal, &cfg, Algo::Cql)?;
    let (ddqn_policy, cql_policy) = (ddqn.policy(), cql.policy());
    let ddqn_fqe = fqe_fit(&terminal, EvalPolicy::Agent(&ddqn_policy), &fqe)?;
    let cql_fqe = fqe_fit(&terminal, EvalPolicy::Agent(&cql_policy), &fqe)?;
    let rows = overestimation_report(
        &[
            OverestimationInput { name: "DDQN".into(), estimator: &ddqn_fqe, own_q: Some(&ddqn.network) },
            OverestimationInput { name: "CQL".into(), estimator: &cql_fqe, own_q: Some(&cql.network) },
        ],
        &terminal,
        &ood,
    )?;
    println!("{:<6} {:>8} {:>8} {:>10} {:>10}", "policy", "FQE ID", "FQE OOD", "own-Q ID", "own-Q OOD");
    for r in rows {
        println!(
            "{:<6} {:>8} {:>8} {:>10} {:>10}   threshold {}",
            r.policy,
            fmt(r.id_mean),
            fmt(r.ood_mean),
            fmt(r.own_q_id_mean),
            fmt(r.own_q_ood_mean),
            r.threshold
        );
    }
    Ok(())
}
