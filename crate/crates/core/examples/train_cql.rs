//! Train DDQN, CQL and behavior cloning on one synthetic cohort and compare
//! them by fitted Q evaluation against the logged physician return.

use ventrl::algorithms::{train, Algo, TrainConfig};
use ventrl::dataset::{default_features, generate_synthetic_cohort, BehaviorProfile, RewardMode};
use ventrl::evaluation::{fqe_fit, initial_state_value, physician_return, EvalPolicy, FqeConfig};
use ventrl::mdp::{build_replay, ActionBinning, RewardConfig};
use ventrl::preprocess::{split_train_validation, FittedPreprocessor, PreprocessConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::init();
    let cohort = generate_synthetic_cohort(400, 21, &BehaviorProfile::noisy_suboptimal())?;
    let (train_eps, val_eps) = split_train_validation(&cohort, 0.8, 21)?;
    let pre = FittedPreprocessor::fit(&train_eps, default_features(), PreprocessConfig::default())?;
    let binning = ActionBinning::default();
    let (train_eps, _) = pre.transform(&train_eps, &binning)?;
    let (val_eps, _) = pre.transform(&val_eps, &binning)?;
    let reward = RewardConfig::default();
    let shaped = build_replay(&train_eps, &reward, RewardMode::Shaped)?;
    let evaluation = build_replay(&val_eps, &reward, RewardMode::TerminalOnly)?;

    let cfg = TrainConfig {
        steps: 3000,
        eta: 1e-3,
        batch_size: 64,
        hidden: vec![64, 64],
        target_sync_period: 500,
        log_every: 1000,
        ..TrainConfig::default()
    };
    let fqe = FqeConfig {
        iterations: 25,
        steps_per_iteration: 300,
        eta: 1e-3,
        hidden: vec![64, 64],
        ..FqeConfig::default()
    };

    let physician = physician_return(&evaluation, fqe.gamma);
    println!("{:<10} {:>8.4}", "physician", physician.mean);
    for algo in [Algo::Bc, Algo::Ddqn, Algo::Cql] {
        let outcome = train(&shaped, &cfg, algo)?;
        let last = outcome.log.last().expect("logging enabled");
        let policy = outcome.policy();
        let est = fqe_fit(&evaluation, EvalPolicy::Agent(&policy), &fqe)?;
        let value = initial_state_value(&est, &evaluation)?;
        println!(
            "{:<10} {:>8.4}   (final loss {:.4}, mean Q {:.3})",
            algo.to_string(),
            value.mean,
            last.loss,
            last.mean_q
        );
    }
    Ok(())
}
