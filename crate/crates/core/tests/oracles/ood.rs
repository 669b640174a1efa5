//! Outlier split on synthetic uniform features and on generated cohorts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ventrl::dataset::{EpisodeSpan, ReplayDataset, RewardMode, Transition};
use ventrl::evaluation::{ood_split, OodSplit};
use ventrl::experiment::{preprocess_episodes, ExperimentConfig};
use ventrl::dataset::{generate_synthetic_cohort, BehaviorProfile};
use ventrl::mdp::{Action, StateVector};

/// Outlier fraction of `n` one-step episodes whose initial states have
/// `features` independent uniform entries.
pub fn uniform_outlier_fraction(n: usize, features: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let transitions: Vec<Transition> = (0..n)
        .map(|e| Transition {
            state: StateVector((0..features).map(|_| rng.random::<f64>()).collect()),
            action: Action::from_flat(0).unwrap(),
            reward: 1.0,
            next_state: None,
            terminal: true,
            episode: e,
            step_index: 0,
        })
        .collect();
    let spans = (0..n)
        .map(|e| EpisodeSpan {
            id: format!("p{e}"),
            start: e,
            len: 1,
        })
        .collect();
    let ds = ReplayDataset::new(transitions, spans, RewardMode::TerminalOnly).unwrap();
    let split = ood_split(&ds);
    check_partition(&split, &ds).unwrap();
    split.outlier_fraction()
}

fn check_partition(split: &OodSplit, ds: &ReplayDataset) -> Result<(), String> {
    let n = ds.episodes.len();
    let mut seen = vec![0u8; n];
    for &e in split.outliers.iter().chain(&split.inliers) {
        if e >= n {
            return Err(format!("episode index {e} out of range"));
        }
        seen[e] += 1;
    }
    if let Some(e) = seen.iter().position(|&c| c != 1) {
        return Err(format!("episode {e} appears {} times", seen[e]));
    }
    let ids_match = split
        .outliers
        .iter()
        .zip(&split.outlier_ids)
        .chain(split.inliers.iter().zip(&split.inlier_ids))
        .all(|(&e, id)| ds.episodes[e].id == *id);
    if !ids_match || split.outlier_ids.len() != split.outliers.len() {
        return Err("episode ids do not match indices".into());
    }
    // Every outlier has a feature strictly outside the percentile band and
    // every inlier has none.
    for (e, s) in ds.initial_states().enumerate() {
        let out = s
            .as_slice()
            .iter()
            .enumerate()
            .any(|(j, &v)| v < split.lower[j] || v > split.upper[j]);
        if out != split.outliers.contains(&e) {
            return Err(format!("episode {e} misclassified"));
        }
    }
    Ok(())
}

/// Outliers and inliers partition every split of several generated cohorts.
pub fn partition_on_cohorts() -> Result<(), String> {
    for (n, seed) in [(40, 0), (150, 1), (300, 2)] {
        let mut cfg = ExperimentConfig::default();
        cfg.cohort.n_patients = n;
        cfg.cohort.seed = seed;
        for profile in [BehaviorProfile::noisy_suboptimal(), BehaviorProfile::physician_like()] {
            let eps = generate_synthetic_cohort(n, seed, &profile).map_err(|e| e.to_string())?;
            let (ds, _) = preprocess_episodes(&cfg, &eps).map_err(|e| e.to_string())?;
            for d in [&ds.train_shaped, &ds.train_terminal, &ds.validation_shaped, &ds.validation_terminal] {
                check_partition(&ood_split(d), d).map_err(|e| format!("cohort n={n} seed={seed}: {e}"))?;
            }
        }
    }
    Ok(())
}
