//! Reward bounds over random score inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ventrl::mdp::{reward, ApacheInput, RewardConfig, SignConvention};

fn random_input(rng: &mut ChaCha8Rng) -> ApacheInput {
    ApacheInput {
        temperature: rng.random_range(20.0..46.0),
        mean_bp: rng.random_range(10.0..240.0),
        heart_rate: rng.random_range(10.0..260.0),
        arterial_ph: rng.random_range(6.6..8.0),
        sodium: rng.random_range(90.0..210.0),
        potassium: rng.random_range(1.0..10.0),
        creatinine: rng.random_range(0.05..10.0),
        wbc: rng.random_range(0.05..80.0),
        gcs: rng.random_range(3..=15),
    }
}

/// Check `n` random pairs under both sign conventions; returns `n`.
pub fn check_random_pairs(n: usize, seed: u64) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shaped = RewardConfig::default();
    let literal = RewardConfig {
        sign_convention: SignConvention::PaperLiteral,
        ..RewardConfig::default()
    };
    let unshaped = RewardConfig {
        shaping_enabled: false,
        ..RewardConfig::default()
    };
    for i in 0..n {
        let (a, b) = (random_input(&mut rng), random_input(&mut rng));
        let survived = rng.random_bool(0.5);
        let err = |e: ventrl::Error| format!("pair {i}: {e}");
        for cfg in [&shaped, &literal] {
            let r = reward(Some(&a), Some(&b), false, survived, cfg).map_err(err)?;
            if !(-1.0..=1.0).contains(&r) {
                return Err(format!("pair {i}: intermediate reward {r}"));
            }
        }
        let forward = reward(Some(&a), Some(&b), false, survived, &shaped).map_err(err)?;
        let back = reward(Some(&a), Some(&b), false, survived, &literal).map_err(err)?;
        if forward != -back {
            return Err(format!("pair {i}: conventions disagree ({forward} vs {back})"));
        }
        for cfg in [&shaped, &literal, &unshaped] {
            let t = reward(Some(&a), Some(&b), true, survived, cfg).map_err(err)?;
            if t != if survived { 1.0 } else { -1.0 } {
                return Err(format!("pair {i}: terminal reward {t}"));
            }
        }
        let z = reward(Some(&a), Some(&b), false, survived, &unshaped).map_err(err)?;
        if z != 0.0 {
            return Err(format!("pair {i}: unshaped intermediate reward {z}"));
        }
    }
    Ok(n)
}
