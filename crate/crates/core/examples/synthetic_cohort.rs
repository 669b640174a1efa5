//! Generate a synthetic ventilation cohort, write it as CSV and JSONL, and
//! print basic cohort statistics.
//!
//! ```text
//! cargo run --example synthetic_cohort -- [n_patients] [seed] [out-dir]
//! ```

use std::path::PathBuf;

use ventrl::dataset::{
    default_feature_names, generate_synthetic_cohort, load_episodes, save_episodes,
    BehaviorProfile, EpisodeFormat, RawEpisode,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(500);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(7);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "runs/cohort".into()));
    std::fs::create_dir_all(&out)?;

    let names = default_feature_names();
    for profile in [BehaviorProfile::physician_like(), BehaviorProfile::noisy_suboptimal()] {
        let episodes = generate_synthetic_cohort(n, seed, &profile)?;
        let steps: usize = episodes.iter().map(|e| e.len()).sum();
        let survived = episodes.iter().filter(|e| e.survived).count();
        println!(
            "{:<18} {n} patients, {steps} steps (mean length {:.1}), survival {:.1}%",
            profile.name,
            steps as f64 / n as f64,
            100.0 * survived as f64 / n as f64
        );
        let mut missing: Vec<(f64, &str)> = names
            .iter()
            .enumerate()
            .map(|(j, name)| {
                let m = episodes
                    .iter()
                    .flat_map(|e| &e.steps)
                    .filter(|s| s.features[j].is_none())
                    .count();
                (m as f64 / steps as f64, name.as_str())
            })
            .collect();
        missing.sort_by(|a, b| b.0.total_cmp(&a.0));
        let top: Vec<String> = missing
            .iter()
            .take(3)
            .map(|(m, name)| format!("{name} {:.0}%", 100.0 * m))
            .collect();
        println!("{:<18} most often missing: {}", "", top.join(", "));

        let csv = out.join(format!("{}.csv", profile.name));
        let jsonl = out.join(format!("{}.jsonl", profile.name));
        save_episodes(&episodes, &csv, EpisodeFormat::Csv, &names)?;
        save_episodes(&episodes, &jsonl, EpisodeFormat::Jsonl, &names)?;
        // CSV carries no per-patient metadata, so compare the clinical content.
        let content = |eps: &[RawEpisode]| -> Vec<_> {
            eps.iter().map(|e| (e.patient_id.clone(), e.survived, e.steps.clone())).collect()
        };
        assert_eq!(content(&load_episodes(&csv, EpisodeFormat::Csv, &names)?), content(&episodes));
        assert_eq!(content(&load_episodes(&jsonl, EpisodeFormat::Jsonl, &names)?), content(&episodes));
    }
    println!("cohorts written to {}", out.display());
    Ok(())
}
