//! Missingness-tiered imputation on a synthetic cohort: routing by missing
//! fraction, KNN and sample-and-hold on small tables, and the audit report of
//! a fitted preprocessor.

use ventrl::dataset::{default_features, generate_synthetic_cohort, BehaviorProfile};
use ventrl::mdp::ActionBinning;
use ventrl::preprocess::{
    knn_impute, sample_and_hold, select_imputation_method, split_train_validation,
    FittedPreprocessor, PreprocessConfig,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for f in [0.0, 0.29, 0.30, 0.95, 0.96] {
        println!("missing {:>4.0}% -> {:?}", f * 100.0, select_imputation_method(f));
    }

    let table = vec![
        vec![Some(1.0), Some(10.0), Some(0.5)],
        vec![Some(2.0), Some(20.0), None],
        vec![Some(3.0), None, Some(0.7)],
        vec![Some(2.1), Some(21.0), Some(0.6)],
        vec![Some(0.9), Some(9.0), Some(0.4)],
    ];
    let filled = knn_impute(&table, 3, 1)?;
    println!("knn column 1: {:?}", filled.values);
    println!(
        "hold (limit 2): {:?}",
        sample_and_hold(&[Some(5.0), None, None, None, Some(6.0)], 2, 0.0)
    );

    let cohort = generate_synthetic_cohort(400, 3, &BehaviorProfile::physician_like())?;
    let (train, validation) = split_train_validation(&cohort, 0.8, 3)?;
    let pre = FittedPreprocessor::fit(&train, default_features(), PreprocessConfig::default())?;
    let (prepared, report) = pre.transform(&validation, &ActionBinning::default())?;
    println!(
        "{} validation episodes, state dimension {}",
        prepared.len(),
        pre.registry.state_dim()
    );
    for f in report.features.iter().filter(|f| f.imputed_cells > 0) {
        println!(
            "  {:<26} {:>5.1}% missing in training  {:<15} {:>5} cells",
            f.feature,
            100.0 * f.missing_fraction,
            format!("{:?}", f.method),
            f.imputed_cells
        );
    }
    Ok(())
}
