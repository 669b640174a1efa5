//! Missingness-tiered imputation, normalization and episode-level splitting.
//!
//! Every feature is routed by its training-split missing fraction:
//! below 30 % it is filled by k-nearest-neighbour imputation, from 30 % to
//! 95 % by time-windowed sample-and-hold (mean when nothing can be held), and
//! above 95 % it is dropped from the state.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{FeatureDef, RawAction, RawEpisode};
use crate::mdp::{ActionBinning, ApacheInput, PreparedEpisode, StateVector};
use crate::{Error, Result};

pub const KNN_MAX_MISSING: f64 = 0.30;
pub const HOLD_MAX_MISSING: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImputationMethod {
    Knn,
    SampleAndHold,
    Mean,
    Dropped,
}

/// Route a feature by its missing fraction.
pub fn select_imputation_method(missing_fraction: f64) -> ImputationMethod {
    debug_assert!((0.0..=1.0).contains(&missing_fraction));
    if missing_fraction < KNN_MAX_MISSING {
        ImputationMethod::Knn
    } else if missing_fraction <= HOLD_MAX_MISSING {
        ImputationMethod::SampleAndHold
    } else {
        ImputationMethod::Dropped
    }
}

/// Fill gaps in one patient's time-ordered column. An observed value is held
/// for at most `window_limit` consecutive missing steps; cells beyond the
/// limit, or before any observation, take `fallback_mean`.
pub fn sample_and_hold(column: &[Option<f64>], window_limit: usize, fallback_mean: f64) -> Vec<f64> {
    let mut held: Option<(f64, usize)> = None;
    column
        .iter()
        .map(|cell| match *cell {
            Some(v) => {
                held = Some((v, 0));
                v
            }
            None => match held.as_mut() {
                Some((v, age)) if *age < window_limit => {
                    *age += 1;
                    *v
                }
                _ => fallback_mean,
            },
        })
        .collect()
}

// ---------------------------------------------------------------------------
// KNN
// ---------------------------------------------------------------------------

/// Nearest-neighbour imputer over a fixed reference table.
///
/// Distance is Euclidean over z-scored features observed in both rows; a
/// pair sharing no observed feature is infinitely far apart. Ties are broken
/// by the lower reference row index.
#[derive(Debug, Clone)]
pub struct KnnImputer {
    k: usize,
    reference: Vec<Vec<Option<f64>>>,
    means: Vec<f64>,
    scales: Vec<f64>,
}

/// Result of imputing one or more cells.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnOutcome {
    pub values: Vec<f64>,
    /// Cells filled with the column mean because fewer than `k` reference
    /// rows carried the target.
    pub mean_fallbacks: usize,
}

fn column_stats(rows: &[Vec<Option<f64>>], j: usize) -> (f64, f64, usize) {
    let vals: Vec<f64> = rows.iter().filter_map(|r| r[j]).collect();
    let n = vals.len();
    if n == 0 {
        return (0.0, 0.0, 0);
    }
    let mean = vals.iter().sum::<f64>() / n as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    (mean, var.sqrt(), n)
}

impl KnnImputer {
    pub fn new(reference: Vec<Vec<Option<f64>>>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Param("k must be >= 1".into()));
        }
        let width = reference.first().map_or(0, Vec::len);
        if reference.iter().any(|r| r.len() != width) {
            return Err(Error::Shape("reference rows differ in width".into()));
        }
        let (means, scales) = (0..width)
            .map(|j| {
                let (m, s, _) = column_stats(&reference, j);
                (m, s)
            })
            .unzip();
        Ok(KnnImputer {
            k,
            reference,
            means,
            scales,
        })
    }

    pub fn width(&self) -> usize {
        self.means.len()
    }

    /// Column mean over observed reference values.
    pub fn mean(&self, j: usize) -> f64 {
        self.means[j]
    }

    fn distance(&self, query: &[Option<f64>], r: &[Option<f64>]) -> f64 {
        let mut sum = 0.0;
        let mut shared = 0;
        for j in 0..query.len() {
            if let (Some(a), Some(b)) = (query[j], r[j]) {
                shared += 1;
                let s = self.scales[j];
                if s > 0.0 {
                    let d = (a - b) / s;
                    sum += d * d;
                }
            }
        }
        if shared == 0 {
            f64::INFINITY
        } else {
            sum.sqrt()
        }
    }

    /// Reference rows ordered by distance to `query`, ties by index.
    fn ranked(&self, query: &[Option<f64>]) -> Vec<(f64, usize)> {
        let mut d: Vec<(f64, usize)> = self
            .reference
            .iter()
            .enumerate()
            .map(|(i, r)| (self.distance(query, r), i))
            .collect();
        d.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)));
        d
    }

    /// Fill every missing cell of `row` whose column is in `targets`.
    /// Returns the number of mean fallbacks used.
    pub fn impute_row(&self, row: &mut [Option<f64>], targets: &[usize]) -> usize {
        let missing: Vec<usize> = targets.iter().copied().filter(|&j| row[j].is_none()).collect();
        if missing.is_empty() {
            return 0;
        }
        // Missing cells never contribute to the distance, so one ranking
        // serves every target of this row.
        let ranked = self.ranked(row);
        let mut fallbacks = 0;
        for j in missing {
            let picked: Vec<f64> = ranked
                .iter()
                .filter_map(|&(_, i)| self.reference[i][j])
                .take(self.k)
                .collect();
            row[j] = Some(if picked.len() == self.k {
                picked.iter().sum::<f64>() / self.k as f64
            } else {
                fallbacks += 1;
                self.means[j]
            });
        }
        fallbacks
    }
}

/// Impute column `target` of `table` from its own complete rows.
pub fn knn_impute(table: &[Vec<Option<f64>>], k: usize, target: usize) -> Result<KnnOutcome> {
    if let Some(w) = table.first().map(Vec::len) {
        if target >= w {
            return Err(Error::Param(format!("target column {target} out of range")));
        }
    }
    let imputer = KnnImputer::new(table.to_vec(), k)?;
    let mut fallbacks = 0;
    let values = table
        .iter()
        .map(|row| match row[target] {
            Some(v) => v,
            None => {
                let mut r = row.clone();
                fallbacks += imputer.impute_row(&mut r, &[target]);
                r[target].expect("imputed")
            }
        })
        .collect();
    Ok(KnnOutcome {
        values,
        mean_fallbacks: fallbacks,
    })
}

// ---------------------------------------------------------------------------
// Splitting and normalization
// ---------------------------------------------------------------------------

/// Split whole episodes into training and validation sets. The training side
/// gets `floor(n · fraction)` episodes, clamped so each side has at least one.
pub fn split_train_validation<T: Clone>(
    episodes: &[T],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Param(format!(
            "train fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let n = episodes.len();
    if n < 2 {
        return Err(Error::Param(format!("need at least 2 episodes to split, got {n}")));
    }
    let n_train = ((n as f64 * fraction).floor() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train_idx = order[..n_train].to_vec();
    let mut val_idx = order[n_train..].to_vec();
    train_idx.sort_unstable();
    val_idx.sort_unstable();
    Ok((
        train_idx.iter().map(|&i| episodes[i].clone()).collect(),
        val_idx.iter().map(|&i| episodes[i].clone()).collect(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub def: FeatureDef,
    pub missing_fraction: f64,
    pub method: ImputationMethod,
}

/// Ordered feature catalogue with routing decisions and, once fitted,
/// normalization statistics for the retained (state) features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRegistry {
    pub entries: Vec<RegistryEntry>,
    stats: Option<Vec<NormStats>>,
}

impl FeatureRegistry {
    pub fn new(defs: Vec<FeatureDef>) -> Result<Self> {
        let mut names: Vec<&str> = defs.iter().map(|d| d.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Param("feature names must be unique".into()));
        }
        Ok(FeatureRegistry {
            entries: defs
                .into_iter()
                .map(|def| RegistryEntry {
                    def,
                    missing_fraction: 0.0,
                    method: ImputationMethod::Knn,
                })
                .collect(),
            stats: None,
        })
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.def.name.clone()).collect()
    }

    /// Indices of features kept in the state vector.
    pub fn kept(&self) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.method != ImputationMethod::Dropped)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn kept_names(&self) -> Vec<String> {
        self.kept()
            .into_iter()
            .map(|i| self.entries[i].def.name.clone())
            .collect()
    }

    pub fn state_dim(&self) -> usize {
        self.kept().len()
    }

    pub fn stats(&self) -> Option<&[NormStats]> {
        self.stats.as_deref()
    }

    pub fn is_fitted(&self) -> bool {
        self.stats.is_some()
    }

    /// Fit mean and sample standard deviation per kept feature. Rows are
    /// already restricted to kept features.
    pub fn fit_normalization(&mut self, rows: &[Vec<f64>]) -> Result<()> {
        let dim = self.state_dim();
        if rows.len() < 2 {
            return Err(Error::Data("need at least 2 rows to fit normalization".into()));
        }
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Shape(format!("rows must have {dim} kept features")));
        }
        let n = rows.len() as f64;
        let stats = (0..dim)
            .map(|j| {
                let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
                let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / (n - 1.0);
                NormStats {
                    mean,
                    std: var.sqrt(),
                }
            })
            .collect();
        self.stats = Some(stats);
        Ok(())
    }
}

fn z_score(x: f64, s: &NormStats) -> f64 {
    // Constant columns carry no information; relative tolerance guards
    // against rounding noise in the variance.
    if s.std <= 1e-12 * s.mean.abs().max(1.0) {
        0.0
    } else {
        (x - s.mean) / s.std
    }
}

/// Z-score rows of kept features with the registry's training statistics.
pub fn normalize(states: &[Vec<f64>], registry: &FeatureRegistry) -> Result<Vec<Vec<f64>>> {
    let stats = registry
        .stats()
        .ok_or_else(|| Error::State("feature registry has no normalization statistics".into()))?;
    states
        .iter()
        .map(|row| {
            if row.len() != stats.len() {
                return Err(Error::Shape(format!(
                    "state has {} entries, registry keeps {}",
                    row.len(),
                    stats.len()
                )));
            }
            Ok(row.iter().zip(stats).map(|(&x, s)| z_score(x, s)).collect())
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub knn_k: usize,
    /// Sample-and-hold limit in 4-hour steps.
    pub window_limit: usize,
    pub train_fraction: f64,
    /// Cap on KNN reference rows; larger training sets are thinned evenly.
    pub knn_max_reference: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            knn_k: 3,
            window_limit: 6,
            train_fraction: 0.8,
            knn_max_reference: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImputation {
    pub feature: String,
    pub method: ImputationMethod,
    pub missing_fraction: f64,
    pub imputed_cells: usize,
    /// KNN cells that fell back to the mean.
    pub mean_fallbacks: usize,
}

/// Audit record of one imputation pass.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ImputationReport {
    pub features: Vec<FeatureImputation>,
    pub episodes_skipped: Vec<String>,
}

impl ImputationReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Imputation and normalization fitted on a training split.
#[derive(Debug, Clone)]
pub struct FittedPreprocessor {
    pub registry: FeatureRegistry,
    pub config: PreprocessConfig,
    means: Vec<f64>,
    knn: KnnImputer,
}

fn missing_fractions(episodes: &[RawEpisode], width: usize) -> Vec<f64> {
    let mut missing = vec![0usize; width];
    let mut total = 0usize;
    for step in episodes.iter().flat_map(|e| &e.steps) {
        total += 1;
        for (j, v) in step.features.iter().enumerate() {
            if v.is_none() {
                missing[j] += 1;
            }
        }
    }
    missing
        .into_iter()
        .map(|m| if total == 0 { 1.0 } else { m as f64 / total as f64 })
        .collect()
}

/// Fill missing ventilator settings forward, then backward.
fn fill_actions(actions: &[Option<RawAction>]) -> Option<Vec<RawAction>> {
    let first = actions.iter().flatten().next().copied()?;
    let mut last = first;
    Some(
        actions
            .iter()
            .map(|a| {
                if let Some(a) = a {
                    last = *a;
                }
                last
            })
            .collect(),
    )
}

impl FittedPreprocessor {
    /// Route features, fit imputation on `train` and normalization on the
    /// imputed training states.
    pub fn fit(train: &[RawEpisode], defs: Vec<FeatureDef>, config: PreprocessConfig) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Data("cannot fit preprocessing on an empty split".into()));
        }
        let width = defs.len();
        if let Some(bad) = train
            .iter()
            .find(|e| e.steps.iter().any(|s| s.features.len() != width))
        {
            return Err(Error::Shape(format!(
                "patient {} does not match the {width}-feature registry",
                bad.patient_id
            )));
        }
        let mut registry = FeatureRegistry::new(defs)?;
        let fractions = missing_fractions(train, width);
        for (entry, &f) in registry.entries.iter_mut().zip(&fractions) {
            entry.missing_fraction = f;
            entry.method = select_imputation_method(f);
        }
        let rows: Vec<Vec<Option<f64>>> = train
            .iter()
            .flat_map(|e| e.steps.iter().map(|s| s.features.clone()))
            .collect();
        let stride = rows.len().div_ceil(config.knn_max_reference.max(1)).max(1);
        let reference: Vec<_> = rows.iter().step_by(stride).cloned().collect();
        let means = (0..width).map(|j| column_stats(&rows, j).0).collect();
        let knn = KnnImputer::new(reference, config.knn_k)?;
        let mut fitted = FittedPreprocessor {
            registry,
            config,
            means,
            knn,
        };
        let (imputed, _) = fitted.impute(train);
        let kept = fitted.registry.kept();
        let state_rows: Vec<Vec<f64>> = imputed
            .iter()
            .flatten()
            .map(|row| kept.iter().map(|&j| row[j]).collect())
            .collect();
        fitted.registry.fit_normalization(&state_rows)?;
        Ok(fitted)
    }

    pub fn training_mean(&self, feature: usize) -> f64 {
        self.means[feature]
    }

    /// Impute every feature of every episode in raw units. Dropped features
    /// are mean-filled so downstream scoring always sees complete rows.
    pub fn impute(&self, episodes: &[RawEpisode]) -> (Vec<Vec<Vec<f64>>>, ImputationReport) {
        let width = self.registry.entries.len();
        let mut imputed_cells = vec![0usize; width];
        let mut fallbacks = vec![0usize; width];
        let knn_cols: Vec<usize> = (0..width)
            .filter(|&j| self.registry.entries[j].method == ImputationMethod::Knn)
            .collect();
        let mut out = Vec::with_capacity(episodes.len());
        for ep in episodes {
            let mut rows: Vec<Vec<Option<f64>>> =
                ep.steps.iter().map(|s| s.features.clone()).collect();
            for row in &mut rows {
                for &j in &knn_cols {
                    if row[j].is_none() {
                        imputed_cells[j] += 1;
                    }
                }
                let before: Vec<bool> = knn_cols.iter().map(|&j| row[j].is_none()).collect();
                if before.iter().any(|&b| b) {
                    let original = row.clone();
                    let mut filled = original.clone();
                    self.knn.impute_row(&mut filled, &knn_cols);
                    for (&j, &was_missing) in knn_cols.iter().zip(&before) {
                        if was_missing {
                            let v = filled[j].expect("imputed");
                            if v == self.knn.mean(j) && !self.has_k_candidates(j) {
                                fallbacks[j] += 1;
                            }
                            row[j] = Some(v);
                        }
                    }
                }
            }
            for j in 0..width {
                match self.registry.entries[j].method {
                    ImputationMethod::Knn => {}
                    ImputationMethod::SampleAndHold => {
                        let col: Vec<Option<f64>> = rows.iter().map(|r| r[j]).collect();
                        imputed_cells[j] += col.iter().filter(|v| v.is_none()).count();
                        let filled = sample_and_hold(&col, self.config.window_limit, self.means[j]);
                        for (r, v) in rows.iter_mut().zip(filled) {
                            r[j] = Some(v);
                        }
                    }
                    ImputationMethod::Mean | ImputationMethod::Dropped => {
                        for r in rows.iter_mut() {
                            if r[j].is_none() {
                                imputed_cells[j] += 1;
                                r[j] = Some(self.means[j]);
                            }
                        }
                    }
                }
            }
            out.push(
                rows.into_iter()
                    .map(|r| r.into_iter().map(|v| v.expect("complete row")).collect())
                    .collect(),
            );
        }
        let report = ImputationReport {
            features: self
                .registry
                .entries
                .iter()
                .enumerate()
                .map(|(j, e)| FeatureImputation {
                    feature: e.def.name.clone(),
                    method: e.method,
                    missing_fraction: e.missing_fraction,
                    imputed_cells: imputed_cells[j],
                    mean_fallbacks: fallbacks[j],
                })
                .collect(),
            episodes_skipped: Vec::new(),
        };
        (out, report)
    }

    fn has_k_candidates(&self, j: usize) -> bool {
        self.knn.reference.iter().filter(|r| r[j].is_some()).count() >= self.knn.k
    }

    /// Impute, normalize and discretize episodes for MDP construction.
    /// Episodes without any recorded ventilator settings are skipped.
    pub fn transform(
        &self,
        episodes: &[RawEpisode],
        binning: &ActionBinning,
    ) -> Result<(Vec<PreparedEpisode>, ImputationReport)> {
        let (imputed, mut report) = self.impute(episodes);
        let kept = self.registry.kept();
        let names = self.registry.names();
        let mut prepared = Vec::with_capacity(episodes.len());
        for (ep, rows) in episodes.iter().zip(imputed) {
            if ep.is_empty() {
                report.episodes_skipped.push(ep.patient_id.clone());
                continue;
            }
            let raw_actions: Vec<Option<RawAction>> = ep.steps.iter().map(|s| s.action).collect();
            let Some(actions) = fill_actions(&raw_actions) else {
                log::warn!("patient {} has no ventilator settings; skipped", ep.patient_id);
                report.episodes_skipped.push(ep.patient_id.clone());
                continue;
            };
            let state_rows: Vec<Vec<f64>> = rows
                .iter()
                .map(|r| kept.iter().map(|&j| r[j]).collect())
                .collect();
            let states = normalize(&state_rows, &self.registry)?
                .into_iter()
                .map(StateVector::new)
                .collect::<Result<Vec<_>>>()?;
            let actions = actions
                .iter()
                .map(|a| binning.discretize(a.vt, a.fio2, a.peep))
                .collect::<Result<Vec<_>>>()?;
            let apache = rows
                .iter()
                .map(|r| ApacheInput::from_features(&names, r))
                .collect::<Result<Vec<_>>>()?;
            prepared.push(PreparedEpisode {
                patient_id: ep.patient_id.clone(),
                survived: ep.survived,
                states,
                actions,
                apache,
            });
        }
        Ok((prepared, report))
    }
}
