//! Off-policy evaluation and cohort diagnostics: fitted Q evaluation,
//! Monte Carlo returns of the logged policy, out-of-distribution splitting,
//! overestimation reports and action histograms.

use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::algorithms::Policy;
use crate::dataset::{ReplayDataset, RewardMode};
use crate::mdp::{Action, ActionBinning, Setting, BINS_PER_SETTING, N_ACTIONS};
use crate::nn::{Activation, Mlp, NetworkSpec, Optimizer, OptimizerKind};
use crate::{Error, Result};

/// Maximum return of an episode when only the terminal reward is paid.
pub const OVERESTIMATION_THRESHOLD: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FqeConfig {
    pub gamma: f64,
    /// Number of target refreshes.
    pub iterations: usize,
    /// Gradient steps between target refreshes.
    pub steps_per_iteration: usize,
    pub batch_size: usize,
    pub eta: f64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub optimizer: OptimizerKind,
    pub n_actions: usize,
    pub seed: u64,
}

impl Default for FqeConfig {
    fn default() -> Self {
        FqeConfig {
            gamma: 0.75,
            iterations: 40,
            steps_per_iteration: 5000,
            batch_size: 64,
            eta: 1e-4,
            hidden: vec![256, 256],
            activation: Activation::Relu,
            optimizer: OptimizerKind::Adam,
            n_actions: N_ACTIONS,
            seed: 0,
        }
    }
}

impl FqeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Param(format!("FQE gamma must lie in [0, 1), got {}", self.gamma)));
        }
        if self.batch_size == 0 {
            return Err(Error::Param("FQE batch_size must be >= 1".into()));
        }
        if self.n_actions == 0 || self.n_actions > N_ACTIONS {
            return Err(Error::Param(format!("n_actions must lie in 1..={N_ACTIONS}")));
        }
        Ok(())
    }
}

/// The policy whose value is estimated.
#[derive(Clone, Copy)]
pub enum EvalPolicy<'p> {
    /// The logged policy: its action at every state is the recorded one.
    Behavior,
    Agent(&'p dyn Policy),
}

impl std::fmt::Debug for EvalPolicy<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EvalPolicy::Behavior => f.write_str("Behavior"),
            EvalPolicy::Agent(_) => f.write_str("Agent(..)"),
        }
    }
}

/// A fitted `Q_π` together with the policy it evaluates.
#[derive(Debug, Clone)]
pub struct FqeEstimator<'p> {
    pub network: Mlp,
    pub policy: EvalPolicy<'p>,
    pub iterations: usize,
    pub reward_mode: RewardMode,
}

/// Stack the states of a dataset into a matrix.
pub fn dataset_states(ds: &ReplayDataset) -> Array2<f64> {
    let dim = ds.state_dim().unwrap_or(0);
    let mut out = Array2::zeros((ds.len(), dim));
    for (mut row, t) in out.rows_mut().into_iter().zip(&ds.transitions) {
        row.assign(&ndarray::aview1(t.state.as_slice()));
    }
    out
}

fn initial_states(ds: &ReplayDataset) -> Array2<f64> {
    let dim = ds.state_dim().unwrap_or(0);
    let mut out = Array2::zeros((ds.episodes.len(), dim));
    for (mut row, s) in out.rows_mut().into_iter().zip(ds.initial_states()) {
        row.assign(&ndarray::aview1(s.as_slice()));
    }
    out
}

const FQE_SAMPLER_STREAM: u64 = 0x00f9_e5a1_3c2d_4b6f;

/// Fitted Q evaluation. Each iteration freezes the current network, builds
/// targets `y = r + γ·Q_frozen(s', π(s'))` (`y = r` at terminals) and takes
/// `steps_per_iteration` mean-squared-error steps on `(s, a) → y`.
pub fn fqe_fit<'p>(
    dataset: &ReplayDataset,
    policy: EvalPolicy<'p>,
    cfg: &FqeConfig,
) -> Result<FqeEstimator<'p>> {
    cfg.validate()?;
    let dim = dataset
        .state_dim()
        .ok_or_else(|| Error::Data("cannot run FQE on an empty dataset".into()))?;
    let n = dataset.len();
    let ts = &dataset.transitions;
    if let Some(t) = ts.iter().find(|t| t.action.flat() >= cfg.n_actions) {
        return Err(Error::Data(format!(
            "dataset action {} exceeds the configured {} actions",
            t.action.flat(),
            cfg.n_actions
        )));
    }
    let states = dataset_states(dataset);
    let mut next_states = Array2::zeros((n, dim));
    for (i, t) in ts.iter().enumerate() {
        if let Some(s) = &t.next_state {
            next_states.row_mut(i).assign(&ndarray::aview1(s.as_slice()));
        }
    }
    let next_actions: Vec<usize> = match policy {
        // Non-terminal transitions are followed by the next step of the
        // same episode, whose logged action is the behavior choice at s'.
        EvalPolicy::Behavior => (0..n)
            .map(|i| if ts[i].terminal { 0 } else { ts[i + 1].action.flat() })
            .collect(),
        EvalPolicy::Agent(p) => p.act_batch(next_states.view()),
    };
    if let Some(&a) = next_actions.iter().find(|&&a| a >= cfg.n_actions) {
        return Err(Error::Data(format!("policy chose action {a} outside the action space")));
    }
    let actions: Vec<usize> = ts.iter().map(|t| t.action.flat()).collect();

    let spec = NetworkSpec::new(dim, cfg.hidden.clone(), cfg.activation, cfg.n_actions)?;
    let mut net = Mlp::new(spec, cfg.seed)?;
    let mut opt = Optimizer::new(cfg.optimizer, cfg.eta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ FQE_SAMPLER_STREAM);
    let mut targets = vec![0.0; n];
    let b = cfg.batch_size;
    let mut d = Array2::zeros((b, cfg.n_actions));

    for k in 1..=cfg.iterations {
        let q_next = net.forward(next_states.view())?;
        for i in 0..n {
            targets[i] = if ts[i].terminal {
                ts[i].reward
            } else {
                ts[i].reward + cfg.gamma * q_next[[i, next_actions[i]]]
            };
        }
        if let Some(i) = targets.iter().position(|y| !y.is_finite()) {
            return Err(Error::Diverged {
                step: k,
                reason: format!("non-finite FQE target at transition {i}"),
                last_finite: Box::new(net),
            });
        }
        for step in 0..cfg.steps_per_iteration {
            let idx: Vec<usize> = (0..b).map(|_| rng.random_range(0..n)).collect();
            let x = states.select(Axis(0), &idx);
            let cache = net.forward_cached(x.view())?;
            let q = cache.output();
            d.fill(0.0);
            let mut loss = 0.0;
            for (r, &i) in idx.iter().enumerate() {
                let delta = q[[r, actions[i]]] - targets[i];
                loss += delta * delta / b as f64;
                d[[r, actions[i]]] = 2.0 * delta / b as f64;
            }
            let grad = net.backward(&cache, d.view())?;
            let before = net.clone();
            let stepped = opt.step(&mut net, &grad);
            if !loss.is_finite() || stepped.is_err() || net.params().iter().any(|p| !p.is_finite()) {
                return Err(Error::Diverged {
                    step: (k - 1) * cfg.steps_per_iteration + step + 1,
                    reason: format!("FQE loss {loss} at iteration {k}"),
                    last_finite: Box::new(before),
                });
            }
        }
    }
    Ok(FqeEstimator {
        network: net,
        policy,
        iterations: cfg.iterations,
        reward_mode: dataset.reward_mode,
    })
}

/// Mean initial state value with its per-episode breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueReport {
    pub mean: f64,
    /// Standard error of `mean`: across episodes for a single run, across
    /// runs for [`ValueReport::across_runs`].
    pub std_error: f64,
    pub per_episode: Vec<f64>,
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

impl ValueReport {
    pub fn from_values(per_episode: Vec<f64>) -> Self {
        let (mean, std_error) = mean_and_se(&per_episode);
        ValueReport {
            mean,
            std_error,
            per_episode,
        }
    }

    /// Combine runs (e.g. training seeds): the mean of run means with the
    /// standard error across runs; `per_episode` holds the run means.
    pub fn across_runs(runs: &[ValueReport]) -> Self {
        Self::from_values(runs.iter().map(|r| r.mean).collect())
    }

    /// Mean over a subset of episodes; `None` when the subset is empty.
    pub fn subset_mean(&self, episodes: &[usize]) -> Option<f64> {
        if episodes.is_empty() {
            return None;
        }
        Some(episodes.iter().map(|&e| self.per_episode[e]).sum::<f64>() / episodes.len() as f64)
    }
}

/// `Q_π(s_0, π(s_0))` for every episode of `dataset`.
pub fn initial_state_value(est: &FqeEstimator<'_>, dataset: &ReplayDataset) -> Result<ValueReport> {
    if dataset.episodes.is_empty() {
        return Err(Error::Data("dataset has no episodes".into()));
    }
    let s0 = initial_states(dataset);
    let actions: Vec<usize> = match est.policy {
        EvalPolicy::Behavior => dataset
            .initial_state_index
            .iter()
            .map(|&i| dataset.transitions[i].action.flat())
            .collect(),
        EvalPolicy::Agent(p) => p.act_batch(s0.view()),
    };
    let q = est.network.forward(s0.view())?;
    Ok(ValueReport::from_values(
        actions.iter().enumerate().map(|(e, &a)| q[[e, a]]).collect(),
    ))
}

/// Discounted return `Σ γ^t r_t` of every logged episode.
pub fn physician_return(dataset: &ReplayDataset, gamma: f64) -> ValueReport {
    ValueReport::from_values(
        (0..dataset.episodes.len())
            .map(|e| {
                dataset
                    .episode_transitions(e)
                    .iter()
                    .rev()
                    .fold(0.0, |acc, t| t.reward + gamma * acc)
            })
            .collect(),
    )
}

// ---------------------------------------------------------------------------
// Out-of-distribution split
// ---------------------------------------------------------------------------

/// Linear-interpolation percentile of sorted data, `p ∈ [0, 1]`.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty data");
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodSplit {
    /// Episode indices whose initial state has a feature in the extreme tails.
    pub outliers: Vec<usize>,
    pub inliers: Vec<usize>,
    pub outlier_ids: Vec<String>,
    pub inlier_ids: Vec<String>,
    /// Per-feature 1st percentiles.
    pub lower: Vec<f64>,
    /// Per-feature 99th percentiles.
    pub upper: Vec<f64>,
}

impl OodSplit {
    pub fn outlier_fraction(&self) -> f64 {
        self.outliers.len() as f64 / (self.outliers.len() + self.inliers.len()) as f64
    }
}

/// Flag rows with any feature strictly below its 1st or strictly above its
/// 99th percentile. Returns `(outlier flags, lower, upper)`.
pub fn flag_outliers(rows: ArrayView2<f64>) -> (Vec<bool>, Vec<f64>, Vec<f64>) {
    let mut lower = Vec::with_capacity(rows.ncols());
    let mut upper = Vec::with_capacity(rows.ncols());
    let mut flags = vec![false; rows.nrows()];
    if rows.nrows() == 0 {
        return (flags, lower, upper);
    }
    for col in rows.columns() {
        let mut sorted = col.to_vec();
        sorted.sort_by(f64::total_cmp);
        let (lo, hi) = (percentile(&sorted, 0.01), percentile(&sorted, 0.99));
        for (flag, &v) in flags.iter_mut().zip(col) {
            *flag |= v < lo || v > hi;
        }
        lower.push(lo);
        upper.push(hi);
    }
    (flags, lower, upper)
}

/// Split episodes by their initial states.
pub fn ood_split(dataset: &ReplayDataset) -> OodSplit {
    let (flags, lower, upper) = flag_outliers(initial_states(dataset).view());
    let mut split = OodSplit {
        outliers: Vec::new(),
        inliers: Vec::new(),
        outlier_ids: Vec::new(),
        inlier_ids: Vec::new(),
        lower,
        upper,
    };
    for (e, flag) in flags.into_iter().enumerate() {
        let id = dataset.episodes[e].id.clone();
        if flag {
            split.outliers.push(e);
            split.outlier_ids.push(id);
        } else {
            split.inliers.push(e);
            split.inlier_ids.push(id);
        }
    }
    split
}

// ---------------------------------------------------------------------------
// Overestimation
// ---------------------------------------------------------------------------

pub struct OverestimationInput<'a, 'p> {
    pub name: String,
    pub estimator: &'a FqeEstimator<'p>,
    /// The policy's own Q-network, reported alongside the FQE estimate.
    pub own_q: Option<&'a Mlp>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverestimationRow {
    pub policy: String,
    pub id_mean: Option<f64>,
    pub ood_mean: Option<f64>,
    pub own_q_id_mean: Option<f64>,
    pub own_q_ood_mean: Option<f64>,
    pub threshold: f64,
}

/// Mean initial values over inlier and outlier episodes, by FQE and (where
/// given) by each policy's own `max_a Q(s_0, a)`.
pub fn overestimation_report(
    inputs: &[OverestimationInput<'_, '_>],
    dataset: &ReplayDataset,
    ood: &OodSplit,
) -> Result<Vec<OverestimationRow>> {
    if dataset.reward_mode != RewardMode::TerminalOnly {
        return Err(Error::Precondition(
            "overestimation is measured on the terminal-only dataset".into(),
        ));
    }
    let s0 = initial_states(dataset);
    inputs
        .iter()
        .map(|inp| {
            if inp.estimator.reward_mode != RewardMode::TerminalOnly {
                return Err(Error::Precondition(format!(
                    "FQE for {} was not fitted on terminal-only rewards",
                    inp.name
                )));
            }
            let fqe = initial_state_value(inp.estimator, dataset)?;
            let own = inp
                .own_q
                .map(|net| -> Result<ValueReport> {
                    let q = net.forward(s0.view())?;
                    Ok(ValueReport::from_values(
                        q.rows()
                            .into_iter()
                            .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
                            .collect(),
                    ))
                })
                .transpose()?;
            Ok(OverestimationRow {
                policy: inp.name.clone(),
                id_mean: fqe.subset_mean(&ood.inliers),
                ood_mean: fqe.subset_mean(&ood.outliers),
                own_q_id_mean: own.as_ref().and_then(|r| r.subset_mean(&ood.inliers)),
                own_q_ood_mean: own.as_ref().and_then(|r| r.subset_mean(&ood.outliers)),
                threshold: OVERESTIMATION_THRESHOLD,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Action distributions
// ---------------------------------------------------------------------------

/// Counts of chosen bins, marginalized per ventilator setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ActionHistogram {
    /// Indexed `[setting][bin]` in `Setting::ALL` order.
    pub counts: [[u64; BINS_PER_SETTING]; 3],
}

impl ActionHistogram {
    pub fn from_actions(actions: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut h = ActionHistogram::default();
        for a in actions {
            let a = Action::from_flat(a)?;
            for (s, setting) in Setting::ALL.iter().enumerate() {
                h.counts[s][a.bin(*setting)] += 1;
            }
        }
        Ok(h)
    }

    pub fn total(&self, setting: Setting) -> u64 {
        self.counts[setting as usize].iter().sum()
    }

    pub fn fractions(&self, setting: Setting) -> [f64; BINS_PER_SETTING] {
        let total = self.total(setting).max(1) as f64;
        self.counts[setting as usize].map(|c| c as f64 / total)
    }
}

/// Greedy actions of `policy` over `states`.
pub fn action_distribution(policy: &dyn Policy, states: ArrayView2<f64>) -> Result<ActionHistogram> {
    ActionHistogram::from_actions(policy.act_batch(states))
}

/// Logged actions of the dataset.
pub fn physician_distribution(dataset: &ReplayDataset) -> ActionHistogram {
    ActionHistogram::from_actions(dataset.transitions.iter().map(|t| t.action.flat()))
        .expect("dataset actions are valid")
}

/// Long-format CSV: `policy,setting,bin,label,count,fraction`.
pub fn histograms_csv(rows: &[(String, ActionHistogram)], binning: &ActionBinning) -> String {
    let mut out = String::from("policy,setting,bin,label,count,fraction\n");
    for (name, h) in rows {
        for setting in Setting::ALL {
            let fr = h.fractions(setting);
            for bin in 0..BINS_PER_SETTING {
                let _ = writeln!(
                    out,
                    "{name},{},{bin},{},{},{:.6}",
                    setting.name(),
                    binning.setting(setting).label(bin),
                    h.counts[setting as usize][bin],
                    fr[bin]
                );
            }
        }
    }
    out
}
