//! Offline trainers over a fixed replay dataset: double DQN, conservative
//! Q-learning and behavior cloning, plus a tabular Q-learning reference.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{ReplayDataset, Transition};
use crate::evaluation::{fqe_fit, initial_state_value, EvalPolicy, FqeConfig};
use crate::mdp::N_ACTIONS;
use crate::nn::{
    argmax, argmax_rows, sync_target, Activation, ForwardCache, Mlp, NetworkSpec, Optimizer,
    OptimizerKind,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CqlRegularizer {
    /// `logsumexp_a Q(s, a)`.
    Logsumexp,
    /// Mean of `Q(s, a)` over all actions.
    UniformMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    Ddqn,
    Cql,
    Bc,
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algo::Ddqn => "ddqn",
            Algo::Cql => "cql",
            Algo::Bc => "bc",
        })
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ddqn" => Ok(Algo::Ddqn),
            "cql" => Ok(Algo::Cql),
            "bc" => Ok(Algo::Bc),
            other => Err(Error::Param(format!("unknown algorithm {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub gamma: f64,
    pub eta: f64,
    pub alpha: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub target_sync_period: usize,
    pub seed: u64,
    pub cql_regularizer: CqlRegularizer,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub optimizer: OptimizerKind,
    /// Width of the network output; datasets must only use actions below it.
    pub n_actions: usize,
    /// Steps between log records; 0 disables logging.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 0.75,
            eta: 1e-6,
            alpha: 0.1,
            steps: 10_000,
            batch_size: 32,
            target_sync_period: 1000,
            seed: 0,
            cql_regularizer: CqlRegularizer::Logsumexp,
            hidden: vec![256, 256],
            activation: Activation::Relu,
            optimizer: OptimizerKind::Adam,
            n_actions: N_ACTIONS,
            log_every: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Param(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Param(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Param(format!("eta must be positive, got {}", self.eta)));
        }
        if self.batch_size == 0 || self.target_sync_period == 0 {
            return Err(Error::Param("batch_size and target_sync_period must be >= 1".into()));
        }
        if self.n_actions == 0 || self.n_actions > N_ACTIONS {
            return Err(Error::Param(format!(
                "n_actions must lie in 1..={N_ACTIONS}, got {}",
                self.n_actions
            )));
        }
        Ok(())
    }

    pub fn network_spec(&self, state_dim: usize) -> Result<NetworkSpec> {
        NetworkSpec::new(state_dim, self.hidden.clone(), self.activation, self.n_actions)
    }
}

// ---------------------------------------------------------------------------
// Policies
// ---------------------------------------------------------------------------

/// A deterministic decision rule over state vectors.
pub trait Policy: Send + Sync {
    fn act(&self, state: &[f64]) -> usize;

    fn act_batch(&self, states: ArrayView2<f64>) -> Vec<usize> {
        states
            .rows()
            .into_iter()
            .map(|r| self.act(&r.to_vec()))
            .collect()
    }
}

/// Argmax over a network's outputs, lowest index on ties.
#[derive(Debug, Clone)]
pub struct GreedyPolicy {
    pub network: Mlp,
}

impl GreedyPolicy {
    pub fn new(network: Mlp) -> Self {
        GreedyPolicy { network }
    }
}

impl Policy for GreedyPolicy {
    fn act(&self, state: &[f64]) -> usize {
        let q = self
            .network
            .forward_one(state)
            .expect("state width matches the network input");
        argmax(&q)
    }

    fn act_batch(&self, states: ArrayView2<f64>) -> Vec<usize> {
        let q = self
            .network
            .forward(states)
            .expect("state width matches the network input");
        argmax_rows(&q)
    }
}

/// Always the same action.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPolicy(pub usize);

impl Policy for ConstantPolicy {
    fn act(&self, _: &[f64]) -> usize {
        self.0
    }
}

/// Any closure as a policy.
pub struct FnPolicy<F>(pub F);

impl<F: Fn(&[f64]) -> usize + Send + Sync> Policy for FnPolicy<F> {
    fn act(&self, state: &[f64]) -> usize {
        (self.0)(state)
    }
}

// ---------------------------------------------------------------------------
// Tabular reference
// ---------------------------------------------------------------------------

/// One Q-learning step on a table indexed `[state][action]`. `s_next = None`
/// marks a terminal transition, which has no bootstrap term.
pub fn tabular_q_update(
    q: &mut [Vec<f64>],
    s: usize,
    a: usize,
    r: f64,
    s_next: Option<usize>,
    gamma: f64,
    eta: f64,
) {
    let bootstrap = s_next.map_or(0.0, |n| q[n].iter().copied().fold(f64::NEG_INFINITY, f64::max));
    let target = r + gamma * bootstrap;
    q[s][a] += eta * (target - q[s][a]);
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// A mini-batch in matrix form. Terminal rows carry a zero next state that is
/// never used.
#[derive(Debug, Clone)]
pub struct Batch {
    pub states: Array2<f64>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub next_states: Array2<f64>,
    pub terminal: Vec<bool>,
}

impl Batch {
    pub fn from_transitions(transitions: &[&Transition]) -> Result<Self> {
        let dim = transitions
            .first()
            .map(|t| t.state.len())
            .ok_or_else(|| Error::Data("empty batch".into()))?;
        let n = transitions.len();
        let mut states = Array2::zeros((n, dim));
        let mut next_states = Array2::zeros((n, dim));
        for (i, t) in transitions.iter().enumerate() {
            if t.state.len() != dim {
                return Err(Error::Shape("batch states differ in width".into()));
            }
            states.row_mut(i).assign(&ndarray::aview1(t.state.as_slice()));
            if let Some(s) = &t.next_state {
                next_states.row_mut(i).assign(&ndarray::aview1(s.as_slice()));
            }
        }
        Ok(Batch {
            states,
            actions: transitions.iter().map(|t| t.action.flat()).collect(),
            rewards: transitions.iter().map(|t| t.reward).collect(),
            next_states,
            terminal: transitions.iter().map(|t| t.terminal).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Loss value, gradient with respect to the network outputs, and the forward
/// cache needed to back-propagate it.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    /// Mean `Q(s, a_data)` over the batch (mean data-action logit for BC).
    pub mean_q: f64,
    pub d_output: Array2<f64>,
    pub cache: ForwardCache,
}

impl LossOutput {
    /// Gradient with respect to the parameters of `net`.
    pub fn param_grad(&self, net: &Mlp) -> Result<Vec<f64>> {
        net.backward(&self.cache, self.d_output.view())
    }
}

fn check_actions(batch: &Batch, width: usize) -> Result<()> {
    match batch.actions.iter().find(|&&a| a >= width) {
        Some(a) => Err(Error::Shape(format!(
            "action {a} outside the {width}-wide network output"
        ))),
        None => Ok(()),
    }
}

/// Double-DQN temporal-difference loss. The bootstrap action is chosen by
/// `online` and valued by `target`.
pub fn ddqn_loss(batch: &Batch, online: &Mlp, target: &Mlp, gamma: f64) -> Result<LossOutput> {
    if online.spec() != target.spec() {
        return Err(Error::Shape("online and target networks differ in spec".into()));
    }
    if batch.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    check_actions(batch, online.spec().output_dim)?;
    let cache = online.forward_cached(batch.states.view())?;
    let q = cache.output();
    let next_online = online.forward(batch.next_states.view())?;
    let next_target = target.forward(batch.next_states.view())?;
    let n = batch.len() as f64;
    let mut d = Array2::zeros(q.raw_dim());
    let mut loss = 0.0;
    let mut mean_q = 0.0;
    for i in 0..batch.len() {
        let y = if batch.terminal[i] {
            batch.rewards[i]
        } else {
            let a_star = argmax(next_online.row(i).as_slice().expect("contiguous row"));
            batch.rewards[i] + gamma * next_target[[i, a_star]]
        };
        if !y.is_finite() {
            return Err(Error::Numeric(format!("non-finite TD target at batch row {i}")));
        }
        let a = batch.actions[i];
        let delta = q[[i, a]] - y;
        loss += delta * delta / n;
        mean_q += q[[i, a]] / n;
        d[[i, a]] = 2.0 * delta / n;
    }
    Ok(LossOutput {
        loss,
        mean_q,
        d_output: d,
        cache,
    })
}

fn log_sum_exp(row: &[f64]) -> (f64, Vec<f64>) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    (m + sum.ln(), exps.into_iter().map(|e| e / sum).collect())
}

/// Conservative Q-learning: the DDQN loss plus
/// `α · (push_down − push_up)`, where `push_up` is the mean data-action value
/// and `push_down` the mean regularizer over all actions.
pub fn cql_loss(
    batch: &Batch,
    online: &Mlp,
    target: &Mlp,
    gamma: f64,
    alpha: f64,
    regularizer: CqlRegularizer,
) -> Result<LossOutput> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Param(format!("alpha must be >= 0, got {alpha}")));
    }
    let mut out = ddqn_loss(batch, online, target, gamma)?;
    let q = out.cache.output();
    let n = batch.len() as f64;
    let width = q.ncols();
    let mut push_down = 0.0;
    let mut push_up = 0.0;
    let mut d_reg = Array2::<f64>::zeros(q.raw_dim());
    for (i, row) in q.rows().into_iter().enumerate() {
        let row = row.as_slice().expect("contiguous row");
        match regularizer {
            CqlRegularizer::Logsumexp => {
                let (lse, soft) = log_sum_exp(row);
                push_down += lse / n;
                for (g, p) in d_reg.row_mut(i).iter_mut().zip(soft) {
                    *g = p / n;
                }
            }
            CqlRegularizer::UniformMean => {
                push_down += row.iter().sum::<f64>() / (width as f64 * n);
                d_reg.row_mut(i).fill(1.0 / (width as f64 * n));
            }
        }
        let a = batch.actions[i];
        push_up += row[a] / n;
        d_reg[[i, a]] -= 1.0 / n;
    }
    out.loss += alpha * (push_down - push_up);
    out.d_output.scaled_add(alpha, &d_reg);
    Ok(out)
}

/// Mean categorical cross-entropy of the data actions under softmax logits.
pub fn bc_loss(batch: &Batch, policy_net: &Mlp) -> Result<LossOutput> {
    if batch.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    check_actions(batch, policy_net.spec().output_dim)?;
    let cache = policy_net.forward_cached(batch.states.view())?;
    let logits = cache.output();
    let n = batch.len() as f64;
    let mut d = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    let mut mean_q = 0.0;
    for (i, row) in logits.rows().into_iter().enumerate() {
        let row = row.as_slice().expect("contiguous row");
        let (lse, soft) = log_sum_exp(row);
        let a = batch.actions[i];
        loss += (lse - row[a]) / n;
        mean_q += row[a] / n;
        for (g, p) in d.row_mut(i).iter_mut().zip(soft) {
            *g = p / n;
        }
        d[[i, a]] -= 1.0 / n;
    }
    Ok(LossOutput {
        loss,
        mean_q,
        d_output: d,
        cache,
    })
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub loss: f64,
    pub mean_q: f64,
    pub wall_time: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Mlp,
    pub log: Vec<LogRecord>,
}

impl TrainOutcome {
    pub fn policy(&self) -> GreedyPolicy {
        GreedyPolicy::new(self.network.clone())
    }
}

const SAMPLER_STREAM: u64 = 0x5a3b_1e77_0c0f_fee5;

/// Train `algo` on `dataset`. Equivalent to [`train_with_log`] without a sink.
pub fn train(dataset: &ReplayDataset, cfg: &TrainConfig, algo: Algo) -> Result<TrainOutcome> {
    train_with_log(dataset, cfg, algo, None)
}

/// Train with uniform, seeded mini-batches drawn with replacement. Log records
/// are also written as JSON lines to `sink` when given. A non-finite loss or
/// gradient aborts with [`Error::Diverged`] carrying the last finite network.
pub fn train_with_log(
    dataset: &ReplayDataset,
    cfg: &TrainConfig,
    algo: Algo,
    mut sink: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let dim = dataset
        .state_dim()
        .ok_or_else(|| Error::Data("cannot train on an empty dataset".into()))?;
    if let Some(t) = dataset.transitions.iter().find(|t| t.action.flat() >= cfg.n_actions) {
        return Err(Error::Data(format!(
            "dataset action {} exceeds the configured {} actions",
            t.action.flat(),
            cfg.n_actions
        )));
    }
    let spec = cfg.network_spec(dim)?;
    let mut online = Mlp::new(spec, cfg.seed)?;
    let mut target = online.clone();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.eta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SAMPLER_STREAM);
    let started = Instant::now();
    let mut log = Vec::new();
    let n = dataset.len();

    for step in 1..=cfg.steps {
        let picks: Vec<&Transition> = (0..cfg.batch_size)
            .map(|_| &dataset.transitions[rng.random_range(0..n)])
            .collect();
        let batch = Batch::from_transitions(&picks)?;
        let out = match algo {
            Algo::Ddqn => ddqn_loss(&batch, &online, &target, cfg.gamma),
            Algo::Cql => cql_loss(&batch, &online, &target, cfg.gamma, cfg.alpha, cfg.cql_regularizer),
            Algo::Bc => bc_loss(&batch, &online),
        };
        let diverged = |reason: String, net: &Mlp| Error::Diverged {
            step,
            reason,
            last_finite: Box::new(net.clone()),
        };
        let out = match out {
            Ok(o) if o.loss.is_finite() => o,
            Ok(o) => return Err(diverged(format!("loss is {}", o.loss), &online)),
            Err(Error::Numeric(m)) => return Err(diverged(m, &online)),
            Err(e) => return Err(e),
        };
        let grad = out.param_grad(&online)?;
        let before = online.clone();
        match opt.step(&mut online, &grad) {
            Ok(()) => {}
            Err(Error::Numeric(m)) => return Err(diverged(m, &before)),
            Err(e) => return Err(e),
        }
        if online.params().iter().any(|p| !p.is_finite()) {
            return Err(diverged("parameters became non-finite".into(), &before));
        }
        if step % cfg.target_sync_period == 0 {
            sync_target(&online, &mut target)?;
        }
        if cfg.log_every > 0 && (step % cfg.log_every == 0 || step == cfg.steps) {
            let rec = LogRecord {
                step,
                loss: out.loss,
                mean_q: out.mean_q,
                wall_time: started.elapsed().as_secs_f64(),
            };
            log::debug!("{algo} step {step}: loss {:.6} mean_q {:.4}", rec.loss, rec.mean_q);
            if let Some(w) = sink.as_mut() {
                let line = serde_json::to_string(&rec)?;
                writeln!(w, "{line}").map_err(|e| Error::io("training log", e))?;
            }
            log.push(rec);
        }
    }
    Ok(TrainOutcome {
        network: online,
        log,
    })
}

// ---------------------------------------------------------------------------
// Grid search
// ---------------------------------------------------------------------------

/// Hyperparameter grid; every combination is one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGrid {
    pub etas: Vec<f64>,
    pub gammas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub architectures: Vec<Vec<usize>>,
    pub activations: Vec<Activation>,
}

impl ParamGrid {
    /// Learning rates 1e-7..1e-4, discounts 0.25..0.99, CQL scales 0.05..2,
    /// 1 to 3 equal-width hidden layers of 64..512 units, sigmoid or ReLU.
    pub fn full() -> Self {
        let widths = [64, 128, 256, 512];
        ParamGrid {
            etas: vec![1e-7, 1e-6, 1e-5, 1e-4],
            gammas: vec![0.25, 0.5, 0.75, 0.9, 0.99],
            alphas: vec![0.05, 0.1, 0.5, 1.0, 2.0],
            architectures: (1..=3)
                .flat_map(|depth| widths.iter().map(move |&w| vec![w; depth]))
                .collect(),
            activations: vec![Activation::Sigmoid, Activation::Relu],
        }
    }

    /// The single configuration `base`.
    pub fn single(base: &TrainConfig) -> Self {
        ParamGrid {
            etas: vec![base.eta],
            gammas: vec![base.gamma],
            alphas: vec![base.alpha],
            architectures: vec![base.hidden.clone()],
            activations: vec![base.activation],
        }
    }

    pub fn len(&self) -> usize {
        self.etas.len()
            * self.gammas.len()
            * self.alphas.len()
            * self.architectures.len()
            * self.activations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All combinations layered onto `base`, in a fixed order.
    pub fn expand(&self, base: &TrainConfig) -> Vec<TrainConfig> {
        let mut out = Vec::with_capacity(self.len());
        for &eta in &self.etas {
            for &gamma in &self.gammas {
                for &alpha in &self.alphas {
                    for hidden in &self.architectures {
                        for &activation in &self.activations {
                            out.push(TrainConfig {
                                eta,
                                gamma,
                                alpha,
                                hidden: hidden.clone(),
                                activation,
                                ..base.clone()
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedConfig {
    /// Position in the expanded grid.
    pub index: usize,
    pub config: TrainConfig,
    /// Mean initial state value on the validation split.
    pub value: f64,
    /// Set when training diverged; such entries rank last.
    pub error: Option<String>,
}

/// Train every grid cell for `budget` steps on `train_set` and rank by FQE
/// value on `validation`, best first. Ties keep grid order.
pub fn grid_search(
    train_set: &ReplayDataset,
    validation: &ReplayDataset,
    algo: Algo,
    base: &TrainConfig,
    grid: &ParamGrid,
    budget: usize,
    fqe: &FqeConfig,
) -> Result<Vec<RankedConfig>> {
    if grid.is_empty() {
        return Err(Error::Param("grid search needs at least one configuration".into()));
    }
    let mut ranked = Vec::with_capacity(grid.len());
    for (index, mut config) in grid.expand(base).into_iter().enumerate() {
        config.steps = budget;
        let (value, error) = match train(train_set, &config, algo) {
            Ok(outcome) => {
                let policy = outcome.policy();
                let est = fqe_fit(validation, EvalPolicy::Agent(&policy), fqe)?;
                (initial_state_value(&est, validation)?.mean, None)
            }
            Err(e @ Error::Diverged { .. }) => (f64::NEG_INFINITY, Some(e.to_string())),
            Err(e) => return Err(e),
        };
        log::info!("grid cell {index}: value {value:.4}");
        ranked.push(RankedConfig {
            index,
            config,
            value,
            error,
        });
    }
    ranked.sort_by(|a, b| b.value.total_cmp(&a.value).then(a.index.cmp(&b.index)));
    Ok(ranked)
}
