//! Small deterministic chain MDP solved by value iteration and dynamic
//! programming, used to check deep DDQN and FQE.

use ventrl::algorithms::{train, Algo, FnPolicy, Policy, TrainConfig};
use ventrl::dataset::{EpisodeSpan, ReplayDataset, RewardMode, Transition};
use ventrl::evaluation::{fqe_fit, initial_state_value, EvalPolicy, FqeConfig};
use ventrl::mdp::{Action, StateVector};

const STATES: usize = 5;
const ACTIONS: usize = 4;
const GAMMA: f64 = 0.6;
const COLLECT: [f64; STATES] = [0.3, 0.2, 0.5, 0.1, 0.05];

const RIGHT: usize = 0;
const TAKE: usize = 1;
const STAY: usize = 2;
const LEFT: usize = 3;

/// `(reward, next state)`; `None` ends the episode. Moving right from the
/// last state pays 1; collecting pays a state-dependent amount.
fn step(s: usize, a: usize) -> (f64, Option<usize>) {
    match a {
        RIGHT if s + 1 == STATES => (1.0, None),
        RIGHT => (0.0, Some(s + 1)),
        TAKE => (COLLECT[s], None),
        STAY => (0.0, Some(s)),
        LEFT => (0.0, Some(s.saturating_sub(1))),
        _ => unreachable!(),
    }
}

fn value_iteration() -> Vec<Vec<f64>> {
    let mut q = vec![vec![0.0; ACTIONS]; STATES];
    for _ in 0..1000 {
        let v: Vec<f64> = q.iter().map(|r| r.iter().copied().fold(f64::MIN, f64::max)).collect();
        for (s, row) in q.iter_mut().enumerate() {
            for (a, cell) in row.iter_mut().enumerate() {
                let (r, next) = step(s, a);
                *cell = r + GAMMA * next.map_or(0.0, |n| v[n]);
            }
        }
    }
    q
}

fn greedy(row: &[f64]) -> usize {
    let mut best = 0;
    for a in 1..row.len() {
        if row[a] > row[best] {
            best = a;
        }
    }
    best
}

fn one_hot(s: usize) -> StateVector {
    let mut v = vec![0.0; STATES];
    v[s] = 1.0;
    StateVector(v)
}

fn state_of(x: &[f64]) -> usize {
    greedy(x)
}

/// One episode per `(state, action)` pair: the pair, then `continuation`
/// until the episode ends (at most 18 steps).
fn exhaustive_dataset(continuation: impl Fn(usize) -> usize) -> ReplayDataset {
    let mut transitions = Vec::new();
    let mut spans = Vec::new();
    for s0 in 0..STATES {
        for a0 in 0..ACTIONS {
            let episode = spans.len();
            let start = transitions.len();
            let (mut s, mut a) = (s0, a0);
            loop {
                let (r, next) = step(s, a);
                let k = transitions.len() - start;
                let next = if k + 1 == 18 { None } else { next };
                transitions.push(Transition {
                    state: one_hot(s),
                    action: Action::from_flat(a).unwrap(),
                    reward: r,
                    next_state: next.map(one_hot),
                    terminal: next.is_none(),
                    episode,
                    step_index: k,
                });
                match next {
                    Some(n) => (s, a) = (n, continuation(n)),
                    None => break,
                }
            }
            spans.push(EpisodeSpan {
                id: format!("s{s0}a{a0}"),
                start,
                len: transitions.len() - start,
            });
        }
    }
    ReplayDataset::new(transitions, spans, RewardMode::Shaped).unwrap()
}

/// Seeds (out of `seeds`) in which DDQN's greedy policy equals the
/// value-iteration policy on every state.
pub fn ddqn_matches_value_iteration(seeds: u64) -> usize {
    let optimal: Vec<usize> = value_iteration().iter().map(|r| greedy(r)).collect();
    assert_eq!(optimal, vec![TAKE, RIGHT, TAKE, RIGHT, RIGHT]);
    let data = exhaustive_dataset(|_| RIGHT);
    let cfg = TrainConfig {
        gamma: GAMMA,
        eta: 1e-2,
        steps: 3000,
        batch_size: 32,
        target_sync_period: 100,
        hidden: vec![32],
        n_actions: ACTIONS,
        log_every: 0,
        ..TrainConfig::default()
    };
    (0..seeds)
        .filter(|&seed| {
            let outcome = train(&data, &TrainConfig { seed, ..cfg.clone() }, Algo::Ddqn).unwrap();
            let policy = outcome.policy();
            let learned: Vec<usize> = (0..STATES).map(|s| policy.act(one_hot(s).as_slice())).collect();
            learned == optimal
        })
        .count()
}

/// FQE value of the fixed policy "move right" against its exact value,
/// both averaged over the dataset's initial states.
pub fn fqe_versus_dynamic_programming() -> (f64, f64) {
    let data = exhaustive_dataset(|_| RIGHT);
    let policy = FnPolicy(|_: &[f64]| RIGHT);
    // Under "right", V(s) = γ^(STATES − 1 − s).
    let exact: Vec<f64> = data
        .initial_states()
        .map(|s0| GAMMA.powi((STATES - 1 - state_of(s0.as_slice())) as i32))
        .collect();
    let dp = exact.iter().sum::<f64>() / exact.len() as f64;
    let cfg = FqeConfig {
        gamma: GAMMA,
        iterations: 30,
        steps_per_iteration: 300,
        batch_size: 32,
        eta: 5e-3,
        hidden: vec![32],
        n_actions: ACTIONS,
        ..FqeConfig::default()
    };
    let est = fqe_fit(&data, EvalPolicy::Agent(&policy), &cfg).unwrap();
    let fqe = initial_state_value(&est, &data).unwrap().mean;
    (fqe, dp)
}
