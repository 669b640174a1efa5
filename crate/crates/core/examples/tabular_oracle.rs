//! A four-state deterministic MDP solved three ways: value iteration,
//! tabular Q-learning sweeps, and deep DDQN on an exhaustive replay dataset.
//! All three agree on the greedy policy.

use ventrl::algorithms::{tabular_q_update, train, Algo, Policy, TrainConfig};
use ventrl::dataset::{EpisodeSpan, ReplayDataset, RewardMode, Transition};
use ventrl::mdp::{Action, StateVector};
use ventrl::nn::argmax;

const STATES: usize = 4;
const ACTIONS: usize = 3;
const GAMMA: f64 = 0.75;
const BAIL: [f64; STATES] = [0.5, 0.3, 0.2, 0.1];

/// `(reward, next state)`; `None` is the terminal state.
/// Actions: 0 advances (reward 1 when leaving the last state), 1 bails out
/// with a state-dependent reward, 2 stays put.
fn step(s: usize, a: usize) -> (f64, Option<usize>) {
    match a {
        0 if s + 1 == STATES => (1.0, None),
        0 => (0.0, Some(s + 1)),
        1 => (BAIL[s], None),
        _ => (0.0, Some(s)),
    }
}

fn value_iteration() -> Vec<Vec<f64>> {
    let mut q = vec![vec![0.0; ACTIONS]; STATES];
    for _ in 0..500 {
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

fn one_hot(s: usize) -> StateVector {
    let mut v = vec![0.0; STATES];
    v[s] = 1.0;
    StateVector(v)
}

/// One episode per `(state, action)` pair: the pair itself, then advance to
/// the end.
fn exhaustive_dataset() -> ReplayDataset {
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
                    Some(n) => (s, a) = (n, 0),
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

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let q_star = value_iteration();
    let optimal: Vec<usize> = q_star.iter().map(|r| argmax(r)).collect();
    println!("value iteration greedy policy: {optimal:?}");

    let mut q = vec![vec![0.0; ACTIONS]; STATES];
    for _ in 0..200 {
        for s in 0..STATES {
            for a in 0..ACTIONS {
                let (r, next) = step(s, a);
                tabular_q_update(&mut q, s, a, r, next, GAMMA, 0.5);
            }
        }
    }
    let worst = q
        .iter()
        .flatten()
        .zip(q_star.iter().flatten())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("tabular Q-learning max deviation from value iteration: {worst:.2e}");

    let data = exhaustive_dataset();
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
    for seed in 0..5 {
        let outcome = train(&data, &TrainConfig { seed, ..cfg.clone() }, Algo::Ddqn)?;
        let policy = outcome.policy();
        let greedy: Vec<usize> = (0..STATES).map(|s| policy.act(one_hot(s).as_slice())).collect();
        println!(
            "DDQN seed {seed}: greedy policy {greedy:?} {}",
            if greedy == optimal { "(optimal)" } else { "(differs)" }
        );
    }
    Ok(())
}
