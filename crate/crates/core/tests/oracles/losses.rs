//! CQL at α = 0 against plain double DQN.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ventrl::algorithms::{cql_loss, ddqn_loss, Batch, CqlRegularizer};
use ventrl::dataset::Transition;
use ventrl::mdp::{Action, StateVector, N_ACTIONS};
use ventrl::nn::{Activation, Mlp, NetworkSpec};

/// Number of random batches on which the α = 0 CQL loss or its gradient
/// differs in any bit from the DDQN loss.
pub fn cql_alpha_zero_mismatches(n: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce_0004);
    let mut mismatches = 0;
    for k in 0..n {
        let dim = rng.random_range(1..=10);
        let spec = NetworkSpec::new(dim, vec![16], Activation::Relu, N_ACTIONS).unwrap();
        let online = Mlp::new(spec.clone(), 2 * k as u64).unwrap();
        let target = Mlp::new(spec, 2 * k as u64 + 1).unwrap();
        let ts: Vec<Transition> = (0..rng.random_range(1..=32))
            .map(|_| {
                let terminal = rng.random_bool(0.2);
                let state = |rng: &mut ChaCha8Rng| {
                    StateVector((0..dim).map(|_| rng.random_range(-3.0..3.0)).collect())
                };
                Transition {
                    state: state(&mut rng),
                    action: Action::from_flat(rng.random_range(0..N_ACTIONS)).unwrap(),
                    reward: rng.random_range(-1.0..1.0),
                    next_state: (!terminal).then(|| state(&mut rng)),
                    terminal,
                    episode: 0,
                    step_index: 0,
                }
            })
            .collect();
        let refs: Vec<&Transition> = ts.iter().collect();
        let batch = Batch::from_transitions(&refs).unwrap();
        let gamma = rng.random_range(0.0..0.999);
        let mode = if k % 2 == 0 { CqlRegularizer::Logsumexp } else { CqlRegularizer::UniformMean };
        let d = ddqn_loss(&batch, &online, &target, gamma).unwrap();
        let c = cql_loss(&batch, &online, &target, gamma, 0.0, mode).unwrap();
        let same_loss = d.loss.to_bits() == c.loss.to_bits();
        let same_grad = d
            .param_grad(&online)
            .unwrap()
            .iter()
            .zip(c.param_grad(&online).unwrap())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        if !(same_loss && same_grad) {
            mismatches += 1;
        }
    }
    mismatches
}
