//! Central finite differences against back-propagation.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ventrl::nn::{Activation, Mlp, NetworkSpec};

const STEP: f64 = 1e-5;
/// Entries where both gradients are smaller than this are compared on an
/// absolute scale, since finite-difference rounding noise dominates there.
const FLOOR: f64 = 1e-3;

fn weighted_output(net: &Mlp, x: &Array2<f64>, w: &Array2<f64>) -> f64 {
    (&net.forward(x.view()).unwrap() * w).sum()
}

/// Largest relative error between analytic and numeric gradients of
/// `Σ w ⊙ net(x)` over `n` random networks with at most 2 × 32 hidden units.
pub fn max_relative_error_over_random_nets(n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for k in 0..n {
        let depth = k % 3;
        let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(1..=32)).collect();
        let activation = if k % 2 == 0 { Activation::Relu } else { Activation::Sigmoid };
        let spec = NetworkSpec::new(
            rng.random_range(1..=8),
            hidden,
            activation,
            rng.random_range(1..=6),
        )
        .unwrap();
        let mut net = Mlp::new(spec.clone(), rng.random()).unwrap();
        // Non-zero biases so hidden units are not all active at once.
        for p in net.params_mut() {
            *p += rng.random_range(-0.3..0.3);
        }
        let batch = rng.random_range(1..=16);
        let x = Array2::from_shape_fn((batch, spec.input_dim), |_| rng.random_range(-2.0..2.0));
        let w = Array2::from_shape_fn((batch, spec.output_dim), |_| rng.random_range(-1.0..1.0));
        let cache = net.forward_cached(x.view()).unwrap();
        let analytic = net.backward(&cache, w.view()).unwrap();
        for i in 0..net.num_params() {
            let orig = net.params()[i];
            net.params_mut()[i] = orig + STEP;
            let up = weighted_output(&net, &x, &w);
            net.params_mut()[i] = orig - STEP;
            let down = weighted_output(&net, &x, &w);
            net.params_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let scale = analytic[i].abs().max(numeric.abs()).max(FLOOR);
            worst = worst.max((analytic[i] - numeric).abs() / scale);
        }
    }
    worst
}
