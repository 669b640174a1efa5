//! Compare analytic back-propagation against central finite differences on
//! random networks and batches.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ventrl::nn::{Activation, Mlp, NetworkSpec};

/// Loss `Σ w ⊙ f(x)` for a fixed random weighting `w`.
fn loss(net: &Mlp, x: &Array2<f64>, w: &Array2<f64>) -> f64 {
    (&net.forward(x.view()).unwrap() * w).sum()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for trial in 0..5 {
        let depth = rng.random_range(0..=2);
        let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(1..=32)).collect();
        let activation = if rng.random() { Activation::Relu } else { Activation::Sigmoid };
        let spec = NetworkSpec::new(rng.random_range(1..=6), hidden, activation, rng.random_range(1..=5))?;
        let mut net = Mlp::new(spec.clone(), trial)?;
        let batch = rng.random_range(1..=8);
        let x = Array2::from_shape_fn((batch, spec.input_dim), |_| rng.random_range(-2.0..2.0));
        let w = Array2::from_shape_fn((batch, spec.output_dim), |_| rng.random_range(-1.0..1.0));

        let cache = net.forward_cached(x.view())?;
        let analytic = net.backward(&cache, w.view())?;
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for i in 0..net.num_params() {
            let orig = net.params()[i];
            net.params_mut()[i] = orig + h;
            let up = loss(&net, &x, &w);
            net.params_mut()[i] = orig - h;
            let down = loss(&net, &x, &w);
            net.params_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
        println!(
            "{:?} {:?}, {} params: max relative error {worst:.2e}",
            spec.hidden,
            spec.activation,
            net.num_params()
        );
    }
    Ok(())
}
