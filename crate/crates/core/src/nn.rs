//! Dense feed-forward networks with analytic gradients.
//!
//! Parameters live in one flat `Vec<f64>`; for every layer the weight matrix
//! (`fan_in × fan_out`, row-major) is followed by its bias vector. Batches are
//! row-major `batch × features` matrices.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub output_dim: usize,
}

impl NetworkSpec {
    pub fn new(
        input_dim: usize,
        hidden: Vec<usize>,
        activation: Activation,
        output_dim: usize,
    ) -> Result<Self> {
        let spec = NetworkSpec {
            input_dim,
            hidden,
            activation,
            output_dim,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::Shape(format!("all layer widths must be >= 1: {self:?}")));
        }
        if self.hidden.len() > 3 {
            return Err(Error::Shape(format!(
                "at most 3 hidden layers are supported, got {}",
                self.hidden.len()
            )));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` per layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut widths = Vec::with_capacity(self.hidden.len() + 2);
        widths.push(self.input_dim);
        widths.extend(&self.hidden);
        widths.push(self.output_dim);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// `Σ (fan_in + 1) · fan_out`.
    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| (i + 1) * o).sum()
    }
}

/// Activations recorded by a forward pass, consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer; `inputs[0]` is the batch itself.
    inputs: Vec<Array2<f64>>,
    output: Array2<f64>,
    version: u64,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    pub fn batch_size(&self) -> usize {
        self.output.nrows()
    }
}

/// A fully-connected network. Q-networks, policy networks and FQE value
/// networks are all instances of this type.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: NetworkSpec,
    params: Vec<f64>,
    /// Incremented on every parameter mutation; forward caches remember it.
    version: u64,
}

pub type QNetwork = Mlp;

impl Mlp {
    /// Uniform `±sqrt(6 / (fan_in + fan_out))` weights, zero biases.
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(spec.param_count());
        for (fan_in, fan_out) in spec.layer_dims() {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            params.extend((0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Ok(Mlp {
            spec,
            params,
            version: 0,
        })
    }

    pub fn zeros(spec: NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let n = spec.param_count();
        Ok(Mlp {
            spec,
            params: vec![0.0; n],
            version: 0,
        })
    }

    pub fn from_params(spec: NetworkSpec, params: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if params.len() != spec.param_count() {
            return Err(Error::Shape(format!(
                "spec needs {} parameters, got {}",
                spec.param_count(),
                params.len()
            )));
        }
        Ok(Mlp {
            spec,
            params,
            version: 0,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Overwrite all parameters.
    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        self.params.copy_from_slice(params);
        self.version += 1;
        Ok(())
    }

    /// Mutable access to the flat parameter vector; invalidates forward caches.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.version += 1;
        &mut self.params
    }

    fn layer_views(&self) -> Vec<(ArrayView2<'_, f64>, ArrayView1<'_, f64>)> {
        let mut offset = 0;
        self.spec
            .layer_dims()
            .into_iter()
            .map(|(fin, fout)| {
                let w = ArrayView2::from_shape((fin, fout), &self.params[offset..offset + fin * fout])
                    .expect("layer shape");
                offset += fin * fout;
                let b = ArrayView1::from(&self.params[offset..offset + fout]);
                offset += fout;
                (w, b)
            })
            .collect()
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.spec.input_dim {
            return Err(Error::Shape(format!(
                "network expects {} inputs, batch has {} columns",
                self.spec.input_dim,
                x.ncols()
            )));
        }
        Ok(())
    }

    fn activate(&self, z: &mut Array2<f64>) {
        match self.spec.activation {
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Activation::Sigmoid => z.mapv_inplace(|v| 1.0 / (1.0 + (-v).exp())),
        }
    }

    fn run(&self, x: ArrayView2<f64>, keep: bool) -> (Vec<Array2<f64>>, Array2<f64>) {
        let layers = self.layer_views();
        let n_layers = layers.len();
        let mut inputs = Vec::with_capacity(if keep { n_layers } else { 0 });
        let mut current = x.to_owned();
        for (l, (w, b)) in layers.iter().enumerate() {
            let mut z = Array2::from_shape_fn((current.nrows(), w.ncols()), |(_, j)| b[j]);
            general_mat_mul(1.0, &current, w, 1.0, &mut z);
            if l + 1 < n_layers {
                self.activate(&mut z);
            }
            let prev = std::mem::replace(&mut current, z);
            if keep {
                inputs.push(prev);
            }
        }
        (inputs, current)
    }

    /// Batch forward pass: affine layers with activations between them and a
    /// linear output layer.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        Ok(self.run(x, false).1)
    }

    /// Forward pass that records what [`Mlp::backward`] needs.
    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<ForwardCache> {
        self.check_input(&x)?;
        let (inputs, output) = self.run(x, true);
        Ok(ForwardCache {
            inputs,
            output,
            version: self.version,
        })
    }

    /// Single-sample forward pass.
    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row shape");
        Ok(self.forward(view)?.into_raw_vec_and_offset().0)
    }

    /// Gradient of a scalar loss with respect to the flat parameters, given
    /// the loss gradient at the network outputs.
    pub fn backward(&self, cache: &ForwardCache, d_output: ArrayView2<f64>) -> Result<Vec<f64>> {
        if cache.version != self.version || cache.inputs.len() != self.spec.layer_dims().len() {
            return Err(Error::State(
                "forward cache is stale: parameters changed since it was recorded".into(),
            ));
        }
        if d_output.dim() != cache.output.dim() {
            return Err(Error::Shape(format!(
                "output gradient {:?} does not match output {:?}",
                d_output.dim(),
                cache.output.dim()
            )));
        }
        let layers = self.layer_views();
        let mut grad = vec![0.0; self.params.len()];
        let mut offsets = Vec::with_capacity(layers.len());
        let mut offset = 0;
        for (w, _) in &layers {
            offsets.push(offset);
            offset += w.len() + w.ncols();
        }
        let mut delta = d_output.to_owned();
        for l in (0..layers.len()).rev() {
            let (w, _) = &layers[l];
            let (fin, fout) = w.dim();
            let input = &cache.inputs[l];
            let o = offsets[l];
            {
                let (gw, rest) = grad[o..o + fin * fout + fout].split_at_mut(fin * fout);
                let mut gw = ArrayViewMut2::from_shape((fin, fout), gw).expect("grad shape");
                general_mat_mul(1.0, &input.t(), &delta, 0.0, &mut gw);
                for (g, col) in rest.iter_mut().zip(delta.axis_iter(Axis(1))) {
                    *g = col.sum();
                }
            }
            if l > 0 {
                let mut next = Array2::zeros((delta.nrows(), fin));
                general_mat_mul(1.0, &delta, &w.t(), 0.0, &mut next);
                match self.spec.activation {
                    Activation::Relu => {
                        next.zip_mut_with(input, |d, &a| {
                            if a <= 0.0 {
                                *d = 0.0
                            }
                        });
                    }
                    Activation::Sigmoid => {
                        next.zip_mut_with(input, |d, &a| *d *= a * (1.0 - a));
                    }
                }
                delta = next;
            }
        }
        Ok(grad)
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Row-wise [`argmax`].
pub fn argmax_rows(values: &Array2<f64>) -> Vec<usize> {
    values
        .rows()
        .into_iter()
        .map(|r| argmax(r.as_slice().expect("standard layout")))
        .collect()
}

/// Copy the online parameters into the target network.
pub fn sync_target(online: &Mlp, target: &mut Mlp) -> Result<()> {
    if online.spec != target.spec {
        return Err(Error::Shape(
            "target network spec differs from online network".into(),
        ));
    }
    target.set_params(&online.params)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// First-order optimizer over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::Param(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        Ok(Optimizer {
            kind,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        })
    }

    pub fn sgd(learning_rate: f64) -> Result<Self> {
        Self::new(OptimizerKind::Sgd, learning_rate)
    }

    pub fn adam(learning_rate: f64) -> Result<Self> {
        Self::new(OptimizerKind::Adam, learning_rate)
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, net: &mut Mlp, grad: &[f64]) -> Result<()> {
        if grad.len() != net.num_params() {
            return Err(Error::Shape(format!(
                "gradient has {} entries, network has {} parameters",
                grad.len(),
                net.num_params()
            )));
        }
        if let Some((i, g)) = grad.iter().enumerate().find(|(_, g)| !g.is_finite()) {
            return Err(Error::Numeric(format!(
                "gradient entry {i} of {} is {g} (optimizer step {})",
                grad.len(),
                self.t
            )));
        }
        self.t += 1;
        let lr = self.learning_rate;
        let params = net.params_mut();
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Adam => {
                if self.m.len() != grad.len() {
                    self.m = vec![0.0; grad.len()];
                    self.v = vec![0.0; grad.len()];
                }
                let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
                let c1 = 1.0 - b1.powi(self.t as i32);
                let c2 = 1.0 - b2.powi(self.t as i32);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(grad)
                    .zip(self.m.iter_mut())
                    .zip(self.v.iter_mut())
                {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 8] = b"VENTNN01";

/// Write `magic | u32 spec-json length | spec json | u64 count | f64 params`.
pub fn save_checkpoint(net: &Mlp, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let header = serde_json::to_vec(&net.spec)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(CHECKPOINT_MAGIC).map_err(io)?;
    w.write_u32::<LittleEndian>(header.len() as u32).map_err(io)?;
    w.write_all(&header).map_err(io)?;
    w.write_u64::<LittleEndian>(net.params.len() as u64).map_err(io)?;
    for &p in &net.params {
        w.write_f64::<LittleEndian>(p).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Mlp> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let io = |e| Error::io(path, e);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Version {
            found: String::from_utf8_lossy(&magic).into_owned(),
            expected: String::from_utf8_lossy(CHECKPOINT_MAGIC).into_owned(),
        });
    }
    let len = r.read_u32::<LittleEndian>().map_err(io)? as usize;
    let mut header = vec![0u8; len];
    r.read_exact(&mut header).map_err(io)?;
    let spec: NetworkSpec = serde_json::from_slice(&header)?;
    let count = r.read_u64::<LittleEndian>().map_err(io)? as usize;
    if count != spec.param_count() {
        return Err(Error::Shape(format!(
            "checkpoint holds {count} parameters, its spec needs {}",
            spec.param_count()
        )));
    }
    let mut params = vec![0.0; count];
    r.read_f64_into::<LittleEndian>(&mut params).map_err(io)?;
    Mlp::from_params(spec, params)
}

/// Load a checkpoint and require its spec to equal `expected`.
pub fn restore_checkpoint(path: impl AsRef<Path>, expected: &NetworkSpec) -> Result<Mlp> {
    let net = load_checkpoint(path)?;
    if net.spec() != expected {
        return Err(Error::Shape(format!(
            "checkpoint spec {:?} differs from expected {:?}",
            net.spec(),
            expected
        )));
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn spec(input: usize, hidden: Vec<usize>, out: usize) -> NetworkSpec {
        NetworkSpec::new(input, hidden, Activation::Relu, out).unwrap()
    }

    #[test]
    fn param_count_formula() {
        let s = spec(37, vec![256, 256], 343);
        assert_eq!(s.param_count(), 38 * 256 + 257 * 256 + 257 * 343);
        assert_eq!(Mlp::new(s.clone(), 0).unwrap().num_params(), s.param_count());
        assert!(NetworkSpec::new(3, vec![4, 4, 4, 4], Activation::Relu, 2).is_err());
        assert!(NetworkSpec::new(0, vec![4], Activation::Relu, 2).is_err());
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(spec(3, vec![5], 4)).unwrap();
        let out = net.forward(array![[1.0, -2.0, 3.0]].view()).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_layer_selects_weight_column() {
        // 0 hidden layers: out = x·W + b
        let s = spec(3, vec![], 2);
        let params = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 0.0, 0.0];
        let net = Mlp::from_params(s, params).unwrap();
        let out = net.forward(array![[0.0, 1.0, 0.0]].view()).unwrap();
        assert_eq!(out, array![[3.0, 4.0]]);
    }

    #[test]
    fn duplicated_rows_give_identical_outputs() {
        let net = Mlp::new(spec(4, vec![8, 8], 3), 9).unwrap();
        let x = array![[0.1, -0.2, 0.3, 0.9], [0.1, -0.2, 0.3, 0.9]];
        let out = net.forward(x.view()).unwrap();
        assert_eq!(out.row(0), out.row(1));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let net = Mlp::new(spec(4, vec![8], 3), 9).unwrap();
        assert!(matches!(
            net.forward(array![[1.0, 2.0]].view()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn scalar_chain_rule() {
        // f(x) = w·x, loss = f → dL/dw = x, dL/db = 1
        let net = Mlp::from_params(spec(1, vec![], 1), vec![0.7, 0.0]).unwrap();
        let x = array![[2.5]];
        let cache = net.forward_cached(x.view()).unwrap();
        let g = net.backward(&cache, array![[1.0]].view()).unwrap();
        assert_eq!(g, vec![2.5, 1.0]);
    }

    #[test]
    fn zero_output_gradient_gives_zero_gradient() {
        let net = Mlp::new(spec(3, vec![6, 6], 2), 1).unwrap();
        let x = array![[0.3, 0.2, -0.1]];
        let cache = net.forward_cached(x.view()).unwrap();
        let g = net.backward(&cache, Array2::zeros((1, 2)).view()).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut net = Mlp::new(spec(3, vec![6], 2), 1).unwrap();
        let x = array![[0.3, 0.2, -0.1]];
        let cache = net.forward_cached(x.view()).unwrap();
        let mut opt = Optimizer::sgd(0.1).unwrap();
        let g = net.backward(&cache, array![[1.0, 0.0]].view()).unwrap();
        opt.step(&mut net, &g).unwrap();
        assert!(matches!(
            net.backward(&cache, array![[1.0, 0.0]].view()),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn sgd_definition() {
        let mut net = Mlp::from_params(spec(1, vec![], 1), vec![1.0, 0.0]).unwrap();
        let mut opt = Optimizer::sgd(0.1).unwrap();
        opt.step(&mut net, &[2.0, 0.0]).unwrap();
        assert!((net.params()[0] - 0.8).abs() < 1e-15);
        assert_eq!(net.params()[1], 0.0);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        for c in [1e-3, 0.5, 7.0] {
            let mut net = Mlp::from_params(spec(1, vec![], 1), vec![1.0, 0.0]).unwrap();
            let mut opt = Optimizer::adam(0.01).unwrap();
            opt.step(&mut net, &[c, 0.0]).unwrap();
            let moved = 1.0 - net.params()[0];
            // update = η · c / (c + ε)
            assert!((moved - 0.01 * c / (c + 1e-8)).abs() < 1e-15);
            assert!((moved - 0.01).abs() < 1e-7);
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        for mut opt in [Optimizer::sgd(0.1).unwrap(), Optimizer::adam(0.1).unwrap()] {
            let mut net = Mlp::new(spec(2, vec![3], 2), 5).unwrap();
            let before = net.params().to_vec();
            let zeros = vec![0.0; net.num_params()];
            opt.step(&mut net, &zeros).unwrap();
            assert_eq!(net.params(), &before[..]);
        }
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut net = Mlp::new(spec(2, vec![3], 2), 5).unwrap();
        let mut g = vec![0.0; net.num_params()];
        g[4] = f64::NAN;
        let err = Optimizer::adam(0.1).unwrap().step(&mut net, &g).unwrap_err();
        assert!(matches!(err, Error::Numeric(ref m) if m.contains("entry 4")));
        assert!(Optimizer::sgd(0.0).is_err());
    }

    #[test]
    fn target_sync() {
        let mut online = Mlp::new(spec(3, vec![4], 2), 1).unwrap();
        let mut target = Mlp::new(spec(3, vec![4], 2), 2).unwrap();
        sync_target(&online, &mut target).unwrap();
        let s = [0.2, -0.4, 1.0];
        assert_eq!(online.forward_one(&s).unwrap(), target.forward_one(&s).unwrap());
        sync_target(&online, &mut target).unwrap();
        assert_eq!(online.params(), target.params());

        let before = target.forward_one(&s).unwrap();
        let mut opt = Optimizer::sgd(0.5).unwrap();
        let g = vec![1.0; online.num_params()];
        opt.step(&mut online, &g).unwrap();
        assert_eq!(target.forward_one(&s).unwrap(), before);

        let mut other = Mlp::new(spec(3, vec![5], 2), 1).unwrap();
        assert!(sync_target(&online, &mut other).is_err());
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[0.0; 5]), 0);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let net = Mlp::new(NetworkSpec::new(5, vec![7, 3], Activation::Sigmoid, 4).unwrap(), 3)
            .unwrap();
        save_checkpoint(&net, &path).unwrap();
        let back = restore_checkpoint(&path, net.spec()).unwrap();
        assert_eq!(back.params(), net.params());
        let other = spec(5, vec![7, 3], 4);
        assert!(matches!(restore_checkpoint(&path, &other), Err(Error::Shape(_))));
    }
}
