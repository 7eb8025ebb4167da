use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Matrix;
use crate::error::{check_dim, Error, Result};
use crate::scalar::{all_finite, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Regression loss applied to the network output.
#[derive(Debug, Clone, PartialEq)]
pub enum Loss<T> {
    /// Mean over samples and output coordinates of the squared error.
    Mse,
    /// Negative log-density of the target under `N(output, diag(sigma^2))`,
    /// averaged over samples.
    GaussianNll(Vec<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layer<T> {
    pub(crate) n_in: usize,
    pub(crate) n_out: usize,
    /// `weights[i * n_out + j]` connects input `i` to output `j`.
    pub(crate) weights: Vec<T>,
    pub(crate) bias: Vec<T>,
}

impl<T: Scalar> Layer<T> {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            weights: vec![T::zero(); n_in * n_out],
            bias: vec![T::zero(); n_out],
        }
    }

    #[inline]
    fn apply(&self, x: &[T], y: &mut [T]) {
        y.copy_from_slice(&self.bias);
        for (&xi, w) in x.iter().zip(self.weights.chunks_exact(self.n_out)) {
            for (yj, &wij) in y.iter_mut().zip(w) {
                *yj += xi * wij;
            }
        }
    }
}

/// Per-parameter gradients, shaped like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub(crate) layers: Vec<Layer<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Flattened in parameter order: layer by layer, weights before biases.
    pub fn flatten(&self) -> Vec<T> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| all_finite(&l.weights) && all_finite(&l.bias))
    }
}

#[derive(Debug, Clone, PartialEq)]
struct AdamState<T> {
    step: u64,
    m: Vec<Layer<T>>,
    v: Vec<Layer<T>>,
}

/// Layer activations saved by [`Mlp::forward_cached`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    /// `activations[0]` is the input batch, the last entry is the output.
    activations: Vec<Matrix<T>>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn output(&self) -> &Matrix<T> {
        self.activations.last().expect("cache holds at least the input")
    }
}

/// Multilayer perceptron with tanh hidden units and a linear output layer,
/// together with its Adam optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    sizes: Vec<usize>,
    pub(crate) layers: Vec<Layer<T>>,
    adam: AdamState<T>,
    pub adam_config: AdamConfig,
}

impl<T: Scalar> Mlp<T> {
    /// Fan-in scaled uniform initialization (variance `1 / fan_in`), zero biases.
    pub fn new(sizes: &[usize], seed: u64) -> Result<Self> {
        Self::with_output_scale(sizes, seed, 1.0)
    }

    /// Like [`Mlp::new`] with the final layer's weights multiplied by `output_scale`.
    pub fn with_output_scale(sizes: &[usize], seed: u64, output_scale: f64) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = net.layers.len() - 1;
        for (k, layer) in net.layers.iter_mut().enumerate() {
            let limit = (3.0 / layer.n_in as f64).sqrt();
            let scale = if k == last { output_scale } else { 1.0 };
            for w in layer.weights.iter_mut() {
                *w = T::lit(scale * rng.gen_range(-limit..limit));
            }
        }
        Ok(net)
    }

    /// A network with every weight and bias set to zero.
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::InvalidLayers(format!(
                "need at least an input and an output layer, got {sizes:?}"
            )));
        }
        if sizes.contains(&0) {
            return Err(Error::InvalidLayers(format!("zero-width layer in {sizes:?}")));
        }
        let layers: Vec<Layer<T>> = sizes.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect();
        Ok(Self {
            sizes: sizes.to_vec(),
            adam: AdamState {
                step: 0,
                m: layers.clone(),
                v: layers.clone(),
            },
            layers,
            adam_config: AdamConfig::default(),
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("validated at construction")
    }

    pub fn adam_steps(&self) -> u64 {
        self.adam.step
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// All parameters in order: layer by layer, weights before biases.
    pub fn params(&self) -> Vec<T> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    fn param_slot(&mut self, mut idx: usize) -> &mut T {
        for layer in self.layers.iter_mut() {
            if idx < layer.weights.len() {
                return &mut layer.weights[idx];
            }
            idx -= layer.weights.len();
            if idx < layer.bias.len() {
                return &mut layer.bias[idx];
            }
            idx -= layer.bias.len();
        }
        panic!("parameter index out of range");
    }

    pub fn param(&mut self, idx: usize) -> T {
        *self.param_slot(idx)
    }

    pub fn set_param(&mut self, idx: usize, value: T) {
        *self.param_slot(idx) = value;
    }

    /// Weight matrix (`n_in * n_out`, input-major) and bias of layer `k`.
    pub fn layer(&self, k: usize) -> (&[T], &[T]) {
        (&self.layers[k].weights, &self.layers[k].bias)
    }

    pub fn layer_mut(&mut self, k: usize) -> (&mut [T], &mut [T]) {
        let l = &mut self.layers[k];
        (&mut l.weights, &mut l.bias)
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| all_finite(&l.weights) && all_finite(&l.bias))
    }

    fn width(&self) -> usize {
        *self.sizes.iter().max().expect("non-empty")
    }

    /// Single-sample forward pass.
    pub fn forward(&self, input: &[T]) -> Result<Vec<T>> {
        check_dim(self.input_dim(), input.len(), "network input")?;
        let mut out = vec![T::zero(); self.output_dim()];
        let mut scratch = (vec![T::zero(); self.width()], vec![T::zero(); self.width()]);
        self.forward_row(input, &mut out, &mut scratch);
        Ok(out)
    }

    /// Row-wise forward pass; each row is computed exactly as [`Mlp::forward`] would.
    pub fn forward_batch(&self, inputs: &Matrix<T>) -> Result<Matrix<T>> {
        check_dim(self.input_dim(), inputs.cols(), "network input")?;
        let mut out = Matrix::zeros(inputs.rows(), self.output_dim());
        let mut scratch = (vec![T::zero(); self.width()], vec![T::zero(); self.width()]);
        for r in 0..inputs.rows() {
            self.forward_row(inputs.row(r), out.row_mut(r), &mut scratch);
        }
        Ok(out)
    }

    fn forward_row(&self, input: &[T], out: &mut [T], scratch: &mut (Vec<T>, Vec<T>)) {
        let last = self.layers.len() - 1;
        let (a, b) = scratch;
        a[..input.len()].copy_from_slice(input);
        let mut width = input.len();
        for (k, layer) in self.layers.iter().enumerate() {
            if k == last {
                layer.apply(&a[..width], out);
            } else {
                layer.apply(&a[..width], &mut b[..layer.n_out]);
                for v in b[..layer.n_out].iter_mut() {
                    *v = v.tanh();
                }
                std::mem::swap(a, b);
                width = layer.n_out;
            }
        }
    }

    /// Forward pass that keeps every layer's activations.
    pub fn forward_cached(&self, inputs: &Matrix<T>) -> Result<ForwardCache<T>> {
        check_dim(self.input_dim(), inputs.cols(), "network input")?;
        let last = self.layers.len() - 1;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(inputs.clone());
        for (k, layer) in self.layers.iter().enumerate() {
            let prev = activations.last().expect("non-empty");
            let mut next = Matrix::zeros(prev.rows(), layer.n_out);
            for r in 0..prev.rows() {
                let y = next.row_mut(r);
                layer.apply(prev.row(r), y);
                if k != last {
                    for v in y.iter_mut() {
                        *v = v.tanh();
                    }
                }
            }
            activations.push(next);
        }
        Ok(ForwardCache { activations })
    }

    /// Reverse-mode pass: given dL/d(output), returns parameter gradients and dL/d(input).
    pub fn backward(&self, cache: &ForwardCache<T>, grad_output: &Matrix<T>) -> Result<(Gradients<T>, Matrix<T>)> {
        check_dim(self.output_dim(), grad_output.cols(), "output gradient")?;
        check_dim(cache.output().rows(), grad_output.rows(), "output gradient rows")?;
        let mut grads: Vec<Layer<T>> = self.layers.iter().map(|l| Layer::zeros(l.n_in, l.n_out)).collect();
        let mut delta = grad_output.clone();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let a_in = &cache.activations[k];
            let g = &mut grads[k];
            let mut grad_in = Matrix::zeros(a_in.rows(), layer.n_in);
            for r in 0..a_in.rows() {
                let d = delta.row(r);
                let x = a_in.row(r);
                for (gb, &dj) in g.bias.iter_mut().zip(d) {
                    *gb += dj;
                }
                let gi = grad_in.row_mut(r);
                for (i, (gw, w)) in g
                    .weights
                    .chunks_exact_mut(layer.n_out)
                    .zip(layer.weights.chunks_exact(layer.n_out))
                    .enumerate()
                {
                    let xi = x[i];
                    let mut acc = T::zero();
                    for ((gwj, &wj), &dj) in gw.iter_mut().zip(w).zip(d) {
                        *gwj += xi * dj;
                        acc += wj * dj;
                    }
                    gi[i] = acc;
                }
                if k > 0 {
                    // through tanh: 1 - a^2
                    for (v, &a) in gi.iter_mut().zip(x) {
                        *v *= T::one() - a * a;
                    }
                }
            }
            delta = grad_in;
        }
        Ok((Gradients { layers: grads }, delta))
    }

    /// Loss value and dL/d(output) for a batch of outputs against targets.
    pub fn loss_gradient(outputs: &Matrix<T>, targets: &Matrix<T>, loss: &Loss<T>) -> Result<(T, Matrix<T>)> {
        check_dim(outputs.rows(), targets.rows(), "target rows")?;
        check_dim(outputs.cols(), targets.cols(), "target columns")?;
        if outputs.rows() == 0 {
            return Err(Error::Empty("batch"));
        }
        let n = T::lit(outputs.rows() as f64);
        let mut grad = Matrix::zeros(outputs.rows(), outputs.cols());
        let mut total = T::zero();
        match loss {
            Loss::Mse => {
                let denom = n * T::lit(outputs.cols() as f64);
                let two = T::lit(2.0);
                for r in 0..outputs.rows() {
                    for ((g, &y), &t) in grad.row_mut(r).iter_mut().zip(outputs.row(r)).zip(targets.row(r)) {
                        let e = y - t;
                        total += e * e;
                        *g = two * e / denom;
                    }
                }
                Ok((total / denom, grad))
            }
            Loss::GaussianNll(sigma) => {
                check_dim(outputs.cols(), sigma.len(), "sigma")?;
                if sigma.iter().any(|s| !(*s > T::zero())) {
                    return Err(Error::InvalidConfig("gaussian sigma must be > 0".into()));
                }
                let half = T::lit(0.5);
                let constant: T = sigma
                    .iter()
                    .map(|s| s.ln() + half * T::lit((2.0 * std::f64::consts::PI).ln()))
                    .sum();
                for r in 0..outputs.rows() {
                    for (((g, &y), &t), &s) in grad
                        .row_mut(r)
                        .iter_mut()
                        .zip(outputs.row(r))
                        .zip(targets.row(r))
                        .zip(sigma)
                    {
                        let e = y - t;
                        let var = s * s;
                        total += half * e * e / var;
                        *g = e / (var * n);
                    }
                }
                Ok((total / n + constant, grad))
            }
        }
    }

    /// Mean batch loss and its parameter gradients.
    pub fn loss_and_gradients(&self, inputs: &Matrix<T>, targets: &Matrix<T>, loss: &Loss<T>) -> Result<(T, Gradients<T>)> {
        let cache = self.forward_cached(inputs)?;
        let (value, grad_out) = Self::loss_gradient(cache.output(), targets, loss)?;
        let (grads, _) = self.backward(&cache, &grad_out)?;
        Ok((value, grads))
    }

    /// One Adam step on the mean batch loss. Non-finite losses or gradients
    /// leave the network untouched and return an error.
    pub fn train_step(&mut self, inputs: &Matrix<T>, targets: &Matrix<T>, loss: &Loss<T>, lr: T) -> Result<T> {
        if inputs.rows() == 0 {
            return Err(Error::Empty("batch"));
        }
        check_dim(self.output_dim(), targets.cols(), "target width")?;
        let (value, grads) = self.loss_and_gradients(inputs, targets, loss)?;
        if !value.is_finite() || !grads.is_finite() {
            return Err(Error::NonFiniteLoss);
        }
        self.apply_gradients(&grads, lr);
        Ok(value)
    }

    /// Adam update with bias correction.
    pub fn apply_gradients(&mut self, grads: &Gradients<T>, lr: T) {
        let cfg = self.adam_config;
        self.adam.step += 1;
        let t = self.adam.step as i32;
        let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
        let (one, eps) = (T::one(), T::lit(cfg.eps));
        let c1 = one - b1.powi(t);
        let c2 = one - b2.powi(t);
        let update = |p: &mut [T], g: &[T], m: &mut [T], v: &mut [T]| {
            for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        };
        for (k, layer) in self.layers.iter_mut().enumerate() {
            let g = &grads.layers[k];
            let (m, v) = (&mut self.adam.m[k], &mut self.adam.v[k]);
            update(&mut layer.weights, &g.weights, &mut m.weights, &mut v.weights);
            update(&mut layer.bias, &g.bias, &mut m.bias, &mut v.bias);
        }
    }

    /// `self <- tau * source + (1 - tau) * self` on parameters only.
    pub fn polyak_from(&mut self, source: &Mlp<T>, tau: T) -> Result<()> {
        if self.sizes != source.sizes {
            return Err(Error::InvalidLayers(format!(
                "polyak averaging between {:?} and {:?}",
                self.sizes, source.sizes
            )));
        }
        let keep = T::one() - tau;
        for (dst, src) in self.layers.iter_mut().zip(&source.layers) {
            for (d, &s) in dst.weights.iter_mut().zip(&src.weights).chain(dst.bias.iter_mut().zip(&src.bias)) {
                *d = tau * s + keep * *d;
            }
        }
        Ok(())
    }

    /// Copies parameters from `source`, leaving this network's optimizer state alone.
    pub fn copy_params_from(&mut self, source: &Mlp<T>) -> Result<()> {
        self.polyak_from(source, T::one())
    }

    pub(crate) fn from_layers(sizes: Vec<usize>, layers: Vec<Layer<T>>) -> Self {
        let zeros: Vec<Layer<T>> = layers.iter().map(|l| Layer::zeros(l.n_in, l.n_out)).collect();
        Self {
            sizes,
            adam: AdamState {
                step: 0,
                m: zeros.clone(),
                v: zeros,
            },
            layers,
            adam_config: AdamConfig::default(),
        }
    }
}
