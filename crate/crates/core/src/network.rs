//! Feed-forward reliability network mapping a claim's feature vector to the
//! RBM triple `(a, w, b)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub const NETWORK_FORMAT_VERSION: u32 = 1;

/// Number of network outputs: visible bias, weight and hidden-bias share.
pub const OUTPUT_DIM: usize = 3;
const OUTPUT_GAIN: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply<T: Real>(self, z: T) -> T {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(T::zero()),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `y`.
    fn derivative<T: Real>(self, z: T, y: T) -> T {
        match self {
            Activation::Tanh => T::one() - y * y,
            Activation::Relu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::InvalidConfig(format!("unknown activation {other:?}"))),
        }
    }
}

/// Layer widths of the network. The output layer is always three linear units.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_layers: Vec<usize>,
    pub activation: Activation,
}

impl NetworkSpec {
    /// One tanh hidden layer of width 16.
    pub fn with_input(input_dim: usize) -> Self {
        NetworkSpec {
            input_dim,
            hidden_layers: vec![16],
            activation: Activation::Tanh,
        }
    }

    /// No hidden layers: the outputs are affine in the features.
    pub fn linear(input_dim: usize) -> Self {
        NetworkSpec {
            input_dim,
            hidden_layers: Vec::new(),
            activation: Activation::Tanh,
        }
    }

    pub fn output_dim(&self) -> usize {
        OUTPUT_DIM
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidConfig("network input dimension is zero".into()));
        }
        if self.hidden_layers.contains(&0) {
            return Err(Error::InvalidConfig("hidden layer of width zero".into()));
        }
        Ok(())
    }

    /// `(fan_out, fan_in)` of every layer, output layer last.
    pub fn shapes(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input_dim];
        widths.extend(&self.hidden_layers);
        widths.push(OUTPUT_DIM);
        widths.windows(2).map(|w| (w[1], w[0])).collect()
    }
}

/// Dense layer, `y = W x + bias` with `W` stored row-major (`rows` outputs,
/// `cols` inputs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct DenseLayer<T> {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> DenseLayer<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseLayer {
            rows,
            cols,
            weights: vec![T::zero(); rows * cols],
            bias: vec![T::zero(); rows],
        }
    }

    fn check(&self) -> Result<()> {
        if self.weights.len() != self.rows * self.cols || self.bias.len() != self.rows {
            return Err(Error::ModelFormat(format!(
                "layer {}x{} has {} weights and {} biases",
                self.rows,
                self.cols,
                self.weights.len(),
                self.bias.len()
            )));
        }
        Ok(())
    }

    fn affine(&self, x: &[T]) -> Vec<T> {
        self.weights
            .chunks_exact(self.cols)
            .zip(&self.bias)
            .map(|(row, &b)| row.iter().zip(x).fold(b, |acc, (&w, &xi)| acc + w * xi))
            .collect()
    }
}

/// The network output for one feature vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theta<T> {
    pub a: T,
    pub w: T,
    pub b: T,
}

impl<T: Real> Theta<T> {
    pub fn new(a: T, w: T, b: T) -> Self {
        Theta { a, w, b }
    }

    pub fn to_array(self) -> [T; 3] {
        [self.a, self.w, self.b]
    }

    fn from_slice(v: &[T]) -> Self {
        Theta {
            a: v[0],
            w: v[1],
            b: v[2],
        }
    }
}

/// Parameters of the reliability network, layer by layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T> {
    spec: NetworkSpec,
    layers: Vec<DenseLayer<T>>,
}

/// Intermediate values of one forward pass. `outputs[0]` is the input.
struct Trace<T> {
    pre: Vec<Vec<T>>,
    outputs: Vec<Vec<T>>,
}

impl<T: Real> NetworkParams<T> {
    pub fn zeros(spec: NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .shapes()
            .into_iter()
            .map(|(r, c)| DenseLayer::zeros(r, c))
            .collect();
        Ok(NetworkParams { spec, layers })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(spec: NetworkSpec, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(spec)?;
        let last = net.layers.len() - 1;
        for (i, layer) in net.layers.iter_mut().enumerate() {
            // Small output layer: the net starts close to a constant map.
            let gain = if i == last { OUTPUT_GAIN } else { 1.0 };
            let limit = gain * (6.0 / (layer.rows + layer.cols) as f64).sqrt();
            for w in &mut layer.weights {
                *w = T::lit(rng.random_range(-limit..limit));
            }
        }
        Ok(net)
    }

    pub fn from_layers(spec: NetworkSpec, layers: Vec<DenseLayer<T>>) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.shapes();
        if shapes.len() != layers.len() {
            return Err(Error::ModelFormat(format!(
                "spec has {} layers, got {}",
                shapes.len(),
                layers.len()
            )));
        }
        for (layer, (r, c)) in layers.iter().zip(shapes) {
            layer.check()?;
            if (layer.rows, layer.cols) != (r, c) {
                return Err(Error::ModelFormat(format!(
                    "layer is {}x{}, spec expects {r}x{c}",
                    layer.rows, layer.cols
                )));
            }
        }
        Ok(NetworkParams { spec, layers })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[DenseLayer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer<T>] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Every weight then bias, layer by layer.
    pub fn flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat(&mut self, values: &[T]) -> Result<()> {
        if values.len() != self.n_params() {
            return Err(Error::Dimension {
                expected: self.n_params(),
                actual: values.len(),
            });
        }
        let mut it = values.iter().copied();
        for l in &mut self.layers {
            for x in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *x = it.next().unwrap_or_else(T::zero);
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|x| x.is_finite()))
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.spec.input_dim {
            return Err(Error::Dimension {
                expected: self.spec.input_dim,
                actual: x.len(),
            });
        }
        Ok(())
    }

    fn trace(&self, x: &[T]) -> Trace<T> {
        let last = self.layers.len() - 1;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len() + 1);
        outputs.push(x.to_vec());
        for (k, layer) in self.layers.iter().enumerate() {
            let z = layer.affine(&outputs[k]);
            let y = if k == last {
                z.clone()
            } else {
                z.iter().map(|&v| self.spec.activation.apply(v)).collect()
            };
            pre.push(z);
            outputs.push(y);
        }
        Trace { pre, outputs }
    }

    /// `g(x)`: the triple `(g_a, g_w, g_b)`.
    pub fn forward(&self, x: &[T]) -> Result<Theta<T>> {
        self.check_input(x)?;
        let t = self.trace(x);
        Ok(Theta::from_slice(&t.outputs[self.layers.len()]))
    }

    /// Parameter gradient of `up_a * g_a + up_w * g_w + up_b * g_b` at `x`.
    pub fn backward(&self, x: &[T], upstream: [T; 3]) -> Result<NetworkGrad<T>> {
        let mut grad = NetworkGrad::zeros_like(self);
        self.accumulate_backward(x, upstream, &mut grad)?;
        Ok(grad)
    }

    /// Adds the gradient for `x` into `grad`; callers sum over the claims of
    /// a statement this way.
    pub fn accumulate_backward(&self, x: &[T], upstream: [T; 3], grad: &mut NetworkGrad<T>) -> Result<()> {
        self.check_input(x)?;
        let t = self.trace(x);
        let mut delta = upstream.to_vec();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let input = &t.outputs[k];
            let g = &mut grad.layers[k];
            for (r, &d) in delta.iter().enumerate() {
                g.bias[r] += d;
                let row = &mut g.weights[r * layer.cols..(r + 1) * layer.cols];
                for (gw, &xi) in row.iter_mut().zip(input) {
                    *gw += d * xi;
                }
            }
            if k == 0 {
                break;
            }
            let mut next = vec![T::zero(); layer.cols];
            for (r, &d) in delta.iter().enumerate() {
                let row = &layer.weights[r * layer.cols..(r + 1) * layer.cols];
                for (n, &w) in next.iter_mut().zip(row) {
                    *n += w * d;
                }
            }
            let (z, y) = (&t.pre[k - 1], &t.outputs[k]);
            for ((n, &zi), &yi) in next.iter_mut().zip(z).zip(y) {
                *n *= self.spec.activation.derivative(zi, yi);
            }
            delta = next;
        }
        Ok(())
    }

    /// `psi += step * grad`.
    pub fn apply(&mut self, grad: &NetworkGrad<T>, step: T) {
        for (l, g) in self.layers.iter_mut().zip(&grad.layers) {
            for (p, &d) in l.weights.iter_mut().zip(&g.weights) {
                *p += step * d;
            }
            for (p, &d) in l.bias.iter_mut().zip(&g.bias) {
                *p += step * d;
            }
        }
    }

    /// Shrinks weights (not biases) by `1 - rate`.
    pub fn decay_weights(&mut self, rate: T) {
        if rate == T::zero() {
            return;
        }
        let keep = T::one() - rate;
        for l in &mut self.layers {
            for w in &mut l.weights {
                *w *= keep;
            }
        }
    }

    pub fn to_document(&self) -> NetworkDocument<T> {
        NetworkDocument {
            format_version: NETWORK_FORMAT_VERSION,
            spec: self.spec.clone(),
            layers: self.layers.clone(),
        }
    }

    pub fn from_document(doc: NetworkDocument<T>) -> Result<Self> {
        if doc.format_version != NETWORK_FORMAT_VERSION {
            return Err(Error::ModelFormat(format!(
                "unsupported network format version {}",
                doc.format_version
            )));
        }
        Self::from_layers(doc.spec, doc.layers)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_document(serde_json::from_str(text)?)
    }
}

/// Serialized form of a network: version, spec and row-major layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct NetworkDocument<T> {
    pub format_version: u32,
    pub spec: NetworkSpec,
    pub layers: Vec<DenseLayer<T>>,
}

/// Gradient with the same layout as [`NetworkParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGrad<T> {
    layers: Vec<DenseLayer<T>>,
}

impl<T: Real> NetworkGrad<T> {
    pub fn zeros_like(net: &NetworkParams<T>) -> Self {
        NetworkGrad {
            layers: net
                .layers
                .iter()
                .map(|l| DenseLayer::zeros(l.rows, l.cols))
                .collect(),
        }
    }

    pub fn layers(&self) -> &[DenseLayer<T>] {
        &self.layers
    }

    pub fn flat(&self) -> Vec<T> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn norm(&self) -> T {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias))
            .map(|&x| x * x)
            .sum::<T>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: T) {
        for l in &mut self.layers {
            for x in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *x *= factor;
            }
        }
    }

    /// Rescales to at most `max_norm`, keeping the direction.
    pub fn clip_norm(&mut self, max_norm: T) {
        let n = self.norm();
        if n > max_norm {
            self.scale(max_norm / n);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|x| x.is_finite()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainReport {
    pub initial_mse: f64,
    pub final_mse: f64,
    pub mean_abs_error: f64,
    pub epochs: usize,
}

fn fit_stats<T: Real>(net: &NetworkParams<T>, samples: &[(Vec<T>, Theta<T>)]) -> Result<(f64, f64)> {
    let mut sq = 0.0;
    let mut abs = 0.0;
    for (x, target) in samples {
        let out = net.forward(x)?;
        for (o, t) in out.to_array().into_iter().zip(target.to_array()) {
            let e = (o - t).as_f64();
            sq += e * e;
            abs += e.abs();
        }
    }
    let n = (samples.len() * OUTPUT_DIM) as f64;
    Ok((sq / n, abs / n))
}

/// Supervised fit of the network to target triples by full-batch gradient
/// descent on the mean squared error.
pub fn pretrain<T: Real>(
    mut net: NetworkParams<T>,
    samples: &[(Vec<T>, Theta<T>)],
    epochs: usize,
    learning_rate: T,
    weight_decay: T,
) -> Result<(NetworkParams<T>, PretrainReport)> {
    if samples.is_empty() {
        return Err(Error::Empty("pretraining needs at least one sample".into()));
    }
    let (initial_mse, _) = fit_stats(&net, samples)?;
    // Start the output bias at the mean target so descent only has to
    // remove the feature-dependent part.
    let mut mean = [0.0; OUTPUT_DIM];
    for (x, target) in samples {
        let out = net.forward(x)?.to_array();
        for (m, (t, o)) in mean.iter_mut().zip(target.to_array().into_iter().zip(out)) {
            *m += (t - o).as_f64() / samples.len() as f64;
        }
    }
    if epochs > 0 {
        let out = net.layers.last_mut().expect("at least one layer");
        for (b, m) in out.bias.iter_mut().zip(mean) {
            *b += T::lit(m);
        }
    }
    let inv_n = T::one() / T::lit(samples.len() as f64);
    for epoch in 0..epochs {
        let mut grad = NetworkGrad::zeros_like(&net);
        for (x, target) in samples {
            let out = net.forward(x)?;
            // Descent direction of 0.5 * |g(x) - target|^2.
            let up = [target.a - out.a, target.w - out.w, target.b - out.b];
            net.accumulate_backward(x, up, &mut grad)?;
        }
        net.decay_weights(learning_rate * weight_decay);
        net.apply(&grad, learning_rate * inv_n);
        if !net.is_finite() {
            return Err(Error::NonFinite {
                epoch,
                statement: "pretraining".into(),
                detail: "network weights diverged; lower the pretraining learning rate".into(),
            });
        }
    }
    let (final_mse, mean_abs_error) = fit_stats(&net, samples)?;
    Ok((
        net,
        PretrainReport {
            initial_mse,
            final_mse,
            mean_abs_error,
            epochs,
        },
    ))
}
