//! Dense feed-forward networks trained by backpropagation and AdaDelta.
//!
//! Weights of a layer with `n` inputs and width `m` are stored row-major as
//! an `n x m` matrix, so `y[j] = b[j] + sum_i x[i] * w[i * m + j]`.
//! Dropout is inverted: surviving units are scaled by `1 / (1 - rate)` in
//! training mode and evaluation mode is the identity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{check_dim, Error, Result};

pub const NETWORK_FORMAT: &str = "pedyn-network/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Relu,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Linear => z,
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: Activation,
    /// Applied to this layer's output in training mode only.
    #[serde(default)]
    pub dropout_rate: f64,
}

impl LayerSpec {
    pub fn new(width: usize, activation: Activation) -> Self {
        LayerSpec {
            width,
            activation,
            dropout_rate: 0.0,
        }
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout_rate = rate;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.width == 0 {
            return Err(Error::invalid("layer width must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaDeltaParams {
    pub rho: f64,
    pub epsilon: f64,
}

impl Default for AdaDeltaParams {
    fn default() -> Self {
        AdaDeltaParams {
            rho: 0.95,
            epsilon: 1e-6,
        }
    }
}

impl AdaDeltaParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::invalid(format!("rho {} outside (0, 1)", self.rho)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("epsilon must be positive"));
        }
        Ok(())
    }
}

/// Running averages kept by AdaDelta for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaDeltaState {
    pub avg_sq_grad: Vec<f64>,
    pub avg_sq_delta: Vec<f64>,
}

impl AdaDeltaState {
    fn zeros(n: usize) -> Self {
        AdaDeltaState {
            avg_sq_grad: vec![0.0; n],
            avg_sq_delta: vec![0.0; n],
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], hp: &AdaDeltaParams) {
        let rho = hp.rho;
        let eps = hp.epsilon;
        for (((p, &g), eg), ed) in params
            .iter_mut()
            .zip(grads)
            .zip(self.avg_sq_grad.iter_mut())
            .zip(self.avg_sq_delta.iter_mut())
        {
            *eg = rho * *eg + (1.0 - rho) * g * g;
            let delta = -((*ed + eps).sqrt() / (*eg + eps).sqrt()) * g;
            *ed = rho * *ed + (1.0 - rho) * delta * delta;
            *p += delta;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Dense {
    spec: LayerSpec,
    inputs: usize,
    weights: Vec<f64>,
    biases: Vec<f64>,
    weight_opt: AdaDeltaState,
    bias_opt: AdaDeltaState,
}

/// Per-parameter gradients, laid out exactly like the network parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros_like(net: &Network) -> Self {
        Gradients {
            weights: net
                .layers
                .iter()
                .map(|l| vec![0.0; l.weights.len()])
                .collect(),
            biases: net
                .layers
                .iter()
                .map(|l| vec![0.0; l.biases.len()])
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.weights
            .iter()
            .chain(&self.biases)
            .flat_map(|v| v.iter())
            .fold(0.0f64, |m, g| m.max(g.abs()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "NetworkDoc", try_from = "NetworkDoc")]
pub struct Network {
    input_dim: usize,
    layers: Vec<Dense>,
}

/// Intermediate values of one forward pass, reused across a batch.
struct Trace {
    pre: Vec<Vec<f64>>,
    act: Vec<Vec<f64>>,
    out: Vec<Vec<f64>>,
    // 0 or 1/(1-rate) per unit; empty when dropout is inactive
    mask: Vec<Vec<f64>>,
}

impl Trace {
    fn new(net: &Network) -> Self {
        let widths = || net.layers.iter().map(|l| vec![0.0; l.spec.width]);
        Trace {
            pre: widths().collect(),
            act: widths().collect(),
            out: widths().collect(),
            mask: net.layers.iter().map(|_| Vec::new()).collect(),
        }
    }
}

impl Network {
    /// Glorot-uniform weights, zero biases, zero optimizer state.
    pub fn new(specs: &[LayerSpec], input_dim: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::with_rng(specs, input_dim, &mut rng)
    }

    pub fn with_rng<R: Rng + ?Sized>(
        specs: &[LayerSpec],
        input_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::invalid("input dimension must be positive"));
        }
        if specs.is_empty() {
            return Err(Error::Empty("layer specs"));
        }
        let mut layers = Vec::with_capacity(specs.len());
        let mut fan_in = input_dim;
        for spec in specs {
            spec.validate()?;
            let fan_out = spec.width;
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weights = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-limit..=limit))
                .collect();
            layers.push(Dense {
                spec: *spec,
                inputs: fan_in,
                weights,
                biases: vec![0.0; fan_out],
                weight_opt: AdaDeltaState::zeros(fan_in * fan_out),
                bias_opt: AdaDeltaState::zeros(fan_out),
            });
            fan_in = fan_out;
        }
        Ok(Network { input_dim, layers })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.spec.width).unwrap_or(0)
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        &self.layers[layer].weights
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.layers[layer].weights
    }

    pub fn biases(&self, layer: usize) -> &[f64] {
        &self.layers[layer].biases
    }

    pub fn biases_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.layers[layer].biases
    }

    /// AdaDelta accumulators of a layer as `(weights, biases)`.
    pub fn optimizer_state(&self, layer: usize) -> (&AdaDeltaState, &AdaDeltaState) {
        let l = &self.layers[layer];
        (&l.weight_opt, &l.bias_opt)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    /// All parameters flattened layer by layer, weights before biases.
    pub fn flat_parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.biases);
        }
        out
    }

    fn forward_into<R: Rng + ?Sized>(&self, x: &[f64], trace: &mut Trace, mut rng: Option<&mut R>) {
        for (li, layer) in self.layers.iter().enumerate() {
            let (before, after) = trace.out.split_at_mut(li);
            let input: &[f64] = if li == 0 { x } else { &before[li - 1] };
            let width = layer.spec.width;
            let pre = &mut trace.pre[li];
            pre.copy_from_slice(&layer.biases);
            for (xi, row) in input.iter().zip(layer.weights.chunks_exact(width)) {
                if *xi == 0.0 {
                    continue;
                }
                for (p, w) in pre.iter_mut().zip(row) {
                    *p += xi * w;
                }
            }
            let act = &mut trace.act[li];
            for (a, z) in act.iter_mut().zip(pre.iter()) {
                *a = layer.spec.activation.apply(*z);
            }
            let out = &mut after[0];
            out.copy_from_slice(act);
            let mask = &mut trace.mask[li];
            mask.clear();
            let rate = layer.spec.dropout_rate;
            if let Some(rng) = rng.as_deref_mut() {
                if rate > 0.0 {
                    let keep = 1.0 / (1.0 - rate);
                    for o in out.iter_mut() {
                        let m = if rng.random::<f64>() < rate {
                            0.0
                        } else {
                            keep
                        };
                        mask.push(m);
                        *o *= m;
                    }
                }
            }
        }
    }

    /// Forward pass. In training mode dropout draws from `rng`.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        x: &[f64],
        train_mode: bool,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        check_dim(self.input_dim, x.len())?;
        let mut trace = Trace::new(self);
        self.forward_into(x, &mut trace, if train_mode { Some(rng) } else { None });
        Ok(trace.out.pop().unwrap_or_default())
    }

    /// Evaluation-mode forward pass.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.input_dim, x.len())?;
        let mut trace = Trace::new(self);
        self.forward_into::<ChaCha8Rng>(x, &mut trace, None);
        Ok(trace.out.pop().unwrap_or_default())
    }

    /// Batch MSE and its gradient with respect to every parameter.
    ///
    /// The loss is the mean over samples of the per-sample MSE, so the
    /// gradient is the mean of per-sample gradients.
    pub fn loss_and_gradients<X, Y, R>(
        &self,
        inputs: &[X],
        targets: &[Y],
        train_mode: bool,
        rng: &mut R,
    ) -> Result<(f64, Gradients)>
    where
        X: AsRef<[f64]>,
        Y: AsRef<[f64]>,
        R: Rng + ?Sized,
    {
        if inputs.is_empty() {
            return Err(Error::Empty("training batch"));
        }
        check_dim(inputs.len(), targets.len())?;
        let out_dim = self.output_dim();
        let scale = 2.0 / (out_dim as f64 * inputs.len() as f64);
        let mut grads = Gradients::zeros_like(self);
        let mut trace = Trace::new(self);
        let max_width = self
            .layers
            .iter()
            .map(|l| l.spec.width.max(l.inputs))
            .max()
            .unwrap_or(0);
        let mut delta = vec![0.0; max_width];
        let mut next = vec![0.0; max_width];
        let mut total = 0.0;

        for (x, y) in inputs.iter().zip(targets) {
            let (x, y) = (x.as_ref(), y.as_ref());
            check_dim(self.input_dim, x.len())?;
            check_dim(out_dim, y.len())?;
            self.forward_into(
                x,
                &mut trace,
                if train_mode { Some(&mut *rng) } else { None },
            );

            let pred = &trace.out[self.layers.len() - 1];
            let mut sq = 0.0;
            for (j, (p, t)) in pred.iter().zip(y).enumerate() {
                let d = p - t;
                sq += d * d;
                delta[j] = scale * d;
            }
            total += sq / out_dim as f64;

            for li in (0..self.layers.len()).rev() {
                let layer = &self.layers[li];
                let width = layer.spec.width;
                let dz = &mut delta[..width];
                if !trace.mask[li].is_empty() {
                    for (d, m) in dz.iter_mut().zip(&trace.mask[li]) {
                        *d *= m;
                    }
                }
                for ((d, z), a) in dz.iter_mut().zip(&trace.pre[li]).zip(&trace.act[li]) {
                    *d *= layer.spec.activation.derivative(*z, *a);
                }
                for (gb, d) in grads.biases[li].iter_mut().zip(dz.iter()) {
                    *gb += d;
                }
                let input: &[f64] = if li == 0 { x } else { &trace.out[li - 1] };
                let gw = &mut grads.weights[li];
                for (xi, grow) in input.iter().zip(gw.chunks_exact_mut(width)) {
                    if *xi != 0.0 {
                        for (g, d) in grow.iter_mut().zip(dz.iter()) {
                            *g += xi * d;
                        }
                    }
                }
                if li > 0 {
                    let n_in = layer.inputs;
                    for (i, wrow) in layer.weights.chunks_exact(width).enumerate() {
                        next[i] = wrow.iter().zip(dz.iter()).map(|(w, d)| w * d).sum();
                    }
                    delta[..n_in].copy_from_slice(&next[..n_in]);
                }
            }
        }
        Ok((total / inputs.len() as f64, grads))
    }

    pub fn apply_adadelta(&mut self, grads: &Gradients, params: &AdaDeltaParams) {
        for (li, layer) in self.layers.iter_mut().enumerate() {
            layer
                .weight_opt
                .step(&mut layer.weights, &grads.weights[li], params);
            layer
                .bias_opt
                .step(&mut layer.biases, &grads.biases[li], params);
        }
    }

    /// One training-mode backpropagation pass followed by an AdaDelta update.
    /// Returns the batch loss measured before the update.
    pub fn train_batch<X, Y, R>(
        &mut self,
        inputs: &[X],
        targets: &[Y],
        params: &AdaDeltaParams,
        rng: &mut R,
    ) -> Result<f64>
    where
        X: AsRef<[f64]>,
        Y: AsRef<[f64]>,
        R: Rng + ?Sized,
    {
        let (loss, grads) = self.loss_and_gradients(inputs, targets, true, rng)?;
        if !loss.is_finite() {
            return Err(Error::Divergence(format!("non-finite batch loss {loss}")));
        }
        self.apply_adadelta(&grads, params);
        Ok(loss)
    }

    /// Splits into the first `k` layers and the remaining ones.
    pub fn split_at(self, k: usize) -> Result<(Network, Network)> {
        if k == 0 || k >= self.layers.len() {
            return Err(Error::invalid(format!(
                "cannot split {} layers at {k}",
                self.layers.len()
            )));
        }
        let mut head = self.layers;
        let tail = head.split_off(k);
        let mid = head[k - 1].spec.width;
        Ok((
            Network {
                input_dim: self.input_dim,
                layers: head,
            },
            Network {
                input_dim: mid,
                layers: tail,
            },
        ))
    }

    /// Stacks `next` on top of `self`.
    pub fn concat(mut self, next: Network) -> Result<Network> {
        check_dim(self.output_dim(), next.input_dim)?;
        self.layers.extend(next.layers);
        Ok(self)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Mean over components of squared differences.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_dim(pred.len(), target.len())?;
    if pred.is_empty() {
        return Err(Error::Empty("mse operands"));
    }
    let sum: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sum / pred.len() as f64)
}

/// `f64` arrays stored as base64 of their little-endian IEEE-754 bytes.
mod f64_base64 {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine as _;
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn encode(values: &[f64]) -> String {
        let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        STANDARD.encode(bytes)
    }

    pub fn decode(s: &str) -> Result<Vec<f64>, String> {
        let bytes = STANDARD.decode(s).map_err(|e| e.to_string())?;
        if bytes.len() % 8 != 0 {
            return Err(format!(
                "{} bytes is not a whole number of f64",
                bytes.len()
            ));
        }
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect())
    }

    pub fn serialize<S: Serializer>(values: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&encode(values))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let s = String::deserialize(d)?;
        decode(&s).map_err(D::Error::custom)
    }
}

#[derive(Serialize, Deserialize)]
struct LayerDoc {
    width: usize,
    activation: Activation,
    dropout_rate: f64,
    inputs: usize,
    #[serde(with = "f64_base64")]
    weights: Vec<f64>,
    #[serde(with = "f64_base64")]
    biases: Vec<f64>,
    #[serde(with = "f64_base64")]
    weights_avg_sq_grad: Vec<f64>,
    #[serde(with = "f64_base64")]
    weights_avg_sq_delta: Vec<f64>,
    #[serde(with = "f64_base64")]
    biases_avg_sq_grad: Vec<f64>,
    #[serde(with = "f64_base64")]
    biases_avg_sq_delta: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct NetworkDoc {
    format: String,
    input_dim: usize,
    layers: Vec<LayerDoc>,
}

impl From<Network> for NetworkDoc {
    fn from(net: Network) -> Self {
        NetworkDoc {
            format: NETWORK_FORMAT.to_string(),
            input_dim: net.input_dim,
            layers: net
                .layers
                .into_iter()
                .map(|l| LayerDoc {
                    width: l.spec.width,
                    activation: l.spec.activation,
                    dropout_rate: l.spec.dropout_rate,
                    inputs: l.inputs,
                    weights: l.weights,
                    biases: l.biases,
                    weights_avg_sq_grad: l.weight_opt.avg_sq_grad,
                    weights_avg_sq_delta: l.weight_opt.avg_sq_delta,
                    biases_avg_sq_grad: l.bias_opt.avg_sq_grad,
                    biases_avg_sq_delta: l.bias_opt.avg_sq_delta,
                })
                .collect(),
        }
    }
}

impl TryFrom<NetworkDoc> for Network {
    type Error = String;

    fn try_from(doc: NetworkDoc) -> std::result::Result<Self, String> {
        if doc.format != NETWORK_FORMAT {
            return Err(format!("unsupported network format {:?}", doc.format));
        }
        if doc.layers.is_empty() {
            return Err("network without layers".into());
        }
        let mut fan_in = doc.input_dim;
        let mut layers = Vec::with_capacity(doc.layers.len());
        for (i, l) in doc.layers.into_iter().enumerate() {
            let spec = LayerSpec {
                width: l.width,
                activation: l.activation,
                dropout_rate: l.dropout_rate,
            };
            spec.validate().map_err(|e| format!("layer {i}: {e}"))?;
            let n_w = fan_in * l.width;
            if l.inputs != fan_in
                || l.weights.len() != n_w
                || l.weights_avg_sq_grad.len() != n_w
                || l.weights_avg_sq_delta.len() != n_w
                || l.biases.len() != l.width
                || l.biases_avg_sq_grad.len() != l.width
                || l.biases_avg_sq_delta.len() != l.width
            {
                return Err(format!("layer {i}: inconsistent shapes"));
            }
            layers.push(Dense {
                spec,
                inputs: fan_in,
                weights: l.weights,
                biases: l.biases,
                weight_opt: AdaDeltaState {
                    avg_sq_grad: l.weights_avg_sq_grad,
                    avg_sq_delta: l.weights_avg_sq_delta,
                },
                bias_opt: AdaDeltaState {
                    avg_sq_grad: l.biases_avg_sq_grad,
                    avg_sq_delta: l.biases_avg_sq_delta,
                },
            });
            fan_in = l.width;
        }
        Ok(Network {
            input_dim: doc.input_dim,
            layers,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    fn linear(width: usize) -> LayerSpec {
        LayerSpec::new(width, Activation::Linear)
    }

    #[test]
    fn init_shapes_and_zero_state() {
        let net = Network::new(&[linear(2)], 3, 42).unwrap();
        assert_eq!(net.weights(0).len(), 6);
        assert_eq!(net.biases(0), &[0.0, 0.0]);
        let (w, b) = net.optimizer_state(0);
        assert!(w
            .avg_sq_grad
            .iter()
            .chain(&w.avg_sq_delta)
            .all(|v| *v == 0.0));
        assert!(b
            .avg_sq_grad
            .iter()
            .chain(&b.avg_sq_delta)
            .all(|v| *v == 0.0));
        let limit = (6.0f64 / 5.0).sqrt();
        assert!(net.weights(0).iter().all(|w| w.abs() <= limit));
    }

    #[test]
    fn init_is_deterministic() {
        let specs = [LayerSpec::new(4, Activation::Relu), linear(2)];
        let a = Network::new(&specs, 3, 7).unwrap();
        let b = Network::new(&specs, 3, 7).unwrap();
        assert_eq!(a, b);
        let c = Network::new(&specs, 3, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_rejects_bad_arguments() {
        assert!(Network::new(&[linear(2)], 0, 1).is_err());
        assert!(Network::new(&[], 2, 1).is_err());
        assert!(Network::new(&[linear(0)], 2, 1).is_err());
        assert!(Network::new(&[linear(2).with_dropout(1.0)], 2, 1).is_err());
    }

    #[test]
    fn sigmoid_output_of_32() {
        let net = Network::new(&[LayerSpec::new(32, Activation::Sigmoid)], 2, 1).unwrap();
        let y = net.predict(&[0.3, 0.7]).unwrap();
        assert_eq!(y.len(), 32);
        assert!(y.iter().all(|v| *v > 0.0 && *v < 1.0));
    }

    #[test]
    fn zero_weights_sigmoid_gives_half() {
        let mut net = Network::new(&[LayerSpec::new(3, Activation::Sigmoid)], 2, 1).unwrap();
        net.weights_mut(0).fill(0.0);
        assert_eq!(net.predict(&[0.4, -2.0]).unwrap(), vec![0.5; 3]);
    }

    #[test]
    fn linear_dot_product() {
        let mut net = Network::new(&[linear(1)], 2, 1).unwrap();
        net.weights_mut(0).copy_from_slice(&[1.0, 2.0]);
        assert_eq!(net.predict(&[3.0, 4.0]).unwrap(), vec![11.0]);
    }

    #[test]
    fn eval_mode_ignores_dropout() {
        let specs = [LayerSpec::new(8, Activation::Relu), linear(2)];
        let plain = Network::new(&specs, 3, 5).unwrap();
        let specs_do = [
            LayerSpec::new(8, Activation::Relu).with_dropout(0.1),
            linear(2),
        ];
        let dropped = Network::new(&specs_do, 3, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = [0.1, 0.5, -0.3];
        assert_eq!(
            plain.predict(&x).unwrap(),
            dropped.forward(&x, false, &mut rng).unwrap()
        );
    }

    #[test]
    fn train_mode_dropout_zeroes_and_rescales() {
        let mut net = Network::new(&[linear(2000).with_dropout(0.5)], 1, 3).unwrap();
        net.weights_mut(0).fill(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y = net.forward(&[1.0], true, &mut rng).unwrap();
        assert!(y.iter().all(|v| *v == 0.0 || *v == 2.0));
        let zeros = y.iter().filter(|v| **v == 0.0).count();
        assert!((800..1200).contains(&zeros), "{zeros}");
    }

    #[test]
    fn forward_rejects_wrong_dim() {
        let net = Network::new(&[linear(1)], 2, 1).unwrap();
        assert!(matches!(
            net.predict(&[1.0]),
            Err(Error::DimensionMismatch {
                expected: 2,
                got: 1
            })
        ));
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_close(
            mse_loss(&[0.2, 0.4, 0.6], &[0.1, 0.4, 0.9]).unwrap(),
            0.1 / 3.0,
            1e-15,
        );
        assert!(mse_loss(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn perfect_fit_gives_negligible_update() {
        let specs = [LayerSpec::new(4, Activation::Sigmoid), linear(2)];
        let mut net = Network::new(&specs, 2, 11).unwrap();
        let inputs = vec![vec![0.1, 0.2], vec![0.5, -0.4]];
        let targets: Vec<_> = inputs.iter().map(|x| net.predict(x).unwrap()).collect();
        let before = net.flat_parameters();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = AdaDeltaParams::default();
        let loss = net
            .train_batch(&inputs, &targets, &params, &mut rng)
            .unwrap();
        assert_eq!(loss, 0.0);
        let moved = before
            .iter()
            .zip(net.flat_parameters())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(moved <= params.epsilon.sqrt(), "{moved}");
    }

    #[test]
    fn train_batch_rejects_mismatch() {
        let mut net = Network::new(&[linear(1)], 2, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = AdaDeltaParams::default();
        let empty: Vec<Vec<f64>> = vec![];
        assert!(net.train_batch(&empty, &empty, &p, &mut rng).is_err());
        assert!(net
            .train_batch(&[vec![1.0, 2.0]], &[vec![1.0, 2.0]], &p, &mut rng)
            .is_err());
        assert!(net
            .train_batch(&[vec![1.0]], &[vec![1.0]], &p, &mut rng)
            .is_err());
    }

    #[test]
    fn nan_loss_is_divergence() {
        let mut net = Network::new(&[linear(1)], 1, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = net
            .train_batch(
                &[vec![1.0]],
                &[vec![f64::NAN]],
                &AdaDeltaParams::default(),
                &mut rng,
            )
            .unwrap_err();
        assert!(matches!(err, Error::Divergence(_)));
    }

    #[test]
    fn zero_gradient_with_rho_near_one_leaves_parameters() {
        let mut net = Network::new(&[LayerSpec::new(3, Activation::Sigmoid)], 2, 4).unwrap();
        let before = net.clone();
        let zero = Gradients::zeros_like(&net);
        net.apply_adadelta(
            &zero,
            &AdaDeltaParams {
                rho: 1.0 - 1e-12,
                epsilon: 1e-6,
            },
        );
        assert_eq!(net.flat_parameters(), before.flat_parameters());
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let specs = [
            LayerSpec::new(5, Activation::Relu).with_dropout(0.1),
            LayerSpec::new(3, Activation::Sigmoid),
        ];
        let mut net = Network::new(&specs, 4, 77).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs = vec![vec![0.1, 0.2, 0.3, 0.4]; 3];
        let ys = vec![vec![0.9, 0.1, 0.5]; 3];
        for _ in 0..3 {
            net.train_batch(&xs, &ys, &AdaDeltaParams::default(), &mut rng)
                .unwrap();
        }
        let back = Network::from_json(&net.to_json().unwrap()).unwrap();
        assert_eq!(net, back);
        let bits = |n: &Network| {
            n.flat_parameters()
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&net), bits(&back));
    }

    #[test]
    fn json_rejects_bad_shapes() {
        let net = Network::new(&[linear(2)], 3, 1).unwrap();
        let mut doc: serde_json::Value = serde_json::from_str(&net.to_json().unwrap()).unwrap();
        doc["input_dim"] = 4.into();
        assert!(serde_json::from_value::<Network>(doc.clone()).is_err());
        doc["input_dim"] = 3.into();
        doc["format"] = "other".into();
        assert!(serde_json::from_value::<Network>(doc).is_err());
    }
}
