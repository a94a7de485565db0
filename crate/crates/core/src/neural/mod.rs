//! Dense feed-forward networks recorded on an autodiff tape.
//!
//! The solver and the sampler share this implementation. Parameters live in
//! one flat vector (per layer: row-major weights, then biases) so optimizer
//! state and gradients line up index for index.

mod adam;

pub use adam::{AdamConfig, AdamState};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, GradientMap, Jet, NodeRef, Tape};

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("invalid network configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite gradient {value} for parameter {index}")]
    NonFiniteGradient { index: usize, value: f64 },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("parameter file: {0}")]
    Format(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
    Sin,
}

impl Activation {
    fn apply(self, tape: &mut Tape, x: &Jet) -> Result<Jet, AutodiffError> {
        match self {
            Activation::Identity => Ok(*x),
            Activation::Tanh => tape.jet_tanh(x),
            Activation::Sin => tape.jet_sin(x),
        }
    }

    fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Sin => x.sin(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub layer_sizes: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

impl MlpConfig {
    pub fn new(
        layer_sizes: Vec<usize>,
        hidden_activation: Activation,
        output_activation: Activation,
    ) -> Result<Self, NeuralError> {
        let cfg = Self {
            layer_sizes,
            hidden_activation,
            output_activation,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), NeuralError> {
        if self.layer_sizes.len() < 2 {
            return Err(NeuralError::InvalidConfig(format!(
                "need at least an input and an output layer, got {} sizes",
                self.layer_sizes.len()
            )));
        }
        if self.layer_sizes.contains(&0) {
            return Err(NeuralError::InvalidConfig("layer sizes must be positive".into()));
        }
        if self.hidden_activation == Activation::Identity {
            return Err(NeuralError::InvalidConfig(
                "hidden activation must be tanh or sin".into(),
            ));
        }
        if self.output_activation == Activation::Sin {
            return Err(NeuralError::InvalidConfig(
                "output activation must be identity or tanh".into(),
            ));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 2 == self.layer_sizes.len() {
            self.output_activation
        } else {
            self.hidden_activation
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    config: MlpConfig,
    params: Vec<f64>,
    // start of each layer's block in `params`
    offsets: Vec<usize>,
}

fn layer_offsets(config: &MlpConfig) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(config.layer_sizes.len() - 1);
    let mut at = 0;
    for w in config.layer_sizes.windows(2) {
        offsets.push(at);
        at += w[0] * w[1] + w[1];
    }
    offsets
}

impl Mlp {
    /// All weights and biases zero.
    pub fn zeros(config: MlpConfig) -> Self {
        let offsets = layer_offsets(&config);
        Self {
            params: vec![0.0; config.param_count()],
            config,
            offsets,
        }
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init(config: MlpConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Self::zeros(config);
        for l in 0..net.layer_count() {
            let (fan_in, fan_out) = net.layer_shape(l);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let start = net.offsets[l];
            for w in &mut net.params[start..start + fan_in * fan_out] {
                *w = rng.random_range(-bound..=bound);
            }
        }
        net
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn layer_count(&self) -> usize {
        self.offsets.len()
    }

    /// `(fan_in, fan_out)` of layer `l`.
    pub fn layer_shape(&self, l: usize) -> (usize, usize) {
        (self.config.layer_sizes[l], self.config.layer_sizes[l + 1])
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<(), NeuralError> {
        if params.len() != self.params.len() {
            return Err(NeuralError::DimensionMismatch {
                expected: self.params.len(),
                got: params.len(),
            });
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    /// Row-major `fan_out × fan_in` weight block of layer `l`.
    pub fn weights(&self, l: usize) -> &[f64] {
        let (i, o) = self.layer_shape(l);
        &self.params[self.offsets[l]..self.offsets[l] + i * o]
    }

    pub fn weights_mut(&mut self, l: usize) -> &mut [f64] {
        let (i, o) = self.layer_shape(l);
        let start = self.offsets[l];
        &mut self.params[start..start + i * o]
    }

    pub fn biases(&self, l: usize) -> &[f64] {
        let (i, o) = self.layer_shape(l);
        let start = self.offsets[l] + i * o;
        &self.params[start..start + o]
    }

    pub fn biases_mut(&mut self, l: usize) -> &mut [f64] {
        let (i, o) = self.layer_shape(l);
        let start = self.offsets[l] + i * o;
        &mut self.params[start..start + o]
    }

    /// Records every parameter on `tape`: as variables when `trainable`,
    /// otherwise as constants (no gradient bookkeeping at all).
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundMlp<'_> {
        let params = self
            .params
            .iter()
            .map(|&p| if trainable { tape.var(p) } else { tape.constant(p) })
            .collect();
        BoundMlp { net: self, params }
    }

    /// Plain floating-point evaluation, no tape.
    pub fn eval(&self, inputs: &[f64]) -> Result<Vec<f64>, NeuralError> {
        if inputs.len() != self.config.input_dim() {
            return Err(NeuralError::DimensionMismatch {
                expected: self.config.input_dim(),
                got: inputs.len(),
            });
        }
        let mut h = inputs.to_vec();
        for l in 0..self.layer_count() {
            let (fan_in, fan_out) = self.layer_shape(l);
            let w = self.weights(l);
            let b = self.biases(l);
            let act = self.config.activation(l);
            h = (0..fan_out)
                .map(|o| {
                    let row = &w[o * fan_in..(o + 1) * fan_in];
                    let z = row.iter().zip(&h).fold(0.0, |acc, (a, x)| acc + a * x) + b[o];
                    act.eval(z)
                })
                .collect();
        }
        Ok(h)
    }

    pub fn to_file(&self) -> MlpFile {
        let n = self.layer_count();
        MlpFile {
            layer_sizes: self.config.layer_sizes.clone(),
            activations: (0..n).map(|l| self.config.activation(l)).collect(),
            weights: (0..n).map(|l| self.weights(l).to_vec()).collect(),
            biases: (0..n).map(|l| self.biases(l).to_vec()).collect(),
        }
    }

    pub fn from_file(file: &MlpFile) -> Result<Self, NeuralError> {
        let n = file.layer_sizes.len().saturating_sub(1);
        if file.activations.len() != n || file.weights.len() != n || file.biases.len() != n || n == 0 {
            return Err(NeuralError::InvalidConfig(
                "activations, weights and biases need one entry per layer".into(),
            ));
        }
        let hidden = if n > 1 { file.activations[0] } else { Activation::Tanh };
        if file.activations[..n - 1].iter().any(|&a| a != hidden) {
            return Err(NeuralError::InvalidConfig(
                "hidden layers must share one activation".into(),
            ));
        }
        let config = MlpConfig::new(file.layer_sizes.clone(), hidden, file.activations[n - 1])?;
        let mut net = Self::zeros(config);
        for l in 0..n {
            let (i, o) = net.layer_shape(l);
            if file.weights[l].len() != i * o {
                return Err(NeuralError::DimensionMismatch {
                    expected: i * o,
                    got: file.weights[l].len(),
                });
            }
            if file.biases[l].len() != o {
                return Err(NeuralError::DimensionMismatch {
                    expected: o,
                    got: file.biases[l].len(),
                });
            }
            net.weights_mut(l).copy_from_slice(&file.weights[l]);
            net.biases_mut(l).copy_from_slice(&file.biases[l]);
        }
        if net.params.iter().any(|p| !p.is_finite()) {
            return Err(NeuralError::InvalidConfig("non-finite parameter".into()));
        }
        Ok(net)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("parameters serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, NeuralError> {
        Self::from_file(&serde_json::from_str(text)?)
    }
}

/// On-disk parameter layout; weight matrices are row-major `fan_out × fan_in`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpFile {
    pub layer_sizes: Vec<usize>,
    pub activations: Vec<Activation>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

/// A network whose parameters have been recorded on a tape.
pub struct BoundMlp<'a> {
    net: &'a Mlp,
    params: Vec<NodeRef>,
}

impl BoundMlp<'_> {
    pub fn param_nodes(&self) -> &[NodeRef] {
        &self.params
    }

    pub fn forward(&self, tape: &mut Tape, inputs: &[NodeRef]) -> Result<Vec<NodeRef>, NeuralError> {
        let jets = inputs
            .iter()
            .map(|&x| Jet::from_coeffs(&[x]))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(self.forward_jet(tape, &jets)?.iter().map(Jet::value).collect())
    }

    /// Propagates input jets (all of one order) through the network.
    ///
    /// Coefficient 0 of each output is recorded by exactly the same op
    /// sequence as [`BoundMlp::forward`].
    pub fn forward_jet(&self, tape: &mut Tape, inputs: &[Jet]) -> Result<Vec<Jet>, NeuralError> {
        let cfg = &self.net.config;
        if inputs.len() != cfg.input_dim() {
            return Err(NeuralError::DimensionMismatch {
                expected: cfg.input_dim(),
                got: inputs.len(),
            });
        }
        if let Some(first) = inputs.first() {
            if let Some(bad) = inputs.iter().find(|j| j.order() != first.order()) {
                return Err(AutodiffError::OrderMismatch {
                    expected: first.order(),
                    got: bad.order(),
                }
                .into());
            }
        }
        let mut h = inputs.to_vec();
        for l in 0..self.net.layer_count() {
            let (fan_in, fan_out) = self.net.layer_shape(l);
            let start = self.net.offsets[l];
            let w = &self.params[start..start + fan_in * fan_out];
            let b = &self.params[start + fan_in * fan_out..start + fan_in * fan_out + fan_out];
            let act = cfg.activation(l);
            let mut next = Vec::with_capacity(fan_out);
            for o in 0..fan_out {
                let z = tape.jet_linear(&w[o * fan_in..(o + 1) * fan_in], &h, Some(b[o]))?;
                next.push(act.apply(tape, &z)?);
            }
            h = next;
        }
        Ok(h)
    }

    /// Projects a gradient map onto the flat parameter vector.
    pub fn gradient(&self, grads: &GradientMap) -> Vec<f64> {
        self.params.iter().map(|&p| grads.get(p)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(sizes: &[usize], out: Activation) -> MlpConfig {
        MlpConfig::new(sizes.to_vec(), Activation::Tanh, out).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(MlpConfig::new(vec![3], Activation::Tanh, Activation::Identity).is_err());
        assert!(MlpConfig::new(vec![1, 0, 1], Activation::Tanh, Activation::Identity).is_err());
        assert!(MlpConfig::new(vec![1, 2], Activation::Identity, Activation::Identity).is_err());
        assert!(MlpConfig::new(vec![1, 2], Activation::Tanh, Activation::Sin).is_err());
        assert_eq!(
            cfg(&[1, 32, 32, 1], Activation::Identity).param_count(),
            64 + 32 * 33 + 33
        );
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let c = cfg(&[3, 16, 5], Activation::Tanh);
        let a = Mlp::init(c.clone(), 7);
        let b = Mlp::init(c.clone(), 7);
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), Mlp::init(c, 8).params());
        for l in 0..a.layer_count() {
            let (i, o) = a.layer_shape(l);
            let bound = (6.0 / (i + o) as f64).sqrt();
            assert!(a.weights(l).iter().all(|w| w.abs() <= bound));
            assert!(a.biases(l).iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn zero_network_outputs_zero() {
        for out in [Activation::Identity, Activation::Tanh] {
            let net = Mlp::zeros(cfg(&[2, 4, 3], out));
            let mut t = Tape::new();
            let bound = net.bind(&mut t, true);
            let x = [t.constant(0.3), t.constant(-1.2)];
            let y = bound.forward(&mut t, &x).unwrap();
            assert!(y.iter().all(|&n| t.value(n) == 0.0));
        }
    }

    #[test]
    fn linear_layer_jet() {
        let mut net = Mlp::zeros(cfg(&[1, 1], Activation::Identity));
        net.weights_mut(0)[0] = 2.0;
        net.biases_mut(0)[0] = 1.0;
        let mut t = Tape::new();
        let bound = net.bind(&mut t, false);
        let x = t.jet_lift(0.75, true, 2).unwrap();
        let y = bound.forward_jet(&mut t, &[x]).unwrap();
        assert_eq!(t.values(y[0].coeffs()), vec![2.5, 2.0, 0.0]);

        let mut net = Mlp::zeros(cfg(&[1, 4, 1], Activation::Identity));
        net.biases_mut(1)[0] = -0.4;
        let mut t = Tape::new();
        let bound = net.bind(&mut t, false);
        let x = t.jet_lift(3.0, true, 2).unwrap();
        let y = bound.forward_jet(&mut t, &[x]).unwrap();
        assert_eq!(t.values(y[0].coeffs()), vec![-0.4, 0.0, 0.0]);
    }

    #[test]
    fn dimension_and_order_mismatch() {
        let net = Mlp::zeros(cfg(&[2, 3, 1], Activation::Identity));
        let mut t = Tape::new();
        let bound = net.bind(&mut t, false);
        let x = t.constant(1.0);
        assert!(matches!(
            bound.forward(&mut t, &[x]),
            Err(NeuralError::DimensionMismatch { expected: 2, got: 1 })
        ));
        let a = t.jet_lift(0.0, true, 1).unwrap();
        let b = t.jet_lift(0.0, false, 2).unwrap();
        assert!(matches!(
            bound.forward_jet(&mut t, &[a, b]),
            Err(NeuralError::Autodiff(AutodiffError::OrderMismatch { .. }))
        ));
    }

    #[test]
    fn json_round_trip() {
        let net = Mlp::init(
            MlpConfig::new(vec![2, 5, 3], Activation::Sin, Activation::Tanh).unwrap(),
            3,
        );
        let back = Mlp::from_json(&net.to_json()).unwrap();
        assert_eq!(back, net);
        let text = net.to_json();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["activations"], serde_json::json!(["sin", "tanh"]));
        assert_eq!(v["weights"][0].as_array().unwrap().len(), 10);
        assert!(
            Mlp::from_json(r#"{"layer_sizes":[1,1],"activations":["identity"],"weights":[[1,2]],"biases":[[0]]}"#)
                .is_err()
        );
        assert!(Mlp::from_json(
            r#"{"layer_sizes":[1,1],"activations":["identity"],"weights":[[1]],"biases":[[0]],"x":1}"#
        )
        .is_err());
    }

    #[test]
    fn eval_agrees_with_tape() {
        let net = Mlp::init(cfg(&[2, 6, 6, 2], Activation::Tanh), 11);
        let mut t = Tape::new();
        let bound = net.bind(&mut t, true);
        let x = [t.constant(0.2), t.constant(-0.9)];
        let y = bound.forward(&mut t, &x).unwrap();
        assert_eq!(t.values(&y), net.eval(&[0.2, -0.9]).unwrap());
    }
}
