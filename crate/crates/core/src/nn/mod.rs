//! Feed-forward softplus network, Kaiming initialization, Adam and a
//! multistep learning-rate schedule.

mod adam;
mod checkpoint;
mod schedule;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{AutodiffError, Graph, NodeId, Shape, Tensor};

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC};
pub use schedule::SchedulerSpec;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("invalid layer spec: {0}")]
    InvalidSpec(String),
    #[error("input has length {got}, network expects {expected}")]
    InputDim { expected: usize, got: usize },
    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),
    #[error("gradient block {block} has {got} entries, expected {expected}")]
    GradientShape { block: String, expected: usize, got: usize },
    #[error("learning rate must be non-negative and finite, got {0}")]
    InvalidLearningRate(f64),
    #[error("invalid scheduler: {0}")]
    InvalidScheduler(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Softplus,
    Identity,
}

impl Activation {
    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Softplus => "softplus",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "softplus" => Some(Activation::Softplus),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

/// `hidden` softplus layers of `width` units followed by a linear output layer.
pub fn mlp_spec(input: usize, hidden: usize, width: usize, output: usize) -> Vec<LayerSpec> {
    let mut spec = Vec::with_capacity(hidden + 1);
    let mut prev = input;
    for _ in 0..hidden {
        spec.push(LayerSpec { in_dim: prev, out_dim: width, activation: Activation::Softplus });
        prev = width;
    }
    spec.push(LayerSpec { in_dim: prev, out_dim: output, activation: Activation::Identity });
    spec
}

pub fn validate_spec(spec: &[LayerSpec]) -> Result<(), NnError> {
    let Some(last) = spec.last() else {
        return Err(NnError::InvalidSpec("no layers".into()));
    };
    for (i, l) in spec.iter().enumerate() {
        if l.in_dim == 0 || l.out_dim == 0 {
            return Err(NnError::InvalidSpec(format!("layer {i} has a zero dimension")));
        }
        if i > 0 && spec[i - 1].out_dim != l.in_dim {
            return Err(NnError::InvalidSpec(format!(
                "layer {i} expects {} inputs but layer {} emits {}",
                l.in_dim,
                i - 1,
                spec[i - 1].out_dim
            )));
        }
        if i + 1 < spec.len() && l.activation == Activation::Identity {
            return Err(NnError::InvalidSpec(format!("hidden layer {i} uses identity activation")));
        }
    }
    if last.activation != Activation::Identity {
        return Err(NnError::InvalidSpec("output layer must be linear".into()));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    /// Row-major `out_dim × in_dim`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Weights and biases of every layer, in layer order.
#[derive(Clone, Debug, PartialEq)]
pub struct NetParams {
    layers: Vec<Layer>,
}

impl NetParams {
    pub fn zeros(spec: &[LayerSpec]) -> Result<Self, NnError> {
        validate_spec(spec)?;
        let layers = spec
            .iter()
            .map(|&s| Layer { spec: s, weight: vec![0.0; s.in_dim * s.out_dim], bias: vec![0.0; s.out_dim] })
            .collect();
        Ok(NetParams { layers })
    }

    /// Kaiming-normal (fan-in, gain 2): `W ~ N(0, 2/in_dim)`, zero biases.
    pub fn init_kaiming(spec: &[LayerSpec], seed: u64) -> Result<Self, NnError> {
        let mut params = NetParams::zeros(spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut params.layers {
            let std = (2.0 / layer.spec.in_dim as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("finite std");
            for w in &mut layer.weight {
                *w = normal.sample(&mut rng);
            }
        }
        Ok(params)
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self, NnError> {
        let spec: Vec<LayerSpec> = layers.iter().map(|l| l.spec).collect();
        validate_spec(&spec)?;
        for (i, l) in layers.iter().enumerate() {
            if l.weight.len() != l.spec.in_dim * l.spec.out_dim || l.bias.len() != l.spec.out_dim {
                return Err(NnError::InvalidSpec(format!("layer {i} buffers do not match its dims")));
            }
        }
        Ok(NetParams { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn spec(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].spec.in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].spec.out_dim
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Parameter blocks in optimizer order: weight then bias, layer by layer.
    pub fn blocks(&self) -> impl Iterator<Item = &[f64]> {
        self.layers.iter().flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
    }

    pub fn blocks_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn block_name(index: usize) -> String {
        let kind = if index.is_multiple_of(2) { "weight" } else { "bias" };
        format!("layer {} {kind}", index / 2)
    }

    /// Sum of squared weights (biases excluded).
    pub fn weight_sq_sum(&self) -> f64 {
        self.layers.iter().flat_map(|l| &l.weight).map(|w| w * w).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Register every weight and bias as a parameter leaf.
    pub fn bind(&self, g: &mut Graph) -> BoundNet {
        let mut weights = Vec::with_capacity(self.layers.len());
        let mut biases = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            weights.push(g.parameter(Tensor::matrix(l.spec.out_dim, l.spec.in_dim, l.weight.clone())));
            biases.push(g.parameter(Tensor::vector(l.bias.clone())));
        }
        BoundNet { weights, biases, spec: self.spec() }
    }

    /// Copy current values into leaves previously created by [`NetParams::bind`].
    pub fn load_into(&self, g: &mut Graph, bound: &BoundNet) -> Result<(), NnError> {
        for ((l, &w), &b) in self.layers.iter().zip(&bound.weights).zip(&bound.biases) {
            g.set_value(w, &l.weight)?;
            g.set_value(b, &l.bias)?;
        }
        Ok(())
    }

    /// Plain forward pass (no gradient bookkeeping kept by the caller).
    pub fn eval(&self, z: &[f64]) -> Result<Vec<f64>, NnError> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let x = g.input(Tensor::vector(z.to_vec()));
        let y = bound.forward(&mut g, x)?;
        Ok(g.value(y).data().to_vec())
    }
}

/// Graph handles for a network's parameters.
#[derive(Clone, Debug)]
pub struct BoundNet {
    weights: Vec<NodeId>,
    biases: Vec<NodeId>,
    spec: Vec<LayerSpec>,
}

impl BoundNet {
    pub fn weights(&self) -> &[NodeId] {
        &self.weights
    }

    /// Handles in optimizer block order (weight, bias per layer).
    pub fn handles(&self) -> Vec<NodeId> {
        self.weights.iter().zip(&self.biases).flat_map(|(&w, &b)| [w, b]).collect()
    }

    pub fn forward(&self, g: &mut Graph, z: NodeId) -> Result<NodeId, NnError> {
        let expected = self.spec[0].in_dim;
        let shape = g.shape(z);
        if shape != Shape::Vector(expected) {
            return Err(NnError::InputDim { expected, got: shape.len() });
        }
        let mut h = z;
        for ((spec, &w), &b) in self.spec.iter().zip(&self.weights).zip(&self.biases) {
            let wx = g.matvec(w, h)?;
            let pre = g.add(wx, b)?;
            h = match spec.activation {
                Activation::Softplus => g.softplus(pre)?,
                Activation::Identity => pre,
            };
        }
        Ok(h)
    }

    /// `Σ_l Σ_ij W[l]_ij²`.
    pub fn weight_penalty(&self, g: &mut Graph) -> Result<NodeId, NnError> {
        let mut total: Option<NodeId> = None;
        for &w in &self.weights {
            let sq = g.square(w)?;
            let s = g.sum(sq)?;
            total = Some(match total {
                Some(t) => g.add(t, s)?,
                None => s,
            });
        }
        Ok(total.expect("at least one layer"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kaiming_std_matches_formula() {
        let spec = [
            LayerSpec { in_dim: 200, out_dim: 200, activation: Activation::Softplus },
            LayerSpec { in_dim: 200, out_dim: 1, activation: Activation::Identity },
        ];
        let p = NetParams::init_kaiming(&spec, 11).unwrap();
        let w = &p.layers()[0].weight;
        assert_eq!(w.len(), 40_000);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (w.len() - 1) as f64;
        let std = var.sqrt();
        assert!((std - 0.1).abs() < 0.005, "std {std}");
        assert!(p.layers().iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn kaiming_is_seeded() {
        let spec = mlp_spec(10, 3, 16, 5);
        assert_eq!(NetParams::init_kaiming(&spec, 3).unwrap(), NetParams::init_kaiming(&spec, 3).unwrap());
        assert_ne!(NetParams::init_kaiming(&spec, 3).unwrap(), NetParams::init_kaiming(&spec, 4).unwrap());
    }

    #[test]
    fn zero_network_outputs_zero() {
        let spec = mlp_spec(10, 5, 8, 202);
        let p = NetParams::zeros(&spec).unwrap();
        let y = p.eval(&[1.0; 10]).unwrap();
        assert_eq!(y.len(), 202);
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn generic_pendulum_head_width() {
        let p = NetParams::init_kaiming(&mlp_spec(10, 5, 20, 2 * 10 * 10 + 2), 0).unwrap();
        let y = p.eval(&[0.5; 10]).unwrap();
        assert_eq!(y.len(), 202);
        assert!(y.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn input_dim_mismatch() {
        let p = NetParams::init_kaiming(&mlp_spec(3, 1, 4, 2), 0).unwrap();
        assert!(matches!(p.eval(&[1.0, 2.0]), Err(NnError::InputDim { expected: 3, got: 2 })));
    }

    #[test]
    fn spec_validation() {
        assert!(validate_spec(&[]).is_err());
        let mut bad = mlp_spec(3, 2, 4, 2);
        bad[1].in_dim = 5;
        assert!(validate_spec(&bad).is_err());
        let mut bad = mlp_spec(3, 2, 4, 2);
        bad[0].activation = Activation::Identity;
        assert!(validate_spec(&bad).is_err());
        let mut bad = mlp_spec(3, 2, 4, 2);
        bad[2].activation = Activation::Softplus;
        assert!(validate_spec(&bad).is_err());
    }

    #[test]
    fn forward_is_lipschitz_near_a_point() {
        let p = NetParams::init_kaiming(&mlp_spec(4, 3, 16, 6), 9).unwrap();
        let z = [0.3, -0.7, 1.1, 0.2];
        let y0 = p.eval(&z).unwrap();
        for k in 0..4 {
            for &d in &[1e-4, -1e-5, 3e-6] {
                let mut zp = z;
                zp[k] += d;
                let y1 = p.eval(&zp).unwrap();
                let dy = y0.iter().zip(&y1).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                assert!(dy / d.abs() < 50.0, "ratio {}", dy / d.abs());
            }
        }
        assert_eq!(p.eval(&z).unwrap(), y0);
    }

    #[test]
    fn weight_penalty_gradient_is_twice_the_weight() {
        let p = NetParams::init_kaiming(&mlp_spec(3, 2, 5, 2), 1).unwrap();
        let mut g = Graph::new();
        let bound = p.bind(&mut g);
        let reg = bound.weight_penalty(&mut g).unwrap();
        assert!((g.scalar(reg) - p.weight_sq_sum()).abs() < 1e-12);
        let grads = g.gradient(reg, &bound.handles()).unwrap();
        for (i, (gid, block)) in grads.iter().zip(p.blocks()).enumerate() {
            let d = g.value(*gid).data();
            if i % 2 == 0 {
                for (dv, w) in d.iter().zip(block) {
                    assert_eq!(*dv, 2.0 * w);
                }
            } else {
                assert!(d.iter().all(|&v| v == 0.0));
            }
        }
    }
}
