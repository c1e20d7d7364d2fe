//! Multilayer perceptrons over flat parameter vectors.
//!
//! Parameters are stored layer by layer; each layer is an `out × in`
//! row-major weight matrix followed by `out` biases. The final layer of every
//! network built here is linear and produces logits.

pub mod autoencoder;

use std::sync::Arc;

use rand::Rng;

use crate::autodiff::{Graph, LossFn, NodeId, Scalar};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layer {
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
}

impl Layer {
    pub fn num_params(&self) -> usize {
        self.input * self.output + self.output
    }
}

/// Immutable stack of layers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Architecture {
    layers: Vec<Layer>,
}

impl Architecture {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("architecture has no layers"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.input == 0 || l.output == 0 {
                return Err(Error::config(format!("layer {i} has a zero dimension")));
            }
            if i > 0 && layers[i - 1].output != l.input {
                return Err(Error::config(format!(
                    "layer {i} expects {} inputs but layer {} produces {}",
                    l.input,
                    i - 1,
                    layers[i - 1].output
                )));
            }
        }
        Ok(Architecture { layers })
    }

    /// Fully connected stack with `hidden` activation between layers and a
    /// linear output layer, e.g. `dims = [2, 32, 32, 16]`.
    pub fn mlp(dims: &[usize], hidden: Activation) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::config("an MLP needs at least input and output widths"));
        }
        let n = dims.len() - 1;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Layer {
                input: w[0],
                output: w[1],
                activation: if i + 1 == n { Activation::Identity } else { hidden },
            })
            .collect();
        Architecture::new(layers)
    }

    /// The 2 → 32 → 32 → 16 tanh demodulator.
    pub fn demodulator() -> Self {
        Architecture::mlp(&[2, 32, 32, 16], Activation::Tanh).expect("valid dims")
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output
    }
}

/// Parameter values tagged with the architecture they belong to.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    arch: Arc<Architecture>,
}

impl ParamVector {
    pub fn new(arch: Arc<Architecture>, values: Vec<f64>) -> Result<Self> {
        if values.len() != arch.num_params() {
            return Err(Error::config(format!(
                "{} parameter values for an architecture with {}",
                values.len(),
                arch.num_params()
            )));
        }
        Ok(ParamVector { values, arch })
    }

    pub fn zeros(arch: Arc<Architecture>) -> Self {
        let n = arch.num_params();
        ParamVector {
            values: vec![0.0; n],
            arch,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn arch(&self) -> &Arc<Architecture> {
        &self.arch
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Same architecture, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        ParamVector::new(self.arch.clone(), values)
    }
}

/// Glorot-uniform weights `U(−a, a)`, `a = √(6/(in+out))`, zero biases.
pub fn init_params(arch: &Arc<Architecture>, seed: u64) -> ParamVector {
    let mut rng = rng::seeded(seed);
    let mut values = Vec::with_capacity(arch.num_params());
    for l in arch.layers() {
        let a = (6.0 / (l.input + l.output) as f64).sqrt();
        for _ in 0..l.input * l.output {
            values.push(rng.random_range(-a..a));
        }
        values.extend(std::iter::repeat_n(0.0, l.output));
    }
    ParamVector {
        values,
        arch: arch.clone(),
    }
}

fn activate(a: Activation, x: f64) -> f64 {
    match a {
        Activation::Tanh => x.tanh(),
        Activation::Relu => x.max(0.0),
        Activation::Identity => x,
    }
}

/// Plain `f64` forward pass on raw values; no shape checks.
pub(crate) fn forward_raw(arch: &Architecture, values: &[f64], input: &[f64]) -> Vec<f64> {
    let mut x = input.to_vec();
    let mut off = 0;
    for l in arch.layers() {
        let w = &values[off..off + l.input * l.output];
        let b = &values[off + l.input * l.output..off + l.num_params()];
        x = (0..l.output)
            .map(|r| {
                let row = &w[r * l.input..(r + 1) * l.input];
                let z: f64 = row.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() + b[r];
                activate(l.activation, z)
            })
            .collect();
        off += l.num_params();
    }
    x
}

/// Logits of the network for one input.
pub fn mlp_forward(p: &ParamVector, input: &[f64]) -> Result<Vec<f64>> {
    if input.len() != p.arch.input_dim() {
        return Err(Error::config(format!(
            "input has {} components, network expects {}",
            input.len(),
            p.arch.input_dim()
        )));
    }
    Ok(forward_raw(&p.arch, &p.values, input))
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|x| x / total).collect()
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &z) in logits.iter().enumerate() {
        if z > logits[best] {
            best = i;
        }
    }
    best
}

/// Weight and bias nodes of an MLP sliced out of a parameter input node.
pub struct MlpGraph {
    layers: Vec<(NodeId, NodeId, Layer)>,
}

impl MlpGraph {
    /// Slices the network's parameters starting at `offset` inside `params`.
    pub fn new<S: Scalar>(g: &mut Graph<S>, arch: &Architecture, params: NodeId, offset: usize) -> Self {
        let mut off = offset;
        let layers = arch
            .layers()
            .iter()
            .map(|&l| {
                let w = g.slice(params, off, l.input * l.output);
                let b = g.slice(params, off + l.input * l.output, l.output);
                off += l.num_params();
                (w, b, l)
            })
            .collect();
        MlpGraph { layers }
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, input: NodeId) -> NodeId {
        let mut x = input;
        for &(w, b, l) in &self.layers {
            let z = g.matvec(w, x, l.output, l.input);
            let z = g.bias_add(z, b);
            x = match l.activation {
                Activation::Tanh => g.tanh(z),
                Activation::Relu => g.relu(z),
                Activation::Identity => z,
            };
        }
        x
    }
}

/// One labeled example.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub input: Vec<f64>,
    pub target: usize,
}

/// Labeled examples sharing one input width and class count.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    examples: Vec<Example>,
    input_dim: usize,
    num_classes: usize,
}

impl Dataset {
    pub fn new(examples: Vec<Example>, num_classes: usize) -> Result<Self> {
        let input_dim = examples.first().map_or(0, |e| e.input.len());
        for (i, e) in examples.iter().enumerate() {
            if e.input.len() != input_dim {
                return Err(Error::config(format!(
                    "example {i} has {} inputs, expected {input_dim}",
                    e.input.len()
                )));
            }
            if e.target >= num_classes {
                return Err(Error::config(format!(
                    "example {i} has target {} but only {num_classes} classes",
                    e.target
                )));
            }
        }
        Ok(Dataset {
            examples,
            input_dim,
            num_classes,
        })
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }
}

fn check_data(arch: &Architecture, data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::config("empty dataset"));
    }
    if data.input_dim() != arch.input_dim() {
        return Err(Error::config(format!(
            "dataset inputs have {} components, network expects {}",
            data.input_dim(),
            arch.input_dim()
        )));
    }
    if data.num_classes() > arch.output_dim() {
        return Err(Error::config(format!(
            "dataset has {} classes, network outputs {}",
            data.num_classes(),
            arch.output_dim()
        )));
    }
    Ok(())
}

/// Mean softmax cross-entropy of the network over `data`.
pub fn xent_loss(p: &ParamVector, data: &Dataset) -> Result<f64> {
    check_data(&p.arch, data)?;
    let total: f64 = data
        .examples()
        .iter()
        .map(|e| {
            let z = forward_raw(&p.arch, &p.values, &e.input);
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            lse - z[e.target]
        })
        .sum();
    Ok(total / data.len() as f64)
}

/// Mean cross-entropy of an MLP on a bound dataset, as a differentiable loss.
#[derive(Clone, Debug)]
pub struct MlpXent {
    pub arch: Arc<Architecture>,
    pub data: Arc<Dataset>,
}

impl MlpXent {
    pub fn new(arch: Arc<Architecture>, data: Arc<Dataset>) -> Self {
        MlpXent { arch, data }
    }
}

impl LossFn for MlpXent {
    fn num_params(&self) -> usize {
        self.arch.num_params()
    }

    fn check(&self) -> Result<()> {
        check_data(&self.arch, &self.data)
    }

    fn build<S: Scalar>(&self, g: &mut Graph<S>, params: NodeId) -> NodeId {
        let net = MlpGraph::new(g, &self.arch, params, 0);
        let terms: Vec<NodeId> = self
            .data
            .examples()
            .iter()
            .map(|e| {
                let x = g.constant(&e.input);
                let z = net.forward(g, x);
                g.softmax_xent(z, e.target)
            })
            .collect();
        g.mean(&terms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::eval_with_gradient;

    #[test]
    fn parameter_count() {
        let arch = Architecture::mlp(&[2, 4, 16], Activation::Tanh).unwrap();
        assert_eq!(arch.num_params(), 2 * 4 + 4 + 4 * 16 + 16);
        assert_eq!(arch.num_params(), 92);
        assert_eq!(Architecture::demodulator().num_params(), 96 + 1056 + 528);
    }

    #[test]
    fn invalid_architectures() {
        assert!(Architecture::new(vec![]).is_err());
        assert!(Architecture::mlp(&[2, 0, 4], Activation::Tanh).is_err());
        let bad = vec![
            Layer {
                input: 2,
                output: 3,
                activation: Activation::Tanh,
            },
            Layer {
                input: 4,
                output: 2,
                activation: Activation::Identity,
            },
        ];
        assert!(Architecture::new(bad).is_err());
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let arch = Arc::new(Architecture::mlp(&[3, 5, 2], Activation::Tanh).unwrap());
        let a = init_params(&arch, 42);
        let b = init_params(&arch, 42);
        assert_eq!(a, b);
        assert_ne!(a, init_params(&arch, 43));
        // biases of the first layer sit right after its 15 weights
        assert!(a.values()[15..20].iter().all(|&v| v == 0.0));
        let bound = (6.0f64 / 8.0).sqrt();
        assert!(a.values()[..15].iter().all(|v| v.abs() < bound));
    }

    #[test]
    fn init_weight_mean_is_centered() {
        let arch = Arc::new(Architecture::mlp(&[100, 1000], Activation::Tanh).unwrap());
        let p = init_params(&arch, 7);
        let w = &p.values()[..100_000];
        let a = (6.0f64 / 1100.0).sqrt();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let sigma = a / 3f64.sqrt() / (w.len() as f64).sqrt();
        assert!(mean.abs() < 3.0 * sigma, "{mean} vs {sigma}");
    }

    #[test]
    fn zero_parameters_give_uniform_softmax() {
        let arch = Arc::new(Architecture::demodulator());
        let p = ParamVector::zeros(arch);
        let z = mlp_forward(&p, &[0.4, -1.0]).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
        let s = softmax(&z);
        assert!(s.iter().all(|&v| (v - 1.0 / 16.0).abs() < 1e-15));
    }

    #[test]
    fn identity_layer_reproduces_input() {
        let arch = Arc::new(Architecture::mlp(&[3, 3], Activation::Tanh).unwrap());
        let mut v = vec![0.0; 12];
        v[0] = 1.0;
        v[4] = 1.0;
        v[8] = 1.0;
        let p = ParamVector::new(arch, v).unwrap();
        assert_eq!(mlp_forward(&p, &[0.5, -2.0, 3.0]).unwrap(), vec![0.5, -2.0, 3.0]);
        assert!(mlp_forward(&p, &[0.5]).is_err());
    }

    #[test]
    fn hand_computed_two_two_two() {
        // W1 = [[1, 2], [−1, 0.5]], b1 = [0.1, −0.2], tanh
        // W2 = [[0.3, −0.7], [2, 1]], b2 = [0, 0.5]
        let arch = Arc::new(Architecture::mlp(&[2, 2, 2], Activation::Tanh).unwrap());
        let v = vec![1.0, 2.0, -1.0, 0.5, 0.1, -0.2, 0.3, -0.7, 2.0, 1.0, 0.0, 0.5];
        let p = ParamVector::new(arch, v).unwrap();
        let x = [0.2, -0.4];
        // hidden pre-activations: 0.2 − 0.8 + 0.1 = −0.5; −0.2 − 0.2 − 0.2 = −0.6
        let h = [(-0.5f64).tanh(), (-0.6f64).tanh()];
        let want = [0.3 * h[0] - 0.7 * h[1], 2.0 * h[0] + h[1] + 0.5];
        let got = mlp_forward(&p, &x).unwrap();
        assert!((got[0] - want[0]).abs() < 1e-15);
        assert!((got[1] - want[1]).abs() < 1e-15);
        assert!((got[0] - 0.237_299_549_720_621_8).abs() < 1e-15);
        assert!((got[1] + 0.961_283_881_518_054_9).abs() < 1e-15);
    }

    #[test]
    fn uniform_logits_loss_is_log_classes() {
        let arch = Arc::new(Architecture::demodulator());
        let p = ParamVector::zeros(arch);
        let data = Dataset::new(
            (0..16)
                .map(|k| Example {
                    input: vec![0.1 * k as f64, 0.0],
                    target: k,
                })
                .collect(),
            16,
        )
        .unwrap();
        assert!((xent_loss(&p, &data).unwrap() - 16f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn loss_vanishes_as_target_logit_grows() {
        // single linear layer with only a bias on class 0
        let arch = Arc::new(Architecture::mlp(&[1, 3], Activation::Tanh).unwrap());
        let data = Dataset::new(
            vec![Example {
                input: vec![0.0],
                target: 0,
            }],
            3,
        )
        .unwrap();
        let mut prev = f64::INFINITY;
        for k in 0..30 {
            let mut v = vec![0.0; 6];
            v[3] = k as f64;
            let l = xent_loss(&ParamVector::new(arch.clone(), v).unwrap(), &data).unwrap();
            assert!(l < prev && l >= 0.0);
            prev = l;
        }
        assert!(prev < 1e-11);
    }

    #[test]
    fn graph_loss_matches_direct_formula() {
        let arch = Arc::new(Architecture::mlp(&[2, 6, 4], Activation::Tanh).unwrap());
        let p = init_params(&arch, 3);
        let mut r = rng::seeded(8);
        let data = Arc::new(
            Dataset::new(
                (0..7)
                    .map(|_| Example {
                        input: vec![r.random::<f64>() - 0.5, r.random::<f64>() - 0.5],
                        target: r.random_range(0..4),
                    })
                    .collect(),
                4,
            )
            .unwrap(),
        );
        // independent: −log softmax(target) averaged
        let direct: f64 = data
            .examples()
            .iter()
            .map(|e| -softmax(&mlp_forward(&p, &e.input).unwrap())[e.target].ln())
            .sum::<f64>()
            / 7.0;
        let f = MlpXent::new(arch, data.clone());
        let g = eval_with_gradient(&f, p.values()).unwrap();
        assert!((g.value - direct).abs() < 1e-13);
        assert!((xent_loss(&p, &data).unwrap() - direct).abs() < 1e-13);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let arch = Arc::new(Architecture::demodulator());
        let p = ParamVector::zeros(arch.clone());
        let empty = Dataset::new(vec![], 16).unwrap();
        assert!(matches!(xent_loss(&p, &empty), Err(Error::Config(_))));
        let f = MlpXent::new(arch, Arc::new(empty));
        assert!(eval_with_gradient(&f, p.values()).is_err());
    }

    #[test]
    fn dataset_validation() {
        let bad_target = vec![Example {
            input: vec![0.0, 0.0],
            target: 16,
        }];
        assert!(Dataset::new(bad_target, 16).is_err());
        let ragged = vec![
            Example {
                input: vec![0.0, 0.0],
                target: 0,
            },
            Example {
                input: vec![0.0],
                target: 0,
            },
        ];
        assert!(Dataset::new(ragged, 16).is_err());
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0; 16]), 0);
    }
}
