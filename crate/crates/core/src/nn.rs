//! Small dense networks with hand-written backpropagation: the feature
//! encoder (tanh MLP followed by unit renormalisation) and the affine
//! classifier head.

use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::vecops::{dot, norm};
use rand::Rng as _;

/// Affine layer `y = W x + b` with `W` stored row-major (`out x in`).
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub n_in: usize,
    pub n_out: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Linear {
    /// Uniform initialisation in `(-1/sqrt(n_in), 1/sqrt(n_in))`.
    pub fn init(n_in: usize, n_out: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (n_in as f64).sqrt();
        let w = (0..n_in * n_out).map(|_| rng.random_range(-bound..bound)).collect();
        let b = (0..n_out).map(|_| rng.random_range(-bound..bound)).collect();
        Self { n_in, n_out, w, b }
    }

    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self { n_in, n_out, w: vec![0.0; n_in * n_out], b: vec![0.0; n_out] }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_out)
            .map(|o| self.b[o] + dot(&self.w[o * self.n_in..(o + 1) * self.n_in], x))
            .collect()
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Linear) -> Vec<f64> {
        let mut dx = vec![0.0; self.n_in];
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.b[o] += g;
            let row = o * self.n_in;
            for i in 0..self.n_in {
                grad.w[row + i] += g * x[i];
                dx[i] += g * self.w[row + i];
            }
        }
        dx
    }

    fn to_json(&self) -> (Value, Value) {
        let w: Vec<Vec<f64>> = self.w.chunks(self.n_in).map(<[f64]>::to_vec).collect();
        (serde_json::json!(w), serde_json::json!(self.b))
    }

    fn from_json(w: &Value, b: &Value) -> Result<Self> {
        let w: Vec<Vec<f64>> = serde_json::from_value(w.clone())?;
        let b: Vec<f64> = serde_json::from_value(b.clone())?;
        let n_out = w.len();
        let n_in = w.first().map_or(0, Vec::len);
        if n_out == 0 || n_in == 0 || b.len() != n_out || w.iter().any(|r| r.len() != n_in) {
            return Err(Error::ShapeMismatch("inconsistent layer shapes in model file".into()));
        }
        Ok(Self { n_in, n_out, w: w.concat(), b })
    }
}

/// Parameter container shared by the encoder and classifier so the
/// optimiser and gradient checks can treat every model uniformly.
pub trait Params {
    fn layers(&self) -> &[Linear];
    fn layers_mut(&mut self) -> &mut [Linear];

    fn num_params(&self) -> usize {
        self.layers().iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    fn flat(&self) -> Vec<f64> {
        self.layers().iter().flat_map(|l| l.w.iter().chain(&l.b).copied()).collect()
    }

    fn set_flat(&mut self, p: &[f64]) {
        let mut it = p.iter().copied();
        for l in self.layers_mut() {
            for x in l.w.iter_mut().chain(l.b.iter_mut()) {
                *x = it.next().expect("parameter vector too short");
            }
        }
    }
}

/// MLP `m -> hidden... -> d` with tanh hidden activations, whose output is
/// renormalised to unit length.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub layers: Vec<Linear>,
}

/// Intermediate values kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    /// Input to each layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-normalisation output and its norm.
    h_norm: f64,
    /// Unit feature.
    pub v: Vec<f64>,
}

impl Params for Encoder {
    fn layers(&self) -> &[Linear] {
        &self.layers
    }
    fn layers_mut(&mut self) -> &mut [Linear] {
        &mut self.layers
    }
}

impl Encoder {
    pub fn new(input_dim: usize, hidden: &[usize], feature_dim: usize, rng: &mut Rng) -> Self {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(feature_dim);
        let layers = dims.windows(2).map(|w| Linear::init(w[0], w[1], rng)).collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn feature_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.n_out)
    }

    pub fn zeros_like(&self) -> Self {
        Self { layers: self.layers.iter().map(|l| Linear::zeros(l.n_in, l.n_out)).collect() }
    }

    pub fn trace(&self, x: &[f64]) -> EncoderTrace {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut a = x.to_vec();
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let mut z = layer.forward(&a);
            if li < last {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            inputs.push(std::mem::replace(&mut a, z));
        }
        // A zero pre-feature has no direction; nudge it so the output is unit.
        let mut h_norm = norm(&a);
        if h_norm < 1e-12 {
            a[0] += 1e-12;
            h_norm = norm(&a);
        }
        let v = a.iter().map(|x| x / h_norm).collect();
        EncoderTrace { inputs, h_norm, v }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.trace(x).v
    }

    /// Backpropagates `dL/dv` through one traced sample, accumulating into `grad`.
    pub fn backward(&self, tr: &EncoderTrace, dv: &[f64], grad: &mut Encoder) {
        let proj = dot(&tr.v, dv);
        let mut delta: Vec<f64> = dv.iter().zip(&tr.v).map(|(g, v)| (g - v * proj) / tr.h_norm).collect();
        for li in (0..self.layers.len()).rev() {
            let x = &tr.inputs[li];
            let dx = self.layers[li].backward(x, &delta, &mut grad.layers[li]);
            if li > 0 {
                // x is the tanh output of the previous layer.
                delta = dx.iter().zip(x).map(|(g, a)| g * (1.0 - a * a)).collect();
            }
        }
    }
}

/// Affine head on unit features. One output gives a binary logit with
/// `p = sigmoid(logit)`; `C > 1` outputs give class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub layers: Vec<Linear>,
}

impl Params for Classifier {
    fn layers(&self) -> &[Linear] {
        &self.layers
    }
    fn layers_mut(&mut self) -> &mut [Linear] {
        &mut self.layers
    }
}

impl Classifier {
    pub fn new(feature_dim: usize, outputs: usize, rng: &mut Rng) -> Self {
        Self { layers: vec![Linear::init(feature_dim, outputs, rng)] }
    }

    pub fn outputs(&self) -> usize {
        self.layers[0].n_out
    }

    pub fn zeros_like(&self) -> Self {
        Self { layers: vec![Linear::zeros(self.layers[0].n_in, self.layers[0].n_out)] }
    }

    pub fn logits(&self, v: &[f64]) -> Vec<f64> {
        self.layers[0].forward(v)
    }

    /// Probability of the fake class. For a multi-class head this is one
    /// minus the softmax mass of class 0 (real).
    pub fn fake_probability(&self, v: &[f64]) -> f64 {
        let z = self.logits(v);
        if z.len() == 1 {
            crate::vecops::sigmoid(z[0])
        } else {
            1.0 - crate::vecops::softmax(&z)[0]
        }
    }

    /// Accumulates parameter gradients for one sample and returns `dL/dv`.
    pub fn backward(&self, v: &[f64], dlogits: &[f64], grad: &mut Classifier) -> Vec<f64> {
        self.layers[0].backward(v, dlogits, &mut grad.layers[0])
    }
}

/// Serialises both models as one JSON object of named parameter arrays.
pub fn model_to_json(enc: &Encoder, clf: &Classifier) -> Value {
    let mut map = Map::new();
    for (i, l) in enc.layers.iter().enumerate() {
        let (w, b) = l.to_json();
        map.insert(format!("encoder.{i}.weight"), w);
        map.insert(format!("encoder.{i}.bias"), b);
    }
    let (w, b) = clf.layers[0].to_json();
    map.insert("classifier.weight".into(), w);
    map.insert("classifier.bias".into(), b);
    Value::Object(map)
}

pub fn model_from_json(value: &Value) -> Result<(Encoder, Classifier)> {
    let map = value
        .as_object()
        .ok_or_else(|| Error::Config("model file must be a JSON object".into()))?;
    let get = |k: &str| map.get(k).ok_or_else(|| Error::Config(format!("model file lacks `{k}`")));
    let mut layers = Vec::new();
    while map.contains_key(&format!("encoder.{}.weight", layers.len())) {
        let i = layers.len();
        layers.push(Linear::from_json(get(&format!("encoder.{i}.weight"))?, get(&format!("encoder.{i}.bias"))?)?);
    }
    if layers.is_empty() {
        return Err(Error::Config("model file has no encoder layers".into()));
    }
    if layers.windows(2).any(|w| w[0].n_out != w[1].n_in) {
        return Err(Error::ShapeMismatch("encoder layers do not chain".into()));
    }
    let head = Linear::from_json(get("classifier.weight")?, get("classifier.bias")?)?;
    if head.n_in != layers.last().map_or(0, |l| l.n_out) {
        return Err(Error::ShapeMismatch("classifier input does not match feature dimension".into()));
    }
    Ok((Encoder { layers }, Classifier { layers: vec![head] }))
}
