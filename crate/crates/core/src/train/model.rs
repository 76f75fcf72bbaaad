//! Linear and one-hidden-layer models with hand-written backpropagation.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::math::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    Linear,
    /// One rectified hidden layer of the given width.
    Mlp {
        hidden: usize,
    },
}

/// Dense layer `y = W x + b`, `W` row-major `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn uniform(inputs: usize, outputs: usize, limit: f64, rng: &mut impl Rng) -> Self {
        let mut layer = Self::zeros(inputs, outputs);
        for w in &mut layer.weights {
            *w = rng.random_range(-limit..limit);
        }
        layer
    }

    pub fn row(&self, o: usize) -> &[f64] {
        &self.weights[o * self.inputs..(o + 1) * self.inputs]
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.outputs)
            .map(|o| self.bias[o] + self.row(o).iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(&self.bias)
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }
}

/// Model parameters; the last layer produces the logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    arch: Architecture,
    layers: Vec<Layer>,
}

/// Parameter gradients, shaped like the model's layers.
pub type Gradients = Vec<Layer>;

impl ModelParams {
    /// Glorot-uniform output layer, He-uniform hidden layer, zero biases.
    pub fn init(arch: Architecture, dim: usize, classes: usize, rng: RngStream) -> Result<Self> {
        if dim == 0 || classes == 0 {
            return Err(Error::invalid("model needs positive input dimension and class count"));
        }
        let mut r = rng.rng();
        let layers = match arch {
            Architecture::Linear => {
                vec![Layer::uniform(
                    dim,
                    classes,
                    (6.0 / (dim + classes) as f64).sqrt(),
                    &mut r,
                )]
            }
            Architecture::Mlp { hidden } => {
                if hidden == 0 {
                    return Err(Error::invalid("hidden width must be positive"));
                }
                vec![
                    Layer::uniform(dim, hidden, (6.0 / dim as f64).sqrt(), &mut r),
                    Layer::uniform(hidden, classes, (6.0 / (hidden + classes) as f64).sqrt(), &mut r),
                ]
            }
        };
        Ok(Self { arch, layers })
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn classes(&self) -> usize {
        self.output_layer().outputs
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn output_layer(&self) -> &Layer {
        self.layers.last().expect("model has at least one layer")
    }

    /// Input of the output layer: the raw features or the hidden activations.
    pub fn features(&self, x: &[f64]) -> Vec<f64> {
        match self.arch {
            Architecture::Linear => x.to_vec(),
            Architecture::Mlp { .. } => relu(self.layers[0].apply(x)),
        }
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.output_layer().apply(&self.features(x))
    }

    /// Row-major `n × C` logits of a flat row-major `n × d` feature matrix.
    pub fn logits_flat(&self, features: &[f64]) -> Vec<f64> {
        features.chunks(self.dim()).flat_map(|x| self.logits(x)).collect()
    }

    /// Gradients of `Σ_i g_iᵀ u_i` where `g_i` are the rows of `dlogits`.
    pub fn backward(&self, inputs: &[&[f64]], dlogits: &[f64]) -> Result<Gradients> {
        let c = self.classes();
        if dlogits.len() != inputs.len() * c {
            return Err(Error::invalid("logit gradient does not match the batch"));
        }
        let mut grads: Gradients = self.layers.iter().map(|l| Layer::zeros(l.inputs, l.outputs)).collect();
        for (x, g) in inputs.iter().zip(dlogits.chunks(c)) {
            match self.arch {
                Architecture::Linear => accumulate(&mut grads[0], x, g),
                Architecture::Mlp { .. } => {
                    let pre = self.layers[0].apply(x);
                    let h = relu(pre.clone());
                    accumulate(&mut grads[1], &h, g);
                    let out = &self.layers[1];
                    let dh: Vec<f64> = (0..out.inputs)
                        .map(|j| {
                            if pre[j] > 0.0 {
                                (0..c).map(|o| out.weights[o * out.inputs + j] * g[o]).sum()
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    accumulate(&mut grads[0], x, &dh);
                }
            }
        }
        Ok(grads)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn flat_params(&self) -> Vec<f64> {
        self.layers.iter().flat_map(Layer::params).copied().collect()
    }

    pub fn set_flat_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::invalid("parameter vector has the wrong length"));
        }
        for (p, v) in self.layers.iter_mut().flat_map(Layer::params_mut).zip(values) {
            *p = *v;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().flat_map(Layer::params).all(|p| p.is_finite())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("lpl-model 1\n");
        match self.arch {
            Architecture::Linear => out.push_str("architecture linear\n"),
            Architecture::Mlp { hidden } => {
                let _ = writeln!(out, "architecture mlp {hidden}");
            }
        }
        for l in &self.layers {
            let _ = writeln!(out, "layer {} {}", l.outputs, l.inputs);
            for o in 0..l.outputs {
                out.push_str(&join(l.row(o)));
                out.push('\n');
            }
            out.push_str(&join(&l.bias));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i as u64 + 1, l.trim()));
        let err = |line: u64, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut next = |what: &str| lines.next().ok_or_else(|| err(0, format!("file ends before {what}")));
        let (n, magic) = next("the header")?;
        if magic != "lpl-model 1" {
            return Err(err(n, format!("not a model dump: {magic:?}")));
        }
        let (n, arch_line) = next("the architecture")?;
        let arch = match arch_line.split_whitespace().collect::<Vec<_>>().as_slice() {
            ["architecture", "linear"] => Architecture::Linear,
            ["architecture", "mlp", h] => Architecture::Mlp {
                hidden: h.parse().map_err(|_| err(n, format!("bad hidden width {h:?}")))?,
            },
            _ => return Err(err(n, format!("bad architecture line {arch_line:?}"))),
        };
        let count = if arch == Architecture::Linear { 1 } else { 2 };
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let (n, head) = next("a layer header")?;
            let (outputs, inputs) = match head.split_whitespace().collect::<Vec<_>>().as_slice() {
                ["layer", o, i] => (
                    o.parse::<usize>()
                        .map_err(|_| err(n, format!("bad layer size {o:?}")))?,
                    i.parse::<usize>()
                        .map_err(|_| err(n, format!("bad layer size {i:?}")))?,
                ),
                _ => return Err(err(n, format!("bad layer header {head:?}"))),
            };
            let mut layer = Layer::zeros(inputs, outputs);
            for o in 0..outputs {
                let (n, row) = next("a weight row")?;
                let vals = parse_row(row, inputs).map_err(|m| err(n, m))?;
                layer.weights[o * inputs..(o + 1) * inputs].copy_from_slice(&vals);
            }
            let (n, row) = next("the bias row")?;
            layer.bias = parse_row(row, outputs).map_err(|m| err(n, m))?;
            layers.push(layer);
        }
        if let Some((n, extra)) = lines.find(|(_, l)| !l.is_empty()) {
            return Err(err(n, format!("unexpected trailing content {extra:?}")));
        }
        let consistent = match arch {
            Architecture::Linear => true,
            Architecture::Mlp { hidden } => layers[0].outputs == hidden && layers[1].inputs == hidden,
        };
        if !consistent {
            return Err(err(0, "layer shapes do not chain".into()));
        }
        let model = Self { arch, layers };
        if !model.is_finite() {
            return Err(err(0, "non-finite parameter".into()));
        }
        Ok(model)
    }
}

fn relu(mut v: Vec<f64>) -> Vec<f64> {
    for x in &mut v {
        *x = x.max(0.0);
    }
    v
}

fn accumulate(grad: &mut Layer, input: &[f64], dout: &[f64]) {
    for (o, &g) in dout.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        grad.bias[o] += g;
        for (w, x) in grad.weights[o * grad.inputs..(o + 1) * grad.inputs]
            .iter_mut()
            .zip(input)
        {
            *w += g * x;
        }
    }
}

fn join(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(" ")
}

fn parse_row(row: &str, expected: usize) -> std::result::Result<Vec<f64>, String> {
    let vals = row
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| format!("{t:?} is not a number")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if vals.len() != expected {
        return Err(format!("expected {expected} values, found {}", vals.len()));
    }
    Ok(vals)
}

/// Plain SGD with optional heavy-ball momentum and L2 weight decay.
#[derive(Debug, Clone)]
pub struct Sgd {
    learning_rate: f64,
    momentum: f64,
    weight_decay: f64,
    velocity: Option<Vec<f64>>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            momentum,
            weight_decay,
            velocity: None,
        }
    }

    pub fn step(&mut self, model: &mut ModelParams, grads: &Gradients) {
        let lr = self.learning_rate;
        let wd = self.weight_decay;
        let params = model.layers.iter_mut().flat_map(Layer::params_mut);
        let g = grads.iter().flat_map(Layer::params);
        if self.momentum == 0.0 {
            for (p, g) in params.zip(g) {
                *p -= lr * (g + wd * *p);
            }
            return;
        }
        let n = grads.iter().map(|l| l.weights.len() + l.bias.len()).sum();
        let v = self.velocity.get_or_insert_with(|| vec![0.0; n]);
        for ((p, g), v) in params.zip(g).zip(v.iter_mut()) {
            *v = self.momentum * *v + g + wd * *p;
            *p -= lr * *v;
        }
    }
}
