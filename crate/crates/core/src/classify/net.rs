//! A small fully-connected network trained with Adam.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    CrossEntropy,
    /// `0.5 * sum (y - t)^2`, averaged over the batch.
    SquaredError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Input width, hidden widths, output width.
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub loss: Loss,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Mini-batches per epoch; `None` means one pass over the data.
    pub steps_per_epoch: Option<usize>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: RngStream,
}

impl NetConfig {
    /// `[inputs, 64, classes]`, batch 10, learning rate 1e-3, Adam, 150
    /// epochs of 50 steps.
    pub fn new(inputs: usize, classes: usize) -> Self {
        Self {
            widths: vec![inputs, 64, classes],
            activation: Activation::Relu,
            loss: Loss::CrossEntropy,
            learning_rate: 1e-3,
            batch_size: 10,
            epochs: 150,
            steps_per_epoch: Some(50),
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: RngStream::root(0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 || self.widths.contains(&0) {
            return Err(Error::argument(format!("invalid layer widths {:?}", self.widths)));
        }
        if self.batch_size == 0 {
            return Err(Error::argument("batch size must be at least 1"));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::argument("learning rate must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn inputs(&self) -> usize {
        self.widths[0]
    }

    pub fn outputs(&self) -> usize {
        *self.widths.last().expect("validated")
    }
}

/// Layer `l` maps `widths[l]` inputs to `widths[l+1]` outputs; weights are
/// stored `[in, out]` so a batch is `x.dot(w) + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub activation: Activation,
    pub loss: Loss,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

pub fn softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut out = z.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

pub fn one_hot(labels: &[usize], classes: usize) -> Array2<f64> {
    let mut t = Array2::zeros((labels.len(), classes));
    for (i, &c) in labels.iter().enumerate() {
        t[[i, c]] = 1.0;
    }
    t
}

impl Mlp {
    /// He-normal weights from stream `init`, zero biases.
    pub fn new(cfg: &NetConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = cfg.seed.substream("init").rng();
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in cfg.widths.windows(2) {
            let (inp, out) = (pair[0], pair[1]);
            let normal = Normal::new(0.0, (2.0 / inp as f64).sqrt()).expect("positive std");
            weights.push(Array2::from_shape_fn((inp, out), |_| normal.sample(&mut rng)));
            biases.push(Array1::zeros(out));
        }
        Ok(Self {
            weights,
            biases,
            activation: cfg.activation,
            loss: cfg.loss,
        })
    }

    pub fn layers(&self) -> usize {
        self.weights.len()
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(Array2::len).sum::<usize>() + self.biases.iter().map(Array1::len).sum::<usize>()
    }

    fn act(&self, z: &Array2<f64>) -> Array2<f64> {
        match self.activation {
            Activation::Relu => z.mapv(|v| v.max(0.0)),
            Activation::Identity => z.clone(),
        }
    }

    /// Pre-activations of every layer; the last one is the network output.
    fn forward_all(&self, x: ArrayView2<f64>) -> (Vec<Array2<f64>>, Vec<Array2<f64>>) {
        let mut inputs = Vec::with_capacity(self.layers());
        let mut pre = Vec::with_capacity(self.layers());
        let mut a = x.to_owned();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let z = a.dot(w) + b;
            inputs.push(a);
            a = if l + 1 < self.layers() { self.act(&z) } else { z.clone() };
            pre.push(z);
        }
        (inputs, pre)
    }

    /// Raw outputs (logits for cross-entropy).
    pub fn output(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let (_, mut pre) = self.forward_all(x);
        pre.pop().expect("at least one layer")
    }

    /// Class probabilities (softmax of the output).
    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Array2<f64> {
        softmax_rows(&self.output(x))
    }

    fn loss_from_output(&self, out: &Array2<f64>, targets: &Array2<f64>) -> f64 {
        let batch = out.nrows().max(1) as f64;
        match self.loss {
            Loss::CrossEntropy => {
                let mut total = 0.0;
                for (z, t) in out.axis_iter(Axis(0)).zip(targets.axis_iter(Axis(0))) {
                    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                    total += z.iter().zip(t.iter()).map(|(zi, ti)| ti * (lse - zi)).sum::<f64>();
                }
                total / batch
            }
            Loss::SquaredError => 0.5 * (out - targets).mapv(|v| v * v).sum() / batch,
        }
    }

    pub fn loss(&self, x: ArrayView2<f64>, targets: &Array2<f64>) -> f64 {
        self.loss_from_output(&self.output(x), targets)
    }

    pub fn loss_and_gradients(&self, x: ArrayView2<f64>, targets: &Array2<f64>) -> (f64, Gradients) {
        let (inputs, pre) = self.forward_all(x);
        let out = pre.last().expect("at least one layer");
        let loss = self.loss_from_output(out, targets);
        let batch = x.nrows().max(1) as f64;
        let mut delta = match self.loss {
            Loss::CrossEntropy => (softmax_rows(out) - targets) / batch,
            Loss::SquaredError => (out - targets) / batch,
        };
        let mut gw = vec![Array2::zeros((0, 0)); self.layers()];
        let mut gb = vec![Array1::zeros(0); self.layers()];
        for l in (0..self.layers()).rev() {
            gw[l] = inputs[l].t().dot(&delta);
            gb[l] = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut back = delta.dot(&self.weights[l].t());
                if self.activation == Activation::Relu {
                    back.zip_mut_with(&pre[l - 1], |d, z| {
                        if *z <= 0.0 {
                            *d = 0.0
                        }
                    });
                }
                delta = back;
            }
        }
        (
            loss,
            Gradients {
                weights: gw,
                biases: gb,
            },
        )
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| w.iter_mut().chain(b.iter_mut()))
    }
}

impl Gradients {
    fn flat(&self) -> impl Iterator<Item = &f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b.iter()))
    }
}

/// Step size of the central differences in [`gradient_check`].
pub const GRADIENT_CHECK_STEP: f64 = 1e-5;

/// Maximum over parameters of `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`,
/// with the numeric gradient from central differences of step
/// [`GRADIENT_CHECK_STEP`].
pub fn max_gradient_error(net: &Mlp, x: ArrayView2<f64>, targets: &Array2<f64>) -> f64 {
    let (_, grads) = net.loss_and_gradients(x, targets);
    let analytic: Vec<f64> = grads.flat().copied().collect();
    let mut probe = net.clone();
    let count = analytic.len();
    let mut worst = 0.0f64;
    for (i, a) in analytic.iter().enumerate().take(count) {
        let orig = *probe.params_mut().nth(i).expect("index in range");
        *probe.params_mut().nth(i).expect("index in range") = orig + GRADIENT_CHECK_STEP;
        let up = probe.loss(x, targets);
        *probe.params_mut().nth(i).expect("index in range") = orig - GRADIENT_CHECK_STEP;
        let down = probe.loss(x, targets);
        *probe.params_mut().nth(i).expect("index in range") = orig;
        let numeric = (up - down) / (2.0 * GRADIENT_CHECK_STEP);
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(err);
    }
    worst
}

/// Builds the network described by `cfg` and checks its gradients on a batch.
pub fn gradient_check(cfg: &NetConfig, x: ArrayView2<f64>, targets: &Array2<f64>) -> Result<f64> {
    let net = Mlp::new(cfg)?;
    if net.parameter_count() > 10_000 {
        return Err(Error::argument(format!(
            "gradient check is limited to 10000 parameters, network has {}",
            net.parameter_count()
        )));
    }
    Ok(max_gradient_error(&net, x, targets))
}

struct Adam {
    cfg: (f64, f64, f64, f64),
    step: i32,
    m: Gradients,
    v: Gradients,
}

impl Adam {
    fn new(net: &Mlp, cfg: &NetConfig) -> Self {
        let zeros = Gradients {
            weights: net.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            biases: net.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
        };
        Self {
            cfg: (cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon),
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    fn update(&mut self, net: &mut Mlp, g: &Gradients) {
        let (lr, b1, b2, eps) = self.cfg;
        self.step += 1;
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let apply = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for l in 0..net.layers() {
            ndarray::Zip::from(&mut net.weights[l])
                .and(&g.weights[l])
                .and(&mut self.m.weights[l])
                .and(&mut self.v.weights[l])
                .for_each(|p, &g, m, v| apply(p, g, m, v));
            ndarray::Zip::from(&mut net.biases[l])
                .and(&g.biases[l])
                .and(&mut self.m.biases[l])
                .and(&mut self.v.biases[l])
                .for_each(|p, &g, m, v| apply(p, g, m, v));
        }
    }
}

/// Per-feature z-scoring fitted on the training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Array2<f64>) -> Self {
        let mean = x.mean_axis(Axis(0)).expect("non-empty").to_vec();
        let scale = x
            .std_axis(Axis(0), 0.0)
            .iter()
            .map(|s| if *s > 1e-12 { *s } else { 1.0 })
            .collect();
        Self { mean, scale }
    }

    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.clone();
        for mut row in out.axis_iter_mut(Axis(0)) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = (*v - m) / s;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub standardizer: Standardizer,
    pub net: Mlp,
}

impl Model {
    pub fn predict_proba(&self, features: &Array2<f64>) -> Array2<f64> {
        self.net.predict_proba(self.standardizer.apply(features).view())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

fn accuracy(probs: &Array2<f64>, labels: &[usize]) -> f64 {
    let hits = probs
        .axis_iter(Axis(0))
        .zip(labels)
        .filter(|(row, &l)| argmax(row.iter().copied()) == l)
        .count();
    hits as f64 / labels.len().max(1) as f64
}

pub(crate) fn argmax(it: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in it.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Trains on standardized `features` with integer `labels`.
///
/// Mini-batches come from a fresh shuffle (stream `shuffle/<pass>`) each
/// time the data is exhausted. After every epoch the loss and accuracy on
/// the whole training set are recorded.
pub fn train(features: &Array2<f64>, labels: &[usize], cfg: &NetConfig) -> Result<(Model, Vec<EpochStats>)> {
    cfg.validate()?;
    let n = features.nrows();
    if n != labels.len() {
        return Err(Error::argument(format!("{n} feature rows but {} labels", labels.len())));
    }
    if features.ncols() != cfg.inputs() {
        return Err(Error::argument(format!(
            "features have {} columns, network expects {}",
            features.ncols(),
            cfg.inputs()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= cfg.outputs()) {
        return Err(Error::argument(format!(
            "label {bad} outside the {} outputs",
            cfg.outputs()
        )));
    }
    let distinct = labels.iter().collect::<std::collections::BTreeSet<_>>().len();
    if distinct < 2 {
        return Err(Error::argument("training needs at least two classes"));
    }
    if n < cfg.batch_size {
        return Err(Error::argument(format!(
            "{n} samples is fewer than one batch of {}",
            cfg.batch_size
        )));
    }

    let standardizer = Standardizer::fit(features);
    let x = standardizer.apply(features);
    let targets = match cfg.loss {
        Loss::CrossEntropy | Loss::SquaredError => one_hot(labels, cfg.outputs()),
    };
    let mut net = Mlp::new(cfg)?;
    let mut adam = Adam::new(&net, cfg);

    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0usize;
    let mut pass = 0usize;
    let mut curve = Vec::with_capacity(cfg.epochs);
    let steps = cfg.steps_per_epoch.unwrap_or_else(|| n.div_ceil(cfg.batch_size));

    for epoch in 0..cfg.epochs {
        for _ in 0..steps {
            if cursor >= order.len() {
                order = (0..n).collect();
                order.shuffle(&mut cfg.seed.substream(format!("shuffle/{pass}")).rng());
                pass += 1;
                cursor = 0;
            }
            let end = (cursor + cfg.batch_size).min(order.len());
            let idx = &order[cursor..end];
            cursor = end;
            let xb = x.select(Axis(0), idx);
            let tb = targets.select(Axis(0), idx);
            let (_, grads) = net.loss_and_gradients(xb.view(), &tb);
            adam.update(&mut net, &grads);
        }
        let out = net.output(x.view());
        let loss = net.loss_from_output(&out, &targets);
        if !loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                message: format!("loss is {loss}"),
            });
        }
        curve.push(EpochStats {
            epoch,
            loss,
            accuracy: accuracy(&softmax_rows(&out), labels),
        });
    }
    Ok((Model { standardizer, net }, curve))
}
