use ndarray::{linalg::general_mat_mul, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::MlpConfig;
use crate::{Error, Result};

/// One affine layer. `weights` is `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Array2<f32>,
    pub bias: Array1<f32>,
}

impl DenseLayer {
    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }
}

/// A trained (or freshly initialized) classifier head.
///
/// Hidden layers use rectified-linear activations; the single output unit is
/// logistic. Parameters are stored as f32; all arithmetic runs in f64.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub layers: Vec<DenseLayer>,
    pub config: MlpConfig,
    pub trained_on_round: u32,
}

impl MlpModel {
    /// Builds a model from explicit layers, checking that shapes chain from
    /// `layers[0].inputs()` down to one output and that everything is finite.
    pub fn from_layers(layers: Vec<DenseLayer>, config: MlpConfig, trained_on_round: u32) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("model needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::InvalidConfig(format!(
                    "layer shapes do not chain: {} outputs feed {} inputs",
                    pair[0].outputs(),
                    pair[1].inputs()
                )));
            }
        }
        for l in &layers {
            if l.bias.len() != l.outputs() {
                return Err(Error::InvalidConfig("bias length differs from layer width".into()));
            }
            if l.weights.iter().chain(l.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::InvalidConfig("non-finite model parameter".into()));
            }
        }
        if layers.last().unwrap().outputs() != 1 {
            return Err(Error::InvalidConfig("final layer must have exactly one output".into()));
        }
        Ok(Self { layers, config, trained_on_round })
    }

    /// He-uniform weights (bound `sqrt(6 / fan_in)`), zero biases.
    pub fn initialize(input_dim: usize, config: &MlpConfig, rng: &mut impl Rng) -> Self {
        Network::initialize(input_dim, &config.hidden_layers, rng).to_model(config.clone(), 0)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn hidden_layers(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1].iter().map(DenseLayer::outputs).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn scorer(&self) -> Scorer {
        Scorer { net: Network::from_model(self) }
    }
}

/// Probability of the positive class for one embedding.
pub fn predict(model: &MlpModel, image: &[f32]) -> Result<f64> {
    model.scorer().predict(image)
}

/// Reusable f64 copy of a model for bulk inference.
#[derive(Debug, Clone)]
pub struct Scorer {
    net: Network,
}

impl Scorer {
    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn predict(&self, image: &[f32]) -> Result<f64> {
        let mut out = [0.0];
        self.predict_rows(image, &mut out)?;
        Ok(out[0])
    }

    /// Scores a row-major block of embeddings into `out`.
    pub fn predict_rows(&self, rows: &[f32], out: &mut [f64]) -> Result<()> {
        let dim = self.input_dim();
        if rows.len() != out.len() * dim {
            return Err(Error::DimensionMismatch { expected: out.len() * dim, actual: rows.len() });
        }
        let x = Array2::from_shape_fn((out.len(), dim), |(r, c)| f64::from(rows[r * dim + c]));
        let logits = self.net.logits(x.view());
        for (o, z) in out.iter_mut().zip(logits.iter()) {
            *o = sigmoid(*z);
        }
        Ok(())
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy on a logit, stable for large |z|.
pub(crate) fn bce_with_logit(z: f64, positive: bool) -> f64 {
    let y = if positive { 1.0 } else { 0.0 };
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

#[derive(Debug, Clone)]
pub(crate) struct Layer64 {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// f64 working copy used for training, inference and gradient checks.
#[derive(Debug, Clone)]
pub(crate) struct Network {
    pub layers: Vec<Layer64>,
}

/// Activations retained by a training forward pass.
pub(crate) struct ForwardCache {
    /// Input to each layer.
    inputs: Vec<Array2<f64>>,
    /// Per hidden layer: derivative of the layer output with respect to its
    /// pre-activation (ReLU gate times the dropout scale).
    gates: Vec<Array2<f64>>,
    pub logits: Array1<f64>,
}

pub(crate) struct Gradients {
    pub w: Vec<Array2<f64>>,
    pub b: Vec<Array1<f64>>,
}

impl Network {
    pub fn initialize(input_dim: usize, hidden: &[usize], rng: &mut impl Rng) -> Self {
        let mut widths = vec![input_dim];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let layers = widths
            .windows(2)
            .map(|pair| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let bound = (6.0 / fan_in as f64).sqrt();
                // round through f32 so the trained model starts exactly here
                let w = Array2::from_shape_simple_fn((fan_out, fan_in), || {
                    f64::from(rng.random_range(-bound..bound) as f32)
                });
                Layer64 { w, b: Array1::zeros(fan_out) }
            })
            .collect();
        Self { layers }
    }

    pub fn from_model(model: &MlpModel) -> Self {
        let layers = model
            .layers
            .iter()
            .map(|l| Layer64 { w: l.weights.mapv(f64::from), b: l.bias.mapv(f64::from) })
            .collect();
        Self { layers }
    }

    pub fn to_model(&self, config: MlpConfig, round: u32) -> MlpModel {
        let layers = self
            .layers
            .iter()
            .map(|l| DenseLayer { weights: l.w.mapv(|v| v as f32), bias: l.b.mapv(|v| v as f32) })
            .collect();
        MlpModel { layers, config, trained_on_round: round }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    fn affine(layer: &Layer64, h: ArrayView2<f64>) -> Array2<f64> {
        let mut z = Array2::zeros((h.nrows(), layer.w.nrows()));
        general_mat_mul(1.0, &h, &layer.w.t(), 0.0, &mut z);
        z += &layer.b;
        z
    }

    /// Inference logits (no dropout).
    pub fn logits(&self, x: ArrayView2<f64>) -> Array1<f64> {
        let last = self.layers.len() - 1;
        let mut h = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = Self::affine(layer, h.view());
            if l < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            h = z;
        }
        h.column(0).to_owned()
    }

    /// Forward pass keeping what backprop needs. `dropout` is the drop
    /// probability applied to every hidden layer's output.
    pub fn forward_train(&self, x: Array2<f64>, dropout: f64, rng: &mut impl Rng) -> ForwardCache {
        let last = self.layers.len() - 1;
        let keep_scale = 1.0 / (1.0 - dropout);
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut gates = Vec::with_capacity(last);
        let mut h = x;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = Self::affine(layer, h.view());
            inputs.push(h);
            if l == last {
                return ForwardCache { inputs, gates, logits: z.column(0).to_owned() };
            }
            let mut gate = Array2::zeros(z.raw_dim());
            for (g, v) in gate.iter_mut().zip(z.iter_mut()) {
                let kept = dropout == 0.0 || rng.random::<f64>() >= dropout;
                if *v > 0.0 && kept {
                    *g = if dropout == 0.0 { 1.0 } else { keep_scale };
                    *v *= *g;
                } else {
                    *v = 0.0;
                }
            }
            gates.push(gate);
            h = z;
        }
        unreachable!("network has at least one layer")
    }

    /// Mean BCE loss over the batch and its parameter gradients.
    pub fn backward(&self, cache: &ForwardCache, labels: &[bool]) -> (f64, Gradients) {
        let n = labels.len() as f64;
        let loss = cache
            .logits
            .iter()
            .zip(labels)
            .map(|(&z, &y)| bce_with_logit(z, y))
            .sum::<f64>()
            / n;
        let mut dz = Array2::from_shape_fn((labels.len(), 1), |(r, _)| {
            (sigmoid(cache.logits[r]) - if labels[r] { 1.0 } else { 0.0 }) / n
        });
        let depth = self.layers.len();
        let mut gw = vec![Array2::zeros((0, 0)); depth];
        let mut gb = vec![Array1::zeros(0); depth];
        for l in (0..depth).rev() {
            let h = &cache.inputs[l];
            let mut w = Array2::zeros(self.layers[l].w.raw_dim());
            general_mat_mul(1.0, &dz.t(), h, 0.0, &mut w);
            gw[l] = w;
            gb[l] = dz.sum_axis(Axis(0));
            if l > 0 {
                let mut dh = dz.dot(&self.layers[l].w);
                dh *= &cache.gates[l - 1];
                dz = dh;
            }
        }
        (loss, Gradients { w: gw, b: gb })
    }
}

/// Result of comparing backprop gradients with central finite differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    /// Parameters compared.
    pub checked: usize,
    /// Parameters whose +/- step moved some ReLU pre-activation across zero;
    /// the finite difference is meaningless there, so they are not compared.
    pub skipped_kinks: usize,
}

pub const GRADIENT_CHECK_STEP: f64 = 1e-4;
const GRADIENT_FLOOR: f64 = 1e-10;

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    if analytic.abs() < GRADIENT_FLOOR && numeric.abs() < GRADIENT_FLOOR {
        return 0.0;
    }
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs())
}

/// Checks every parameter gradient of the mean BCE loss (dropout off) on
/// `batch` against a central difference with step 1e-4, evaluated on an f64
/// shadow copy of the parameters.
///
/// The numeric side never calls backprop. Each perturbation is pushed forward
/// as a difference from the unperturbed activations and the loss change is
/// evaluated directly, so gradients far below the loss magnitude survive
/// without cancellation.
pub fn gradient_check(model: &MlpModel, batch: &[(Vec<f32>, bool)]) -> Result<GradientCheck> {
    if batch.is_empty() {
        return Err(Error::Empty("gradient check batch"));
    }
    let dim = model.input_dim();
    if let Some((x, _)) = batch.iter().find(|(x, _)| x.len() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, actual: x.len() });
    }
    let net = Network::from_model(model);
    let labels: Vec<bool> = batch.iter().map(|(_, y)| *y).collect();
    let x = Array2::from_shape_fn((batch.len(), dim), |(r, c)| f64::from(batch[r].0[c]));

    // no dropout, so the generator is never drawn from
    let cache = net.forward_train(x.clone(), 0.0, &mut crate::rng::seeded(0));
    let (_, grads) = net.backward(&cache, &labels);

    let probe = FdProbe::new(&net, x, labels);
    let mut report = GradientCheck { max_relative_error: 0.0, checked: 0, skipped_kinks: 0 };
    let mut record = |analytic: f64, plus: Option<f64>, minus: Option<f64>| match (plus, minus) {
        (Some(lp), Some(lm)) => {
            let numeric = (lp - lm) / (2.0 * GRADIENT_CHECK_STEP);
            report.checked += 1;
            report.max_relative_error = report.max_relative_error.max(relative_error(analytic, numeric));
        }
        _ => report.skipped_kinks += 1,
    };
    for (l, layer) in net.layers.iter().enumerate() {
        for j in 0..layer.w.nrows() {
            for i in 0..layer.w.ncols() {
                let input = probe.pre[l].0.column(i);
                let plus = probe.unit_delta_loss(l, j, input.mapv(|v| v * GRADIENT_CHECK_STEP).view());
                let minus = probe.unit_delta_loss(l, j, input.mapv(|v| -v * GRADIENT_CHECK_STEP).view());
                record(grads.w[l][[j, i]], plus, minus);
            }
            let n = probe.labels.len();
            let plus = probe.unit_delta_loss(l, j, Array1::from_elem(n, GRADIENT_CHECK_STEP).view());
            let minus = probe.unit_delta_loss(l, j, Array1::from_elem(n, -GRADIENT_CHECK_STEP).view());
            record(grads.b[l][j], plus, minus);
        }
    }
    Ok(report)
}

/// Forward-only loss evaluator for single-parameter perturbations.
struct FdProbe<'a> {
    net: &'a Network,
    labels: Vec<bool>,
    /// Per layer: (input activations, pre-activations) of the unperturbed pass.
    pre: Vec<(Array2<f64>, Array2<f64>)>,
}

impl<'a> FdProbe<'a> {
    fn new(net: &'a Network, x: Array2<f64>, labels: Vec<bool>) -> Self {
        let last = net.layers.len() - 1;
        let mut pre = Vec::with_capacity(net.layers.len());
        let mut h = x;
        for (l, layer) in net.layers.iter().enumerate() {
            let z = Network::affine(layer, h.view());
            let next = if l < last { z.mapv(|v| v.max(0.0)) } else { z.clone() };
            pre.push((h, z));
            h = next;
        }
        Self { net, labels, pre }
    }

    /// Change in mean loss after adding `delta[b]` to pre-activation
    /// `(layer, unit)` of each example. `None` when any hidden pre-activation
    /// changes sign.
    fn unit_delta_loss(&self, layer: usize, unit: usize, delta: ndarray::ArrayView1<f64>) -> Option<f64> {
        let last = self.net.layers.len() - 1;
        if layer == last {
            return Some(self.mean_loss_change(delta));
        }
        let crosses = |old: f64, d: f64| (old > 0.0) != (old + d > 0.0);
        let z_old = self.pre[layer].1.column(unit);
        if z_old.iter().zip(delta.iter()).any(|(&o, &d)| crosses(o, d)) {
            return None;
        }
        // Only one input of the next layer moved: rank-one change of its
        // pre-activations.
        let next = layer + 1;
        let col = self.net.layers[next].w.column(unit);
        let mut dz = Array2::from_shape_fn((delta.len(), col.len()), |(b, k)| {
            if z_old[b] > 0.0 {
                delta[b] * col[k]
            } else {
                0.0
            }
        });
        for l in next..=last {
            if l == last {
                return Some(self.mean_loss_change(dz.column(0)));
            }
            let old = &self.pre[l].1;
            if old.iter().zip(dz.iter()).any(|(&o, &d)| crosses(o, d)) {
                return None;
            }
            let dh = Array2::from_shape_fn(old.dim(), |(b, k)| if old[[b, k]] > 0.0 { dz[[b, k]] } else { 0.0 });
            let w = &self.net.layers[l + 1].w;
            let mut out = Array2::zeros((dh.nrows(), w.nrows()));
            general_mat_mul(1.0, &dh, &w.t(), 0.0, &mut out);
            dz = out;
        }
        unreachable!()
    }

    /// Mean of `bce(z + d) - bce(z)` over the batch, using
    /// `softplus(z + d) - softplus(z) = ln(1 + sigmoid(z) * (e^d - 1))`.
    fn mean_loss_change(&self, dlogits: ndarray::ArrayView1<f64>) -> f64 {
        let logits = self.pre[self.net.layers.len() - 1].1.column(0);
        logits
            .iter()
            .zip(dlogits.iter())
            .zip(&self.labels)
            .map(|((&z, &d), &y)| (sigmoid(z) * d.exp_m1()).ln_1p() - if y { d } else { 0.0 })
            .sum::<f64>()
            / self.labels.len() as f64
    }
}

/// Adam with decoupled weight decay on the weight matrices.
pub(crate) struct Adam {
    lr: f64,
    weight_decay: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    mw: Vec<Array2<f64>>,
    vw: Vec<Array2<f64>>,
    mb: Vec<Array1<f64>>,
    vb: Vec<Array1<f64>>,
}

impl Adam {
    pub fn new(net: &Network, lr: f64, weight_decay: f64) -> Self {
        let mw: Vec<_> = net.layers.iter().map(|l| Array2::zeros(l.w.raw_dim())).collect();
        let mb: Vec<_> = net.layers.iter().map(|l| Array1::zeros(l.b.raw_dim())).collect();
        Self {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            vw: mw.clone(),
            vb: mb.clone(),
            mw,
            mb,
        }
    }

    pub fn step(&mut self, net: &mut Network, grads: &Gradients) {
        self.t += 1;
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let decay = 1.0 - lr * self.weight_decay;
        for (l, layer) in net.layers.iter_mut().enumerate() {
            ndarray::Zip::from(&mut layer.w)
                .and(&mut self.mw[l])
                .and(&mut self.vw[l])
                .and(&grads.w[l])
                .for_each(|w, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *w = *w * decay - lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
            ndarray::Zip::from(&mut layer.b)
                .and(&mut self.mb[l])
                .and(&mut self.vb[l])
                .and(&grads.b[l])
                .for_each(|w, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
        }
    }
}
