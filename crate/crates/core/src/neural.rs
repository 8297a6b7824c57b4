//! Dense neural layers with hand-written gradients: the GCN autoencoder that
//! drives mask construction, and a small two-layer GCN classifier.
//!
//! A GCN layer computes `σ(Â H W + b)` with `Â` the renormalized propagation
//! matrix from [`gcn_propagation_matrix`]. Everything runs single-threaded,
//! so a fixed seed reproduces training bit for bit.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, shape_err, Error, Result};
use crate::graph::{gcn_propagation_matrix, FeatureMatrix, FeatureRole, Graph, SparseMatrix};
use crate::io;

/// Weight matrix and bias of one layer; the layer maps `fan_in → fan_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    /// Weights uniform in `±√(6/(fan_in + fan_out))`, zero bias.
    pub fn glorot(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Self {
            weight: Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-limit..=limit)),
            bias: Array1::zeros(fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.ncols()
    }

    fn is_finite(&self) -> bool {
        self.weight.iter().chain(&self.bias).all(|v| v.is_finite())
    }

    fn affine(&self, h: ArrayView2<f64>) -> Array2<f64> {
        h.dot(&self.weight) + &self.bias
    }
}

/// Uniform access to a model's layers for optimizers and checkpoints.
pub trait Layers {
    const KIND: &'static str;
    const NAMES: &'static [&'static str];

    fn layers(&self) -> Vec<&Dense>;
    fn layers_mut(&mut self) -> Vec<&mut Dense>;
    fn from_layers(layers: Vec<Dense>) -> Result<Self>
    where
        Self: Sized;

    fn parameter_count(&self) -> usize {
        self.layers().iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Writes `manifest.txt` plus `<layer>_weight.csv` and `<layer>_bias.csv`.
    fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut manifest = vec![("model".to_string(), Self::KIND.to_string())];
        for (name, layer) in Self::NAMES.iter().zip(self.layers()) {
            manifest.push((format!("{name}.shape"), format!("{}x{}", layer.fan_in(), layer.fan_out())));
            io::write_dense_csv(&dir.join(format!("{name}_weight.csv")), layer.weight.view(), false)?;
            let bias = layer.bias.view().insert_axis(Axis(0));
            io::write_dense_csv(&dir.join(format!("{name}_bias.csv")), bias, false)?;
        }
        io::write_manifest(&dir.join("manifest.txt"), &manifest)
    }

    fn load(dir: &Path) -> Result<Self>
    where
        Self: Sized,
    {
        let manifest = io::read_manifest(&dir.join("manifest.txt"))?;
        let kind = manifest.iter().find(|(k, _)| k == "model").map(|(_, v)| v.as_str());
        if kind != Some(Self::KIND) {
            return Err(invalid("checkpoint", format!("expected model `{}`, found {kind:?}", Self::KIND)));
        }
        let mut layers = Vec::with_capacity(Self::NAMES.len());
        for name in Self::NAMES {
            let weight = io::read_dense_csv(&dir.join(format!("{name}_weight.csv")), false)?;
            let bias = io::read_dense_csv(&dir.join(format!("{name}_bias.csv")), false)?;
            if bias.nrows() != 1 || bias.ncols() != weight.ncols() {
                return Err(shape_err(format!("1x{}", weight.ncols()), format!("{}x{}", bias.nrows(), bias.ncols())));
            }
            layers.push(Dense {
                weight,
                bias: bias.row(0).to_owned(),
            });
        }
        Self::from_layers(layers)
    }
}

fn check_chain(layers: &[Dense]) -> Result<()> {
    for pair in layers.windows(2) {
        if pair[0].fan_out() != pair[1].fan_in() {
            return Err(shape_err(
                format!("layer input {}", pair[0].fan_out()),
                format!("layer input {}", pair[1].fan_in()),
            ));
        }
    }
    if layers.iter().any(|l| l.bias.len() != l.fan_out()) {
        return Err(invalid("bias", "length must equal the layer output size"));
    }
    Ok(())
}

/// Encoder: two GCN layers `d → h → h` with ReLU. Decoder: dense `h → h`
/// with ReLU, then a linear `h → d` output.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnAutoencoder {
    pub enc1: Dense,
    pub enc2: Dense,
    pub dec1: Dense,
    pub dec2: Dense,
}

impl GcnAutoencoder {
    pub fn new(input_dim: usize, hidden: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || hidden == 0 {
            return Err(invalid("hidden", "layer sizes must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            enc1: Dense::glorot(input_dim, hidden, &mut rng),
            enc2: Dense::glorot(hidden, hidden, &mut rng),
            dec1: Dense::glorot(hidden, hidden, &mut rng),
            dec2: Dense::glorot(hidden, input_dim, &mut rng),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.enc1.fan_in()
    }

    pub fn hidden(&self) -> usize {
        self.enc1.fan_out()
    }
}

impl Layers for GcnAutoencoder {
    const KIND: &'static str = "gcn_autoencoder";
    const NAMES: &'static [&'static str] = &["enc1", "enc2", "dec1", "dec2"];

    fn layers(&self) -> Vec<&Dense> {
        vec![&self.enc1, &self.enc2, &self.dec1, &self.dec2]
    }

    fn layers_mut(&mut self) -> Vec<&mut Dense> {
        vec![&mut self.enc1, &mut self.enc2, &mut self.dec1, &mut self.dec2]
    }

    fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        check_chain(&layers)?;
        let [enc1, enc2, dec1, dec2]: [Dense; 4] = layers
            .try_into()
            .map_err(|v: Vec<Dense>| invalid("layers", format!("autoencoder needs 4 layers, got {}", v.len())))?;
        if dec2.fan_out() != enc1.fan_in() {
            return Err(shape_err(enc1.fan_in(), dec2.fan_out()));
        }
        Ok(Self { enc1, enc2, dec1, dec2 })
    }
}

/// Two GCN layers `d → h → classes`, ReLU in between, softmax output.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnClassifier {
    pub layer1: Dense,
    pub layer2: Dense,
}

impl GcnClassifier {
    pub fn new(input_dim: usize, hidden: usize, classes: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || hidden == 0 || classes == 0 {
            return Err(invalid("hidden", "layer sizes must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            layer1: Dense::glorot(input_dim, hidden, &mut rng),
            layer2: Dense::glorot(hidden, classes, &mut rng),
        })
    }

    pub fn classes(&self) -> usize {
        self.layer2.fan_out()
    }
}

impl Layers for GcnClassifier {
    const KIND: &'static str = "gcn_classifier";
    const NAMES: &'static [&'static str] = &["layer1", "layer2"];

    fn layers(&self) -> Vec<&Dense> {
        vec![&self.layer1, &self.layer2]
    }

    fn layers_mut(&mut self) -> Vec<&mut Dense> {
        vec![&mut self.layer1, &mut self.layer2]
    }

    fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        check_chain(&layers)?;
        let [layer1, layer2]: [Dense; 2] = layers
            .try_into()
            .map_err(|v: Vec<Dense>| invalid("layers", format!("classifier needs 2 layers, got {}", v.len())))?;
        Ok(Self { layer1, layer2 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossMode {
    #[default]
    Mse,
    Mae,
}

impl std::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mse" => Ok(Self::Mse),
            "mae" => Ok(Self::Mae),
            _ => Err(invalid("loss", format!("expected `mse` or `mae`, got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Coefficient `λ` of the `½λ‖W‖²` penalty on weight matrices (biases are not decayed).
    pub weight_decay: f64,
    pub epochs: usize,
    pub loss: LossMode,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            weight_decay: 5e-4,
            epochs: 500,
            loss: LossMode::Mse,
            hidden: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning_rate", format!("must be > 0, got {}", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(invalid("weight_decay", format!("must be >= 0, got {}", self.weight_decay)));
        }
        if self.epochs < 1 {
            return Err(invalid("epochs", "must be at least 1"));
        }
        if self.hidden < 1 {
            return Err(invalid("hidden", "must be at least 1"));
        }
        Ok(())
    }
}

/// Loss recorded before each update, plus the loss of the returned model.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub losses: Vec<f64>,
    pub final_loss: f64,
}

impl TrainingLog {
    pub fn initial_loss(&self) -> f64 {
        self.losses.first().copied().unwrap_or(self.final_loss)
    }

    /// CSV with header `epoch,loss`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epoch", "loss"])?;
        for (i, l) in self.losses.iter().enumerate() {
            w.write_record([i.to_string(), l.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Loss value and gradient with respect to every layer.
#[derive(Debug, Clone)]
pub struct LossGrad<M> {
    /// Data term only (reconstruction or cross-entropy).
    pub loss: f64,
    /// `½λ Σ‖W‖²`.
    pub penalty: f64,
    pub grad: M,
}

impl<M> LossGrad<M> {
    pub fn total(&self) -> f64 {
        self.loss + self.penalty
    }
}

fn relu(x: Array2<f64>) -> Array2<f64> {
    x.mapv_into(|v| v.max(0.0))
}

/// Zeroes the gradient wherever the pre-activation was not positive.
fn relu_backward(grad: &mut Array2<f64>, pre: &Array2<f64>) {
    Zip::from(grad).and(pre).for_each(|g, &p| {
        if p <= 0.0 {
            *g = 0.0;
        }
    });
}

fn check_propagation(a_hat: &SparseMatrix, h: ArrayView2<f64>) -> Result<()> {
    let (r, c) = a_hat.shape();
    if r != c || c != h.nrows() {
        return Err(shape_err(format!("{c}x{c} propagation for {} rows", h.nrows()), format!("{r}x{c}")));
    }
    Ok(())
}

fn check_input(layer: &Dense, h: ArrayView2<f64>) -> Result<()> {
    if h.ncols() != layer.fan_in() {
        return Err(shape_err(format!("{} columns", layer.fan_in()), format!("{} columns", h.ncols())));
    }
    Ok(())
}

/// `Â H W`, ReLU-activated when `activate` is set.
pub fn gcn_layer_forward(a_hat: &SparseMatrix, h: ArrayView2<f64>, w: ArrayView2<f64>, activate: bool) -> Result<Array2<f64>> {
    check_propagation(a_hat, h)?;
    if h.ncols() != w.nrows() {
        return Err(shape_err(format!("{} weight rows", h.ncols()), format!("{} weight rows", w.nrows())));
    }
    let out = a_hat.matmul(h).dot(&w);
    Ok(if activate { relu(out) } else { out })
}

/// Intermediate values of one autoencoder pass.
struct GaeCache {
    ax: Array2<f64>,
    p1: Array2<f64>,
    ah1: Array2<f64>,
    p2: Array2<f64>,
    h2: Array2<f64>,
    p3: Array2<f64>,
    h3: Array2<f64>,
    out: Array2<f64>,
}

fn gae_pass(model: &GcnAutoencoder, a_hat: &SparseMatrix, x: ArrayView2<f64>) -> Result<GaeCache> {
    check_propagation(a_hat, x)?;
    check_input(&model.enc1, x)?;
    let ax = a_hat.matmul(x);
    let p1 = model.enc1.affine(ax.view());
    let h1 = relu(p1.clone());
    let ah1 = a_hat.matmul(h1.view());
    let p2 = model.enc2.affine(ah1.view());
    let h2 = relu(p2.clone());
    let p3 = model.dec1.affine(h2.view());
    let h3 = relu(p3.clone());
    let out = model.dec2.affine(h3.view());
    Ok(GaeCache {
        ax,
        p1,
        ah1,
        p2,
        h2,
        p3,
        h3,
        out,
    })
}

/// Reconstruction `X′` of `x` through the autoencoder.
pub fn gae_forward(model: &GcnAutoencoder, a_hat: &SparseMatrix, x: ArrayView2<f64>) -> Result<FeatureMatrix> {
    FeatureMatrix::new(gae_pass(model, a_hat, x)?.out, FeatureRole::Reconstruction)
}

/// Mean squared or mean absolute entry difference.
pub fn reconstruction_loss(x: ArrayView2<f64>, recon: ArrayView2<f64>, mode: LossMode) -> Result<f64> {
    if x.dim() != recon.dim() {
        return Err(shape_err(format!("{:?}", x.dim()), format!("{:?}", recon.dim())));
    }
    let n = x.len().max(1) as f64;
    let sum: f64 = Zip::from(&x).and(&recon).fold(0.0, |acc, a, b| {
        let r = b - a;
        acc + match mode {
            LossMode::Mse => r * r,
            LossMode::Mae => r.abs(),
        }
    });
    Ok(sum / n)
}

fn decay_penalty(layers: &[&Dense], weight_decay: f64) -> f64 {
    0.5 * weight_decay * layers.iter().map(|l| l.weight.iter().map(|w| w * w).sum::<f64>()).sum::<f64>()
}

fn dense_grad(input: ArrayView2<f64>, g: &Array2<f64>, layer: &Dense, weight_decay: f64) -> Dense {
    Dense {
        weight: input.t().dot(g) + &(&layer.weight * weight_decay),
        bias: g.sum_axis(Axis(0)),
    }
}

/// Reconstruction loss of `x` and its gradient with respect to all weights
/// and biases, including the weight-decay term.
pub fn gae_loss_and_grad(
    model: &GcnAutoencoder,
    a_hat: &SparseMatrix,
    x: ArrayView2<f64>,
    mode: LossMode,
    weight_decay: f64,
) -> Result<LossGrad<GcnAutoencoder>> {
    let c = gae_pass(model, a_hat, x)?;
    let loss = reconstruction_loss(x, c.out.view(), mode)?;
    let n = x.len().max(1) as f64;
    let g4 = Zip::from(&c.out).and(&x).map_collect(|&o, &t| match mode {
        LossMode::Mse => 2.0 * (o - t) / n,
        // Subgradient 0 at an exact match.
        LossMode::Mae => (o - t).signum() * f64::from(o != t) / n,
    });
    let dec2 = dense_grad(c.h3.view(), &g4, &model.dec2, weight_decay);
    let mut g3 = g4.dot(&model.dec2.weight.t());
    relu_backward(&mut g3, &c.p3);
    let dec1 = dense_grad(c.h2.view(), &g3, &model.dec1, weight_decay);
    let mut g2 = g3.dot(&model.dec1.weight.t());
    relu_backward(&mut g2, &c.p2);
    let enc2 = dense_grad(c.ah1.view(), &g2, &model.enc2, weight_decay);
    // Â is symmetric, so Âᵀ G = Â G.
    let mut g1 = a_hat.matmul(g2.dot(&model.enc2.weight.t()).view());
    relu_backward(&mut g1, &c.p1);
    let enc1 = dense_grad(c.ax.view(), &g1, &model.enc1, weight_decay);
    Ok(LossGrad {
        loss,
        penalty: decay_penalty(&model.layers(), weight_decay),
        grad: GcnAutoencoder { enc1, enc2, dec1, dec2 },
    })
}

fn descend<M: Layers>(model: &mut M, grad: &M, lr: f64) {
    for (p, g) in model.layers_mut().into_iter().zip(grad.layers()) {
        p.weight.scaled_add(-lr, &g.weight);
        p.bias.scaled_add(-lr, &g.bias);
    }
}

fn gradient_descent<M: Layers>(
    model: &mut M,
    cfg: &TrainConfig,
    mut step: impl FnMut(&M) -> Result<LossGrad<M>>,
) -> Result<TrainingLog> {
    let mut log = TrainingLog::default();
    for epoch in 0..cfg.epochs {
        let lg = step(model)?;
        if !lg.total().is_finite() {
            return Err(Error::Diverged { epoch });
        }
        log.losses.push(lg.loss);
        descend(model, &lg.grad, cfg.learning_rate);
        if !model.layers().iter().all(|l| l.is_finite()) {
            return Err(Error::Diverged { epoch });
        }
        if epoch % 100 == 0 {
            log::debug!("epoch {epoch}: loss {:.6e}", lg.loss);
        }
    }
    let last = step(model)?;
    if !last.total().is_finite() {
        return Err(Error::Diverged { epoch: cfg.epochs });
    }
    log.final_loss = last.loss;
    Ok(log)
}

/// Trains the autoencoder on `x` by full-batch gradient descent with weight
/// decay. Errors with the epoch index if the loss stops being finite.
pub fn train_gae(g: &Graph, x: ArrayView2<f64>, cfg: &TrainConfig) -> Result<(GcnAutoencoder, TrainingLog)> {
    cfg.validate()?;
    if x.nrows() != g.n() {
        return Err(shape_err(format!("{} rows", g.n()), format!("{} rows", x.nrows())));
    }
    let a_hat = gcn_propagation_matrix(g);
    let mut model = GcnAutoencoder::new(x.ncols(), cfg.hidden, cfg.seed)?;
    let log = gradient_descent(&mut model, cfg, |m| gae_loss_and_grad(m, &a_hat, x, cfg.loss, cfg.weight_decay))?;
    Ok((model, log))
}

/// Row-wise softmax, shifted by the row maximum for stability.
pub fn softmax_rows(logits: ArrayView2<f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row /= s;
    }
    out
}

struct ClassifierCache {
    ax: Array2<f64>,
    p1: Array2<f64>,
    ah1: Array2<f64>,
    probs: Array2<f64>,
}

fn classifier_pass(model: &GcnClassifier, a_hat: &SparseMatrix, x: ArrayView2<f64>) -> Result<ClassifierCache> {
    check_propagation(a_hat, x)?;
    check_input(&model.layer1, x)?;
    let ax = a_hat.matmul(x);
    let p1 = model.layer1.affine(ax.view());
    let ah1 = a_hat.matmul(relu(p1.clone()).view());
    let probs = softmax_rows(model.layer2.affine(ah1.view()).view());
    Ok(ClassifierCache { ax, p1, ah1, probs })
}

/// Class probabilities, one row per node.
pub fn classifier_forward(model: &GcnClassifier, a_hat: &SparseMatrix, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    Ok(classifier_pass(model, a_hat, x)?.probs)
}

fn check_labels(labels: &[usize], train: &[usize], n: usize, classes: usize) -> Result<()> {
    if labels.len() != n {
        return Err(shape_err(format!("{n} labels"), format!("{} labels", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(invalid("labels", format!("label {bad} outside [0, {classes})")));
    }
    if let Some(&bad) = train.iter().find(|&&i| i >= n) {
        return Err(Error::NodeOutOfRange { index: bad, n });
    }
    if train.is_empty() {
        return Err(invalid("train", "training split is empty"));
    }
    Ok(())
}

/// Mean cross-entropy over the `train` nodes and its gradient.
pub fn classifier_loss_and_grad(
    model: &GcnClassifier,
    a_hat: &SparseMatrix,
    x: ArrayView2<f64>,
    labels: &[usize],
    train: &[usize],
    weight_decay: f64,
) -> Result<LossGrad<GcnClassifier>> {
    check_labels(labels, train, x.nrows(), model.classes())?;
    let c = classifier_pass(model, a_hat, x)?;
    let m = train.len() as f64;
    let mut g2 = Array2::zeros(c.probs.dim());
    let mut loss = 0.0;
    for &i in train {
        loss -= c.probs[[i, labels[i]]].ln();
        let mut row = g2.row_mut(i);
        row.scaled_add(1.0 / m, &c.probs.row(i));
        row[labels[i]] -= 1.0 / m;
    }
    let layer2 = dense_grad(c.ah1.view(), &g2, &model.layer2, weight_decay);
    let mut g1 = a_hat.matmul(g2.dot(&model.layer2.weight.t()).view());
    relu_backward(&mut g1, &c.p1);
    let layer1 = dense_grad(c.ax.view(), &g1, &model.layer1, weight_decay);
    Ok(LossGrad {
        loss: loss / m,
        penalty: decay_penalty(&model.layers(), weight_decay),
        grad: GcnClassifier { layer1, layer2 },
    })
}

/// Trains a classifier with `classes` outputs on the labelled `train` nodes.
/// `cfg.loss` is ignored; the data term is cross-entropy.
pub fn train_classifier(
    g: &Graph,
    u: ArrayView2<f64>,
    labels: &[usize],
    train: &[usize],
    classes: usize,
    cfg: &TrainConfig,
) -> Result<(GcnClassifier, TrainingLog)> {
    cfg.validate()?;
    if u.nrows() != g.n() {
        return Err(shape_err(format!("{} rows", g.n()), format!("{} rows", u.nrows())));
    }
    check_labels(labels, train, g.n(), classes)?;
    let a_hat = gcn_propagation_matrix(g);
    let mut model = GcnClassifier::new(u.ncols(), cfg.hidden, classes, cfg.seed)?;
    let log = gradient_descent(&mut model, cfg, |m| {
        classifier_loss_and_grad(m, &a_hat, u, labels, train, cfg.weight_decay)
    })?;
    Ok((model, log))
}

/// Most probable class per node; ties go to the lowest index.
pub fn classify(model: &GcnClassifier, g: &Graph, u: ArrayView2<f64>) -> Result<Vec<usize>> {
    let probs = classifier_forward(model, &gcn_propagation_matrix(g), u)?;
    Ok(probs
        .rows()
        .into_iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0
        })
        .collect())
}

/// Fraction of `nodes` whose prediction matches the label; `None` if empty.
pub fn accuracy(predicted: &[usize], labels: &[usize], nodes: &[usize]) -> Option<f64> {
    if nodes.is_empty() {
        return None;
    }
    let hits = nodes.iter().filter(|&&i| predicted[i] == labels[i]).count();
    Some(hits as f64 / nodes.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use crate::graph::SelfLoops;

    fn path2() -> SparseMatrix {
        SparseMatrix::from_triplets(2, 2, &[(0, 0, 0.5), (0, 1, 0.5), (1, 0, 0.5), (1, 1, 0.5)])
    }

    fn ring(n: usize) -> Graph {
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        Graph::from_edges(n, &edges, SelfLoops::Reject).unwrap()
    }

    #[test]
    fn layer_examples() {
        let one = SparseMatrix::identity(1);
        let h = array![[1.0, 2.0]];
        let out = gcn_layer_forward(&one, h.view(), Array2::eye(2).view(), true).unwrap();
        assert_eq!(out, h);
        let out = gcn_layer_forward(&one, h.view(), Array2::zeros((2, 3)).view(), true).unwrap();
        assert_eq!(out, Array2::zeros((1, 3)));
        let out = gcn_layer_forward(&path2(), array![[2.0], [4.0]].view(), array![[1.0]].view(), false).unwrap();
        assert_eq!(out, array![[3.0], [3.0]]);
        assert!(gcn_layer_forward(&path2(), h.view(), Array2::eye(2).view(), false).is_err());
        assert!(gcn_layer_forward(&one, h.view(), Array2::eye(3).view(), false).is_err());
    }

    #[test]
    fn relu_keeps_activations_nonnegative() {
        let h = Array2::from_shape_fn((2, 3), |(i, j)| i as f64 - j as f64);
        let w = Array2::from_shape_fn((3, 4), |(i, j)| (i as f64 - 1.5) * (j as f64 + 0.5));
        let out = gcn_layer_forward(&path2(), h.view(), w.view(), true).unwrap();
        assert!(out.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn autoencoder_shapes() {
        let g = ring(7);
        let a = gcn_propagation_matrix(&g);
        let x = Array2::from_shape_fn((7, 5), |(i, j)| (i * j) as f64 * 0.1);
        let mut m = GcnAutoencoder::new(5, 3, 1).unwrap();
        assert_eq!(gae_forward(&m, &a, x.view()).unwrap().shape(), (7, 5));
        m.dec2 = Dense::zeros(3, 5);
        assert_eq!(gae_forward(&m, &a, x.view()).unwrap().values(), &Array2::zeros((7, 5)));
        assert!(gae_forward(&m, &a, Array2::zeros((7, 4)).view()).is_err());
        assert!(gae_forward(&m, &a, Array2::zeros((6, 5)).view()).is_err());
    }

    #[test]
    fn glorot_bounds_and_seed() {
        let a = GcnAutoencoder::new(10, 4, 3).unwrap();
        assert_eq!(a, GcnAutoencoder::new(10, 4, 3).unwrap());
        assert_ne!(a, GcnAutoencoder::new(10, 4, 4).unwrap());
        let limit = (6.0f64 / 14.0).sqrt();
        assert!(a.enc1.weight.iter().all(|w| w.abs() <= limit));
        assert!(a.enc1.bias.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn loss_examples() {
        let x = Array2::zeros((2, 3));
        let mut y = x.clone();
        assert_eq!(reconstruction_loss(x.view(), y.view(), LossMode::Mse).unwrap(), 0.0);
        assert_eq!(reconstruction_loss(x.view(), y.view(), LossMode::Mae).unwrap(), 0.0);
        y[[1, 2]] = 3.0;
        assert_eq!(reconstruction_loss(x.view(), y.view(), LossMode::Mse).unwrap(), 1.5);
        assert_eq!(reconstruction_loss(x.view(), y.view(), LossMode::Mae).unwrap(), 0.5);
        assert!(reconstruction_loss(x.view(), Array2::zeros((3, 2)).view(), LossMode::Mse).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig { epochs: 0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { learning_rate: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        assert_eq!("MAE".parse::<LossMode>().unwrap(), LossMode::Mae);
        assert!("l3".parse::<LossMode>().is_err());
    }

    #[test]
    fn softmax_and_zero_model() {
        let p = softmax_rows(array![[1.0, 2.0, 3.0], [1000.0, 0.0, -1000.0]].view());
        for r in p.rows() {
            assert_abs_diff_eq!(r.sum(), 1.0, epsilon = 1e-10);
        }
        let g = ring(5);
        let model = GcnClassifier {
            layer1: Dense::zeros(3, 4),
            layer2: Dense::zeros(4, 3),
        };
        let x = Array2::from_elem((5, 3), 1.5);
        let p = classifier_forward(&model, &gcn_propagation_matrix(&g), x.view()).unwrap();
        assert_abs_diff_eq!(p, Array2::from_elem((5, 3), 1.0 / 3.0), epsilon = 1e-15);
    }

    #[test]
    fn label_validation() {
        let g = ring(4);
        let x = Array2::ones((4, 2));
        let cfg = TrainConfig { epochs: 1, ..Default::default() };
        assert!(train_classifier(&g, x.view(), &[0, 1, 2, 0], &[0, 1], 2, &cfg).is_err());
        assert!(train_classifier(&g, x.view(), &[0, 1, 1], &[0, 1], 2, &cfg).is_err());
        assert!(train_classifier(&g, x.view(), &[0, 1, 1, 0], &[4], 2, &cfg).is_err());
        assert!(train_classifier(&g, x.view(), &[0, 1, 1, 0], &[0, 1], 2, &cfg).is_ok());
    }

    #[test]
    fn training_is_deterministic() {
        let g = ring(6);
        let x = Array2::from_shape_fn((6, 3), |(i, j)| ((i + 2 * j) % 4) as f64);
        let cfg = TrainConfig { epochs: 20, ..Default::default() };
        let (a, la) = train_gae(&g, x.view(), &cfg).unwrap();
        let (b, lb) = train_gae(&g, x.view(), &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
        assert_eq!(la.losses.len(), 20);
    }

    #[test]
    fn divergence_reports_epoch() {
        let g = ring(6);
        let x = Array2::from_shape_fn((6, 3), |(i, j)| 1e3 * ((i + 2 * j) % 4) as f64);
        let cfg = TrainConfig {
            epochs: 200,
            learning_rate: 10.0,
            ..Default::default()
        };
        assert!(matches!(train_gae(&g, x.view(), &cfg), Err(Error::Diverged { .. })));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = GcnAutoencoder::new(6, 3, 9).unwrap();
        m.save(dir.path()).unwrap();
        assert_eq!(GcnAutoencoder::load(dir.path()).unwrap(), m);
        assert!(GcnClassifier::load(dir.path()).is_err());
        let c = GcnClassifier::new(6, 4, 2, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        c.save(dir.path()).unwrap();
        assert_eq!(GcnClassifier::load(dir.path()).unwrap(), c);
    }

    /// Largest relative gap between analytic gradients and central
    /// differences of `total`, over every weight and bias.
    fn max_fd_error<M: Layers + Clone>(model: &M, analytic: &M, total: impl Fn(&M) -> f64) -> f64 {
        let eps = 1e-5;
        let mut worst: f64 = 0.0;
        for li in 0..model.layers().len() {
            let shape = model.layers()[li].weight.dim();
            let n_bias = model.layers()[li].bias.len();
            let coords = (0..shape.0 * shape.1).map(|k| (true, k)).chain((0..n_bias).map(|k| (false, k)));
            for (is_weight, k) in coords {
                let poke = |delta: f64| {
                    let mut m = model.clone();
                    let layer = &mut m.layers_mut()[li];
                    if is_weight {
                        layer.weight[[k / shape.1, k % shape.1]] += delta;
                    } else {
                        layer.bias[k] += delta;
                    }
                    total(&m)
                };
                let fd = (poke(eps) - poke(-eps)) / (2.0 * eps);
                let a = analytic.layers()[li];
                let an = if is_weight { a.weight[[k / shape.1, k % shape.1]] } else { a.bias[k] };
                worst = worst.max((an - fd).abs() / an.abs().max(fd.abs()).max(1e-6));
            }
        }
        worst
    }

    #[test]
    fn autoencoder_gradients_match_finite_differences() {
        let g = Graph::from_edges(3, &[(0, 1), (1, 2)], SelfLoops::Reject).unwrap();
        let a = gcn_propagation_matrix(&g);
        let x = array![[0.3, -1.2], [0.8, 0.4], [-0.5, 1.1]];
        for mode in [LossMode::Mse, LossMode::Mae] {
            for seed in 0..3 {
                let mut m = GcnAutoencoder::new(2, 3, seed).unwrap();
                // Nonzero biases exercise the bias gradients.
                for (i, l) in m.layers_mut().into_iter().enumerate() {
                    l.bias.mapv_inplace(|_| 0.05 * (i as f64 + 1.0));
                }
                let lg = gae_loss_and_grad(&m, &a, x.view(), mode, 0.01).unwrap();
                let err = max_fd_error(&m, &lg.grad, |p| {
                    gae_loss_and_grad(p, &a, x.view(), mode, 0.01).unwrap().total()
                });
                assert!(err < 1e-4, "{mode:?} seed {seed}: {err}");
            }
        }
    }

    #[test]
    fn classifier_gradients_match_finite_differences() {
        let g = ring(5);
        let a = gcn_propagation_matrix(&g);
        let x = Array2::from_shape_fn((5, 3), |(i, j)| ((i * 3 + j) % 7) as f64 * 0.3 - 0.8);
        let labels = [0, 1, 2, 1, 0];
        let m = GcnClassifier::new(3, 4, 3, 2).unwrap();
        let lg = classifier_loss_and_grad(&m, &a, x.view(), &labels, &[0, 1, 3], 0.01).unwrap();
        let err = max_fd_error(&m, &lg.grad, |p| {
            classifier_loss_and_grad(p, &a, x.view(), &labels, &[0, 1, 3], 0.01).unwrap().total()
        });
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn smoke_training_halves_loss() {
        let g = ring(10);
        let x = Array2::from_shape_fn((10, 4), |(i, j)| ((i as f64) * 0.7 + j as f64).sin());
        let cfg = TrainConfig { hidden: 8, ..Default::default() };
        let (m, log) = train_gae(&g, x.view(), &cfg).unwrap();
        assert!(log.final_loss < 0.5 * log.initial_loss(), "{} vs {}", log.final_loss, log.initial_loss());
        let recon = gae_forward(&m, &gcn_propagation_matrix(&g), x.view()).unwrap();
        assert_abs_diff_eq!(
            reconstruction_loss(x.view(), recon.values().view(), LossMode::Mse).unwrap(),
            log.final_loss,
            epsilon = 1e-15
        );
    }

    #[test]
    fn separable_clusters_are_learned() {
        // Two 10-node cliques joined by a single edge.
        let mut edges = vec![(9, 10)];
        for c in 0..2 {
            for i in 0..10 {
                for j in i + 1..10 {
                    edges.push((10 * c + i, 10 * c + j));
                }
            }
        }
        let g = Graph::from_edges(20, &edges, SelfLoops::Reject).unwrap();
        let labels: Vec<usize> = (0..20).map(|i| i / 10).collect();
        let x = Array2::from_shape_fn((20, 2), |(i, j)| if j == i / 10 { 1.0 } else { 0.0 });
        let all: Vec<usize> = (0..20).collect();
        let cfg = TrainConfig {
            epochs: 200,
            hidden: 8,
            learning_rate: 0.5,
            ..Default::default()
        };
        let (m, _) = train_classifier(&g, x.view(), &labels, &all, 2, &cfg).unwrap();
        let pred = classify(&m, &g, x.view()).unwrap();
        assert_eq!(accuracy(&pred, &labels, &all), Some(1.0));
    }
}
