//! Feature-only MLP classifier: ReLU hidden layers, softmax cross-entropy with an
//! L2 penalty on weight matrices, inverted dropout, hand-written backprop and Adam.

use alloc::vec::Vec;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dense::{argmax, Matrix};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("training split is empty")]
    EmptyTrainSplit,
    #[error("training node {0} has no label")]
    UnlabeledTrainNode(usize),
    #[error("label {label} at node {node} is outside 0..{num_classes}")]
    LabelOutOfRange {
        node: usize,
        label: usize,
        num_classes: usize,
    },
    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("invalid training config: {0}")]
    InvalidConfig(&'static str),
}

/// Weights `in × out` and bias `out` of one dense layer. Also used as the gradient
/// carrier for the same layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros_like(other: &Layer) -> Self {
        Self {
            weight: Matrix::zeros(other.weight.rows(), other.weight.cols()),
            bias: alloc::vec![0.0; other.bias.len()],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }
}

/// Architecture and regularization of an MLP, independent of the data widths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub dropout: f64,
    pub weight_decay: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            num_layers: 2,
            hidden_dim: 16,
            dropout: 0.0,
            weight_decay: 0.0,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.num_layers == 0 {
            return Err(TrainError::InvalidConfig("num_layers must be at least 1"));
        }
        if self.num_layers > 1 && self.hidden_dim == 0 {
            return Err(TrainError::InvalidConfig("hidden_dim must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(TrainError::InvalidConfig("dropout must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(TrainError::InvalidConfig("weight_decay must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpModel {
    layers: Vec<Layer>,
    dropout: f64,
    weight_decay: f64,
    /// Bumped by every optimizer step; forward caches remember the value they saw.
    #[serde(skip)]
    version: u64,
}

/// Equal parameters; the optimizer step counter is not compared.
impl PartialEq for MlpModel {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers && self.dropout == other.dropout && self.weight_decay == other.weight_decay
    }
}

/// Activations recorded by a forward pass, consumed by [`MlpModel::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input seen by each layer (after dropout for hidden layers).
    inputs: Vec<Matrix>,
    /// Pre-activation of each hidden layer.
    hidden_pre: Vec<Matrix>,
    /// Inverted-dropout multipliers (`0` or `1/(1-rate)`) for each hidden layer.
    masks: Vec<Option<Matrix>>,
    version: u64,
    training: bool,
}

impl MlpModel {
    /// Glorot-uniform weights in `±sqrt(6/(fan_in+fan_out))`, zero biases.
    pub fn glorot(input_dim: usize, output_dim: usize, config: &MlpConfig, rng: &mut dyn RngCore) -> Self {
        let widths = layer_widths(input_dim, output_dim, config);
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-limit..=limit))
                    .collect();
                Layer {
                    weight: Matrix::from_vec(fan_in, fan_out, data),
                    bias: alloc::vec![0.0; fan_out],
                }
            })
            .collect();
        Self {
            layers,
            dropout: config.dropout,
            weight_decay: config.weight_decay,
            version: 0,
        }
    }

    pub fn zeros(input_dim: usize, output_dim: usize, config: &MlpConfig) -> Self {
        let widths = layer_widths(input_dim, output_dim, config);
        let layers = widths
            .windows(2)
            .map(|w| Layer {
                weight: Matrix::zeros(w[0], w[1]),
                bias: alloc::vec![0.0; w[1]],
            })
            .collect();
        Self {
            layers,
            dropout: config.dropout,
            weight_decay: config.weight_decay,
            version: 0,
        }
    }

    /// Assembles a model from explicit layers. Panics if consecutive widths disagree.
    pub fn from_layers(layers: Vec<Layer>, dropout: f64, weight_decay: f64) -> Self {
        assert!(!layers.is_empty(), "an MLP needs at least one layer");
        for pair in layers.windows(2) {
            assert_eq!(pair[0].output_dim(), pair[1].input_dim(), "layer widths do not chain");
        }
        for layer in &layers {
            assert_eq!(layer.bias.len(), layer.output_dim(), "bias width mismatch");
        }
        Self {
            layers,
            dropout,
            weight_decay,
            version: 0,
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable parameter access. Invalidates outstanding forward caches.
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        self.version += 1;
        &mut self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    pub fn weight_decay(&self) -> f64 {
        self.weight_decay
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }

    /// `γ · Σ ‖W‖²_F` over weight matrices (biases excluded).
    pub fn penalty(&self) -> f64 {
        self.weight_decay * self.layers.iter().map(|l| l.weight.squared_norm()).sum::<f64>()
    }

    /// Inference-mode logits.
    pub fn logits(&self, features: &Matrix) -> Matrix {
        self.run(features, false, NO_MASKS).0
    }

    /// Forward pass producing pre-softmax scores and a cache. With `training` set,
    /// dropout masks are drawn from it.
    pub fn forward(&self, features: &Matrix, training: Option<&mut dyn RngCore>) -> (Matrix, ForwardCache) {
        match training {
            None => self.run(features, false, NO_MASKS),
            Some(_) if self.dropout == 0.0 => self.run(features, true, NO_MASKS),
            Some(rng) => {
                let rate = self.dropout;
                let keep = 1.0 / (1.0 - rate);
                let mut draw = |rows: usize, cols: usize| {
                    let data = (0..rows * cols)
                        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
                        .collect();
                    Matrix::from_vec(rows, cols, data)
                };
                self.run(features, true, Some(&mut draw))
            }
        }
    }

    /// Training-mode forward with caller-supplied 0/1 keep masks, one per hidden layer.
    /// Kept units are scaled by `1/(1-rate)`.
    pub fn forward_with_masks(&self, features: &Matrix, keep_masks: &[Matrix]) -> (Matrix, ForwardCache) {
        assert_eq!(keep_masks.len(), self.layers.len() - 1, "one mask per hidden layer");
        let keep = 1.0 / (1.0 - self.dropout);
        let mut next = 0;
        let mut supply = |rows: usize, cols: usize| {
            let mut m = keep_masks[next].clone();
            assert_eq!(m.shape(), (rows, cols), "mask shape mismatch");
            m.scale(keep);
            next += 1;
            m
        };
        self.run(features, true, Some(&mut supply))
    }

    fn run<F>(&self, features: &Matrix, training: bool, mut masks: Option<&mut F>) -> (Matrix, ForwardCache)
    where
        F: FnMut(usize, usize) -> Matrix + ?Sized,
    {
        assert_eq!(
            features.cols(),
            self.input_dim(),
            "forward: feature width {} does not match model input {}",
            features.cols(),
            self.input_dim()
        );
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut hidden_pre = Vec::with_capacity(last);
        let mut cache_masks = Vec::with_capacity(last);
        let mut current = features.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = current.matmul(&layer.weight);
            for r in 0..z.rows() {
                for (x, b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
                    *x += b;
                }
            }
            inputs.push(current);
            if l == last {
                current = z;
                break;
            }
            let mut h = z.clone();
            h.map_inplace(|x| if x > 0.0 { x } else { 0.0 });
            let mask = match masks.as_deref_mut() {
                Some(draw) => {
                    let m = draw(h.rows(), h.cols());
                    for (x, k) in h.as_mut_slice().iter_mut().zip(m.as_slice()) {
                        *x *= k;
                    }
                    Some(m)
                }
                None => None,
            };
            hidden_pre.push(z);
            cache_masks.push(mask);
            current = h;
        }
        (
            current,
            ForwardCache {
                inputs,
                hidden_pre,
                masks: cache_masks,
                version: self.version,
                training,
            },
        )
    }

    /// Exact gradients of [`cross_entropy_loss`] (mean CE plus `γ Σ ‖W‖²`).
    ///
    /// Panics if the cache came from an inference pass or predates a parameter update.
    pub fn backward(&self, cache: &ForwardCache, logits: &Matrix, labels: &[usize]) -> Vec<Layer> {
        assert!(cache.training, "backward requires a training-mode forward cache");
        assert_eq!(cache.version, self.version, "stale forward cache");
        assert_eq!(logits.rows(), labels.len(), "one label per row");
        let batch = logits.rows() as f64;
        let mut delta = softmax(logits);
        for (r, &y) in labels.iter().enumerate() {
            delta[(r, y)] -= 1.0;
        }
        delta.scale(1.0 / batch);

        let mut grads: Vec<Layer> = self.layers.iter().map(Layer::zeros_like).collect();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let mut gw = cache.inputs[l].transpose_matmul(&delta);
            gw.add_scaled(&layer.weight, 2.0 * self.weight_decay);
            let gb = &mut grads[l].bias;
            for r in 0..delta.rows() {
                for (g, d) in gb.iter_mut().zip(delta.row(r)) {
                    *g += d;
                }
            }
            grads[l].weight = gw;
            if l == 0 {
                break;
            }
            let mut upstream = delta.matmul_transpose(&layer.weight);
            if let Some(mask) = &cache.masks[l - 1] {
                for (u, k) in upstream.as_mut_slice().iter_mut().zip(mask.as_slice()) {
                    *u *= k;
                }
            }
            for (u, z) in upstream
                .as_mut_slice()
                .iter_mut()
                .zip(cache.hidden_pre[l - 1].as_slice())
            {
                if *z <= 0.0 {
                    *u = 0.0;
                }
            }
            delta = upstream;
        }
        grads
    }
}

type MaskSource = dyn FnMut(usize, usize) -> Matrix;
const NO_MASKS: Option<&mut MaskSource> = None;

fn layer_widths(input_dim: usize, output_dim: usize, config: &MlpConfig) -> Vec<usize> {
    let mut widths = alloc::vec![input_dim];
    for _ in 1..config.num_layers {
        widths.push(config.hidden_dim);
    }
    widths.push(output_dim);
    widths
}

/// Row-wise softmax, numerically stabilized by the row max.
pub fn softmax(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for x in row.iter_mut() {
            *x = libm::exp(*x - max);
            sum += *x;
        }
        for x in row.iter_mut() {
            *x /= sum;
        }
    }
    out
}

/// Mean softmax cross-entropy over rows, without any penalty.
pub fn mean_cross_entropy(logits: &Matrix, labels: &[usize]) -> f64 {
    assert_eq!(logits.rows(), labels.len(), "one label per row");
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + libm::log(row.iter().map(|&x| libm::exp(x - max)).sum::<f64>());
        total += lse - row[y];
    }
    total / labels.len() as f64
}

/// Mean cross-entropy plus the model's weight penalty.
pub fn cross_entropy_loss(logits: &Matrix, labels: &[usize], model: &MlpModel) -> f64 {
    mean_cross_entropy(logits, labels) + model.penalty()
}

/// Softmax class probabilities for every row of `features`.
pub fn predict_proba(model: &MlpModel, features: &Matrix) -> Matrix {
    softmax(&model.logits(features))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// `0` trains full-batch.
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Stop once validation loss has not improved for this many epochs.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            epochs: 500,
            batch_size: 0,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(TrainError::InvalidConfig("learning_rate must be positive"));
        }
        if self.epochs == 0 {
            return Err(TrainError::InvalidConfig("epochs must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(TrainError::InvalidConfig("adam betas must lie in [0, 1)"));
        }
        if !(self.epsilon > 0.0) {
            return Err(TrainError::InvalidConfig("adam epsilon must be positive"));
        }
        Ok(())
    }
}

/// Adam with bias correction. The weight penalty reaches it through the gradients.
#[derive(Debug, Clone)]
pub struct Adam {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: i32,
    first: Vec<Layer>,
    second: Vec<Layer>,
}

impl Adam {
    pub fn new(model: &MlpModel, config: &TrainConfig) -> Self {
        Self {
            learning_rate: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: config.epsilon,
            step: 0,
            first: model.layers.iter().map(Layer::zeros_like).collect(),
            second: model.layers.iter().map(Layer::zeros_like).collect(),
        }
    }

    pub fn step(&mut self, model: &mut MlpModel, grads: &[Layer]) {
        self.step += 1;
        let c1 = 1.0 - libm::pow(self.beta1, self.step as f64);
        let c2 = 1.0 - libm::pow(self.beta2, self.step as f64);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (libm::sqrt(v_hat) + eps);
            }
        };
        for (l, layer) in model.layers_mut().iter_mut().enumerate() {
            let (m, v) = (&mut self.first[l], &mut self.second[l]);
            update(
                layer.weight.as_mut_slice(),
                grads[l].weight.as_slice(),
                m.weight.as_mut_slice(),
                v.weight.as_mut_slice(),
            );
            update(&mut layer.bias, &grads[l].bias, &mut m.bias, &mut v.bias);
        }
    }
}

/// Labeled rows available to the trainer. `features` and `labels` cover all nodes;
/// `train` and `val` select from them.
#[derive(Debug, Clone, Copy)]
pub struct TrainSet<'a> {
    pub features: &'a Matrix,
    pub labels: &'a [Option<usize>],
    pub train: &'a [usize],
    pub val: &'a [usize],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    pub accuracy: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: Option<f64>,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MlpModel,
    /// Epoch (1-based) whose parameters were kept.
    pub best_epoch: usize,
    pub trace: Vec<EpochRecord>,
}

/// RNG for parameter initialization derived from a training seed.
pub fn init_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn training_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

fn gather_labels(set: &TrainSet<'_>, indices: &[usize], num_classes: usize) -> Result<Vec<usize>, TrainError> {
    indices
        .iter()
        .map(|&i| {
            let label = set.labels[i].ok_or(TrainError::UnlabeledTrainNode(i))?;
            if label >= num_classes {
                return Err(TrainError::LabelOutOfRange {
                    node: i,
                    label,
                    num_classes,
                });
            }
            Ok(label)
        })
        .collect()
}

/// Trains with validation on the raw MLP predictions of `set.val`.
pub fn train_mlp(model: MlpModel, set: &TrainSet<'_>, config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    let num_classes = model.output_dim();
    let val_labels = gather_labels(set, set.val, num_classes)?;
    let val_features = set.features.select_rows(set.val);
    train_mlp_with(model, set, config, |m: &MlpModel| {
        let logits = m.logits(&val_features);
        let hits = (0..logits.rows())
            .filter(|&r| argmax(logits.row(r)) == Some(val_labels[r]))
            .count();
        Validation {
            accuracy: hits as f64 / val_labels.len() as f64,
            loss: mean_cross_entropy(&logits, &val_labels),
        }
    })
}

/// Trains with a caller-supplied validation scorer. The scorer is only invoked when
/// `set.val` is non-empty; without validation the final epoch's parameters are kept.
/// Otherwise the epoch with the highest validation accuracy wins, earliest on ties.
pub fn train_mlp_with<V>(
    mut model: MlpModel,
    set: &TrainSet<'_>,
    config: &TrainConfig,
    mut validate: V,
) -> Result<TrainOutcome, TrainError>
where
    V: FnMut(&MlpModel) -> Validation,
{
    config.validate()?;
    if set.train.is_empty() {
        return Err(TrainError::EmptyTrainSplit);
    }
    let num_classes = model.output_dim();
    let train_labels = gather_labels(set, set.train, num_classes)?;
    let has_val = !set.val.is_empty();

    let mut rng = training_rng(config.seed);
    let mut optimizer = Adam::new(&model, config);
    let mut order: Vec<usize> = (0..set.train.len()).collect();
    let batch_size = if config.batch_size == 0 {
        order.len()
    } else {
        config.batch_size.min(order.len())
    };
    let full_features = (batch_size == order.len()).then(|| set.features.select_rows(set.train));

    let mut trace = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, MlpModel)> = None;
    let mut best_val_loss = f64::INFINITY;
    let mut since_improved = 0usize;

    for epoch in 1..=config.epochs {
        if full_features.is_none() {
            shuffle(&mut order, &mut rng);
        }
        let mut loss_sum = 0.0;
        let mut rows_seen = 0usize;
        for chunk in order.chunks(batch_size) {
            let batch_features;
            let batch_labels: Vec<usize>;
            let (x, labels): (&Matrix, &[usize]) = match &full_features {
                Some(full) => (full, &train_labels),
                None => {
                    let nodes: Vec<usize> = chunk.iter().map(|&p| set.train[p]).collect();
                    batch_labels = chunk.iter().map(|&p| train_labels[p]).collect();
                    batch_features = set.features.select_rows(&nodes);
                    (&batch_features, &batch_labels)
                }
            };
            let (logits, cache) = model.forward(x, Some(&mut rng));
            let loss = cross_entropy_loss(&logits, labels, &model);
            if !loss.is_finite() {
                return Err(TrainError::Diverged { epoch, loss });
            }
            let grads = model.backward(&cache, &logits, labels);
            optimizer.step(&mut model, &grads);
            loss_sum += loss * labels.len() as f64;
            rows_seen += labels.len();
        }
        if !model.is_finite() {
            return Err(TrainError::Diverged {
                epoch,
                loss: f64::NAN,
            });
        }
        let train_loss = loss_sum / rows_seen as f64;

        let mut record = EpochRecord {
            epoch,
            train_loss,
            val_accuracy: None,
            val_loss: None,
        };
        if has_val {
            let v = validate(&model);
            record.val_accuracy = Some(v.accuracy);
            record.val_loss = Some(v.loss);
            if best.as_ref().is_none_or(|(acc, _, _)| v.accuracy > *acc) {
                best = Some((v.accuracy, epoch, model.clone()));
            }
            if v.loss < best_val_loss {
                best_val_loss = v.loss;
                since_improved = 0;
            } else {
                since_improved += 1;
            }
        }
        trace.push(record);
        if let Some(patience) = config.patience {
            if has_val && since_improved >= patience {
                break;
            }
        }
    }

    let (model, best_epoch) = match best {
        Some((_, epoch, m)) => (m, epoch),
        None => {
            let last = trace.len();
            (model, last)
        }
    };
    Ok(TrainOutcome {
        model,
        best_epoch,
        trace,
    })
}

/// Fisher-Yates on the training-order permutation.
fn shuffle(order: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
}
