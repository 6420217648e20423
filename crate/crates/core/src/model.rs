//! Client-side learner: a ReLU multilayer perceptron trained with plain
//! mini-batch SGD under softmax cross-entropy.

use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{ClientDataset, Example};
use crate::param_space::{ParamError, ParamVector, ShapeManifest, TensorShape};
use crate::seed;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("expected input dimension {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("{rows} input rows but {labels} labels")]
    BatchMismatch { rows: usize, labels: usize },
    #[error("parameter vector does not match the model architecture")]
    ArchitectureMismatch,
    #[error("no {0} examples")]
    EmptyData(&'static str),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Param(#[from] ParamError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

/// Layer widths from input to class count.
#[derive(Debug, Clone)]
pub struct MlpArchitecture {
    layer_sizes: Vec<usize>,
    activation: Activation,
    manifest: Arc<ShapeManifest>,
}

impl PartialEq for MlpArchitecture {
    fn eq(&self, other: &Self) -> bool {
        self.layer_sizes == other.layer_sizes && self.activation == other.activation
    }
}

impl MlpArchitecture {
    pub fn new(layer_sizes: Vec<usize>, activation: Activation) -> Result<Self, ModelError> {
        if layer_sizes.len() < 2 {
            return Err(ModelError::InvalidArchitecture(
                "need at least an input and an output layer".into(),
            ));
        }
        if layer_sizes.contains(&0) {
            return Err(ModelError::InvalidArchitecture("layer sizes must be positive".into()));
        }
        let mut entries = Vec::with_capacity(2 * (layer_sizes.len() - 1));
        for (i, w) in layer_sizes.windows(2).enumerate() {
            entries.push(TensorShape {
                name: format!("layer{i}.weight"),
                dims: vec![w[1], w[0]],
            });
            entries.push(TensorShape {
                name: format!("layer{i}.bias"),
                dims: vec![w[1]],
            });
        }
        let manifest = Arc::new(ShapeManifest::new(entries)?);
        Ok(Self {
            layer_sizes,
            activation,
            manifest,
        })
    }

    /// `input → hidden… → classes` with ReLU hidden units.
    pub fn relu(input_dim: usize, hidden: &[usize], classes: usize) -> Result<Self, ModelError> {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(input_dim);
        sizes.extend_from_slice(hidden);
        sizes.push(classes);
        Self::new(sizes, Activation::Relu)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn class_count(&self) -> usize {
        *self.layer_sizes.last().expect("at least two layers")
    }

    pub fn manifest(&self) -> &Arc<ShapeManifest> {
        &self.manifest
    }

    pub fn param_count(&self) -> usize {
        self.manifest.total_len()
    }
}

/// Dense layer computing `x · Wᵀ + b`; `weights` is `[out × in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalModel {
    arch: MlpArchitecture,
    layers: Vec<Layer>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    #[serde(skip)]
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            local_epochs: 5,
            batch_size: 16,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(ModelError::InvalidConfig(format!(
                "learning_rate must lie in (0, 1], got {}",
                self.learning_rate
            )));
        }
        if self.local_epochs == 0 {
            return Err(ModelError::InvalidConfig("local_epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(ModelError::InvalidConfig("batch_size must be positive".into()));
        }
        Ok(())
    }
}

impl LocalModel {
    pub fn zeros(arch: &MlpArchitecture) -> Self {
        let layers = arch
            .layer_sizes
            .windows(2)
            .map(|w| Layer {
                weights: Array2::zeros((w[1], w[0])),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        Self {
            arch: arch.clone(),
            layers,
        }
    }

    /// He-normal weights, zero biases.
    pub fn init(arch: &MlpArchitecture, seed: u64) -> Self {
        let mut rng = seed::rng(seed);
        let mut model = Self::zeros(arch);
        for layer in &mut model.layers {
            let fan_in = layer.weights.ncols() as f64;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
            layer.weights.mapv_inplace(|_| normal.sample(&mut rng));
        }
        model
    }

    pub fn from_layers(arch: &MlpArchitecture, layers: Vec<Layer>) -> Result<Self, ModelError> {
        if layers.len() != arch.layer_sizes.len() - 1 {
            return Err(ModelError::ArchitectureMismatch);
        }
        for (layer, w) in layers.iter().zip(arch.layer_sizes.windows(2)) {
            if layer.weights.dim() != (w[1], w[0]) || layer.bias.len() != w[1] {
                return Err(ModelError::ArchitectureMismatch);
            }
            if layer.weights.iter().chain(layer.bias.iter()).any(|x| !x.is_finite()) {
                return Err(ModelError::InvalidArchitecture("non-finite parameter".into()));
            }
        }
        Ok(Self {
            arch: arch.clone(),
            layers,
        })
    }

    pub fn architecture(&self) -> &MlpArchitecture {
        &self.arch
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Concatenates each layer's weight (row-major) then bias.
    pub fn flatten(&self) -> ParamVector {
        let mut out = Vec::with_capacity(self.arch.param_count());
        for layer in &self.layers {
            out.extend(layer.weights.iter());
            out.extend(layer.bias.iter());
        }
        ParamVector::new(out, Arc::clone(self.arch.manifest()))
            .expect("model parameters are finite and match the manifest")
    }

    pub fn unflatten(arch: &MlpArchitecture, params: &ParamVector) -> Result<Self, ModelError> {
        if !Arc::ptr_eq(params.manifest(), arch.manifest()) && **params.manifest() != **arch.manifest() {
            return Err(ModelError::ArchitectureMismatch);
        }
        let mut rest = params.as_slice();
        let mut layers = Vec::with_capacity(arch.layer_sizes.len() - 1);
        for w in arch.layer_sizes.windows(2) {
            let (wdata, tail) = rest.split_at(w[0] * w[1]);
            let (bdata, tail) = tail.split_at(w[1]);
            rest = tail;
            layers.push(Layer {
                weights: Array2::from_shape_vec((w[1], w[0]), wdata.to_vec())
                    .expect("slice length matches layer shape"),
                bias: Array1::from(bdata.to_vec()),
            });
        }
        Ok(Self {
            arch: arch.clone(),
            layers,
        })
    }

    /// Logits `[batch × classes]`.
    pub fn forward(&self, inputs: ArrayView2<'_, f64>) -> Result<Array2<f64>, ModelError> {
        self.check_inputs(inputs)?;
        let mut acts = inputs.to_owned();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            acts = acts.dot(&layer.weights.t()) + &layer.bias;
            if i < last {
                acts.mapv_inplace(relu);
            }
        }
        Ok(acts)
    }

    /// Gradient of the mean cross-entropy over the batch, flattened.
    pub fn gradient(&self, inputs: ArrayView2<'_, f64>, labels: &[usize]) -> Result<ParamVector, ModelError> {
        let grads = self.layer_gradients(inputs, labels)?;
        let mut out = Vec::with_capacity(self.arch.param_count());
        for g in &grads {
            out.extend(g.weights.iter());
            out.extend(g.bias.iter());
        }
        Ok(ParamVector::new(out, Arc::clone(self.arch.manifest()))?)
    }

    fn check_inputs(&self, inputs: ArrayView2<'_, f64>) -> Result<(), ModelError> {
        if inputs.ncols() != self.arch.input_dim() {
            return Err(ModelError::DimensionMismatch {
                expected: self.arch.input_dim(),
                actual: inputs.ncols(),
            });
        }
        Ok(())
    }

    fn check_labels(&self, rows: usize, labels: &[usize]) -> Result<(), ModelError> {
        if rows != labels.len() {
            return Err(ModelError::BatchMismatch {
                rows,
                labels: labels.len(),
            });
        }
        let classes = self.arch.class_count();
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(ModelError::LabelOutOfRange { label, classes });
        }
        Ok(())
    }

    fn layer_gradients(&self, inputs: ArrayView2<'_, f64>, labels: &[usize]) -> Result<Vec<Layer>, ModelError> {
        self.check_inputs(inputs)?;
        self.check_labels(inputs.nrows(), labels)?;
        if labels.is_empty() {
            return Err(ModelError::EmptyData("batch"));
        }
        // acts[l] is the input to layer l; the final entry holds the logits.
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(inputs.to_owned());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = acts[i].dot(&layer.weights.t()) + &layer.bias;
            if i < last {
                z.mapv_inplace(relu);
            }
            acts.push(z);
        }

        let n = labels.len() as f64;
        let mut delta = acts.pop().expect("logits");
        for (mut row, &label) in delta.rows_mut().into_iter().zip(labels) {
            softmax_in_place(row.as_slice_mut().expect("row-major logits"));
            row[label] -= 1.0;
        }
        delta.mapv_inplace(|d| d / n);

        let mut grads = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &acts[i];
            let weights = delta.t().dot(input);
            let bias = delta.sum_axis(Axis(0));
            if i > 0 {
                let mut back = delta.dot(&layer.weights);
                ndarray::Zip::from(&mut back).and(input).for_each(|b, &a| {
                    if a <= 0.0 {
                        *b = 0.0;
                    }
                });
                delta = back;
            }
            grads.push(Layer { weights, bias });
        }
        grads.reverse();
        Ok(grads)
    }

    /// Returns a copy trained for `cfg.local_epochs` epochs of mini-batch SGD.
    ///
    /// Epoch `e` shuffles with a stream keyed by `(cfg.rng_seed, e)`; the last
    /// batch of an epoch may be short.
    pub fn train_local(&self, data: &ClientDataset, cfg: &TrainConfig) -> Result<LocalModel, ModelError> {
        if data.train.is_empty() {
            return Err(ModelError::EmptyData("training"));
        }
        if !(cfg.learning_rate >= 0.0 && cfg.learning_rate.is_finite()) {
            return Err(ModelError::InvalidConfig(format!(
                "learning_rate must be finite and non-negative, got {}",
                cfg.learning_rate
            )));
        }
        if cfg.batch_size == 0 {
            return Err(ModelError::InvalidConfig("batch_size must be positive".into()));
        }
        let mut model = self.clone();
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        for epoch in 0..cfg.local_epochs {
            order.sort_unstable();
            order.shuffle(&mut seed::rng(seed::child(cfg.rng_seed, epoch as u64)));
            for chunk in order.chunks(cfg.batch_size) {
                let (x, y) = stack(chunk.iter().map(|&i| &data.train[i]), self.arch.input_dim())?;
                let grads = model.layer_gradients(x.view(), &y)?;
                for (layer, g) in model.layers.iter_mut().zip(&grads) {
                    layer.weights.scaled_add(-cfg.learning_rate, &g.weights);
                    layer.bias.scaled_add(-cfg.learning_rate, &g.bias);
                }
            }
        }
        Ok(model)
    }

    /// Test-set accuracy; ties in the logits go to the lowest class index.
    pub fn evaluate(&self, data: &ClientDataset) -> Result<f64, ModelError> {
        self.accuracy(&data.test)
    }

    pub fn accuracy(&self, examples: &[Example]) -> Result<f64, ModelError> {
        if examples.is_empty() {
            return Err(ModelError::EmptyData("test"));
        }
        let (x, y) = stack(examples.iter(), self.arch.input_dim())?;
        let logits = self.forward(x.view())?;
        let correct = logits
            .rows()
            .into_iter()
            .zip(&y)
            .filter(|(row, &label)| argmax(row.as_slice().expect("row-major")) == label)
            .count();
        Ok(correct as f64 / examples.len() as f64)
    }

    /// Mean cross-entropy of the model on `examples`.
    pub fn loss(&self, examples: &[Example]) -> Result<f64, ModelError> {
        if examples.is_empty() {
            return Err(ModelError::EmptyData("loss"));
        }
        let (x, y) = stack(examples.iter(), self.arch.input_dim())?;
        ce_loss(self.forward(x.view())?.view(), &y)
    }
}

/// Mean over the batch of `−log softmax(logits)[label]`, max-subtracted.
pub fn ce_loss(logits: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64, ModelError> {
    if logits.nrows() != labels.len() {
        return Err(ModelError::BatchMismatch {
            rows: logits.nrows(),
            labels: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(ModelError::EmptyData("batch"));
    }
    let classes = logits.ncols();
    let mut total = 0.0;
    for (row, &label) in logits.rows().into_iter().zip(labels) {
        if label >= classes {
            return Err(ModelError::LabelOutOfRange { label, classes });
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = row.iter().map(|z| (z - max).exp()).sum::<f64>().ln() + max;
        total += lse - row[label];
    }
    Ok(total / labels.len() as f64)
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Packs examples into an input matrix and label list.
pub fn stack<'a>(
    examples: impl Iterator<Item = &'a Example>,
    input_dim: usize,
) -> Result<(Array2<f64>, Vec<usize>), ModelError> {
    let mut flat = Vec::new();
    let mut labels = Vec::new();
    for ex in examples {
        if ex.features.len() != input_dim {
            return Err(ModelError::DimensionMismatch {
                expected: input_dim,
                actual: ex.features.len(),
            });
        }
        flat.extend_from_slice(&ex.features);
        labels.push(ex.label);
    }
    let x = Array2::from_shape_vec((labels.len(), input_dim), flat).expect("rows of input_dim");
    Ok((x, labels))
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for z in row.iter_mut() {
        *z = (*z - max).exp();
        sum += *z;
    }
    for z in row.iter_mut() {
        *z /= sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    fn example(id: usize, features: Vec<f64>, label: usize) -> Example {
        Example { id, features, label }
    }

    fn dataset(train: Vec<Example>, test: Vec<Example>, classes: usize) -> ClientDataset {
        ClientDataset::new(0, train, test, classes)
    }

    #[test]
    fn flatten_is_row_major_weight_then_bias() {
        let arch = MlpArchitecture::new(vec![2, 2], Activation::Relu).unwrap();
        let model = LocalModel::from_layers(
            &arch,
            vec![Layer {
                weights: array![[1.0, 2.0], [3.0, 4.0]],
                bias: array![5.0, 6.0],
            }],
        )
        .unwrap();
        let flat = model.flatten();
        assert_eq!(flat.as_slice(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(LocalModel::unflatten(&arch, &flat).unwrap(), model);
        assert!(LocalModel::zeros(&arch).flatten().as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn unflatten_rejects_wrong_manifest() {
        let arch = MlpArchitecture::new(vec![2, 2], Activation::Relu).unwrap();
        let five = ParamVector::from_flat(vec![1.0; 5]).unwrap();
        assert_eq!(
            LocalModel::unflatten(&arch, &five),
            Err(ModelError::ArchitectureMismatch)
        );
        let other = MlpArchitecture::new(vec![3, 2], Activation::Relu).unwrap();
        let v = LocalModel::zeros(&other).flatten();
        assert_eq!(LocalModel::unflatten(&arch, &v), Err(ModelError::ArchitectureMismatch));
    }

    #[test]
    fn flatten_round_trips_random_models() {
        let arch = MlpArchitecture::relu(7, &[5, 4], 3).unwrap();
        for s in 0..20 {
            let m = LocalModel::init(&arch, s);
            let back = LocalModel::unflatten(&arch, &m.flatten()).unwrap();
            assert_eq!(back, m);
        }
    }

    #[test]
    fn forward_basic_cases() {
        let arch = MlpArchitecture::relu(3, &[4], 2).unwrap();
        let x = array![[1.0, -2.0, 3.0], [0.5, 0.5, 0.5]];
        let logits = LocalModel::zeros(&arch).forward(x.view()).unwrap();
        assert!(logits.iter().all(|&z| z == 0.0));

        let ident = MlpArchitecture::new(vec![3, 3], Activation::Relu).unwrap();
        let m = LocalModel::from_layers(
            &ident,
            vec![Layer {
                weights: Array2::eye(3),
                bias: Array1::zeros(3),
            }],
        )
        .unwrap();
        assert_eq!(m.forward(x.view()).unwrap(), x);

        let bad = array![[1.0, 2.0]];
        assert!(matches!(
            m.forward(bad.view()),
            Err(ModelError::DimensionMismatch { expected: 3, actual: 2 })
        ));
    }

    fn naive_forward(model: &LocalModel, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        let last = model.layers.len() - 1;
        for (l, layer) in model.layers.iter().enumerate() {
            let (out, inp) = layer.weights.dim();
            let mut z = vec![0.0; out];
            for o in 0..out {
                let mut s = layer.bias[o];
                for i in 0..inp {
                    s += layer.weights[[o, i]] * a[i];
                }
                z[o] = if l < last { s.max(0.0) } else { s };
            }
            a = z;
        }
        a
    }

    #[test]
    fn forward_matches_naive_loops() {
        let arch = MlpArchitecture::relu(6, &[8, 5], 4).unwrap();
        let model = LocalModel::init(&arch, 11);
        let mut rng = seed::rng(3);
        let x = Array2::from_shape_fn((9, 6), |_| rng.random_range(-2.0..2.0));
        let logits = model.forward(x.view()).unwrap();
        for r in 0..9 {
            let oracle = naive_forward(&model, x.row(r).as_slice().unwrap());
            for c in 0..4 {
                assert!((logits[[r, c]] - oracle[c]).abs() < 1e-10);
            }
        }
    }

    /// Loss computed with compensated sums and per-class log terms.
    fn reference_ce(logits: &Array2<f64>, labels: &[usize]) -> f64 {
        let mut total = 0.0f64;
        let mut comp = 0.0f64;
        for (row, &y) in logits.rows().into_iter().zip(labels) {
            let zy = row[y];
            let mut s = 0.0f64;
            let mut c = 0.0f64;
            for &z in row.iter() {
                let t = (z - zy).exp() - c;
                let u = s + t;
                c = (u - s) - t;
                s = u;
            }
            let term = s.ln() - comp;
            let u = total + term;
            comp = (u - total) - term;
            total = u;
        }
        total / labels.len() as f64
    }

    #[test]
    fn ce_loss_cases() {
        let uniform = Array2::from_elem((3, 10), 0.7);
        let l = ce_loss(uniform.view(), &[0, 4, 9]).unwrap();
        assert!((l - 10f64.ln()).abs() < 1e-12);

        let mut sat = Array2::zeros((2, 5));
        sat[[0, 1]] = 50.0;
        sat[[1, 3]] = 50.0;
        assert!(ce_loss(sat.view(), &[1, 3]).unwrap() < 1e-8);

        assert_eq!(
            ce_loss(uniform.view(), &[0, 10, 1]),
            Err(ModelError::LabelOutOfRange { label: 10, classes: 10 })
        );

        let mut rng = seed::rng(99);
        let logits = Array2::from_shape_fn((32, 7), |_| rng.random_range(-8.0..8.0));
        let labels: Vec<usize> = (0..32).map(|_| rng.random_range(0..7)).collect();
        let got = ce_loss(logits.view(), &labels).unwrap();
        assert!((got - reference_ce(&logits, &labels)).abs() < 1e-10);
    }

    fn random_batch(rng: &mut impl Rng, n: usize, dim: usize, classes: usize) -> (Array2<f64>, Vec<usize>) {
        let x = Array2::from_shape_fn((n, dim), |_| rng.random_range(-1.5..1.5));
        let y = (0..n).map(|_| rng.random_range(0..classes)).collect();
        (x, y)
    }

    #[test]
    fn gradient_matches_central_differences() {
        let arch = MlpArchitecture::relu(4, &[6], 3).unwrap();
        let model = LocalModel::init(&arch, 5);
        let mut rng = seed::rng(17);
        let (x, y) = random_batch(&mut rng, 8, 4, 3);
        let grad = model.gradient(x.view(), &y).unwrap();
        let base = model.flatten().into_vec();
        let h = 1e-5;
        for i in 0..base.len() {
            let mut plus = base.clone();
            plus[i] += h;
            let mut minus = base.clone();
            minus[i] -= h;
            let eval = |p: Vec<f64>| {
                let m = LocalModel::unflatten(&arch, &ParamVector::new(p, arch.manifest().clone()).unwrap()).unwrap();
                ce_loss(m.forward(x.view()).unwrap().view(), &y).unwrap()
            };
            let fd = (eval(plus) - eval(minus)) / (2.0 * h);
            let an = grad.as_slice()[i];
            let err = (fd - an).abs();
            assert!(
                err <= 1e-8 || err / an.abs().max(fd.abs()) < 1e-4,
                "coord {i}: {an} vs {fd}"
            );
        }
    }

    #[test]
    fn batch_gradient_is_mean_of_example_gradients() {
        let arch = MlpArchitecture::relu(5, &[7], 4).unwrap();
        let model = LocalModel::init(&arch, 8);
        let mut rng = seed::rng(4);
        let (x, y) = random_batch(&mut rng, 6, 5, 4);
        let batch = model.gradient(x.view(), &y).unwrap();
        let singles: Vec<ParamVector> = (0..6)
            .map(|i| {
                model
                    .gradient(x.slice(ndarray::s![i..i + 1, ..]), &y[i..i + 1])
                    .unwrap()
            })
            .collect();
        let mean = ParamVector::weighted_sum(&singles, &[1.0 / 6.0; 6]).unwrap();
        assert!(batch.max_abs_diff(&mean).unwrap() < 1e-10);
    }

    #[test]
    fn gradient_vanishes_at_saturated_fit() {
        let arch = MlpArchitecture::new(vec![2, 2], Activation::Relu).unwrap();
        let model = LocalModel::from_layers(
            &arch,
            vec![Layer {
                weights: array![[60.0, 0.0], [0.0, 60.0]],
                bias: array![0.0, 0.0],
            }],
        )
        .unwrap();
        let x = array![[1.0, 0.0], [0.0, 1.0]];
        let g = model.gradient(x.view(), &[0, 1]).unwrap();
        assert!(g.norm() < 1e-6);
    }

    fn separable_set(n: usize, seed_value: u64) -> Vec<Example> {
        let mut rng = seed::rng(seed_value);
        (0..n)
            .map(|i| {
                let label = i % 2;
                let centre = if label == 0 { -1.0 } else { 1.0 };
                let f = vec![centre + rng.random_range(-0.3..0.3), rng.random_range(-1.0..1.0)];
                example(i, f, label)
            })
            .collect()
    }

    #[test]
    fn zero_learning_rate_leaves_model_unchanged() {
        let arch = MlpArchitecture::relu(2, &[4], 2).unwrap();
        let model = LocalModel::init(&arch, 1);
        let data = dataset(separable_set(20, 2), separable_set(4, 3), 2);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert_eq!(model.train_local(&data, &cfg).unwrap(), model);
    }

    #[test]
    fn single_step_matches_closed_form() {
        let arch = MlpArchitecture::relu(2, &[3], 2).unwrap();
        let model = LocalModel::init(&arch, 21);
        let ex = example(0, vec![0.4, -0.9], 1);
        let data = dataset(vec![ex.clone()], vec![ex.clone()], 2);
        let cfg = TrainConfig {
            learning_rate: 0.05,
            local_epochs: 1,
            batch_size: 1,
            rng_seed: 9,
        };
        let trained = model.train_local(&data, &cfg).unwrap().flatten();
        let (x, y) = stack(std::iter::once(&ex), 2).unwrap();
        let g = model.gradient(x.view(), &y).unwrap();
        let expected = ParamVector::weighted_sum(&[model.flatten(), g], &[1.0, -0.05]).unwrap();
        assert!(trained.max_abs_diff(&expected).unwrap() < 1e-12);
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let arch = MlpArchitecture::relu(2, &[8], 2).unwrap();
        let model = LocalModel::init(&arch, 6);
        let data = dataset(separable_set(40, 7), separable_set(10, 8), 2);
        let cfg = TrainConfig {
            rng_seed: 12,
            ..TrainConfig::default()
        };
        let before = model.loss(&data.train).unwrap();
        let a = model.train_local(&data, &cfg).unwrap();
        let b = model.train_local(&data, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.loss(&data.train).unwrap() < before);
        assert!(a.flatten().as_slice().iter().all(|x| x.is_finite()));
        let empty = dataset(Vec::new(), Vec::new(), 2);
        assert_eq!(model.train_local(&empty, &cfg), Err(ModelError::EmptyData("training")));
    }

    #[test]
    fn evaluate_cases() {
        let arch = MlpArchitecture::new(vec![2, 2], Activation::Relu).unwrap();
        // bias favours class 0 for every input
        let model = LocalModel::from_layers(
            &arch,
            vec![Layer {
                weights: Array2::zeros((2, 2)),
                bias: array![1.0, 0.0],
            }],
        )
        .unwrap();
        let zeros: Vec<_> = (0..5).map(|i| example(i, vec![0.1 * i as f64, 1.0], 0)).collect();
        let ones: Vec<_> = (0..5).map(|i| example(i, vec![0.1 * i as f64, 1.0], 1)).collect();
        assert_eq!(model.evaluate(&dataset(zeros.clone(), zeros, 2)).unwrap(), 1.0);
        assert_eq!(model.evaluate(&dataset(ones.clone(), ones, 2)).unwrap(), 0.0);
        // all-zero logits tie → class 0
        let tied = LocalModel::zeros(&arch);
        assert_eq!(tied.accuracy(&[example(0, vec![3.0, 3.0], 0)]).unwrap(), 1.0);
        assert_eq!(tied.accuracy(&[]), Err(ModelError::EmptyData("test")));
    }

    #[test]
    fn evaluate_matches_counting_oracle_and_logit_scaling() {
        let arch = MlpArchitecture::relu(6, &[12], 10).unwrap();
        let model = LocalModel::init(&arch, 30);
        let mut rng = seed::rng(31);
        let test: Vec<Example> = (0..100)
            .map(|i| {
                example(
                    i,
                    (0..6).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    rng.random_range(0..10),
                )
            })
            .collect();
        let mut correct = 0;
        for ex in &test {
            let z = naive_forward(&model, &ex.features);
            let mut best = 0;
            for c in 1..10 {
                if z[c] > z[best] {
                    best = c;
                }
            }
            if best == ex.label {
                correct += 1;
            }
        }
        let acc = model.accuracy(&test).unwrap();
        assert_eq!(acc, correct as f64 / 100.0);

        // scaling the final layer scales the logits
        let mut layers = model.layers().to_vec();
        let last = layers.last_mut().unwrap();
        last.weights.mapv_inplace(|w| 3.5 * w);
        last.bias.mapv_inplace(|b| 3.5 * b);
        let scaled = LocalModel::from_layers(&arch, layers).unwrap();
        assert_eq!(scaled.accuracy(&test).unwrap(), acc);
    }

    #[test]
    fn train_config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for lr in [0.0, -0.1, 1.5, f64::NAN] {
            let cfg = TrainConfig {
                learning_rate: lr,
                ..TrainConfig::default()
            };
            assert!(cfg.validate().is_err());
        }
        assert!(TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
    }
}
