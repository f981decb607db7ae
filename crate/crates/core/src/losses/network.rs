//! A one-hidden-layer dense network trained with mini-batch momentum SGD.
//!
//! Inputs are standardized with training statistics, pass through a tanh
//! hidden layer and a linear output layer. The output is the emitted vector:
//! logits for the softmax head, an embedding for the ArcFace head and a point
//! in the `N`-dimensional anchored space for the CAC head.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    arcface::arcface_loss_full, cac::CacLossParams, cac_loss, softmax_ce_loss, ArcFaceParams,
};
use crate::dataset::{EmbeddingDataset, Sample};
use crate::error::{Error, Result};
use crate::linalg::{self, dot};
use crate::metric_heads::CacModel;
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Head {
    Softmax,
    #[serde(rename = "arcface")]
    ArcFace {
        scale: f64,
        margin: f64,
        embedding_dim: usize,
    },
    Cac {
        anchor_magnitude: f64,
        anchor_weight: f64,
    },
}

impl Head {
    pub fn output_dim(&self, n_classes: usize) -> usize {
        match self {
            Head::ArcFace { embedding_dim, .. } => *embedding_dim,
            Head::Softmax | Head::Cac { .. } => n_classes,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            learning_rate: 0.01,
            momentum: 0.9,
            epochs: 30,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::InvalidInput("hidden width must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidInput(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        Ok(())
    }
}

/// Row-major `weights[out][in]` plus `bias[out]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    fn xavier(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = (0..outputs)
            .map(|_| {
                (0..inputs)
                    .map(|_| rng.random_range(-limit..limit))
                    .collect()
            })
            .collect();
        Self {
            weights,
            bias: vec![0.0; outputs],
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            weights: self.weights.iter().map(|r| vec![0.0; r.len()]).collect(),
            bias: vec![0.0; self.bias.len()],
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| dot(w, x) + b)
            .collect()
    }

    fn accumulate(&mut self, grad_out: &[f64], input: &[f64]) {
        for ((row, b), g) in self.weights.iter_mut().zip(&mut self.bias).zip(grad_out) {
            for (w, x) in row.iter_mut().zip(input) {
                *w += g * x;
            }
            *b += g;
        }
    }

    fn backward_input(&self, grad_out: &[f64]) -> Vec<f64> {
        let mut grad_in = vec![0.0; self.weights.first().map_or(0, Vec::len)];
        for (row, g) in self.weights.iter().zip(grad_out) {
            for (gi, w) in grad_in.iter_mut().zip(row) {
                *gi += g * w;
            }
        }
        grad_in
    }

    fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .flatten()
            .chain(&self.bias)
            .all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyNetwork {
    pub head: Head,
    pub n_classes: usize,
    pub input_mean: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub hidden: DenseLayer,
    pub output: DenseLayer,
    /// Unit-norm class weights of the ArcFace head.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_weights: Option<Vec<Vec<f64>>>,
    /// Anchored centers of the CAC head.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centers: Option<Vec<Vec<f64>>>,
}

struct Gradients {
    hidden: DenseLayer,
    output: DenseLayer,
    class_weights: Option<Vec<Vec<f64>>>,
}

impl ToyNetwork {
    /// A freshly initialized network whose standardization uses `inputs`.
    pub fn init(
        inputs: &[Vec<f64>],
        n_classes: usize,
        head: Head,
        config: &TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        let dim = inputs
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::InvalidInput("no training inputs".into()))?;
        if dim == 0 {
            return Err(Error::InvalidInput("inputs have zero dimension".into()));
        }
        if let Some(bad) = inputs.iter().find(|x| x.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: bad.len(),
            });
        }
        if n_classes < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 classes, got {n_classes}"
            )));
        }
        let out_dim = head.output_dim(n_classes);
        if out_dim == 0 {
            return Err(Error::InvalidInput(
                "embedding dimension must be positive".into(),
            ));
        }

        let input_mean =
            linalg::mean_of(inputs.iter().map(Vec::as_slice), dim).expect("inputs are nonempty");
        let n = inputs.len() as f64;
        let input_scale = (0..dim)
            .map(|j| {
                let var = inputs
                    .iter()
                    .map(|x| (x[j] - input_mean[j]).powi(2))
                    .sum::<f64>()
                    / n;
                let sd = var.sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();

        let mut rng = seed::rng(config.seed, "toy/init");
        let hidden = DenseLayer::xavier(dim, config.hidden, &mut rng);
        let output = DenseLayer::xavier(config.hidden, out_dim, &mut rng);
        let (class_weights, centers) = match &head {
            Head::Softmax => (None, None),
            Head::ArcFace { scale, margin, .. } => {
                let rows = (0..n_classes)
                    .map(|_| (0..out_dim).map(|_| rng.random_range(-1.0..1.0)).collect())
                    .collect();
                let params = ArcFaceParams::new(*scale, *margin, rows)?;
                (Some(params.class_weights), None)
            }
            Head::Cac {
                anchor_magnitude,
                anchor_weight,
            } => {
                CacLossParams::new(*anchor_weight, &[])?;
                let labels = (0..n_classes).map(|i| i.to_string()).collect();
                (
                    None,
                    Some(CacModel::anchored(labels, *anchor_magnitude)?.centers),
                )
            }
        };
        Ok(Self {
            head,
            n_classes,
            input_mean,
            input_scale,
            hidden,
            output,
            class_weights,
            centers,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.output.bias.len()
    }

    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.input_mean)
            .zip(&self.input_scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    /// Standardized input, hidden activations and output.
    fn forward_cached(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let xs = self.standardize(x);
        let h: Vec<f64> = self.hidden.apply(&xs).into_iter().map(f64::tanh).collect();
        let out = self.output.apply(&h);
        (xs, h, out)
    }

    /// The emitted vector for one input.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        Ok(self.forward_cached(x).2)
    }

    /// Closed-set class implied by the head for an emitted vector.
    pub fn classify_output(&self, out: &[f64]) -> usize {
        match &self.head {
            Head::Softmax => linalg::argmax(out),
            Head::ArcFace { .. } => {
                let w = self
                    .class_weights
                    .as_ref()
                    .expect("arcface head has class weights");
                let sims: Vec<f64> = w.iter().map(|row| dot(row, out)).collect();
                linalg::argmax(&sims)
            }
            Head::Cac { .. } => {
                let c = self.centers.as_ref().expect("cac head has centers");
                let d: Vec<f64> = c.iter().map(|row| linalg::euclidean(row, out)).collect();
                linalg::argmin(&d)
            }
        }
    }

    pub fn predict_class(&self, x: &[f64]) -> Result<usize> {
        Ok(self.classify_output(&self.forward(x)?))
    }

    pub fn accuracy(&self, inputs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
        if inputs.is_empty() {
            return Err(Error::InvalidInput("no inputs".into()));
        }
        let mut correct = 0usize;
        for (x, y) in inputs.iter().zip(labels) {
            if self.predict_class(x)? == *y {
                correct += 1;
            }
        }
        Ok(correct as f64 / inputs.len() as f64)
    }

    /// The same samples with features replaced by emitted vectors.
    pub fn embed_dataset(&self, dataset: &EmbeddingDataset) -> Result<EmbeddingDataset> {
        let samples = dataset
            .samples()
            .iter()
            .map(|s| {
                Ok(Sample {
                    id: s.id.clone(),
                    label: s.label.clone(),
                    split: s.split,
                    features: self.forward(&s.features)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        EmbeddingDataset::new(self.output_dim(), samples)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    fn is_finite(&self) -> bool {
        self.hidden.is_finite()
            && self.output.is_finite()
            && self
                .class_weights
                .iter()
                .flatten()
                .flatten()
                .all(|v| v.is_finite())
    }

    fn zero_gradients(&self) -> Gradients {
        Gradients {
            hidden: self.hidden.zeros_like(),
            output: self.output.zeros_like(),
            class_weights: self
                .class_weights
                .as_ref()
                .map(|w| w.iter().map(|r| vec![0.0; r.len()]).collect()),
        }
    }

    /// Loss on one sample; gradients are added into `grads`.
    fn accumulate(&self, x: &[f64], label: usize, grads: &mut Gradients) -> Result<f64> {
        let (xs, h, out) = self.forward_cached(x);
        let (loss, grad_out) = match &self.head {
            Head::Softmax => {
                let r = softmax_ce_loss(&out, label)?;
                (r.loss, r.grad)
            }
            Head::ArcFace { scale, margin, .. } => {
                let params = ArcFaceParams {
                    scale: *scale,
                    margin: *margin,
                    class_weights: self
                        .class_weights
                        .clone()
                        .expect("arcface head has class weights"),
                };
                let r = arcface_loss_full(&out, label, &params)?;
                let acc = grads.class_weights.as_mut().expect("arcface gradients");
                for (a, g) in acc.iter_mut().zip(&r.grad_weights) {
                    for (av, gv) in a.iter_mut().zip(g) {
                        *av += gv;
                    }
                }
                (r.loss, r.grad_embedding)
            }
            Head::Cac { anchor_weight, .. } => {
                let centers = self.centers.as_ref().expect("cac head has centers");
                let params = CacLossParams {
                    anchor_weight: *anchor_weight,
                    centers,
                };
                let r = cac_loss(&out, label, &params)?;
                (r.loss, r.grad)
            }
        };
        grads.output.accumulate(&grad_out, &h);
        let grad_h = self.output.backward_input(&grad_out);
        let grad_pre: Vec<f64> = grad_h
            .iter()
            .zip(&h)
            .map(|(g, a)| g * (1.0 - a * a))
            .collect();
        grads.hidden.accumulate(&grad_pre, &xs);
        Ok(loss)
    }
}

fn momentum_step(
    param: &mut [f64],
    velocity: &mut [f64],
    grad: &[f64],
    scale: f64,
    config: &TrainConfig,
) {
    for ((p, v), g) in param.iter_mut().zip(velocity.iter_mut()).zip(grad) {
        *v = config.momentum * *v - config.learning_rate * g * scale;
        *p += *v;
    }
}

fn layer_step(
    layer: &mut DenseLayer,
    velocity: &mut DenseLayer,
    grad: &DenseLayer,
    scale: f64,
    config: &TrainConfig,
) {
    for ((p, v), g) in layer
        .weights
        .iter_mut()
        .zip(&mut velocity.weights)
        .zip(&grad.weights)
    {
        momentum_step(p, v, g, scale, config);
    }
    momentum_step(
        &mut layer.bias,
        &mut velocity.bias,
        &grad.bias,
        scale,
        config,
    );
}

/// Trains a [`ToyNetwork`] on `inputs` with class indices `labels`.
///
/// Samples are visited in a seeded shuffled order each epoch and gradients
/// are averaged over each mini-batch in index order, so the result is a pure
/// function of the arguments.
pub fn train_toy(
    inputs: &[Vec<f64>],
    labels: &[usize],
    n_classes: usize,
    head: Head,
    config: &TrainConfig,
) -> Result<ToyNetwork> {
    if inputs.len() != labels.len() {
        return Err(Error::InvalidInput(
            "inputs and labels differ in length".into(),
        ));
    }
    if let Some(bad) = labels.iter().find(|&&y| y >= n_classes) {
        return Err(Error::InvalidInput(format!(
            "label {bad} out of range for {n_classes} classes"
        )));
    }
    let mut net = ToyNetwork::init(inputs, n_classes, head, config)?;
    let mut velocity = net.zero_gradients();
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut shuffle_rng = seed::rng(config.seed, "toy/shuffle");

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(config.batch_size) {
            let mut grads = net.zero_gradients();
            let mut batch_loss = 0.0;
            for &i in batch {
                batch_loss += net.accumulate(&inputs[i], labels[i], &mut grads)?;
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            let scale = 1.0 / batch.len() as f64;
            layer_step(
                &mut net.hidden,
                &mut velocity.hidden,
                &grads.hidden,
                scale,
                config,
            );
            layer_step(
                &mut net.output,
                &mut velocity.output,
                &grads.output,
                scale,
                config,
            );
            if let (Some(w), Some(v), Some(g)) = (
                net.class_weights.as_mut(),
                velocity.class_weights.as_mut(),
                grads.class_weights.as_ref(),
            ) {
                for ((row, vrow), grow) in w.iter_mut().zip(v.iter_mut()).zip(g) {
                    momentum_step(row, vrow, grow, scale, config);
                    let n = linalg::norm(row);
                    if n > 0.0 && n.is_finite() {
                        row.iter_mut().for_each(|x| *x /= n);
                    }
                }
            }
            if !net.is_finite() {
                return Err(Error::Diverged { epoch });
            }
        }
    }
    Ok(net)
}
