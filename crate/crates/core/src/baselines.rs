//! Supervised comparators: a ReLU multilayer perceptron trained with Adam on
//! (optionally class-weighted) cross-entropy. Binary tasks use one sigmoid
//! output, multiclass tasks a softmax layer. SMOTE-fed training is the same
//! model applied to an oversampled training set.

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{shape_err, Error, Result};
use crate::model_io::{ModelKind, ModelRecord};
use crate::numkernel::{
    dense_backward, dense_forward, softmax, Activation, AdamState, DenseLayer, DropoutMask,
    LayerCache, LayerGrad,
};

/// `w_k = N / (K · N_k)`, so balanced data gets all-ones.
pub fn cost_weights(class_counts: &[usize]) -> Result<Vec<f64>> {
    if class_counts.is_empty() {
        return Err(Error::InvalidInput("no classes".into()));
    }
    if let Some(k) = class_counts.iter().position(|&n| n == 0) {
        return Err(Error::Data(format!("class {k} is absent from the training data")));
    }
    let total: usize = class_counts.iter().sum();
    let k = class_counts.len() as f64;
    Ok(class_counts.iter().map(|&n| total as f64 / (k * n as f64)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightMode {
    #[default]
    None,
    InverseFrequency,
}

/// Comparator settings. `Default` is the binary preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SupervisedConfig {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_mode: WeightMode,
    /// Epochs without validation-loss improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        Self {
            hidden: vec![10],
            dropout: 0.3,
            learning_rate: 0.1,
            epochs: 100,
            batch_size: 64,
            weight_mode: WeightMode::None,
            patience: 10,
            seed: 0,
        }
    }
}

impl SupervisedConfig {
    pub fn binary() -> Self {
        Self::default()
    }

    pub fn multiclass() -> Self {
        Self {
            hidden: vec![200],
            learning_rate: 0.01,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden must list at least one positive layer width".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
    classes: usize,
    dropout: f64,
}

pub struct MlpCache {
    caches: Vec<LayerCache>,
    probs: Vec<f64>,
}

/// `ln σ(z)` without overflow.
fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Mlp {
    pub fn init<R: Rng + ?Sized>(input_dim: usize, hidden: &[usize], classes: usize, dropout: f64, rng: &mut R) -> Result<Self> {
        if classes < 2 {
            return Err(Error::InvalidInput("a classifier needs at least 2 classes".into()));
        }
        if input_dim == 0 {
            return Err(Error::InvalidInput("input dimension must be positive".into()));
        }
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = input_dim;
        for &h in hidden {
            layers.push(DenseLayer::glorot(prev, h, Activation::Relu, rng)?);
            prev = h;
        }
        let out = if classes == 2 { 1 } else { classes };
        layers.push(DenseLayer::glorot(prev, out, Activation::Identity, rng)?);
        Ok(Self {
            layers,
            classes,
            dropout,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn is_binary(&self) -> bool {
        self.classes == 2
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            l.write_params(&mut out);
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(shape_err("Mlp::set_params_flat", self.param_count(), flat.len()));
        }
        let mut off = 0;
        for l in &mut self.layers {
            off += l.read_params(&flat[off..])?;
        }
        Ok(())
    }

    /// Class probabilities. `masks` holds one optional dropout mask per
    /// hidden layer.
    pub fn forward_masked(&self, x: &[f64], masks: &[Option<DropoutMask>]) -> Result<MlpCache> {
        if x.len() != self.input_dim() {
            return Err(shape_err("Mlp input", self.input_dim(), x.len()));
        }
        let n_hidden = self.layers.len() - 1;
        if masks.len() != n_hidden {
            return Err(shape_err("Mlp masks", n_hidden, masks.len()));
        }
        let mut h = x.to_vec();
        let mut caches = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let mask = if i < n_hidden { masks[i].as_ref() } else { None };
            let (out, cache) = dense_forward(layer, &h, mask)?;
            caches.push(cache);
            h = out;
        }
        let probs = if self.is_binary() {
            let p = sigmoid(h[0]);
            vec![1.0 - p, p]
        } else {
            softmax(&h)?
        };
        Ok(MlpCache { caches, probs })
    }

    pub fn forward<R: Rng + ?Sized>(&self, x: &[f64], train: bool, rng: &mut R) -> Result<MlpCache> {
        let n_hidden = self.layers.len() - 1;
        let masks = if train && self.dropout > 0.0 {
            self.layers[..n_hidden]
                .iter()
                .map(|l| DropoutMask::sample(l.out_dim(), 1.0 - self.dropout, rng).map(Some))
                .collect::<Result<Vec<_>>>()?
        } else {
            vec![None; n_hidden]
        };
        self.forward_masked(x, &masks)
    }

    /// Evaluation-mode class probabilities; binary models return `[1 − p, p]`.
    pub fn predict_scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_masked(x, &vec![None; self.layers.len() - 1])?.probs)
    }

    fn logit(cache: &MlpCache) -> &[f64] {
        &cache.caches.last().unwrap().pre_activation
    }

    /// Weighted cross-entropy `−w_y ln p_y` of one sample.
    pub fn sample_loss(&self, cache: &MlpCache, label: usize, weight: f64) -> f64 {
        if self.is_binary() {
            let z = Self::logit(cache)[0];
            let lp = if label == 1 { log_sigmoid(z) } else { log_sigmoid(-z) };
            -weight * lp
        } else {
            // ln softmax via log-sum-exp on the logits.
            let z = Self::logit(cache);
            let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            -weight * (z[label] - lse)
        }
    }

    /// Accumulates the gradient of [`Mlp::sample_loss`] into `grads`.
    pub fn sample_backward(&self, cache: &MlpCache, label: usize, weight: f64, grads: &mut [LayerGrad]) -> Result<()> {
        if label >= self.classes {
            return Err(Error::InvalidInput(format!("label {label} out of range")));
        }
        let upstream: Vec<f64> = if self.is_binary() {
            vec![weight * (cache.probs[1] - if label == 1 { 1.0 } else { 0.0 })]
        } else {
            cache
                .probs
                .iter()
                .enumerate()
                .map(|(k, p)| weight * (p - if k == label { 1.0 } else { 0.0 }))
                .collect()
        };
        let mut d = upstream;
        for i in (0..self.layers.len()).rev() {
            d = dense_backward(&self.layers[i], &cache.caches[i], &d, &mut grads[i])?;
        }
        Ok(())
    }

    pub fn zero_grads(&self) -> Vec<LayerGrad> {
        self.layers.iter().map(LayerGrad::zeros_like).collect()
    }

    /// Summed weighted cross-entropy over `rows` and its flat gradient.
    pub fn batch_loss_and_grad<R: Rng + ?Sized>(
        &self,
        data: &Dataset,
        rows: &[usize],
        weights: &[f64],
        train: bool,
        rng: &mut R,
    ) -> Result<(f64, Vec<f64>)> {
        let mut grads = self.zero_grads();
        let mut loss = 0.0;
        for &i in rows {
            let label = data.labels[i];
            let cache = self.forward(data.row(i), train, rng)?;
            loss += self.sample_loss(&cache, label, weights[label]);
            self.sample_backward(&cache, label, weights[label], &mut grads)?;
        }
        let mut flat = Vec::with_capacity(self.param_count());
        for g in &grads {
            g.write_flat(&mut flat);
        }
        Ok((loss, flat))
    }

    /// Mean weighted cross-entropy in evaluation mode.
    pub fn mean_loss(&self, data: &Dataset, weights: &[f64]) -> Result<f64> {
        let masks = vec![None; self.layers.len() - 1];
        let mut total = 0.0;
        for i in 0..data.len() {
            let cache = self.forward_masked(data.row(i), &masks)?;
            total += self.sample_loss(&cache, data.labels[i], weights[data.labels[i]]);
        }
        Ok(total / data.len().max(1) as f64)
    }

    pub fn to_record(&self, provenance: &str) -> ModelRecord {
        ModelRecord {
            kind: ModelKind::Supervised,
            head: u32::from(!self.is_binary()),
            action_count: self.classes as u32,
            dropout: self.dropout,
            trunk_layers: (self.layers.len() - 1) as u32,
            layers: self.layers.clone(),
            provenance: provenance.to_string(),
        }
    }

    pub fn from_record(record: &ModelRecord) -> Result<Self> {
        if record.kind != ModelKind::Supervised {
            return Err(Error::Format("model file does not hold a supervised MLP".into()));
        }
        let classes = record.action_count as usize;
        let out = if classes == 2 { 1 } else { classes };
        let head_ok = (record.head == 0) == (classes == 2) && record.head <= 1;
        if classes < 2 || !head_ok || record.layers.len() != record.trunk_layers as usize + 1 {
            return Err(Error::Format("inconsistent MLP header".into()));
        }
        let last = record.layers.last().unwrap();
        if last.out_dim() != out {
            return Err(Error::Format("MLP output width does not match its class count".into()));
        }
        for w in record.layers.windows(2) {
            if w[0].out_dim() != w[1].in_dim() {
                return Err(Error::Format("MLP layer shapes do not chain".into()));
            }
        }
        Ok(Self {
            layers: record.layers.clone(),
            classes,
            dropout: record.dropout,
        })
    }

    pub fn to_bytes(&self, provenance: &str) -> Vec<u8> {
        self.to_record(provenance).encode()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, String)> {
        let record = ModelRecord::decode(bytes)?;
        Ok((Self::from_record(&record)?, record.provenance))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SupervisedOutcome {
    pub model: Mlp,
    pub history: Vec<EpochRecord>,
    pub class_weights: Vec<f64>,
    /// Epoch whose parameters were returned.
    pub best_epoch: usize,
}

pub fn history_tsv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch\ttrain_loss\tval_loss\n");
    for r in history {
        let v = r.val_loss.map_or_else(|| "NA".into(), |x| format!("{x:.6}"));
        out.push_str(&format!("{}\t{:.6}\t{v}\n", r.epoch, r.train_loss));
    }
    out
}

/// Mini-batch Adam on weighted cross-entropy. With a validation set the
/// parameters with the lowest validation loss are returned and training
/// stops after `patience` epochs without improvement.
pub fn train_supervised(config: &SupervisedConfig, train: &Dataset, validation: Option<&Dataset>) -> Result<SupervisedOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    let validation = validation.filter(|v| !v.is_empty());
    if let Some(v) = validation {
        if v.dim() != train.dim() || v.n_classes() != train.n_classes() {
            return Err(Error::Data("validation set shape differs from the training set".into()));
        }
    }
    let class_weights = match config.weight_mode {
        WeightMode::None => vec![1.0; train.n_classes()],
        WeightMode::InverseFrequency => cost_weights(&train.class_counts())?,
    };
    info!("class weights {class_weights:?}");
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = Mlp::init(train.dim(), &config.hidden, train.n_classes(), config.dropout, &mut rng)?;
    let mut adam = AdamState::new(model.param_count(), config.learning_rate);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Mlp)> = None;
    let mut since_best = 0;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let (loss, grads) = model.batch_loss_and_grad(train, batch, &class_weights, true, &mut rng)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "cross-entropy {loss} in epoch {epoch}; try a lower learning_rate (now {})",
                    config.learning_rate
                )));
            }
            epoch_loss += loss;
            let mut flat = model.params_flat();
            adam.step(&mut flat, &grads)?;
            model.set_params_flat(&flat)?;
        }
        let val_loss = validation.map(|v| model.mean_loss(v, &class_weights)).transpose()?;
        history.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / train.len() as f64,
            val_loss,
        });
        debug!("epoch {epoch}: train {:.5} val {val_loss:?}", epoch_loss / train.len() as f64);
        if let Some(vl) = val_loss {
            if !vl.is_finite() {
                return Err(Error::NonFinite(format!("validation loss {vl} in epoch {epoch}")));
            }
            if best.as_ref().is_none_or(|b| vl < b.0) {
                best = Some((vl, epoch, model.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= config.patience {
                    info!("early stop after epoch {epoch}");
                    break;
                }
            }
        }
    }
    let (model, best_epoch) = match best {
        Some((_, e, m)) => (m, e),
        None => {
            let last = history.len();
            (model, last)
        }
    };
    Ok(SupervisedOutcome {
        model,
        history,
        class_weights,
        best_epoch,
    })
}

/// Score vectors for every row of `data`.
pub fn predict_scores(model: &Mlp, data: &Dataset) -> Result<Vec<Vec<f64>>> {
    if data.dim() != model.input_dim() {
        return Err(shape_err("predict_scores features", model.input_dim(), data.dim()));
    }
    (0..data.len()).map(|i| model.predict_scores(data.row(i))).collect()
}
