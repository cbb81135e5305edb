//! Dueling Q-network.
//!
//! A shared trunk (one ReLU hidden layer with dropout by default) feeds two
//! affine streams: a scalar state value `v` and a `K`-vector of advantages
//! `a`. They are combined as
//!
//! ```text
//! q[k] = v + a[k] − softmax(a)[k]      (softmax-subtract, default)
//! q[k] = v + a[k] − mean(a)            (mean-subtract)
//! ```
//!
//! `x − softmax(x)` is strictly increasing in each coordinate, so both forms
//! keep `argmax q == argmax a`. A single-stream head (no value stream, `q = a`)
//! is available as the non-dueling comparator.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::model_io::{ModelKind, ModelRecord};
use crate::numkernel::{
    dense_backward, dense_forward, softmax, Activation, DenseLayer, DropoutMask, LayerCache,
    LayerGrad, LossReduction,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregator {
    #[default]
    SoftmaxSubtract,
    MeanSubtract,
}

impl FromStr for Aggregator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax-subtract" | "softmax" => Ok(Aggregator::SoftmaxSubtract),
            "mean-subtract" | "mean" => Ok(Aggregator::MeanSubtract),
            other => Err(Error::InvalidConfig(format!("unknown aggregator '{other}'"))),
        }
    }
}

impl fmt::Display for Aggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregator::SoftmaxSubtract => "softmax-subtract",
            Aggregator::MeanSubtract => "mean-subtract",
        })
    }
}

/// Output head of the Q-network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Head {
    Dueling(Aggregator),
    SingleStream,
}

impl Default for Head {
    fn default() -> Self {
        Head::Dueling(Aggregator::SoftmaxSubtract)
    }
}

impl FromStr for Head {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single-stream" | "single" => Ok(Head::SingleStream),
            other => other.parse().map(Head::Dueling).map_err(|_| {
                Error::InvalidConfig(format!(
                    "unknown head '{other}' (expected softmax-subtract, mean-subtract or single-stream)"
                ))
            }),
        }
    }
}

impl fmt::Display for Head {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Head::Dueling(agg) => agg.fmt(f),
            Head::SingleStream => f.write_str("single-stream"),
        }
    }
}

impl TryFrom<String> for Head {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Head> for String {
    fn from(h: Head) -> String {
        h.to_string()
    }
}

impl Head {
    fn tag(self) -> u32 {
        match self {
            Head::SingleStream => 0,
            Head::Dueling(Aggregator::SoftmaxSubtract) => 1,
            Head::Dueling(Aggregator::MeanSubtract) => 2,
        }
    }

    fn from_tag(tag: u32) -> Result<Self> {
        match tag {
            0 => Ok(Head::SingleStream),
            1 => Ok(Head::Dueling(Aggregator::SoftmaxSubtract)),
            2 => Ok(Head::Dueling(Aggregator::MeanSubtract)),
            other => Err(Error::Format(format!("unknown Q-network head tag {other}"))),
        }
    }
}

/// Combine a state value and an advantage vector into Q-values.
pub fn advantage_aggregate(v: f64, a: &[f64], mode: Aggregator) -> Result<Vec<f64>> {
    if a.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "advantage aggregation needs at least 2 actions, got {}",
            a.len()
        )));
    }
    Ok(match mode {
        Aggregator::SoftmaxSubtract => {
            let s = softmax(a)?;
            a.iter().zip(&s).map(|(ak, sk)| v + ak - sk).collect()
        }
        Aggregator::MeanSubtract => {
            let mean = a.iter().sum::<f64>() / a.len() as f64;
            a.iter().map(|ak| v + ak - mean).collect()
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QOutput {
    pub q: Vec<f64>,
    /// State value; `0` for a single-stream head.
    pub v: f64,
    /// Advantage stream output; equals `q` for a single-stream head.
    pub a: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct QCache {
    trunk: Vec<LayerCache>,
    value: Option<LayerCache>,
    advantage: LayerCache,
    advantage_softmax: Option<Vec<f64>>,
    action_count: usize,
}

impl QCache {
    /// Dropout masks drawn for each trunk layer in this pass.
    pub fn trunk_masks(&self) -> Vec<Option<DropoutMask>> {
        self.trunk.iter().map(|c| c.mask.clone()).collect()
    }

    /// Trunk pre-activations, one slice per layer.
    pub fn trunk_pre_activations(&self) -> Vec<&[f64]> {
        self.trunk.iter().map(|c| c.pre_activation.as_slice()).collect()
    }
}

/// Parameters of one Q-network: trunk (θ), value stream (β), advantage stream (α).
#[derive(Debug, Clone, PartialEq)]
pub struct DuelingParams {
    trunk: Vec<DenseLayer>,
    value: Option<DenseLayer>,
    advantage: DenseLayer,
    head: Head,
    dropout: f64,
}

/// Gradients with the same layout as [`DuelingParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct QGrads {
    pub trunk: Vec<LayerGrad>,
    pub value: Option<LayerGrad>,
    pub advantage: LayerGrad,
}

impl QGrads {
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.trunk.iter().for_each(|g| g.write_flat(&mut out));
        if let Some(v) = &self.value {
            v.write_flat(&mut out);
        }
        self.advantage.write_flat(&mut out);
        out
    }
}

/// Network dimensions used to build fresh parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkShape {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub actions: usize,
    pub head: Head,
    pub dropout: f64,
}

impl DuelingParams {
    pub fn init<R: Rng + ?Sized>(shape: &NetworkShape, rng: &mut R) -> Result<Self> {
        if shape.actions < 2 {
            return Err(Error::InvalidConfig(format!(
                "a Q-network needs at least 2 actions, got {}",
                shape.actions
            )));
        }
        if !(0.0..1.0).contains(&shape.dropout) {
            return Err(Error::InvalidConfig(format!(
                "dropout rate must be in [0, 1), got {}",
                shape.dropout
            )));
        }
        let mut trunk = Vec::with_capacity(shape.hidden.len());
        let mut width = shape.input_dim;
        for &h in &shape.hidden {
            trunk.push(DenseLayer::glorot(width, h, Activation::Relu, rng)?);
            width = h;
        }
        let value = match shape.head {
            Head::Dueling(_) => Some(DenseLayer::glorot(width, 1, Activation::Identity, rng)?),
            Head::SingleStream => None,
        };
        let advantage = DenseLayer::glorot(width, shape.actions, Activation::Identity, rng)?;
        Ok(Self {
            trunk,
            value,
            advantage,
            head: shape.head,
            dropout: shape.dropout,
        })
    }

    /// Assemble from explicit layers; validates the stream shapes.
    pub fn from_layers(
        trunk: Vec<DenseLayer>,
        value: Option<DenseLayer>,
        advantage: DenseLayer,
        head: Head,
        dropout: f64,
    ) -> Result<Self> {
        let mut width = trunk.first().map(DenseLayer::in_dim).unwrap_or(advantage.in_dim());
        for layer in &trunk {
            if layer.in_dim() != width {
                return Err(shape_err("DuelingParams trunk", width, layer.in_dim()));
            }
            width = layer.out_dim();
        }
        match (&head, &value) {
            (Head::Dueling(_), Some(v)) => {
                if v.out_dim() != 1 || v.in_dim() != width {
                    return Err(shape_err(
                        "DuelingParams value stream",
                        format!("{width}->1"),
                        format!("{}->{}", v.in_dim(), v.out_dim()),
                    ));
                }
            }
            (Head::SingleStream, None) => {}
            _ => {
                return Err(Error::InvalidConfig(
                    "value stream must be present exactly when the head is dueling".into(),
                ))
            }
        }
        if advantage.in_dim() != width || advantage.out_dim() < 2 {
            return Err(shape_err(
                "DuelingParams advantage stream",
                format!("{width}->K (K >= 2)"),
                format!("{}->{}", advantage.in_dim(), advantage.out_dim()),
            ));
        }
        Ok(Self {
            trunk,
            value,
            advantage,
            head,
            dropout,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.trunk
            .first()
            .map_or(self.advantage.in_dim(), DenseLayer::in_dim)
    }

    pub fn action_count(&self) -> usize {
        self.advantage.out_dim()
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    pub fn trunk(&self) -> &[DenseLayer] {
        &self.trunk
    }

    pub fn value_stream(&self) -> Option<&DenseLayer> {
        self.value.as_ref()
    }

    pub fn advantage_stream(&self) -> &DenseLayer {
        &self.advantage
    }

    fn layers(&self) -> impl Iterator<Item = &DenseLayer> {
        self.trunk.iter().chain(self.value.iter()).chain(std::iter::once(&self.advantage))
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut DenseLayer> {
        self.trunk
            .iter_mut()
            .chain(self.value.iter_mut())
            .chain(std::iter::once(&mut self.advantage))
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(DenseLayer::param_count).sum()
    }

    /// All parameters in declaration order (trunk, value, advantage).
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.layers().for_each(|l| l.write_params(&mut out));
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(shape_err("set_params_flat", self.param_count(), flat.len()));
        }
        let mut off = 0;
        for layer in self.layers_mut() {
            off += layer.read_params(&flat[off..])?;
        }
        Ok(())
    }

    pub fn zero_grads(&self) -> QGrads {
        QGrads {
            trunk: self.trunk.iter().map(LayerGrad::zeros_like).collect(),
            value: self.value.as_ref().map(LayerGrad::zeros_like),
            advantage: LayerGrad::zeros_like(&self.advantage),
        }
    }

    /// Forward pass. In `Mode::Train` fresh dropout masks are drawn from
    /// `rng` for every trunk layer; `Mode::Eval` never touches `rng`.
    pub fn q_forward<R: Rng + ?Sized>(
        &self,
        state: &[f64],
        mode: Mode,
        rng: &mut R,
    ) -> Result<(QOutput, QCache)> {
        let masks = match mode {
            Mode::Eval => vec![None; self.trunk.len()],
            Mode::Train if self.dropout > 0.0 => self
                .trunk
                .iter()
                .map(|l| DropoutMask::sample(l.out_dim(), 1.0 - self.dropout, rng).map(Some))
                .collect::<Result<Vec<_>>>()?,
            Mode::Train => vec![None; self.trunk.len()],
        };
        self.q_forward_masked(state, &masks)
    }

    /// Evaluation-mode forward pass.
    pub fn q_eval(&self, state: &[f64]) -> Result<QOutput> {
        let masks = vec![None; self.trunk.len()];
        Ok(self.q_forward_masked(state, &masks)?.0)
    }

    /// Forward pass with explicit per-trunk-layer dropout masks.
    pub fn q_forward_masked(
        &self,
        state: &[f64],
        masks: &[Option<DropoutMask>],
    ) -> Result<(QOutput, QCache)> {
        if state.len() != self.input_dim() {
            return Err(shape_err("q_forward state", self.input_dim(), state.len()));
        }
        if masks.len() != self.trunk.len() {
            return Err(shape_err("q_forward masks", self.trunk.len(), masks.len()));
        }
        let mut h = state.to_vec();
        let mut trunk_caches = Vec::with_capacity(self.trunk.len());
        for (layer, mask) in self.trunk.iter().zip(masks) {
            let (out, cache) = dense_forward(layer, &h, mask.as_ref())?;
            trunk_caches.push(cache);
            h = out;
        }
        let (a, adv_cache) = dense_forward(&self.advantage, &h, None)?;
        let (output, value_cache, adv_softmax) = match (self.head, &self.value) {
            (Head::Dueling(agg), Some(value_layer)) => {
                let (v, vc) = dense_forward(value_layer, &h, None)?;
                let v = v[0];
                let q = advantage_aggregate(v, &a, agg)?;
                let s = match agg {
                    Aggregator::SoftmaxSubtract => Some(softmax(&a)?),
                    Aggregator::MeanSubtract => None,
                };
                (QOutput { q, v, a }, Some(vc), s)
            }
            _ => (
                QOutput {
                    q: a.clone(),
                    v: 0.0,
                    a,
                },
                None,
                None,
            ),
        };
        Ok((
            output,
            QCache {
                trunk: trunk_caches,
                value: value_cache,
                advantage: adv_cache,
                advantage_softmax: adv_softmax,
                action_count: self.action_count(),
            },
        ))
    }

    /// Gradients of a loss whose derivative with respect to `q[action]` is
    /// `dloss_dq` (e.g. `−2(y − q[action])` for the squared TD error).
    pub fn q_backward(&self, cache: &QCache, action: usize, dloss_dq: f64) -> Result<QGrads> {
        let mut grads = self.zero_grads();
        self.q_backward_into(cache, action, dloss_dq, &mut grads)?;
        Ok(grads)
    }

    /// Accumulating form of [`DuelingParams::q_backward`].
    pub fn q_backward_into(
        &self,
        cache: &QCache,
        action: usize,
        dloss_dq: f64,
        grads: &mut QGrads,
    ) -> Result<()> {
        let k = self.action_count();
        if action >= k {
            return Err(Error::InvalidInput(format!(
                "action {action} out of range for {k} actions"
            )));
        }
        if cache.action_count != k || cache.trunk.len() != self.trunk.len() {
            return Err(Error::InvalidInput("cache does not match this network".into()));
        }
        // d q[action] / d a[j]
        let da: Vec<f64> = match self.head {
            Head::SingleStream => (0..k).map(|j| if j == action { dloss_dq } else { 0.0 }).collect(),
            Head::Dueling(Aggregator::MeanSubtract) => (0..k)
                .map(|j| dloss_dq * (if j == action { 1.0 } else { 0.0 } - 1.0 / k as f64))
                .collect(),
            Head::Dueling(Aggregator::SoftmaxSubtract) => {
                let s = cache
                    .advantage_softmax
                    .as_ref()
                    .ok_or_else(|| Error::InvalidInput("cache lacks advantage softmax".into()))?;
                let sa = s[action];
                (0..k)
                    .map(|j| {
                        let jac = if j == action { 1.0 - sa * (1.0 - sa) } else { sa * s[j] };
                        dloss_dq * jac
                    })
                    .collect()
            }
        };
        let mut dh = dense_backward(&self.advantage, &cache.advantage, &da, &mut grads.advantage)?;
        if let (Some(layer), Some(vc), Some(vg)) = (&self.value, &cache.value, &mut grads.value) {
            let dv = dense_backward(layer, vc, &[dloss_dq], vg)?;
            for (d, x) in dh.iter_mut().zip(dv) {
                *d += x;
            }
        }
        for i in (0..self.trunk.len()).rev() {
            dh = dense_backward(&self.trunk[i], &cache.trunk[i], &dh, &mut grads.trunk[i])?;
        }
        Ok(())
    }

    /// Squared TD loss over a batch of `(state, action, target)` triples and
    /// its flat gradient with respect to these parameters. Targets are
    /// constants.
    pub fn td_loss_and_grad<R: Rng + ?Sized>(
        &self,
        batch: &[(&[f64], usize, f64)],
        reduction: LossReduction,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(f64, Vec<f64>)> {
        let scale = reduction.factor(batch.len());
        let mut grads = self.zero_grads();
        let mut loss = 0.0;
        for &(state, action, target) in batch {
            let (out, cache) = self.q_forward(state, mode, rng)?;
            let q = *out.q.get(action).ok_or_else(|| {
                Error::InvalidInput(format!("action {action} out of range"))
            })?;
            let r = target - q;
            loss += scale * r * r;
            self.q_backward_into(&cache, action, -2.0 * r * scale, &mut grads)?;
        }
        Ok((loss, grads.flat()))
    }

    /// Softmax over evaluation-mode Q-values, one score per class.
    pub fn predict_scores(&self, state: &[f64]) -> Result<Vec<f64>> {
        softmax(&self.q_eval(state)?.q)
    }

    pub fn to_record(&self, provenance: &str) -> ModelRecord {
        ModelRecord {
            kind: ModelKind::QNetwork,
            head: self.head.tag(),
            action_count: self.action_count() as u32,
            dropout: self.dropout,
            trunk_layers: self.trunk.len() as u32,
            layers: self.layers().cloned().collect(),
            provenance: provenance.to_string(),
        }
    }

    pub fn from_record(record: &ModelRecord) -> Result<Self> {
        if record.kind != ModelKind::QNetwork {
            return Err(Error::Format("model file does not hold a Q-network".into()));
        }
        let head = Head::from_tag(record.head)?;
        let t = record.trunk_layers as usize;
        let expected = t + 1 + usize::from(matches!(head, Head::Dueling(_)));
        if record.layers.len() != expected {
            return Err(Error::Format(format!(
                "Q-network needs {expected} layers, file has {}",
                record.layers.len()
            )));
        }
        let mut layers = record.layers.clone();
        let advantage = layers.pop().unwrap();
        let value = match head {
            Head::Dueling(_) => layers.pop(),
            Head::SingleStream => None,
        };
        let params = Self::from_layers(layers, value, advantage, head, record.dropout)?;
        if params.action_count() != record.action_count as usize {
            return Err(Error::Format("action count does not match advantage stream".into()));
        }
        Ok(params)
    }

    pub fn to_bytes(&self, provenance: &str) -> Vec<u8> {
        self.to_record(provenance).encode()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, String)> {
        let record = ModelRecord::decode(bytes)?;
        Ok((Self::from_record(&record)?, record.provenance))
    }
}

/// Target-network synchronisation: an independent deep copy.
pub fn sync_target(online: &DuelingParams) -> DuelingParams {
    online.clone()
}

/// Index of the largest value; the lowest index wins exact ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
