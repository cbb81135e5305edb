//! Dense numeric kernel: row-major matrices, affine layers with optional ReLU,
//! inverted dropout, softmax, squared-error loss, reverse-mode gradients for
//! fixed layer stacks, Adam, and a central-difference gradient oracle.
//!
//! Everything is `f64`. Randomness always comes from a caller-supplied
//! generator so that seeded runs are bit-reproducible.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(shape_err(
                "Matrix::new",
                format!("{} entries for {rows}x{cols}", rows * cols),
                data.len(),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(shape_err(
                    "Matrix::from_rows",
                    format!("{cols} columns"),
                    format!("{} in row {i}", row.len()),
                ));
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Keeps the listed rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    /// Keeps the listed columns, in the given order.
    pub fn select_cols(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(self.rows * indices.len());
        for r in 0..self.rows {
            let row = self.row(r);
            data.extend(indices.iter().map(|&c| row[c]));
        }
        Self {
            rows: self.rows,
            cols: indices.len(),
            data,
        }
    }

    /// `self · x` for a column vector `x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(shape_err("matvec", self.cols, x.len()));
        }
        Ok((0..self.rows).map(|r| dot(self.row(r), x)).collect())
    }

    /// `selfᵀ · y` for a column vector `y`.
    pub fn matvec_transposed(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.rows {
            return Err(shape_err("matvec_transposed", self.rows, y.len()));
        }
        let mut out = vec![0.0; self.cols];
        for (r, &yr) in y.iter().enumerate() {
            if yr == 0.0 {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(self.row(r)) {
                *o += w * yr;
            }
        }
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Standard matrix product `a · b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(shape_err(
            "matmul",
            format!("lhs cols == rhs rows ({}x{} · {}x{})", a.rows, a.cols, b.rows, b.cols),
            format!("{} != {}", a.cols, b.rows),
        ));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for k in 0..a.cols {
            let aik = a.get(i, k);
            if aik == 0.0 {
                continue;
            }
            let brow = b.row(k);
            for (o, &bkj) in out.row_mut(i).iter_mut().zip(brow) {
                *o += aik * bkj;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub(crate) fn tag(self) -> u32 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
        }
    }

    pub(crate) fn from_tag(tag: u32) -> Result<Self> {
        match tag {
            0 => Ok(Activation::Identity),
            1 => Ok(Activation::Relu),
            other => Err(Error::Format(format!("unknown activation tag {other}"))),
        }
    }
}

/// Affine layer `activation(W·x + b)` with `W` of shape `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(shape_err("DenseLayer::new bias", weights.rows(), bias.len()));
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::InvalidConfig(format!(
                "layer dimensions must be positive, got {in_dim}->{out_dim}"
            )));
        }
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let data = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Ok(Self {
            weights: Matrix::new(out_dim, in_dim, data)?,
            bias: vec![0.0; out_dim],
            activation,
        })
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn param_count(&self) -> usize {
        self.weights.data().len() + self.bias.len()
    }

    /// Appends weights (row-major) then bias.
    pub fn write_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.weights.data());
        out.extend_from_slice(&self.bias);
    }

    /// Reads parameters in `write_params` order; returns how many were consumed.
    pub fn read_params(&mut self, src: &[f64]) -> Result<usize> {
        let n = self.param_count();
        if src.len() < n {
            return Err(shape_err("DenseLayer::read_params", n, src.len()));
        }
        let nw = self.weights.data().len();
        self.weights.data_mut().copy_from_slice(&src[..nw]);
        self.bias.copy_from_slice(&src[nw..n]);
        Ok(n)
    }
}

/// Inverted-dropout mask: kept units are scaled by `1 / keep_prob` at train
/// time so that evaluation needs no correction.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    keep_prob: f64,
    mask: Vec<bool>,
    scale: f64,
}

impl DropoutMask {
    pub fn sample<R: Rng + ?Sized>(len: usize, keep_prob: f64, rng: &mut R) -> Result<Self> {
        if !(keep_prob > 0.0 && keep_prob <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "keep probability must be in (0, 1], got {keep_prob}"
            )));
        }
        let mask = if keep_prob == 1.0 {
            vec![true; len]
        } else {
            (0..len).map(|_| rng.random::<f64>() < keep_prob).collect()
        };
        Ok(Self {
            keep_prob,
            mask,
            scale: 1.0 / keep_prob,
        })
    }

    pub fn keep_prob(&self) -> f64 {
        self.keep_prob
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    #[inline]
    fn factor(&self, i: usize) -> f64 {
        if self.mask[i] {
            self.scale
        } else {
            0.0
        }
    }

    pub fn apply(&self, values: &mut [f64]) {
        for (i, v) in values.iter_mut().enumerate() {
            *v *= self.factor(i);
        }
    }
}

/// What one `dense_forward` call must remember for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerCache {
    pub input: Vec<f64>,
    pub pre_activation: Vec<f64>,
    pub mask: Option<DropoutMask>,
}

pub fn dense_forward(
    layer: &DenseLayer,
    input: &[f64],
    dropout: Option<&DropoutMask>,
) -> Result<(Vec<f64>, LayerCache)> {
    if input.len() != layer.in_dim() {
        return Err(shape_err("dense_forward input", layer.in_dim(), input.len()));
    }
    if let Some(mask) = dropout {
        if mask.mask.len() != layer.out_dim() {
            return Err(shape_err("dense_forward dropout mask", layer.out_dim(), mask.mask.len()));
        }
    }
    let mut pre = layer.weights.matvec(input)?;
    for (z, b) in pre.iter_mut().zip(&layer.bias) {
        *z += b;
    }
    let mut out: Vec<f64> = pre.iter().map(|&z| layer.activation.apply(z)).collect();
    if let Some(mask) = dropout {
        mask.apply(&mut out);
    }
    Ok((
        out,
        LayerCache {
            input: input.to_vec(),
            pre_activation: pre,
            mask: dropout.cloned(),
        },
    ))
}

/// Gradient buffers with the same shapes as a `DenseLayer`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl LayerGrad {
    pub fn zeros_like(layer: &DenseLayer) -> Self {
        Self {
            weights: Matrix::zeros(layer.out_dim(), layer.in_dim()),
            bias: vec![0.0; layer.out_dim()],
        }
    }

    pub fn write_flat(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.weights.data());
        out.extend_from_slice(&self.bias);
    }
}

/// Backward through one layer, accumulating into `grad`. Returns the
/// gradient with respect to the layer input.
pub fn dense_backward(
    layer: &DenseLayer,
    cache: &LayerCache,
    upstream: &[f64],
    grad: &mut LayerGrad,
) -> Result<Vec<f64>> {
    let out_dim = layer.out_dim();
    if cache.input.len() != layer.in_dim() || cache.pre_activation.len() != out_dim {
        return Err(shape_err(
            "dense_backward cache",
            format!("{}->{}", layer.in_dim(), out_dim),
            format!("{}->{}", cache.input.len(), cache.pre_activation.len()),
        ));
    }
    if upstream.len() != out_dim {
        return Err(shape_err("dense_backward upstream", out_dim, upstream.len()));
    }
    if grad.weights.shape() != layer.weights.shape() {
        return Err(shape_err(
            "dense_backward grad buffer",
            format!("{:?}", layer.weights.shape()),
            format!("{:?}", grad.weights.shape()),
        ));
    }
    let delta: Vec<f64> = (0..out_dim)
        .map(|i| {
            let dropped = match &cache.mask {
                Some(mask) => upstream[i] * mask.factor(i),
                None => upstream[i],
            };
            dropped * layer.activation.derivative(cache.pre_activation[i])
        })
        .collect();
    for (i, &d) in delta.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        grad.bias[i] += d;
        for (g, &x) in grad.weights.row_mut(i).iter_mut().zip(&cache.input) {
            *g += d * x;
        }
    }
    layer.weights.matvec_transposed(&delta)
}

/// Reverse-mode pass over a sequential stack. `caches[i]` must come from
/// `dense_forward(&layers[i], ..)` in the same forward pass.
pub fn backward(
    layers: &[DenseLayer],
    caches: &[LayerCache],
    upstream: &[f64],
) -> Result<(Vec<LayerGrad>, Vec<f64>)> {
    if caches.len() != layers.len() {
        return Err(shape_err("backward caches", layers.len(), caches.len()));
    }
    let mut grads: Vec<LayerGrad> = layers.iter().map(LayerGrad::zeros_like).collect();
    let mut upstream = upstream.to_vec();
    for i in (0..layers.len()).rev() {
        upstream = dense_backward(&layers[i], &caches[i], &upstream, &mut grads[i])?;
    }
    Ok((grads, upstream))
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(z: &[f64]) -> Result<Vec<f64>> {
    if z.is_empty() {
        return Err(Error::InvalidInput("softmax of an empty vector".into()));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("softmax input".into()));
    }
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Sum-of-squares loss `Σ (yᵢ − qᵢ)²` and its gradient `−2(y − q)` with
/// respect to the prediction.
pub fn mse_loss_and_grad(predicted: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if predicted.len() != target.len() {
        return Err(shape_err("mse_loss_and_grad", predicted.len(), target.len()));
    }
    let mut loss = 0.0;
    let grad = predicted
        .iter()
        .zip(target)
        .map(|(&q, &y)| {
            let r = y - q;
            loss += r * r;
            -2.0 * r
        })
        .collect();
    Ok((loss, grad))
}

/// How per-transition losses are combined over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossReduction {
    #[default]
    Sum,
    Mean,
}

impl LossReduction {
    pub fn factor(self, batch_len: usize) -> f64 {
        match self {
            LossReduction::Sum => 1.0,
            LossReduction::Mean => 1.0 / batch_len.max(1) as f64,
        }
    }
}

/// Adam optimizer state over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(param_count: usize, learning_rate: f64) -> Self {
        Self {
            first_moment: vec![0.0; param_count],
            second_moment: vec![0.0; param_count],
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.second_moment
    }

    /// One bias-corrected Adam update. Non-finite gradients are rejected
    /// before any state changes.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(shape_err(
                "adam_step",
                self.first_moment.len(),
                format!("params {} / grads {}", params.len(), grads.len()),
            ));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient entry {i} is {} at Adam step {}",
                grads[i],
                self.step_count + 1
            )));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let corr1 = 1.0 - self.beta1.powi(t);
        let corr2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            let m = self.beta1 * self.first_moment[i] + (1.0 - self.beta1) * g;
            let v = self.beta2 * self.second_moment[i] + (1.0 - self.beta2) * g * g;
            self.first_moment[i] = m;
            self.second_moment[i] = v;
            let m_hat = m / corr1;
            let v_hat = v / corr2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

/// Convenience form of [`AdamState::step`].
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<()> {
    state.step(params, grads)
}

/// Central-difference gradient estimate `(f(p+h) − f(p−h)) / 2h`, one
/// coordinate at a time. Slow; intended as a test oracle.
pub fn finite_diff_grad<F>(mut f: F, params: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(h > 0.0, "finite difference step must be positive");
    let mut p = params.to_vec();
    (0..p.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let up = f(&p);
            p[i] = orig - h;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}
