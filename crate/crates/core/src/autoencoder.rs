//! Fully connected autoencoder trained with Adam on min-max scaled measurements.
//!
//! Every hidden layer, bottleneck included, uses the logistic sigmoid; the
//! output layer is linear. The training objective is the mean over a batch of
//! `r̃(z) = ‖z - z̃‖² / d`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::Matrix;

/// Layer widths from the input through the bottleneck and back to the output.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub dims: Vec<usize>,
}

impl LayerSpec {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        let spec = Self { dims };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dims;
        if d.len() < 3 {
            return Err(Error::InvalidLayers(format!("need at least 3 layers, got {}", d.len())));
        }
        if d.contains(&0) {
            return Err(Error::InvalidLayers(format!("zero width in {d:?}")));
        }
        if d.iter().ne(d.iter().rev()) {
            return Err(Error::InvalidLayers(format!("decoder must mirror encoder: {d:?}")));
        }
        Ok(())
    }

    /// 339-256-128-64-32 encoder mirrored into the decoder.
    pub fn reference_118() -> Self {
        Self {
            dims: vec![339, 256, 128, 64, 32, 64, 128, 256, 339],
        }
    }

    /// The reference architecture with hidden widths scaled to input width `d`
    /// (ratios 256, 128, 64, 32 over 339, rounded, at least 2).
    pub fn scaled_for(d: usize) -> Self {
        if d == 339 {
            return Self::reference_118();
        }
        let w = |k: f64| ((d as f64 * k / 339.0 + 0.5) as usize).max(2);
        let enc = [d, w(256.0), w(128.0), w(64.0), w(32.0)];
        let mut dims = enc.to_vec();
        dims.extend(enc.iter().rev().skip(1));
        Self { dims }
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn bottleneck(&self) -> usize {
        self.dims[self.dims.len() / 2]
    }
}

/// One affine map `a ↦ W a + b`, `W` stored as `out × in`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl Layer {
    fn zeros_like(&self) -> Self {
        Self {
            w: Matrix::zeros(self.w.rows(), self.w.cols()),
            b: vec![0.0; self.b.len()],
        }
    }
}

/// Per-feature min-max scaling to `[0, 1]`, fitted on training data only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Scaler {
    pub fn scale(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.min.len(), z.len())?;
        Ok(z.iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(v, (lo, hi))| (v - lo) / (hi - lo))
            .collect())
    }

    pub fn unscale(&self, s: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.min.len(), s.len())?;
        Ok(s.iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(v, (lo, hi))| lo + v * (hi - lo))
            .collect())
    }

    pub fn scale_rows(&self, set: &Matrix) -> Result<Matrix> {
        check_dim(self.min.len(), set.cols())?;
        let mut out = set.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            for (k, v) in row.iter_mut().enumerate() {
                *v = (*v - self.min[k]) / (self.max[k] - self.min[k]);
            }
        }
        Ok(out)
    }
}

/// Per-feature `(min, max)` of `train`; a constant feature gets `(v, v + 1)`.
/// Out-of-range values seen later are not clipped.
pub fn fit_scaler(train: &Matrix) -> Result<Scaler> {
    if train.rows() == 0 {
        return Err(Error::Empty("training set"));
    }
    let mut min = train.row(0).to_vec();
    let mut max = min.clone();
    for row in train.row_iter().skip(1) {
        for (k, &v) in row.iter().enumerate() {
            min[k] = min[k].min(v);
            max[k] = max[k].max(v);
        }
    }
    for (lo, hi) in min.iter().zip(max.iter_mut()) {
        if *hi <= *lo {
            *hi = *lo + 1.0;
        }
    }
    Ok(Scaler { min, max })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderModel {
    pub spec: LayerSpec,
    pub layers: Vec<Layer>,
    pub scaler: Option<Scaler>,
}

/// Gradients with the same shapes as [`AutoencoderModel::layers`].
pub type Gradients = Vec<Layer>;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

/// Glorot-uniform weights, zero biases, no scaler.
pub fn init_model(spec: &LayerSpec, seed: u64) -> Result<AutoencoderModel> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = spec
        .dims
        .windows(2)
        .map(|p| {
            let (fan_in, fan_out) = (p[0], p[1]);
            let limit = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
            let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-limit..=limit)).collect();
            Layer {
                w: Matrix::from_vec(fan_out, fan_in, data),
                b: vec![0.0; fan_out],
            }
        })
        .collect();
    Ok(AutoencoderModel {
        spec: spec.clone(),
        layers,
        scaler: None,
    })
}

impl AutoencoderModel {
    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    pub fn scaler(&self) -> Result<&Scaler> {
        self.scaler.as_ref().ok_or(Error::ScalerUnset)
    }

    /// Activations of every layer, input first.
    fn activations(&self, z: &[f64]) -> Result<Vec<Vec<f64>>> {
        check_dim(self.input_dim(), z.len())?;
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(z.to_vec());
        for (l, layer) in self.layers.iter().enumerate() {
            let input = acts.last().unwrap();
            let out: Vec<f64> = layer
                .w
                .row_iter()
                .zip(&layer.b)
                .map(|(w, b)| {
                    let s = crate::linalg::dot(w, input) + b;
                    if l == last {
                        s
                    } else {
                        sigmoid(s)
                    }
                })
                .collect();
            acts.push(out);
        }
        Ok(acts)
    }

    /// Reconstruction of an already scaled vector, skipping the scaler check.
    pub fn reconstruct(&self, z_scaled: &[f64]) -> Result<Vec<f64>> {
        Ok(self.activations(z_scaled)?.pop().unwrap())
    }

    /// `r̃` of a raw (unscaled) measurement vector.
    pub fn score(&self, z: &[f64]) -> Result<f64> {
        let s = self.scaler()?.scale(z)?;
        let zt = self.reconstruct(&s)?;
        reconstruction_error(&s, &zt)
    }

    /// `r̃` of every row of a raw set.
    pub fn scores(&self, set: &Matrix) -> Result<Vec<f64>> {
        set.row_iter().map(|r| self.score(r)).collect()
    }
}

/// Bottleneck code `y` and reconstruction `z̃` of a scaled input.
pub fn forward(model: &AutoencoderModel, z_scaled: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    model.scaler()?;
    let mut acts = model.activations(z_scaled)?;
    let z_tilde = acts.pop().unwrap();
    let y = acts.swap_remove(model.spec.dims.len() / 2);
    Ok((y, z_tilde))
}

/// `‖z - z̃‖² / d`.
pub fn reconstruction_error(z: &[f64], z_tilde: &[f64]) -> Result<f64> {
    check_dim(z.len(), z_tilde.len())?;
    if z.is_empty() {
        return Err(Error::Empty("measurement vector"));
    }
    Ok(z.iter().zip(z_tilde).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / z.len() as f64)
}

/// Gradient of the batch-mean reconstruction error and the batch-mean error itself.
pub fn backward_with_loss<'a, I>(model: &AutoencoderModel, batch: I) -> Result<(Gradients, f64)>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut grads: Gradients = model.layers.iter().map(Layer::zeros_like).collect();
    let d = model.input_dim() as f64;
    let last = model.layers.len() - 1;
    let mut count = 0usize;
    let mut loss = 0.0;
    for z in batch {
        let acts = model.activations(z)?;
        let out = &acts[last + 1];
        loss += reconstruction_error(z, out)?;
        let mut delta: Vec<f64> = out.iter().zip(z).map(|(o, t)| 2.0 * (o - t) / d).collect();
        for l in (0..=last).rev() {
            let input = &acts[l];
            let g = &mut grads[l];
            for (o, &dl) in delta.iter().enumerate() {
                g.b[o] += dl;
                for (gw, a) in g.w.row_mut(o).iter_mut().zip(input) {
                    *gw += dl * a;
                }
            }
            if l > 0 {
                let w = &model.layers[l].w;
                let mut prev = vec![0.0; input.len()];
                for (o, &dl) in delta.iter().enumerate() {
                    crate::linalg::axpy(dl, w.row(o), &mut prev);
                }
                for (p, a) in prev.iter_mut().zip(input) {
                    *p *= a * (1.0 - a);
                }
                delta = prev;
            }
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::Empty("batch"));
    }
    let inv = 1.0 / count as f64;
    for g in &mut grads {
        g.w.as_mut_slice().iter_mut().chain(g.b.iter_mut()).for_each(|v| *v *= inv);
    }
    Ok((grads, loss * inv))
}

/// Gradient of `(1/|batch|) Σ r̃(z)` with respect to every weight and bias.
pub fn backward(model: &AutoencoderModel, batch: &[Vec<f64>]) -> Result<Gradients> {
    Ok(backward_with_loss(model, batch.iter().map(Vec::as_slice))?.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub adam: AdamParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-5,
            batch_size: 256,
            epochs: 3000,
            seed: 0,
            adam: AdamParams::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!("invalid Adam constants {a:?}")));
        }
        Ok(())
    }
}

/// First and second moment estimates plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Gradients,
    pub v: Gradients,
    pub t: u64,
}

impl AdamState {
    pub fn new(model: &AutoencoderModel) -> Self {
        let z: Gradients = model.layers.iter().map(Layer::zeros_like).collect();
        Self { m: z.clone(), v: z, t: 0 }
    }
}

fn same_shapes(a: &[Layer], b: &[Layer]) -> Result<()> {
    check_dim(a.len(), b.len())?;
    for (x, y) in a.iter().zip(b) {
        check_dim(x.w.rows() * x.w.cols(), y.w.rows() * y.w.cols())?;
        check_dim(x.b.len(), y.b.len())?;
    }
    Ok(())
}

/// One bias-corrected Adam update.
pub fn adam_step(model: &mut AutoencoderModel, grads: &[Layer], state: &mut AdamState, config: &TrainConfig) -> Result<()> {
    same_shapes(&model.layers, grads)?;
    same_shapes(&model.layers, &state.m)?;
    same_shapes(&model.layers, &state.v)?;
    let AdamParams { beta1, beta2, epsilon } = config.adam;
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - libm::pow(beta1, t as f64);
    let c2 = 1.0 - libm::pow(beta2, t as f64);
    let lr = config.learning_rate;
    for (l, layer) in model.layers.iter_mut().enumerate() {
        let g = &grads[l];
        let (m, v) = (&mut state.m[l], &mut state.v[l]);
        let params = layer.w.as_mut_slice().iter_mut().chain(layer.b.iter_mut());
        let gs = g.w.as_slice().iter().chain(&g.b);
        let ms = m.w.as_mut_slice().iter_mut().chain(m.b.iter_mut());
        let vs = v.w.as_mut_slice().iter_mut().chain(v.b.iter_mut());
        for (((p, &g), m), v) in params.zip(gs).zip(ms).zip(vs) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            *p -= lr * mh / (libm::sqrt(vh) + epsilon);
        }
    }
    Ok(())
}

/// Per-epoch mean reconstruction error on the training and validation sets.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_j: Vec<f64>,
    pub val_j: Vec<f64>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.train_j.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train_j.is_empty()
    }
}

fn mean_error(model: &AutoencoderModel, scaled: &Matrix) -> Result<f64> {
    let mut s = 0.0;
    for row in scaled.row_iter() {
        s += reconstruction_error(row, &model.reconstruct(row)?)?;
    }
    Ok(s / scaled.rows() as f64)
}

/// Mini-batch Adam on raw training rows, scaled by the model's fitted scaler.
///
/// The training `J` of an epoch is the sample-weighted mean of its batch
/// losses; the validation `J` is evaluated after the epoch. A non-finite value
/// aborts with [`Error::Diverged`] carrying the finite epochs.
pub fn train(
    model: &AutoencoderModel,
    train_set: &Matrix,
    val_set: &Matrix,
    config: &TrainConfig,
) -> Result<(AutoencoderModel, TrainHistory)> {
    config.validate()?;
    let scaler = model.scaler()?;
    if train_set.rows() == 0 {
        return Err(Error::Empty("training set"));
    }
    if val_set.rows() == 0 {
        return Err(Error::Empty("validation set"));
    }
    let tr = scaler.scale_rows(train_set)?;
    let va = scaler.scale_rows(val_set)?;
    let mut model = model.clone();
    let mut state = AdamState::new(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..tr.rows()).collect();
    let mut history = TrainHistory::default();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let (grads, loss) = backward_with_loss(&model, chunk.iter().map(|&i| tr.row(i)))?;
            total += loss * chunk.len() as f64;
            adam_step(&mut model, &grads, &mut state, config)?;
        }
        let train_j = total / tr.rows() as f64;
        let val_j = mean_error(&model, &va)?;
        if !train_j.is_finite() || !val_j.is_finite() {
            return Err(Error::Diverged(alloc::boxed::Box::new(history)));
        }
        history.train_j.push(train_j);
        history.val_j.push(val_j);
    }
    Ok((model, history))
}

/// One grid-search run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Final validation `J`, or `None` if training diverged.
    pub final_val_j: Option<f64>,
    pub history: TrainHistory,
}

/// Trains one model per `(learning rate, batch size)` pair from the same seed
/// and ranks the runs by final validation `J`; diverged runs rank last.
pub fn grid_search(
    train_set: &Matrix,
    val_set: &Matrix,
    lr_grid: &[f64],
    batch_grid: &[usize],
    spec: &LayerSpec,
    epochs: usize,
    seed: u64,
) -> Result<Vec<GridResult>> {
    if lr_grid.is_empty() || batch_grid.is_empty() {
        return Err(Error::Empty("hyperparameter grid"));
    }
    let mut base = init_model(spec, seed)?;
    base.scaler = Some(fit_scaler(train_set)?);
    let mut results = Vec::with_capacity(lr_grid.len() * batch_grid.len());
    for &learning_rate in lr_grid {
        for &batch_size in batch_grid {
            let config = TrainConfig {
                learning_rate,
                batch_size,
                epochs,
                seed,
                ..TrainConfig::default()
            };
            let (final_val_j, history) = match train(&base, train_set, val_set, &config) {
                Ok((_, h)) => (h.val_j.last().copied(), h),
                Err(Error::Diverged(h)) => (None, *h),
                Err(e) => return Err(e),
            };
            results.push(GridResult {
                learning_rate,
                batch_size,
                final_val_j,
                history,
            });
        }
    }
    results.sort_by(|a, b| match (a.final_val_j, b.final_val_j) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        (Some(_), None) => core::cmp::Ordering::Less,
        (None, Some(_)) => core::cmp::Ordering::Greater,
        (None, None) => core::cmp::Ordering::Equal,
    });
    Ok(results)
}
