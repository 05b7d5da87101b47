//! Small feed-forward network engine: dense layers, reverse-mode gradients,
//! MSE loss, Adam with exponential learning-rate decay, and a
//! successive-halving random-search tuner.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Swish,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
            Activation::Swish => x * sigmoid(x),
        }
    }

    /// Derivative at pre-activation `x`.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::Swish => {
                let s = sigmoid(x);
                s + x * s * (1.0 - s)
            }
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Swish => "swish",
        };
        f.write_str(s)
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            "swish" => Ok(Activation::Swish),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    pub hidden_widths: Vec<usize>,
    pub activation: Activation,
    pub input_dim: usize,
    pub output_dim: usize,
    pub seed: u64,
}

impl Default for MlpConfig {
    /// Ensemble-member architecture: seven hidden layers of 64 swish units.
    fn default() -> Self {
        Self {
            hidden_widths: vec![64; 7],
            activation: Activation::Swish,
            input_dim: 5,
            output_dim: 1,
            seed: 0,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_widths.is_empty() || self.hidden_widths.contains(&0) {
            return Err(Error::Config(format!(
                "hidden widths {:?} must be non-empty and positive",
                self.hidden_widths
            )));
        }
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::Config("input and output dimensions must be positive".into()));
        }
        Ok(())
    }

    /// Layer sizes including input and output.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden_widths);
        dims.push(self.output_dim);
        dims
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr0: f64,
    pub decay_rate: f64,
    pub decay_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 250,
            lr0: 1e-3,
            decay_rate: 0.96,
            decay_epochs: 1,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config(format!("lr0 must be >= 0, got {}", self.lr0)));
        }
        if !(self.decay_rate > 0.0 && self.decay_rate <= 1.0) {
            return Err(Error::Config(format!("decay_rate must be in (0, 1], got {}", self.decay_rate)));
        }
        if self.decay_epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("decay_epochs and batch_size must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate used during epoch `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr0 * self.decay_rate.powf(epoch as f64 / self.decay_epochs as f64)
    }
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// fan_in × fan_out
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            w: Array2::zeros((fan_in, fan_out)),
            b: Array1::zeros(fan_out),
        }
    }
}

/// Uniform Glorot limit √(6/(fan_in+fan_out)).
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

pub(crate) fn glorot_matrix(fan_in: usize, fan_out: usize, scale: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let bound = glorot_bound(fan_in, fan_out);
    Array2::from_shape_simple_fn((fan_in, fan_out), || scale * rng.random_range(-bound..=bound))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub config: MlpConfig,
    pub layers: Vec<Dense>,
}

/// Glorot-uniform weights and zero biases from `config.seed`.
pub fn mlp_init(config: &MlpConfig) -> Result<MlpParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dims = config.dims();
    let layers = dims
        .windows(2)
        .map(|d| Dense {
            w: glorot_matrix(d[0], d[1], 1.0, &mut rng),
            b: Array1::zeros(d[1]),
        })
        .collect();
    Ok(MlpParams {
        config: config.clone(),
        layers,
    })
}

/// Activations kept for the backward pass.
pub struct ForwardCache {
    /// Input to each layer (index 0 is the network input).
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Array2<f64>>,
}

impl MlpParams {
    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            layers: self.layers.iter().map(|l| Dense::zeros(l.w.nrows(), l.w.ncols())).collect(),
        }
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.w.as_slice().unwrap(), l.b.as_slice().unwrap()])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                let Dense { w, b } = l;
                [w.as_slice_mut().unwrap(), b.as_slice_mut().unwrap()]
            })
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.config.input_dim {
            return Err(Error::Shape(format!(
                "network expects {} input columns, got {}",
                self.config.input_dim,
                x.ncols()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let act = self.config.activation;
        let last = self.layers.len() - 1;
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            h = h.dot(&layer.w) + &layer.b;
            if i < last {
                h.mapv_inplace(|v| act.apply(v));
            }
        }
        Ok(h)
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(&x)?;
        let act = self.config.activation;
        let last = self.layers.len() - 1;
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(last),
        };
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = h.dot(&layer.w) + &layer.b;
            cache.inputs.push(h);
            if i < last {
                h = z.mapv(|v| act.apply(v));
                cache.pre.push(z);
            } else {
                h = z;
            }
        }
        Ok((h, cache))
    }

    /// Parameter gradients given dL/d(output).
    pub fn backward(&self, cache: &ForwardCache, d_out: &Array2<f64>) -> MlpParams {
        let act = self.config.activation;
        let mut grads = self.zeros_like();
        let mut delta = d_out.clone();
        for i in (0..self.layers.len()).rev() {
            grads.layers[i].w = cache.inputs[i].t().dot(&delta).as_standard_layout().into_owned();
            grads.layers[i].b = delta.sum_axis(Axis(0));
            if i > 0 {
                let mut d_in = delta.dot(&self.layers[i].w.t());
                d_in.zip_mut_with(&cache.pre[i - 1], |d, &z| *d *= act.derivative(z));
                delta = d_in;
            }
        }
        grads
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::evalsuite::export::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        crate::evalsuite::export::read_json(path)
    }
}

/// Mean squared error over all entries and its gradient w.r.t. `pred`.
pub fn mse_loss(pred: &Array2<f64>, target: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "predictions {:?} vs targets {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Size("mse of an empty batch".into()));
    }
    let n = pred.len() as f64;
    let diff = pred - target;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    Ok((loss, diff * (2.0 / n)))
}

// ---------------------------------------------------------------------------
// Optimiser
// ---------------------------------------------------------------------------

/// Adam over a list of flat parameter tensors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(sizes: &[usize]) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>, lr: f64) {
        debug_assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossHistory {
    pub epochs: Vec<EpochLoss>,
}

pub const LOSS_HISTORY_HEADER: &str = "epoch,train_loss,val_loss,lr";

impl LossHistory {
    pub fn to_csv_string(&self) -> String {
        let mut out = format!("{LOSS_HISTORY_HEADER}\n");
        for e in &self.epochs {
            let val = e.val_loss.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{}\n", e.epoch, e.train_loss, val, e.lr));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }

    pub fn final_val_loss(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.val_loss)
    }
}

/// Row-index minibatches for one epoch; a single full batch when the
/// batch size covers the data.
pub(crate) fn epoch_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

fn check_xy(x: &ArrayView2<f64>, y: &ArrayView2<f64>, what: &str) -> Result<()> {
    if x.nrows() != y.nrows() {
        return Err(Error::Shape(format!("{what}: {} inputs vs {} targets", x.nrows(), y.nrows())));
    }
    Ok(())
}

/// Minibatch Adam on the MSE loss. Returns per-epoch losses.
pub fn train(
    params: &mut MlpParams,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    val: Option<(ArrayView2<f64>, ArrayView2<f64>)>,
    tc: &TrainConfig,
) -> Result<LossHistory> {
    tc.validate()?;
    check_xy(&x, &y, "training data")?;
    if x.nrows() == 0 {
        return Err(Error::Size("empty training set".into()));
    }
    if let Some((vx, vy)) = &val {
        check_xy(vx, vy, "validation data")?;
    }
    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    let mut adam = Adam::new(&sizes);
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut history = LossHistory::default();
    for epoch in 0..tc.epochs {
        let lr = tc.lr_at(epoch);
        let mut total = 0.0;
        for batch in epoch_batches(x.nrows(), tc.batch_size, &mut rng) {
            let xb = x.select(Axis(0), &batch);
            let yb = y.select(Axis(0), &batch);
            let (out, cache) = params.forward_cached(xb.view())?;
            let (loss, d_out) = mse_loss(&out, &yb)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            total += loss * batch.len() as f64;
            let grads = params.backward(&cache, &d_out);
            adam.step(params.tensors_mut(), grads.tensors(), lr);
        }
        let train_loss = total / x.nrows() as f64;
        let val_loss = match &val {
            Some((vx, vy)) if vx.nrows() > 0 => Some(mse_loss(&params.forward(vx.view())?, &vy.to_owned())?.0),
            _ => None,
        };
        if !params.is_finite() || val_loss.is_some_and(|v| !v.is_finite()) {
            return Err(Error::Divergence { epoch });
        }
        history.epochs.push(EpochLoss {
            epoch,
            train_loss,
            val_loss,
            lr,
        });
    }
    Ok(history)
}

// ---------------------------------------------------------------------------
// Tuner
// ---------------------------------------------------------------------------

/// Random-search space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub depths: Vec<usize>,
    pub widths: Vec<usize>,
    pub activations: Vec<Activation>,
    /// Log-uniform learning-rate range.
    pub lr0: (f64, f64),
    pub batch_sizes: Vec<usize>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            depths: vec![2, 4, 7],
            widths: vec![16, 32, 64, 128],
            activations: vec![Activation::Relu, Activation::Tanh, Activation::Swish],
            lr0: (1e-4, 1e-2),
            batch_sizes: vec![32, 64, 128],
        }
    }
}

impl SearchSpace {
    fn validate(&self) -> Result<()> {
        if self.depths.is_empty() || self.widths.is_empty() || self.activations.is_empty() || self.batch_sizes.is_empty() {
            return Err(Error::Config("search space has an empty dimension".into()));
        }
        if !(self.lr0.0 > 0.0 && self.lr0.1 >= self.lr0.0) {
            return Err(Error::Config(format!("bad learning-rate range {:?}", self.lr0)));
        }
        Ok(())
    }

    fn sample(&self, base: &MlpConfig, base_tc: &TrainConfig, rng: &mut ChaCha8Rng) -> (MlpConfig, TrainConfig) {
        let pick = |v: &[usize], rng: &mut ChaCha8Rng| v[rng.random_range(0..v.len())];
        let depth = pick(&self.depths, rng);
        let width = pick(&self.widths, rng);
        let activation = self.activations[rng.random_range(0..self.activations.len())];
        let (lo, hi) = (self.lr0.0.ln(), self.lr0.1.ln());
        let lr0 = if hi > lo { rng.random_range(lo..hi).exp() } else { self.lr0.0 };
        let batch_size = pick(&self.batch_sizes, rng);
        (
            MlpConfig {
                hidden_widths: vec![width; depth],
                activation,
                ..base.clone()
            },
            TrainConfig {
                lr0,
                batch_size,
                ..base_tc.clone()
            },
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rung {
    pub epochs: usize,
    pub trials: Vec<usize>,
    pub val_losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub mlp: MlpConfig,
    pub train: TrainConfig,
    pub val_loss: f64,
    pub rungs: Vec<Rung>,
}

/// Explicit candidate list or a random search space.
pub enum Candidates<'a> {
    Space(&'a SearchSpace, usize),
    List(Vec<(MlpConfig, TrainConfig)>),
}

/// Synchronous successive halving (η = 2).
///
/// Every candidate is trained for `min_epochs`; after each of `rungs`
/// halvings the best ceil(n/2) by validation loss are retrained from scratch
/// with twice the epochs. Diverged trials rank last.
#[allow(clippy::too_many_arguments)]
pub fn tune(
    candidates: Candidates<'_>,
    base: &MlpConfig,
    base_tc: &TrainConfig,
    rungs: usize,
    min_epochs: usize,
    train_xy: (ArrayView2<f64>, ArrayView2<f64>),
    val_xy: (ArrayView2<f64>, ArrayView2<f64>),
    seed: u64,
) -> Result<TuneResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trials: Vec<(MlpConfig, TrainConfig)> = match candidates {
        Candidates::Space(space, budget) => {
            space.validate()?;
            if budget == 0 {
                return Err(Error::Config("tuning budget must be positive".into()));
            }
            if budget < 1usize << rungs.min(63) {
                return Err(Error::Config(format!("budget {budget} < 2^{rungs}")));
            }
            (0..budget).map(|_| space.sample(base, base_tc, &mut rng)).collect()
        }
        Candidates::List(list) => {
            if list.is_empty() {
                return Err(Error::Config("no tuning candidates".into()));
            }
            list
        }
    };
    if val_xy.0.nrows() == 0 {
        return Err(Error::Size("tuning needs validation data".into()));
    }

    let mut alive: Vec<usize> = (0..trials.len()).collect();
    let mut epochs = min_epochs.max(1);
    let mut history = Vec::new();
    loop {
        let mut scored = Vec::with_capacity(alive.len());
        for &t in &alive {
            let (mlp, tc) = &trials[t];
            let mlp = MlpConfig {
                seed: seeds::derive_indexed(seed, "tune/init", t as u64),
                ..mlp.clone()
            };
            let tc = TrainConfig {
                epochs,
                seed: seeds::derive_indexed(seed, "tune/batches", t as u64),
                ..tc.clone()
            };
            let mut params = mlp_init(&mlp)?;
            let loss = match train(&mut params, train_xy.0, train_xy.1, Some(val_xy), &tc) {
                Ok(h) => h.final_val_loss().unwrap_or(f64::INFINITY),
                Err(Error::Divergence { .. }) => f64::INFINITY,
                Err(e) => return Err(e),
            };
            scored.push((t, if loss.is_nan() { f64::INFINITY } else { loss }));
        }
        history.push(Rung {
            epochs,
            trials: scored.iter().map(|s| s.0).collect(),
            val_losses: scored.iter().map(|s| s.1).collect(),
        });
        scored.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        if history.len() > rungs || scored.len() == 1 {
            let (best, val_loss) = scored[0];
            let (mlp, tc) = &trials[best];
            return Ok(TuneResult {
                mlp: mlp.clone(),
                train: TrainConfig { epochs, ..tc.clone() },
                val_loss,
                rungs: history,
            });
        }
        let keep = scored.len().div_ceil(2);
        alive = scored[..keep].iter().map(|s| s.0).collect();
        alive.sort_unstable();
        epochs *= 2;
    }
}
