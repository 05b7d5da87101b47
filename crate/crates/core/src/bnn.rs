//! Mean-field variational Bayesian MLP with a heteroscedastic Gaussian head.
//!
//! Every weight and bias has an independent Gaussian posterior
//! N(μ, softplus(ρ)²) against a N(0, 1) prior. Training samples one weight
//! set per minibatch through the reparameterisation w = μ + softplus(ρ)·ε.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::correlations::BaseModelKind;
use crate::dataset::StandardScaler;
use crate::ensemble::{check_scaler, destandardize};
use crate::error::{Error, Result};
use crate::nn::{epoch_batches, glorot_matrix, Activation, Adam, Dense, MlpConfig, MlpParams, TrainConfig};
use crate::prediction::PredictionSet;
use crate::seeds;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

pub const DEFAULT_PREDICT_SAMPLES: usize = 200;

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of softplus for y > 0.
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// KL(N(μq, σq²) ‖ N(μp, σp²)) summed over paired entries.
pub fn kl_gaussian(post_mean: &[f64], post_std: &[f64], prior_mean: f64, prior_std: f64) -> Result<f64> {
    if post_mean.len() != post_std.len() {
        return Err(Error::Shape(format!(
            "{} means vs {} standard deviations",
            post_mean.len(),
            post_std.len()
        )));
    }
    if !(prior_std > 0.0) || post_std.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::Precondition("KL needs strictly positive standard deviations".into()));
    }
    Ok(post_mean
        .iter()
        .zip(post_std)
        .map(|(&m, &s)| kl_term(m, s, prior_mean, prior_std))
        .sum())
}

fn kl_term(m: f64, s: f64, pm: f64, ps: f64) -> f64 {
    (ps / s).ln() + (s * s + (m - pm) * (m - pm)) / (2.0 * ps * ps) - 0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalLayer {
    pub weight_mean: Array2<f64>,
    pub weight_rho: Array2<f64>,
    pub bias_mean: Array1<f64>,
    pub bias_rho: Array1<f64>,
}

impl VariationalLayer {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight_mean: Array2::zeros((fan_in, fan_out)),
            weight_rho: Array2::zeros((fan_in, fan_out)),
            bias_mean: Array1::zeros(fan_out),
            bias_rho: Array1::zeros(fan_out),
        }
    }

    fn tensors(&self) -> [&[f64]; 4] {
        [
            self.weight_mean.as_slice().unwrap(),
            self.weight_rho.as_slice().unwrap(),
            self.bias_mean.as_slice().unwrap(),
            self.bias_rho.as_slice().unwrap(),
        ]
    }

    fn tensors_mut(&mut self) -> [&mut [f64]; 4] {
        let VariationalLayer {
            weight_mean,
            weight_rho,
            bias_mean,
            bias_rho,
        } = self;
        [
            weight_mean.as_slice_mut().unwrap(),
            weight_rho.as_slice_mut().unwrap(),
            bias_mean.as_slice_mut().unwrap(),
            bias_rho.as_slice_mut().unwrap(),
        ]
    }

    /// KL of this layer's posterior against N(0, 1).
    pub fn kl(&self) -> f64 {
        let w = self
            .weight_mean
            .iter()
            .zip(&self.weight_rho)
            .map(|(&m, &r)| kl_term(m, softplus(r), 0.0, 1.0));
        let b = self
            .bias_mean
            .iter()
            .zip(&self.bias_rho)
            .map(|(&m, &r)| kl_term(m, softplus(r), 0.0, 1.0));
        w.chain(b).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BnnConfig {
    pub hidden_widths: Vec<usize>,
    pub activation: Activation,
    pub input_dim: usize,
    pub seed: u64,
    /// Initial posterior standard deviation softplus(ρ).
    pub init_std: f64,
    /// Posterior means start at Glorot-uniform values times this factor.
    pub init_mean_scale: f64,
    /// Lower bound of the predicted scale, standardized units.
    pub scale_floor: f64,
    /// Multiplier of the KL term.
    pub kl_weight: f64,
    /// Fix the predicted scale at 1 and ignore the second head output.
    pub freeze_scale: bool,
    /// Weight draws averaged per training step.
    pub mc_samples: usize,
}

impl Default for BnnConfig {
    fn default() -> Self {
        Self {
            hidden_widths: vec![64; 4],
            activation: Activation::Swish,
            input_dim: 5,
            seed: 0,
            init_std: 0.05,
            init_mean_scale: 0.1,
            scale_floor: 1e-4,
            kl_weight: 1.0,
            freeze_scale: false,
            mc_samples: 1,
        }
    }
}

impl BnnConfig {
    pub fn validate(&self) -> Result<()> {
        MlpConfig {
            hidden_widths: self.hidden_widths.clone(),
            activation: self.activation,
            input_dim: self.input_dim,
            output_dim: 2,
            seed: self.seed,
        }
        .validate()?;
        if !(self.init_std > 0.0 && self.scale_floor > 0.0 && self.kl_weight >= 0.0) || self.mc_samples == 0 {
            return Err(Error::Config(format!("invalid BNN settings {self:?}")));
        }
        Ok(())
    }

    fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim];
        d.extend(&self.hidden_widths);
        d.push(2);
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BnnEpoch {
    pub epoch: usize,
    pub nll: f64,
    pub kl: f64,
    pub train_loss: f64,
    pub val_nll: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnnModel {
    pub config: BnnConfig,
    pub layers: Vec<VariationalLayer>,
    pub history: Vec<BnnEpoch>,
    pub scaler: Option<StandardScaler>,
    pub base: BaseModelKind,
}

/// Standard-normal draws for every weight and bias, in layer order.
#[derive(Debug, Clone)]
pub struct NoiseDraw {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl NoiseDraw {
    pub fn sample(model: &BnnModel, rng: &mut ChaCha8Rng) -> Self {
        let mut weights = Vec::with_capacity(model.layers.len());
        let mut biases = Vec::with_capacity(model.layers.len());
        for l in &model.layers {
            weights.push(Array2::from_shape_simple_fn(l.weight_mean.raw_dim(), || {
                StandardNormal.sample(rng)
            }));
            biases.push(Array1::from_shape_simple_fn(l.bias_mean.len(), || StandardNormal.sample(rng)));
        }
        Self { weights, biases }
    }

    /// All-zero draw: the network evaluated at its posterior means.
    pub fn zeros(model: &BnnModel) -> Self {
        Self {
            weights: model.layers.iter().map(|l| Array2::zeros(l.weight_mean.raw_dim())).collect(),
            biases: model.layers.iter().map(|l| Array1::zeros(l.bias_mean.len())).collect(),
        }
    }
}

/// Loss terms and parameter gradients from one evaluation.
#[derive(Debug, Clone)]
pub struct ElboEval {
    pub loss: f64,
    pub nll: f64,
    pub kl: f64,
    pub grads: Vec<VariationalLayer>,
}

pub const BNN_HISTORY_HEADER: &str = "epoch,train_loss,nll,kl,val_nll,lr";

pub fn bnn_init(config: &BnnConfig) -> Result<BnnModel> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let rho = softplus_inv(config.init_std);
    let layers = config
        .dims()
        .windows(2)
        .map(|d| VariationalLayer {
            weight_mean: glorot_matrix(d[0], d[1], config.init_mean_scale, &mut rng),
            weight_rho: Array2::from_elem((d[0], d[1]), rho),
            bias_mean: Array1::zeros(d[1]),
            bias_rho: Array1::from_elem(d[1], rho),
        })
        .collect();
    Ok(BnnModel {
        config: config.clone(),
        layers,
        history: Vec::new(),
        scaler: None,
        base: BaseModelKind::NoBase,
    })
}

impl BnnModel {
    pub fn kl(&self) -> f64 {
        self.layers.iter().map(VariationalLayer::kl).sum()
    }

    fn tensors(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| l.tensors()).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(|l| l.tensors_mut()).collect()
    }

    fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Deterministic network with weights μ + softplus(ρ)·ε.
    pub fn realize(&self, noise: &NoiseDraw) -> MlpParams {
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(k, l)| {
                let mut w = noise.weights[k].clone();
                w.zip_mut_with(&l.weight_rho, |e, &r| *e *= softplus(r));
                w += &l.weight_mean;
                let mut b = noise.biases[k].clone();
                b.zip_mut_with(&l.bias_rho, |e, &r| *e *= softplus(r));
                b += &l.bias_mean;
                Dense { w, b }
            })
            .collect();
        MlpParams {
            config: MlpConfig {
                hidden_widths: self.config.hidden_widths.clone(),
                activation: self.config.activation,
                input_dim: self.config.input_dim,
                output_dim: 2,
                seed: self.config.seed,
            },
            layers,
        }
    }

    /// Head mean and scale per row for one weight draw.
    pub fn head(&self, x: ArrayView2<f64>, noise: &NoiseDraw) -> Result<(Array1<f64>, Array1<f64>)> {
        let out = self.realize(noise).forward(x)?;
        Ok(self.split_head(&out))
    }

    fn split_head(&self, out: &Array2<f64>) -> (Array1<f64>, Array1<f64>) {
        let mean = out.column(0).to_owned();
        let scale = if self.config.freeze_scale {
            Array1::ones(out.nrows())
        } else {
            out.column(1).mapv(|r| softplus(r) + self.config.scale_floor)
        };
        (mean, scale)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::evalsuite::export::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        crate::evalsuite::export::read_json(path)
    }

    pub fn history_csv(&self) -> String {
        let mut out = format!("{BNN_HISTORY_HEADER}\n");
        for e in &self.history {
            let val = e.val_nll.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{},{},{}\n", e.epoch, e.train_loss, e.nll, e.kl, val, e.lr));
        }
        out
    }

    pub fn write_history_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.history_csv()).map_err(|e| Error::io(path, e))
    }
}

fn gaussian_nll(y: f64, m: f64, s: f64) -> f64 {
    let r = (y - m) / s;
    HALF_LN_2PI + s.ln() + 0.5 * r * r
}

/// Mean Gaussian NLL of the batch under weight draw `noise`, plus the
/// KL term apportioned as KL/n_total.
pub fn elbo_loss(
    model: &BnnModel,
    x: ArrayView2<f64>,
    y: &[f64],
    n_total: usize,
    noise: &NoiseDraw,
) -> Result<ElboEval> {
    if x.nrows() == 0 || x.nrows() != y.len() {
        return Err(Error::Size(format!("batch of {} inputs and {} targets", x.nrows(), y.len())));
    }
    if n_total == 0 {
        return Err(Error::Size("n_total must be positive".into()));
    }
    let net = model.realize(noise);
    let (out, cache) = net.forward_cached(x)?;
    let (mean, scale) = model.split_head(&out);
    let b = y.len() as f64;

    let mut nll = 0.0;
    let mut d_out = Array2::zeros(out.raw_dim());
    for i in 0..y.len() {
        let (m, s) = (mean[i], scale[i]);
        nll += gaussian_nll(y[i], m, s);
        let r = y[i] - m;
        d_out[[i, 0]] = -r / (s * s) / b;
        if !model.config.freeze_scale {
            let ds = (1.0 / s - r * r / (s * s * s)) / b;
            d_out[[i, 1]] = ds * sigmoid(out[[i, 1]]);
        }
    }
    nll /= b;
    let kl_scale = model.config.kl_weight / n_total as f64;
    let kl = model.kl();
    let loss = nll + kl_scale * kl;

    let sampled = net.backward(&cache, &d_out);
    let grads = model
        .layers
        .iter()
        .enumerate()
        .map(|(k, l)| {
            let gw = &sampled.layers[k].w;
            let gb = &sampled.layers[k].b;
            let mut g = VariationalLayer::zeros(gw.nrows(), gw.ncols());
            ndarray::Zip::from(&mut g.weight_mean)
                .and(&mut g.weight_rho)
                .and(gw)
                .and(&noise.weights[k])
                .and(&l.weight_mean)
                .and(&l.weight_rho)
                .for_each(|gm, gr, &dw, &e, &m, &r| {
                    let s = softplus(r);
                    *gm = dw + kl_scale * m;
                    *gr = (dw * e + kl_scale * (s - 1.0 / s)) * sigmoid(r);
                });
            ndarray::Zip::from(&mut g.bias_mean)
                .and(&mut g.bias_rho)
                .and(gb)
                .and(&noise.biases[k])
                .and(&l.bias_mean)
                .and(&l.bias_rho)
                .for_each(|gm, gr, &db, &e, &m, &r| {
                    let s = softplus(r);
                    *gm = db + kl_scale * m;
                    *gr = (db * e + kl_scale * (s - 1.0 / s)) * sigmoid(r);
                });
            g
        })
        .collect();
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite ELBO loss {loss}")));
    }
    Ok(ElboEval { loss, nll, kl: kl_scale * kl, grads })
}

/// NLL of `y` under the posterior-mean network.
pub fn mean_network_nll(model: &BnnModel, x: ArrayView2<f64>, y: &[f64]) -> Result<f64> {
    let (m, s) = model.head(x, &NoiseDraw::zeros(model))?;
    Ok(y.iter().enumerate().map(|(i, &t)| gaussian_nll(t, m[i], s[i])).sum::<f64>() / y.len() as f64)
}

/// ELBO training with Adam and the exponential learning-rate schedule.
/// `y` holds standardized targets.
pub fn bnn_train(
    model: &mut BnnModel,
    x: ArrayView2<f64>,
    y: &[f64],
    val: Option<(ArrayView2<f64>, &[f64])>,
    tc: &TrainConfig,
) -> Result<()> {
    tc.validate()?;
    if x.nrows() == 0 || x.nrows() != y.len() {
        return Err(Error::Size(format!("{} inputs and {} targets", x.nrows(), y.len())));
    }
    let sizes: Vec<usize> = model.tensors().iter().map(|t| t.len()).collect();
    let mut adam = Adam::new(&sizes);
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let n = y.len();
    let mc = model.config.mc_samples;
    for epoch in 0..tc.epochs {
        let lr = tc.lr_at(epoch);
        let mut nll_sum = 0.0;
        for batch in epoch_batches(n, tc.batch_size, &mut rng) {
            let xb = x.select(Axis(0), &batch);
            let yb: Vec<f64> = batch.iter().map(|&i| y[i]).collect();
            let mut acc: Option<ElboEval> = None;
            for _ in 0..mc {
                let noise = NoiseDraw::sample(model, &mut rng);
                let eval = elbo_loss(model, xb.view(), &yb, n, &noise).map_err(|e| match e {
                    Error::Numeric(_) => Error::Divergence { epoch },
                    other => other,
                })?;
                acc = Some(match acc {
                    None => eval,
                    Some(mut a) => {
                        a.nll += eval.nll;
                        a.loss += eval.loss;
                        for (ga, ge) in a.grads.iter_mut().zip(&eval.grads) {
                            for (ta, te) in ga.tensors_mut().into_iter().zip(ge.tensors()) {
                                ta.iter_mut().zip(te).for_each(|(p, q)| *p += q);
                            }
                        }
                        a
                    }
                });
            }
            let mut eval = acc.expect("mc_samples >= 1");
            if mc > 1 {
                let inv = 1.0 / mc as f64;
                eval.nll *= inv;
                for g in &mut eval.grads {
                    for t in g.tensors_mut() {
                        t.iter_mut().for_each(|v| *v *= inv);
                    }
                }
            }
            nll_sum += eval.nll * batch.len() as f64;
            let grads: Vec<&[f64]> = eval.grads.iter().flat_map(|g| g.tensors()).collect();
            adam.step(model.tensors_mut(), grads, lr);
        }
        if !model.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        let nll = nll_sum / n as f64;
        let kl = model.config.kl_weight * model.kl() / n as f64;
        let val_nll = match &val {
            Some((vx, vy)) if !vy.is_empty() => Some(mean_network_nll(model, *vx, vy)?),
            _ => None,
        };
        if !(nll + kl).is_finite() {
            return Err(Error::Divergence { epoch });
        }
        model.history.push(BnnEpoch {
            epoch,
            nll,
            kl,
            train_loss: nll + kl,
            val_nll,
            lr,
        });
    }
    Ok(())
}

/// Raw posterior-predictive draws in standardized units, one row per point.
///
/// Draw `s` uses weights and likelihood noise from a seed derived from
/// (`seed`, `s`), so a larger request extends a smaller one.
pub fn posterior_samples(model: &BnnModel, x: ArrayView2<f64>, n_samples: usize, seed: u64) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((x.nrows(), n_samples));
    for s in 0..n_samples {
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive_indexed(seed, "bnn/predict", s as u64));
        let noise = NoiseDraw::sample(model, &mut rng);
        let (m, sc) = model.head(x, &noise)?;
        for i in 0..x.nrows() {
            let e: f64 = StandardNormal.sample(&mut rng);
            out[[i, s]] = m[i] + sc[i] * e;
        }
    }
    Ok(out)
}

/// Posterior-predictive prediction sets in physical units; `x` standardized.
pub fn bnn_predict(model: &BnnModel, x: ArrayView2<f64>, n_samples: usize, seed: u64) -> Result<Vec<PredictionSet>> {
    if n_samples < 2 {
        return Err(Error::Size(format!("need at least 2 posterior samples, got {n_samples}")));
    }
    check_scaler(model.scaler.as_ref(), &x)?;
    let draws = posterior_samples(model, x, n_samples, seed)?;
    Ok(draws
        .axis_iter(Axis(0))
        .map(|row| {
            PredictionSet::from_samples(row.iter().map(|&v| destandardize(model.scaler.as_ref(), v)).collect())
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergencePoint {
    pub n_samples: usize,
    /// Average over points of the per-point predictive mean.
    pub mean_prediction: f64,
    /// Mean over points of |Δmean|/|mean| relative to the previous size, percent.
    pub mean_shift_pct: Option<f64>,
    pub max_shift_pct: Option<f64>,
}

/// Predictive means for increasing sample counts.
///
/// `offsets` (e.g. base-model estimates) are added per point before the
/// relative shifts are measured.
pub fn convergence_study(
    model: &BnnModel,
    x: ArrayView2<f64>,
    sizes: &[usize],
    seed: u64,
    offsets: Option<&[f64]>,
) -> Result<Vec<ConvergencePoint>> {
    let mut out: Vec<ConvergencePoint> = Vec::new();
    let mut prev: Option<Vec<f64>> = None;
    for &n in sizes {
        let means: Vec<f64> = bnn_predict(model, x, n, seed)?
            .iter()
            .enumerate()
            .map(|(i, p)| p.mean + offsets.map_or(0.0, |o| o[i]))
            .collect();
        let (mean_shift_pct, max_shift_pct) = match &prev {
            Some(p) => {
                let shifts: Vec<f64> = means
                    .iter()
                    .zip(p)
                    .map(|(a, b)| 100.0 * (a - b).abs() / a.abs())
                    .collect();
                (
                    Some(crate::stats::mean(&shifts)),
                    shifts.iter().copied().reduce(f64::max),
                )
            }
            None => (None, None),
        };
        out.push(ConvergencePoint {
            n_samples: n,
            mean_prediction: crate::stats::mean(&means),
            mean_shift_pct,
            max_shift_pct,
        });
        prev = Some(means);
    }
    Ok(out)
}
