//! Two-layer deep Gaussian process built from sparse variational GP layers.
//!
//! Each layer holds M inducing inputs Z, a shared RBF kernel and, per output,
//! a whitened variational posterior q(v) = N(m, LLᵀ) with u = chol(Kzz)·v.
//! Training maximises the doubly stochastic ELBO: samples of the first
//! layer's outputs are pushed through the second layer and the Gaussian
//! likelihood expectation is taken in closed form.

use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::correlations::BaseModelKind;
use crate::dataset::StandardScaler;
use crate::ensemble::check_scaler;
use crate::error::{Error, Result};
use crate::nn::{epoch_batches, Adam, TrainConfig};
use crate::prediction::PredictionSet;
use crate::seeds;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
/// Largest diagonal jitter tried before a Cholesky failure is reported.
pub const MAX_JITTER: f64 = 1e-4;
/// Sampling floor for first-layer variances.
const VAR_FLOOR: f64 = 1e-12;

// ---------------------------------------------------------------------------
// Kernel
// ---------------------------------------------------------------------------

/// Squared-exponential kernel with one lengthscale per input dimension,
/// stored in log space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbfKernel {
    pub log_variance: f64,
    pub log_lengthscales: Vec<f64>,
}

impl RbfKernel {
    pub fn new(variance: f64, lengthscales: &[f64]) -> Result<Self> {
        if !(variance > 0.0) || lengthscales.is_empty() || lengthscales.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::Precondition(format!(
                "RBF needs positive variance and lengthscales, got {variance} / {lengthscales:?}"
            )));
        }
        Ok(Self {
            log_variance: variance.ln(),
            log_lengthscales: lengthscales.iter().map(|l| l.ln()).collect(),
        })
    }

    pub fn variance(&self) -> f64 {
        self.log_variance.exp()
    }

    pub fn lengthscales(&self) -> Vec<f64> {
        self.log_lengthscales.iter().map(|l| l.exp()).collect()
    }

    pub fn dim(&self) -> usize {
        self.log_lengthscales.len()
    }

    fn inv_sq_lengthscales(&self) -> Vec<f64> {
        self.log_lengthscales.iter().map(|l| (-2.0 * l).exp()).collect()
    }

    /// Gram matrix between the rows of `a` and `b`.
    pub fn matrix(&self, a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
        let w = self.inv_sq_lengthscales();
        let var = self.variance();
        let mut k = Array2::zeros((a.nrows(), b.nrows()));
        for (i, ra) in a.axis_iter(Axis(0)).enumerate() {
            for (j, rb) in b.axis_iter(Axis(0)).enumerate() {
                let mut r2 = 0.0;
                for d in 0..w.len() {
                    let diff = ra[d] - rb[d];
                    r2 += diff * diff * w[d];
                }
                k[[i, j]] = var * (-0.5 * r2).exp();
            }
        }
        k
    }

    /// Accumulates gradients of Σ dK∘K(a, b) into the log parameters and,
    /// optionally, into the inputs.
    #[allow(clippy::too_many_arguments)]
    fn backward(
        &self,
        a: ArrayView2<f64>,
        b: ArrayView2<f64>,
        k: &Array2<f64>,
        dk: &Array2<f64>,
        grad: &mut RbfKernel,
        mut da: Option<&mut Array2<f64>>,
        mut db: Option<&mut Array2<f64>>,
    ) {
        let g = dk * k;
        grad.log_variance += g.sum();
        let w = self.inv_sq_lengthscales();
        let row = g.sum_axis(Axis(1));
        let col = g.sum_axis(Axis(0));
        for d in 0..w.len() {
            let ad = a.column(d);
            let bd = b.column(d);
            let g_b = g.dot(&bd);
            let gt_a = g.t().dot(&ad);
            let sq = ad.iter().zip(&row).map(|(x, r)| x * x * r).sum::<f64>()
                + bd.iter().zip(&col).map(|(x, c)| x * x * c).sum::<f64>()
                - 2.0 * ad.dot(&g_b);
            grad.log_lengthscales[d] += sq * w[d];
            if let Some(da) = da.as_deref_mut() {
                for i in 0..a.nrows() {
                    da[[i, d]] -= (ad[i] * row[i] - g_b[i]) * w[d];
                }
            }
            if let Some(db) = db.as_deref_mut() {
                for j in 0..b.nrows() {
                    db[[j, d]] += (gt_a[j] - bd[j] * col[j]) * w[d];
                }
            }
        }
    }
}

/// Kernel value between two points.
pub fn rbf_eval(kernel: &RbfKernel, x: &[f64], x2: &[f64]) -> Result<f64> {
    if x.len() != kernel.dim() || x2.len() != kernel.dim() {
        return Err(Error::Shape(format!(
            "kernel has {} lengthscales, points have {} and {} coordinates",
            kernel.dim(),
            x.len(),
            x2.len()
        )));
    }
    let r2: f64 = x
        .iter()
        .zip(x2)
        .zip(kernel.lengthscales())
        .map(|((a, b), l)| ((a - b) / l).powi(2))
        .sum();
    Ok(kernel.variance() * (-0.5 * r2).exp())
}

// ---------------------------------------------------------------------------
// Dense linear algebra helpers
// ---------------------------------------------------------------------------

/// Lower Cholesky factor, or `None` if the matrix is not positive definite.
pub fn cholesky(a: &Array2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if !(d > 0.0) {
            return None;
        }
        let ljj = d.sqrt();
        l[[j, j]] = ljj;
        for i in j + 1..n {
            let mut v = a[[i, j]];
            for k in 0..j {
                v -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = v / ljj;
        }
    }
    Some(l)
}

/// Cholesky of `k + jitter·I`, escalating the jitter tenfold up to [`MAX_JITTER`].
pub fn cholesky_jittered(k: &Array2<f64>, jitter: f64) -> Result<(Array2<f64>, f64)> {
    let mut j = jitter;
    loop {
        let mut kj = k.clone();
        kj.diag_mut().mapv_inplace(|v| v + j);
        if let Some(l) = cholesky(&kj) {
            if j > jitter {
                log::debug!("Cholesky needed jitter {j:e}");
            }
            return Ok((l, j));
        }
        if j >= MAX_JITTER * (1.0 - 1e-12) {
            return Err(Error::Numeric(format!(
                "Cholesky failed with jitter up to {MAX_JITTER:e}"
            )));
        }
        j = (j * 10.0).min(MAX_JITTER);
    }
}

/// Inverse of a lower-triangular matrix.
pub fn lower_tri_inverse(l: &Array2<f64>) -> Array2<f64> {
    let n = l.nrows();
    let mut inv = Array2::<f64>::zeros((n, n));
    for c in 0..n {
        inv[[c, c]] = 1.0 / l[[c, c]];
        for i in c + 1..n {
            let mut v = 0.0;
            for k in c..i {
                v += l[[i, k]] * inv[[k, c]];
            }
            inv[[i, c]] = -v / l[[i, i]];
        }
    }
    inv
}

pub fn tril(mut a: Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    for i in 0..n {
        for j in i + 1..a.ncols() {
            a[[i, j]] = 0.0;
        }
    }
    a
}

/// Adjoint of K = LLᵀ: given dL, returns the symmetric dK.
fn cholesky_backward(l: &Array2<f64>, linv: &Array2<f64>, dl: &Array2<f64>) -> Array2<f64> {
    let mut p = tril(l.t().dot(dl));
    p.diag_mut().mapv_inplace(|v| 0.5 * v);
    let s = linv.t().dot(&p).dot(linv);
    (&s + &s.t()) * 0.5
}

// ---------------------------------------------------------------------------
// Layer
// ---------------------------------------------------------------------------

/// Sparse variational GP layer with `Q` outputs sharing Z and the kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvgpLayer {
    /// M × input_dim
    pub inducing_inputs: Array2<f64>,
    /// M × Q whitened means
    pub variational_mean: Array2<f64>,
    /// Q lower-triangular M × M factors of the whitened covariances
    pub variational_cov_chol: Vec<Array2<f64>>,
    pub kernel: RbfKernel,
    pub jitter: f64,
    /// Add the layer input to its output (requires Q = input_dim).
    pub identity_mean: bool,
}

struct LayerCache {
    inputs: Array2<f64>,
    kzz: Array2<f64>,
    kzx: Array2<f64>,
    lz: Array2<f64>,
    linv: Array2<f64>,
    a: Array2<f64>,
    b: Vec<Array2<f64>>,
}

impl SvgpLayer {
    pub fn n_inducing(&self) -> usize {
        self.inducing_inputs.nrows()
    }

    pub fn n_outputs(&self) -> usize {
        self.variational_mean.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.inducing_inputs.ncols()
    }

    fn zeros_like(&self) -> Self {
        Self {
            inducing_inputs: Array2::zeros(self.inducing_inputs.raw_dim()),
            variational_mean: Array2::zeros(self.variational_mean.raw_dim()),
            variational_cov_chol: self
                .variational_cov_chol
                .iter()
                .map(|l| Array2::zeros(l.raw_dim()))
                .collect(),
            kernel: RbfKernel {
                log_variance: 0.0,
                log_lengthscales: vec![0.0; self.kernel.dim()],
            },
            jitter: self.jitter,
            identity_mean: self.identity_mean,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (m, din) = self.inducing_inputs.dim();
        let q = self.n_outputs();
        if m == 0 || self.kernel.dim() != din || self.variational_mean.nrows() != m {
            return Err(Error::Shape("inconsistent SVGP layer dimensions".into()));
        }
        if self.variational_cov_chol.len() != q || self.variational_cov_chol.iter().any(|l| l.dim() != (m, m)) {
            return Err(Error::Shape("variational covariance factors do not match M and Q".into()));
        }
        if self.identity_mean && q != din {
            return Err(Error::Shape(format!("identity mean needs Q = input_dim, got {q} vs {din}")));
        }
        if self.inducing_inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite inducing inputs".into()));
        }
        Ok(())
    }

    /// KL of the whitened posteriors against N(0, I), summed over outputs.
    pub fn kl(&self) -> f64 {
        let m = self.n_inducing() as f64;
        let mut kl = 0.0;
        for (q, l) in self.variational_cov_chol.iter().enumerate() {
            let mu = self.variational_mean.column(q);
            let trace: f64 = l.iter().map(|v| v * v).sum();
            let logdet: f64 = l.diag().iter().map(|d| 2.0 * d.abs().ln()).sum();
            kl += 0.5 * (trace + mu.dot(&mu) - m - logdet);
        }
        kl
    }

    fn kl_backward(&self, scale: f64, grad: &mut SvgpLayer) {
        grad.variational_mean.scaled_add(scale, &self.variational_mean);
        for (q, l) in self.variational_cov_chol.iter().enumerate() {
            let g = &mut grad.variational_cov_chol[q];
            g.scaled_add(scale, l);
            for i in 0..l.nrows() {
                g[[i, i]] -= scale / l[[i, i]];
            }
        }
    }

    fn forward(&self, h: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>, LayerCache)> {
        if h.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "layer expects {} input columns, got {}",
                self.input_dim(),
                h.ncols()
            )));
        }
        let z = self.inducing_inputs.view();
        let kzz = self.kernel.matrix(z, z);
        let (lz, _) = cholesky_jittered(&kzz, self.jitter)?;
        let linv = lower_tri_inverse(&lz);
        let kzx = self.kernel.matrix(z, h);
        let a = linv.dot(&kzx);
        let n = h.nrows();
        let q = self.n_outputs();
        let var0 = self.kernel.variance();
        let a_sq = a.map_axis(Axis(0), |c| c.dot(&c));
        let mut mean = Array2::zeros((n, q));
        let mut var = Array2::zeros((n, q));
        let mut bs = Vec::with_capacity(q);
        for k in 0..q {
            let mut mk = a.t().dot(&self.variational_mean.column(k));
            if self.identity_mean {
                mk += &h.column(k);
            }
            mean.column_mut(k).assign(&mk);
            let b = self.variational_cov_chol[k].t().dot(&a);
            let b_sq = b.map_axis(Axis(0), |c| c.dot(&c));
            var.column_mut(k).assign(&(var0 - &a_sq + &b_sq));
            bs.push(b);
        }
        Ok((
            mean,
            var,
            LayerCache {
                inputs: h.to_owned(),
                kzz,
                kzx,
                lz,
                linv,
                a,
                b: bs,
            },
        ))
    }

    /// Accumulates parameter gradients and returns d(loss)/d(inputs).
    fn backward(&self, c: &LayerCache, dmean: &Array2<f64>, dvar: &Array2<f64>, grad: &mut SvgpLayer) -> Array2<f64> {
        let (m, n) = c.a.dim();
        let mut da = Array2::<f64>::zeros((m, n));
        let mut dh = Array2::<f64>::zeros(c.inputs.raw_dim());
        let var0 = self.kernel.variance();
        for k in 0..self.n_outputs() {
            let dm_k = dmean.column(k);
            let dv_k = dvar.column(k);
            // mean = Aᵀ m_k (+ h_k)
            grad.variational_mean
                .column_mut(k)
                .scaled_add(1.0, &c.a.dot(&dm_k));
            let mu = self.variational_mean.column(k);
            da += &outer(mu, dm_k);
            if self.identity_mean {
                dh.column_mut(k).scaled_add(1.0, &dm_k);
            }
            // var = σ² − Σ A² + Σ B², B = Lᵀ A
            grad.kernel.log_variance += var0 * dv_k.sum();
            let mut db = c.b[k].clone();
            for (mut col, &dv) in db.axis_iter_mut(Axis(1)).zip(dv_k) {
                col.mapv_inplace(|v| 2.0 * v * dv);
            }
            grad.variational_cov_chol[k] += &tril(c.a.dot(&db.t()));
            da += &self.variational_cov_chol[k].dot(&db);
            for ((mut dcol, acol), &dv) in da.axis_iter_mut(Axis(1)).zip(c.a.axis_iter(Axis(1))).zip(dv_k) {
                dcol.scaled_add(-2.0 * dv, &acol);
            }
        }
        // A = Lz⁻¹ Kzx
        let dkzx = c.linv.t().dot(&da);
        let dlz = tril(dkzx.dot(&c.a.t())) * -1.0;
        let dkzz = cholesky_backward(&c.lz, &c.linv, &dlz);

        let z = self.inducing_inputs.view();
        let mut dz = Array2::<f64>::zeros(z.raw_dim());
        self.kernel
            .backward(z, c.inputs.view(), &c.kzx, &dkzx, &mut grad.kernel, Some(&mut dz), Some(&mut dh));
        let mut dz2 = Array2::<f64>::zeros(z.raw_dim());
        self.kernel
            .backward(z, z, &c.kzz, &dkzz, &mut grad.kernel, Some(&mut dz), Some(&mut dz2));
        grad.inducing_inputs += &dz;
        grad.inducing_inputs += &dz2;
        dh
    }

    fn pack_into(&self, out: &mut Vec<f64>) {
        out.extend(self.inducing_inputs.iter());
        out.extend(self.variational_mean.iter());
        for l in &self.variational_cov_chol {
            out.extend(l.iter());
        }
        out.push(self.kernel.log_variance);
        out.extend(&self.kernel.log_lengthscales);
    }

    fn unpack_from(&mut self, it: &mut impl Iterator<Item = f64>) {
        let mut next = || it.next().expect("parameter vector length");
        self.inducing_inputs.iter_mut().for_each(|v| *v = next());
        self.variational_mean.iter_mut().for_each(|v| *v = next());
        for l in &mut self.variational_cov_chol {
            // only the lower triangle is a parameter
            for ((i, j), v) in l.indexed_iter_mut() {
                let p = next();
                *v = if j <= i { p } else { 0.0 };
            }
        }
        self.kernel.log_variance = next();
        self.kernel.log_lengthscales.iter_mut().for_each(|v| *v = next());
    }
}

fn outer(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((a.len(), b.len()));
    for (i, &x) in a.iter().enumerate() {
        out.row_mut(i).scaled_add(x, &b);
    }
    out
}

/// Marginal predictive mean and variance of every output at `inputs`.
///
/// Variances are clamped at zero; values below −1e−10 are logged.
pub fn layer_predict(layer: &SvgpLayer, inputs: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    layer.validate()?;
    let (mean, mut var, _) = layer.forward(inputs)?;
    var.mapv_inplace(|v| {
        if v < -1e-10 {
            log::debug!("clamping negative predictive variance {v:e}");
        }
        v.max(0.0)
    });
    Ok((mean, var))
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DgpConfig {
    /// 2 for the deep model; 1 gives a plain SVGP.
    pub n_layers: usize,
    pub inducing: usize,
    pub train_samples: usize,
    pub predict_samples: usize,
    pub init_noise_variance: f64,
    pub init_kernel_variance: f64,
    pub init_lengthscale: f64,
    /// Initial diagonal of the first layer's whitened covariance.
    pub init_inner_variance: f64,
    pub jitter: f64,
    pub seed: u64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            n_layers: 2,
            inducing: 128,
            train_samples: 5,
            predict_samples: 50,
            init_noise_variance: 0.1,
            init_kernel_variance: 1.0,
            init_lengthscale: 1.0,
            init_inner_variance: 1e-5,
            jitter: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpEpoch {
    pub epoch: usize,
    /// −ELBO / N
    pub train_loss: f64,
    pub expected_log_lik: f64,
    pub kl: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpModel {
    pub config: DgpConfig,
    pub layers: Vec<SvgpLayer>,
    pub log_noise_variance: f64,
    pub history: Vec<DgpEpoch>,
    pub scaler: Option<StandardScaler>,
    pub base: BaseModelKind,
}

pub const DGP_HISTORY_HEADER: &str = "epoch,train_loss,expected_log_lik,kl,lr";

/// Picks `m` rows of `x` by k-means++ seeding (D² sampling).
pub fn kmeans_pp(x: ArrayView2<f64>, m: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = x.nrows();
    let m = m.min(n);
    let mut chosen = Vec::with_capacity(m);
    let mut taken = vec![false; n];
    let mut d2 = vec![f64::INFINITY; n];
    let mut next = rng.random_range(0..n);
    for _ in 0..m {
        chosen.push(next);
        taken[next] = true;
        let c = x.row(next);
        for (row, best) in x.rows().into_iter().zip(d2.iter_mut()) {
            let d: f64 = row.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum();
            *best = best.min(d);
        }
        let total: f64 = (0..n).filter(|&i| !taken[i]).map(|i| d2[i]).sum();
        let free: Vec<usize> = (0..n).filter(|&i| !taken[i]).collect();
        if free.is_empty() {
            break;
        }
        next = if total > 0.0 {
            let mut u = rng.random_range(0.0..total);
            let mut pick = *free.last().unwrap();
            for &i in &free {
                if u < d2[i] {
                    pick = i;
                    break;
                }
                u -= d2[i];
            }
            pick
        } else {
            free[rng.random_range(0..free.len())]
        };
    }
    x.select(Axis(0), &chosen)
}

/// Builds an untrained model whose inducing inputs are seeded from `x`.
pub fn dgp_init(config: &DgpConfig, x: ArrayView2<f64>) -> Result<DgpModel> {
    if !(1..=2).contains(&config.n_layers) {
        return Err(Error::Config(format!("n_layers must be 1 or 2, got {}", config.n_layers)));
    }
    if x.nrows() == 0 || config.inducing == 0 {
        return Err(Error::Size("need training inputs and at least one inducing point".into()));
    }
    if config.train_samples == 0 || config.predict_samples == 0 {
        return Err(Error::Config("Monte Carlo sample counts must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let z = kmeans_pp(x, config.inducing, &mut rng);
    let (m, d) = z.dim();
    let kernel = RbfKernel::new(config.init_kernel_variance, &vec![config.init_lengthscale; d])?;
    let mut layers = Vec::new();
    if config.n_layers == 2 {
        let s = config.init_inner_variance.sqrt();
        layers.push(SvgpLayer {
            inducing_inputs: z.clone(),
            variational_mean: Array2::zeros((m, d)),
            variational_cov_chol: vec![Array2::eye(m) * s; d],
            kernel: kernel.clone(),
            jitter: config.jitter,
            identity_mean: true,
        });
    }
    layers.push(SvgpLayer {
        inducing_inputs: z,
        variational_mean: Array2::zeros((m, 1)),
        variational_cov_chol: vec![Array2::eye(m)],
        kernel,
        jitter: config.jitter,
        identity_mean: false,
    });
    if !(config.init_noise_variance > 0.0) {
        return Err(Error::Config("initial noise variance must be positive".into()));
    }
    Ok(DgpModel {
        config: config.clone(),
        layers,
        log_noise_variance: config.init_noise_variance.ln(),
        history: Vec::new(),
        scaler: None,
        base: BaseModelKind::NoBase,
    })
}

/// Loss and flat gradient from one ELBO evaluation.
#[derive(Debug, Clone)]
pub struct DgpEval {
    /// −ELBO / n_total
    pub loss: f64,
    /// Mean expected log-likelihood per point.
    pub expected_log_lik: f64,
    /// KL / n_total
    pub kl: f64,
    pub grads: Vec<f64>,
}

impl DgpModel {
    pub fn noise_variance(&self) -> f64 {
        self.log_noise_variance.exp()
    }

    /// Output dimension of the first layer (the width of its MC samples).
    pub fn inner_dim(&self) -> usize {
        self.layers[0].n_outputs()
    }

    pub fn kl(&self) -> f64 {
        self.layers.iter().map(SvgpLayer::kl).sum()
    }

    pub fn pack(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            l.pack_into(&mut out);
        }
        out.push(self.log_noise_variance);
        out
    }

    pub fn unpack(&mut self, params: &[f64]) {
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            l.unpack_from(&mut it);
        }
        self.log_noise_variance = it.next().expect("parameter vector length");
    }

    pub fn validate(&self) -> Result<()> {
        for l in &self.layers {
            l.validate()?;
        }
        if self.layers.len() == 2 && self.layers[0].n_outputs() != self.layers[1].input_dim() {
            return Err(Error::Shape("layer 1 outputs do not match layer 2 inputs".into()));
        }
        Ok(())
    }

    pub fn history_csv(&self) -> String {
        let mut out = format!("{DGP_HISTORY_HEADER}\n");
        for e in &self.history {
            out.push_str(&format!("{},{},{},{},{}\n", e.epoch, e.train_loss, e.expected_log_lik, e.kl, e.lr));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::evalsuite::export::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        crate::evalsuite::export::read_json(path)
    }
}

/// First-layer standard-normal draws: `samples` matrices of n × inner_dim.
pub fn draw_inner_noise(model: &DgpModel, n: usize, samples: usize, rng: &mut ChaCha8Rng) -> Vec<Array2<f64>> {
    if model.layers.len() < 2 {
        return Vec::new();
    }
    let q = model.inner_dim();
    (0..samples)
        .map(|_| Array2::from_shape_simple_fn((n, q), || StandardNormal.sample(rng)))
        .collect()
}

/// Negative ELBO per training point with the first-layer noise `eps` held fixed.
pub fn dgp_elbo(model: &DgpModel, x: ArrayView2<f64>, y: &[f64], n_total: usize, eps: &[Array2<f64>]) -> Result<DgpEval> {
    let b = x.nrows();
    if b == 0 || b != y.len() {
        return Err(Error::Size(format!("batch of {b} inputs and {} targets", y.len())));
    }
    if n_total == 0 {
        return Err(Error::Size("n_total must be positive".into()));
    }
    let deep = model.layers.len() == 2;
    let mut grads: Vec<SvgpLayer> = model.layers.iter().map(SvgpLayer::zeros_like).collect();

    let (inner, h, samples) = if deep {
        if eps.is_empty() || eps.iter().any(|e| e.dim() != (b, model.inner_dim())) {
            return Err(Error::Shape("first-layer noise does not match the batch".into()));
        }
        let (m1, v1, c1) = model.layers[0].forward(x)?;
        let sd = v1.mapv(|v| v.max(VAR_FLOOR).sqrt());
        let s = eps.len();
        let mut h = Array2::zeros((s * b, model.inner_dim()));
        for (k, e) in eps.iter().enumerate() {
            h.slice_mut(s![k * b..(k + 1) * b, ..]).assign(&(&m1 + &(&sd * e)));
        }
        (Some((v1, sd, c1)), h, s)
    } else {
        (None, x.to_owned(), 1)
    };

    let last = model.layers.last().unwrap();
    let (m2, v2, c2) = last.forward(h.view())?;
    let noise = model.noise_variance();
    let rows = (samples * b) as f64;
    let mut ell = 0.0;
    let mut dm2 = Array2::zeros(m2.raw_dim());
    let mut dv2 = Array2::zeros(v2.raw_dim());
    let mut dlog_noise = 0.0;
    for r in 0..samples * b {
        let t = y[r % b];
        let (mu, v) = (m2[[r, 0]], v2[[r, 0]]);
        let sq = (t - mu) * (t - mu) + v;
        ell += -0.5 * LN_2PI - 0.5 * model.log_noise_variance - 0.5 * sq / noise;
        dm2[[r, 0]] = -(t - mu) / noise / rows;
        dv2[[r, 0]] = 0.5 / noise / rows;
        dlog_noise -= (-0.5 + 0.5 * sq / noise) / rows;
    }
    ell /= rows;

    let n_layers = model.layers.len();
    let dh = last.backward(&c2, &dm2, &dv2, &mut grads[n_layers - 1]);
    if let Some((v1, sd, c1)) = inner {
        let mut dm1 = Array2::<f64>::zeros(v1.raw_dim());
        let mut dv1 = Array2::<f64>::zeros(v1.raw_dim());
        for (k, e) in eps.iter().enumerate() {
            let dhk = dh.slice(s![k * b..(k + 1) * b, ..]);
            dm1 += &dhk;
            ndarray::Zip::from(&mut dv1)
                .and(&dhk)
                .and(e)
                .and(&sd)
                .and(&v1)
                .for_each(|dv, &g, &ek, &sdv, &var| {
                    if var > VAR_FLOOR {
                        *dv += g * ek / (2.0 * sdv);
                    }
                });
        }
        model.layers[0].backward(&c1, &dm1, &dv1, &mut grads[0]);
    }

    let kl = model.kl() / n_total as f64;
    for (l, g) in model.layers.iter().zip(grads.iter_mut()) {
        l.kl_backward(1.0 / n_total as f64, g);
    }
    let loss = -ell + kl;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite ELBO {loss}")));
    }
    let mut flat = Vec::new();
    for g in &grads {
        g.pack_into(&mut flat);
    }
    flat.push(dlog_noise);
    Ok(DgpEval {
        loss,
        expected_log_lik: ell,
        kl,
        grads: flat,
    })
}

/// Adam on the doubly stochastic ELBO. `y` holds standardized targets.
pub fn dgp_train(model: &mut DgpModel, x: ArrayView2<f64>, y: &[f64], tc: &TrainConfig) -> Result<()> {
    tc.validate()?;
    model.validate()?;
    if x.nrows() == 0 || x.nrows() != y.len() {
        return Err(Error::Size(format!("{} inputs and {} targets", x.nrows(), y.len())));
    }
    let mut params = model.pack();
    let mut adam = Adam::new(&[params.len()]);
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let n = y.len();
    for epoch in 0..tc.epochs {
        let lr = tc.lr_at(epoch);
        let (mut loss, mut ell) = (0.0, 0.0);
        for batch in epoch_batches(n, tc.batch_size, &mut rng) {
            let xb = x.select(Axis(0), &batch);
            let yb: Vec<f64> = batch.iter().map(|&i| y[i]).collect();
            let eps = draw_inner_noise(model, batch.len(), model.config.train_samples, &mut rng);
            let eval = dgp_elbo(model, xb.view(), &yb, n, &eps).map_err(|e| match e {
                Error::Numeric(msg) => {
                    log::warn!("DGP training failed at epoch {epoch}: {msg}");
                    Error::Divergence { epoch }
                }
                other => other,
            })?;
            loss += eval.loss * batch.len() as f64;
            ell += eval.expected_log_lik * batch.len() as f64;
            adam.step(vec![params.as_mut_slice()], vec![eval.grads.as_slice()], lr);
            model.unpack(&params);
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Divergence { epoch });
        }
        model.history.push(DgpEpoch {
            epoch,
            train_loss: loss / n as f64,
            expected_log_lik: ell / n as f64,
            kl: model.kl() / n as f64,
            lr,
        });
    }
    Ok(())
}

/// Predictive mean and total variance per point in standardized units.
///
/// The variance is the spread of the per-sample means plus the mean
/// last-layer variance plus the likelihood noise.
pub fn dgp_predict_moments(model: &DgpModel, x: ArrayView2<f64>, mc_samples: usize, seed: u64) -> Result<(Array1<f64>, Array1<f64>)> {
    model.validate()?;
    let n = x.nrows();
    let noise = model.noise_variance();
    let last = model.layers.last().unwrap();
    if model.layers.len() == 1 {
        let (m, v) = layer_predict(last, x)?;
        return Ok((m.column(0).to_owned(), v.column(0).mapv(|v| v + noise)));
    }
    if mc_samples == 0 {
        return Err(Error::Size("need at least one Monte Carlo sample".into()));
    }
    let (m1, v1) = layer_predict(&model.layers[0], x)?;
    let sd = v1.mapv(f64::sqrt);
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, "dgp/predict"));
    let mut means = Array2::zeros((mc_samples, n));
    let mut var_sum = Array1::<f64>::zeros(n);
    for s in 0..mc_samples {
        let e: Array2<f64> = Array2::from_shape_simple_fn(m1.raw_dim(), || StandardNormal.sample(&mut rng));
        let h = &m1 + &(&sd * &e);
        let (m2, v2) = layer_predict(last, h.view())?;
        means.row_mut(s).assign(&m2.column(0));
        var_sum += &v2.column(0);
    }
    let mean = means.mean_axis(Axis(0)).unwrap();
    let spread = means.var_axis(Axis(0), 0.0);
    let var = spread + var_sum / mc_samples as f64 + noise;
    Ok((mean, var))
}

/// Prediction sets in physical units; `x` standardized. No samples are stored.
pub fn dgp_predict(model: &DgpModel, x: ArrayView2<f64>, mc_samples: usize, seed: u64) -> Result<Vec<PredictionSet>> {
    check_scaler(model.scaler.as_ref(), &x)?;
    let (mean, var) = dgp_predict_moments(model, x, mc_samples, seed)?;
    let (shift, scale) = model
        .scaler
        .as_ref()
        .map_or((0.0, 1.0), |s| (s.target_mean, s.target_std));
    Ok(mean
        .iter()
        .zip(&var)
        .map(|(&m, &v)| PredictionSet::from_moments(m * scale + shift, v.sqrt() * scale))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.5..1.5))
    }

    fn perturbed_model(n_layers: usize, seed: u64) -> (DgpModel, Array2<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_matrix(7, 2, &mut rng);
        let y: Vec<f64> = (0..7).map(|i| x[[i, 0]].sin() + 0.3 * x[[i, 1]]).collect();
        let config = DgpConfig {
            n_layers,
            inducing: 4,
            train_samples: 3,
            init_inner_variance: 0.2,
            init_lengthscale: 0.9,
            seed,
            ..DgpConfig::default()
        };
        let mut model = dgp_init(&config, x.view()).unwrap();
        for l in &mut model.layers {
            l.inducing_inputs += &random_matrix(4, 2, &mut rng).mapv(|v| 0.2 * v);
            l.variational_mean = random_matrix(4, l.n_outputs(), &mut rng).mapv(|v| 0.5 * v);
            for c in &mut l.variational_cov_chol {
                let mut r = tril(random_matrix(4, 4, &mut rng).mapv(|v| 0.2 * v));
                r.diag_mut().mapv_inplace(|v| 0.6 + v.abs());
                *c = r;
            }
            l.kernel.log_lengthscales[1] = 0.3;
            l.kernel.log_variance = 0.2;
        }
        model.log_noise_variance = (0.05f64).ln();
        (model, x, y)
    }

    fn gradient_error(model: &DgpModel, x: &Array2<f64>, y: &[f64], eps: &[Array2<f64>]) -> f64 {
        let eval = dgp_elbo(model, x.view(), y, 20, eps).unwrap();
        let base = model.pack();
        let mut worst: f64 = 0.0;
        for k in 0..base.len() {
            let h = 1e-6;
            let mut p = base.clone();
            let mut m = model.clone();
            p[k] += h;
            m.unpack(&p);
            let up = dgp_elbo(&m, x.view(), y, 20, eps).unwrap().loss;
            p[k] -= 2.0 * h;
            m.unpack(&p);
            let down = dgp_elbo(&m, x.view(), y, 20, eps).unwrap().loss;
            let fd = (up - down) / (2.0 * h);
            let g = eval.grads[k];
            if fd == 0.0 && g == 0.0 {
                continue;
            }
            let e = (fd - g).abs() / fd.abs().max(g.abs()).max(1e-6);
            worst = worst.max(e);
        }
        worst
    }

    #[test]
    fn kernel_basics() {
        let k = RbfKernel::new(2.5, &[0.5, 2.0]).unwrap();
        assert_eq!(rbf_eval(&k, &[0.3, -1.0], &[0.3, -1.0]).unwrap(), 2.5);
        let far = rbf_eval(&k, &[0.0, 0.0], &[6.0, 0.0]).unwrap();
        assert!(far < 1e-12 * 2.5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let a = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let b = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let ab = rbf_eval(&k, &a, &b).unwrap();
            assert!((ab - rbf_eval(&k, &b, &a).unwrap()).abs() <= 1e-15);
            assert!(ab <= 2.5);
        }
        assert!(matches!(rbf_eval(&k, &[1.0], &[1.0, 2.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn gram_is_positive_semidefinite() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let k = RbfKernel::new(1.3, &[0.7, 1.1, 0.4]).unwrap();
        for _ in 0..20 {
            let x = random_matrix(30, 3, &mut rng);
            let g = k.matrix(x.view(), x.view());
            assert_eq!(g, g.t());
            let mut shifted = g.clone();
            shifted.diag_mut().mapv_inplace(|v| v + 1e-8);
            assert!(cholesky(&shifted).is_some());
        }
    }

    #[test]
    fn triangular_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut l = tril(random_matrix(6, 6, &mut rng));
        l.diag_mut().mapv_inplace(|v| 1.0 + v.abs());
        let prod = l.dot(&lower_tri_inverse(&l));
        for ((i, j), v) in prod.indexed_iter() {
            assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
        }
    }

    #[test]
    fn prior_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z = random_matrix(6, 2, &mut rng);
        let kernel = RbfKernel::new(1.7, &[0.8, 1.2]).unwrap();
        let layer = SvgpLayer {
            inducing_inputs: z,
            variational_mean: Array2::zeros((6, 1)),
            variational_cov_chol: vec![Array2::eye(6)],
            kernel,
            jitter: 1e-6,
            identity_mean: false,
        };
        let x = random_matrix(10, 2, &mut rng);
        let (m, v) = layer_predict(&layer, x.view()).unwrap();
        for i in 0..10 {
            assert!(m[[i, 0]].abs() < 1e-12);
            assert!((v[[i, 0]] - 1.7).abs() < 1e-8);
        }
    }

    #[test]
    fn variance_at_inducing_point_is_jitter_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = random_matrix(5, 2, &mut rng);
        let layer = SvgpLayer {
            inducing_inputs: z.clone(),
            variational_mean: Array2::zeros((5, 1)),
            variational_cov_chol: vec![Array2::eye(5) * 1e-6],
            kernel: RbfKernel::new(1.0, &[1.0, 1.0]).unwrap(),
            jitter: 1e-6,
            identity_mean: false,
        };
        let (_, v) = layer_predict(&layer, z.slice(s![0..1, ..])).unwrap();
        assert!(v[[0, 0]] < 1e-5, "{}", v[[0, 0]]);
        let (_, far) = layer_predict(&layer, Array2::from_elem((1, 2), 50.0).view()).unwrap();
        assert!((far[[0, 0]] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn inducing_permutation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let z = random_matrix(6, 2, &mut rng);
        let layer = SvgpLayer {
            inducing_inputs: z.clone(),
            variational_mean: Array2::zeros((6, 1)),
            variational_cov_chol: vec![Array2::eye(6) * 0.3],
            kernel: RbfKernel::new(1.0, &[0.6, 0.9]).unwrap(),
            jitter: 1e-6,
            identity_mean: false,
        };
        let mut permuted = layer.clone();
        permuted.inducing_inputs = z.select(Axis(0), &[3, 0, 5, 1, 4, 2]);
        let x = random_matrix(8, 2, &mut rng);
        let (_, va) = layer_predict(&layer, x.view()).unwrap();
        let (_, vb) = layer_predict(&permuted, x.view()).unwrap();
        for (a, b) in va.iter().zip(&vb) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn kl_vanishes_at_prior() {
        let x = Array2::from_shape_fn((10, 2), |(i, j)| (i + j) as f64 / 3.0);
        let mut model = dgp_init(&DgpConfig { inducing: 5, ..DgpConfig::default() }, x.view()).unwrap();
        model.layers[0].variational_cov_chol.iter_mut().for_each(|l| *l = Array2::eye(5));
        assert!(model.kl().abs() < 1e-12);
    }

    #[test]
    fn single_layer_gradient_check() {
        let (model, x, y) = perturbed_model(1, 7);
        let err = gradient_error(&model, &x, &y, &[]);
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn deep_gradient_check_with_frozen_noise() {
        let (model, x, y) = perturbed_model(2, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let eps = draw_inner_noise(&model, x.nrows(), 3, &mut rng);
        let err = gradient_error(&model, &x, &y, &eps);
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn zero_epochs_leave_model() {
        let (mut model, x, y) = perturbed_model(2, 10);
        let before = model.clone();
        dgp_train(&mut model, x.view(), &y, &TrainConfig { epochs: 0, ..TrainConfig::default() }).unwrap();
        assert_eq!(model, before);
    }

    #[test]
    fn predictive_std_positive_and_seeded() {
        let (model, x, _) = perturbed_model(2, 11);
        let a = dgp_predict(&model, x.view(), 20, 4).unwrap();
        let b = dgp_predict(&model, x.view(), 20, 4).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|p| p.std > 0.0 && p.samples.is_empty()));
    }
}
