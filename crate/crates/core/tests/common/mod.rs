//! Helpers shared by the integration test targets. Plain `Vec` linear
//! algebra on purpose: nothing here goes through the crate's own kernels or
//! factorizations.
#![allow(dead_code)]

use chf_hybrid::dgp::{dgp_init, dgp_predict_moments, dgp_train, DgpConfig, DgpModel, SvgpLayer};
use chf_hybrid::nn::TrainConfig;
use ndarray::Array2;

pub type Mat = Vec<Vec<f64>>;

pub fn rbf(variance: f64, lengthscales: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let r2: f64 = a.iter().zip(b).zip(lengthscales).map(|((x, y), l)| ((x - y) / l).powi(2)).sum();
    variance * (-0.5 * r2).exp()
}

pub fn gram(variance: f64, ls: &[f64], a: &[Vec<f64>], b: &[Vec<f64>]) -> Mat {
    a.iter().map(|x| b.iter().map(|y| rbf(variance, ls, x, y)).collect()).collect()
}

pub fn chol(a: &Mat) -> Mat {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = a[i][i] - s;
                assert!(d > 0.0, "matrix not positive definite");
                l[i][i] = d.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    l
}

/// Solves A x = b given the Cholesky factor of A.
pub fn chol_solve(l: &Mat, b: &[f64]) -> Vec<f64> {
    let n = l.len();
    let mut y = vec![0.0; n];
    for i in 0..n {
        y[i] = (b[i] - (0..i).map(|k| l[i][k] * y[k]).sum::<f64>()) / l[i][i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        x[i] = (y[i] - (i + 1..n).map(|k| l[k][i] * x[k]).sum::<f64>()) / l[i][i];
    }
    x
}

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Predictive mean/variance of a single-output SVGP layer, computed in the
/// unwhitened parametrization u ~ N(Lz·m, Lz·S·Lzᵀ).
pub fn direct_svgp(layer: &SvgpLayer, x: &Array2<f64>) -> (Vec<f64>, Vec<f64>) {
    let var = layer.kernel.log_variance.exp();
    let ls: Vec<f64> = layer.kernel.log_lengthscales.iter().map(|v| v.exp()).collect();
    let z = rows(&layer.inducing_inputs);
    let m = z.len();
    let mut kzz = gram(var, &ls, &z, &z);
    for (i, row) in kzz.iter_mut().enumerate() {
        row[i] += layer.jitter;
    }
    let lz = chol(&kzz);
    let w: Vec<f64> = layer.variational_mean.column(0).to_vec();
    let lw = &layer.variational_cov_chol[0];
    // mu_u = Lz w, Sigma_u = Lz (Lw Lw^T) Lz^T
    let mu_u: Vec<f64> = (0..m).map(|i| (0..m).map(|k| lz[i][k] * w[k]).sum()).collect();
    let lzlw: Mat = (0..m)
        .map(|i| (0..m).map(|j| (0..m).map(|k| lz[i][k] * lw[[k, j]]).sum()).collect())
        .collect();
    let alpha = chol_solve(&lz, &mu_u);
    let mut means = Vec::new();
    let mut vars = Vec::new();
    for xi in rows(x) {
        let kz: Vec<f64> = z.iter().map(|zj| rbf(var, &ls, zj, &xi)).collect();
        let mean: f64 = kz.iter().zip(&alpha).map(|(a, b)| a * b).sum();
        let kinv_kz = chol_solve(&lz, &kz);
        let q: f64 = kz.iter().zip(&kinv_kz).map(|(a, b)| a * b).sum();
        // kz^T Kzz^-1 Lz Lw = (Lz Lw)^T Kzz^-1 kz, squared norm
        let proj: f64 = (0..m)
            .map(|j| (0..m).map(|k| lzlw[k][j] * kinv_kz[k]).sum::<f64>().powi(2))
            .sum();
        means.push(mean);
        vars.push(var - q + proj);
    }
    (means, vars)
}

/// Exact GP log marginal likelihood of y under RBF(variance, ls) + noise.
pub fn exact_log_ml(variance: f64, ls: &[f64], noise: f64, x: &[Vec<f64>], y: &[f64]) -> f64 {
    let n = x.len();
    let mut k = gram(variance, ls, x, x);
    for (i, row) in k.iter_mut().enumerate() {
        row[i] += noise;
    }
    let l = chol(&k);
    let alpha = chol_solve(&l, y);
    let fit: f64 = y.iter().zip(&alpha).map(|(a, b)| a * b).sum();
    let logdet: f64 = (0..n).map(|i| l[i][i].ln()).sum::<f64>() * 2.0;
    -0.5 * fit - 0.5 * logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
}

pub struct SinusoidResult {
    pub rmse_inside: f64,
    pub std_inside: f64,
    pub std_outside: f64,
}

pub fn sinusoid(x: f64) -> f64 {
    (1.5 * x).sin()
}

/// Trains a deep GP on sin(1.5x) over [-2, 2] and probes inside and outside.
pub fn sinusoid_benchmark(seed: u64) -> (DgpModel, SinusoidResult) {
    let n = 200;
    let xs: Vec<f64> = (0..n).map(|i| -2.0 + 4.0 * i as f64 / (n - 1) as f64).collect();
    let x = Array2::from_shape_vec((n, 1), xs.clone()).unwrap();
    let y: Vec<f64> = xs.iter().map(|&v| sinusoid(v)).collect();
    let config = DgpConfig {
        inducing: 50,
        init_noise_variance: 0.01,
        seed,
        ..DgpConfig::default()
    };
    let mut model = dgp_init(&config, x.view()).unwrap();
    let tc = TrainConfig {
        epochs: 500,
        lr0: 1e-2,
        decay_rate: 0.99,
        batch_size: 64,
        seed,
        ..TrainConfig::default()
    };
    dgp_train(&mut model, x.view(), &y, &tc).unwrap();

    let inside: Vec<f64> = (0..50).map(|i| -1.9 + 3.8 * (i as f64 + 0.5) / 50.0).collect();
    let outside: Vec<f64> = (0..50).map(|i| 3.0 + 2.0 * i as f64 / 49.0).collect();
    let xi = Array2::from_shape_vec((50, 1), inside.clone()).unwrap();
    let xo = Array2::from_shape_vec((50, 1), outside).unwrap();
    let (mi, vi) = dgp_predict_moments(&model, xi.view(), 100, seed).unwrap();
    let (_, vo) = dgp_predict_moments(&model, xo.view(), 100, seed).unwrap();
    let rmse_inside = (mi.iter().zip(&inside).map(|(m, &x)| (m - sinusoid(x)).powi(2)).sum::<f64>() / 50.0).sqrt();
    let result = SinusoidResult {
        rmse_inside,
        std_inside: vi.iter().map(|v| v.sqrt()).sum::<f64>() / 50.0,
        std_outside: vo.iter().map(|v| v.sqrt()).sum::<f64>() / 50.0,
    };
    (model, result)
}
