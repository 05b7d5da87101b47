use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prediction::PredictionSet;
use crate::stats::{mean, sum};

/// The seven accuracy/uncertainty figures of one model configuration.
///
/// All error figures are absolute relative errors in percent. The rStd
/// aggregates are absent for single-valued predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mu_error: f64,
    pub max_error: f64,
    pub mean_rstd: Option<f64>,
    pub max_rstd: Option<f64>,
    pub rrmse: f64,
    /// Percent of points whose |relative error| is strictly above 10%.
    pub f_gt10: f64,
    pub r2: f64,
}

pub fn metrics(y_true: &[f64], pred: &[PredictionSet]) -> Result<MetricsReport> {
    if y_true.len() != pred.len() {
        return Err(Error::Size(format!(
            "{} measured values vs {} predictions",
            y_true.len(),
            pred.len()
        )));
    }
    if y_true.len() < 2 {
        return Err(Error::Size("metrics need at least two points".into()));
    }
    let bad: Vec<usize> = y_true
        .iter()
        .enumerate()
        .filter(|(_, y)| !(**y > 0.0))
        .map(|(i, _)| i)
        .collect();
    if !bad.is_empty() {
        return Err(Error::ZeroTarget(bad));
    }

    let n = y_true.len() as f64;
    let rel: Vec<f64> = y_true
        .iter()
        .zip(pred)
        .map(|(y, p)| ((p.mean - y) / y).abs())
        .collect();
    let sq: Vec<f64> = rel.iter().map(|e| e * e).collect();
    let mu_error = 100.0 * mean(&rel);
    let max_error = 100.0 * rel.iter().cloned().fold(0.0, f64::max);
    let rrmse = 100.0 * mean(&sq).sqrt();
    let f_gt10 = 100.0 * rel.iter().filter(|e| **e > 0.10).count() as f64 / n;

    let y_bar = mean(y_true);
    let ss_res: Vec<f64> = y_true
        .iter()
        .zip(pred)
        .map(|(y, p)| (p.mean - y) * (p.mean - y))
        .collect();
    let ss_tot: Vec<f64> = y_true.iter().map(|y| (y - y_bar) * (y - y_bar)).collect();
    let r2 = 1.0 - sum(&ss_res) / sum(&ss_tot);

    let (mean_rstd, max_rstd) = if pred.iter().all(|p| p.deterministic) {
        (None, None)
    } else {
        let rstd: Vec<f64> = pred.iter().map(|p| p.rstd).collect();
        (
            Some(mean(&rstd)),
            Some(rstd.iter().cloned().fold(f64::NEG_INFINITY, f64::max)),
        )
    };

    Ok(MetricsReport {
        mu_error,
        max_error,
        mean_rstd,
        max_rstd,
        rrmse,
        f_gt10,
        r2,
    })
}
