use serde::{Deserialize, Serialize};

use super::normal::norm_pdf;
use crate::prediction::PredictionSet;
use crate::stats::{mean, population_std, quantile_sorted};

pub const KDE_GRID_POINTS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Histogram and Gaussian KDE of per-point rStd values (percent).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RstdDistribution {
    pub histogram: Vec<HistogramBin>,
    pub kde_x: Vec<f64>,
    pub kde_density: Vec<f64>,
    /// Silverman bandwidth used for the KDE.
    pub bandwidth: f64,
    /// Points beyond Q3 + 1.5·IQR dropped for display.
    pub outliers_removed: usize,
}

pub fn rstd_distribution(pred: &[PredictionSet], bins: usize, drop_outliers: bool) -> RstdDistribution {
    let bins = bins.max(1);
    let mut values: Vec<f64> = pred.iter().map(|p| p.rstd).filter(|v| v.is_finite()).collect();
    values.sort_by(|a, b| a.total_cmp(b));
    let mut outliers_removed = pred.len() - values.len();
    if values.is_empty() {
        return RstdDistribution {
            histogram: Vec::new(),
            kde_x: Vec::new(),
            kde_density: Vec::new(),
            bandwidth: 0.0,
            outliers_removed,
        };
    }
    let q1 = quantile_sorted(&values, 0.25);
    let q3 = quantile_sorted(&values, 0.75);
    let iqr = q3 - q1;
    if drop_outliers {
        let fence = q3 + 1.5 * iqr;
        let before = values.len();
        values.retain(|v| *v <= fence);
        outliers_removed += before - values.len();
    }

    let max = values[values.len() - 1];
    let top = if max > 0.0 { max } else { 1.0 };
    let width = top / bins as f64;
    let mut histogram: Vec<HistogramBin> = (0..bins)
        .map(|i| HistogramBin {
            lo: i as f64 * width,
            hi: if i + 1 == bins { top } else { (i + 1) as f64 * width },
            count: 0,
        })
        .collect();
    for v in &values {
        let idx = ((v / width).floor().max(0.0) as usize).min(bins - 1);
        histogram[idx].count += 1;
    }

    let n = values.len() as f64;
    let sigma = population_std(&values, mean(&values));
    let spread = match (sigma > 0.0, iqr > 0.0) {
        (true, true) => sigma.min(iqr / 1.34),
        (true, false) => sigma,
        (false, true) => iqr / 1.34,
        (false, false) => (values[0].abs() * 1e-3).max(1e-6) / 0.9 * n.powf(0.2),
    };
    let bandwidth = 0.9 * spread * n.powf(-0.2);
    let lo = values[0] - 4.0 * bandwidth;
    let hi = max + 4.0 * bandwidth;
    let step = (hi - lo) / (KDE_GRID_POINTS - 1) as f64;
    let kde_x: Vec<f64> = (0..KDE_GRID_POINTS).map(|i| lo + step * i as f64).collect();
    let kde_density = kde_x
        .iter()
        .map(|x| values.iter().map(|v| norm_pdf((x - v) / bandwidth)).sum::<f64>() / (n * bandwidth))
        .collect();

    RstdDistribution {
        histogram,
        kde_x,
        kde_density,
        bandwidth,
        outliers_removed,
    }
}
