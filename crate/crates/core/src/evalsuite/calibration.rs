use serde::{Deserialize, Serialize};

use super::normal::norm_ppf;
use crate::error::{Error, Result};
use crate::prediction::PredictionSet;

/// Observed vs expected cumulative probability of σ-normalised residuals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCurve {
    pub expected_p: Vec<f64>,
    pub observed_p: Vec<f64>,
    /// Trapezoidal area between the curve and the identity line.
    pub miscalibration_area: f64,
}

/// `size` equally spaced probabilities strictly inside (0, 1).
pub fn default_grid(size: usize) -> Vec<f64> {
    (1..=size).map(|k| k as f64 / (size + 1) as f64).collect()
}

pub fn calibration_curve(
    y_true: &[f64],
    pred: &[PredictionSet],
    grid_size: usize,
) -> Result<CalibrationCurve> {
    if y_true.len() != pred.len() || y_true.is_empty() {
        return Err(Error::Size(format!(
            "{} measured values vs {} predictions",
            y_true.len(),
            pred.len()
        )));
    }
    let mut z = Vec::with_capacity(y_true.len());
    for (i, (y, p)) in y_true.iter().zip(pred).enumerate() {
        if !(p.std > 0.0) {
            return Err(Error::DegenerateUncertainty(i));
        }
        z.push((y - p.mean) / p.std);
    }
    Ok(calibration_from_z(&z, grid_size))
}

/// Calibration curve of already-normalised residuals `z`.
pub fn calibration_from_z(z: &[f64], grid_size: usize) -> CalibrationCurve {
    let mut sorted = z.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len() as f64;
    let expected_p = default_grid(grid_size);
    let observed_p: Vec<f64> = expected_p
        .iter()
        .map(|&p| {
            let threshold = norm_ppf(p);
            sorted.partition_point(|&v| v <= threshold) as f64 / n
        })
        .collect();
    let gap: Vec<f64> = expected_p
        .iter()
        .zip(&observed_p)
        .map(|(e, o)| (o - e).abs())
        .collect();
    let miscalibration_area = expected_p
        .windows(2)
        .zip(gap.windows(2))
        .map(|(x, g)| 0.5 * (x[1] - x[0]) * (g[0] + g[1]))
        .sum();
    CalibrationCurve {
        expected_p,
        observed_p,
        miscalibration_area,
    }
}
