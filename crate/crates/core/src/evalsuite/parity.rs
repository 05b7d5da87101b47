use serde::{Deserialize, Serialize};

use crate::prediction::PredictionSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParityRow {
    pub point_id: usize,
    pub pressure: Option<f64>,
    pub y_true: f64,
    pub mean: f64,
    pub lo_2sigma: f64,
    pub hi_2sigma: f64,
    /// |relative error| <= band (inclusive; the complement of the F>10% count).
    pub inside_band: bool,
    pub rstd: f64,
}

/// Identity and ±band reference lines sampled at `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParityLine {
    pub x: f64,
    pub identity: f64,
    pub lower_band: f64,
    pub upper_band: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParityTable {
    pub error_band_pct: f64,
    pub rows: Vec<ParityRow>,
    pub lines: Vec<ParityLine>,
}

impl ParityTable {
    pub fn fraction_outside_pct(&self) -> f64 {
        100.0 * self.rows.iter().filter(|r| !r.inside_band).count() as f64 / self.rows.len() as f64
    }

    /// Attaches dataset ids and pressures (MPa) to the rows, in order.
    pub fn with_points(mut self, ids: &[usize], pressures: &[f64]) -> Self {
        for ((row, id), p) in self.rows.iter_mut().zip(ids).zip(pressures) {
            row.point_id = *id;
            row.pressure = Some(*p);
        }
        self
    }

    /// Rows whose pressure falls inside [lo, hi] MPa.
    pub fn filter_pressure(&self, lo: f64, hi: f64) -> ParityTable {
        ParityTable {
            error_band_pct: self.error_band_pct,
            rows: self
                .rows
                .iter()
                .filter(|r| r.pressure.is_some_and(|p| p >= lo && p <= hi))
                .cloned()
                .collect(),
            lines: self.lines.clone(),
        }
    }
}

pub fn parity_export(y_true: &[f64], pred: &[PredictionSet], error_band_pct: f64) -> ParityTable {
    let band = error_band_pct / 100.0;
    let rows: Vec<ParityRow> = y_true
        .iter()
        .zip(pred)
        .enumerate()
        .map(|(i, (y, p))| ParityRow {
            point_id: i,
            pressure: None,
            y_true: *y,
            mean: p.mean,
            lo_2sigma: p.interval_2sigma.0,
            hi_2sigma: p.interval_2sigma.1,
            inside_band: ((p.mean - y) / y).abs() <= band,
            rstd: p.rstd,
        })
        .collect();
    let top = y_true
        .iter()
        .chain(pred.iter().map(|p| &p.mean))
        .cloned()
        .fold(0.0, f64::max);
    let lines = (0..=50)
        .map(|i| {
            let x = top * i as f64 / 50.0;
            ParityLine {
                x,
                identity: x,
                lower_band: x * (1.0 - band),
                upper_band: x * (1.0 + band),
            }
        })
        .collect();
    ParityTable {
        error_band_pct,
        rows,
        lines,
    }
}
