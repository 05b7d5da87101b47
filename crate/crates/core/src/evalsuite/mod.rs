//! Accuracy metrics, calibration curves, rStd distributions and parity data.

mod calibration;
pub mod export;
mod metrics;
pub mod normal;
mod parity;
mod rstd;

pub use crate::prediction::PredictionSet;
pub use calibration::{calibration_curve, calibration_from_z, default_grid, CalibrationCurve};
pub use metrics::{metrics, MetricsReport};
pub use parity::{parity_export, ParityLine, ParityRow, ParityTable};
pub use rstd::{rstd_distribution, HistogramBin, RstdDistribution, KDE_GRID_POINTS};
