//! Committee of identically configured MLPs that differ only in their seeds.

use std::collections::HashSet;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correlations::BaseModelKind;
use crate::dataset::StandardScaler;
use crate::error::{Error, Result};
use crate::nn::{mlp_init, train, LossHistory, MlpConfig, MlpParams, TrainConfig};
use crate::prediction::PredictionSet;

pub const DEFAULT_MEMBERS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub members: Vec<MlpParams>,
    pub member_seeds: Vec<u64>,
    pub histories: Vec<LossHistory>,
    /// Feature and target statistics the members were trained under.
    pub scaler: Option<StandardScaler>,
    pub base: BaseModelKind,
}

/// Seeds base_seed, base_seed + 1, ...
pub fn member_seeds(base_seed: u64, n_members: usize) -> Vec<u64> {
    (0..n_members as u64).map(|i| base_seed.wrapping_add(i)).collect()
}

#[allow(clippy::too_many_arguments)]
pub fn train_ensemble(
    config: &MlpConfig,
    tc: &TrainConfig,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    val: Option<(ArrayView2<f64>, ArrayView2<f64>)>,
    base_seed: u64,
    n_members: usize,
    parallel: bool,
) -> Result<EnsembleModel> {
    train_ensemble_with_seeds(config, tc, x, y, val, &member_seeds(base_seed, n_members), parallel)
}

/// Trains one member per seed; the seed drives both initialisation and
/// minibatch order.
pub fn train_ensemble_with_seeds(
    config: &MlpConfig,
    tc: &TrainConfig,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    val: Option<(ArrayView2<f64>, ArrayView2<f64>)>,
    seeds: &[u64],
    parallel: bool,
) -> Result<EnsembleModel> {
    if seeds.is_empty() {
        return Err(Error::Config("an ensemble needs at least one member".into()));
    }
    if seeds.iter().collect::<HashSet<_>>().len() != seeds.len() {
        return Err(Error::Config(format!("ensemble member seeds {seeds:?} are not distinct")));
    }
    if x.nrows() == 0 {
        return Err(Error::Size("empty training set".into()));
    }
    let fit = |seed: u64| -> Result<(MlpParams, LossHistory)> {
        let mut params = mlp_init(&MlpConfig {
            seed,
            ..config.clone()
        })?;
        let tc = TrainConfig { seed, ..tc.clone() };
        let history = train(&mut params, x, y, val, &tc)?;
        Ok((params, history))
    };
    let results: Vec<Result<(MlpParams, LossHistory)>> = if parallel {
        seeds.par_iter().map(|&s| fit(s)).collect()
    } else {
        seeds.iter().map(|&s| fit(s)).collect()
    };

    let mut members = Vec::with_capacity(seeds.len());
    let mut histories = Vec::with_capacity(seeds.len());
    let mut failed = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok((p, h)) => {
                members.push(p);
                histories.push(h);
            }
            Err(Error::Divergence { epoch }) => {
                log::warn!("ensemble member {i} diverged at epoch {epoch}");
                failed.push(i);
            }
            Err(e) => return Err(e),
        }
    }
    if !failed.is_empty() {
        return Err(Error::Ensemble(failed));
    }
    Ok(EnsembleModel {
        members,
        member_seeds: seeds.to_vec(),
        histories,
        scaler: None,
        base: BaseModelKind::NoBase,
    })
}

/// Maps standardized outputs back to physical units through the model's scaler.
pub(crate) fn destandardize(scaler: Option<&StandardScaler>, value: f64) -> f64 {
    match scaler {
        Some(s) => s.inverse_target(value),
        None => value,
    }
}

pub(crate) fn check_scaler(scaler: Option<&StandardScaler>, x: &ArrayView2<f64>) -> Result<()> {
    if let Some(s) = scaler {
        if s.means.len() != x.ncols() {
            return Err(Error::Config(format!(
                "model scaler has {} features but inputs have {}",
                s.means.len(),
                x.ncols()
            )));
        }
    }
    Ok(())
}

/// Aggregates per-member output columns (one row per point) into prediction sets.
pub fn aggregate(member_outputs: &[Array2<f64>], scaler: Option<&StandardScaler>) -> Vec<PredictionSet> {
    let n = member_outputs.first().map_or(0, |o| o.nrows());
    (0..n)
        .map(|i| {
            let samples = member_outputs.iter().map(|o| destandardize(scaler, o[[i, 0]])).collect();
            PredictionSet::from_samples(samples)
        })
        .collect()
}

impl EnsembleModel {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Raw member outputs in standardized units.
    pub fn member_outputs(&self, x: ArrayView2<f64>) -> Result<Vec<Array2<f64>>> {
        self.members.iter().map(|m| m.forward(x)).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::evalsuite::export::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        crate::evalsuite::export::read_json(path)
    }
}

/// Per-point member spread in physical units; `x` must be standardized.
pub fn predict_ensemble(model: &EnsembleModel, x: ArrayView2<f64>) -> Result<Vec<PredictionSet>> {
    check_scaler(model.scaler.as_ref(), &x)?;
    Ok(aggregate(&model.member_outputs(x)?, model.scaler.as_ref()))
}
