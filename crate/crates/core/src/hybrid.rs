//! Residual-learning pipeline: base-model estimate + ML correction.
//!
//! The ML backend learns r = y − ŷ_base from the standardized features; at
//! test time its residual distribution is shifted by the base estimate of
//! each point. With [`BaseModelKind::NoBase`] the base estimate is 0 and the
//! pipeline is plain CHF regression.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::RwLock;

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bnn::{bnn_init, bnn_predict, bnn_train, BnnConfig, BnnModel, DEFAULT_PREDICT_SAMPLES};
use crate::correlations::{hbm_solve_with, BaseModelKind, ChfRecord, HbmOptions};
use crate::dataset::{feature_matrix, limit_train, to_csv_string, DatasetSplit, ScalerScope, StandardScaler, FEATURE_NAMES};
use crate::dgp::{dgp_init, dgp_predict, dgp_train, DgpConfig, DgpModel};
use crate::ensemble::{predict_ensemble, train_ensemble, EnsembleModel, DEFAULT_MEMBERS};
use crate::error::{Error, Result};
use crate::evalsuite::export::{self, svg};
use crate::evalsuite::{
    calibration_curve, metrics, parity_export, rstd_distribution, CalibrationCurve, MetricsReport, ParityTable,
    PredictionSet, RstdDistribution,
};
use crate::nn::{MlpConfig, TrainConfig};
use crate::seeds;

/// Largest fraction of records whose base estimate may fail before a run aborts.
pub const MAX_HBM_FAILURE_FRACTION: f64 = 0.01;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ensemble,
    Bnn,
    Dgp,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Ensemble, Method::Bnn, Method::Dgp];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Ensemble => "ensemble",
            Method::Bnn => "bnn",
            Method::Dgp => "dgp",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ensemble" | "de" => Ok(Method::Ensemble),
            "bnn" => Ok(Method::Bnn),
            "dgp" => Ok(Method::Dgp),
            other => Err(Error::Config(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Plentiful,
    Limited,
}

impl Scenario {
    pub const ALL: [Scenario; 2] = [Scenario::Plentiful, Scenario::Limited];

    pub fn as_str(&self) -> &'static str {
        match self {
            Scenario::Plentiful => "plentiful",
            Scenario::Limited => "limited",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "plentiful" => Ok(Scenario::Plentiful),
            "limited" => Ok(Scenario::Limited),
            other => Err(Error::Config(format!("unknown scenario `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSettings {
    pub n_members: usize,
    pub mlp: MlpConfig,
    pub train: TrainConfig,
    /// Train members on the rayon pool; results do not depend on it.
    pub parallel: bool,
}

impl Default for EnsembleSettings {
    fn default() -> Self {
        Self {
            n_members: DEFAULT_MEMBERS,
            mlp: MlpConfig::default(),
            train: TrainConfig::default(),
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BnnSettings {
    pub model: BnnConfig,
    pub train: TrainConfig,
    pub predict_samples: usize,
}

impl Default for BnnSettings {
    fn default() -> Self {
        Self {
            model: BnnConfig::default(),
            train: TrainConfig {
                epochs: 500,
                ..TrainConfig::default()
            },
            predict_samples: DEFAULT_PREDICT_SAMPLES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DgpSettings {
    pub model: DgpConfig,
    pub train: TrainConfig,
}

impl Default for DgpSettings {
    fn default() -> Self {
        Self {
            model: DgpConfig::default(),
            train: TrainConfig {
                epochs: 500,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    pub base: BaseModelKind,
    pub scenario: Scenario,
    /// Every other seed of the run is derived from this one.
    pub master_seed: u64,
    pub scaler_scope: ScalerScope,
    /// Training points kept in the limited scenario.
    pub limited_size: usize,
    pub error_band_pct: f64,
    pub calibration_grid: usize,
    pub rstd_bins: usize,
    pub hbm: HbmOptions,
    pub ensemble: EnsembleSettings,
    pub bnn: BnnSettings,
    pub dgp: DgpSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            method: Method::Ensemble,
            base: BaseModelKind::Biasi,
            scenario: Scenario::Plentiful,
            master_seed: 0,
            scaler_scope: ScalerScope::Full,
            limited_size: 9,
            error_band_pct: 10.0,
            calibration_grid: 100,
            rstd_bins: 30,
            hbm: HbmOptions::default(),
            ensemble: EnsembleSettings::default(),
            bnn: BnnSettings::default(),
            dgp: DgpSettings::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses the `[experiment]` table body of a run config; absent keys keep their defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn run_id(&self) -> String {
        run_id(self.method, self.base, self.scenario)
    }

    /// Seed for a labelled sub-task of this run.
    pub fn seed(&self, purpose: &str) -> u64 {
        seeds::derive(self.master_seed, &format!("{}/{purpose}", self.run_id()))
    }
}

pub fn run_id(method: Method, base: BaseModelKind, scenario: Scenario) -> String {
    format!("{method}-{base}-{scenario}")
}

// ---------------------------------------------------------------------------
// Base estimates and residuals
// ---------------------------------------------------------------------------

/// Base-model estimates keyed by a hash of the record, model and solver options.
#[derive(Debug, Default)]
pub struct HbmCache {
    map: RwLock<HashMap<u64, f64>>,
}

fn cache_key(base: BaseModelKind, record: &ChfRecord, options: &HbmOptions) -> u64 {
    let mut bytes = Vec::with_capacity(128);
    bytes.extend(base.as_str().as_bytes());
    for v in [
        record.diameter,
        record.heated_length,
        record.pressure,
        record.mass_flux,
        record.inlet_subcooling,
        options.q_min,
        options.q_max,
        options.rel_tol,
    ] {
        bytes.extend(v.to_le_bytes());
    }
    bytes.extend((options.probes as u64).to_le_bytes());
    bytes.extend((options.max_iter as u64).to_le_bytes());
    bytes.extend(format!("{:?}", options.bowring_mode).as_bytes());
    seeds::fnv1a(&bytes)
}

impl HbmCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.map.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Base estimate in kW/m²; 0 for `NoBase`.
    pub fn estimate(&self, base: BaseModelKind, record: &ChfRecord, options: &HbmOptions) -> Result<f64> {
        if base == BaseModelKind::NoBase {
            return Ok(0.0);
        }
        let key = cache_key(base, record, options);
        if let Some(v) = self.map.read().unwrap().get(&key) {
            return Ok(*v);
        }
        let v = hbm_solve_with(base, record, options)?.chf;
        self.map.write().unwrap().insert(key, v);
        Ok(v)
    }
}

/// One record seen through the hybrid pipeline, kW/m².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HybridSample {
    pub index: usize,
    pub base_estimate: f64,
    pub residual: f64,
    pub predicted_residual: Option<f64>,
    pub final_prediction: Option<f64>,
}

impl HybridSample {
    pub fn with_prediction(mut self, predicted_residual: f64) -> Self {
        self.predicted_residual = Some(predicted_residual);
        self.final_prediction = Some(self.base_estimate + predicted_residual);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualDataset {
    pub samples: Vec<HybridSample>,
    /// Records whose base estimate could not be computed.
    pub failed: Vec<usize>,
}

/// Base estimates and residuals y − ŷ for every record.
///
/// Up to 1% of records may fail the base solve; they are listed in
/// `failed` and left out of `samples`.
pub fn make_residual_dataset(
    records: &[ChfRecord],
    base: BaseModelKind,
    options: &HbmOptions,
    cache: &HbmCache,
) -> Result<ResidualDataset> {
    let mut samples = Vec::with_capacity(records.len());
    let mut failed = Vec::new();
    let mut first_error = None;
    for (i, r) in records.iter().enumerate() {
        match cache.estimate(base, r, options) {
            Ok(b) => samples.push(HybridSample {
                index: i,
                base_estimate: b,
                residual: r.chf - b,
                predicted_residual: None,
                final_prediction: None,
            }),
            Err(e) => {
                if first_error.is_none() {
                    first_error = Some(e.to_string());
                }
                failed.push(i);
            }
        }
    }
    if !failed.is_empty() {
        let frac = failed.len() as f64 / records.len() as f64;
        log::warn!(
            "{base} estimate failed for {} of {} records (first: {})",
            failed.len(),
            records.len(),
            first_error.as_deref().unwrap_or("")
        );
        if frac > MAX_HBM_FAILURE_FRACTION {
            return Err(Error::Precondition(format!(
                "{base} estimate failed for {} of {} records (> 1%): indices {:?}",
                failed.len(),
                records.len(),
                &failed[..failed.len().min(20)]
            )));
        }
    }
    Ok(ResidualDataset { samples, failed })
}

/// Drops `excluded` records and renumbers the split accordingly.
pub fn exclude_records(records: &[ChfRecord], split: &DatasetSplit, excluded: &[usize]) -> (Vec<ChfRecord>, DatasetSplit) {
    if excluded.is_empty() {
        return (records.to_vec(), split.clone());
    }
    let drop: HashSet<usize> = excluded.iter().copied().collect();
    let mut new_index = vec![usize::MAX; records.len()];
    let mut kept = Vec::with_capacity(records.len() - drop.len());
    for (i, r) in records.iter().enumerate() {
        if !drop.contains(&i) {
            new_index[i] = kept.len();
            kept.push(*r);
        }
    }
    let remap = |idx: &[usize]| -> Vec<usize> {
        idx.iter().filter(|i| !drop.contains(i)).map(|&i| new_index[i]).collect()
    };
    let split = DatasetSplit {
        train_idx: remap(&split.train_idx),
        val_idx: remap(&split.val_idx),
        test_idx: remap(&split.test_idx),
        ..split.clone()
    };
    (kept, split)
}

// ---------------------------------------------------------------------------
// Backends
// ---------------------------------------------------------------------------

/// Anything that maps standardized features to residual distributions in kW/m².
pub trait ResidualModel {
    fn predict_residuals(&self, x: ArrayView2<f64>) -> Result<Vec<PredictionSet>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum TrainedModel {
    Ensemble(EnsembleModel),
    Bnn { model: BnnModel, predict_samples: usize, predict_seed: u64 },
    Dgp { model: DgpModel, predict_seed: u64 },
}

impl ResidualModel for TrainedModel {
    fn predict_residuals(&self, x: ArrayView2<f64>) -> Result<Vec<PredictionSet>> {
        match self {
            TrainedModel::Ensemble(m) => predict_ensemble(m, x),
            TrainedModel::Bnn {
                model,
                predict_samples,
                predict_seed,
            } => bnn_predict(model, x, *predict_samples, *predict_seed),
            TrainedModel::Dgp { model, predict_seed } => {
                dgp_predict(model, x, model.config.predict_samples, *predict_seed)
            }
        }
    }
}

/// Predicts a fixed residual for every point without uncertainty.
pub struct ConstantResidual(pub f64);

impl ResidualModel for ConstantResidual {
    fn predict_residuals(&self, x: ArrayView2<f64>) -> Result<Vec<PredictionSet>> {
        Ok(vec![PredictionSet::point(self.0); x.nrows()])
    }
}

/// Replays a given list of residuals in order.
pub struct FixedResiduals(pub Vec<f64>);

impl ResidualModel for FixedResiduals {
    fn predict_residuals(&self, x: ArrayView2<f64>) -> Result<Vec<PredictionSet>> {
        if x.nrows() != self.0.len() {
            return Err(Error::Shape(format!("{} inputs vs {} residuals", x.nrows(), self.0.len())));
        }
        Ok(self.0.iter().map(|&r| PredictionSet::point(r)).collect())
    }
}

// ---------------------------------------------------------------------------
// Experiment
// ---------------------------------------------------------------------------

/// Everything a backend needs: aligned records, split, base estimates and
/// standardized inputs/targets.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub records: Vec<ChfRecord>,
    pub split: DatasetSplit,
    pub base_estimates: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Feature statistics plus residual-target statistics.
    pub scaler: StandardScaler,
    pub x: Array2<f64>,
    pub y: Vec<f64>,
    /// Indices (into the caller's records) dropped because the base solve failed.
    pub excluded: Vec<usize>,
}

impl ExperimentData {
    pub fn prepare(config: &ExperimentConfig, records: &[ChfRecord], split: &DatasetSplit, cache: &HbmCache) -> Result<Self> {
        if split.n_total() != records.len() {
            return Err(Error::Size(format!(
                "split covers {} records but the dataset has {}",
                split.n_total(),
                records.len()
            )));
        }
        let residual_set = make_residual_dataset(records, config.base, &config.hbm, cache).map_err(|e| e.in_stage("base"))?;
        let (records, split) = exclude_records(records, split, &residual_set.failed);
        let split = match config.scenario {
            Scenario::Plentiful => split,
            Scenario::Limited => limit_train(&split, config.limited_size)?,
        };
        let base_estimates: Vec<f64> = residual_set.samples.iter().map(|s| s.base_estimate).collect();
        let residuals: Vec<f64> = residual_set.samples.iter().map(|s| s.residual).collect();
        let features = feature_matrix(&records);
        let scaler = StandardScaler::fit(&features, &residuals, &FEATURE_NAMES, config.scaler_scope, Some(&split))
            .map_err(|e| e.in_stage("scaling"))?;
        let x = scaler.transform(&features)?;
        let y = residuals.iter().map(|&r| scaler.transform_target(r)).collect();
        Ok(Self {
            records,
            split,
            base_estimates,
            residuals,
            scaler,
            x,
            y,
            excluded: residual_set.failed,
        })
    }

    fn rows(&self, idx: &[usize]) -> (Array2<f64>, Vec<f64>) {
        (self.x.select(Axis(0), idx), idx.iter().map(|&i| self.y[i]).collect())
    }
}

fn column(v: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((v.len(), 1), v.to_vec()).expect("column shape")
}

/// Trains the configured backend on the training partition.
pub fn train_backend(config: &ExperimentConfig, data: &ExperimentData) -> Result<TrainedModel> {
    let (xt, yt) = data.rows(&data.split.train_idx);
    let (xv, yv) = data.rows(&data.split.val_idx);
    let model = match config.method {
        Method::Ensemble => {
            let s = &config.ensemble;
            let (ytc, yvc) = (column(&yt), column(&yv));
            let val = (!yv.is_empty()).then(|| (xv.view(), yvc.view()));
            let mut m = train_ensemble(
                &s.mlp,
                &s.train,
                xt.view(),
                ytc.view(),
                val,
                config.seed("members"),
                s.n_members,
                s.parallel,
            )?;
            m.scaler = Some(data.scaler.clone());
            m.base = config.base;
            TrainedModel::Ensemble(m)
        }
        Method::Bnn => {
            let s = &config.bnn;
            let mut m = bnn_init(&BnnConfig {
                seed: config.seed("init"),
                ..s.model.clone()
            })?;
            let tc = TrainConfig {
                seed: config.seed("train"),
                ..s.train.clone()
            };
            let val = (!yv.is_empty()).then(|| (xv.view(), yv.as_slice()));
            bnn_train(&mut m, xt.view(), &yt, val, &tc)?;
            m.scaler = Some(data.scaler.clone());
            m.base = config.base;
            TrainedModel::Bnn {
                model: m,
                predict_samples: s.predict_samples,
                predict_seed: config.seed("predict"),
            }
        }
        Method::Dgp => {
            let s = &config.dgp;
            let mut m = dgp_init(
                &DgpConfig {
                    seed: config.seed("init"),
                    ..s.model.clone()
                },
                xt.view(),
            )?;
            let tc = TrainConfig {
                seed: config.seed("train"),
                ..s.train.clone()
            };
            dgp_train(&mut m, xt.view(), &yt, &tc)?;
            m.scaler = Some(data.scaler.clone());
            m.base = config.base;
            TrainedModel::Dgp {
                model: m,
                predict_seed: config.seed("predict"),
            }
        }
    };
    Ok(model)
}

/// Test-set results of one run, kW/m².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub test_idx: Vec<usize>,
    pub y_true: Vec<f64>,
    pub pressures: Vec<f64>,
    pub base_estimates: Vec<f64>,
    pub residual_predictions: Vec<PredictionSet>,
    pub predictions: Vec<PredictionSet>,
    pub metrics: MetricsReport,
    /// Absent when some predicted std is zero.
    pub calibration: Option<CalibrationCurve>,
    pub rstd: RstdDistribution,
    pub parity: ParityTable,
}

/// Scores `model` on the test partition of `data`.
pub fn evaluate(config: &ExperimentConfig, data: &ExperimentData, model: &dyn ResidualModel) -> Result<Evaluation> {
    let test_idx = data.split.test_idx.clone();
    let x = data.x.select(Axis(0), &test_idx);
    let residual_predictions = model.predict_residuals(x.view())?;
    if residual_predictions.len() != test_idx.len() {
        return Err(Error::Shape("backend returned the wrong number of predictions".into()));
    }
    let base_estimates: Vec<f64> = test_idx.iter().map(|&i| data.base_estimates[i]).collect();
    let predictions: Vec<PredictionSet> = residual_predictions
        .iter()
        .zip(&base_estimates)
        .map(|(p, &b)| p.shifted(b))
        .collect();
    let y_true: Vec<f64> = test_idx.iter().map(|&i| data.records[i].chf).collect();
    let pressures: Vec<f64> = test_idx.iter().map(|&i| data.records[i].pressure).collect();
    let report = metrics(&y_true, &predictions)?;
    let calibration = match calibration_curve(&y_true, &predictions, config.calibration_grid) {
        Ok(c) => Some(c),
        Err(Error::DegenerateUncertainty(_)) => None,
        Err(e) => return Err(e),
    };
    let rstd = rstd_distribution(&predictions, config.rstd_bins, false);
    let parity = parity_export(&y_true, &predictions, config.error_band_pct).with_points(&test_idx, &pressures);
    Ok(Evaluation {
        test_idx,
        y_true,
        pressures,
        base_estimates,
        residual_predictions,
        predictions,
        metrics: report,
        calibration,
        rstd,
        parity,
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn dataset_hash(records: &[ChfRecord]) -> String {
    sha256_hex(to_csv_string(records).as_bytes())
}

/// Reproducibility record of one run. Contains no timestamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub method: Method,
    pub base: BaseModelKind,
    pub scenario: Scenario,
    pub master_seed: u64,
    pub seeds: BTreeMap<String, u64>,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub n_members: Option<usize>,
    pub posterior_samples: Option<usize>,
    pub scaler_scope: ScalerScope,
    pub residual_targets: String,
    pub std_convention: String,
    pub rstd_convention: String,
    pub bnn_samples_include_likelihood_noise: Option<bool>,
    pub dataset_hash: String,
    pub split_hash: String,
    pub input_hash: String,
    pub excluded_records: Vec<usize>,
    pub metrics: MetricsReport,
    pub miscalibration_area: Option<f64>,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub manifest: RunManifest,
    pub evaluation: Evaluation,
    pub model: TrainedModel,
    pub scaler: StandardScaler,
}

fn manifest_for(
    config: &ExperimentConfig,
    records: &[ChfRecord],
    split: &DatasetSplit,
    data: &ExperimentData,
    eval: &Evaluation,
) -> Result<RunManifest> {
    let dataset_hash = dataset_hash(records);
    let split_json = serde_json::to_string(split)?;
    let config_json = serde_json::to_string(config)?;
    let split_hash = sha256_hex(split_json.as_bytes());
    let input_hash = sha256_hex(format!("{dataset_hash}\n{split_json}\n{config_json}").as_bytes());
    let mut seeds = BTreeMap::new();
    match config.method {
        Method::Ensemble => {
            seeds.insert("members_base".to_string(), config.seed("members"));
        }
        Method::Bnn | Method::Dgp => {
            for k in ["init", "train", "predict"] {
                seeds.insert(k.to_string(), config.seed(k));
            }
        }
    }
    Ok(RunManifest {
        run_id: config.run_id(),
        method: config.method,
        base: config.base,
        scenario: config.scenario,
        master_seed: config.master_seed,
        seeds,
        n_train: data.split.train_idx.len(),
        n_val: data.split.val_idx.len(),
        n_test: data.split.test_idx.len(),
        n_members: (config.method == Method::Ensemble).then_some(config.ensemble.n_members),
        posterior_samples: match config.method {
            Method::Ensemble => None,
            Method::Bnn => Some(config.bnn.predict_samples),
            Method::Dgp => Some(config.dgp.model.predict_samples),
        },
        scaler_scope: config.scaler_scope,
        residual_targets: "residuals standardized with their own mean/std".into(),
        std_convention: "population (divisor n)".into(),
        rstd_convention: "100*std/|mean|".into(),
        bnn_samples_include_likelihood_noise: (config.method == Method::Bnn).then_some(true),
        dataset_hash,
        split_hash,
        input_hash,
        excluded_records: data.excluded.clone(),
        metrics: eval.metrics,
        miscalibration_area: eval.calibration.as_ref().map(|c| c.miscalibration_area),
        config: config.clone(),
    })
}

/// Prepares data, trains the backend and evaluates it on the test partition.
pub fn run_experiment(
    config: &ExperimentConfig,
    records: &[ChfRecord],
    split: &DatasetSplit,
    cache: &HbmCache,
) -> Result<ExperimentOutput> {
    let data = ExperimentData::prepare(config, records, split, cache)?;
    let model = train_backend(config, &data).map_err(|e| e.in_stage("train"))?;
    let evaluation = evaluate(config, &data, &model).map_err(|e| e.in_stage("evaluate"))?;
    let manifest = manifest_for(config, records, split, &data, &evaluation)?;
    Ok(ExperimentOutput {
        manifest,
        evaluation,
        model,
        scaler: data.scaler,
    })
}

/// Runs `model` instead of a trained backend (used for stubs and replays).
pub fn run_with_model(
    config: &ExperimentConfig,
    records: &[ChfRecord],
    split: &DatasetSplit,
    cache: &HbmCache,
    model: &dyn ResidualModel,
) -> Result<(Evaluation, ExperimentData)> {
    let data = ExperimentData::prepare(config, records, split, cache)?;
    let evaluation = evaluate(config, &data, model)?;
    Ok((evaluation, data))
}

// ---------------------------------------------------------------------------
// Suite
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteEntry {
    pub run_id: String,
    pub method: Method,
    pub base: BaseModelKind,
    pub scenario: Scenario,
    pub error: Option<String>,
    pub metrics: Option<MetricsReport>,
    pub miscalibration_area: Option<f64>,
    pub input_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteManifest {
    pub master_seed: u64,
    pub dataset_hash: String,
    pub split_hash: String,
    pub test_idx_hash: String,
    pub excluded_records: Vec<usize>,
    pub runs: Vec<SuiteEntry>,
}

pub struct SuiteOutput {
    pub manifest: SuiteManifest,
    pub runs: Vec<(String, Result<ExperimentOutput>)>,
}

/// The 3 methods × 3 bases × 2 scenarios, in table order.
pub fn suite_configs(template: &ExperimentConfig) -> Vec<ExperimentConfig> {
    let mut out = Vec::with_capacity(18);
    for method in Method::ALL {
        for scenario in Scenario::ALL {
            for base in BaseModelKind::ALL {
                out.push(ExperimentConfig {
                    method,
                    base,
                    scenario,
                    ..template.clone()
                });
            }
        }
    }
    out
}

/// Runs every configuration on one shared split. Records whose base estimate
/// fails for any correlation are removed for all runs so the test set is
/// identical. Failures of individual runs are recorded, not propagated.
pub fn run_suite(
    template: &ExperimentConfig,
    records: &[ChfRecord],
    split: &DatasetSplit,
    cache: &HbmCache,
    workers: usize,
) -> Result<SuiteOutput> {
    run_configs(&suite_configs(template), records, split, cache, workers)
}

pub fn run_configs(
    configs: &[ExperimentConfig],
    records: &[ChfRecord],
    split: &DatasetSplit,
    cache: &HbmCache,
    workers: usize,
) -> Result<SuiteOutput> {
    let master_seed = configs.first().map_or(0, |c| c.master_seed);
    let mut excluded = HashSet::new();
    let mut bases: Vec<(BaseModelKind, HbmOptions)> = Vec::new();
    for c in configs {
        if !bases.iter().any(|(b, o)| *b == c.base && *o == c.hbm) {
            bases.push((c.base, c.hbm));
        }
    }
    for (base, options) in &bases {
        let set = make_residual_dataset(records, *base, options, cache).map_err(|e| e.in_stage("base"))?;
        excluded.extend(set.failed);
    }
    let mut excluded: Vec<usize> = excluded.into_iter().collect();
    excluded.sort_unstable();
    let (records, split) = exclude_records(records, split, &excluded);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let runs: Vec<(String, Result<ExperimentOutput>)> = pool.install(|| {
        configs
            .par_iter()
            .map(|c| {
                let id = c.run_id();
                log::info!("starting run {id}");
                let r = run_experiment(c, &records, &split, cache);
                if let Err(e) = &r {
                    log::error!("run {id} failed: {e}");
                }
                (id, r)
            })
            .collect()
    });

    let entries = configs
        .iter()
        .zip(&runs)
        .map(|(c, (id, r))| SuiteEntry {
            run_id: id.clone(),
            method: c.method,
            base: c.base,
            scenario: c.scenario,
            error: r.as_ref().err().map(|e| e.to_string()),
            metrics: r.as_ref().ok().map(|o| o.manifest.metrics),
            miscalibration_area: r.as_ref().ok().and_then(|o| o.manifest.miscalibration_area),
            input_hash: r.as_ref().ok().map(|o| o.manifest.input_hash.clone()),
        })
        .collect();
    let manifest = SuiteManifest {
        master_seed,
        dataset_hash: dataset_hash(&records),
        split_hash: sha256_hex(serde_json::to_string(&split)?.as_bytes()),
        test_idx_hash: sha256_hex(serde_json::to_string(&split.test_idx)?.as_bytes()),
        excluded_records: excluded,
        runs: entries,
    };
    Ok(SuiteOutput { manifest, runs })
}

// ---------------------------------------------------------------------------
// Reporting
// ---------------------------------------------------------------------------

pub const COMPARISON_HEADER: &str =
    "method,base,scenario,mu_error_pct,max_error_pct,mean_rstd_pct,max_rstd_pct,rrmse_pct,f_gt10_pct,r2";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub base: String,
    pub scenario: String,
    pub metrics: MetricsReport,
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut out = format!("{COMPARISON_HEADER}\n");
    for r in rows {
        let m = &r.metrics;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.method,
            r.base,
            r.scenario,
            m.mu_error,
            m.max_error,
            opt(m.mean_rstd),
            opt(m.max_rstd),
            m.rrmse,
            m.f_gt10,
            m.r2
        ));
    }
    out
}

/// Writes every artifact of a run into `dir`.
pub fn write_run(output: &ExperimentOutput, dir: &Path, with_svg: bool) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ev = &output.evaluation;
    export::write_json(&dir.join("manifest.json"), &output.manifest)?;
    export::write_json(&dir.join("metrics.json"), &ev.metrics)?;
    export::write_json(&dir.join("scaler.json"), &output.scaler)?;
    export::write_json(&dir.join("model.json"), &output.model)?;
    export::write_predictions_csv(&dir.join("predictions.csv"), &ev.test_idx, &ev.y_true, &ev.predictions)?;
    if let Some(c) = &ev.calibration {
        export::write_calibration_csv(&dir.join("calibration.csv"), c)?;
    }
    export::write_rstd_csvs(&dir.join("rstd_hist.csv"), &dir.join("rstd_kde.csv"), &ev.rstd)?;
    export::write_parity_csv(&dir.join("parity.csv"), &ev.parity)?;
    export::write_parity_lines_csv(&dir.join("parity_lines.csv"), &ev.parity)?;
    match &output.model {
        TrainedModel::Ensemble(m) => {
            for (i, h) in m.histories.iter().enumerate() {
                h.write_csv(&dir.join(format!("loss_member_{i:02}.csv")))?;
            }
        }
        TrainedModel::Bnn { model, .. } => model.write_history_csv(&dir.join("loss_history.csv"))?,
        TrainedModel::Dgp { model, .. } => {
            let path = dir.join("loss_history.csv");
            fs::write(&path, model.history_csv()).map_err(|e| Error::io(&path, e))?;
        }
    }
    if with_svg {
        write_svgs(ev, dir)?;
    }
    Ok(())
}

fn write_svgs(ev: &Evaluation, dir: &Path) -> Result<()> {
    let (yt, ym): (Vec<f64>, Vec<f64>) = ev.parity.rows.iter().map(|r| (r.y_true, r.mean)).unzip();
    let (lx, ly): (Vec<f64>, Vec<f64>) = ev.parity.lines.iter().map(|l| (l.x, l.identity)).unzip();
    let mut plots = vec![
        (
            "parity.svg",
            svg::plot(
                "Parity",
                &[
                    svg::Series { x: &yt, y: &ym, color: "steelblue", scatter: true },
                    svg::Series { x: &lx, y: &ly, color: "black", scatter: false },
                ],
            ),
        ),
        (
            "rstd_kde.svg",
            svg::plot(
                "rStd KDE",
                &[svg::Series { x: &ev.rstd.kde_x, y: &ev.rstd.kde_density, color: "darkred", scatter: false }],
            ),
        ),
    ];
    if let Some(c) = &ev.calibration {
        let unit = [0.0, 1.0];
        plots.push((
            "calibration.svg",
            svg::plot(
                "Calibration",
                &[
                    svg::Series { x: &c.expected_p, y: &c.observed_p, color: "steelblue", scatter: false },
                    svg::Series { x: &unit, y: &unit, color: "black", scatter: false },
                ],
            ),
        ));
    }
    for (name, body) in plots {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlations::baseline_metrics;
    use crate::dataset::{shuffle_split, synth_generate};

    fn small_data() -> (Vec<ChfRecord>, DatasetSplit) {
        let records = synth_generate(120, 21, BaseModelKind::Biasi, 0.05).unwrap();
        let split = shuffle_split(&records, (0.8, 0.1, 0.1), 4).unwrap();
        (records, split)
    }

    #[test]
    fn residual_definition() {
        let (records, _) = small_data();
        let cache = HbmCache::new();
        let set = make_residual_dataset(&records, BaseModelKind::Bowring, &HbmOptions::default(), &cache).unwrap();
        for s in &set.samples {
            assert_eq!(s.residual, records[s.index].chf - s.base_estimate);
            let p = s.with_prediction(12.5);
            assert_eq!(p.final_prediction.unwrap() - p.base_estimate, 12.5);
        }
        let none = make_residual_dataset(&records, BaseModelKind::NoBase, &HbmOptions::default(), &cache).unwrap();
        assert!(none.samples.iter().all(|s| s.base_estimate == 0.0 && s.residual == records[s.index].chf));
        assert_eq!(cache.len(), records.len());
    }

    #[test]
    fn noiseless_residuals_vanish() {
        let records = synth_generate(50, 3, BaseModelKind::Biasi, 0.0).unwrap();
        let set = make_residual_dataset(&records, BaseModelKind::Biasi, &HbmOptions::default(), &HbmCache::new()).unwrap();
        assert!(set.samples.iter().all(|s| s.residual.abs() < 1e-9 * records[s.index].chf));
    }

    #[test]
    fn zero_stub_reproduces_correlation() {
        let (records, split) = small_data();
        for base in [BaseModelKind::Biasi, BaseModelKind::Bowring] {
            let config = ExperimentConfig { base, ..ExperimentConfig::default() };
            let (ev, data) = run_with_model(&config, &records, &split, &HbmCache::new(), &ConstantResidual(0.0)).unwrap();
            let test: Vec<ChfRecord> = data.split.test_idx.iter().map(|&i| data.records[i]).collect();
            assert_eq!(ev.metrics, baseline_metrics(base, &test).unwrap());
        }
    }

    #[test]
    fn oracle_stub_is_exact() {
        let (records, split) = small_data();
        let config = ExperimentConfig::default();
        let data = ExperimentData::prepare(&config, &records, &split, &HbmCache::new()).unwrap();
        let truth: Vec<f64> = data.split.test_idx.iter().map(|&i| data.residuals[i]).collect();
        let ev = evaluate(&config, &data, &FixedResiduals(truth)).unwrap();
        assert!(ev.metrics.mu_error < 1e-12);
        assert!((ev.metrics.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn suite_has_eighteen_configs() {
        let configs = suite_configs(&ExperimentConfig::default());
        assert_eq!(configs.len(), 18);
        let ids: HashSet<String> = configs.iter().map(|c| c.run_id()).collect();
        assert_eq!(ids.len(), 18);
    }

    #[test]
    fn exclusion_remaps_split() {
        let (records, split) = small_data();
        let victim = split.test_idx[0];
        let (kept, s2) = exclude_records(&records, &split, &[victim]);
        assert_eq!(kept.len(), records.len() - 1);
        assert_eq!(s2.n_total(), kept.len());
        assert_eq!(s2.test_idx.len(), split.test_idx.len() - 1);
    }

    #[test]
    fn comparison_columns() {
        let row = ComparisonRow {
            method: "ensemble".into(),
            base: "biasi".into(),
            scenario: "limited".into(),
            metrics: MetricsReport {
                mu_error: 1.0,
                max_error: 2.0,
                mean_rstd: Some(3.0),
                max_rstd: Some(4.0),
                rrmse: 5.0,
                f_gt10: 6.0,
                r2: 0.5,
            },
        };
        assert_eq!(comparison_csv(&[row]), format!("{COMPARISON_HEADER}\nensemble,biasi,limited,1,2,3,4,5,6,0.5\n"));
    }
}
