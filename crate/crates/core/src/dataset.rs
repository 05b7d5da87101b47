//! Record ingestion, dryout filtering, splitting, standardisation and
//! synthetic data generation.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::correlations::{hbm_solve_with, quality_from_heat_balance, validity, BaseModelKind, ChfRecord, HbmOptions};
use crate::error::{Error, Result};
use crate::stats::{mean, population_std};

/// Input CSV header.
pub const CSV_HEADER: &str = "d_m,l_m,p_mpa,g_kg_m2_s,dh_sub_kj_kg,t_in_c,x_e_out,chf_kw_m2";
const COLUMNS: [&str; 8] = [
    "d_m",
    "l_m",
    "p_mpa",
    "g_kg_m2_s",
    "dh_sub_kj_kg",
    "t_in_c",
    "x_e_out",
    "chf_kw_m2",
];

/// Model input features, in column order.
pub const FEATURE_NAMES: [&str; 5] = ["d_m", "l_m", "p_mpa", "g_kg_m2_s", "dh_sub_kj_kg"];

/// Subcooling range used by the synthetic generator, kJ/kg.
pub const SYNTH_SUBCOOLING_RANGE: (f64, f64) = (10.0, 800.0);

/// BWR operating pressure window, MPa.
pub const BWR_PRESSURE_RANGE: (f64, f64) = (6.9, 7.2);

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

pub fn load_csv(path: &Path) -> Result<Vec<ChfRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text)
}

pub fn parse_csv(text: &str) -> Result<Vec<ChfRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != COLUMNS {
        return Err(Error::Schema(format!(
            "header `{}` does not match `{CSV_HEADER}`",
            header.join(",")
        )));
    }

    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        // 1-based data row numbers; the header is row 0
        let row_no = i + 1;
        let row = row.map_err(|e| Error::Parse {
            row: row_no,
            column: String::new(),
            message: e.to_string(),
        })?;
        if row.len() != COLUMNS.len() {
            return Err(Error::Parse {
                row: row_no,
                column: String::new(),
                message: format!("expected {} cells, found {}", COLUMNS.len(), row.len()),
            });
        }
        let cell = |j: usize| -> Result<Option<f64>> {
            let raw = &row[j];
            if raw.is_empty() {
                return Ok(None);
            }
            let v: f64 = raw.parse().map_err(|_| Error::Parse {
                row: row_no,
                column: COLUMNS[j].to_string(),
                message: format!("`{raw}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row: row_no,
                    column: COLUMNS[j].to_string(),
                    message: format!("non-finite value `{raw}`"),
                });
            }
            Ok(Some(v))
        };
        let required = |j: usize| -> Result<f64> {
            cell(j)?.ok_or_else(|| Error::Parse {
                row: row_no,
                column: COLUMNS[j].to_string(),
                message: "missing value".into(),
            })
        };
        let positive = |j: usize| -> Result<f64> {
            let v = required(j)?;
            if v > 0.0 {
                Ok(v)
            } else {
                Err(Error::Parse {
                    row: row_no,
                    column: COLUMNS[j].to_string(),
                    message: format!("must be positive, got {v}"),
                })
            }
        };
        records.push(ChfRecord {
            diameter: positive(0)?,
            heated_length: positive(1)?,
            pressure: positive(2)?,
            mass_flux: positive(3)?,
            inlet_subcooling: required(4)?,
            inlet_temperature: cell(5)?,
            outlet_quality: required(6)?,
            chf: positive(7)?,
        });
    }
    if records.is_empty() {
        log::warn!("dataset has a header but no data rows");
    }
    Ok(records)
}

pub fn to_csv_string(records: &[ChfRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        let t_in = r.inlet_temperature.map(|t| t.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.diameter,
            r.heated_length,
            r.pressure,
            r.mass_flux,
            r.inlet_subcooling,
            t_in,
            r.outlet_quality,
            r.chf
        ));
    }
    out
}

pub fn write_csv(path: &Path, records: &[ChfRecord]) -> Result<()> {
    fs::write(path, to_csv_string(records)).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Filtering
// ---------------------------------------------------------------------------

/// Closed validity ranges a dryout record must satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterCriteria {
    pub d_range: (f64, f64),
    pub l_range: (f64, f64),
    pub p_range: (f64, f64),
    pub g_range: (f64, f64),
    pub min_outlet_quality: f64,
}

impl Default for FilterCriteria {
    fn default() -> Self {
        Self {
            d_range: validity::DIAMETER_M,
            l_range: validity::HEATED_LENGTH_M,
            p_range: validity::PRESSURE_MPA,
            g_range: validity::MASS_FLUX,
            min_outlet_quality: validity::MIN_OUTLET_QUALITY,
        }
    }
}

impl FilterCriteria {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("D", self.d_range),
            ("L", self.l_range),
            ("P", self.p_range),
            ("G", self.g_range),
        ] {
            if !(lo < hi) {
                return Err(Error::Config(format!("{name} range [{lo}, {hi}] is empty")));
            }
        }
        Ok(())
    }

    /// Human-readable criteria lines.
    pub fn describe(&self) -> Vec<String> {
        vec![
            format!("D (m): {} - {}", self.d_range.0, self.d_range.1),
            format!("L (m): {} - {}", self.l_range.0, self.l_range.1),
            format!("P (MPa): {} - {}", self.p_range.0, self.p_range.1),
            format!("G (kg/m2/s): {} - {}", self.g_range.0, self.g_range.1),
            format!("Outlet x_e: >= {}", self.min_outlet_quality),
        ]
    }
}

/// Records rejected by each criterion (a record may count under several).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterCounts {
    pub diameter: usize,
    pub heated_length: usize,
    pub pressure: usize,
    pub mass_flux: usize,
    pub outlet_quality: usize,
    pub total_removed: usize,
}

fn inside(v: f64, (lo, hi): (f64, f64)) -> bool {
    v >= lo && v <= hi
}

/// Keeps the records inside every range, preserving order.
pub fn filter_do(records: &[ChfRecord], criteria: &FilterCriteria) -> Vec<ChfRecord> {
    filter_do_counted(records, criteria).0
}

pub fn filter_do_counted(records: &[ChfRecord], criteria: &FilterCriteria) -> (Vec<ChfRecord>, FilterCounts) {
    let mut counts = FilterCounts::default();
    let mut kept = Vec::with_capacity(records.len());
    for r in records {
        let checks = [
            inside(r.diameter, criteria.d_range),
            inside(r.heated_length, criteria.l_range),
            inside(r.pressure, criteria.p_range),
            inside(r.mass_flux, criteria.g_range),
            r.outlet_quality >= criteria.min_outlet_quality,
        ];
        counts.diameter += usize::from(!checks[0]);
        counts.heated_length += usize::from(!checks[1]);
        counts.pressure += usize::from(!checks[2]);
        counts.mass_flux += usize::from(!checks[3]);
        counts.outlet_quality += usize::from(!checks[4]);
        if checks.iter().all(|c| *c) {
            kept.push(*r);
        } else {
            counts.total_removed += 1;
        }
    }
    (kept, counts)
}

/// Records in the BWR pressure window, 6.9-7.2 MPa inclusive.
pub fn bwr_filter(records: &[ChfRecord]) -> Vec<ChfRecord> {
    records
        .iter()
        .filter(|r| inside(r.pressure, BWR_PRESSURE_RANGE))
        .copied()
        .collect()
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

/// Disjoint train/validation/test index lists into a frozen record array.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub seed: u64,
    /// Fractions in parts per million, so the manifest round-trips exactly.
    pub fractions_ppm: (u32, u32, u32),
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

impl DatasetSplit {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train_idx.len(), self.val_idx.len(), self.test_idx.len())
    }

    pub fn n_total(&self) -> usize {
        self.train_idx.len() + self.val_idx.len() + self.test_idx.len()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::evalsuite::export::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        crate::evalsuite::export::read_json(path)
    }
}

pub fn shuffle_split(records: &[ChfRecord], fractions: (f64, f64, f64), seed: u64) -> Result<DatasetSplit> {
    shuffle_split_n(records.len(), fractions, seed)
}

/// Seeded shuffle of 0..n sliced contiguously into train/val/test.
///
/// Train and validation sizes are `round(fraction·n)`; test takes the rest.
pub fn shuffle_split_n(n: usize, fractions: (f64, f64, f64), seed: u64) -> Result<DatasetSplit> {
    let (ft, fv, fs) = fractions;
    if [ft, fv, fs].iter().any(|f| !(0.0..=1.0).contains(f)) || ((ft + fv + fs) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split fractions {fractions:?} must be in [0,1] and sum to 1")));
    }
    if n < 10 {
        return Err(Error::Size(format!("need at least 10 records to split, got {n}")));
    }
    let n_train = (ft * n as f64).round() as usize;
    let n_val = (fv * n as f64).round() as usize;
    if n_train == 0 || n_train + n_val > n {
        return Err(Error::Size(format!("fractions {fractions:?} give an unusable split of {n}")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let ppm = |f: f64| (f * 1e6).round() as u32;
    Ok(DatasetSplit {
        seed,
        fractions_ppm: (ppm(ft), ppm(fv), ppm(fs)),
        train_idx: perm[..n_train].to_vec(),
        val_idx: perm[n_train..n_train + n_val].to_vec(),
        test_idx: perm[n_train + n_val..].to_vec(),
    })
}

/// Truncates the training partition to its first `n` entries.
pub fn limit_train(split: &DatasetSplit, n: usize) -> Result<DatasetSplit> {
    if n == 0 {
        return Err(Error::Size("training set cannot be empty".into()));
    }
    if n > split.train_idx.len() {
        return Err(Error::Size(format!(
            "cannot keep {n} training points out of {}",
            split.train_idx.len()
        )));
    }
    Ok(DatasetSplit {
        train_idx: split.train_idx[..n].to_vec(),
        ..split.clone()
    })
}

// ---------------------------------------------------------------------------
// Standardisation
// ---------------------------------------------------------------------------

/// Rows the scaler statistics are computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalerScope {
    /// Every record (standardise before partitioning).
    #[default]
    Full,
    /// Training partition only.
    TrainOnly,
}

impl std::str::FromStr for ScalerScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(ScalerScope::Full),
            "train_only" | "train-only" | "train" => Ok(ScalerScope::TrainOnly),
            other => Err(Error::Config(format!("unknown scaler scope `{other}`"))),
        }
    }
}

/// Per-feature and target z-score statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardScaler {
    pub feature_names: Vec<String>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub target_mean: f64,
    pub target_std: f64,
    pub scope: ScalerScope,
}

/// The five model inputs D, L, P, G, Δh_sub of each record.
pub fn feature_matrix(records: &[ChfRecord]) -> Array2<f64> {
    let mut x = Array2::zeros((records.len(), FEATURE_NAMES.len()));
    for (mut row, r) in x.axis_iter_mut(Axis(0)).zip(records) {
        row.assign(&Array1::from(vec![
            r.diameter,
            r.heated_length,
            r.pressure,
            r.mass_flux,
            r.inlet_subcooling,
        ]));
    }
    x
}

impl StandardScaler {
    /// Fits on the rows selected by `scope` (`split` required for train-only).
    pub fn fit(
        features: &Array2<f64>,
        target: &[f64],
        feature_names: &[&str],
        scope: ScalerScope,
        split: Option<&DatasetSplit>,
    ) -> Result<Self> {
        if features.nrows() != target.len() {
            return Err(Error::Shape(format!(
                "{} feature rows vs {} targets",
                features.nrows(),
                target.len()
            )));
        }
        if features.ncols() != feature_names.len() {
            return Err(Error::Shape(format!(
                "{} feature columns vs {} names",
                features.ncols(),
                feature_names.len()
            )));
        }
        let rows: Vec<usize> = match scope {
            ScalerScope::Full => (0..target.len()).collect(),
            ScalerScope::TrainOnly => split
                .ok_or_else(|| Error::Precondition("train-only scaler needs a split".into()))?
                .train_idx
                .clone(),
        };
        if rows.is_empty() {
            return Err(Error::Size("cannot fit a scaler on zero rows".into()));
        }
        let moments = |values: Vec<f64>, name: &str| -> Result<(f64, f64)> {
            let m = mean(&values);
            let s = population_std(&values, m);
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::DegenerateFeature(name.to_string()));
            }
            Ok((m, s))
        };
        let mut means = Vec::new();
        let mut stds = Vec::new();
        for (j, name) in feature_names.iter().enumerate() {
            let (m, s) = moments(rows.iter().map(|&i| features[[i, j]]).collect(), name)?;
            means.push(m);
            stds.push(s);
        }
        let (target_mean, target_std) = moments(rows.iter().map(|&i| target[i]).collect(), "target")?;
        Ok(Self {
            feature_names: feature_names.iter().map(|s| s.to_string()).collect(),
            means,
            stds,
            target_mean,
            target_std,
            scope,
        })
    }

    fn check_width(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.means.len() {
            return Err(Error::Shape(format!(
                "scaler has {} features, input has {}",
                self.means.len(),
                x.ncols()
            )));
        }
        Ok(())
    }

    pub fn transform(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_width(x)?;
        let mut out = x.clone();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            col.mapv_inplace(|v| (v - self.means[j]) / self.stds[j]);
        }
        Ok(out)
    }

    pub fn inverse_transform(&self, z: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_width(z)?;
        let mut out = z.clone();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            col.mapv_inplace(|v| v * self.stds[j] + self.means[j]);
        }
        Ok(out)
    }

    pub fn transform_target(&self, y: f64) -> f64 {
        (y - self.target_mean) / self.target_std
    }

    pub fn inverse_target(&self, t: f64) -> f64 {
        t * self.target_std + self.target_mean
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::evalsuite::export::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        crate::evalsuite::export::read_json(path)
    }
}

/// Fits a scaler on the five model features with CHF as the target.
pub fn fit_scaler(records: &[ChfRecord], scope: ScalerScope, split: Option<&DatasetSplit>) -> Result<StandardScaler> {
    let y: Vec<f64> = records.iter().map(|r| r.chf).collect();
    StandardScaler::fit(&feature_matrix(records), &y, &FEATURE_NAMES, scope, split)
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

/// Draws `n` in-range dryout records whose CHF is the `base` correlation
/// times (1 + ε), ε ~ N(0, noise_rel).
pub fn synth_generate(n: usize, seed: u64, base: BaseModelKind, noise_rel: f64) -> Result<Vec<ChfRecord>> {
    if base == BaseModelKind::NoBase {
        return Err(Error::Precondition("synthetic data needs a base correlation".into()));
    }
    if !(noise_rel >= 0.0) {
        return Err(Error::Precondition(format!("noise_rel must be >= 0, got {noise_rel}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_rel).map_err(|e| Error::Precondition(e.to_string()))?;
    let options = HbmOptions::default();
    let max_draws = 100 * n.max(1);
    let mut out = Vec::with_capacity(n);
    let mut draws = 0;
    while out.len() < n {
        if draws == max_draws {
            return Err(Error::Generation(format!(
                "accepted only {} of {draws} draws (< 1%); check the sampling ranges",
                out.len()
            )));
        }
        draws += 1;
        let mut r = ChfRecord {
            diameter: rng.random_range(validity::DIAMETER_M.0..=validity::DIAMETER_M.1),
            heated_length: rng.random_range(validity::HEATED_LENGTH_M.0..=validity::HEATED_LENGTH_M.1),
            pressure: rng.random_range(validity::PRESSURE_MPA.0..=validity::PRESSURE_MPA.1),
            mass_flux: rng.random_range(validity::MASS_FLUX.0..=validity::MASS_FLUX.1),
            inlet_subcooling: rng.random_range(SYNTH_SUBCOOLING_RANGE.0..=SYNTH_SUBCOOLING_RANGE.1),
            inlet_temperature: None,
            outlet_quality: 0.0,
            chf: 0.0,
        };
        let eps = noise.sample(&mut rng);
        let Ok(sol) = hbm_solve_with(base, &r, &options) else {
            continue;
        };
        if sol.quality < validity::MIN_OUTLET_QUALITY {
            continue;
        }
        // keep the measured value strictly positive
        r.chf = sol.chf * (1.0 + eps).max(1e-3);
        r.outlet_quality = quality_from_heat_balance(r.chf, &r)?;
        if r.outlet_quality < validity::MIN_OUTLET_QUALITY {
            continue;
        }
        out.push(r);
    }
    Ok(out)
}
