//! Biasi and Bowring dryout CHF correlations and the heat-balance solve.
//!
//! Both correlations follow Todreas & Kazimi, *Nuclear Systems I*. The
//! historical Biasi form works in cm, bar and g/(cm²·s) and returns W/cm²;
//! Bowring is stated in SI with W/m². Everything crossing this module's
//! boundary is in the crate unit system: m, MPa, kg/(m²·s), kJ/kg, kW/m².

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalsuite::{metrics, MetricsReport, PredictionSet};
use crate::properties::saturation_props;

/// One experimental CHF measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChfRecord {
    /// Tube inner diameter, m.
    pub diameter: f64,
    /// Heated length, m.
    pub heated_length: f64,
    /// System pressure, MPa.
    pub pressure: f64,
    /// Mass flux, kg/(m²·s).
    pub mass_flux: f64,
    /// Inlet subcooling h_f − h_in, kJ/kg.
    pub inlet_subcooling: f64,
    /// Inlet temperature, °C, when the source provides it.
    pub inlet_temperature: Option<f64>,
    /// Outlet equilibrium quality.
    pub outlet_quality: f64,
    /// Measured critical heat flux, kW/m².
    pub chf: f64,
}

/// Base model used in front of the ML residual model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseModelKind {
    /// No physics model; the ML model predicts CHF directly.
    #[serde(rename = "none", alias = "nobase")]
    NoBase,
    Biasi,
    Bowring,
}

impl BaseModelKind {
    pub const ALL: [BaseModelKind; 3] =
        [BaseModelKind::NoBase, BaseModelKind::Biasi, BaseModelKind::Bowring];

    pub fn as_str(&self) -> &'static str {
        match self {
            BaseModelKind::NoBase => "none",
            BaseModelKind::Biasi => "biasi",
            BaseModelKind::Bowring => "bowring",
        }
    }
}

impl fmt::Display for BaseModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BaseModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" | "nobase" | "no_base" | "pure" => Ok(BaseModelKind::NoBase),
            "biasi" => Ok(BaseModelKind::Biasi),
            "bowring" => Ok(BaseModelKind::Bowring),
            other => Err(Error::Config(format!(
                "unknown base model `{other}` (expected none, biasi or bowring)"
            ))),
        }
    }
}

/// Common validity box of the two correlations (closed intervals).
pub mod validity {
    pub const DIAMETER_M: (f64, f64) = (0.003, 0.0375);
    pub const HEATED_LENGTH_M: (f64, f64) = (0.20, 3.70);
    pub const PRESSURE_MPA: (f64, f64) = (0.27, 14.0);
    pub const MASS_FLUX: (f64, f64) = (136.0, 6000.0);
    pub const MIN_OUTLET_QUALITY: f64 = 0.2;
}

fn check_range(quantity: &'static str, value: f64, (lo, hi): (f64, f64)) -> Result<()> {
    if value >= lo && value <= hi {
        Ok(())
    } else {
        Err(Error::Range {
            quantity,
            value,
            lo,
            hi,
        })
    }
}

fn check_common(diameter: f64, pressure: f64, mass_flux: f64) -> Result<()> {
    check_range("diameter [m]", diameter, validity::DIAMETER_M)?;
    check_range("pressure [MPa]", pressure, validity::PRESSURE_MPA)?;
    check_range("mass flux [kg/(m2 s)]", mass_flux, validity::MASS_FLUX)
}

fn finite_positive(name: &str, value: f64) -> Result<f64> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(Error::Numeric(format!("{name} produced non-positive or non-finite CHF {value}")))
    }
}

// ---------------------------------------------------------------------------
// Biasi
// ---------------------------------------------------------------------------

/// Inputs in the units the Biasi correlation was fitted in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasiUnits {
    pub diameter_cm: f64,
    pub pressure_bar: f64,
    pub mass_flux_cgs: f64,
}

impl BiasiUnits {
    pub fn from_si(diameter_m: f64, pressure_mpa: f64, mass_flux: f64) -> Self {
        Self {
            diameter_cm: diameter_m * 100.0,
            pressure_bar: pressure_mpa * 10.0,
            // kg/(m² s) -> g/(cm² s)
            mass_flux_cgs: mass_flux / 10.0,
        }
    }

    pub fn to_si(&self) -> (f64, f64, f64) {
        (
            self.diameter_cm / 100.0,
            self.pressure_bar / 10.0,
            self.mass_flux_cgs * 10.0,
        )
    }
}

/// W/cm² -> kW/m².
const W_CM2_TO_KW_M2: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasiBranch {
    LowQuality,
    HighQuality,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasiValue {
    /// kW/m²; may be non-positive outside the quality range.
    pub chf: f64,
    pub branch: BiasiBranch,
}

/// Evaluates both Biasi branches without range checks and keeps the larger.
pub fn biasi_eval(diameter: f64, pressure: f64, mass_flux: f64, quality: f64) -> BiasiValue {
    let u = BiasiUnits::from_si(diameter, pressure, mass_flux);
    let (d, p, g) = (u.diameter_cm, u.pressure_bar, u.mass_flux_cgs);
    // diameter exponent switches at 1 cm
    let n = if d >= 1.0 { 0.4 } else { 0.6 };
    let f_p = 0.7249 + 0.099 * p * (-0.032 * p).exp();
    let h_p = -1.159 + 0.149 * p * (-0.019 * p).exp() + 8.99 * p / (10.0 + p * p);
    let g16 = g.powf(1.0 / 6.0);
    let d_n = d.powf(n);
    let low = 1.883e3 / (d_n * g16) * (f_p / g16 - quality);
    let high = 3.78e3 * h_p / (d_n * g.powf(0.6)) * (1.0 - quality);
    if low >= high {
        BiasiValue {
            chf: low * W_CM2_TO_KW_M2,
            branch: BiasiBranch::LowQuality,
        }
    } else {
        BiasiValue {
            chf: high * W_CM2_TO_KW_M2,
            branch: BiasiBranch::HighQuality,
        }
    }
}

/// Biasi CHF (kW/m²) at local quality `quality`.
pub fn biasi_chf(diameter: f64, pressure: f64, mass_flux: f64, quality: f64) -> Result<f64> {
    check_common(diameter, pressure, mass_flux)?;
    if !(0.0..1.0).contains(&quality) {
        return Err(Error::Range {
            quantity: "quality",
            value: quality,
            lo: 0.0,
            hi: 1.0,
        });
    }
    finite_positive("Biasi", biasi_eval(diameter, pressure, mass_flux, quality).chf)
}

// ---------------------------------------------------------------------------
// Bowring
// ---------------------------------------------------------------------------

/// Reference pressure of the Bowring coefficient families (1000 psia), MPa.
pub const BOWRING_REFERENCE_PRESSURE: f64 = 6.895;

/// Pressure-dependent Bowring factors F1..F4.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BowringFactors {
    pub f1: f64,
    pub f2: f64,
    pub f3: f64,
    pub f4: f64,
}

pub fn bowring_factors(pressure: f64) -> BowringFactors {
    let pr = pressure / BOWRING_REFERENCE_PRESSURE;
    let (f1, f2, f3) = if pr <= 1.0 {
        let f1 = (pr.powf(18.942) * (20.89 * (1.0 - pr)).exp() + 0.917) / 1.917;
        let f2 = 1.309 * f1 / (pr.powf(1.316) * (2.444 * (1.0 - pr)).exp() + 0.309);
        let f3 = (pr.powf(17.023) * (16.658 * (1.0 - pr)).exp() + 0.667) / 1.667;
        (f1, f2, f3)
    } else {
        let f1 = pr.powf(-0.368) * (0.648 * (1.0 - pr)).exp();
        let f2 = f1 / (pr.powf(-0.448) * (0.245 * (1.0 - pr)).exp());
        let f3 = pr.powf(0.219);
        (f1, f2, f3)
    };
    BowringFactors {
        f1,
        f2,
        f3,
        f4: f3 * pr.powf(1.649),
    }
}

/// The Bowring groups A [W/m], B [kg/(m s)] and C [m].
#[derive(Debug, Clone, Copy)]
struct BowringGroups {
    a: f64,
    b: f64,
    c: f64,
    h_fg: f64,
}

fn bowring_groups(diameter: f64, pressure: f64, mass_flux: f64) -> Result<BowringGroups> {
    let h_fg = saturation_props(pressure)?.h_fg * 1e3; // J/kg
    let f = bowring_factors(pressure);
    let pr = pressure / BOWRING_REFERENCE_PRESSURE;
    let n = 2.0 - 0.5 * pr;
    let (d, g) = (diameter, mass_flux);
    let a = 2.317 * (h_fg * d * g / 4.0) * f.f1 / (1.0 + 0.0143 * f.f2 * d.sqrt() * g);
    let b = d * g / 4.0;
    let c = 0.077 * f.f3 * d * g / (1.0 + 0.347 * f.f4 * (g / 1356.0).powf(n));
    Ok(BowringGroups { a, b, c, h_fg })
}

/// Bowring CHF (kW/m²) in inlet-conditions form.
pub fn bowring_chf(
    diameter: f64,
    heated_length: f64,
    pressure: f64,
    mass_flux: f64,
    inlet_subcooling: f64,
) -> Result<f64> {
    check_common(diameter, pressure, mass_flux)?;
    check_range("heated length [m]", heated_length, validity::HEATED_LENGTH_M)?;
    if !(inlet_subcooling >= 0.0) {
        return Err(Error::Precondition(format!(
            "inlet subcooling must be non-negative, got {inlet_subcooling}"
        )));
    }
    let k = bowring_groups(diameter, pressure, mass_flux)?;
    let q = (k.a + k.b * inlet_subcooling * 1e3) / (k.c + heated_length);
    finite_positive("Bowring", q / 1e3)
}

/// Bowring in local-quality form, (A − B·h_fg·x)/C, kW/m². No range checks;
/// the result goes negative at high quality.
pub fn bowring_local_eval(diameter: f64, pressure: f64, mass_flux: f64, quality: f64) -> Result<f64> {
    let k = bowring_groups(diameter, pressure, mass_flux)?;
    Ok((k.a - k.b * k.h_fg * quality) / k.c / 1e3)
}

// ---------------------------------------------------------------------------
// Heat balance
// ---------------------------------------------------------------------------

/// Outlet equilibrium quality of a uniformly heated tube at heat flux `heat_flux` (kW/m²).
pub fn quality_from_heat_balance(heat_flux: f64, record: &ChfRecord) -> Result<f64> {
    if !(heat_flux > 0.0) {
        return Err(Error::Precondition(format!(
            "heat flux must be positive, got {heat_flux}"
        )));
    }
    let h_fg = saturation_props(record.pressure)?.h_fg;
    Ok(quality_coefficient(record, h_fg) * heat_flux - record.inlet_subcooling / h_fg)
}

/// dx_e/dq'' for the record, (4 L)/(D G h_fg).
fn quality_coefficient(record: &ChfRecord, h_fg: f64) -> f64 {
    4.0 * record.heated_length / (record.diameter * record.mass_flux * h_fg)
}

/// How the Bowring base estimate is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BowringMode {
    /// Inlet-conditions form evaluated directly.
    #[default]
    InletConditions,
    /// Local-quality form iterated through the heat balance.
    HeatBalance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HbmOptions {
    /// Bracket scanned for the sign change, kW/m².
    pub q_min: f64,
    pub q_max: f64,
    /// Log-spaced probes over the bracket.
    pub probes: usize,
    /// Stop once |q − f(q)|/q falls below this.
    pub rel_tol: f64,
    pub max_iter: usize,
    pub bowring_mode: BowringMode,
}

impl Default for HbmOptions {
    fn default() -> Self {
        Self {
            q_min: 1.0,
            q_max: 20_000.0,
            probes: 64,
            // the returned value is f(q), which sits within |f'|·tol of the fixed point
            rel_tol: 1e-10,
            max_iter: 200,
            bowring_mode: BowringMode::InletConditions,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HbmSolution {
    /// Self-consistent CHF, kW/m².
    pub chf: f64,
    /// Outlet quality at that CHF.
    pub quality: f64,
    pub iterations: usize,
    /// Sign changes found while scanning; > 1 means the smallest root was taken.
    pub roots_found: usize,
    pub biasi_branch: Option<BiasiBranch>,
}

/// Finds q* = f(x_e(q*)) for a quality-dependent correlation `chf_at_quality`.
///
/// The bracket is scanned on `options.probes` log-spaced points and the first
/// sign change of q − f(x_e(q)) is refined by bisection. The returned CHF is
/// the correlation evaluated at the converged quality.
pub fn solve_heat_balance<F>(record: &ChfRecord, options: &HbmOptions, chf_at_quality: F) -> Result<HbmSolution>
where
    F: Fn(f64) -> Result<f64>,
{
    if !(options.q_min > 0.0 && options.q_max > options.q_min && options.probes >= 2) {
        return Err(Error::Config(format!("invalid heat-balance bracket {options:?}")));
    }
    let h_fg = saturation_props(record.pressure)?.h_fg;
    let slope = quality_coefficient(record, h_fg);
    let offset = record.inlet_subcooling / h_fg;
    let quality = |q: f64| slope * q - offset;
    let residual = |q: f64| -> Result<f64> { Ok(q - chf_at_quality(quality(q))?) };

    let ratio = (options.q_max / options.q_min).ln() / (options.probes - 1) as f64;
    let probe = |i: usize| {
        if i + 1 == options.probes {
            options.q_max
        } else {
            options.q_min * (ratio * i as f64).exp()
        }
    };

    let mut brackets = Vec::new();
    let mut prev_q = probe(0);
    let mut prev_r = residual(prev_q)?;
    if prev_r == 0.0 {
        brackets.push((prev_q, prev_q));
    }
    for i in 1..options.probes {
        let q = probe(i);
        let r = residual(q)?;
        if r == 0.0 || (prev_r != 0.0 && (r > 0.0) != (prev_r > 0.0)) {
            brackets.push((prev_q, q));
        }
        prev_q = q;
        prev_r = r;
    }
    let Some(&(mut lo, mut hi)) = brackets.first() else {
        return Err(Error::Bracketing {
            lo: options.q_min,
            hi: options.q_max,
        });
    };
    if brackets.len() > 1 {
        log::warn!(
            "heat balance has {} fixed points in [{}, {}] kW/m2; taking the smallest",
            brackets.len(),
            options.q_min,
            options.q_max
        );
    }

    let mut r_lo = residual(lo)?;
    let mut q = if r_lo == 0.0 { lo } else { hi };
    let mut iterations = 0;
    let mut rel = (residual(q)? / q).abs();
    while rel > options.rel_tol {
        if iterations == options.max_iter {
            return Err(Error::Convergence {
                iterations,
                residual: rel,
            });
        }
        iterations += 1;
        q = 0.5 * (lo + hi);
        let r = residual(q)?;
        rel = (r / q).abs();
        if r == 0.0 {
            break;
        }
        if (r > 0.0) == (r_lo > 0.0) {
            lo = q;
            r_lo = r;
        } else {
            hi = q;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    let x = quality(q);
    Ok(HbmSolution {
        chf: chf_at_quality(x)?,
        quality: x,
        iterations,
        roots_found: brackets.len(),
        biasi_branch: None,
    })
}

fn check_record(record: &ChfRecord) -> Result<()> {
    check_common(record.diameter, record.pressure, record.mass_flux)?;
    check_range("heated length [m]", record.heated_length, validity::HEATED_LENGTH_M)?;
    if !(record.inlet_subcooling >= 0.0) {
        return Err(Error::Precondition(format!(
            "inlet subcooling must be non-negative, got {}",
            record.inlet_subcooling
        )));
    }
    Ok(())
}

/// Base-model CHF estimate for `record` with full solver diagnostics.
pub fn hbm_solve_with(kind: BaseModelKind, record: &ChfRecord, options: &HbmOptions) -> Result<HbmSolution> {
    check_record(record)?;
    let (d, p, g) = (record.diameter, record.pressure, record.mass_flux);
    match kind {
        BaseModelKind::NoBase => Err(Error::Precondition(
            "heat-balance solve needs a base correlation".into(),
        )),
        BaseModelKind::Biasi => {
            let mut sol = solve_heat_balance(record, options, |x| Ok(biasi_eval(d, p, g, x).chf))?;
            sol.biasi_branch = Some(biasi_eval(d, p, g, sol.quality).branch);
            finite_positive("Biasi", sol.chf)?;
            Ok(sol)
        }
        BaseModelKind::Bowring => match options.bowring_mode {
            BowringMode::InletConditions => {
                let chf = bowring_chf(d, record.heated_length, p, g, record.inlet_subcooling)?;
                Ok(HbmSolution {
                    chf,
                    quality: quality_from_heat_balance(chf, record)?,
                    iterations: 0,
                    roots_found: 1,
                    biasi_branch: None,
                })
            }
            BowringMode::HeatBalance => {
                let sol = solve_heat_balance(record, options, |x| bowring_local_eval(d, p, g, x))?;
                finite_positive("Bowring", sol.chf)?;
                Ok(sol)
            }
        },
    }
}

/// Base-model CHF estimate (kW/m²) for `record`.
pub fn hbm_solve(kind: BaseModelKind, record: &ChfRecord) -> Result<f64> {
    Ok(hbm_solve_with(kind, record, &HbmOptions::default())?.chf)
}

/// Stand-alone correlation performance over `records`.
pub fn baseline_metrics(kind: BaseModelKind, records: &[ChfRecord]) -> Result<MetricsReport> {
    baseline_metrics_with(kind, records, &HbmOptions::default())
}

pub fn baseline_metrics_with(
    kind: BaseModelKind,
    records: &[ChfRecord],
    options: &HbmOptions,
) -> Result<MetricsReport> {
    let mut preds = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let chf = hbm_solve_with(kind, r, options).map_err(|e| e.at_record(i))?.chf;
        preds.push(PredictionSet::point(chf));
    }
    let y: Vec<f64> = records.iter().map(|r| r.chf).collect();
    metrics(&y, &preds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(d: f64, l: f64, p: f64, g: f64, dh: f64) -> ChfRecord {
        ChfRecord {
            diameter: d,
            heated_length: l,
            pressure: p,
            mass_flux: g,
            inlet_subcooling: dh,
            inlet_temperature: None,
            outlet_quality: 0.5,
            chf: 1000.0,
        }
    }

    #[test]
    fn biasi_positive_in_range() {
        for &x in &[0.0, 0.2, 0.5, 0.9, 0.99] {
            let q = biasi_chf(0.01, 7.0, 2000.0, x).unwrap();
            assert!(q > 0.0 && q.is_finite());
        }
    }

    #[test]
    fn biasi_rejects_out_of_range() {
        let err = biasi_chf(0.002, 7.0, 2000.0, 0.4).unwrap_err();
        assert!(err.to_string().contains("diameter"), "{err}");
        assert!(biasi_chf(0.01, 15.0, 2000.0, 0.4).is_err());
        assert!(biasi_chf(0.01, 7.0, 100.0, 0.4).is_err());
        assert!(biasi_chf(0.01, 7.0, 2000.0, 1.0).is_err());
    }

    #[test]
    fn biasi_decreases_with_quality() {
        let a = biasi_chf(0.008, 7.0, 2000.0, 0.3).unwrap();
        let b = biasi_chf(0.008, 7.0, 2000.0, 0.6).unwrap();
        assert!(b < a);
    }

    #[test]
    fn biasi_unit_round_trip() {
        let (d, p, g) = (0.0123, 7.654, 1234.5);
        let (d2, p2, g2) = BiasiUnits::from_si(d, p, g).to_si();
        for (a, b) in [(d, d2), (p, p2), (g, g2)] {
            assert!(((a - b) / a).abs() < 1e-12);
        }
    }

    #[test]
    fn bowring_factors_continuous_at_reference() {
        let below = bowring_factors(BOWRING_REFERENCE_PRESSURE * (1.0 - 1e-9));
        let above = bowring_factors(BOWRING_REFERENCE_PRESSURE * (1.0 + 1e-9));
        for (a, b) in [
            (below.f1, above.f1),
            (below.f2, above.f2),
            (below.f3, above.f3),
            (below.f4, above.f4),
        ] {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        let at = bowring_factors(BOWRING_REFERENCE_PRESSURE);
        assert!((at.f1 - 1.0).abs() < 1e-12 && (at.f3 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bowring_rejects_bad_inputs() {
        assert!(bowring_chf(0.01, 4.0, 7.0, 1500.0, 100.0).is_err());
        assert!(matches!(
            bowring_chf(0.01, 2.0, 7.0, 1500.0, -1.0),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn quality_identities() {
        let r = record(0.01, 2.0, 7.0, 1500.0, 150.0);
        // 4 q L / (D G) = dh_sub  =>  x = 0
        let q0 = r.inlet_subcooling * r.diameter * r.mass_flux / (4.0 * r.heated_length);
        assert!(quality_from_heat_balance(q0, &r).unwrap().abs() < 1e-12);

        let r1 = record(0.01, 2.0, 7.0, 1500.0, 0.0);
        let h_fg = saturation_props(7.0).unwrap().h_fg;
        let q1 = r1.diameter * r1.mass_flux * h_fg / (4.0 * r1.heated_length);
        assert!((quality_from_heat_balance(q1, &r1).unwrap() - 1.0).abs() < 1e-12);

        let xa = quality_from_heat_balance(500.0, &r).unwrap();
        let xb = quality_from_heat_balance(501.0, &r).unwrap();
        assert!(xb > xa);
        assert!(quality_from_heat_balance(0.0, &r).is_err());
    }

    #[test]
    fn constant_correlation_fixed_point() {
        let r = record(0.01, 2.0, 7.0, 1500.0, 150.0);
        let sol = solve_heat_balance(&r, &HbmOptions::default(), |_| Ok(1234.5)).unwrap();
        assert_eq!(sol.chf, 1234.5);
    }

    #[test]
    fn no_bracket_is_reported() {
        let r = record(0.01, 2.0, 7.0, 1500.0, 150.0);
        let err = solve_heat_balance(&r, &HbmOptions::default(), |_| Ok(1e6)).unwrap_err();
        assert!(matches!(err, Error::Bracketing { lo, hi } if lo == 1.0 && hi == 20_000.0));
    }

    #[test]
    fn smallest_of_multiple_roots() {
        let r = record(0.01, 2.0, 7.0, 1500.0, 0.0);
        let h_fg = saturation_props(7.0).unwrap().h_fg;
        let slope = 4.0 * r.heated_length / (r.diameter * r.mass_flux * h_fg);
        // q - f(q) = 1e-3 (q - 100)(q - 1000)
        let f = |x: f64| {
            let q = x / slope;
            Ok(q - 1e-3 * (q - 100.0) * (q - 1000.0))
        };
        let sol = solve_heat_balance(&r, &HbmOptions::default(), f).unwrap();
        assert_eq!(sol.roots_found, 2);
        assert!((sol.chf - 100.0).abs() < 1e-6);
    }

    #[test]
    fn biasi_hbm_is_self_consistent() {
        let r = record(0.008, 2.0, 7.0, 2000.0, 300.0);
        let sol = hbm_solve_with(BaseModelKind::Biasi, &r, &HbmOptions::default()).unwrap();
        let f = biasi_eval(r.diameter, r.pressure, r.mass_flux, quality_from_heat_balance(sol.chf, &r).unwrap()).chf;
        assert!(((sol.chf - f) / sol.chf).abs() <= 1e-6);
        assert!(sol.biasi_branch.is_some());
    }

    #[test]
    fn bowring_heat_balance_matches_inlet_form() {
        let r = record(0.01, 2.0, 6.0, 1500.0, 200.0);
        let direct = hbm_solve(BaseModelKind::Bowring, &r).unwrap();
        let opts = HbmOptions {
            bowring_mode: BowringMode::HeatBalance,
            ..HbmOptions::default()
        };
        let iterated = hbm_solve_with(BaseModelKind::Bowring, &r, &opts).unwrap().chf;
        assert!(((direct - iterated) / direct).abs() < 1e-8, "{direct} vs {iterated}");
    }

    #[test]
    fn no_base_cannot_be_solved() {
        let r = record(0.01, 2.0, 7.0, 1500.0, 150.0);
        assert!(hbm_solve(BaseModelKind::NoBase, &r).is_err());
    }

    #[test]
    fn base_kind_parsing() {
        assert_eq!("Biasi".parse::<BaseModelKind>().unwrap(), BaseModelKind::Biasi);
        assert_eq!("none".parse::<BaseModelKind>().unwrap(), BaseModelKind::NoBase);
        assert!("cise4".parse::<BaseModelKind>().is_err());
        assert_eq!(serde_json::to_string(&BaseModelKind::NoBase).unwrap(), "\"none\"");
    }
}
