//! Saturated-water properties from an embedded IAPWS-IF97 table.
//!
//! The table holds 100 log-spaced pressure knots between 0.1 and 20 MPa and is
//! interpolated linearly in pressure. Regenerate it with
//! `tools/gen_sat_table.py`.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SAT_TABLE_CSV: &str = include_str!("../assets/sat_table.csv");

/// Header of the embedded table asset.
pub const SAT_TABLE_HEADER: &str = "pressure_mpa,t_sat_c,h_f_kj_kg,h_g_kj_kg,h_fg_kj_kg";

/// Critical pressure of water, MPa.
pub const CRITICAL_PRESSURE_MPA: f64 = 22.064;

/// One saturation state. Pressure in MPa, temperature in °C, enthalpies in kJ/kg.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturationRow {
    pub pressure: f64,
    pub t_sat: f64,
    pub h_f: f64,
    pub h_g: f64,
    pub h_fg: f64,
}

impl SaturationRow {
    fn lerp(a: &SaturationRow, b: &SaturationRow, pressure: f64) -> SaturationRow {
        let t = (pressure - a.pressure) / (b.pressure - a.pressure);
        let mix = |x: f64, y: f64| x + t * (y - x);
        SaturationRow {
            pressure,
            t_sat: mix(a.t_sat, b.t_sat),
            h_f: mix(a.h_f, b.h_f),
            h_g: mix(a.h_g, b.h_g),
            h_fg: mix(a.h_fg, b.h_fg),
        }
    }
}

/// Ordered saturation table.
#[derive(Debug, Clone)]
pub struct SaturationTable {
    rows: Vec<SaturationRow>,
}

impl SaturationTable {
    /// Parses a table in the `sat_table.csv` layout and checks its invariants.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Schema("saturation table is empty".into()))?;
        if header.trim() != SAT_TABLE_HEADER {
            return Err(Error::Schema(format!(
                "saturation table header `{header}` != `{SAT_TABLE_HEADER}`"
            )));
        }
        let columns: Vec<&str> = SAT_TABLE_HEADER.split(',').collect();
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let row = i + 1;
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != columns.len() {
                return Err(Error::Schema(format!(
                    "saturation table row {row} has {} cells, expected {}",
                    cells.len(),
                    columns.len()
                )));
            }
            let mut values = [0.0; 5];
            for (j, cell) in cells.iter().enumerate() {
                values[j] = cell.trim().parse().map_err(|e| Error::Parse {
                    row,
                    column: columns[j].to_string(),
                    message: format!("{e}"),
                })?;
            }
            rows.push(SaturationRow {
                pressure: values[0],
                t_sat: values[1],
                h_f: values[2],
                h_g: values[3],
                h_fg: values[4],
            });
        }
        Self::new(rows)
    }

    pub fn new(rows: Vec<SaturationRow>) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::Schema("saturation table needs at least two rows".into()));
        }
        for pair in rows.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            if b.pressure <= a.pressure {
                return Err(Error::Schema(format!(
                    "saturation table not strictly ascending at {} MPa",
                    b.pressure
                )));
            }
            if b.t_sat <= a.t_sat || b.h_f <= a.h_f || b.h_fg >= a.h_fg {
                return Err(Error::Schema(format!(
                    "saturation table not monotonic between {} and {} MPa",
                    a.pressure, b.pressure
                )));
            }
        }
        for r in &rows {
            if (r.h_g - r.h_f - r.h_fg).abs() > 0.1 {
                return Err(Error::Schema(format!(
                    "h_fg inconsistent with h_g - h_f at {} MPa",
                    r.pressure
                )));
            }
            if r.pressure < CRITICAL_PRESSURE_MPA && r.h_fg <= 0.0 {
                return Err(Error::Schema(format!("non-positive h_fg at {} MPa", r.pressure)));
            }
        }
        Ok(Self { rows })
    }

    /// The table shipped with the crate.
    pub fn embedded() -> &'static SaturationTable {
        static TABLE: OnceLock<SaturationTable> = OnceLock::new();
        TABLE.get_or_init(|| {
            SaturationTable::from_csv(SAT_TABLE_CSV).expect("embedded saturation table is valid")
        })
    }

    pub fn rows(&self) -> &[SaturationRow] {
        &self.rows
    }

    /// Valid pressure interval in MPa.
    pub fn bounds(&self) -> (f64, f64) {
        (self.rows[0].pressure, self.rows[self.rows.len() - 1].pressure)
    }

    /// Properties at `pressure` (MPa), linear in pressure between knots.
    pub fn props(&self, pressure: f64) -> Result<SaturationRow> {
        let (lo, hi) = self.bounds();
        if !(pressure >= lo && pressure <= hi) {
            return Err(Error::Range {
                quantity: "pressure [MPa]",
                value: pressure,
                lo,
                hi,
            });
        }
        // first knot with pressure >= query
        let idx = self.rows.partition_point(|r| r.pressure < pressure);
        let upper = &self.rows[idx];
        if upper.pressure == pressure || idx == 0 {
            return Ok(*upper);
        }
        Ok(SaturationRow::lerp(&self.rows[idx - 1], upper, pressure))
    }
}

/// Saturation properties from the embedded table.
pub fn saturation_props(pressure: f64) -> Result<SaturationRow> {
    SaturationTable::embedded().props(pressure)
}

/// Inlet enthalpy (kJ/kg) from pressure (MPa) and inlet subcooling (kJ/kg).
pub fn subcooling_to_inlet_enthalpy(pressure: f64, dh_sub: f64) -> Result<f64> {
    if !(dh_sub >= 0.0) {
        return Err(Error::Precondition(format!(
            "inlet subcooling must be non-negative, got {dh_sub} kJ/kg"
        )));
    }
    Ok(saturation_props(pressure)?.h_f - dh_sub)
}
