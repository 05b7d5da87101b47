//! Plot-data CSV/JSON writers and a minimal SVG renderer.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{CalibrationCurve, ParityRow, ParityTable, RstdDistribution};
use crate::error::{Error, Result};
use crate::prediction::PredictionSet;

pub const PREDICTIONS_HEADER: &str =
    "point_id,y_true_kw_m2,y_pred_mean_kw_m2,y_pred_std_kw_m2,rstd_pct,lo_2sigma,hi_2sigma";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub point_id: usize,
    pub y_true_kw_m2: f64,
    pub y_pred_mean_kw_m2: f64,
    pub y_pred_std_kw_m2: f64,
    pub rstd_pct: f64,
    pub lo_2sigma: f64,
    pub hi_2sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ParityCsvRow {
    point_id: usize,
    p_mpa: Option<f64>,
    y_true_kw_m2: f64,
    y_pred_mean_kw_m2: f64,
    lo_2sigma: f64,
    hi_2sigma: f64,
    inside_band: bool,
    rstd_pct: f64,
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Reader::from_reader(file))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_predictions_csv(
    path: &Path,
    point_ids: &[usize],
    y_true: &[f64],
    pred: &[PredictionSet],
) -> Result<()> {
    let mut w = writer(path)?;
    for ((id, y), p) in point_ids.iter().zip(y_true).zip(pred) {
        w.serialize(PredictionRow {
            point_id: *id,
            y_true_kw_m2: *y,
            y_pred_mean_kw_m2: p.mean,
            y_pred_std_kw_m2: p.std,
            rstd_pct: p.rstd,
            lo_2sigma: p.interval_2sigma.0,
            hi_2sigma: p.interval_2sigma.1,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_predictions_csv(path: &Path) -> Result<Vec<PredictionRow>> {
    let mut r = reader(path)?;
    let header = r.headers()?.iter().collect::<Vec<_>>().join(",");
    if header != PREDICTIONS_HEADER {
        return Err(Error::Schema(format!(
            "{}: header `{header}` != `{PREDICTIONS_HEADER}`",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for row in r.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

pub fn write_calibration_csv(path: &Path, curve: &CalibrationCurve) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["expected_p", "observed_p"])?;
    for (e, o) in curve.expected_p.iter().zip(&curve.observed_p) {
        w.write_record([e.to_string(), o.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_rstd_csvs(hist_path: &Path, kde_path: &Path, dist: &RstdDistribution) -> Result<()> {
    let mut w = writer(hist_path)?;
    w.write_record(["bin_lo_pct", "bin_hi_pct", "count"])?;
    for b in &dist.histogram {
        w.write_record([b.lo.to_string(), b.hi.to_string(), b.count.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(hist_path, e))?;

    let mut w = writer(kde_path)?;
    w.write_record(["rstd_pct", "density"])?;
    for (x, d) in dist.kde_x.iter().zip(&dist.kde_density) {
        w.write_record([x.to_string(), d.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(kde_path, e))
}

pub fn write_parity_csv(path: &Path, table: &ParityTable) -> Result<()> {
    let mut w = writer(path)?;
    for r in &table.rows {
        w.serialize(ParityCsvRow {
            point_id: r.point_id,
            p_mpa: r.pressure,
            y_true_kw_m2: r.y_true,
            y_pred_mean_kw_m2: r.mean,
            lo_2sigma: r.lo_2sigma,
            hi_2sigma: r.hi_2sigma,
            inside_band: r.inside_band,
            rstd_pct: r.rstd,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_parity_lines_csv(path: &Path, table: &ParityTable) -> Result<()> {
    let mut w = writer(path)?;
    for l in &table.lines {
        w.serialize(l)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads the rows written by [`write_parity_csv`]; reference lines are not stored there.
pub fn read_parity_csv(path: &Path, error_band_pct: f64) -> Result<ParityTable> {
    let mut r = reader(path)?;
    let mut rows = Vec::new();
    for row in r.deserialize() {
        let row: ParityCsvRow = row?;
        rows.push(ParityRow {
            point_id: row.point_id,
            pressure: row.p_mpa,
            y_true: row.y_true_kw_m2,
            mean: row.y_pred_mean_kw_m2,
            lo_2sigma: row.lo_2sigma,
            hi_2sigma: row.hi_2sigma,
            inside_band: row.inside_band,
            rstd: row.rstd_pct,
        });
    }
    Ok(ParityTable {
        error_band_pct,
        rows,
        lines: Vec::new(),
    })
}

/// Bare-bones SVG plots for eyeballing runs; the CSVs are the real outputs.
pub mod svg {
    use std::fmt::Write;

    const W: f64 = 480.0;
    const H: f64 = 360.0;
    const PAD: f64 = 40.0;

    pub struct Series<'a> {
        pub x: &'a [f64],
        pub y: &'a [f64],
        pub color: &'a str,
        pub scatter: bool,
    }

    pub fn plot(title: &str, series: &[Series<'_>]) -> String {
        let xs = series.iter().flat_map(|s| s.x.iter());
        let ys = series.iter().flat_map(|s| s.y.iter());
        let (x0, x1) = extent(xs);
        let (y0, y1) = extent(ys);
        let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
        let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);

        let mut out = String::new();
        let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}">"#);
        let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            out,
            r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{title}</text>"#,
            W / 2.0
        );
        let _ = writeln!(
            out,
            r#"<path d="M{PAD},{PAD} V{} H{}" fill="none" stroke="black"/>"#,
            H - PAD,
            W - PAD
        );
        let _ = writeln!(out, r#"<text x="{PAD}" y="{}" font-size="10">{x0:.3}</text>"#, H - PAD + 14.0);
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-size="10" text-anchor="end">{x1:.3}</text>"#,
            W - PAD,
            H - PAD + 14.0
        );
        let _ = writeln!(out, r#"<text x="2" y="{}" font-size="10">{y0:.3}</text>"#, H - PAD);
        let _ = writeln!(out, r#"<text x="2" y="{}" font-size="10">{y1:.3}</text>"#, PAD);
        for s in series {
            if s.scatter {
                for (x, y) in s.x.iter().zip(s.y) {
                    let _ = writeln!(
                        out,
                        r#"<circle cx="{:.2}" cy="{:.2}" r="1.5" fill="{}"/>"#,
                        sx(*x),
                        sy(*y),
                        s.color
                    );
                }
            } else {
                let pts: Vec<String> = s
                    .x
                    .iter()
                    .zip(s.y)
                    .map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y)))
                    .collect();
                let _ = writeln!(
                    out,
                    r#"<polyline points="{}" fill="none" stroke="{}"/>"#,
                    pts.join(" "),
                    s.color
                );
            }
        }
        out.push_str("</svg>\n");
        out
    }

    fn extent<'a>(values: impl Iterator<Item = &'a f64>) -> (f64, f64) {
        let (lo, hi) = values
            .filter(|v| v.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
        if !lo.is_finite() {
            (0.0, 1.0)
        } else if hi > lo {
            (lo, hi)
        } else {
            (lo - 0.5, hi + 0.5)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalsuite::parity_export;

    #[test]
    fn predictions_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("predictions.csv");
        let preds = vec![
            PredictionSet::from_samples(vec![1.0, 3.0]),
            PredictionSet::from_moments(10.0, 0.5),
        ];
        write_predictions_csv(&path, &[4, 9], &[2.5, 9.0], &preds).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(PREDICTIONS_HEADER));
        let rows = read_predictions_csv(&path).unwrap();
        assert_eq!(rows[0].point_id, 4);
        assert_eq!(rows[1].y_pred_std_kw_m2, 0.5);
    }

    #[test]
    fn parity_round_trip_keeps_pressure() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("parity.csv");
        let preds = vec![PredictionSet::from_moments(1.0, 0.1); 2];
        let table = parity_export(&[1.0, 1.2], &preds, 10.0).with_points(&[3, 8], &[7.0, 2.0]);
        write_parity_csv(&path, &table).unwrap();
        let back = read_parity_csv(&path, 10.0).unwrap();
        assert_eq!(back.rows, table.rows);
        assert_eq!(back.filter_pressure(6.9, 7.2).rows.len(), 1);
    }
}
