//! Small numerically careful reductions used across the crate.

/// Neumaier-compensated sum.
pub fn sum(values: &[f64]) -> f64 {
    let mut s = 0.0;
    let mut c = 0.0;
    for &v in values {
        let t = s + v;
        if s.abs() >= v.abs() {
            c += (s - t) + v;
        } else {
            c += (v - t) + s;
        }
        s = t;
    }
    s + c
}

pub fn mean(values: &[f64]) -> f64 {
    sum(values) / values.len() as f64
}

/// Standard deviation with divisor n around a known mean.
pub fn population_std(values: &[f64], mean: f64) -> f64 {
    let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    (sum(&sq) / values.len() as f64).sqrt()
}

/// Quantile with linear interpolation between order statistics (`sorted` ascending).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = q * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}
