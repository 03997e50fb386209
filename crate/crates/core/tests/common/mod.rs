#![allow(dead_code)]

use std::path::PathBuf;

use optbounds::model::{load_problem, GmpProblem};

pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

pub fn config(name: &str) -> GmpProblem {
    let path = config_path(name);
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    load_problem(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Microsoft call prices, one asset, strikes 95..120.
pub const MICROSOFT_STRIKES: [f64; 5] = [95.0, 100.0, 110.0, 115.0, 120.0];

pub const TABLE2_STRIKES: [f64; 6] = [90.0, 95.0, 100.0, 105.0, 110.0, 115.0];
pub const TABLE2_LOWER: [f64; 6] = [16.875, 12.792, 8.708, 4.625, 1.675, 0.0];
pub const TABLE2_UPPER: [f64; 6] = [20.25, 15.7, 11.55, 8.016, 4.75, 2.0];

pub const CURRENCY_STRIKES: [f64; 5] = [100.0, 105.0, 110.0, 115.0, 120.0];
pub const CURRENCY_LOWER: [f64; 5] = [1.4933, 1.2599, 1.0266, 0.7933, 0.56];
pub const CURRENCY_UPPER: [f64; 5] = [31.5834, 26.5833, 21.5833, 16.5833, 11.5833];

pub const BOYLE_LIN_STRIKES: [f64; 5] = [30.0, 35.0, 40.0, 45.0, 50.0];
pub const BOYLE_LIN_UPPER: [f64; 5] = [21.51, 17.17, 13.2, 9.84, 7.3];
pub const BOYLE_LIN_LOWER: [f64; 5] = [14.21, 9.21, 4.21, 0.0, 0.0];

pub const TECH_STRIKES: [f64; 2] = [140.0, 190.0];
pub const TECH_UPPER: [f64; 2] = [52.79, 8.51];
pub const TECH_LOWER: [f64; 2] = [46.26, 0.0];

/// Solves an SDPA file with cvxpy and Clarabel. `None` when Python or the
/// solver is unavailable.
pub fn external_sdpa_value(path: &std::path::Path) -> Option<Result<f64, String>> {
    let script = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/common/sdpa_solve.py");
    let out = std::process::Command::new("python3").arg(script).arg(path).output().ok()?;
    if out.status.code() == Some(3) {
        return None;
    }
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    if !out.status.success() {
        return Some(Err(format!("{text}{}", String::from_utf8_lossy(&out.stderr))));
    }
    let mut parts = text.split_whitespace();
    match (parts.next(), parts.next().and_then(|v| v.parse::<f64>().ok())) {
        (Some("optimal"), Some(v)) => Some(Ok(v)),
        _ => Some(Err(text)),
    }
}

#[allow(clippy::too_many_arguments)]
fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Adaptive Simpson on unit-length panels, so that no panel is sampled only
/// where the integrand is negligible.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    let panels = (b - a).ceil() as usize;
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|i| {
            let (lo, hi) = (a + i as f64 * h, a + (i + 1) as f64 * h);
            let m = 0.5 * (lo + hi);
            let (fa, fm, fb) = (f(lo), f(m), f(hi));
            let whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
            simpson(&f, lo, hi, fa, fm, fb, whole, tol / panels as f64, 50)
        })
        .sum()
}
