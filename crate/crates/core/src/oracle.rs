//! Brute-force check of the relaxation bounds: restrict the measure to a
//! finite grid of atoms in `[0, B]^n` and solve the resulting linear program
//! over the atom weights.
//!
//! Any grid measure is feasible for the original problem, so the LP value is
//! an inner bound: never below the true infimum, never above the true
//! supremum. The outer relaxation brackets it from the other side.

use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::model::{GmpProblem, Relation};
use crate::relaxation::Direction;
use crate::solver::{solve_conic, ConicProgram, ConicStatus, ProgramError, SolverSettings};

/// Default cap on the number of assets the oracle accepts.
pub const DEFAULT_MAX_ASSETS: usize = 2;

/// Weights below this are not reported as atoms.
const ATOM_WEIGHT_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("grid LP is infeasible; refine the grid")]
    LpInfeasible,
    #[error("oracle limited to {limit} assets (problem has {n})")]
    TooManyAssets { n: usize, limit: usize },
    #[error("points_per_axis must be >= 2, got {0}")]
    InvalidGrid(usize),
    #[error("solver failed: {0}")]
    Solver(String),
    #[error(transparent)]
    Program(#[from] ProgramError),
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub direction: Direction,
    pub value: f64,
    pub grid_points: usize,
    /// `(weight, location)` of the atoms carrying mass in the LP solution.
    pub atoms: Vec<(f64, Vec<f64>)>,
    pub wall_time: f64,
}

/// Grid coordinates for asset `a`: uniform points on `[0, B]` plus every
/// strike of that asset and the payoff strike, sorted and deduplicated.
pub fn axis_grid(p: &GmpProblem, a: usize, points_per_axis: usize) -> Vec<f64> {
    let b = p.box_bound;
    let m = points_per_axis.max(2);
    let mut pts: Vec<f64> = (0..m).map(|i| b * i as f64 / (m - 1) as f64).collect();
    pts.extend(p.options_of(a).map(|o| o.strike));
    if p.payoff.strike < b {
        pts.push(p.payoff.strike);
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup_by(|x, y| (*x - *y).abs() <= 1e-12 * b);
    pts
}

/// LP bound on the default grid, refusing problems with more than
/// [`DEFAULT_MAX_ASSETS`] assets.
pub fn lp_bound(
    p: &GmpProblem,
    points_per_axis: usize,
    direction: Direction,
) -> Result<OracleReport, OracleError> {
    lp_bound_with_limit(p, points_per_axis, direction, DEFAULT_MAX_ASSETS)
}

pub fn lp_bound_with_limit(
    p: &GmpProblem,
    points_per_axis: usize,
    direction: Direction,
    max_assets: usize,
) -> Result<OracleReport, OracleError> {
    if points_per_axis < 2 {
        return Err(OracleError::InvalidGrid(points_per_axis));
    }
    if p.n > max_assets {
        return Err(OracleError::TooManyAssets {
            n: p.n,
            limit: max_assets,
        });
    }
    let axes: Vec<Vec<f64>> = (0..p.n).map(|a| axis_grid(p, a, points_per_axis)).collect();
    lp_bound_on_grid(p, &axes, direction)
}

/// LP bound with atoms on the Cartesian product of `axes`.
pub fn lp_bound_on_grid(
    p: &GmpProblem,
    axes: &[Vec<f64>],
    direction: Direction,
) -> Result<OracleReport, OracleError> {
    let start = Instant::now();
    let points = cartesian(axes);
    let b = p.box_bound;
    let nv = points.len();

    // Coordinates are divided by B; every row is then scaled back so that
    // values keep their original units except for the objective factor B.
    let mut prog = ConicProgram::new(nv, direction.sense());
    prog.nonneg = (0..nv).collect();
    prog.objective = points
        .iter()
        .enumerate()
        .map(|(j, x)| (j, p.payoff.value(x) / b))
        .filter(|t| t.1 != 0.0)
        .collect();
    for o in &p.options {
        let terms = points
            .iter()
            .enumerate()
            .map(|(j, x)| (j, (x[o.asset] - o.strike).max(0.0) / b))
            .filter(|t| t.1 != 0.0)
            .collect();
        prog.add_equality(terms, o.price / b);
    }
    for mc in &p.moments {
        let terms = points.iter().enumerate().map(|(j, x)| (j, mc.f.eval(x))).collect();
        match mc.relation {
            Relation::Eq => prog.add_equality(terms, mc.rhs),
            Relation::Le => prog.add_inequality(terms, mc.rhs),
        }
    }
    prog.add_equality((0..nv).map(|j| (j, 1.0)).collect(), 1.0);
    if p.has_cap() {
        let d = p.d as i32;
        let terms = points
            .iter()
            .enumerate()
            .map(|(j, x)| {
                let r2: f64 = x.iter().map(|v| (v / b) * (v / b)).sum();
                (j, r2.powi(d / 2))
            })
            .collect();
        prog.add_inequality(terms, p.moment_cap / b.powi(d));
    }

    // Values are reported in units of B times the LP objective, so the LP
    // is solved to tighter tolerances than the default.
    let settings = SolverSettings {
        feasibility_tol: 1e-10,
        gap_tol: 1e-10,
        ..SolverSettings::default()
    };
    let sol = solve_conic(&prog, &settings)?;
    match sol.status {
        ConicStatus::Optimal => {}
        ConicStatus::PrimalInfeasible => return Err(OracleError::LpInfeasible),
        s => return Err(OracleError::Solver(format!("{s:?}"))),
    }
    let atoms = sol
        .x
        .iter()
        .zip(&points)
        .filter(|(w, _)| **w > ATOM_WEIGHT_TOL)
        .map(|(w, x)| (*w, x.clone()))
        .collect();
    Ok(OracleReport {
        direction,
        value: sol.primal_objective * b,
        grid_points: nv,
        atoms,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

fn cartesian(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = vec![Vec::new()];
    for axis in axes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                axis.iter().map(move |&v| {
                    let mut x = prefix.clone();
                    x.push(v);
                    x
                })
            })
            .collect();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::load_problem;

    #[test]
    fn all_mass_at_the_top() {
        // Only the normalization constraint: max E[x] on [0, B] is B.
        let text = r#"{"assets": [{"name": "x"}],
            "payoff": {"kind": "single_call", "strike": 0},
            "moment_constraints": [{"coeffs": [{"exponents": [1], "value": 1}], "rhs": 50, "relation": "le"}],
            "B": 80}"#;
        let mut p = load_problem(text).unwrap();
        p.moments.clear();
        let r = lp_bound(&p, 5, Direction::Upper).unwrap();
        assert!((r.value - 80.0).abs() < 1e-6, "{}", r.value);
    }

    #[test]
    fn grid_contains_strikes() {
        let text = r#"{"assets": [{"name": "x", "options": [{"strike": 33.3, "price": 1}]}],
            "payoff": {"kind": "single_call", "strike": 41.7}, "B": 100}"#;
        let p = load_problem(text).unwrap();
        let g = axis_grid(&p, 0, 11);
        assert!(g.contains(&33.3) && g.contains(&41.7));
        assert_eq!(g.len(), 13);
    }

    #[test]
    fn rejects_three_assets_by_default() {
        let text = r#"{"assets": [{"name": "a", "options": [{"strike": 1, "price": 0.5}]},
            {"name": "b", "options": [{"strike": 1, "price": 0.5}]},
            {"name": "c", "options": [{"strike": 1, "price": 0.5}]}],
            "payoff": {"kind": "call_on_max", "strike": 1}, "B": 10}"#;
        let p = load_problem(text).unwrap();
        assert!(matches!(
            lp_bound(&p, 3, Direction::Lower),
            Err(OracleError::TooManyAssets { .. })
        ));
    }

    #[test]
    fn non_attainment_closed_form() {
        // min E[(x-100)+] s.t. E[(x-110)+] = 1 on [0, B]: atoms at 100 and B.
        let text = r#"{"assets": [{"name": "x", "options": [{"strike": 110, "price": 1}]}],
            "payoff": {"kind": "single_call", "strike": 100}, "B": 200}"#;
        let p = load_problem(text).unwrap();
        let r = lp_bound(&p, 201, Direction::Lower).unwrap();
        let exact = 1.0 + 10.0 / 90.0;
        assert!((r.value - exact).abs() < 1e-6, "{} vs {exact}", r.value);
    }
}
