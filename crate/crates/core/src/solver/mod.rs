//! Block conic programs and an embedded primal-dual interior-point solver.
//!
//! A [`ConicProgram`] has scalar decision variables, a linear objective,
//! linear equalities, linear `<=` inequalities, variable-wise nonnegativity
//! and linear matrix inequalities `F0 + sum_j x_j F_j >= 0` (PSD blocks).
//! [`solve_conic`] handles all of them with a homogeneous self-dual
//! interior-point method using Nesterov-Todd scaling.

mod cone;
mod ipm;
mod kkt;
mod sdpa;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ipm::solve_conic;
pub use sdpa::{export_sdpa, parse_sdpa, SdpaProblem};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProgramError {
    #[error("variable index {index} out of range (program has {num_vars} variables)")]
    VariableOutOfRange { index: usize, num_vars: usize },
    #[error("entry ({i}, {j}) outside block of order {order}")]
    EntryOutOfRange { i: usize, j: usize, order: usize },
    #[error("non-finite coefficient in {0}")]
    NonFinite(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Minimize,
    Maximize,
}

/// Sparse linear row `sum coeffs * x  (relation)  rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRow {
    pub terms: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl LinearRow {
    pub fn new(terms: Vec<(usize, f64)>, rhs: f64) -> Self {
        LinearRow { terms, rhs }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(j, a)| a * x[j]).sum()
    }

    // Merges duplicate variables and drops exact zeros.
    fn canonicalize(&mut self) {
        self.terms.sort_by_key(|t| t.0);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(self.terms.len());
        for &(j, a) in &self.terms {
            match out.last_mut() {
                Some(last) if last.0 == j => last.1 += a,
                _ => out.push((j, a)),
            }
        }
        out.retain(|t| t.1 != 0.0);
        self.terms = out;
    }
}

/// Linear matrix inequality `constant + sum_j x_j F_j >= 0` of a given order.
///
/// Matrices are stored as upper-triangular triplets `(i, j, value)` with
/// `i <= j`; the lower triangle is implied by symmetry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdBlock {
    pub order: usize,
    pub label: String,
    pub constant: Vec<(usize, usize, f64)>,
    pub terms: Vec<(usize, Vec<(usize, usize, f64)>)>,
}

impl PsdBlock {
    /// Builds a block from per-entry affine expressions
    /// `entry(i, j) = constant + sum coeff * x_var`, upper triangle only.
    pub fn from_entries(
        order: usize,
        label: impl Into<String>,
        entries: impl IntoIterator<Item = (usize, usize, f64, Vec<(usize, f64)>)>,
    ) -> Self {
        let mut constant = Vec::new();
        let mut by_var: std::collections::BTreeMap<usize, Vec<(usize, usize, f64)>> =
            Default::default();
        for (i, j, c, lin) in entries {
            let (i, j) = if i <= j { (i, j) } else { (j, i) };
            if c != 0.0 {
                constant.push((i, j, c));
            }
            for (v, a) in lin {
                if a != 0.0 {
                    by_var.entry(v).or_default().push((i, j, a));
                }
            }
        }
        PsdBlock {
            order,
            label: label.into(),
            constant,
            terms: by_var.into_iter().collect(),
        }
    }

    /// Evaluates the block matrix at `x` as a dense row-major vector.
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let k = self.order;
        let mut m = vec![0.0; k * k];
        let mut put = |i: usize, j: usize, v: f64| {
            m[i * k + j] += v;
            if i != j {
                m[j * k + i] += v;
            }
        };
        for &(i, j, v) in &self.constant {
            put(i, j, v);
        }
        for (var, entries) in &self.terms {
            for &(i, j, v) in entries {
                put(i, j, v * x[*var]);
            }
        }
        m
    }

    fn canonicalize(&mut self) {
        fn merge(list: &mut Vec<(usize, usize, f64)>) {
            for t in list.iter_mut() {
                if t.0 > t.1 {
                    *t = (t.1, t.0, t.2);
                }
            }
            list.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
            let mut out: Vec<(usize, usize, f64)> = Vec::with_capacity(list.len());
            for &(i, j, v) in list.iter() {
                match out.last_mut() {
                    Some(last) if (last.0, last.1) == (i, j) => last.2 += v,
                    _ => out.push((i, j, v)),
                }
            }
            out.retain(|t| t.2 != 0.0);
            *list = out;
        }
        merge(&mut self.constant);
        self.terms.sort_by_key(|t| t.0);
        let mut merged: Vec<(usize, Vec<(usize, usize, f64)>)> = Vec::new();
        for (v, e) in self.terms.drain(..) {
            match merged.last_mut() {
                Some(last) if last.0 == v => last.1.extend(e),
                _ => merged.push((v, e)),
            }
        }
        for t in merged.iter_mut() {
            merge(&mut t.1);
        }
        merged.retain(|t| !t.1.is_empty());
        self.terms = merged;
    }
}

/// Block conic optimization problem over scalar variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConicProgram {
    pub num_vars: usize,
    pub sense: Sense,
    pub objective: Vec<(usize, f64)>,
    pub objective_constant: f64,
    pub equalities: Vec<LinearRow>,
    /// Rows of the form `terms . x <= rhs`.
    pub inequalities: Vec<LinearRow>,
    pub nonneg: Vec<usize>,
    pub psd_blocks: Vec<PsdBlock>,
}

impl ConicProgram {
    pub fn new(num_vars: usize, sense: Sense) -> Self {
        ConicProgram {
            num_vars,
            sense,
            objective: Vec::new(),
            objective_constant: 0.0,
            equalities: Vec::new(),
            inequalities: Vec::new(),
            nonneg: Vec::new(),
            psd_blocks: Vec::new(),
        }
    }

    pub fn add_equality(&mut self, terms: Vec<(usize, f64)>, rhs: f64) {
        self.equalities.push(LinearRow::new(terms, rhs));
    }

    pub fn add_inequality(&mut self, terms: Vec<(usize, f64)>, rhs: f64) {
        self.inequalities.push(LinearRow::new(terms, rhs));
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective_constant + self.objective.iter().map(|&(j, c)| c * x[j]).sum::<f64>()
    }

    /// Number of scalar inequality constraints, counting nonnegativity bounds.
    pub fn num_scalar_inequalities(&self) -> usize {
        self.inequalities.len() + self.nonneg.len()
    }

    /// Merges duplicate entries and checks indices and finiteness.
    pub fn canonicalize(&mut self) -> Result<(), ProgramError> {
        let n = self.num_vars;
        let check_var = |j: usize| {
            if j >= n {
                Err(ProgramError::VariableOutOfRange {
                    index: j,
                    num_vars: n,
                })
            } else {
                Ok(())
            }
        };
        let mut obj = LinearRow::new(std::mem::take(&mut self.objective), 0.0);
        obj.canonicalize();
        self.objective = obj.terms;
        for &(j, c) in &self.objective {
            check_var(j)?;
            if !c.is_finite() {
                return Err(ProgramError::NonFinite("objective".into()));
            }
        }
        for (kind, rows) in [
            ("equality", &mut self.equalities),
            ("inequality", &mut self.inequalities),
        ] {
            for row in rows.iter_mut() {
                row.canonicalize();
                if !row.rhs.is_finite() {
                    return Err(ProgramError::NonFinite(kind.into()));
                }
                for &(j, a) in &row.terms {
                    check_var(j)?;
                    if !a.is_finite() {
                        return Err(ProgramError::NonFinite(kind.into()));
                    }
                }
            }
        }
        self.nonneg.sort_unstable();
        self.nonneg.dedup();
        for &j in &self.nonneg {
            check_var(j)?;
        }
        for b in self.psd_blocks.iter_mut() {
            b.canonicalize();
            let all = b
                .constant
                .iter()
                .chain(b.terms.iter().flat_map(|t| t.1.iter()));
            for &(i, j, v) in all {
                if j >= b.order {
                    return Err(ProgramError::EntryOutOfRange {
                        i,
                        j,
                        order: b.order,
                    });
                }
                if !v.is_finite() {
                    return Err(ProgramError::NonFinite(b.label.clone()));
                }
            }
            for (v, _) in &b.terms {
                check_var(*v)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverSettings {
    pub max_iterations: usize,
    pub feasibility_tol: f64,
    pub gap_tol: f64,
    /// Looser tolerance applied to all three residuals when progress stalls.
    /// An iterate within it is reported as optimal instead of a failure.
    pub stall_tol: f64,
    pub step_fraction: f64,
    /// Print one progress line per iteration through `log::debug!`.
    pub verbose: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            max_iterations: 200,
            feasibility_tol: 1e-8,
            gap_tol: 1e-8,
            stall_tol: 1e-6,
            step_fraction: 0.98,
            verbose: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConicStatus {
    Optimal,
    /// The problem has no feasible point; backed by a Farkas certificate.
    PrimalInfeasible,
    /// The objective is unbounded; backed by an improving ray.
    DualInfeasible,
    /// Iteration limit reached without meeting the tolerances.
    NumericalFailure,
    /// The Newton system could not be factorized.
    IllConditioned,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Residuals {
    /// Relative primal infeasibility.
    pub primal: f64,
    /// Relative dual infeasibility.
    pub dual: f64,
    /// Absolute complementarity gap `<s, z>`.
    pub gap: f64,
    /// Relative duality gap, when defined.
    pub relative_gap: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConicSolution {
    pub status: ConicStatus,
    pub x: Vec<f64>,
    /// Multipliers of the equality rows.
    pub eq_duals: Vec<f64>,
    /// Multipliers of the inequality rows, then of the nonnegativity bounds.
    pub ineq_duals: Vec<f64>,
    /// Dual matrices of the PSD blocks, dense row-major.
    pub psd_duals: Vec<Vec<f64>>,
    /// Primal objective in the program's own sense (including the constant).
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub residuals: Residuals,
    pub iterations: usize,
}

impl ConicSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == ConicStatus::Optimal
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solve(p: &ConicProgram) -> ConicSolution {
        solve_conic(p, &SolverSettings::default()).unwrap()
    }

    #[test]
    fn scalar_psd_block() {
        // min x  s.t.  [x] >= 0
        let mut p = ConicProgram::new(1, Sense::Minimize);
        p.objective = vec![(0, 1.0)];
        p.psd_blocks
            .push(PsdBlock::from_entries(1, "x", vec![(0, 0, 0.0, vec![(0, 1.0)])]));
        let s = solve(&p);
        assert!(s.is_optimal(), "{:?}", s.status);
        assert!(s.primal_objective.abs() < 1e-7, "{}", s.primal_objective);
    }

    #[test]
    fn trace_with_fixed_entries() {
        // X = [[a, b], [b, c]], min a + c, a = 1, c = 1, b = 0.5
        let mut p = ConicProgram::new(3, Sense::Minimize);
        p.objective = vec![(0, 1.0), (2, 1.0)];
        p.psd_blocks.push(PsdBlock::from_entries(
            2,
            "X",
            vec![
                (0, 0, 0.0, vec![(0, 1.0)]),
                (0, 1, 0.0, vec![(1, 1.0)]),
                (1, 1, 0.0, vec![(2, 1.0)]),
            ],
        ));
        p.add_equality(vec![(0, 1.0)], 1.0);
        p.add_equality(vec![(2, 1.0)], 1.0);
        p.add_equality(vec![(1, 1.0)], 0.5);
        let s = solve(&p);
        assert!(s.is_optimal());
        assert!((s.primal_objective - 2.0).abs() < 1e-7);
    }

    #[test]
    fn max_eigenvalue_sdp() {
        // max <C, X>, tr X = 1, X >= 0  has value lambda_max(C).
        let cm = [[2.0, 1.0], [1.0, 3.0]];
        let mut p = ConicProgram::new(3, Sense::Maximize);
        p.objective = vec![(0, cm[0][0]), (1, 2.0 * cm[0][1]), (2, cm[1][1])];
        p.psd_blocks.push(PsdBlock::from_entries(
            2,
            "X",
            vec![
                (0, 0, 0.0, vec![(0, 1.0)]),
                (0, 1, 0.0, vec![(1, 1.0)]),
                (1, 1, 0.0, vec![(2, 1.0)]),
            ],
        ));
        p.add_equality(vec![(0, 1.0), (2, 1.0)], 1.0);
        let s = solve(&p);
        let expected = 2.5 + (1.25f64).sqrt();
        assert!(s.is_optimal());
        assert!((s.primal_objective - expected).abs() < 1e-7);
        assert!((s.dual_objective - expected).abs() < 1e-7);
    }

    #[test]
    fn lp_with_inequalities() {
        // max x + y, x + 2y <= 4, 3x + y <= 6, x, y >= 0  -> (1.6, 1.2), value 2.8
        let mut p = ConicProgram::new(2, Sense::Maximize);
        p.objective = vec![(0, 1.0), (1, 1.0)];
        p.add_inequality(vec![(0, 1.0), (1, 2.0)], 4.0);
        p.add_inequality(vec![(0, 3.0), (1, 1.0)], 6.0);
        p.nonneg = vec![0, 1];
        let s = solve(&p);
        assert!(s.is_optimal());
        assert!((s.primal_objective - 2.8).abs() < 1e-7);
        assert!((s.x[0] - 1.6).abs() < 1e-6 && (s.x[1] - 1.2).abs() < 1e-6);
    }

    #[test]
    fn detects_primal_infeasibility() {
        // x >= 0, x <= -1
        let mut p = ConicProgram::new(1, Sense::Minimize);
        p.objective = vec![(0, 1.0)];
        p.nonneg = vec![0];
        p.add_inequality(vec![(0, 1.0)], -1.0);
        assert_eq!(solve(&p).status, ConicStatus::PrimalInfeasible);

        // PSD block [[1, x], [x, 1]] with x = 2 is infeasible.
        let mut p = ConicProgram::new(1, Sense::Minimize);
        p.psd_blocks.push(PsdBlock::from_entries(
            2,
            "b",
            vec![
                (0, 0, 1.0, vec![]),
                (0, 1, 0.0, vec![(0, 1.0)]),
                (1, 1, 1.0, vec![]),
            ],
        ));
        p.add_equality(vec![(0, 1.0)], 2.0);
        assert_eq!(solve(&p).status, ConicStatus::PrimalInfeasible);
    }

    #[test]
    fn detects_unboundedness() {
        // min -x, x >= 0
        let mut p = ConicProgram::new(1, Sense::Minimize);
        p.objective = vec![(0, -1.0)];
        p.nonneg = vec![0];
        assert_eq!(solve(&p).status, ConicStatus::DualInfeasible);
    }

    #[test]
    fn rejects_bad_indices() {
        let mut p = ConicProgram::new(1, Sense::Minimize);
        p.objective = vec![(3, 1.0)];
        assert!(matches!(
            solve_conic(&p, &SolverSettings::default()),
            Err(ProgramError::VariableOutOfRange { .. })
        ));
    }

    #[test]
    fn long_inequality_rows_are_coupled() {
        // 100 nonnegative variables, sum <= 1 (a coupling row), maximize a
        // weighted sum: the optimum puts all mass on the largest weight.
        let n = 100;
        let mut p = ConicProgram::new(n, Sense::Maximize);
        p.objective = (0..n).map(|j| (j, 1.0 + j as f64 / n as f64)).collect();
        p.add_inequality((0..n).map(|j| (j, 1.0)).collect(), 1.0);
        p.nonneg = (0..n).collect();
        let s = solve(&p);
        assert!(s.is_optimal());
        assert!((s.primal_objective - 1.99).abs() < 1e-7);
    }
}
