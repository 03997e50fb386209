//! Inner hierarchy: the unknown measure is replaced by a density
//! `h(x) = b(x)^T G b(x)` with `G` positive semidefinite, against the
//! reference measure `exp(-sum x_i) dx` on the nonnegative orthant.
//!
//! Equality constraints are relaxed to `|integral - rhs| <= epsilon`, since an
//! SOS density generally cannot match them exactly. All integrals reduce to
//! the closed-form tail moments [`exp_tail_moment`], so every integrand must
//! be a polynomial times an indicator of one axis-aligned halfspace
//! `x_a >= k`. Payoffs whose kinks are not axis aligned (baskets and
//! calls on max with more than one asset) are rejected.
//!
//! Before assembly all coordinates are divided by a normalization constant
//! `S` (the largest strike by default). Prices, strikes, moment right-hand
//! sides and the unit mass are all divided by `S` as well; the objective is
//! multiplied back by `S`.

use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{payoff_pieces, GmpProblem, Relation};
use crate::poly::{MonomialBasis, Polynomial};
use crate::relaxation::{BoundReport, BoundStatus, Direction, ProgramStats};
use crate::solver::{
    solve_conic, ConicProgram, ConicStatus, ProgramError, PsdBlock, Sense, SolverSettings,
};

/// Upper limit for the minimal feasible epsilon.
pub const EPSILON_CAP: f64 = 1e6;

/// Default tolerance of [`min_feasible_epsilon`].
pub const DEFAULT_EPSILON_TOL: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InnerError {
    #[error("invalid instance: {0}")]
    Invalid(String),
    #[error("unsupported integrand: {0}")]
    Unsupported(String),
    #[error("tail moment of order {0} overflows")]
    Overflow(u32),
    #[error("no feasible epsilon below {cap}")]
    InfeasibleAtCap { cap: f64 },
    #[error("solver failed: {0}")]
    Solver(String),
    #[error(transparent)]
    Program(#[from] ProgramError),
}

/// `integral_k^inf x^m exp(-x) dx = exp(-k) sum_{l<=m} m!/l! k^l`.
///
/// Evaluated with the recursion `I_m = m I_{m-1} + k^m exp(-k)`, which has
/// only positive terms and fails only when the value itself overflows.
pub fn exp_tail_moment(m: u32, k: f64) -> Result<f64, InnerError> {
    assert!(k >= 0.0, "lower limit must be nonnegative");
    let ek = (-k).exp();
    let mut acc = ek;
    let mut kp = ek;
    for j in 1..=m {
        kp *= k;
        acc = j as f64 * acc + kp;
    }
    if acc.is_finite() {
        Ok(acc)
    } else {
        Err(InnerError::Overflow(m))
    }
}

/// Laguerre polynomial `L_m(x) = sum_i C(m, i) (-1)^i / i! x^i`.
pub fn laguerre_coefficients(m: u32) -> Polynomial {
    let mut p = Polynomial::zero(1);
    let mut binom = 1.0f64;
    let mut fact = 1.0f64;
    for i in 0..=m {
        if i > 0 {
            binom *= (m - i + 1) as f64 / i as f64;
            fact *= i as f64;
        }
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        p.add_term(crate::poly::MultiIndex::new(vec![i]), sign * binom / fact);
    }
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InnerBasis {
    Monomial,
    Laguerre,
}

/// One inner-hierarchy problem.
#[derive(Debug, Clone)]
pub struct InnerInstance {
    pub problem: GmpProblem,
    /// Degree of the basis vector `b(x)`; `h` has degree `2r`.
    pub r: u32,
    pub epsilon: f64,
    pub basis: InnerBasis,
    /// Coordinates and data are divided by this before assembly.
    pub normalization: f64,
}

impl InnerInstance {
    /// Instance normalized by the largest strike (options and payoff).
    pub fn new(problem: GmpProblem, r: u32, epsilon: f64, basis: InnerBasis) -> Self {
        let s = problem
            .options
            .iter()
            .map(|o| o.strike)
            .chain(std::iter::once(problem.payoff.strike))
            .fold(0.0f64, f64::max);
        let normalization = if s > 0.0 { s } else { 1.0 };
        InnerInstance {
            problem,
            r,
            epsilon,
            basis,
            normalization,
        }
    }

    fn validate(&self) -> Result<(), InnerError> {
        if self.r < 1 {
            return Err(InnerError::Invalid("r must be >= 1".into()));
        }
        if !(self.epsilon >= 0.0) {
            return Err(InnerError::Invalid("epsilon must be >= 0".into()));
        }
        if !(self.normalization > 0.0 && self.normalization.is_finite()) {
            return Err(InnerError::Invalid("normalization must be > 0".into()));
        }
        Ok(())
    }
}

/// Polynomial times the indicator of `x_axis >= k` (no indicator if `None`).
#[derive(Debug, Clone)]
struct Integrand {
    poly: Polynomial,
    halfspace: Option<(usize, f64)>,
}

// Relation between the integral and its right-hand side.
#[derive(Debug, Clone, Copy, PartialEq)]
enum RowKind {
    /// `|integral - rhs| <= epsilon`
    Relaxed,
    /// `integral <= rhs + epsilon`
    RelaxedLe,
    /// `integral <= rhs`
    Hard,
}

#[derive(Debug, Clone)]
struct InnerData {
    objective: Integrand,
    rows: Vec<(Integrand, f64, RowKind)>,
}

fn normalized_data(inst: &InnerInstance) -> Result<InnerData, InnerError> {
    let p = &inst.problem;
    let n = p.n;
    let s = inst.normalization;

    let pieces = payoff_pieces(&p.payoff, n);
    if pieces.len() != 1 {
        return Err(InnerError::Unsupported(
            "payoff with several pieces has non-axis-aligned kinks".into(),
        ));
    }
    let piece = &pieces[0].piece;
    let axis = piece.axis().ok_or_else(|| {
        InnerError::Unsupported("payoff kink is not axis aligned".into())
    })?;
    let w = piece.coeffs[axis];
    let objective = Integrand {
        poly: Polynomial::affine(&piece.coeffs, piece.offset / s),
        halfspace: Some((axis, -piece.offset / (w * s))),
    };

    let mut rows = Vec::new();
    for o in &p.options {
        let f = o.piece(n);
        rows.push((
            Integrand {
                poly: Polynomial::affine(&f.coeffs, f.offset / s),
                halfspace: Some((o.asset, o.strike / s)),
            },
            o.price / s,
            RowKind::Relaxed,
        ));
    }
    for mc in &p.moments {
        let deg = mc.f.degree() as i32;
        let div = s.powi(deg);
        let f = mc.f.rescale_vars(s).scale(1.0 / div);
        let kind = match mc.relation {
            Relation::Eq => RowKind::Relaxed,
            Relation::Le => RowKind::RelaxedLe,
        };
        rows.push((
            Integrand {
                poly: f,
                halfspace: None,
            },
            mc.rhs / div,
            kind,
        ));
    }
    rows.push((
        Integrand {
            poly: Polynomial::constant(n, 1.0),
            halfspace: None,
        },
        1.0 / s,
        RowKind::Relaxed,
    ));
    if p.has_cap() {
        rows.push((
            Integrand {
                poly: Polynomial::norm_power(n, p.d),
                halfspace: None,
            },
            p.moment_cap / s.powi(p.d as i32),
            RowKind::Hard,
        ));
    }
    Ok(InnerData { objective, rows })
}

/// Basis polynomials `b_i` of degree `<= r` in graded-lex order.
pub fn basis_polynomials(n: usize, r: u32, basis: InnerBasis) -> Vec<Polynomial> {
    let mb = MonomialBasis::new(n, r);
    mb.monomials()
        .iter()
        .map(|alpha| match basis {
            InnerBasis::Monomial => {
                Polynomial::from_terms(n, std::iter::once((alpha.clone(), 1.0)))
            }
            InnerBasis::Laguerre => {
                let mut acc = Polynomial::constant(n, 1.0);
                for (i, &e) in alpha.exponents().iter().enumerate() {
                    let l = laguerre_coefficients(e);
                    let lifted = Polynomial::from_terms(
                        n,
                        l.terms().map(|(a, c)| {
                            let mut ex = vec![0; n];
                            ex[i] = a.exponents()[0];
                            (crate::poly::MultiIndex::new(ex), c)
                        }),
                    );
                    acc = &acc * &lifted;
                }
                acc
            }
        })
        .collect()
}

// Integral of `poly * 1{x_a >= k}` against exp(-sum x) on the orthant.
fn integrate(poly: &Polynomial, halfspace: Option<(usize, f64)>) -> Result<f64, InnerError> {
    let mut total = 0.0;
    for (alpha, c) in poly.terms() {
        let mut v = c;
        for (i, &e) in alpha.exponents().iter().enumerate() {
            let k = match halfspace {
                Some((a, k)) if a == i => k.max(0.0),
                _ => 0.0,
            };
            v *= exp_tail_moment(e, k)?;
        }
        total += v;
    }
    Ok(total)
}

// Matrix `Q` with `<Q, G> = integral of integrand * b^T G b`.
fn gram_functional(
    f: &Integrand,
    basis: &[Polynomial],
) -> Result<DMatrix<f64>, InnerError> {
    let m = basis.len();
    let mut q = DMatrix::zeros(m, m);
    for i in 0..m {
        let fi = &f.poly * &basis[i];
        for j in i..m {
            let v = integrate(&(&fi * &basis[j]), f.halfspace)?;
            q[(i, j)] = v;
            q[(j, i)] = v;
        }
    }
    Ok(q)
}

/// Assembled inner program. Variables are the upper triangle of `G`,
/// row by row.
#[derive(Debug, Clone)]
pub struct InnerProgram {
    pub program: ConicProgram,
    pub basis: Vec<Polynomial>,
    pub normalization: f64,
    pub stats: ProgramStats,
}

fn var_index(m: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * m - i * (i + 1) / 2 + j
}

fn linear_form(q: &DMatrix<f64>) -> Vec<(usize, f64)> {
    let m = q.nrows();
    let mut terms = Vec::with_capacity(m * (m + 1) / 2);
    for i in 0..m {
        for j in i..m {
            let c = if i == j { q[(i, j)] } else { 2.0 * q[(i, j)] };
            if c != 0.0 {
                terms.push((var_index(m, i, j), c));
            }
        }
    }
    terms
}

// Shared skeleton: Gram block and the constraint forms.
fn skeleton(
    inst: &InnerInstance,
    sense: Sense,
) -> Result<(ConicProgram, Vec<Polynomial>, InnerData, Vec<Vec<(usize, f64)>>), InnerError> {
    inst.validate()?;
    let data = normalized_data(inst)?;
    let basis = basis_polynomials(inst.problem.n, inst.r, inst.basis);
    let m = basis.len();
    let nv = m * (m + 1) / 2;
    let mut prog = ConicProgram::new(nv, sense);
    let mut entries = Vec::with_capacity(nv);
    for i in 0..m {
        for j in i..m {
            entries.push((i, j, 0.0, vec![(var_index(m, i, j), 1.0)]));
        }
    }
    prog.psd_blocks
        .push(PsdBlock::from_entries(m, "gram".to_string(), entries));
    let mut forms = Vec::with_capacity(data.rows.len());
    for (f, _, _) in &data.rows {
        forms.push(linear_form(&gram_functional(f, &basis)?));
    }
    Ok((prog, basis, data, forms))
}

fn stats_of(prog: &ConicProgram) -> ProgramStats {
    ProgramStats {
        cells: 1,
        variables: prog.num_vars,
        psd_blocks: prog.psd_blocks.len(),
        equalities: prog.equalities.len(),
        inequalities: prog.num_scalar_inequalities(),
        max_block_order: prog.psd_blocks.iter().map(|b| b.order).max().unwrap_or(0),
    }
}

/// Builds the epsilon-relaxed inner program for one direction.
pub fn assemble_inner(inst: &InnerInstance, direction: Direction) -> Result<InnerProgram, InnerError> {
    let (mut prog, basis, data, forms) = skeleton(inst, direction.sense())?;
    let eps = inst.epsilon;
    for ((_, rhs, kind), terms) in data.rows.iter().zip(forms) {
        match kind {
            RowKind::Relaxed => {
                let neg = terms.iter().map(|&(j, c)| (j, -c)).collect();
                prog.add_inequality(terms, rhs + eps);
                prog.add_inequality(neg, eps - rhs);
            }
            RowKind::RelaxedLe => prog.add_inequality(terms, rhs + eps),
            RowKind::Hard => prog.add_inequality(terms, *rhs),
        }
    }
    prog.objective = linear_form(&gram_functional(&data.objective, &basis)?);
    let stats = stats_of(&prog);
    Ok(InnerProgram {
        program: prog,
        basis,
        normalization: inst.normalization,
        stats,
    })
}

/// Smallest epsilon for which the relaxed inner program is feasible, plus
/// `tol / 2`.
///
/// Solves the phase-one program `min t` subject to `|<Q_i, G> - rhs_i| <= t`
/// and `G >= 0`, whose optimal value is exactly the feasibility threshold.
/// The returned value is therefore feasible, and anything `2 tol` below it
/// is not.
pub fn min_feasible_epsilon(inst: &InnerInstance, tol: f64) -> Result<f64, InnerError> {
    if !(tol > 0.0) {
        return Err(InnerError::Invalid("tol must be > 0".into()));
    }
    let (mut prog, _, data, forms) = skeleton(inst, Sense::Minimize)?;
    let t = prog.num_vars;
    prog.num_vars += 1;
    prog.nonneg.push(t);
    prog.objective = vec![(t, 1.0)];
    for ((_, rhs, kind), mut terms) in data.rows.iter().zip(forms) {
        match kind {
            RowKind::Relaxed => {
                let mut neg: Vec<(usize, f64)> = terms.iter().map(|&(j, c)| (j, -c)).collect();
                terms.push((t, -1.0));
                neg.push((t, -1.0));
                prog.add_inequality(terms, *rhs);
                prog.add_inequality(neg, -rhs);
            }
            RowKind::RelaxedLe => {
                terms.push((t, -1.0));
                prog.add_inequality(terms, *rhs);
            }
            RowKind::Hard => prog.add_inequality(terms, *rhs),
        }
    }
    prog.add_inequality(vec![(t, 1.0)], EPSILON_CAP);
    let sol = solve_conic(&prog, &SolverSettings::default())?;
    match sol.status {
        ConicStatus::Optimal => {
            let eps = sol.x[t].max(0.0) + 0.5 * tol;
            if eps > EPSILON_CAP {
                Err(InnerError::InfeasibleAtCap { cap: EPSILON_CAP })
            } else {
                Ok(eps)
            }
        }
        ConicStatus::PrimalInfeasible => Err(InnerError::InfeasibleAtCap { cap: EPSILON_CAP }),
        s => Err(InnerError::Solver(format!("{s:?}"))),
    }
}

/// Solution of the inner program.
#[derive(Debug, Clone)]
pub struct InnerResult {
    pub report: BoundReport,
    pub epsilon: f64,
    /// Gram matrix in normalized coordinates, when optimal.
    pub gram: Option<DMatrix<f64>>,
    pub basis: Vec<Polynomial>,
    pub normalization: f64,
}

impl InnerResult {
    /// Density `h` at a point in original (unnormalized) coordinates.
    pub fn density(&self, x: &[f64]) -> Option<f64> {
        let g = self.gram.as_ref()?;
        let xs: Vec<f64> = x.iter().map(|v| v / self.normalization).collect();
        let b = nalgebra::DVector::from_iterator(
            self.basis.len(),
            self.basis.iter().map(|p| p.eval(&xs)),
        );
        Some((b.transpose() * g * &b)[(0, 0)])
    }
}

/// Solves the epsilon-relaxed inner program in one direction.
pub fn solve_inner(inst: &InnerInstance, direction: Direction) -> Result<InnerResult, InnerError> {
    let start = Instant::now();
    let ip = assemble_inner(inst, direction)?;
    let sol = solve_conic(&ip.program, &SolverSettings::default())?;
    let status = BoundStatus::from_conic(sol.status);
    let s = ip.normalization;
    let m = ip.basis.len();
    let (value, gap, gram) = if status == BoundStatus::Optimal {
        let g = DMatrix::from_fn(m, m, |i, j| sol.x[var_index(m, i, j)]);
        (
            sol.primal_objective * s,
            (sol.primal_objective - sol.dual_objective).abs() * s,
            Some(g),
        )
    } else {
        (f64::NAN, f64::NAN, None)
    };
    Ok(InnerResult {
        report: BoundReport {
            direction,
            level: inst.r,
            strike: inst.problem.payoff.strike,
            value,
            status,
            duality_gap: gap,
            wall_time: start.elapsed().as_secs_f64(),
            stats: ip.stats,
        },
        epsilon: inst.epsilon,
        gram,
        basis: ip.basis,
        normalization: s,
    })
}
