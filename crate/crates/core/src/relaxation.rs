//! Level-`r` outer moment relaxation over the cell partition.
//!
//! Each cell carries its own measure, represented by moments `y_alpha` up to
//! the truncation degree `t`. The measure is constrained by a PSD moment
//! matrix of order `r`, one PSD localizing matrix per cell-defining
//! polynomial, and elementwise nonnegativity of all moments. Observed prices
//! and moment data are matched by summing the per-cell Riesz functionals over
//! the relevant active sets.
//!
//! All data are divided by `B` before assembly so that every cell lies in
//! `[0, 1]^n`; the reported bound is scaled back.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{GmpProblem, ModelError, Relation};
use crate::partition::{build_cells, cell_localizers, Partition, PartitionError};
use crate::poly::{MonomialBasis, MultiIndex, Polynomial};
use crate::solver::{
    solve_conic, ConicProgram, ConicSolution, ConicStatus, ProgramError, PsdBlock, Sense,
    SolverSettings,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RelaxError {
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Program(#[from] ProgramError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("level must be >= 1")]
    InvalidLevel,
    #[error("degree overflow: localizer of degree {degree} does not fit truncation degree {t}")]
    DegreeOverflow { degree: u32, t: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Lower,
    Upper,
}

impl Direction {
    pub fn sense(self) -> Sense {
        match self {
            Direction::Lower => Sense::Minimize,
            Direction::Upper => Sense::Maximize,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Lower => "lower",
            Direction::Upper => "upper",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

impl BoundStatus {
    pub fn from_conic(s: ConicStatus) -> Self {
        match s {
            ConicStatus::Optimal => BoundStatus::Optimal,
            ConicStatus::PrimalInfeasible => BoundStatus::Infeasible,
            ConicStatus::DualInfeasible => BoundStatus::Unbounded,
            ConicStatus::NumericalFailure | ConicStatus::IllConditioned => {
                BoundStatus::NumericalFailure
            }
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BoundStatus::Optimal => "optimal",
            BoundStatus::Infeasible => "infeasible",
            BoundStatus::Unbounded => "unbounded",
            BoundStatus::NumericalFailure => "numerical-failure",
        }
    }
}

/// Sizes of an assembled program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgramStats {
    pub cells: usize,
    pub variables: usize,
    pub psd_blocks: usize,
    pub equalities: usize,
    /// Scalar inequalities, counting nonnegativity bounds.
    pub inequalities: usize,
    /// Largest PSD block order.
    pub max_block_order: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub direction: Direction,
    pub level: u32,
    pub strike: f64,
    /// Finite iff `status` is optimal.
    pub value: f64,
    pub status: BoundStatus,
    pub duality_gap: f64,
    pub wall_time: f64,
    pub stats: ProgramStats,
}

/// Assembled outer relaxation together with the data needed to interpret it.
#[derive(Debug, Clone)]
pub struct OuterProgram {
    pub program: ConicProgram,
    pub partition: Partition,
    /// Local frame of each cell.
    pub frames: Vec<CellFrame>,
    /// Objective multiplier that undoes the normalization.
    pub scale: f64,
    /// Moment truncation degree.
    pub t: u32,
    pub basis: MonomialBasis,
    pub stats: ProgramStats,
}

impl OuterProgram {
    /// Moment vector of cell `i` (0-based) in the cell's local frame.
    pub fn cell_moments<'a>(&self, x: &'a [f64], i: usize) -> &'a [f64] {
        let nb = self.basis.len();
        &x[i * nb..(i + 1) * nb]
    }
}

/// `t(r) = 2r + 2 ceil(d_max / 2)`.
pub fn truncation_degree(p: &GmpProblem, r: u32) -> u32 {
    let d_max = p.max_degree();
    2 * r + 2 * d_max.div_ceil(2)
}

/// Degree of the moment variables actually used: `t(r)`, raised to the
/// moment-cap exponent `d` when a cap is present and `d > t(r)`.
pub fn moment_degree(p: &GmpProblem, r: u32) -> u32 {
    let t = truncation_degree(p, r);
    if p.has_cap() {
        t.max(p.d)
    } else {
        t
    }
}

// Linear terms of L_i(f) for a polynomial in normalized coordinates.
fn riesz_terms(f: &Polynomial, basis: &MonomialBasis, offset: usize) -> Vec<(usize, f64)> {
    f.terms()
        .map(|(a, c)| {
            let pos = basis
                .position(a)
                .expect("polynomial degree within truncation degree");
            (offset + pos, c)
        })
        .collect()
}

/// `f(B x) / B^deg(f)`: the polynomial in normalized coordinates, divided by
/// the scale factor matching its degree.
fn normalize_poly(f: &Polynomial, b: f64) -> (Polynomial, f64) {
    let deg = f.degree();
    let div = b.powi(deg as i32);
    (f.rescale_vars(b).scale(1.0 / div), div)
}

fn localizer_block(
    g: &Polynomial,
    basis: &MonomialBasis,
    offset: usize,
    order: u32,
    label: String,
) -> PsdBlock {
    let rows = &basis.monomials()[..basis.prefix_len(order)];
    let k = rows.len();
    let mut entries = Vec::with_capacity(k * (k + 1) / 2);
    for i in 0..k {
        for j in i..k {
            let ab = rows[i].add(&rows[j]);
            let lin: Vec<(usize, f64)> = g
                .terms()
                .map(|(gamma, c)| {
                    let idx: MultiIndex = ab.add(gamma);
                    (offset + basis.position(&idx).expect("within degree"), c)
                })
                .collect();
            entries.push((i, j, 0.0, lin));
        }
    }
    PsdBlock::from_entries(k, label, entries)
}

// Largest value of `g` over the points of `[-1, 1]^n` whose coordinates are
// -1, 0 or 1. This is the exact maximum for affine functions and for
// products of the form `1 - u_i^2`.
fn cube_max(g: &Polynomial) -> f64 {
    let n = g.nvars();
    let mut best = f64::NEG_INFINITY;
    let mut idx = vec![0usize; n];
    let mut u = vec![0.0; n];
    loop {
        for i in 0..n {
            u[i] = idx[i] as f64 - 1.0;
        }
        best = best.max(g.eval(&u));
        let mut k = 0;
        while k < n && idx[k] == 2 {
            idx[k] = 0;
            k += 1;
        }
        if k == n {
            break;
        }
        idx[k] += 1;
    }
    if best > 0.0 {
        best
    } else {
        g.terms().fold(0.0f64, |m, (_, c)| m.max(c.abs())).max(f64::MIN_POSITIVE)
    }
}

/// Affine map from the cell box to `[-1, 1]^n` in normalized coordinates:
/// `x / B = center + half * u`.
#[derive(Debug, Clone)]
pub struct CellFrame {
    pub center: Vec<f64>,
    pub half: Vec<f64>,
}

impl CellFrame {
    fn new(lo: &[f64], hi: &[f64], b: f64) -> CellFrame {
        CellFrame {
            center: lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h) / b).collect(),
            half: lo.iter().zip(hi).map(|(l, h)| 0.5 * (h - l) / b).collect(),
        }
    }

    /// A polynomial in normalized coordinates, rewritten in local ones.
    pub fn localize(&self, f: &Polynomial) -> Polynomial {
        f.affine_substitute(&self.center, &self.half)
    }
}

/// Assembles the level-`r` outer relaxation on a given partition.
///
/// Each cell's moments are taken in its own frame (the cell box mapped onto
/// `[-1, 1]^n`), which keeps the moment matrices of thin cells well scaled.
/// Every constraint is the same linear functional as in normalized
/// coordinates; only the variables differ by an invertible linear map.
pub fn assemble_outer(
    p: &GmpProblem,
    part: &Partition,
    r: u32,
    direction: Direction,
) -> Result<OuterProgram, RelaxError> {
    if r < 1 {
        return Err(RelaxError::InvalidLevel);
    }
    let n = p.n;
    let b = p.box_bound;
    let t = moment_degree(p, r);
    let basis = MonomialBasis::new(n, t);
    let nb = basis.len();
    let ncells = part.cells.len();
    let frames: Vec<CellFrame> = part
        .cells
        .iter()
        .map(|c| CellFrame::new(&c.lo, &c.hi, b))
        .collect();
    let cell_terms = |f: &Polynomial, i: usize| riesz_terms(&frames[i].localize(f), &basis, i * nb);
    let mut prog = ConicProgram::new(ncells * nb, direction.sense());

    // Objective: sum over J_0 of L_i(active piece / B) in normalized coordinates.
    for cell in &part.cells {
        if let Some(k) = cell.active_objective_piece {
            let piece = &part.pieces[k];
            let f = Polynomial::affine(&piece.coeffs, piece.offset / b);
            prog.objective.extend(cell_terms(&f, cell.id - 1));
        }
    }

    // Observed option prices.
    for (j, o) in p.options.iter().enumerate() {
        let f = o.piece(n).to_polynomial().rescale_vars(b).scale(1.0 / b);
        let mut terms = Vec::new();
        for &id in &part.active_sets.options[j] {
            terms.extend(cell_terms(&f, id - 1));
        }
        prog.add_equality(terms, o.price / b);
    }

    // Polynomial moment constraints over all cells.
    for mc in &p.moments {
        let (f, div) = normalize_poly(&mc.f, b);
        let mut terms = Vec::new();
        for i in 0..ncells {
            terms.extend(cell_terms(&f, i));
        }
        match mc.relation {
            Relation::Eq => prog.add_equality(terms, mc.rhs / div),
            Relation::Le => prog.add_inequality(terms, mc.rhs / div),
        }
    }

    // Normalization.
    let one = Polynomial::constant(n, 1.0);
    prog.add_equality((0..ncells).flat_map(|i| cell_terms(&one, i)).collect(), 1.0);

    // Moment cap on ||x||^d.
    if p.has_cap() {
        let f = Polynomial::norm_power(n, p.d);
        let terms = (0..ncells).flat_map(|i| cell_terms(&f, i)).collect();
        prog.add_inequality(terms, p.moment_cap / b.powi(p.d as i32));
    }

    // Nonnegativity of every moment in normalized coordinates.
    for i in 0..ncells {
        for alpha in basis.monomials() {
            let mono = Polynomial::from_terms(n, [(alpha.clone(), -1.0)]);
            prog.add_inequality(cell_terms(&mono, i), 0.0);
        }
    }

    // PSD blocks: moment matrix and localizers per cell.
    let per_cell: Vec<Result<Vec<PsdBlock>, RelaxError>> = part
        .cells
        .par_iter()
        .map(|cell| {
            let i = cell.id - 1;
            let off = i * nb;
            let mut blocks = vec![localizer_block(
                &Polynomial::constant(n, 1.0),
                &basis,
                off,
                r,
                format!("cell{}:moment", cell.id),
            )];
            for (li, g) in cell_localizers(cell).iter().enumerate() {
                let g = frames[i].localize(&g.rescale_vars(b));
                let dg = g.degree();
                if dg > t {
                    return Err(RelaxError::DegreeOverflow { degree: dg, t });
                }
                let g = g.scale(1.0 / cube_max(&g));
                let order = (t - dg) / 2;
                blocks.push(localizer_block(
                    &g,
                    &basis,
                    off,
                    order,
                    format!("cell{}:loc{}", cell.id, li + 1),
                ));
            }
            Ok(blocks)
        })
        .collect();
    for blocks in per_cell {
        prog.psd_blocks.extend(blocks?);
    }

    let stats = ProgramStats {
        cells: ncells,
        variables: prog.num_vars,
        psd_blocks: prog.psd_blocks.len(),
        equalities: prog.equalities.len(),
        inequalities: prog.num_scalar_inequalities(),
        max_block_order: prog.psd_blocks.iter().map(|b| b.order).max().unwrap_or(0),
    };
    Ok(OuterProgram {
        program: prog,
        partition: part.clone(),
        frames,
        scale: b,
        t,
        basis,
        stats,
    })
}

/// Builds the partition and assembles the relaxation.
pub fn build_outer(p: &GmpProblem, r: u32, direction: Direction) -> Result<OuterProgram, RelaxError> {
    let part = build_cells(p)?;
    assemble_outer(p, &part, r, direction)
}

/// Interprets a conic solution of an assembled program as a bound report.
pub fn report_from_solution(
    p: &GmpProblem,
    op: &OuterProgram,
    sol: &ConicSolution,
    r: u32,
    direction: Direction,
    wall_time: f64,
) -> BoundReport {
    let status = BoundStatus::from_conic(sol.status);
    let (value, gap) = if status == BoundStatus::Optimal {
        (
            sol.primal_objective * op.scale,
            (sol.primal_objective - sol.dual_objective).abs() * op.scale,
        )
    } else {
        (f64::NAN, f64::NAN)
    };
    BoundReport {
        direction,
        level: r,
        strike: p.payoff.strike,
        value,
        status,
        duality_gap: gap,
        wall_time,
        stats: op.stats,
    }
}

/// Solves the level-`r` outer relaxation in one direction.
pub fn solve_outer(p: &GmpProblem, r: u32, direction: Direction) -> Result<BoundReport, RelaxError> {
    solve_outer_with(p, r, direction, &SolverSettings::default())
}

pub fn solve_outer_with(
    p: &GmpProblem,
    r: u32,
    direction: Direction,
    settings: &SolverSettings,
) -> Result<BoundReport, RelaxError> {
    let start = Instant::now();
    let op = build_outer(p, r, direction)?;
    let sol = solve_conic(&op.program, settings)?;
    Ok(report_from_solution(
        p,
        &op,
        &sol,
        r,
        direction,
        start.elapsed().as_secs_f64(),
    ))
}

/// Lower and upper bound for one strike.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundPair {
    pub strike: f64,
    pub lower: BoundReport,
    pub upper: BoundReport,
}

/// Solves both directions for every strike independently (in parallel).
/// Per-strike failures are returned inline.
pub fn sweep_strikes(
    p: &GmpProblem,
    strikes: &[f64],
    r: u32,
) -> Vec<(f64, Result<BoundPair, RelaxError>)> {
    strikes
        .par_iter()
        .map(|&k| {
            let res = (|| {
                let q = revalidate(p.with_strike(k))?;
                let part = build_cells(&q)?;
                let one = |dir: Direction| -> Result<BoundReport, RelaxError> {
                    let start = Instant::now();
                    let op = assemble_outer(&q, &part, r, dir)?;
                    let sol = solve_conic(&op.program, &SolverSettings::default())?;
                    Ok(report_from_solution(
                        &q,
                        &op,
                        &sol,
                        r,
                        dir,
                        start.elapsed().as_secs_f64(),
                    ))
                };
                let (lower, upper) = rayon::join(|| one(Direction::Lower), || one(Direction::Upper));
                Ok(BoundPair {
                    strike: k,
                    lower: lower?,
                    upper: upper?,
                })
            })();
            (k, res)
        })
        .collect()
}

// Re-runs configuration validation after a change of payoff strike.
fn revalidate(p: GmpProblem) -> Result<GmpProblem, RelaxError> {
    let cfg = p.to_config();
    let mut q = crate::model::from_config(cfg)?;
    q.box_bound = p.box_bound;
    q.box_bound_user = p.box_bound_user;
    Ok(q)
}
