//! Partition of `[0, B]^n` into cells on which every max-type function of the
//! problem (payoff and observed option payoffs) is a single affine function.
//!
//! The grid of per-asset strikes is intersected with the activation regions
//! of the payoff: the zero region (every payoff piece `<= 0`) and, for each
//! piece, the region where it is nonnegative and maximal. Axis-aligned
//! halfspaces tighten the box; the others are kept as cell constraints.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::model::{payoff_pieces, Affine, GmpProblem, PayoffKind, PayoffPiece, PayoffSpec};
use crate::poly::Polynomial;
use crate::solver::{solve_conic, ConicProgram, Sense, SolverSettings};

/// Default limit on the number of cells.
pub const DEFAULT_CELL_LIMIT: usize = 1_000_000;

/// Cells narrower than this fraction of `B` are dropped.
pub const SLIVER_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PartitionError {
    #[error("partition would exceed {limit} cells")]
    PartitionOverflow { limit: usize },
    #[error("validation error: {0}")]
    Validation(String),
}

/// One closed cell `{lo <= x <= hi} ∩ {h(x) >= 0 for h in halfspaces}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    /// 1-based, in deterministic order.
    pub id: usize,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub halfspaces: Vec<Affine>,
    /// 0 for the zero region, `k + 1` for payoff piece `k`.
    pub region: usize,
    pub active_objective_piece: Option<usize>,
    /// Indices of the options whose payoff is positive on the cell.
    pub active_options: Vec<usize>,
    pub interior_point: Vec<f64>,
}

impl Cell {
    /// Whether `x` satisfies the cell's constraints up to `tol`.
    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (l, h))| *v >= l - tol && *v <= h + tol)
            && self.halfspaces.iter().all(|h| h.eval(x) >= -tol)
    }

    /// Whether `x` is strictly inside the cell by a margin `tol`.
    pub fn contains_interior(&self, x: &[f64], tol: f64) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (l, h))| *v > l + tol && *v < h - tol)
            && self.halfspaces.iter().all(|h| h.eval(x) > tol)
    }
}

/// Per-constraint active sets: the ids of cells on which the constraint's
/// affine piece is nonnegative.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActiveSets {
    pub objective: Vec<usize>,
    /// One entry per observed option, in problem order.
    pub options: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Partition {
    pub n: usize,
    pub box_bound: f64,
    pub cells: Vec<Cell>,
    pub active_sets: ActiveSets,
    /// `(asset, strike)` of each option, in the order of `active_sets.options`.
    pub option_labels: Vec<(usize, f64)>,
    /// Affine payoff pieces, indexed by `Cell::active_objective_piece`.
    pub pieces: Vec<Affine>,
}

impl Partition {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Index of the first cell whose closure contains `x`.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        let tol = 1e-12 * self.box_bound;
        self.cells.iter().position(|c| c.contains(x, tol))
    }
}

/// Segments `[0, B]` at every strike and at `K`.
pub fn segment_univariate(strikes: &[f64], k: f64, b: f64) -> Result<Partition, PartitionError> {
    if let Some(s) = strikes.iter().find(|s| **s >= b) {
        return Err(PartitionError::Validation(format!("strike {s} >= B = {b}")));
    }
    if !(0.0..b).contains(&k) {
        return Err(PartitionError::Validation(format!("K = {k} outside [0, B)")));
    }
    let mut cuts: Vec<f64> = strikes.iter().cloned().chain([k]).filter(|c| *c > 0.0).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut points = vec![0.0];
    points.extend(cuts);
    points.push(b);
    let mut cells = Vec::new();
    for w in points.windows(2) {
        if w[1] - w[0] < SLIVER_TOL * b {
            continue;
        }
        let mid = 0.5 * (w[0] + w[1]);
        let on_payoff = mid > k;
        cells.push(Cell {
            id: cells.len() + 1,
            lo: vec![w[0]],
            hi: vec![w[1]],
            halfspaces: vec![],
            region: usize::from(on_payoff),
            active_objective_piece: if on_payoff { Some(0) } else { None },
            active_options: strikes
                .iter()
                .enumerate()
                .filter(|(_, s)| mid > **s)
                .map(|(i, _)| i)
                .collect(),
            interior_point: vec![mid],
        });
    }
    let active_sets = ActiveSets {
        objective: cells
            .iter()
            .filter(|c| c.active_objective_piece.is_some())
            .map(|c| c.id)
            .collect(),
        options: (0..strikes.len())
            .map(|i| {
                cells
                    .iter()
                    .filter(|c| c.active_options.contains(&i))
                    .map(|c| c.id)
                    .collect()
            })
            .collect(),
    };
    Ok(Partition {
        n: 1,
        box_bound: b,
        cells,
        active_sets,
        option_labels: strikes.iter().map(|s| (0, *s)).collect(),
        pieces: vec![Affine::new(vec![1.0], -k)],
    })
}

/// Builds the partition for `p` with the default cell limit.
pub fn build_cells(p: &GmpProblem) -> Result<Partition, PartitionError> {
    build_cells_with_limit(p, DEFAULT_CELL_LIMIT)
}

/// Activation regions: index 0 is the zero region, `k + 1` is piece `k`.
fn regions(payoff: &PayoffSpec, pieces: &[PayoffPiece], n: usize) -> Vec<Vec<Affine>> {
    let zero: Vec<Affine> = match payoff.kind {
        // max_j x_j <= K  is  K - x_j >= 0 for every j
        PayoffKind::CallOnMax => (0..n)
            .map(|j| {
                let mut c = vec![0.0; n];
                c[j] = -1.0;
                Affine::new(c, payoff.strike)
            })
            .collect(),
        _ => pieces
            .iter()
            .map(|p| Affine::new(p.piece.coeffs.iter().map(|c| -c).collect(), -p.piece.offset))
            .collect(),
    };
    std::iter::once(zero)
        .chain(pieces.iter().map(|p| p.region.clone()))
        .collect()
}

pub fn build_cells_with_limit(p: &GmpProblem, limit: usize) -> Result<Partition, PartitionError> {
    let n = p.n;
    let b = p.box_bound;
    let tol = SLIVER_TOL * b;
    let axes: Vec<Vec<f64>> = (0..n)
        .map(|a| {
            let mut pts = vec![0.0];
            pts.extend(p.options_of(a).map(|o| o.strike).filter(|s| *s > tol));
            pts.push(b);
            pts.dedup_by(|x, y| (*x - *y).abs() < tol);
            pts
        })
        .collect();
    let nboxes = axes
        .iter()
        .try_fold(1usize, |acc, a| acc.checked_mul(a.len() - 1))
        .unwrap_or(usize::MAX);
    if nboxes > limit {
        return Err(PartitionError::PartitionOverflow { limit });
    }
    let pieces = payoff_pieces(&p.payoff, n);
    let regs = regions(&p.payoff, &pieces, n);

    let boxes: Vec<(Vec<f64>, Vec<f64>)> = (0..nboxes)
        .map(|mut code| {
            let mut idx = vec![0usize; n];
            for a in (0..n).rev() {
                let len = axes[a].len() - 1;
                idx[a] = code % len;
                code /= len;
            }
            let lo = (0..n).map(|a| axes[a][idx[a]]).collect();
            let hi = (0..n).map(|a| axes[a][idx[a] + 1]).collect();
            (lo, hi)
        })
        .collect();

    let raw: Vec<Vec<Cell>> = boxes
        .par_iter()
        .map(|(lo, hi)| {
            regs.iter()
                .enumerate()
                .filter_map(|(ri, reg)| clip(lo, hi, reg, tol, b).map(|c| (ri, c)))
                .map(|(ri, (lo, hi, hs, ip))| Cell {
                    id: 0,
                    lo,
                    hi,
                    halfspaces: hs,
                    region: ri,
                    active_objective_piece: if ri == 0 { None } else { Some(ri - 1) },
                    active_options: vec![],
                    interior_point: ip,
                })
                .collect()
        })
        .collect();
    let mut cells: Vec<Cell> = raw.into_iter().flatten().collect();
    if cells.len() > limit {
        return Err(PartitionError::PartitionOverflow { limit });
    }
    for (i, c) in cells.iter_mut().enumerate() {
        c.id = i + 1;
        c.active_options = p
            .options
            .iter()
            .enumerate()
            .filter(|(_, o)| o.piece(n).eval(&c.interior_point) > 0.0)
            .map(|(j, _)| j)
            .collect();
    }
    let active_sets = ActiveSets {
        objective: cells
            .iter()
            .filter(|c| c.active_objective_piece.is_some())
            .map(|c| c.id)
            .collect(),
        options: (0..p.options.len())
            .map(|j| {
                cells
                    .iter()
                    .filter(|c| c.active_options.contains(&j))
                    .map(|c| c.id)
                    .collect()
            })
            .collect(),
    };
    Ok(Partition {
        n,
        box_bound: b,
        cells,
        active_sets,
        option_labels: p.options.iter().map(|o| (o.asset, o.strike)).collect(),
        pieces: pieces.into_iter().map(|pp| pp.piece).collect(),
    })
}

type Clipped = (Vec<f64>, Vec<f64>, Vec<Affine>, Vec<f64>);

/// Intersects a box with a list of halfspaces; `None` if the result has
/// empty interior.
fn clip(lo: &[f64], hi: &[f64], region: &[Affine], tol: f64, b: f64) -> Option<Clipped> {
    let n = lo.len();
    let mut lo = lo.to_vec();
    let mut hi = hi.to_vec();
    let mut general = Vec::new();
    for h in region {
        match h.axis() {
            Some(i) => {
                let t = -h.offset / h.coeffs[i];
                if h.coeffs[i] > 0.0 {
                    lo[i] = lo[i].max(t);
                } else {
                    hi[i] = hi[i].min(t);
                }
            }
            None => general.push(h.clone()),
        }
    }
    if (0..n).any(|i| hi[i] - lo[i] < tol) {
        return None;
    }
    let mut kept = Vec::new();
    for h in general {
        let norm = h.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm == 0.0 {
            if h.offset < 0.0 {
                return None;
            }
            continue;
        }
        let (mut vmin, mut vmax) = (h.offset, h.offset);
        for (i, c) in h.coeffs.iter().enumerate() {
            let (a, z) = (c * lo[i], c * hi[i]);
            vmin += a.min(z);
            vmax += a.max(z);
        }
        if vmax <= tol * norm {
            return None;
        }
        if vmin >= -tol * norm {
            continue;
        }
        kept.push(h);
    }
    let center: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| 0.5 * (l + h)).collect();
    if kept.is_empty() {
        return Some((lo, hi, kept, center));
    }
    let (r, x) = chebyshev_center(&lo, &hi, &kept, b)?;
    if r <= tol {
        return None;
    }
    Some((lo, hi, kept, x))
}

/// Largest ball inside the clipped box, computed in coordinates scaled by
/// `b`. Returns the radius and center in original coordinates.
fn chebyshev_center(lo: &[f64], hi: &[f64], hs: &[Affine], b: f64) -> Option<(f64, Vec<f64>)> {
    let n = lo.len();
    let r = n;
    let mut prog = ConicProgram::new(n + 1, Sense::Maximize);
    prog.objective = vec![(r, 1.0)];
    for i in 0..n {
        // lo_i + r <= x_i <= hi_i - r
        prog.add_inequality(vec![(i, -1.0), (r, 1.0)], -lo[i] / b);
        prog.add_inequality(vec![(i, 1.0), (r, 1.0)], hi[i] / b);
    }
    for h in hs {
        let norm = h.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt();
        // a.x + off - |a| r >= 0  in scaled coordinates
        let mut terms: Vec<(usize, f64)> = h.coeffs.iter().enumerate().map(|(i, c)| (i, -c)).collect();
        terms.push((r, norm));
        prog.add_inequality(terms, h.offset / b);
    }
    let sol = solve_conic(&prog, &SolverSettings::default()).ok()?;
    match sol.status {
        crate::solver::ConicStatus::Optimal => {
            let x = sol.x[..n].iter().map(|v| v * b).collect();
            Some((sol.x[r] * b, x))
        }
        _ => None,
    }
}

/// Polynomials `h` with `h >= 0` describing the cell: one box product
/// `(hi_i - x_i)(x_i - lo_i)` per coordinate and every kept halfspace.
pub fn cell_localizers(c: &Cell) -> Vec<Polynomial> {
    let n = c.lo.len();
    let mut out = Vec::with_capacity(n + c.halfspaces.len());
    for i in 0..n {
        let x = Polynomial::var(n, i);
        let upper = &Polynomial::constant(n, c.hi[i]) - &x;
        let lower = &x - &Polynomial::constant(n, c.lo[i]);
        out.push(&upper * &lower);
    }
    for h in &c.halfspaces {
        out.push(h.to_polynomial());
    }
    out
}

/// CSV dump: `id, lo_1..lo_n, hi_1..hi_n, halfspaces, objective_piece,
/// active_options`. Halfspaces are `a_1 ... a_n offset` groups separated by
/// `|`; active options are `asset:strike` pairs separated by `;`.
pub fn partition_csv(part: &Partition) -> String {
    let n = part.n;
    let mut out = String::from("id");
    for i in 1..=n {
        let _ = write!(out, ",lo_{i}");
    }
    for i in 1..=n {
        let _ = write!(out, ",hi_{i}");
    }
    out.push_str(",halfspaces,objective_piece,active_options\n");
    for c in &part.cells {
        let _ = write!(out, "{}", c.id);
        for v in c.lo.iter().chain(&c.hi) {
            let _ = write!(out, ",{v}");
        }
        let hs: Vec<String> = c
            .halfspaces
            .iter()
            .map(|h| {
                h.coeffs
                    .iter()
                    .chain([&h.offset])
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect();
        let opts: Vec<String> = c
            .active_options
            .iter()
            .map(|&j| {
                let (a, k) = part.option_labels[j];
                format!("{}:{}", a + 1, k)
            })
            .collect();
        let _ = writeln!(
            out,
            ",{},{},{}",
            hs.join("|"),
            c.active_objective_piece
                .map(|k| (k + 1).to_string())
                .unwrap_or_default(),
            opts.join(";")
        );
    }
    out
}
