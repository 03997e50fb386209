//! Writer (and a small reader) for the SDPA sparse `.dat-s` format.
//!
//! SDPA solves `min c'x  s.t.  sum_i x_i F_i - F_0 >= 0` over block-diagonal
//! symmetric matrices. PSD blocks map directly (`F_0 = -constant`). All
//! scalar rows go into one trailing diagonal (LP) block whose entries are
//! the slacks: nonnegativity `x_j >= 0`, inequalities `rhs - a'x >= 0`, and
//! each equality as the pair `a'x - rhs >= 0`, `rhs - a'x >= 0`.

use std::fmt::Write as _;

use super::{ConicProgram, Sense};

/// Parsed contents of a `.dat-s` file.
#[derive(Debug, Clone, PartialEq)]
pub struct SdpaProblem {
    pub num_vars: usize,
    pub block_sizes: Vec<i64>,
    pub objective: Vec<f64>,
    /// `(matno, blkno, i, j, value)` with 1-based block and entry indices.
    pub entries: Vec<(usize, usize, usize, usize, f64)>,
}

/// Serializes `prog` in SDPA sparse format. Maximization problems are
/// written with a negated objective; the header comment records this and
/// the objective constant.
pub fn export_sdpa(prog: &ConicProgram) -> String {
    let mut p = prog.clone();
    // Out-of-range indices would produce a broken file; fall back to the raw
    // program if canonicalization fails so the writer never panics.
    if p.canonicalize().is_err() {
        p = prog.clone();
    }
    let sign = match p.sense {
        Sense::Minimize => 1.0,
        Sense::Maximize => -1.0,
    };
    let lp_rows = p.nonneg.len() + p.inequalities.len() + 2 * p.equalities.len();
    let mut sizes: Vec<i64> = p.psd_blocks.iter().map(|b| b.order as i64).collect();
    if lp_rows > 0 {
        sizes.push(-(lp_rows as i64));
    }
    let lp_blk = p.psd_blocks.len() + 1;

    // entries[(matno, blkno, i, j)] = value, kept in deterministic order.
    let mut entries: Vec<(usize, usize, usize, usize, f64)> = Vec::new();
    for (bi, b) in p.psd_blocks.iter().enumerate() {
        for &(i, j, v) in &b.constant {
            entries.push((0, bi + 1, i + 1, j + 1, -v));
        }
        for (var, list) in &b.terms {
            for &(i, j, v) in list {
                entries.push((var + 1, bi + 1, i + 1, j + 1, v));
            }
        }
    }
    let mut row = 0usize;
    for &j in &p.nonneg {
        row += 1;
        entries.push((j + 1, lp_blk, row, row, 1.0));
    }
    for ineq in &p.inequalities {
        row += 1;
        if ineq.rhs != 0.0 {
            entries.push((0, lp_blk, row, row, -ineq.rhs));
        }
        for &(j, a) in &ineq.terms {
            entries.push((j + 1, lp_blk, row, row, -a));
        }
    }
    for eq in &p.equalities {
        for s in [1.0, -1.0] {
            row += 1;
            if eq.rhs != 0.0 {
                entries.push((0, lp_blk, row, row, s * eq.rhs));
            }
            for &(j, a) in &eq.terms {
                entries.push((j + 1, lp_blk, row, row, s * a));
            }
        }
    }
    entries.sort_by(|a, b| (a.0, a.1, a.2, a.3).cmp(&(b.0, b.1, b.2, b.3)));

    let mut c = vec![0.0; p.num_vars];
    for &(j, v) in &p.objective {
        c[j] += sign * v;
    }

    let mut out = String::new();
    let _ = writeln!(
        out,
        "\"sense={} objective_constant={}",
        match p.sense {
            Sense::Minimize => "min",
            Sense::Maximize => "max(negated)",
        },
        p.objective_constant
    );
    let _ = writeln!(out, "{}", p.num_vars);
    let _ = writeln!(out, "{}", sizes.len());
    let _ = writeln!(
        out,
        "{}",
        sizes.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" ")
    );
    let _ = writeln!(
        out,
        "{}",
        c.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(" ")
    );
    for (m, b, i, j, v) in entries {
        let _ = writeln!(out, "{m} {b} {i} {j} {v}");
    }
    out
}

/// Parses a `.dat-s` document produced by [`export_sdpa`] (or any file
/// using one value per whitespace-separated token).
pub fn parse_sdpa(text: &str) -> Result<SdpaProblem, String> {
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('"') && !l.starts_with('*'));
    let mut next = |what: &str| lines.next().ok_or_else(|| format!("missing {what}"));
    let clean = |s: &str| s.replace([',', '{', '}', '(', ')'], " ");
    let num_vars: usize = clean(next("m")?)
        .split_whitespace()
        .next()
        .ok_or("empty m line")?
        .parse()
        .map_err(|e| format!("m: {e}"))?;
    let nblocks: usize = clean(next("nblocks")?)
        .split_whitespace()
        .next()
        .ok_or("empty nblocks line")?
        .parse()
        .map_err(|e| format!("nblocks: {e}"))?;
    let block_sizes: Vec<i64> = clean(next("block sizes")?)
        .split_whitespace()
        .take(nblocks)
        .map(|t| t.parse().map_err(|e| format!("block size: {e}")))
        .collect::<Result<_, _>>()?;
    let objective: Vec<f64> = clean(next("objective")?)
        .split_whitespace()
        .take(num_vars)
        .map(|t| t.parse().map_err(|e| format!("objective: {e}")))
        .collect::<Result<_, _>>()?;
    let mut entries = Vec::new();
    for l in lines {
        let t: Vec<&str> = l.split_whitespace().collect();
        if t.len() < 5 {
            return Err(format!("bad entry line: {l}"));
        }
        let p = |s: &str| s.parse::<usize>().map_err(|e| format!("{e}"));
        entries.push((
            p(t[0])?,
            p(t[1])?,
            p(t[2])?,
            p(t[3])?,
            t[4].parse::<f64>().map_err(|e| format!("{e}"))?,
        ));
    }
    Ok(SdpaProblem {
        num_vars,
        block_sizes,
        objective,
        entries,
    })
}
