//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness. Every criterion is evaluated even when
//! an earlier one fails, and the process exits successfully either way; the
//! report itself is the result.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use common::*;
use optbounds::inner::{
    exp_tail_moment, laguerre_coefficients, min_feasible_epsilon, solve_inner, InnerBasis,
    InnerInstance, DEFAULT_EPSILON_TOL,
};
use optbounds::model::GmpProblem;
use optbounds::oracle::{lp_bound, lp_bound_on_grid};
use optbounds::partition::build_cells;
use optbounds::poly::{localizing_matrix, moment_matrix, MomentVector, Polynomial};
use optbounds::relaxation::{build_outer, solve_outer, sweep_strikes, BoundReport, BoundStatus, Direction};
use optbounds::solver::{export_sdpa, solve_conic, ConicStatus, Sense, SolverSettings};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

/// Outcome of one criterion: pass flag and a one-line summary of the
/// measured values.
type Outcome = (bool, String);

fn fmt(v: f64) -> String {
    format!("{v:.4}")
}

fn outer(p: &GmpProblem, r: u32, d: Direction) -> BoundReport {
    solve_outer(p, r, d).expect("assembly failed")
}

fn close(rep: &BoundReport, want: f64, tol: f64) -> bool {
    rep.status == BoundStatus::Optimal && (rep.value - want).abs() <= tol
}

fn pairs_within(
    p: &GmpProblem,
    strikes: &[f64],
    lower: &[f64],
    upper: &[f64],
    tol: f64,
    max_seconds: Option<f64>,
) -> Outcome {
    let mut ok = true;
    let mut misses = Vec::new();
    let mut slowest = 0.0f64;
    for (i, (k, pair)) in sweep_strikes(p, strikes, 1).into_iter().enumerate() {
        let pair = pair.expect("assembly failed");
        slowest = slowest.max(pair.lower.wall_time).max(pair.upper.wall_time);
        for (rep, want) in [(&pair.lower, lower[i]), (&pair.upper, upper[i])] {
            if !close(rep, want, tol) {
                ok = false;
                misses.push(format!(
                    "K={k} {} {} vs {want} ({})",
                    rep.direction.as_str(),
                    fmt(rep.value),
                    rep.status.as_str()
                ));
            }
        }
    }
    if let Some(limit) = max_seconds {
        if slowest >= limit {
            ok = false;
            misses.push(format!("slowest solve {slowest:.1}s >= {limit}s"));
        }
    }
    let detail = if misses.is_empty() {
        format!("{} strikes within {tol}, slowest solve {slowest:.2}s", strikes.len())
    } else {
        misses.join("; ")
    };
    (ok, detail)
}

fn criterion_1() -> Outcome {
    let p = config("microsoft.json");
    let lo = outer(&p, 1, Direction::Lower);
    let hi = outer(&p, 1, Direction::Upper);
    let ok = close(&lo, 3.875, 1e-3) && close(&hi, 5.125, 1e-3) && lo.wall_time < 5.0 && hi.wall_time < 5.0;
    (
        ok,
        format!(
            "lower {} upper {} ({:.3}s, {:.3}s)",
            fmt(lo.value),
            fmt(hi.value),
            lo.wall_time,
            hi.wall_time
        ),
    )
}

fn criterion_2() -> Outcome {
    let op = build_outer(&config("microsoft.json"), 1, Direction::Upper).unwrap();
    let s = &op.stats;
    let all_2x2 = op.program.psd_blocks.iter().all(|b| b.order == 2);
    let ok = s.cells == 7
        && s.variables == 35
        && s.psd_blocks == 14
        && all_2x2
        && s.equalities == 6
        && s.inequalities == 36;
    (
        ok,
        format!(
            "cells {}, variables {}, psd blocks {} (all 2x2: {all_2x2}), equalities {}, inequalities {}",
            s.cells, s.variables, s.psd_blocks, s.equalities, s.inequalities
        ),
    )
}

fn criterion_3() -> Outcome {
    let p = config("two_asset.json");
    let lo = outer(&p, 1, Direction::Lower);
    let hi = outer(&p, 1, Direction::Upper);
    let part = build_cells(&p).unwrap();
    let a = &part.active_sets;
    let expected: [&[usize]; 5] = [
        &[4, 6, 8, 10, 12, 13, 14],
        &[5, 6, 7, 8, 9, 10, 11, 12, 13, 14],
        &[11, 12, 13, 14],
        &[2, 3, 4, 7, 8, 9, 10, 13, 14],
        &[3, 4, 9, 10, 14],
    ];
    let sets_ok = a.objective == expected[0]
        && a.options.len() == 4
        && a.options.iter().zip(&expected[1..]).all(|(got, want)| got == want);
    let ok = close(&lo, 2.387, 1e-2)
        && close(&hi, 7.4, 1e-2)
        && sets_ok
        && lo.wall_time < 10.0
        && hi.wall_time < 10.0;
    (
        ok,
        format!(
            "lower {} upper {}, active sets match: {sets_ok} ({:.3}s, {:.3}s)",
            fmt(lo.value),
            fmt(hi.value),
            lo.wall_time,
            hi.wall_time
        ),
    )
}

fn criterion_4() -> Outcome {
    let p = config("table2.json");
    let (mut ok, mut detail) = pairs_within(&p, &TABLE2_STRIKES, &TABLE2_LOWER, &TABLE2_UPPER, 1e-2, None);
    let mut worst = 0.0f64;
    for &k in &TABLE2_STRIKES {
        let q = p.with_strike(k);
        for d in [Direction::Lower, Direction::Upper] {
            let r1 = outer(&q, 1, d);
            let r2 = outer(&q, 2, d);
            if r2.status != BoundStatus::Optimal || r1.status != BoundStatus::Optimal {
                ok = false;
                worst = f64::INFINITY;
            } else {
                worst = worst.max((r2.value - r1.value).abs());
            }
        }
    }
    if worst > 1e-3 {
        ok = false;
    }
    detail.push_str(&format!("; max |level 2 - level 1| = {worst:.2e}"));
    (ok, detail)
}

fn criterion_5() -> Outcome {
    pairs_within(&config("currency.json"), &CURRENCY_STRIKES, &CURRENCY_LOWER, &CURRENCY_UPPER, 1e-2, None)
}

fn criterion_6() -> Outcome {
    pairs_within(
        &config("boyle_lin.json"),
        &BOYLE_LIN_STRIKES,
        &BOYLE_LIN_LOWER,
        &BOYLE_LIN_UPPER,
        1e-2,
        Some(5.0),
    )
}

fn criterion_7() -> Outcome {
    let p = config("tech.json");
    let mut ok = true;
    let mut parts = Vec::new();
    for (i, &k) in TECH_STRIKES.iter().enumerate() {
        let q = p.with_strike(k);
        let cells = build_cells(&q).unwrap().len();
        if cells < 1296 {
            ok = false;
        }
        for (d, want) in [(Direction::Lower, TECH_LOWER[i]), (Direction::Upper, TECH_UPPER[i])] {
            let start = Instant::now();
            let rep = outer(&q, 1, d);
            let secs = start.elapsed().as_secs_f64();
            if !close(&rep, want, 0.1) || secs >= 600.0 {
                ok = false;
            }
            parts.push(format!(
                "K={k} {} {} vs {want} ({}, {secs:.0}s)",
                d.as_str(),
                fmt(rep.value),
                rep.status.as_str()
            ));
        }
        parts.push(format!("K={k} cells {cells}"));
    }
    (ok, parts.join("; "))
}

fn criterion_8() -> Outcome {
    let p = config("inner_example.json");
    let mut ok = true;
    let mut parts = Vec::new();

    let probe = InnerInstance::new(p.clone(), 2, 0.0, InnerBasis::Laguerre);
    match min_feasible_epsilon(&probe, DEFAULT_EPSILON_TOL) {
        Ok(eps) => {
            let rel = (eps - 0.0273).abs() / 0.0273;
            ok &= rel <= 0.1;
            parts.push(format!("r=2 min epsilon {eps:.5} vs 0.0273 ({:.1}% off)", 100.0 * rel));
        }
        Err(e) => {
            ok = false;
            parts.push(format!("r=2 min epsilon failed: {e}"));
        }
    }

    let fixed = InnerInstance::new(p.clone(), 2, 0.0273, InnerBasis::Laguerre);
    for (d, want) in [(Direction::Upper, 5.1279), (Direction::Lower, 5.122)] {
        match solve_inner(&fixed, d) {
            Ok(res) => {
                ok &= close(&res.report, want, 0.05);
                parts.push(format!(
                    "r=2 eps=0.0273 {} {} vs {want} ({})",
                    d.as_str(),
                    fmt(res.report.value),
                    res.report.status.as_str()
                ));
            }
            Err(e) => {
                ok = false;
                parts.push(format!("r=2 {} failed: {e}", d.as_str()));
            }
        }
    }

    let probe7 = InnerInstance::new(p, 7, 0.0, InnerBasis::Laguerre);
    match min_feasible_epsilon(&probe7, DEFAULT_EPSILON_TOL) {
        Ok(eps) => {
            let inst = InnerInstance { epsilon: eps, ..probe7 };
            match solve_inner(&inst, Direction::Lower) {
                Ok(res) => {
                    ok &= close(&res.report, 3.3522, 0.05);
                    parts.push(format!(
                        "r=7 lower {} vs 3.3522 at eps {eps:.5} ({})",
                        fmt(res.report.value),
                        res.report.status.as_str()
                    ));
                }
                Err(e) => {
                    ok = false;
                    parts.push(format!("r=7 lower failed: {e}"));
                }
            }
        }
        Err(e) => {
            // A solver failure at r=7 is reported, not counted.
            parts.push(format!("r=7 min epsilon not computed: {e}"));
        }
    }
    (ok, parts.join("; "))
}

fn sandwich(name: &str, p: &GmpProblem, grid: Grid) -> Result<String, String> {
    let lo = outer(p, 1, Direction::Lower);
    let hi = outer(p, 1, Direction::Upper);
    if lo.status != BoundStatus::Optimal || hi.status != BoundStatus::Optimal {
        return Err(format!("{name} K={}: outer bounds not optimal", p.payoff.strike));
    }
    let mut vals = Vec::new();
    for d in [Direction::Lower, Direction::Upper] {
        let rep = match &grid {
            Grid::PerAxis(m) => lp_bound(p, *m, d),
            Grid::Axes(axes) => lp_bound_on_grid(p, axes, d),
        }
        .map_err(|e| format!("{name} K={}: {e}", p.payoff.strike))?;
        if rep.value < lo.value - 1e-6 || rep.value > hi.value + 1e-6 {
            return Err(format!(
                "{name} K={}: grid {} {} outside [{}, {}]",
                p.payoff.strike,
                d.as_str(),
                rep.value,
                lo.value,
                hi.value
            ));
        }
        vals.push(rep.grid_points);
    }
    Ok(format!("{name} K={} ({} points)", p.payoff.strike, vals[0]))
}

enum Grid {
    PerAxis(usize),
    Axes(Vec<Vec<f64>>),
}

fn criterion_9() -> Outcome {
    let mut cases: Vec<(&str, GmpProblem, Grid)> = vec![
        ("microsoft", config("microsoft.json"), Grid::PerAxis(2001)),
        ("two-asset", config("two_asset.json"), Grid::PerAxis(201)),
    ];
    for &k in &TABLE2_STRIKES {
        cases.push(("table2", config("table2.json").with_strike(k), Grid::PerAxis(201)));
    }
    for &k in &CURRENCY_STRIKES {
        cases.push(("currency", config("currency.json").with_strike(k), Grid::PerAxis(201)));
    }
    // Three assets: a 201^3 grid is out of reach, so a 41^3 grid with
    // spacing 5 is used; it still matches the means and covariances.
    let axis: Vec<f64> = (0..=40).map(|i| i as f64 * 5.0).collect();
    for &k in &BOYLE_LIN_STRIKES {
        cases.push(("boyle-lin", config("boyle_lin.json").with_strike(k), Grid::Axes(vec![axis.clone(); 3])));
    }
    let total = cases.len();
    let mut failures = Vec::new();
    for (name, p, grid) in cases {
        if let Err(e) = sandwich(name, &p, grid) {
            failures.push(e);
        }
    }
    if failures.is_empty() {
        (true, format!("{total} instances: grid values inside outer bounds (1e-6)"))
    } else {
        (false, failures.join("; "))
    }
}

fn criterion_10() -> Outcome {
    let base = config("non_attainment.json");
    let a = base.options[0].price;
    let k2 = base.options[0].strike;
    let k1 = base.payoff.strike;
    let mut ok = true;
    let mut prev = f64::INFINITY;
    let mut parts = Vec::new();
    for b in [200.0, 400.0, 800.0] {
        let mut p = base.clone();
        p.box_bound = b;
        let rep = outer(&p, 1, Direction::Lower);
        let excess = rep.value - a;
        let predicted = a * (k2 - k1) / (b - k2);
        ok &= rep.status == BoundStatus::Optimal
            && rep.value < prev
            && excess > 0.0
            && (excess - predicted).abs() <= 0.1 * predicted;
        parts.push(format!("B={b}: {} (predicted {})", fmt(rep.value), fmt(a + predicted)));
        prev = rep.value;
    }
    (ok, parts.join("; "))
}

fn criterion_11() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;

    // PSD of moment and localizing matrices on random atomic measures.
    let mut rng = StdRng::seed_from_u64(2024);
    let mut psd_ok = true;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=3);
        let r = rng.gen_range(1..=2u32);
        let atoms: Vec<(f64, Vec<f64>)> = (0..rng.gen_range(1..=6))
            .map(|_| (rng.gen_range(0.01..1.0), (0..n).map(|_| rng.gen::<f64>()).collect()))
            .collect();
        let y = MomentVector::from_atoms(n, 2 * r + 2, &atoms);
        let mut mats = vec![moment_matrix(&y, r).unwrap()];
        for i in 0..n {
            let xi = Polynomial::var(n, i);
            let g = &xi * &(&Polynomial::constant(n, 1.0) - &xi);
            mats.push(localizing_matrix(&g, &y, r).unwrap());
        }
        for m in mats {
            let ev = m.eigenvalues();
            let scale = ev.iter().fold(1.0f64, |s, v| s.max(v.abs()));
            psd_ok &= ev.iter().all(|v| *v >= -1e-10 * scale);
        }
    }
    ok &= psd_ok;
    parts.push(format!("atomic PSD (1000 cases): {}", pass_word(psd_ok)));

    // Hierarchy monotonicity on criteria 1 and 3.
    let mut mono_ok = true;
    for name in ["microsoft.json", "two_asset.json"] {
        let p = config(name);
        let (mut plo, mut phi) = (f64::NEG_INFINITY, f64::INFINITY);
        for r in 1..=3 {
            let lo = outer(&p, r, Direction::Lower);
            let hi = outer(&p, r, Direction::Upper);
            mono_ok &= lo.status == BoundStatus::Optimal
                && hi.status == BoundStatus::Optimal
                && lo.value >= plo - 1e-6
                && hi.value <= phi + 1e-6;
            plo = lo.value;
            phi = hi.value;
        }
    }
    ok &= mono_ok;
    parts.push(format!("hierarchy monotone r=1..3: {}", pass_word(mono_ok)));

    // Closed-form exponential tail moments against quadrature.
    let mut worst: f64 = 0.0;
    for m in 0..=12u32 {
        for k in [0.0, 0.5, 1.0, 2.0] {
            let exact = exp_tail_moment(m, k).unwrap();
            let q = integrate(|x| x.powi(m as i32) * (-x).exp(), k, k + 150.0, 1e-12 * exact);
            worst = worst.max((q - exact).abs() / exact);
        }
    }
    ok &= worst < 1e-9;
    parts.push(format!("exp tail vs quadrature: max rel {worst:.1e}"));

    // Laguerre orthonormality.
    let mut lag: f64 = 0.0;
    for i in 0..=8u32 {
        let li = laguerre_coefficients(i);
        for j in 0..=i {
            let lj = laguerre_coefficients(j);
            let v = integrate(|x| li.eval(&[x]) * lj.eval(&[x]) * (-x).exp(), 0.0, 150.0, 1e-13);
            lag = lag.max((v - if i == j { 1.0 } else { 0.0 }).abs());
        }
    }
    ok &= lag < 1e-10;
    parts.push(format!("Laguerre orthonormality: max err {lag:.1e}"));

    // SDPA export cross-solve.
    let p = config("microsoft.json");
    let dir = tempfile::tempdir().unwrap();
    let mut sdpa = String::from("SDPA cross-solve: ");
    for d in [Direction::Lower, Direction::Upper] {
        let op = build_outer(&p, 1, d).unwrap();
        let sol = solve_conic(&op.program, &SolverSettings::default()).unwrap();
        let file = dir.path().join("export.dat-s");
        std::fs::write(&file, export_sdpa(&op.program)).unwrap();
        match external_sdpa_value(&file) {
            None => {
                sdpa.push_str("skipped (no external solver) ");
                break;
            }
            Some(Err(e)) => {
                ok = false;
                sdpa.push_str(&format!("{} external failure {} ", d.as_str(), e.trim()));
            }
            Some(Ok(v)) => {
                let v = if op.program.sense == Sense::Maximize { -v } else { v };
                let diff = (v - sol.primal_objective).abs() * op.scale;
                let good = sol.status == ConicStatus::Optimal && diff < 1e-6;
                ok &= good;
                sdpa.push_str(&format!("{} diff {diff:.1e} ", d.as_str()));
            }
        }
    }
    parts.push(sdpa.trim_end().to_string());
    (ok, parts.join("; "))
}

fn pass_word(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "failed"
    }
}

fn main() {
    // Passing `--list` or a filter comes from `cargo test`; there is nothing
    // to list and no filtering.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let criteria: [(u32, &str, fn() -> Outcome); 11] = [
        (1, "Microsoft univariate bounds", criterion_1),
        (2, "Microsoft program size", criterion_2),
        (3, "two-asset bounds and active sets", criterion_3),
        (4, "strike sweep, level 2 vs level 1", criterion_4),
        (5, "currency basket", criterion_5),
        (6, "call on max", criterion_6),
        (7, "tech-stock basket", criterion_7),
        (8, "inner hierarchy", criterion_8),
        (9, "oracle sandwich", criterion_9),
        (10, "non-attainment", criterion_10),
        (11, "property suites", criterion_11),
    ];
    let mut passed = 0;
    for (id, name, f) in criteria {
        let start = Instant::now();
        let (ok, detail) = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(r) => r,
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        if ok {
            passed += 1;
        }
        println!(
            "criterion {id:>2} {}: {name} [{:.1}s] {detail}",
            if ok { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {passed}/11 criteria passed");
}
