//! Homogeneous self-dual primal-dual interior-point method with
//! Nesterov-Todd scaling and a Mehrotra predictor-corrector step.
//!
//! The embedding follows the usual conic formulation
//!
//! ```text
//! A'y + G'z + c tau = 0,  Ax = b tau,  s + Gx = h tau,
//! kappa + c'x + b'y + h'z = 0,  (s, z) in K x K,  tau, kappa >= 0.
//! ```

use log::{debug, warn};

/// Iterations without halving the worst residual before giving up.
const STALL_ITERATIONS: usize = 20;

use super::cone::{jordan, ConeVec, Scaling, StdForm};
use super::kkt::{dot, norm2, KktFactor, KktStructure};
use super::{ConicProgram, ConicSolution, ConicStatus, ProgramError, Residuals, SolverSettings};

struct Iterate {
    x: Vec<f64>,
    y: Vec<f64>,
    s: ConeVec,
    z: ConeVec,
    tau: f64,
    kappa: f64,
}

struct Direction {
    dx: Vec<f64>,
    dy: Vec<f64>,
    dz: ConeVec,
    ds: ConeVec,
    ds_scaled: ConeVec,
    dz_scaled: ConeVec,
    dtau: f64,
    dkappa: f64,
}

struct Res {
    rx: Vec<f64>,
    ry: Vec<f64>,
    rz: ConeVec,
    rt: f64,
}

/// Solves a conic program. Malformed input (bad indices, non-finite data)
/// is rejected; numerical outcomes are reported through
/// [`ConicSolution::status`].
pub fn solve_conic(
    prog: &ConicProgram,
    settings: &SolverSettings,
) -> Result<ConicSolution, ProgramError> {
    let mut prog = prog.clone();
    prog.canonicalize()?;
    let sf = StdForm::from_program(&prog);
    let st = KktStructure::new(&sf);
    debug!(
        "conic solve: {} vars, {} eq, {} lin rows, {} psd blocks, {} components",
        sf.n,
        sf.m(),
        sf.lin_rows.len(),
        sf.blocks.len(),
        st.num_components()
    );
    Ok(run(&prog, &sf, &st, settings))
}

fn run(prog: &ConicProgram, sf: &StdForm, st: &KktStructure, set: &SolverSettings) -> ConicSolution {
    let h = sf.h();
    let nu = sf.degree() as f64;
    let normc = norm2(&sf.c);
    let normb = norm2(&sf.b);
    let normh = h.norm();
    let mut best_merit = f64::INFINITY;
    let mut stalled = 0usize;

    let Some(mut it) = initial_point(sf, st, &h) else {
        return failure(sf, ConicStatus::IllConditioned);
    };

    for iter in 0..=set.max_iterations {
        let res = residuals(sf, &it, &h);
        let cx = dot(&sf.c, &it.x);
        let by = dot(&sf.b, &it.y);
        let hz = h.dot(&it.z);
        let gap = it.s.dot(&it.z);
        let mu = (gap + it.tau * it.kappa) / (nu + 1.0);

        let pcost = cx / it.tau;
        let dcost = -(by + hz) / it.tau;
        let resx = norm2(&res.rx) / it.tau;
        let resy = norm2(&res.ry) / it.tau;
        let resz = res.rz.norm() / it.tau;
        // Residuals relative to the size of the data and of the iterate.
        let normx = norm2(&it.x) / it.tau;
        let norms = it.s.norm() / it.tau;
        let normz = it.z.norm() / it.tau;
        let resx0 = (normc + normx + normz).max(1.0);
        let resy0 = (normb + normx).max(1.0);
        let resz0 = (normh + normx + norms).max(1.0);
        let pres = (resy / resy0).max(resz / resz0);
        let dres = resx / resx0;
        let abs_gap = gap / (it.tau * it.tau);
        let relgap = abs_gap.max((pcost - dcost).abs()) / pcost.abs().min(dcost.abs()).max(1.0);

        let mut hrx = vec![0.0; sf.n];
        sf.add_at(&it.y, &mut hrx);
        sf.add_gt(&it.z, &mut hrx);
        let hresx = norm2(&hrx);
        let hry = sf.apply_a(&it.x);
        let hresy = norm2(&hry);
        let mut hrz = sf.apply_g(&it.x);
        hrz.axpy(1.0, &it.s);
        let hresz = hrz.norm();

        let pinfres = if hz + by < 0.0 {
            Some(hresx / normc.max(1.0) / (-hz - by))
        } else {
            None
        };
        let dinfres = if cx < 0.0 {
            Some((hresy / normb.max(1.0)).max(hresz / normh.max(1.0)) / (-cx))
        } else {
            None
        };

        if set.verbose {
            debug!(
                "it {iter:3} pcost {pcost:+.8e} dcost {dcost:+.8e} gap {abs_gap:.2e} pres {pres:.2e} dres {dres:.2e} k/t {:.2e}",
                it.kappa / it.tau
            );
        }

        let residuals_rec = Residuals {
            primal: pres,
            dual: dres,
            gap: abs_gap,
            relative_gap: relgap,
        };

        if pres <= set.feasibility_tol && dres <= set.feasibility_tol && relgap <= set.gap_tol {
            return finish(prog, sf, &it, ConicStatus::Optimal, residuals_rec, iter);
        }
        if let Some(p) = pinfres {
            if p <= set.feasibility_tol {
                return certificate(prog, sf, &it, ConicStatus::PrimalInfeasible, -hz - by, residuals_rec, iter);
            }
        }
        if let Some(d) = dinfres {
            if d <= set.feasibility_tol {
                return certificate(prog, sf, &it, ConicStatus::DualInfeasible, -cx, residuals_rec, iter);
            }
        }
        let merit = pres.max(dres).max(relgap);
        if merit < 0.5 * best_merit {
            best_merit = merit;
            stalled = 0;
        } else {
            stalled += 1;
        }
        if iter == set.max_iterations || stalled >= STALL_ITERATIONS {
            if pres <= set.stall_tol && dres <= set.stall_tol && relgap <= set.stall_tol {
                warn!("stopped at reduced accuracy after {iter} iterations: {residuals_rec:?}");
                return finish(prog, sf, &it, ConicStatus::Optimal, residuals_rec, iter);
            }
            return finish(prog, sf, &it, ConicStatus::NumericalFailure, residuals_rec, iter);
        }

        let Ok(w) = Scaling::compute(&it.s, &it.z) else {
            return finish(prog, sf, &it, ConicStatus::IllConditioned, residuals_rec, iter);
        };
        let Ok(fac) = KktFactor::new(st, sf, &w) else {
            return finish(prog, sf, &it, ConicStatus::IllConditioned, residuals_rec, iter);
        };

        // Particular solution for the tau column, in scaled form.
        let negc: Vec<f64> = sf.c.iter().map(|v| -v).collect();
        let hs = w.apply_winv_t(&h);
        let (x1, y1, z1s) = fac.solve_scaled(&negc, &sf.b, &hs);
        let denom1 = dot(&sf.c, &x1) + dot(&sf.b, &y1) + hs.dot(&z1s);

        let lam_sq = w.lambda_circ(&w.lambda);

        // Predictor.
        let aff = newton(sf, &it, &w, &fac, &res, 1.0, &lam_sq, it.tau * it.kappa, (&x1, &y1, &z1s, &hs, denom1));
        let alpha_aff = step_length(&w, &it, &aff).min(1.0);
        let sigma = (1.0 - alpha_aff).powi(3);

        // Corrector.
        let mut dsv = lam_sq.clone();
        dsv.axpy(1.0, &jordan(&aff.ds_scaled, &aff.dz_scaled));
        dsv.add_identity(-sigma * mu);
        let dk = it.tau * it.kappa + aff.dtau * aff.dkappa - sigma * mu;
        let dir = newton(sf, &it, &w, &fac, &res, 1.0 - sigma, &dsv, dk, (&x1, &y1, &z1s, &hs, denom1));
        let alpha = (set.step_fraction * step_length(&w, &it, &dir)).min(1.0);

        if !(alpha > 1e-12) || !alpha.is_finite() {
            return finish(prog, sf, &it, ConicStatus::NumericalFailure, residuals_rec, iter);
        }

        for (a, d) in it.x.iter_mut().zip(&dir.dx) {
            *a += alpha * d;
        }
        for (a, d) in it.y.iter_mut().zip(&dir.dy) {
            *a += alpha * d;
        }
        it.s.axpy(alpha, &dir.ds);
        it.z.axpy(alpha, &dir.dz);
        it.tau += alpha * dir.dtau;
        it.kappa += alpha * dir.dkappa;
        for m in it.s.psd.iter_mut().chain(it.z.psd.iter_mut()) {
            let t = m.transpose();
            *m += t;
            *m *= 0.5;
        }
    }
    unreachable!("loop returns at max_iterations")
}

#[allow(clippy::too_many_arguments)]
fn newton(
    sf: &StdForm,
    it: &Iterate,
    w: &Scaling,
    fac: &KktFactor<'_>,
    res: &Res,
    eta: f64,
    dsv: &ConeVec,
    dk: f64,
    part: (&Vec<f64>, &Vec<f64>, &ConeVec, &ConeVec, f64),
) -> Direction {
    let (x1, y1, z1s, hs, denom1) = part;
    let bx: Vec<f64> = res.rx.iter().map(|v| -eta * v).collect();
    let by: Vec<f64> = res.ry.iter().map(|v| -eta * v).collect();
    let lam_dia = w.lambda_diamond(dsv);
    let mut bzs = w.apply_winv_t(&res.rz);
    bzs.scale(-eta);
    bzs.axpy(1.0, &lam_dia);
    let (x0, y0, z0s) = fac.solve_scaled(&bx, &by, &bzs);
    let num = -eta * res.rt + dk / it.tau - (dot(&sf.c, &x0) + dot(&sf.b, &y0) + hs.dot(&z0s));
    let dtau = num / (denom1 - it.kappa / it.tau);
    let dx: Vec<f64> = x0.iter().zip(x1).map(|(a, b)| a + dtau * b).collect();
    let dy: Vec<f64> = y0.iter().zip(y1).map(|(a, b)| a + dtau * b).collect();
    let mut dz_scaled = z0s;
    dz_scaled.axpy(dtau, z1s);
    let dz = w.apply_winv(&dz_scaled);
    let mut ds_scaled = lam_dia.neg();
    ds_scaled.axpy(-1.0, &dz_scaled);
    let ds = w.apply_wt(&ds_scaled);
    let dkappa = -(dk + it.kappa * dtau) / it.tau;
    Direction {
        dx,
        dy,
        dz,
        ds,
        ds_scaled,
        dz_scaled,
        dtau,
        dkappa,
    }
}

fn step_length(w: &Scaling, it: &Iterate, d: &Direction) -> f64 {
    let mut a = w.max_step(&d.ds_scaled).min(w.max_step(&d.dz_scaled));
    if d.dtau < 0.0 {
        a = a.min(-it.tau / d.dtau);
    }
    if d.dkappa < 0.0 {
        a = a.min(-it.kappa / d.dkappa);
    }
    a
}

fn residuals(sf: &StdForm, it: &Iterate, h: &ConeVec) -> Res {
    let mut rx = vec![0.0; sf.n];
    sf.add_at(&it.y, &mut rx);
    sf.add_gt(&it.z, &mut rx);
    for (r, c) in rx.iter_mut().zip(&sf.c) {
        *r += c * it.tau;
    }
    let mut ry = sf.apply_a(&it.x);
    for (r, b) in ry.iter_mut().zip(&sf.b) {
        *r -= b * it.tau;
    }
    let mut rz = sf.apply_g(&it.x);
    rz.axpy(1.0, &it.s);
    rz.axpy(-it.tau, h);
    let rt = it.kappa + dot(&sf.c, &it.x) + dot(&sf.b, &it.y) + h.dot(&it.z);
    Res { rx, ry, rz, rt }
}

fn initial_point(sf: &StdForm, st: &KktStructure, h: &ConeVec) -> Option<Iterate> {
    let w = Scaling::identity(sf);
    let fac = KktFactor::new(st, sf, &w).ok()?;
    let zero_x = vec![0.0; sf.n];
    let zero_y = vec![0.0; sf.m()];
    let (x, _, s_neg) = fac.solve(&zero_x, &sf.b, h);
    let mut s = s_neg.neg();
    let negc: Vec<f64> = sf.c.iter().map(|v| -v).collect();
    let (_, y, mut z) = fac.solve(&negc, &zero_y, &sf.zeros_cone());
    for v in [&mut s, &mut z] {
        let t = v.max_step_to_boundary();
        if t >= -1e-8 * v.norm().max(1.0) {
            v.add_identity(1.0 + t);
        }
    }
    Some(Iterate {
        x,
        y,
        s,
        z,
        tau: 1.0,
        kappa: 1.0,
    })
}

fn finish(
    prog: &ConicProgram,
    sf: &StdForm,
    it: &Iterate,
    status: ConicStatus,
    residuals: Residuals,
    iterations: usize,
) -> ConicSolution {
    let inv = 1.0 / it.tau;
    build(prog, sf, it, inv, status, residuals, iterations)
}

fn certificate(
    prog: &ConicProgram,
    sf: &StdForm,
    it: &Iterate,
    status: ConicStatus,
    normalizer: f64,
    residuals: Residuals,
    iterations: usize,
) -> ConicSolution {
    build(prog, sf, it, 1.0 / normalizer, status, residuals, iterations)
}

fn build(
    prog: &ConicProgram,
    sf: &StdForm,
    it: &Iterate,
    factor: f64,
    status: ConicStatus,
    residuals: Residuals,
    iterations: usize,
) -> ConicSolution {
    let x: Vec<f64> = it.x.iter().map(|v| v * factor).collect();
    let eq_duals = it
        .y
        .iter()
        .zip(&sf.eq_scale)
        .map(|(v, sc)| v * factor / sc)
        .collect();
    let ineq_duals = it
        .z
        .lin
        .iter()
        .zip(&sf.lin_scale)
        .map(|(v, sc)| v * factor / sc)
        .collect();
    let psd_duals = it
        .z
        .psd
        .iter()
        .map(|m| m.transpose().iter().map(|v| v * factor).collect())
        .collect();
    let (primal_objective, dual_objective) = if status == ConicStatus::Optimal
        || status == ConicStatus::NumericalFailure
        || status == ConicStatus::IllConditioned
    {
        let p = dot(&sf.c, &it.x) / it.tau;
        let d = -(dot(&sf.b, &it.y) + sf.h().dot(&it.z)) / it.tau;
        (
            sf.sign * p + prog.objective_constant,
            sf.sign * d + prog.objective_constant,
        )
    } else {
        (f64::NAN, f64::NAN)
    };
    ConicSolution {
        status,
        x,
        eq_duals,
        ineq_duals,
        psd_duals,
        primal_objective,
        dual_objective,
        residuals,
        iterations,
    }
}

fn failure(sf: &StdForm, status: ConicStatus) -> ConicSolution {
    ConicSolution {
        status,
        x: vec![f64::NAN; sf.n],
        eq_duals: vec![f64::NAN; sf.m()],
        ineq_duals: vec![f64::NAN; sf.lin_rows.len()],
        psd_duals: sf
            .blocks
            .iter()
            .map(|b| vec![f64::NAN; b.order * b.order])
            .collect(),
        primal_objective: f64::NAN,
        dual_objective: f64::NAN,
        residuals: Residuals {
            primal: f64::NAN,
            dual: f64::NAN,
            gap: f64::NAN,
            relative_gap: f64::NAN,
        },
        iterations: 0,
    }
}
