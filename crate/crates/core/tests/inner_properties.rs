//! Inner (density) hierarchy: closed-form integrals, the Laguerre basis and
//! the epsilon relaxation.

mod common;

use common::*;
use optbounds::inner::{
    basis_polynomials, exp_tail_moment, laguerre_coefficients, min_feasible_epsilon, solve_inner,
    InnerBasis, InnerInstance, DEFAULT_EPSILON_TOL,
};
use optbounds::relaxation::{BoundStatus, Direction};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

#[test]
fn exp_tail_moment_matches_quadrature() {
    for m in 0..=12u32 {
        for k in [0.0, 0.5, 1.0, 2.0] {
            let exact = exp_tail_moment(m, k).unwrap();
            // The integrand is below 1e-30 of its peak beyond k + 150.
            let q = integrate(|x| x.powi(m as i32) * (-x).exp(), k, k + 150.0, 1e-12 * exact);
            let rel = (q - exact).abs() / exact;
            assert!(rel < 1e-9, "m={m} k={k}: {q} vs {exact} (rel {rel:e})");
        }
    }
}

#[test]
fn laguerre_polynomials_are_orthonormal() {
    for i in 0..=8u32 {
        let li = laguerre_coefficients(i);
        for j in 0..=i {
            let lj = laguerre_coefficients(j);
            let v = integrate(|x| li.eval(&[x]) * lj.eval(&[x]) * (-x).exp(), 0.0, 150.0, 1e-13);
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((v - want).abs() < 1e-10, "<L{i}, L{j}> = {v}");
        }
    }
}

#[test]
fn laguerre_inner_products_from_factorial_moments() {
    // Under exp(-x) on [0, inf) the moments are m!. Cancellation in the
    // monomial form limits this route to low degrees.
    for i in 0..=6u32 {
        for j in 0..=6u32 {
            let prod = &laguerre_coefficients(i) * &laguerre_coefficients(j);
            let v: f64 = prod
                .terms()
                .map(|(a, c)| c * exp_tail_moment(a.exponents()[0], 0.0).unwrap())
                .sum();
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((v - want).abs() < 1e-10, "<L{i}, L{j}> = {v}");
        }
    }
}

#[test]
fn multivariate_laguerre_basis_is_orthonormal() {
    let basis = basis_polynomials(2, 3, InnerBasis::Laguerre);
    for (i, p) in basis.iter().enumerate() {
        for (j, q) in basis.iter().enumerate() {
            let v: f64 = (p * q)
                .terms()
                .map(|(a, c)| {
                    c * a.exponents().iter().map(|&e| exp_tail_moment(e, 0.0).unwrap()).product::<f64>()
                })
                .sum();
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((v - want).abs() < 1e-10, "({i}, {j}): {v}");
        }
    }
}

#[test]
fn optimal_density_is_nonnegative() {
    let p = config("inner_example.json");
    let probe = InnerInstance::new(p.clone(), 2, 0.0, InnerBasis::Laguerre);
    let eps = min_feasible_epsilon(&probe, DEFAULT_EPSILON_TOL).unwrap();
    let inst = InnerInstance::new(p, 2, eps, InnerBasis::Laguerre);
    let mut rng = StdRng::seed_from_u64(3);
    for d in [Direction::Lower, Direction::Upper] {
        let res = solve_inner(&inst, d).unwrap();
        assert_eq!(res.report.status, BoundStatus::Optimal, "{d:?}");
        let g = res.gram.as_ref().unwrap();
        let scale = g.abs().max().max(1e-300);
        assert!(g.symmetric_eigenvalues().min() >= -1e-8 * scale, "{d:?}");
        for _ in 0..1_000 {
            let u: f64 = rng.gen_range(0.0..20.0);
            let h = res.density(&[u * res.normalization]).unwrap();
            assert!(h >= -1e-8 * scale * (1.0 + u).powi(4), "{d:?}: h({u}) = {h}");
        }
    }
}

#[test]
fn larger_epsilon_widens_the_bounds() {
    let p = config("inner_example.json");
    let probe = InnerInstance::new(p.clone(), 2, 0.0, InnerBasis::Laguerre);
    let eps = min_feasible_epsilon(&probe, DEFAULT_EPSILON_TOL).unwrap();
    let mut prev: Option<(f64, f64)> = None;
    for f in [1.0, 2.0, 4.0] {
        let inst = InnerInstance::new(p.clone(), 2, f * eps, InnerBasis::Laguerre);
        let lo = solve_inner(&inst, Direction::Lower).unwrap().report;
        let hi = solve_inner(&inst, Direction::Upper).unwrap().report;
        assert_eq!(lo.status, BoundStatus::Optimal);
        assert_eq!(hi.status, BoundStatus::Optimal);
        assert!(lo.value <= hi.value + 1e-6);
        if let Some((plo, phi)) = prev {
            assert!(lo.value <= plo + 1e-6, "lower rose: {plo} -> {}", lo.value);
            assert!(hi.value >= phi - 1e-6, "upper fell: {phi} -> {}", hi.value);
        }
        prev = Some((lo.value, hi.value));
    }
}

#[test]
fn below_the_minimal_epsilon_is_infeasible() {
    let p = config("inner_example.json");
    let probe = InnerInstance::new(p.clone(), 2, 0.0, InnerBasis::Laguerre);
    let eps = min_feasible_epsilon(&probe, DEFAULT_EPSILON_TOL).unwrap();
    let inst = InnerInstance::new(p, 2, 0.9 * eps, InnerBasis::Laguerre);
    let res = solve_inner(&inst, Direction::Upper).unwrap();
    assert_eq!(res.report.status, BoundStatus::Infeasible);
}
