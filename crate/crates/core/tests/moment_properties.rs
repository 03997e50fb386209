//! Moment and localizing matrices of atomic measures.

use optbounds::poly::{
    localizing_matrix, moment_matrix, monomial_count, riesz_apply, MomentVector, MonomialBasis,
    Polynomial,
};
use proptest::prelude::*;

fn atoms_strategy() -> impl Strategy<Value = (usize, u32, Vec<(f64, Vec<f64>)>)> {
    (1usize..=3, 1u32..=2).prop_flat_map(|(n, r)| {
        let atom = (0.01f64..1.0, prop::collection::vec(0.0f64..1.0, n));
        (Just(n), Just(r), prop::collection::vec(atom, 1..=6))
    })
}

fn min_eigenvalue(m: &optbounds::poly::SymMatrix) -> f64 {
    m.eigenvalues().into_iter().fold(f64::INFINITY, f64::min)
}

fn max_abs(m: &optbounds::poly::SymMatrix) -> f64 {
    m.eigenvalues().into_iter().fold(0.0, |a, v| a.max(v.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn atomic_moments_give_psd_matrices((n, r, atoms) in atoms_strategy()) {
        // Box constraints x_i (1 - x_i) >= 0 hold on every atom.
        let y = MomentVector::from_atoms(n, 2 * r + 2, &atoms);
        let m = moment_matrix(&y, r).unwrap();
        prop_assert!(min_eigenvalue(&m) >= -1e-10 * max_abs(&m).max(1.0));
        for i in 0..n {
            let xi = Polynomial::var(n, i);
            let g = &xi * &(&Polynomial::constant(n, 1.0) - &xi);
            let l = localizing_matrix(&g, &y, r).unwrap();
            prop_assert!(min_eigenvalue(&l) >= -1e-10 * max_abs(&l).max(1.0));
        }
    }

    #[test]
    fn moment_matrix_rank_bounded_by_atoms((n, r, atoms) in atoms_strategy()) {
        let y = MomentVector::from_atoms(n, 2 * r, &atoms);
        let m = moment_matrix(&y, r).unwrap();
        let ev = m.eigenvalues();
        let scale = ev.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let rank = ev.iter().filter(|v| v.abs() > 1e-8 * scale).count();
        prop_assert!(rank <= atoms.len(), "rank {} > {} atoms", rank, atoms.len());
    }

    #[test]
    fn riesz_functional_is_linear(
        (n, _r, atoms) in atoms_strategy(),
        a in -5.0f64..5.0,
        b in -5.0f64..5.0,
        cf in prop::collection::vec(-3.0f64..3.0, 10),
        cg in prop::collection::vec(-3.0f64..3.0, 10),
    ) {
        let t = 3;
        let y = MomentVector::from_atoms(n, t, &atoms);
        let basis = MonomialBasis::new(n, t);
        let poly = |c: &[f64]| Polynomial::from_terms(
            n,
            basis.monomials().iter().cloned().zip(c.iter().cloned()),
        );
        let f = poly(&cf);
        let g = poly(&cg);
        let lhs = riesz_apply(&(&f.scale(a) + &g.scale(b)), &y).unwrap();
        let rhs = a * riesz_apply(&f, &y).unwrap() + b * riesz_apply(&g, &y).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(rhs.abs()).max(1.0));
    }
}

#[test]
fn monomial_count_matches_enumeration() {
    fn count(n: usize, r: u32) -> u64 {
        if n == 0 {
            return 1;
        }
        (0..=r).map(|k| count(n - 1, r - k)).sum()
    }
    for n in 1..=5 {
        for r in 0..=6 {
            assert_eq!(monomial_count(n, r), count(n, r), "n={n} r={r}");
            assert_eq!(MonomialBasis::new(n, r).len() as u64, count(n, r));
        }
    }
}

#[test]
fn riesz_of_atomic_measure_is_integral() {
    let atoms = vec![(0.3, vec![0.2, 0.7]), (0.7, vec![0.9, 0.1])];
    let y = MomentVector::from_atoms(2, 4, &atoms);
    let f = &(&Polynomial::var(2, 0) * &Polynomial::var(2, 1)) + &Polynomial::var(2, 1).pow(3);
    let exact: f64 = atoms.iter().map(|(w, x)| w * f.eval(x)).sum();
    assert!((riesz_apply(&f, &y).unwrap() - exact).abs() < 1e-14);
}
