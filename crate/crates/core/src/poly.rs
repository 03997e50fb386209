//! Sparse multivariate polynomials, graded-lexicographic monomial indexing,
//! the Riesz functional and moment / localizing matrices.
//!
//! Monomials are ordered graded-lexicographically: first by total degree, then
//! by exponent vector in descending lexicographic order, so the basis vector
//! reads `1, x1, ..., xn, x1^2, x1 x2, ..., xn^r`.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

/// Coefficients smaller than this (in absolute value) are dropped after
/// arithmetic.
pub const COEFF_EPS: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolyError {
    #[error("degree overflow: need moments up to degree {needed}, have {available}")]
    DegreeOverflow { needed: u32, available: u32 },
    #[error("variable count mismatch: {left} vs {right}")]
    VariableMismatch { left: usize, right: usize },
}

/// Exponent vector `alpha` of the monomial `x^alpha`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(exponents: Vec<u32>) -> Self {
        MultiIndex(exponents)
    }

    pub fn zero(n: usize) -> Self {
        MultiIndex(vec![0; n])
    }

    /// `x_i` as a multi-index.
    pub fn unit(n: usize, i: usize) -> Self {
        let mut e = vec![0; n];
        e[i] = 1;
        MultiIndex(e)
    }

    pub fn exponents(&self) -> &[u32] {
        &self.0
    }

    pub fn nvars(&self) -> usize {
        self.0.len()
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn add(&self, other: &MultiIndex) -> MultiIndex {
        MultiIndex(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    /// Evaluates `x^alpha`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(x)
            .map(|(&e, &xi)| xi.powi(e as i32))
            .product()
    }
}

impl Ord for MultiIndex {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| other.0.cmp(&self.0))
    }
}

impl PartialOrd for MultiIndex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

/// Number of monomials of degree at most `r` in `n` variables, `C(n+r, r)`.
pub fn monomial_count(n: usize, r: u32) -> u64 {
    binomial((n as u64) + r as u64, r as u64)
}

/// Exact binomial coefficient in 64-bit integer arithmetic.
pub fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u64 = 1;
    for i in 0..k {
        // acc * (n - i) is divisible by (i + 1) after the multiplication.
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

/// All multi-indices of `n` variables with total degree `<= t`, in graded
/// lexicographic order, with a reverse lookup table.
#[derive(Clone, Debug)]
pub struct MonomialBasis {
    nvars: usize,
    max_degree: u32,
    monomials: Vec<MultiIndex>,
    index: HashMap<MultiIndex, usize>,
}

impl MonomialBasis {
    pub fn new(nvars: usize, max_degree: u32) -> Self {
        let mut monomials = Vec::with_capacity(monomial_count(nvars, max_degree) as usize);
        for d in 0..=max_degree {
            let mut current = vec![0u32; nvars];
            push_degree(&mut monomials, &mut current, 0, d);
        }
        let index = monomials
            .iter()
            .enumerate()
            .map(|(i, m)| (m.clone(), i))
            .collect();
        MonomialBasis {
            nvars,
            max_degree,
            monomials,
            index,
        }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn max_degree(&self) -> u32 {
        self.max_degree
    }

    pub fn len(&self) -> usize {
        self.monomials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.monomials.is_empty()
    }

    pub fn monomials(&self) -> &[MultiIndex] {
        &self.monomials
    }

    pub fn position(&self, alpha: &MultiIndex) -> Option<usize> {
        self.index.get(alpha).copied()
    }

    /// Number of leading basis entries with degree `<= r`.
    pub fn prefix_len(&self, r: u32) -> usize {
        monomial_count(self.nvars, r.min(self.max_degree)) as usize
    }
}

// Emits all exponent vectors of total degree `remaining` over positions
// `pos..`, with larger leading exponents first.
fn push_degree(out: &mut Vec<MultiIndex>, current: &mut [u32], pos: usize, remaining: u32) {
    let n = current.len();
    if n == 0 {
        if remaining == 0 {
            out.push(MultiIndex(Vec::new()));
        }
        return;
    }
    if pos == n - 1 {
        current[pos] = remaining;
        out.push(MultiIndex(current.to_vec()));
        current[pos] = 0;
        return;
    }
    for e in (0..=remaining).rev() {
        current[pos] = e;
        push_degree(out, current, pos + 1, remaining - e);
    }
    current[pos] = 0;
}

/// Sparse real polynomial in `nvars` variables.
#[derive(Clone, PartialEq)]
pub struct Polynomial {
    nvars: usize,
    terms: BTreeMap<MultiIndex, f64>,
}

impl Polynomial {
    pub fn zero(nvars: usize) -> Self {
        Polynomial {
            nvars,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        let mut p = Polynomial::zero(nvars);
        p.add_term(MultiIndex::zero(nvars), c);
        p
    }

    /// The coordinate polynomial `x_i`.
    pub fn var(nvars: usize, i: usize) -> Self {
        let mut p = Polynomial::zero(nvars);
        p.add_term(MultiIndex::unit(nvars, i), 1.0);
        p
    }

    /// `coeffs . x + offset`.
    pub fn affine(coeffs: &[f64], offset: f64) -> Self {
        let n = coeffs.len();
        let mut p = Polynomial::constant(n, offset);
        for (i, &a) in coeffs.iter().enumerate() {
            p.add_term(MultiIndex::unit(n, i), a);
        }
        p
    }

    pub fn from_terms<I>(nvars: usize, terms: I) -> Self
    where
        I: IntoIterator<Item = (MultiIndex, f64)>,
    {
        let mut p = Polynomial::zero(nvars);
        for (alpha, c) in terms {
            assert_eq!(alpha.nvars(), nvars, "exponent length must equal nvars");
            p.add_term(alpha, c);
        }
        p
    }

    /// Adds `c * x^alpha`, dropping the term if the result is negligible.
    pub fn add_term(&mut self, alpha: MultiIndex, c: f64) {
        let v = self.terms.get(&alpha).copied().unwrap_or(0.0) + c;
        if v.abs() < COEFF_EPS {
            self.terms.remove(&alpha);
        } else {
            self.terms.insert(alpha, v);
        }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn terms(&self) -> impl Iterator<Item = (&MultiIndex, f64)> {
        self.terms.iter().map(|(k, v)| (k, *v))
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coeff(&self, alpha: &MultiIndex) -> f64 {
        self.terms.get(alpha).copied().unwrap_or(0.0)
    }

    /// Total degree; the zero polynomial has degree 0.
    pub fn degree(&self) -> u32 {
        self.terms.keys().map(MultiIndex::degree).max().unwrap_or(0)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|(a, c)| c * a.eval(x)).sum()
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        Polynomial::from_terms(self.nvars, self.terms.iter().map(|(a, c)| (a.clone(), c * s)))
    }

    pub fn pow(&self, k: u32) -> Polynomial {
        let mut acc = Polynomial::constant(self.nvars, 1.0);
        for _ in 0..k {
            acc = &acc * self;
        }
        acc
    }

    /// Substitutes `x -> s * x` in every variable.
    pub fn rescale_vars(&self, s: f64) -> Polynomial {
        Polynomial::from_terms(
            self.nvars,
            self.terms
                .iter()
                .map(|(a, c)| (a.clone(), c * s.powi(a.degree() as i32))),
        )
    }

    /// Substitutes `x_i -> shift_i + scale_i * x_i` in every variable.
    pub fn affine_substitute(&self, shift: &[f64], scale: &[f64]) -> Polynomial {
        assert!(
            shift.len() == self.nvars && scale.len() == self.nvars,
            "variable count mismatch"
        );
        let n = self.nvars;
        let deg = self.degree() as usize;
        // powers[i][k] = (shift_i + scale_i x_i)^k
        let powers: Vec<Vec<Polynomial>> = (0..n)
            .map(|i| {
                let mut lin = Polynomial::constant(n, shift[i]);
                lin.add_term(MultiIndex::unit(n, i), scale[i]);
                let mut v = vec![Polynomial::constant(n, 1.0)];
                for k in 1..=deg {
                    let next = &v[k - 1] * &lin;
                    v.push(next);
                }
                v
            })
            .collect();
        let mut out = Polynomial::zero(n);
        for (a, c) in &self.terms {
            let mut term = Polynomial::constant(n, *c);
            for (i, &e) in a.exponents().iter().enumerate() {
                if e > 0 {
                    term = &term * &powers[i][e as usize];
                }
            }
            out = &out + &term;
        }
        out
    }

    /// `||x||_2^d` expanded multinomially; `d` must be even.
    pub fn norm_power(nvars: usize, d: u32) -> Polynomial {
        assert!(d % 2 == 0, "norm power must be even");
        let mut sq = Polynomial::zero(nvars);
        for i in 0..nvars {
            let mut e = vec![0; nvars];
            e[i] = 2;
            sq.add_term(MultiIndex(e), 1.0);
        }
        sq.pow(d / 2)
    }

    fn combine(&self, other: &Polynomial, sign: f64) -> Polynomial {
        assert_eq!(self.nvars, other.nvars, "variable count mismatch");
        let mut out = self.clone();
        for (a, c) in &other.terms {
            out.add_term(a.clone(), sign * c);
        }
        out
    }
}

impl fmt::Debug for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let parts: Vec<String> = self
            .terms
            .iter()
            .map(|(a, c)| format!("{c}*x^{a:?}"))
            .collect();
        write!(f, "{}", parts.join(" + "))
    }
}

impl Add for &Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: &Polynomial) -> Polynomial {
        self.combine(rhs, 1.0)
    }
}

impl Sub for &Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &Polynomial) -> Polynomial {
        self.combine(rhs, -1.0)
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        assert_eq!(self.nvars, rhs.nvars, "variable count mismatch");
        let mut acc: BTreeMap<MultiIndex, f64> = BTreeMap::new();
        for (a, ca) in &self.terms {
            for (b, cb) in &rhs.terms {
                *acc.entry(a.add(b)).or_insert(0.0) += ca * cb;
            }
        }
        acc.retain(|_, v| v.abs() >= COEFF_EPS);
        Polynomial {
            nvars: self.nvars,
            terms: acc,
        }
    }
}

/// Truncated moment sequence `y_alpha`, `|alpha| <= t`, stored in basis order.
#[derive(Clone, Debug)]
pub struct MomentVector {
    basis: MonomialBasis,
    values: Vec<f64>,
}

impl MomentVector {
    pub fn new(basis: MonomialBasis, values: Vec<f64>) -> Self {
        assert_eq!(basis.len(), values.len(), "one value per monomial");
        MomentVector { basis, values }
    }

    /// Moments of the atomic measure `sum_j w_j delta_{x_j}`.
    pub fn from_atoms(nvars: usize, t: u32, atoms: &[(f64, Vec<f64>)]) -> Self {
        let basis = MonomialBasis::new(nvars, t);
        let values = basis
            .monomials()
            .iter()
            .map(|a| atoms.iter().map(|(w, x)| w * a.eval(x)).sum())
            .collect();
        MomentVector { basis, values }
    }

    pub fn nvars(&self) -> usize {
        self.basis.nvars()
    }

    pub fn degree(&self) -> u32 {
        self.basis.max_degree()
    }

    pub fn basis(&self) -> &MonomialBasis {
        &self.basis
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, alpha: &MultiIndex) -> Option<f64> {
        self.basis.position(alpha).map(|i| self.values[i])
    }

    /// Mass `y_0`.
    pub fn mass(&self) -> f64 {
        self.values[0]
    }
}

/// Dense symmetric matrix; writes go to both triangles.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix {
    order: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(order: usize) -> Self {
        SymMatrix {
            order,
            data: vec![0.0; order * order],
        }
    }

    pub fn from_fn<F: FnMut(usize, usize) -> f64>(order: usize, mut f: F) -> Self {
        let mut m = SymMatrix::zeros(order);
        for i in 0..order {
            for j in i..order {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.order + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.order + j] = v;
        self.data[j * self.order + i] = v;
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.order, self.order, &self.data)
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        if self.order == 0 {
            return Vec::new();
        }
        let mut ev: Vec<f64> = SymmetricEigen::new(self.to_dmatrix())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().first().copied().unwrap_or(0.0)
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Number of eigenvalues above `rel_tol * max |lambda|`.
    pub fn numerical_rank(&self, rel_tol: f64) -> usize {
        let ev = self.eigenvalues();
        let scale = ev.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return 0;
        }
        ev.iter().filter(|v| v.abs() > rel_tol * scale).count()
    }
}

/// `L_y(f) = sum_alpha f_alpha y_alpha`.
pub fn riesz_apply(f: &Polynomial, y: &MomentVector) -> Result<f64, PolyError> {
    if f.nvars() != y.nvars() {
        return Err(PolyError::VariableMismatch {
            left: f.nvars(),
            right: y.nvars(),
        });
    }
    if f.degree() > y.degree() {
        return Err(PolyError::DegreeOverflow {
            needed: f.degree(),
            available: y.degree(),
        });
    }
    Ok(f.terms()
        .map(|(a, c)| c * y.get(a).expect("degree checked"))
        .sum())
}

/// Truncated moment matrix `M_r(y)`, entries `y_{alpha+beta}`.
pub fn moment_matrix(y: &MomentVector, r: u32) -> Result<SymMatrix, PolyError> {
    localizing_matrix(&Polynomial::constant(y.nvars(), 1.0), y, r)
}

/// Localizing matrix `M_r(g * y)`, entries `sum_gamma g_gamma y_{alpha+beta+gamma}`.
pub fn localizing_matrix(g: &Polynomial, y: &MomentVector, r: u32) -> Result<SymMatrix, PolyError> {
    if g.nvars() != y.nvars() {
        return Err(PolyError::VariableMismatch {
            left: g.nvars(),
            right: y.nvars(),
        });
    }
    let needed = 2 * r + g.degree();
    if needed > y.degree() {
        return Err(PolyError::DegreeOverflow {
            needed,
            available: y.degree(),
        });
    }
    let rows = &y.basis().monomials()[..y.basis().prefix_len(r)];
    Ok(SymMatrix::from_fn(rows.len(), |i, j| {
        let ab = rows[i].add(&rows[j]);
        g.terms()
            .map(|(gamma, c)| c * y.get(&ab.add(gamma)).expect("degree checked"))
            .sum()
    }))
}
