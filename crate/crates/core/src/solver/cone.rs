//! Internal standard form `min c'x, Ax = b, Gx + s = h, s in K` and the
//! vector algebra of the cone `K = R_+^l x S_+^{k_1} x ...`.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};

use super::ConicProgram;

/// One PSD block of `G`: `(Gx)_block = -sum_j x_j F_j`, `h_block = F0`.
#[derive(Debug, Clone)]
pub(crate) struct BlockData {
    pub order: usize,
    pub h: DMatrix<f64>,
    /// Per variable, the upper-triangular entries of `F_j`.
    pub terms: Vec<(usize, Vec<(usize, usize, f64)>)>,
}

#[derive(Debug, Clone)]
pub(crate) struct StdForm {
    pub n: usize,
    pub c: Vec<f64>,
    pub a_rows: Vec<Vec<(usize, f64)>>,
    pub b: Vec<f64>,
    /// Rows of `G` for the linear cone.
    pub lin_rows: Vec<Vec<(usize, f64)>>,
    pub h_lin: Vec<f64>,
    pub blocks: Vec<BlockData>,
    /// Equality rows were divided by these factors.
    pub eq_scale: Vec<f64>,
    /// Linear-cone rows were divided by these factors.
    pub lin_scale: Vec<f64>,
    /// `+1` for minimization, `-1` for maximization.
    pub sign: f64,
}

fn row_scale(terms: &[(usize, f64)]) -> f64 {
    let m = terms.iter().fold(0.0f64, |m, t| m.max(t.1.abs()));
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

impl StdForm {
    pub fn from_program(p: &ConicProgram) -> StdForm {
        let n = p.num_vars;
        let sign = match p.sense {
            super::Sense::Minimize => 1.0,
            super::Sense::Maximize => -1.0,
        };
        let mut c = vec![0.0; n];
        for &(j, v) in &p.objective {
            c[j] += sign * v;
        }
        let mut a_rows = Vec::with_capacity(p.equalities.len());
        let mut b = Vec::with_capacity(p.equalities.len());
        let mut eq_scale = Vec::with_capacity(p.equalities.len());
        for row in &p.equalities {
            let sc = row_scale(&row.terms);
            a_rows.push(row.terms.iter().map(|&(j, a)| (j, a / sc)).collect());
            b.push(row.rhs / sc);
            eq_scale.push(sc);
        }
        let mut lin_rows = Vec::new();
        let mut h_lin = Vec::new();
        let mut lin_scale = Vec::new();
        for row in &p.inequalities {
            let sc = row_scale(&row.terms);
            lin_rows.push(row.terms.iter().map(|&(j, a)| (j, a / sc)).collect());
            h_lin.push(row.rhs / sc);
            lin_scale.push(sc);
        }
        for &j in &p.nonneg {
            lin_rows.push(vec![(j, -1.0)]);
            h_lin.push(0.0);
            lin_scale.push(1.0);
        }
        let blocks = p
            .psd_blocks
            .iter()
            .map(|blk| {
                let k = blk.order;
                let mut h = DMatrix::zeros(k, k);
                for &(i, j, v) in &blk.constant {
                    h[(i, j)] += v;
                    if i != j {
                        h[(j, i)] += v;
                    }
                }
                BlockData {
                    order: k,
                    h,
                    terms: blk.terms.clone(),
                }
            })
            .collect();
        StdForm {
            n,
            c,
            a_rows,
            b,
            lin_rows,
            h_lin,
            blocks,
            eq_scale,
            lin_scale,
            sign,
        }
    }

    pub fn m(&self) -> usize {
        self.a_rows.len()
    }

    /// Cone degree: `l + sum k_i`.
    pub fn degree(&self) -> usize {
        self.lin_rows.len() + self.blocks.iter().map(|b| b.order).sum::<usize>()
    }

    pub fn h(&self) -> ConeVec {
        ConeVec {
            lin: self.h_lin.clone(),
            psd: self.blocks.iter().map(|b| b.h.clone()).collect(),
        }
    }

    pub fn zeros_cone(&self) -> ConeVec {
        ConeVec {
            lin: vec![0.0; self.lin_rows.len()],
            psd: self
                .blocks
                .iter()
                .map(|b| DMatrix::zeros(b.order, b.order))
                .collect(),
        }
    }

    pub fn identity_cone(&self) -> ConeVec {
        ConeVec {
            lin: vec![1.0; self.lin_rows.len()],
            psd: self
                .blocks
                .iter()
                .map(|b| DMatrix::identity(b.order, b.order))
                .collect(),
        }
    }

    pub fn apply_a(&self, x: &[f64]) -> Vec<f64> {
        self.a_rows
            .iter()
            .map(|row| row.iter().map(|&(j, a)| a * x[j]).sum())
            .collect()
    }

    /// `out += A' y`.
    pub fn add_at(&self, y: &[f64], out: &mut [f64]) {
        for (row, &yi) in self.a_rows.iter().zip(y) {
            for &(j, a) in row {
                out[j] += a * yi;
            }
        }
    }

    pub fn apply_g(&self, x: &[f64]) -> ConeVec {
        let lin = self
            .lin_rows
            .iter()
            .map(|row| row.iter().map(|&(j, a)| a * x[j]).sum())
            .collect();
        let psd = self
            .blocks
            .iter()
            .map(|b| {
                let mut m = DMatrix::zeros(b.order, b.order);
                for (var, entries) in &b.terms {
                    let xv = x[*var];
                    if xv == 0.0 {
                        continue;
                    }
                    for &(i, j, v) in entries {
                        m[(i, j)] -= v * xv;
                        if i != j {
                            m[(j, i)] -= v * xv;
                        }
                    }
                }
                m
            })
            .collect();
        ConeVec { lin, psd }
    }

    /// `out += G' z`.
    pub fn add_gt(&self, z: &ConeVec, out: &mut [f64]) {
        for (row, &zi) in self.lin_rows.iter().zip(&z.lin) {
            for &(j, a) in row {
                out[j] += a * zi;
            }
        }
        for (b, zm) in self.blocks.iter().zip(&z.psd) {
            for (var, entries) in &b.terms {
                let mut acc = 0.0;
                for &(i, j, v) in entries {
                    acc += if i == j { v * zm[(i, i)] } else { 2.0 * v * zm[(i, j)] };
                }
                out[*var] -= acc;
            }
        }
    }
}

/// Element of the product cone space: a vector for the linear part and one
/// symmetric matrix per PSD block.
#[derive(Debug, Clone)]
pub(crate) struct ConeVec {
    pub lin: Vec<f64>,
    pub psd: Vec<DMatrix<f64>>,
}

impl ConeVec {
    pub fn dot(&self, other: &ConeVec) -> f64 {
        let l: f64 = self.lin.iter().zip(&other.lin).map(|(a, b)| a * b).sum();
        let p: f64 = self.psd.iter().zip(&other.psd).map(|(a, b)| a.dot(b)).sum();
        l + p
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &ConeVec) {
        for (a, b) in self.lin.iter_mut().zip(&other.lin) {
            *a += alpha * b;
        }
        for (a, b) in self.psd.iter_mut().zip(&other.psd) {
            *a += b * alpha;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for a in self.lin.iter_mut() {
            *a *= alpha;
        }
        for a in self.psd.iter_mut() {
            *a *= alpha;
        }
    }

    pub fn neg(&self) -> ConeVec {
        let mut c = self.clone();
        c.scale(-1.0);
        c
    }

    /// Smallest `t` with `self + t e` in the closed cone, i.e. minus the
    /// smallest eigenvalue.
    pub fn max_step_to_boundary(&self) -> f64 {
        let mut t = f64::NEG_INFINITY;
        for &v in &self.lin {
            t = t.max(-v);
        }
        for m in &self.psd {
            let ev = SymmetricEigen::new(symmetrize(m)).eigenvalues;
            for &e in ev.iter() {
                t = t.max(-e);
            }
        }
        t
    }

    /// `self += alpha * e`.
    pub fn add_identity(&mut self, alpha: f64) {
        for v in self.lin.iter_mut() {
            *v += alpha;
        }
        for m in self.psd.iter_mut() {
            for i in 0..m.nrows() {
                m[(i, i)] += alpha;
            }
        }
    }
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Nesterov-Todd scaling `W` with `W z = W^{-T} s = lambda`.
///
/// Linear cone: `W = diag(sqrt(s / z))`. PSD block: `W(z) = R' z R` with
/// `R' z R = R^{-1} s R^{-T} = diag(lambda)`.
#[derive(Debug, Clone)]
pub(crate) struct Scaling {
    pub w: Vec<f64>,
    pub r: Vec<DMatrix<f64>>,
    pub rinv: Vec<DMatrix<f64>>,
    pub lambda: ConeVec,
}

#[derive(Debug)]
pub(crate) struct NotInterior;

impl Scaling {
    pub fn identity(sf: &StdForm) -> Scaling {
        Scaling {
            w: vec![1.0; sf.lin_rows.len()],
            r: sf
                .blocks
                .iter()
                .map(|b| DMatrix::identity(b.order, b.order))
                .collect(),
            rinv: sf
                .blocks
                .iter()
                .map(|b| DMatrix::identity(b.order, b.order))
                .collect(),
            lambda: sf.identity_cone(),
        }
    }

    pub fn compute(s: &ConeVec, z: &ConeVec) -> Result<Scaling, NotInterior> {
        let mut w = Vec::with_capacity(s.lin.len());
        let mut lam_lin = Vec::with_capacity(s.lin.len());
        for (&si, &zi) in s.lin.iter().zip(&z.lin) {
            if !(si > 0.0 && zi > 0.0) {
                return Err(NotInterior);
            }
            w.push((si / zi).sqrt());
            lam_lin.push((si * zi).sqrt());
        }
        let mut r = Vec::with_capacity(s.psd.len());
        let mut rinv = Vec::with_capacity(s.psd.len());
        let mut lam_psd = Vec::with_capacity(s.psd.len());
        for (sm, zm) in s.psd.iter().zip(&z.psd) {
            let k = sm.nrows();
            let ls = Cholesky::new(symmetrize(sm)).ok_or(NotInterior)?.l();
            let lz = Cholesky::new(symmetrize(zm)).ok_or(NotInterior)?.l();
            let prod = lz.transpose() * &ls;
            let svd = prod.svd(true, true);
            let v_t = svd.v_t.ok_or(NotInterior)?;
            let u = svd.u.ok_or(NotInterior)?;
            let sv = svd.singular_values;
            if sv.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
                return Err(NotInterior);
            }
            // R = Ls V diag(sv)^{-1/2};  R^{-1} = diag(sv)^{-1/2} U' Lz'
            let v = v_t.transpose();
            let mut rm = &ls * v;
            let mut ri = u.transpose() * lz.transpose();
            for j in 0..k {
                let f = 1.0 / sv[j].sqrt();
                for i in 0..k {
                    rm[(i, j)] *= f;
                    ri[(j, i)] *= f;
                }
            }
            r.push(rm);
            rinv.push(ri);
            lam_psd.push(DMatrix::from_diagonal(&sv));
        }
        Ok(Scaling {
            w,
            r,
            rinv,
            lambda: ConeVec {
                lin: lam_lin,
                psd: lam_psd,
            },
        })
    }

    /// `W u`.
    #[cfg(test)]
    pub fn apply_w(&self, u: &ConeVec) -> ConeVec {
        ConeVec {
            lin: u.lin.iter().zip(&self.w).map(|(a, w)| a * w).collect(),
            psd: u
                .psd
                .iter()
                .zip(&self.r)
                .map(|(m, r)| r.transpose() * m * r)
                .collect(),
        }
    }

    /// `W' u`.
    pub fn apply_wt(&self, u: &ConeVec) -> ConeVec {
        ConeVec {
            lin: u.lin.iter().zip(&self.w).map(|(a, w)| a * w).collect(),
            psd: u
                .psd
                .iter()
                .zip(&self.r)
                .map(|(m, r)| r * m * r.transpose())
                .collect(),
        }
    }

    /// `W^{-1} u`.
    pub fn apply_winv(&self, u: &ConeVec) -> ConeVec {
        ConeVec {
            lin: u.lin.iter().zip(&self.w).map(|(a, w)| a / w).collect(),
            psd: u
                .psd
                .iter()
                .zip(&self.rinv)
                .map(|(m, ri)| ri.transpose() * m * ri)
                .collect(),
        }
    }

    /// `(W'W)^{-1} u`.
    #[cfg(test)]
    pub fn apply_wtw_inv(&self, u: &ConeVec) -> ConeVec {
        self.apply_winv(&self.apply_winv_t(u))
    }

    /// `W^{-T} u`.
    pub fn apply_winv_t(&self, u: &ConeVec) -> ConeVec {
        ConeVec {
            lin: u.lin.iter().zip(&self.w).map(|(a, w)| a / w).collect(),
            psd: u
                .psd
                .iter()
                .zip(&self.rinv)
                .map(|(m, ri)| ri * m * ri.transpose())
                .collect(),
        }
    }

    /// `W'W u`.
    #[cfg(test)]
    pub fn apply_wtw(&self, u: &ConeVec) -> ConeVec {
        self.apply_wt(&self.apply_w(u))
    }

    /// `lambda o u` (Jordan product with the diagonal scaling point).
    pub fn lambda_circ(&self, u: &ConeVec) -> ConeVec {
        ConeVec {
            lin: u.lin.iter().zip(&self.lambda.lin).map(|(a, l)| a * l).collect(),
            psd: u
                .psd
                .iter()
                .zip(&self.lambda.psd)
                .map(|(m, l)| {
                    let k = m.nrows();
                    DMatrix::from_fn(k, k, |i, j| 0.5 * (l[(i, i)] + l[(j, j)]) * m[(i, j)])
                })
                .collect(),
        }
    }

    /// Solves `lambda o u = v` for `u`.
    pub fn lambda_diamond(&self, v: &ConeVec) -> ConeVec {
        ConeVec {
            lin: v.lin.iter().zip(&self.lambda.lin).map(|(a, l)| a / l).collect(),
            psd: v
                .psd
                .iter()
                .zip(&self.lambda.psd)
                .map(|(m, l)| {
                    let k = m.nrows();
                    DMatrix::from_fn(k, k, |i, j| 2.0 * m[(i, j)] / (l[(i, i)] + l[(j, j)]))
                })
                .collect(),
        }
    }

    /// Largest step `alpha` keeping `lambda + alpha * d` in the cone
    /// (`f64::INFINITY` if unrestricted).
    pub fn max_step(&self, d: &ConeVec) -> f64 {
        let mut alpha = f64::INFINITY;
        for (&di, &li) in d.lin.iter().zip(&self.lambda.lin) {
            if di < 0.0 {
                alpha = alpha.min(-li / di);
            }
        }
        for (m, l) in d.psd.iter().zip(&self.lambda.psd) {
            let k = m.nrows();
            let scaled = DMatrix::from_fn(k, k, |i, j| {
                0.5 * (m[(i, j)] + m[(j, i)]) / (l[(i, i)] * l[(j, j)]).sqrt()
            });
            let ev = SymmetricEigen::new(scaled).eigenvalues;
            let emin = ev.iter().fold(f64::INFINITY, |a, &b| a.min(b));
            if emin < 0.0 {
                alpha = alpha.min(-1.0 / emin);
            }
        }
        alpha
    }
}

/// Jordan product `u o v`.
pub(crate) fn jordan(u: &ConeVec, v: &ConeVec) -> ConeVec {
    ConeVec {
        lin: u.lin.iter().zip(&v.lin).map(|(a, b)| a * b).collect(),
        psd: u
            .psd
            .iter()
            .zip(&v.psd)
            .map(|(a, b)| (a * b + b * a) * 0.5)
            .collect(),
    }
}
