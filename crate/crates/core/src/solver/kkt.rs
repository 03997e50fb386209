//! Structured solution of the scaled Newton (KKT) system
//!
//! ```text
//! [ 0  A'  G'    ] [ux]   [bx]
//! [ A  0   0     ] [uy] = [by]
//! [ G  0  -W'W   ] [uz]   [bz]
//! ```
//!
//! Eliminating `uz` leaves `H ux + A' uy = bx + G'(W'W)^{-1} bz`, `A ux = by`
//! with `H = G'(W'W)^{-1}G`. Variables are grouped into independent
//! components (linked through PSD blocks or short inequality rows); `H` is
//! block diagonal over components except for a low-rank term from long
//! inequality rows, which is carried together with `A` in a small dense
//! Schur complement.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;

use super::cone::{ConeVec, Scaling, StdForm};

/// A linear-cone row spanning several components merges them when the
/// merged component has at most this many variables; otherwise the row is
/// carried as a coupling row.
const MAX_MERGED_VARS: usize = 256;

/// Maximum number of iterative refinement steps per solve.
const REFINE_STEPS: usize = 8;

#[derive(Debug)]
pub(crate) struct Singular;

#[derive(Debug, Clone)]
struct Component {
    vars: Vec<usize>,
    /// (row index, entries with local variable indices)
    lin_rows: Vec<(usize, Vec<(usize, f64)>)>,
    /// (block index, full symmetric entry list `(local var, a, b, value)`)
    blocks: Vec<(usize, Vec<(usize, usize, usize, f64)>)>,
    /// Transposed coupling matrix restricted to this component,
    /// `n_c x (m + q)`; `None` if identically zero.
    c_mat: Option<DMatrix<f64>>,
    /// Equality rows whose variables all lie in this component.
    local_eqs: Vec<usize>,
}

#[derive(Debug, Clone)]
pub(crate) struct KktStructure {
    comps: Vec<Component>,
    coupling: Vec<usize>,
    m: usize,
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

fn union(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        if ra < rb {
            parent[rb] = ra;
        } else {
            parent[ra] = rb;
        }
    }
}

impl KktStructure {
    pub fn new(sf: &StdForm) -> KktStructure {
        let n = sf.n;
        let mut parent: Vec<usize> = (0..n).collect();
        for b in &sf.blocks {
            let mut it = b.terms.iter().map(|t| t.0);
            if let Some(first) = it.next() {
                for v in it {
                    union(&mut parent, first, v);
                }
            }
        }
        let mut size = vec![0usize; n];
        for v in 0..n {
            size[find(&mut parent, v)] += 1;
        }
        let mut coupling = Vec::new();
        for (k, row) in sf.lin_rows.iter().enumerate() {
            let mut roots: Vec<usize> = row.iter().map(|&(v, _)| find(&mut parent, v)).collect();
            roots.sort_unstable();
            roots.dedup();
            if roots.len() <= 1 {
                continue;
            }
            let total: usize = roots.iter().map(|&r| size[r]).sum();
            if total > MAX_MERGED_VARS {
                coupling.push(k);
                continue;
            }
            for &r in &roots[1..] {
                union(&mut parent, roots[0], r);
            }
            size[find(&mut parent, roots[0])] = total;
        }
        let mut comp_of_root = vec![usize::MAX; n];
        let mut comps: Vec<Component> = Vec::new();
        let mut var_loc = vec![(0, 0); n];
        for v in 0..n {
            let r = find(&mut parent, v);
            if comp_of_root[r] == usize::MAX {
                comp_of_root[r] = comps.len();
                comps.push(Component {
                    vars: Vec::new(),
                    lin_rows: Vec::new(),
                    blocks: Vec::new(),
                    c_mat: None,
                    local_eqs: Vec::new(),
                });
            }
            let c = comp_of_root[r];
            var_loc[v] = (c, comps[c].vars.len());
            comps[c].vars.push(v);
        }
        let is_coupling = {
            let mut f = vec![false; sf.lin_rows.len()];
            for &k in &coupling {
                f[k] = true;
            }
            f
        };
        for (k, row) in sf.lin_rows.iter().enumerate() {
            if is_coupling[k] || row.is_empty() {
                continue;
            }
            let c = var_loc[row[0].0].0;
            let local = row.iter().map(|&(v, a)| (var_loc[v].1, a)).collect();
            comps[c].lin_rows.push((k, local));
        }
        for (bi, b) in sf.blocks.iter().enumerate() {
            let Some(&(first, _)) = b.terms.first() else {
                continue;
            };
            let c = var_loc[first].0;
            let mut entries = Vec::new();
            for (v, list) in &b.terms {
                let lv = var_loc[*v].1;
                for &(i, j, val) in list {
                    entries.push((lv, i, j, val));
                    if i != j {
                        entries.push((lv, j, i, val));
                    }
                }
            }
            comps[c].blocks.push((bi, entries));
        }
        let m = sf.m();
        let mp = m + coupling.len();
        let mut c_entries: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); comps.len()];
        for (i, row) in sf.a_rows.iter().enumerate() {
            for &(v, a) in row {
                let (c, l) = var_loc[v];
                c_entries[c].push((l, i, a));
            }
            if let Some(&(v0, _)) = row.first() {
                let c = var_loc[v0].0;
                if row.iter().all(|&(v, _)| var_loc[v].0 == c) {
                    comps[c].local_eqs.push(i);
                }
            }
        }
        for (qi, &k) in coupling.iter().enumerate() {
            for &(v, a) in &sf.lin_rows[k] {
                let (c, l) = var_loc[v];
                c_entries[c].push((l, m + qi, a));
            }
        }
        for (comp, entries) in comps.iter_mut().zip(c_entries) {
            if entries.is_empty() {
                continue;
            }
            let mut cm = DMatrix::zeros(comp.vars.len(), mp);
            for (l, i, a) in entries {
                cm[(l, i)] += a;
            }
            comp.c_mat = Some(cm);
        }
        KktStructure {
            comps,
            coupling,
            m,
        }
    }

    pub fn num_components(&self) -> usize {
        self.comps.len()
    }
}

/// Cholesky factorization with escalating diagonal perturbation. The
/// perturbation of each diagonal entry is relative to that entry, which is a
/// uniform shift of the Jacobi-scaled matrix.
fn robust_cholesky(h: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>, Singular> {
    let k = h.nrows();
    if k == 0 {
        return Cholesky::new(h).ok_or(Singular);
    }
    let scale = (0..k).fold(0.0f64, |m, i| m.max(h[(i, i)].abs()));
    if scale == 0.0 {
        // Variables that appear in no constraint and carry no cost: any
        // value is optimal, and the identity keeps their steps at zero.
        return Cholesky::new(DMatrix::identity(k, k)).ok_or(Singular);
    }
    let floor = 1e-30 * scale.max(1e-300);
    for &rel in &[0.0, 1e-14, 1e-13, 1e-12, 1e-11, 1e-10] {
        let mut hp = h.clone();
        for i in 0..k {
            hp[(i, i)] += rel * h[(i, i)].abs() + if rel > 0.0 { floor } else { 0.0 };
        }
        if let Some(ch) = Cholesky::new(hp) {
            let l = ch.l_dirty();
            let ok = (0..k).all(|i| l[(i, i)].is_finite() && l[(i, i)] > 0.0);
            if ok {
                return Ok(ch);
            }
        }
    }
    Err(Singular)
}

/// Adds `rho A_l'A_l` to `h` for the component's local equality rows `A_l`
/// and returns `rho`. Since `A ux = by` at the solution, the reduced system
/// stays exact once `rho A_l' by_l` is added to the right-hand side, and the
/// augmented matrix is nonsingular whenever the constraints determine `ux`.
fn augmentation(h: &mut DMatrix<f64>, comp: &Component) -> f64 {
    let Some(cm) = &comp.c_mat else {
        return 0.0;
    };
    if comp.local_eqs.is_empty() {
        return 0.0;
    }
    let nc = h.nrows();
    let mut ata = DMatrix::<f64>::zeros(nc, nc);
    for &i in &comp.local_eqs {
        let col = cm.column(i);
        ata.ger(1.0, &col, &col, 1.0);
    }
    let hmax = (0..nc).fold(0.0f64, |m, i| m.max(h[(i, i)]));
    let amax = (0..nc).fold(0.0f64, |m, i| m.max(ata[(i, i)]));
    if amax == 0.0 {
        return 0.0;
    }
    let rho = hmax.max(1e-8) / amax;
    *h += ata * rho;
    rho
}

struct CompFactor {
    chol: Cholesky<f64, Dyn>,
    /// `H_c^{-1} C_c`, `n_c x (m + q)`.
    y: Option<DMatrix<f64>>,
    /// Weight of the local equality rows added to `H_c`.
    rho: f64,
}

pub(crate) struct KktFactor<'a> {
    st: &'a KktStructure,
    sf: &'a StdForm,
    w: &'a Scaling,
    comps: Vec<CompFactor>,
    schur: Option<Cholesky<f64, Dyn>>,
}

impl<'a> KktFactor<'a> {
    pub fn new(st: &'a KktStructure, sf: &'a StdForm, w: &'a Scaling) -> Result<Self, Singular> {
        let m = st.m;
        let q = st.coupling.len();
        let mp = m + q;
        // M_b = R^{-T} R^{-1} per block.
        let mmats: Vec<DMatrix<f64>> = w.rinv.iter().map(|ri| ri.transpose() * ri).collect();
        let results: Vec<Result<(CompFactor, Option<DMatrix<f64>>), Singular>> = st
            .comps
            .par_iter()
            .map(|comp| {
                let nc = comp.vars.len();
                let mut h = DMatrix::<f64>::zeros(nc, nc);
                for (k, row) in &comp.lin_rows {
                    let d = 1.0 / (w.w[*k] * w.w[*k]);
                    for &(a, va) in row {
                        for &(b, vb) in row {
                            h[(a, b)] += d * va * vb;
                        }
                    }
                }
                for (bi, entries) in &comp.blocks {
                    let mm = &mmats[*bi];
                    for &(j, a, b, v) in entries {
                        for &(l, c, d, wv) in entries {
                            h[(j, l)] += v * wv * mm[(b, c)] * mm[(d, a)];
                        }
                    }
                }
                let rho = augmentation(&mut h, comp);
                let chol = robust_cholesky(h)?;
                let (y, s_part) = match &comp.c_mat {
                    Some(cm) => {
                        let y = chol.solve(cm);
                        let s_part = cm.transpose() * &y;
                        (Some(y), Some(s_part))
                    }
                    None => (None, None),
                };
                Ok((CompFactor { chol, y, rho }, s_part))
            })
            .collect();
        let mut comps = Vec::with_capacity(results.len());
        let mut schur = DMatrix::<f64>::zeros(mp, mp);
        for r in results {
            let (cf, sp) = r?;
            if let Some(sp) = sp {
                schur += sp;
            }
            comps.push(cf);
        }
        for (qi, &k) in st.coupling.iter().enumerate() {
            // E = D^{-1} = w^2 for the coupling rows.
            schur[(m + qi, m + qi)] += w.w[k] * w.w[k];
        }
        let schur = if mp > 0 {
            Some(robust_cholesky(schur)?)
        } else {
            None
        };
        Ok(KktFactor {
            st,
            sf,
            w,
            comps,
            schur,
        })
    }

    /// Solves the reduced system `H ux + A' uy = r1`, `A ux = by`.
    fn solve_reduced(&self, r1: &[f64], by: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let st = self.st;
        let m = st.m;
        let mp = m + st.coupling.len();
        let t: Vec<DVector<f64>> = st
            .comps
            .par_iter()
            .zip(&self.comps)
            .map(|(comp, f)| {
                let mut rc = DVector::from_iterator(comp.vars.len(), comp.vars.iter().map(|&v| r1[v]));
                if f.rho > 0.0 {
                    let cm = comp.c_mat.as_ref().expect("local rows imply coupling entries");
                    for &i in &comp.local_eqs {
                        rc.axpy(f.rho * by[i], &cm.column(i), 1.0);
                    }
                }
                f.chol.solve(&rc)
            })
            .collect();
        let mut wvec = DVector::<f64>::zeros(mp);
        if let Some(schur) = &self.schur {
            let mut rhs = DVector::<f64>::zeros(mp);
            for (comp, tc) in st.comps.iter().zip(&t) {
                if let Some(cm) = &comp.c_mat {
                    rhs += cm.tr_mul(tc);
                }
            }
            for i in 0..m {
                rhs[i] -= by[i];
            }
            wvec = schur.solve(&rhs);
        }
        let mut ux = vec![0.0; self.sf.n];
        for ((comp, f), tc) in st.comps.iter().zip(&self.comps).zip(t) {
            let xc = match &f.y {
                Some(y) => tc - y * &wvec,
                None => tc,
            };
            for (l, &v) in comp.vars.iter().enumerate() {
                ux[v] = xc[l];
            }
        }
        (ux, wvec.as_slice()[..m].to_vec())
    }

    /// One pass of the scaled system
    ///
    /// ```text
    /// [ 0   A'  G'W^{-1} ] [ux ]   [bx ]
    /// [ A   0   0        ] [uy ] = [by ]
    /// [ W^{-T}G  0  -I   ] [uzs]   [bzs]
    /// ```
    ///
    /// whose last block is the original third row multiplied by `W^{-T}`,
    /// with `uzs = W uz`.
    fn solve_once(&self, bx: &[f64], by: &[f64], bzs: &ConeVec) -> (Vec<f64>, Vec<f64>, ConeVec) {
        let mut r1 = bx.to_vec();
        self.sf.add_gt(&self.w.apply_winv(bzs), &mut r1);
        let (ux, uy) = self.solve_reduced(&r1, by);
        let mut uzs = self.w.apply_winv_t(&self.sf.apply_g(&ux));
        uzs.axpy(-1.0, bzs);
        (ux, uy, uzs)
    }

    /// Solves the scaled system with iterative refinement. The third
    /// right-hand side and unknown are in scaled form: `bzs = W^{-T} bz`,
    /// and the returned `uzs = W uz`.
    pub fn solve_scaled(
        &self,
        bx: &[f64],
        by: &[f64],
        bzs: &ConeVec,
    ) -> (Vec<f64>, Vec<f64>, ConeVec) {
        let (mut ux, mut uy, mut uzs) = self.solve_once(bx, by, bzs);
        let bnorm = (norm2(bx).powi(2) + norm2(by).powi(2) + bzs.norm().powi(2)).sqrt();
        let mut last = f64::INFINITY;
        for _ in 0..REFINE_STEPS {
            let (rx, ry, rz) = self.residual(bx, by, bzs, &ux, &uy, &uzs);
            let rn = (norm2(&rx).powi(2) + norm2(&ry).powi(2) + rz.norm().powi(2)).sqrt();
            if !(rn > 1e-15 * bnorm.max(1e-300)) || rn > 0.5 * last {
                break;
            }
            last = rn;
            let (dx, dy, dz) = self.solve_once(&rx, &ry, &rz);
            for (a, b) in ux.iter_mut().zip(&dx) {
                *a += b;
            }
            for (a, b) in uy.iter_mut().zip(&dy) {
                *a += b;
            }
            uzs.axpy(1.0, &dz);
        }
        (ux, uy, uzs)
    }

    /// Solves the unscaled system `[0 A' G'; A 0 0; G 0 -W'W] u = b`.
    pub fn solve(&self, bx: &[f64], by: &[f64], bz: &ConeVec) -> (Vec<f64>, Vec<f64>, ConeVec) {
        let (ux, uy, uzs) = self.solve_scaled(bx, by, &self.w.apply_winv_t(bz));
        (ux, uy, self.w.apply_winv(&uzs))
    }

    fn residual(
        &self,
        bx: &[f64],
        by: &[f64],
        bzs: &ConeVec,
        ux: &[f64],
        uy: &[f64],
        uzs: &ConeVec,
    ) -> (Vec<f64>, Vec<f64>, ConeVec) {
        let sf = self.sf;
        let mut kx = vec![0.0; sf.n];
        sf.add_at(uy, &mut kx);
        sf.add_gt(&self.w.apply_winv(uzs), &mut kx);
        let rx: Vec<f64> = bx.iter().zip(&kx).map(|(a, b)| a - b).collect();
        let ky = sf.apply_a(ux);
        let ry: Vec<f64> = by.iter().zip(&ky).map(|(a, b)| a - b).collect();
        let mut kz = self.w.apply_winv_t(&sf.apply_g(ux));
        kz.axpy(-1.0, uzs);
        let mut rz = bzs.clone();
        rz.axpy(-1.0, &kz);
        (rx, ry, rz)
    }
}

pub(crate) fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

