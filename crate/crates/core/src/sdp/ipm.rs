//! Primal-dual interior-point kernel for
//!
//! ```text
//! min  <C, X> + c_l . x + c_u . u
//! s.t. <A_j, X> + (A_l x)_j + (A_u u)_j = b_j
//!      X Hermitian PSD, x >= 0, u free
//! ```
//!
//! HKM search direction with Mehrotra predictor-corrector steps. The Schur
//! complement uses the structure of entry-type constraint matrices, so
//! diagonal bounds cost O(1) per pair instead of two dense products.

use nalgebra::{Cholesky, DMatrix, DVector};

use super::SymMatrix;
use crate::lift::hermitian_part;
use crate::scalar::{re, Cx, Real};

pub(crate) struct ConicData<T: Real> {
    pub n: usize,
    pub mats: Vec<SymMatrix<T>>,
    pub a_l: DMatrix<T>,
    pub a_u: DMatrix<T>,
    pub b: DVector<T>,
    pub c_s: Option<DMatrix<Cx<T>>>,
    pub c_l: DVector<T>,
    pub c_u: DVector<T>,
}

#[derive(Clone, Debug)]
pub(crate) struct Iterate<T: Real> {
    pub x: DMatrix<Cx<T>>,
    pub z: DMatrix<Cx<T>>,
    pub xl: DVector<T>,
    pub zl: DVector<T>,
    pub u: DVector<T>,
    pub y: DVector<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Outcome {
    Optimal,
    PrimalInfeasible,
    DualInfeasible,
    MaxIters,
    Stalled,
}

pub(crate) struct IpmResult<T: Real> {
    pub it: Iterate<T>,
    pub outcome: Outcome,
    pub pinf: T,
    pub dinf: T,
    pub gap: T,
    pub dobj: T,
    pub iters: usize,
}

impl<T: Real> ConicData<T> {
    pub fn m(&self) -> usize {
        self.mats.len()
    }

    fn apply(&self, x: &DMatrix<Cx<T>>) -> DVector<T> {
        DVector::from_iterator(self.m(), self.mats.iter().map(|a| a.inner(x)))
    }

    fn adjoint(&self, y: &DVector<T>) -> DMatrix<Cx<T>> {
        let mut out = DMatrix::zeros(self.n, self.n);
        for (a, &yj) in self.mats.iter().zip(y.iter()) {
            a.add_scaled_to(&mut out, yj);
        }
        out
    }

    fn c_inner(&self, x: &DMatrix<Cx<T>>) -> T {
        self.c_s.as_ref().map_or(T::zero(), |c| crate::lift::trace_product(c, x))
    }

    fn c_norm(&self) -> T {
        let s = self.c_s.as_ref().map_or(T::zero(), |c| c.norm_squared());
        (s + self.c_l.norm_squared() + self.c_u.norm_squared()).sqrt()
    }

    /// Schur complement `M_ij = Re tr(A_i X A_j Z^{-1})`.
    fn schur(
        &self,
        lr: &LowRank<T>,
        x: &DMatrix<Cx<T>>,
        zinv: &DMatrix<Cx<T>>,
        xu: &DMatrix<Cx<T>>,
        zu: &DMatrix<Cx<T>>,
    ) -> DMatrix<T> {
        let m = self.m();
        let mut out = DMatrix::zeros(m, m);
        let mut done = vec![false; m];
        // full-rank dense rows
        for (j, aj) in self.mats.iter().enumerate() {
            if let (SymMatrix::Dense(a), None) = (aj, &lr.rows[j]) {
                let t = x * a * zinv;
                for (i, ai) in self.mats.iter().enumerate() {
                    let v = ai.inner(&t);
                    out[(i, j)] = v;
                    out[(j, i)] = v;
                }
                done[j] = true;
            }
        }
        // low-rank rows: A_j = sum_r sig_r u_r u_r^H
        if lr.u.ncols() > 0 {
            let p = lr.u.ad_mul(xu);
            let q = lr.u.ad_mul(zu);
            for (j, rj) in lr.rows.iter().enumerate() {
                let Some(rj) = rj else { continue };
                for (i, ai) in self.mats.iter().enumerate() {
                    if done[i] {
                        continue;
                    }
                    let v = match (ai, &lr.rows[i]) {
                        (_, Some(ri)) => {
                            if i > j {
                                continue;
                            }
                            let mut acc = T::zero();
                            for r in ri.clone() {
                                for s in rj.clone() {
                                    acc += lr.sig[r] * lr.sig[s] * (p[(r, s)] * q[(s, r)]).re;
                                }
                            }
                            acc
                        }
                        (SymMatrix::Entry { index: qq, weight }, None) => {
                            let mut acc = T::zero();
                            for s in rj.clone() {
                                acc += lr.sig[s] * (zu[(*qq, s)] * xu[(*qq, s)].conj()).re;
                            }
                            *weight * acc
                        }
                        _ => T::zero(),
                    };
                    out[(i, j)] = v;
                    out[(j, i)] = v;
                }
            }
        }
        for (j, aj) in self.mats.iter().enumerate() {
            let SymMatrix::Entry { index: q, weight: wj } = *aj else { continue };
            for (i, ai) in self.mats.iter().enumerate().take(j + 1) {
                if done[i] {
                    continue;
                }
                if let SymMatrix::Entry { index: p, weight: wi } = *ai {
                    let v = wi * wj * (zinv[(q, p)] * x[(p, q)]).re;
                    out[(i, j)] = v;
                    out[(j, i)] = v;
                }
            }
        }
        out
    }
}

/// Eigen-factorization of the dense constraint matrices that have low rank.
struct LowRank<T: Real> {
    /// Stacked eigenvectors of all low-rank rows.
    u: DMatrix<Cx<T>>,
    sig: Vec<T>,
    /// Column range in `u` of each row, `None` for rows kept as they are.
    rows: Vec<Option<std::ops::Range<usize>>>,
}

impl<T: Real> LowRank<T> {
    fn new(data: &ConicData<T>) -> Self {
        let n = data.n;
        let mut cols: Vec<DVector<Cx<T>>> = Vec::new();
        let mut sig = Vec::new();
        let mut rows = Vec::with_capacity(data.m());
        for a in &data.mats {
            let SymMatrix::Dense(a) = a else {
                rows.push(None);
                continue;
            };
            let eig = nalgebra::SymmetricEigen::new(a.clone());
            let top = eig.eigenvalues.iter().fold(T::zero(), |m, v| m.max(v.abs()));
            let keep: Vec<usize> = (0..n).filter(|&k| eig.eigenvalues[k].abs() > top * T::eps() * T::lit(10.0)).collect();
            if 3 * keep.len() > n {
                rows.push(None);
                continue;
            }
            let start = cols.len();
            for k in keep {
                cols.push(eig.eigenvectors.column(k).into_owned());
                sig.push(eig.eigenvalues[k]);
            }
            rows.push(Some(start..cols.len()));
        }
        let u = if cols.is_empty() { DMatrix::zeros(n, 0) } else { DMatrix::from_columns(&cols) };
        LowRank { u, sig, rows }
    }
}

fn sym<T: Real>(a: &DMatrix<Cx<T>>) -> DMatrix<Cx<T>> {
    hermitian_part(a)
}

fn hdot<T: Real>(a: &DMatrix<Cx<T>>, b: &DMatrix<Cx<T>>) -> T {
    crate::lift::trace_product(a, b)
}

fn inf_norm<T: Real>(v: &DVector<T>) -> T {
    v.iter().fold(T::zero(), |m, x| m.max(x.abs()))
}

/// Largest `alpha` with `X + alpha dX` PSD, given the Cholesky factor of `X`.
fn max_step_psd<T: Real>(chol_l: &DMatrix<Cx<T>>, dx: &DMatrix<Cx<T>>) -> T {
    let big = T::lit(1e30);
    let Some(s1) = chol_l.solve_lower_triangular(dx) else {
        return T::zero();
    };
    let Some(s) = chol_l.solve_lower_triangular(&s1.adjoint()) else {
        return T::zero();
    };
    let lmin = sym(&s).symmetric_eigenvalues().min();
    if lmin < T::zero() {
        -T::one() / lmin
    } else {
        big
    }
}

/// Cheap estimate of the largest PSD step from a few Lanczos steps on
/// `L^{-1} dX L^{-H}`. Not a safe bound; only used for the centering
/// parameter.
fn estimate_step_psd<T: Real>(chol_l: &DMatrix<Cx<T>>, dx: &DMatrix<Cx<T>>, steps: usize) -> T {
    let n = dx.nrows();
    let apply = |v: &DVector<Cx<T>>| -> Option<DVector<Cx<T>>> {
        let w = chol_l.ad_solve_lower_triangular(v)?;
        chol_l.solve_lower_triangular(&(dx * w))
    };
    let mut q = DVector::from_fn(n, |i, _| re(T::one() + T::lit(((i as f64) * 0.618_033_988_75).fract())));
    q /= re(q.norm());
    let mut basis: Vec<DVector<Cx<T>>> = Vec::new();
    let mut alpha = Vec::new();
    let mut beta: Vec<T> = Vec::new();
    for _ in 0..steps.min(n) {
        let Some(mut w) = apply(&q) else { return T::zero() };
        let a = q.dotc(&w).re;
        w -= &q * re(a);
        basis.push(q.clone());
        for b in &basis {
            let c = b.dotc(&w);
            w -= b * c;
        }
        alpha.push(a);
        let nb = w.norm();
        if nb <= T::eps() * (T::one() + a.abs()) {
            break;
        }
        beta.push(nb);
        q = w / re(nb);
    }
    let k = alpha.len();
    let tri = DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            alpha[i]
        } else if i + 1 == j || j + 1 == i {
            beta[i.min(j)]
        } else {
            T::zero()
        }
    });
    let lmin = tri.symmetric_eigenvalues().min();
    if lmin < T::zero() {
        -T::one() / lmin
    } else {
        T::lit(1e30)
    }
}

fn max_step_lp<T: Real>(x: &DVector<T>, dx: &DVector<T>) -> T {
    x.iter()
        .zip(dx.iter())
        .filter(|(_, d)| **d < T::zero())
        .fold(T::lit(1e30), |a, (xi, di)| a.min(-*xi / *di))
}

/// Cholesky with increasing diagonal regularization for nearly singular
/// Schur complements.
fn robust_cholesky<T: Real>(m: DMatrix<T>) -> Option<Cholesky<T, nalgebra::Dyn>> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Some(c);
    }
    let scale = m.diagonal().iter().fold(T::zero(), |a, d| a.max(d.abs())).max(T::eps());
    let mut delta = scale * T::eps().sqrt() * T::lit(1e-4);
    for _ in 0..12 {
        let mut mm = m.clone();
        for i in 0..mm.nrows() {
            mm[(i, i)] += delta;
        }
        if let Some(c) = Cholesky::new(mm) {
            return Some(c);
        }
        delta *= T::lit(10.0);
    }
    None
}

struct Direction<T: Real> {
    dx: DMatrix<Cx<T>>,
    dz: DMatrix<Cx<T>>,
    dxl: DVector<T>,
    dzl: DVector<T>,
    du: DVector<T>,
    dy: DVector<T>,
}

struct Newton<'a, T: Real> {
    data: &'a ConicData<T>,
    it: &'a Iterate<T>,
    zinv: DMatrix<Cx<T>>,
    x_rd_zinv: Option<DMatrix<Cx<T>>>,
    lowrank: &'a LowRank<T>,
    xu: DMatrix<Cx<T>>,
    zu: DMatrix<Cx<T>>,
    d: DVector<T>,
    m: DMatrix<T>,
    mchol: Cholesky<T, nalgebra::Dyn>,
    /// `M^{-1} A_u` and the factor of `A_u^T M^{-1} A_u`.
    minv_au: DMatrix<T>,
    s_chol: Option<Cholesky<T, nalgebra::Dyn>>,
    rp: DVector<T>,
    rd: DMatrix<Cx<T>>,
    rdl: DVector<T>,
    ru: DVector<T>,
}

impl<'a, T: Real> Newton<'a, T> {
    /// `X A^*(y) Z^{-1}` using the low-rank factors where available.
    fn x_ady_zinv(&self, y: &DVector<T>) -> DMatrix<Cx<T>> {
        let data = self.data;
        let n = data.n;
        let lr = self.lowrank;
        let mut diag = vec![T::zero(); n];
        let mut has_diag = false;
        let mut dense: Option<DMatrix<Cx<T>>> = None;
        let mut coef = vec![T::zero(); lr.sig.len()];
        for (j, a) in data.mats.iter().enumerate() {
            match (a, &lr.rows[j]) {
                (_, Some(r)) => {
                    for k in r.clone() {
                        coef[k] = lr.sig[k] * y[j];
                    }
                }
                (SymMatrix::Entry { index, weight }, None) => {
                    diag[*index] += *weight * y[j];
                    has_diag = true;
                }
                (SymMatrix::Dense(_), None) => {
                    a.add_scaled_to(dense.get_or_insert_with(|| DMatrix::zeros(n, n)), y[j]);
                }
                (SymMatrix::Zero, None) => {}
            }
        }
        let mut out = if lr.sig.is_empty() {
            DMatrix::zeros(n, n)
        } else {
            let scaled = DMatrix::from_fn(n, lr.sig.len(), |i, k| self.xu[(i, k)] * re(coef[k]));
            scaled * self.zu.adjoint()
        };
        match dense {
            Some(mut e) => {
                for (i, d) in diag.iter().enumerate() {
                    e[(i, i)] += re(*d);
                }
                out += &self.it.x * e * &self.zinv;
            }
            None if has_diag => {
                let xd = DMatrix::from_fn(n, n, |i, k| self.it.x[(i, k)] * re(diag[k]));
                out += xd * &self.zinv;
            }
            None => {}
        }
        out
    }

    /// Solves `[M A_u; A_u^T 0] [dy; du] = [h; r]`.
    fn kkt(&self, h: &DVector<T>, r: &DVector<T>) -> (DVector<T>, DVector<T>) {
        let minv_h = self.mchol.solve(h);
        match &self.s_chol {
            Some(s) => {
                let rhs = self.data.a_u.tr_mul(&minv_h) - r;
                let du = s.solve(&rhs);
                let dy = &minv_h - &self.minv_au * &du;
                (dy, du)
            }
            None => (minv_h, DVector::zeros(0)),
        }
    }

    /// Direction for complementarity targets `sdp_rhs = sigma mu Z^{-1} - X - corr`
    /// and `lp_rhs = sigma mu / z - x - corr_l`.
    fn solve(&self, sdp_rhs: &DMatrix<Cx<T>>, lp_rhs: &DVector<T>) -> Direction<T> {
        let data = self.data;
        let g = match &self.x_rd_zinv {
            Some(t) => sym(&(sdp_rhs - t)),
            None => sym(sdp_rhs),
        };
        let gl = lp_rhs - self.d.component_mul(&self.rdl);
        let h = &self.rp - data.apply(&g) - &data.a_l * &gl;
        let (mut dy, mut du) = self.kkt(&h, &self.ru);
        for _ in 0..2 {
            let r1 = &h - &self.m * &dy - &data.a_u * &du;
            let r2 = &self.ru - data.a_u.tr_mul(&dy);
            let (cy, cu) = self.kkt(&r1, &r2);
            dy += cy;
            du += cu;
        }
        let dz = &self.rd - data.adjoint(&dy);
        let dzl = &self.rdl - data.a_l.tr_mul(&dy);
        // X dZ Z^{-1} = X Rd Z^{-1} - X A^*(dy) Z^{-1}
        let mut t = self.x_ady_zinv(&dy);
        t.neg_mut();
        if let Some(r) = &self.x_rd_zinv {
            t += r;
        }
        let dx = sym(&(sdp_rhs - t));
        let dxl = lp_rhs - self.d.component_mul(&dzl);
        Direction { dx, dz, dxl, dzl, du, dy }
    }
}

pub(crate) fn run<T: Real>(data: &ConicData<T>, tol_feas: T, tol_gap: T, max_iters: usize) -> IpmResult<T> {
    let n = data.n;
    let m = data.m();
    let nl = data.a_l.ncols();
    let nu = data.a_u.ncols();
    let nf = T::lit(n as f64);
    let nu_cone = T::lit((n + nl) as f64);

    let b_norm = inf_norm(&data.b);
    let c_norm = data.c_norm();
    let rho_p = data
        .mats
        .iter()
        .zip(data.b.iter())
        .fold(T::lit(10.0).max(nf.sqrt()), |acc, (a, bj)| {
            acc.max(nf.sqrt() * (T::one() + bj.abs()) / (T::one() + a.norm()))
        });
    let rho_d = T::lit(10.0).max(nf.sqrt()).max(c_norm);

    let lowrank = LowRank::new(data);
    let mut it = Iterate {
        x: DMatrix::identity(n, n) * re(rho_p),
        z: DMatrix::identity(n, n) * re(rho_d),
        xl: DVector::from_element(nl, rho_p),
        zl: DVector::from_element(nl, rho_d),
        u: DVector::zeros(nu),
        y: DVector::zeros(m),
    };

    let result = |it: Iterate<T>, outcome, pinf, dinf, gap, _pobj: T, dobj, iters| IpmResult {
        it,
        outcome,
        pinf,
        dinf,
        gap,
        dobj,
        iters,
    };
    let mut stall = 0usize;
    let mut best_merit = T::lit(f64::INFINITY);
    let mut since_best = 0usize;
    let mut best: Option<(Iterate<T>, [T; 5])> = None;
    let mut last;
    for iter in 0..=max_iters {
        let rp = &data.b - data.apply(&it.x) - &data.a_l * &it.xl - &data.a_u * &it.u;
        let mut rd = -data.adjoint(&it.y) - &it.z;
        if let Some(c) = &data.c_s {
            rd += c;
        }
        let rdl = &data.c_l - data.a_l.tr_mul(&it.y) - &it.zl;
        let ru = &data.c_u - data.a_u.tr_mul(&it.y);
        let pobj = data.c_inner(&it.x) + data.c_l.dot(&it.xl) + data.c_u.dot(&it.u);
        let dobj = data.b.dot(&it.y);
        let pinf = inf_norm(&rp) / (T::one() + b_norm);
        let dinf = (rd.norm_squared() + rdl.norm_squared() + ru.norm_squared()).sqrt() / (T::one() + c_norm);
        let gap = (pobj - dobj).abs() / (T::one() + pobj.abs() + dobj.abs());
        last = (pinf, dinf, gap, pobj, dobj);
        let mu = (hdot(&it.x, &it.z) + it.xl.dot(&it.zl)) / nu_cone;

        if pinf <= tol_feas && dinf <= tol_feas && gap <= tol_gap {
            return result(it, Outcome::Optimal, pinf, dinf, gap, pobj, dobj, iter);
        }
        // Farkas-type certificates from diverging iterates
        if dobj > T::zero() {
            let cert = ((rd.clone() - data.c_s.clone().unwrap_or_else(|| DMatrix::zeros(n, n))).norm_squared()
                + (&rdl - &data.c_l).norm_squared()
                + (&ru - &data.c_u).norm_squared())
            .sqrt()
                / dobj;
            if cert < tol_feas * T::lit(1e-1) && dobj > T::lit(1e3) {
                return result(it, Outcome::PrimalInfeasible, pinf, dinf, gap, pobj, dobj, iter);
            }
        }
        if pobj < T::zero() {
            let cert = inf_norm(&(&data.b - &rp)) / (-pobj);
            if cert < tol_feas * T::lit(1e-1) && -pobj > T::lit(1e3) {
                return result(it, Outcome::DualInfeasible, pinf, dinf, gap, pobj, dobj, iter);
            }
        }
        let merit = (pinf / tol_feas).max(dinf / tol_feas).max(gap / tol_gap);
        if merit < best_merit {
            best = Some((it.clone(), [pinf, dinf, gap, pobj, dobj]));
        }
        if merit < best_merit * T::lit(0.8) {
            since_best = 0;
        } else {
            since_best += 1;
        }
        best_merit = best_merit.min(merit);
        if since_best >= 8 {
            let (b, [pinf, dinf, gap, pobj, dobj]) = best.take().expect("merit improved at least once");
            return result(b, Outcome::Stalled, pinf, dinf, gap, pobj, dobj, iter);
        }
        if iter == max_iters || !mu.is_finite() {
            let o = if mu.is_finite() { Outcome::MaxIters } else { Outcome::Stalled };
            return result(it, o, pinf, dinf, gap, pobj, dobj, iter);
        }

        let Some(zchol) = Cholesky::new(it.z.clone()) else {
            return result(it, Outcome::Stalled, pinf, dinf, gap, pobj, dobj, iter);
        };
        let Some(xchol) = Cholesky::new(it.x.clone()) else {
            return result(it, Outcome::Stalled, pinf, dinf, gap, pobj, dobj, iter);
        };
        let zinv = sym(&zchol.inverse());
        let xl_fac = xchol.l();
        let zl_fac = zchol.l();

        let d = it.xl.component_div(&it.zl);
        let xu = &it.x * &lowrank.u;
        let zu = &zinv * &lowrank.u;
        let mut mmat = data.schur(&lowrank, &it.x, &zinv, &xu, &zu);
        if nl > 0 {
            let ad = DMatrix::from_fn(m, nl, |i, k| data.a_l[(i, k)] * d[k]);
            mmat += ad * data.a_l.transpose();
        }
        let Some(mchol) = robust_cholesky(mmat.clone()) else {
            return result(it, Outcome::Stalled, pinf, dinf, gap, pobj, dobj, iter);
        };
        let (minv_au, s_chol) = if nu > 0 {
            let minv_au = mchol.solve(&data.a_u);
            let s = data.a_u.tr_mul(&minv_au);
            match robust_cholesky(s) {
                Some(c) => (minv_au, Some(c)),
                None => return result(it, Outcome::Stalled, pinf, dinf, gap, pobj, dobj, iter),
            }
        } else {
            (DMatrix::zeros(m, 0), None)
        };
        let rd_tiny = rd.norm() <= T::eps() * (T::one() + c_norm);
        let x_rd_zinv = (!rd_tiny).then(|| &it.x * &rd * &zinv);
        let newton = Newton {
            data,
            it: &it,
            zinv,
            x_rd_zinv,
            lowrank: &lowrank,
            xu,
            zu,
            d,
            m: mmat,
            mchol,
            minv_au,
            s_chol,
            rp,
            rd,
            rdl,
            ru,
        };

        // predictor
        let pred = newton.solve(&(-&it.x), &(-&it.xl));
        let ap = estimate_step_psd(&xl_fac, &pred.dx, 12).min(max_step_lp(&it.xl, &pred.dxl)).min(T::one());
        let ad = estimate_step_psd(&zl_fac, &pred.dz, 12).min(max_step_lp(&it.zl, &pred.dzl)).min(T::one());
        let mu_aff = (hdot(&(&it.x + &pred.dx * re(ap)), &(&it.z + &pred.dz * re(ad)))
            + (&it.xl + &pred.dxl * ap).dot(&(&it.zl + &pred.dzl * ad)))
            / nu_cone;
        let ratio = (mu_aff / mu).max(T::zero());
        let sigma = (ratio * ratio * ratio).min(T::one());
        let gamma = T::lit(0.9) + T::lit(0.09) * ap.min(ad);

        // corrector
        let smu = sigma * mu;
        let corr = &pred.dx * &pred.dz * &newton.zinv;
        let sdp_rhs = &newton.zinv * re(smu) - &it.x - corr;
        let lp_rhs = DVector::from_fn(nl, |k, _| {
            (smu - pred.dxl[k] * pred.dzl[k]) / it.zl[k] - it.xl[k]
        });
        let dir = newton.solve(&sdp_rhs, &lp_rhs);
        let ap = (gamma * max_step_psd(&xl_fac, &dir.dx).min(max_step_lp(&it.xl, &dir.dxl))).min(T::one());
        let ad = (gamma * max_step_psd(&zl_fac, &dir.dz).min(max_step_lp(&it.zl, &dir.dzl))).min(T::one());
        drop(newton);

        it.x = sym(&(&it.x + &dir.dx * re(ap)));
        it.xl += &dir.dxl * ap;
        it.u += &dir.du * ap;
        it.z = sym(&(&it.z + &dir.dz * re(ad)));
        it.zl += &dir.dzl * ad;
        it.y += &dir.dy * ad;

        if ap.max(ad) < T::lit(1e-9) {
            stall += 1;
            if stall >= 3 {
                let (pinf, dinf, gap, pobj, dobj) = last;
                return result(it, Outcome::Stalled, pinf, dinf, gap, pobj, dobj, iter + 1);
            }
        } else {
            stall = 0;
        }
    }
    unreachable!("loop returns on the final iteration")
}
