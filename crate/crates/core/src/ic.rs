//! Interference-cancellation design.
//!
//! With `N >= L(K+L)` the RIS coefficients can be restricted to the affine
//! set `phi = B f_sig + d` on which every interference path into the receive
//! devices vanishes and the effective D2D gains equal `f_sig`. Only `f_sig`
//! is then optimized, through one `(L+1) x (L+1)` semidefinite relaxation.

use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::channels::{Instance, PhaseShift};
use crate::error::{Error, Result};
use crate::lift::hermitian_part;
use crate::rng::{purpose, RandomStream};
use crate::scalar::{abs, abs2, cx, re, Cx, Real};
use crate::sdp::{SdpProblem, SdpSolution, SdpSolver, SdpStatus, Sense, SymMatrix};
use crate::sinr::{evaluate, CombinerChoice, Combiner, SinrReport};

/// Largest accepted condition number of `A A^H`.
pub const MAX_CONDITION: f64 = 1e12;

/// Split of `vec((F^DD)^T)` into its diagonal (signal) and off-diagonal
/// (interference) entries.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Permutation {
    pub sig: Vec<usize>,
    pub itf: Vec<usize>,
}

impl Permutation {
    /// Index `l L + l'` of the vec holds `F^DD[l][l']`.
    pub fn for_pairs(pairs: usize) -> Self {
        let mut sig = Vec::with_capacity(pairs);
        let mut itf = Vec::with_capacity(pairs * pairs.saturating_sub(1));
        for l in 0..pairs {
            for lp in 0..pairs {
                if l == lp {
                    sig.push(l * pairs + lp);
                } else {
                    itf.push(l * pairs + lp);
                }
            }
        }
        Self { sig, itf }
    }

    pub fn len(&self) -> usize {
        self.sig.len() + self.itf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn split<X: Clone + nalgebra::Scalar>(&self, v: &DVector<X>) -> (DVector<X>, DVector<X>) {
        (
            DVector::from_fn(self.sig.len(), |i, _| v[self.sig[i]].clone()),
            DVector::from_fn(self.itf.len(), |i, _| v[self.itf[i]].clone()),
        )
    }

    pub fn merge<X: Clone + nalgebra::Scalar + num_traits::Zero>(&self, sig: &DVector<X>, itf: &DVector<X>) -> DVector<X> {
        let mut out = DVector::zeros(self.len());
        for (i, &j) in self.sig.iter().enumerate() {
            out[j] = sig[i].clone();
        }
        for (i, &j) in self.itf.iter().enumerate() {
            out[j] = itf[i].clone();
        }
        out
    }
}

/// Device-side channels stacked as `[f_sig; f_itf; f_UD] = h + A phi`.
#[derive(Clone, Debug)]
pub struct StackedChannels<T: Real> {
    /// `L(K+L) x N`, rows ordered as `[G_sig; G_itf; G_UD]`.
    pub a: DMatrix<Cx<T>>,
    pub h_sig: DVector<Cx<T>>,
    pub h_itf: DVector<Cx<T>>,
    /// Row-major over `(l, k)`.
    pub h_ud: DVector<Cx<T>>,
    pub perm: Permutation,
    pub pairs: usize,
    pub users: usize,
}

impl<T: Real> StackedChannels<T> {
    /// `[h_sig; h_itf; h_UD]`.
    pub fn offsets(&self) -> DVector<Cx<T>> {
        let mut h = DVector::zeros(self.a.nrows());
        let (ns, ni) = (self.h_sig.len(), self.h_itf.len());
        h.rows_mut(0, ns).copy_from(&self.h_sig);
        h.rows_mut(ns, ni).copy_from(&self.h_itf);
        h.rows_mut(ns + ni, self.h_ud.len()).copy_from(&self.h_ud);
        h
    }

    /// `vec((F^DD)^T)` and `vec((F^UD)^T)` for a given `phi`.
    pub fn device_vectors(&self, phi: &PhaseShift<T>) -> (DVector<Cx<T>>, DVector<Cx<T>>) {
        let f = self.offsets() + &self.a * &phi.phi;
        let (ns, ni) = (self.h_sig.len(), self.h_itf.len());
        let sig = f.rows(0, ns).into_owned();
        let itf = f.rows(ns, ni).into_owned();
        (self.perm.merge(&sig, &itf), f.rows(ns + ni, self.h_ud.len()).into_owned())
    }
}

pub fn stack<T: Real>(inst: &Instance<T>) -> StackedChannels<T> {
    let d = inst.dims();
    let (l_n, k_n, n) = (d.pairs, d.users, d.elements);
    let perm = Permutation::for_pairs(l_n);
    let casc = &inst.cascaded;
    let ch = &inst.channels;
    let pair_of = |v: usize| (v / l_n, v % l_n);
    let mut rows: Vec<&DVector<Cx<T>>> = Vec::with_capacity(d.device_links());
    let mut pick = |idx: &[usize]| -> DVector<Cx<T>> {
        DVector::from_iterator(
            idx.len(),
            idx.iter().map(|&v| {
                let (l, lp) = pair_of(v);
                rows.push(&casc.g_dd[l][lp]);
                ch.h_dd[(l, lp)]
            }),
        )
    };
    let h_sig = pick(&perm.sig);
    let h_itf = pick(&perm.itf);
    let mut h_ud = DVector::zeros(l_n * k_n);
    for l in 0..l_n {
        for k in 0..k_n {
            rows.push(&casc.g_ud[l][k]);
            h_ud[l * k_n + k] = ch.h_ud[(l, k)];
        }
    }
    // each stored g enters as g^H phi
    let a = DMatrix::from_fn(rows.len(), n, |r, c| rows[r][c].conj());
    StackedChannels {
        a,
        h_sig,
        h_itf,
        h_ud,
        perm,
        pairs: l_n,
        users: k_n,
    }
}

/// `phi = B f_sig + d`: the RIS coefficients that null all device-side
/// interference and give effective D2D gains `f_sig`.
#[derive(Clone, Debug)]
pub struct AffinePhase<T: Real> {
    /// `N x L`; row `i` is `b_i^H`.
    pub b: DMatrix<Cx<T>>,
    pub d: DVector<Cx<T>>,
}

impl<T: Real> AffinePhase<T> {
    pub fn phase(&self, f_sig: &DVector<Cx<T>>) -> PhaseShift<T> {
        PhaseShift::new(&self.b * f_sig + &self.d)
    }

    pub fn pairs(&self) -> usize {
        self.b.ncols()
    }
}

/// `[B, C] = A^H (A A^H)^{-1}` and `d = -[B, C] h`.
#[derive(Clone, Debug)]
pub struct IcRepresentation<T: Real> {
    pub b: DMatrix<Cx<T>>,
    pub c: DMatrix<Cx<T>>,
    pub d: DVector<Cx<T>>,
    /// `cond(A A^H)`.
    pub condition: f64,
}

impl<T: Real> IcRepresentation<T> {
    /// `[B, C]`.
    pub fn pseudo_inverse(&self) -> DMatrix<Cx<T>> {
        let (n, l) = self.b.shape();
        let mut out = DMatrix::zeros(n, l + self.c.ncols());
        out.columns_mut(0, l).copy_from(&self.b);
        out.columns_mut(l, self.c.ncols()).copy_from(&self.c);
        out
    }

    pub fn affine(&self) -> AffinePhase<T> {
        AffinePhase {
            b: self.b.clone(),
            d: self.d.clone(),
        }
    }
}

fn relative_identity_error<T: Real>(a: &DMatrix<Cx<T>>, pinv: &DMatrix<Cx<T>>) -> T {
    let r = a.nrows();
    let e = a * pinv - DMatrix::<Cx<T>>::identity(r, r);
    e.norm() / T::lit((r as f64).sqrt())
}

/// Builds the cancelling representation through a thin QR factorization
/// of `A^H`.
pub fn build_representation<T: Real>(st: &StackedChannels<T>) -> Result<IcRepresentation<T>> {
    let (rows, n) = st.a.shape();
    if n < rows {
        return Err(Error::Underdetermined {
            elements: n,
            required: rows,
        });
    }
    let l = st.pairs;
    if rows == 0 {
        return Ok(IcRepresentation {
            b: DMatrix::zeros(n, 0),
            c: DMatrix::zeros(n, 0),
            d: DVector::zeros(n),
            condition: 1.0,
        });
    }
    // A^H = Q R  =>  A^H (A A^H)^{-1} = Q R^{-H}
    let qr = st.a.adjoint().qr();
    let (q, r) = qr.unpack();
    let sv = r.singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let condition = if smin > T::zero() {
        (smax / smin).as_f64().powi(2)
    } else {
        f64::INFINITY
    };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::IllConditioned(condition));
    }
    let r_inv_h = r
        .adjoint()
        .solve_lower_triangular(&DMatrix::identity(rows, rows))
        .ok_or(Error::IllConditioned(condition))?;
    let pinv = q * r_inv_h;
    let tol = T::lit(1e-8).max(T::eps() * T::lit(1e4));
    if !(relative_identity_error(&st.a, &pinv) <= tol) {
        return Err(Error::IllConditioned(condition));
    }
    let d = -(&pinv * st.offsets());
    Ok(IcRepresentation {
        b: pinv.columns(0, l).into_owned(),
        c: pinv.columns(l, rows - l).into_owned(),
        d,
        condition,
    })
}

/// `phi = B f_sig + d`. The result may violate `|phi_n| <= 1`.
pub fn phi_ic<T: Real>(rep: &IcRepresentation<T>, f_sig: &DVector<Cx<T>>) -> PhaseShift<T> {
    PhaseShift::new(&rep.b * f_sig + &rep.d)
}

/// Per receive device, interference power left at `phi` relative to the
/// interference power with the RIS off.
pub fn residual_interference<T: Real>(inst: &Instance<T>, phi: &PhaseShift<T>) -> Vec<f64> {
    let d = inst.dims();
    let dev = inst.device(phi);
    let power = |l: usize, f_dd: &DMatrix<Cx<T>>, f_ud: &DMatrix<Cx<T>>| -> f64 {
        let mut s = 0.0;
        for lp in (0..d.pairs).filter(|&lp| lp != l) {
            s += abs2(f_dd[(l, lp)]).as_f64();
        }
        for k in 0..d.users {
            s += abs2(f_ud[(l, k)]).as_f64();
        }
        s
    };
    (0..d.pairs)
        .map(|l| {
            let base = power(l, &inst.channels.h_dd, &inst.channels.h_ud);
            let left = power(l, &dev.f_dd, &dev.f_ud);
            if base > 0.0 {
                left / base
            } else {
                left
            }
        })
        .collect()
}

/// Options of [`ic_optimize`].
#[derive(Clone, Debug, PartialEq)]
pub struct IcConfig {
    pub num_randomizations: usize,
    /// The modulus constraints are imposed as `|phi_n|^2 <= 1 - margin`.
    pub modulus_margin: f64,
    pub max_halvings: usize,
}

impl Default for IcConfig {
    fn default() -> Self {
        Self {
            num_randomizations: 50,
            modulus_margin: 1e-6,
            max_halvings: 10,
        }
    }
}

/// The lifted problem in the scaled variable `g = beta f_sig`.
#[derive(Clone, Debug)]
pub struct IcProblem<T: Real> {
    pub sdp: SdpProblem<T>,
    pub beta: T,
    /// `Z_k = G^UB_k B`.
    pub z: Vec<DMatrix<Cx<T>>>,
    /// `q_k = h^UB_k + G^UB_k d`.
    pub q: Vec<DVector<Cx<T>>>,
}

/// `[M, v]^H [M, v]`.
fn gram_lift<T: Real>(m: &DMatrix<Cx<T>>, v: &DVector<Cx<T>>) -> DMatrix<Cx<T>> {
    let mut aug = DMatrix::zeros(m.nrows(), m.ncols() + 1);
    aug.columns_mut(0, m.ncols()).copy_from(m);
    aug.column_mut(m.ncols()).copy_from(v);
    hermitian_part(&(aug.adjoint() * aug))
}

/// Builds `max xi` over `F~ = [g;1][g;1]^H` relaxed to `F~ PSD`, with the
/// Cauchy-Schwarz bound for users, the exact SINR for devices, and the
/// modulus constraints `tr(F~ Upsilon_i) <= 1 - margin`.
pub fn ic_problem<T: Real>(inst: &Instance<T>, map: &AffinePhase<T>, margin: f64) -> Result<IcProblem<T>> {
    let d = inst.dims();
    let l_n = map.pairs();
    if l_n != d.pairs || map.b.nrows() != d.elements || map.d.len() != d.elements {
        return Err(Error::DimensionMismatch {
            what: "affine phase map",
            expected: format!("{}x{}", d.elements, d.pairs),
            got: format!("{}x{}", map.b.nrows(), l_n),
        });
    }
    if d.users + d.pairs == 0 {
        return Err(Error::Unsupported("instance without links".into()));
    }
    let beta = map
        .b
        .row_iter()
        .map(|r| r.norm())
        .fold(T::zero(), |a, v| a.max(v));
    let beta = if beta > T::zero() { beta } else { T::one() };
    let budget = &inst.budget;
    let mut sdp = SdpProblem::new(l_n + 1);
    sdp.has_xi = true;
    sdp.xi_objective = T::one();

    let mut zs = Vec::with_capacity(d.users);
    let mut qs = Vec::with_capacity(d.users);
    for k in 0..d.users {
        let g = &inst.cascaded.g_ub[k];
        let z = g * &map.b;
        let q = inst.channels.h_ub.column(k) + g * &map.d;
        let omega = gram_lift(&(&z / re(beta)), &q) * re(budget.p_user[k] / budget.noise_bs);
        sdp.push(SymMatrix::Dense(omega), -T::one(), Sense::Ge, T::zero());
        zs.push(z);
        qs.push(q);
    }
    for l in 0..l_n {
        let w = budget.p_dev[l] / (beta * beta * budget.noise_dev);
        sdp.push(SymMatrix::Entry { index: l, weight: w }, -T::one(), Sense::Ge, T::zero());
    }
    let bound = T::one() - T::lit(margin);
    for i in 0..d.elements {
        let row = map.b.rows(i, 1) / re(beta);
        let upsilon = gram_lift(&row.into_owned(), &DVector::from_element(1, map.d[i]));
        sdp.push(SymMatrix::Dense(upsilon), T::zero(), Sense::Le, bound);
    }
    sdp.push(SymMatrix::Entry { index: l_n, weight: T::one() }, T::zero(), Sense::Eq, T::one());
    Ok(IcProblem { sdp, beta, z: zs, q: qs })
}

/// Outcome of [`ic_optimize`].
#[derive(Clone, Debug)]
pub struct IcSolution<T: Real> {
    pub phi: PhaseShift<T>,
    pub combiner: Combiner<T>,
    pub f_sig: DVector<Cx<T>>,
    pub report: SinrReport<T>,
    /// Optimum of the relaxation: an upper bound on the min-SINR of every
    /// point of the cancelling family.
    pub xi: T,
    /// Dual bound on the relaxed optimum (at least `xi`).
    pub xi_upper: T,
    pub sdp: SdpSolution<T>,
    /// 0 is the mean of the relaxation, 1 its top eigenvector, `i >= 2`
    /// the Gaussian draws.
    pub candidate: usize,
    pub sdp_ms: f64,
    pub randomize_ms: f64,
}

impl<T: Real> IcSolution<T> {
    /// `p^U_k ||Z_k f + q_k||^2 / sigma^2_B` per user.
    pub fn user_bounds(&self, inst: &Instance<T>, prob: &IcProblem<T>) -> Vec<T> {
        prob.z
            .iter()
            .zip(&prob.q)
            .enumerate()
            .map(|(k, (z, q))| {
                inst.budget.p_user[k] * (z * &self.f_sig + q).norm_squared() / inst.budget.noise_bs
            })
            .collect()
    }
}

/// Solves the interference-cancellation problem with one SDP, recovers
/// `f_sig` by randomization and returns the corresponding RIS coefficients
/// with the LMMSE combiner.
///
/// Candidates that break a modulus constraint are pulled toward the mean of
/// the relaxation (always feasible) by repeated halving.
pub fn ic_optimize<T: Real>(
    inst: &Instance<T>,
    map: &AffinePhase<T>,
    cfg: &IcConfig,
    solver: &SdpSolver,
    stream: &RandomStream,
) -> Result<IcSolution<T>> {
    let prob = ic_problem(inst, map, cfg.modulus_margin)?;
    ic_optimize_problem(inst, map, &prob, cfg, solver, stream)
}

/// [`ic_optimize`] on a prebuilt problem.
pub fn ic_optimize_problem<T: Real>(
    inst: &Instance<T>,
    map: &AffinePhase<T>,
    prob: &IcProblem<T>,
    cfg: &IcConfig,
    solver: &SdpSolver,
    stream: &RandomStream,
) -> Result<IcSolution<T>> {
    let l_n = map.pairs();
    let t0 = Instant::now();
    let sol = solver.solve(&prob.sdp)?;
    let sdp_ms = t0.elapsed().as_secs_f64() * 1e3;
    match sol.status {
        SdpStatus::Infeasible => return Err(Error::IcInfeasible),
        _ if !sol.is_usable() => {
            return Err(Error::Solver {
                context: "interference-cancellation relaxation".into(),
                status: sol.status,
            })
        }
        _ => {}
    }

    let t1 = Instant::now();
    let x = hermitian_part(&sol.x);
    let corner = x[(l_n, l_n)].re;
    if !(corner > T::lit(1e-9)) {
        return Err(Error::DegenerateLift(corner.as_f64()));
    }
    let mean = DVector::from_fn(l_n, |i, _| x[(i, l_n)] / re(corner * prob.beta));
    let eig = SymmetricEigen::new(x.clone());
    let lmax = eig.eigenvalues.max();
    let cut = lmax * T::eps() * T::lit(100.0 * (l_n + 1) as f64);
    let factor = DMatrix::from_fn(l_n + 1, l_n + 1, |i, j| {
        let v = eig.eigenvalues[j];
        eig.eigenvectors[(i, j)] * re(if v > cut { v.sqrt() } else { T::zero() })
    });
    let top = eig.eigenvalues.imax();
    let feasible = |f: &DVector<Cx<T>>| map.phase(f).max_modulus() <= T::one();

    let candidates: Vec<Option<(DVector<Cx<T>>, SinrReport<T>, Combiner<T>, usize)>> = (0..cfg.num_randomizations + 2)
        .into_par_iter()
        .map(|i| {
            let f = if i == 0 {
                mean.clone()
            } else {
                let v = if i == 1 {
                    factor.column(top).into_owned()
                } else {
                    let mut rng = stream.child(&[i as u64]);
                    let half = std::f64::consts::FRAC_1_SQRT_2;
                    let g = DVector::from_fn(l_n + 1, |_, _| {
                        let a: f64 = rng.sample(StandardNormal);
                        let b: f64 = rng.sample(StandardNormal);
                        cx(T::lit(a * half), T::lit(b * half))
                    });
                    &factor * g
                };
                let last = v[l_n];
                if abs(last) <= T::eps() {
                    return None;
                }
                DVector::from_fn(l_n, |j, _| v[j] / (last * re(prob.beta)))
            };
            let mut f = f;
            let mut halvings = 0;
            while !feasible(&f) {
                if halvings == cfg.max_halvings {
                    return None;
                }
                f = &mean + (&f - &mean) * re(T::lit(0.5));
                halvings += 1;
            }
            let (report, w) = evaluate(inst, &map.phase(&f), CombinerChoice::Lmmse).ok()?;
            report.min_sinr.is_finite().then_some((f, report, w, i))
        })
        .collect();
    let best = candidates.into_iter().flatten().fold(None, |best: Option<(_, SinrReport<T>, _, _)>, c| match best {
        Some(b) if b.1.min_sinr >= c.1.min_sinr => Some(b),
        _ => Some(c),
    });
    let Some((f_sig, report, combiner, candidate)) = best else {
        return Err(Error::IcInfeasible);
    };
    Ok(IcSolution {
        phi: map.phase(&f_sig),
        combiner,
        f_sig,
        report,
        xi: sol.xi,
        xi_upper: sol.dual_bound.max(sol.xi),
        sdp: sol,
        candidate,
        sdp_ms,
        randomize_ms: t1.elapsed().as_secs_f64() * 1e3,
    })
}

/// The single-pair protocol: the receive device forwards only `b` and `d`.
#[derive(Clone, Debug)]
pub struct LimitedFeedback<T: Real> {
    pub b: DVector<Cx<T>>,
    pub d: DVector<Cx<T>>,
    pub feedback_count: usize,
}

impl<T: Real> LimitedFeedback<T> {
    pub fn affine(&self) -> AffinePhase<T> {
        AffinePhase {
            b: DMatrix::from_column_slice(self.b.len(), 1, self.b.as_slice()),
            d: self.d.clone(),
        }
    }
}

/// Computes `(b, d)` for a single pair from the receive device's own
/// channels (`g^DD`, `g^UD_k`, `h^DD`, `h^UD_k`) via the normal equations
/// `A^H (A A^H)^{-1}`.
pub fn limited_feedback_single_pair<T: Real>(inst: &Instance<T>) -> Result<LimitedFeedback<T>> {
    let d = inst.dims();
    if d.pairs != 1 {
        return Err(Error::Unsupported(format!("limited feedback needs exactly one pair, got {}", d.pairs)));
    }
    let (k_n, n) = (d.users, d.elements);
    if n < k_n + 1 {
        return Err(Error::Underdetermined {
            elements: n,
            required: k_n + 1,
        });
    }
    let casc = &inst.cascaded;
    let a = DMatrix::from_fn(k_n + 1, n, |r, c| {
        if r == 0 {
            casc.g_dd[0][0][c].conj()
        } else {
            casc.g_ud[0][r - 1][c].conj()
        }
    });
    let h = DVector::from_fn(k_n + 1, |r, _| {
        if r == 0 {
            inst.channels.h_dd[(0, 0)]
        } else {
            inst.channels.h_ud[(0, r - 1)]
        }
    });
    let gram = hermitian_part(&(&a * a.adjoint()));
    let eig = gram.clone().symmetric_eigenvalues();
    let condition = (eig.max() / eig.min()).as_f64();
    if !(eig.min() > T::zero()) || !(condition <= MAX_CONDITION) {
        return Err(Error::IllConditioned(condition));
    }
    let chol = Cholesky::new(gram).ok_or(Error::IllConditioned(condition))?;
    let pinv = a.adjoint() * chol.inverse();
    Ok(LimitedFeedback {
        b: pinv.column(0).into_owned(),
        d: -(&pinv * h),
        feedback_count: feedback_cost(k_n, 1, n, FeedbackMode::LimitedSingle)?,
    })
}

/// Who forwards what to the BS.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeedbackMode {
    /// Every receive device forwards its full cascaded and direct CSI.
    FullMulti,
    /// Single pair, full CSI.
    FullSingle,
    /// Single pair, only `(b, d)`.
    LimitedSingle,
}

/// Complex coefficients fed back per receive device.
pub fn feedback_cost(users: usize, pairs: usize, elements: usize, mode: FeedbackMode) -> Result<usize> {
    match mode {
        FeedbackMode::FullMulti => Ok((pairs + users) * (elements + 1)),
        FeedbackMode::FullSingle => Ok((users + 1) * (elements + 1)),
        FeedbackMode::LimitedSingle if pairs == 1 => Ok(2 * elements),
        FeedbackMode::LimitedSingle => Err(Error::Unsupported(format!(
            "limited feedback needs exactly one pair, got {pairs}"
        ))),
    }
}

/// Stream used by [`ic_optimize`] for a given drop stream.
pub fn ic_stream(drop: &RandomStream) -> RandomStream {
    drop.child(&[purpose::IC_RANDOMIZE])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::Dims;
    use crate::scenario::{draw_drop, SystemConfig};
    use crate::sdp::SdpSettings;
    use crate::testutil::{cn_matrix, cn_vector, random_instance, random_phase};

    fn solver() -> SdpSolver {
        SdpSolver::new(SdpSettings::default())
    }

    fn stacked_from(a: DMatrix<Cx<f64>>, pairs: usize, users: usize, rng: &mut RandomStream) -> StackedChannels<f64> {
        StackedChannels {
            h_sig: cn_vector(pairs, rng),
            h_itf: cn_vector(pairs * pairs.saturating_sub(1), rng),
            h_ud: cn_vector(pairs * users, rng),
            a,
            perm: Permutation::for_pairs(pairs),
            pairs,
            users,
        }
    }

    fn max_abs(m: &DMatrix<Cx<f64>>) -> f64 {
        m.iter().fold(0.0, |a, z| a.max(z.norm()))
    }

    #[test]
    fn single_pair_without_users_stacks_one_row() {
        let mut rng = RandomStream::new(1);
        let inst = random_instance::<f64>(Dims::new(2, 0, 1, 5), &mut rng);
        let st = stack(&inst);
        assert_eq!(st.a.shape(), (1, 5));
        assert!(st.h_itf.is_empty() && st.h_ud.is_empty());
        for n in 0..5 {
            assert_eq!(st.a[(0, n)], inst.cascaded.g_dd[0][0][n].conj());
        }
    }

    #[test]
    fn permutation_for_two_pairs() {
        let p = Permutation::for_pairs(2);
        assert_eq!(p.sig, vec![0, 3]);
        assert_eq!(p.itf, vec![1, 2]);
        let v = DVector::from_vec(vec![10, 11, 12, 13]);
        let (s, i) = p.split(&v);
        assert_eq!(s.as_slice(), &[10, 13]);
        assert_eq!(p.merge(&s, &i), v);
    }

    #[test]
    fn stacked_vectors_match_effective_channels() {
        let mut rng = RandomStream::new(2);
        let inst = random_instance::<f64>(Dims::new(3, 2, 3, 12), &mut rng);
        let st = stack(&inst);
        for _ in 0..5 {
            let phi = random_phase::<f64>(12, &mut rng);
            let (f_dd, f_ud) = st.device_vectors(&phi);
            let dev = inst.device(&phi);
            for l in 0..3 {
                for lp in 0..3 {
                    assert!((f_dd[l * 3 + lp] - dev.f_dd[(l, lp)]).norm() <= 1e-12 * dev.f_dd[(l, lp)].norm().max(1.0));
                }
                for k in 0..2 {
                    assert!((f_ud[l * 2 + k] - dev.f_ud[(l, k)]).norm() <= 1e-12 * dev.f_ud[(l, k)].norm().max(1.0));
                }
            }
        }
    }

    #[test]
    fn orthonormal_rows_give_adjoint() {
        let mut rng = RandomStream::new(3);
        let q = cn_matrix::<f64>(9, 4, &mut rng).qr().q();
        let a = q.adjoint();
        let st = stacked_from(a.clone(), 1, 3, &mut rng);
        let rep = build_representation(&st).unwrap();
        assert!(max_abs(&(rep.pseudo_inverse() - a.adjoint())) < 1e-12);
        assert!((rep.condition - 1.0).abs() < 1e-10);
    }

    #[test]
    fn affine_map_hits_requested_targets() {
        let mut rng = RandomStream::new(4);
        let st = stacked_from(cn_matrix(8, 20, &mut rng), 2, 2, &mut rng);
        let rep = build_representation(&st).unwrap();
        let pinv = rep.pseudo_inverse();
        assert!(max_abs(&(&st.a * &pinv - DMatrix::identity(8, 8))) < 1e-10);
        for _ in 0..100 {
            let y = cn_vector::<f64>(8, &mut rng);
            let phi = &pinv * &y + &rep.d;
            let got = st.offsets() + &st.a * phi;
            assert!((got - &y).norm() <= 1e-8 * y.norm());
        }
    }

    #[test]
    fn square_case_is_the_inverse() {
        let mut rng = RandomStream::new(5);
        let a = cn_matrix::<f64>(6, 6, &mut rng);
        let inv = a.clone().try_inverse().unwrap();
        let st = stacked_from(a, 2, 1, &mut rng);
        let rep = build_representation(&st).unwrap();
        assert!(max_abs(&(rep.pseudo_inverse() - &inv)) <= 1e-8 * max_abs(&inv));
    }

    #[test]
    fn too_few_elements_or_dependent_rows_are_rejected() {
        let mut rng = RandomStream::new(6);
        let inst = random_instance::<f64>(Dims::new(2, 2, 2, 7), &mut rng);
        assert!(matches!(
            build_representation(&stack(&inst)),
            Err(Error::Underdetermined { elements: 7, required: 8 })
        ));
        let mut a = cn_matrix::<f64>(3, 10, &mut rng);
        let r0 = a.row(0).into_owned();
        a.row_mut(2).copy_from(&r0);
        let st = stacked_from(a, 1, 2, &mut rng);
        assert!(matches!(build_representation(&st), Err(Error::IllConditioned(_))));
    }

    #[test]
    fn direct_gains_are_kept_and_interference_vanishes() {
        let mut rng = RandomStream::new(7);
        let inst = random_instance::<f64>(Dims::new(4, 2, 2, 16), &mut rng);
        let rep = build_representation(&stack(&inst)).unwrap();
        let f_sig = DVector::from_fn(2, |l, _| inst.channels.h_dd[(l, l)]);
        let phi = phi_ic(&rep, &f_sig);
        assert!(residual_interference(&inst, &phi).iter().all(|&r| r <= 1e-6));
        let dev = inst.device(&phi);
        for l in 0..2 {
            assert!((dev.f_dd[(l, l)] - f_sig[l]).norm() <= 1e-8 * f_sig[l].norm());
        }

        let zero = phi_ic(&rep, &DVector::zeros(2));
        let dev = inst.device(&zero);
        assert!(max_abs(&dev.f_dd) < 1e-12 && max_abs(&dev.f_ud) < 1e-12);
        let (report, _) = evaluate(&inst, &zero, CombinerChoice::Lmmse).unwrap();
        assert!(report.sinr_dev.iter().all(|&s| s < 1e-20));

        let f2 = cn_vector::<f64>(2, &mut rng);
        let diff = phi_ic(&rep, &f2).phi - &phi.phi;
        assert!((diff - &rep.b * (&f2 - &f_sig)).norm() < 1e-12);
    }

    #[test]
    fn optimized_solution_is_feasible_and_interference_free() {
        let cfg = SystemConfig::default();
        let sv = solver();
        for trial in 0..3 {
            let mut rng = RandomStream::derive(11, &[trial]);
            let (_, ch) = draw_drop::<f64>(&cfg, &mut rng).unwrap();
            let inst = Instance::new(cfg.budget(), ch).unwrap();
            let map = build_representation(&stack(&inst)).unwrap().affine();
            let prob = ic_problem(&inst, &map, IcConfig::default().modulus_margin).unwrap();
            let before = sv.solves();
            let sol = ic_optimize_problem(&inst, &map, &prob, &IcConfig::default(), &sv, &RandomStream::new(trial)).unwrap();
            assert_eq!(sv.solves() - before, 1);
            assert!(sol.phi.max_modulus() <= 1.0 + 1e-9);
            let b = &inst.budget;
            for l in 0..2 {
                let exact = b.p_dev[l] * sol.f_sig[l].norm_sqr() / b.noise_dev;
                assert!((sol.report.sinr_dev[l] - exact).abs() <= 1e-6 * exact);
            }
            for (k, bound) in sol.user_bounds(&inst, &prob).into_iter().enumerate() {
                assert!(sol.report.sinr_user[k] <= bound * (1.0 + 1e-9));
            }
            assert!(sol.xi >= sol.report.min_sinr * (1.0 - 1e-6));
        }
    }

    #[test]
    fn tiny_instance_matches_grid_search() {
        let mut rng = RandomStream::new(12);
        let sv = solver();
        for _ in 0..3 {
            let inst = random_instance::<f64>(Dims::new(1, 1, 1, 2), &mut rng);
            let map = build_representation(&stack(&inst)).unwrap().affine();
            let prob = ic_problem(&inst, &map, 0.0).unwrap();
            let sol = ic_optimize_problem(&inst, &map, &prob, &IcConfig::default(), &sv, &RandomStream::new(1)).unwrap();
            // IC objective: min(user Cauchy-Schwarz bound, device SINR)
            let objective = |f: Cx<f64>| {
                let user = (&prob.z[0] * f + &prob.q[0]).norm_squared();
                user.min(f.norm_sqr())
            };
            let (b0, b1) = (map.b[(0, 0)], map.b[(1, 0)]);
            let r_max = ((1.0 + map.d[0].norm()) / b0.norm()).min((1.0 + map.d[1].norm()) / b1.norm());
            let mut grid = 0.0f64;
            for i in 0..=600 {
                for j in 0..720 {
                    let f = Cx::from_polar(r_max * i as f64 / 600.0, j as f64 * std::f64::consts::TAU / 720.0);
                    if (b0 * f + map.d[0]).norm() <= 1.0 && (b1 * f + map.d[1]).norm() <= 1.0 {
                        grid = grid.max(objective(f));
                    }
                }
            }
            assert!(grid > 0.0);
            assert!((sol.xi - grid).abs() <= 0.02 * grid, "xi {} grid {grid}", sol.xi);
            assert!(objective(sol.f_sig[0]) >= 0.98 * grid);
        }
    }

    #[test]
    fn unreachable_modulus_constraints_are_infeasible() {
        let mut rng = RandomStream::new(13);
        let inst = random_instance::<f64>(Dims::new(1, 1, 1, 2), &mut rng);
        let c = |re: f64| Cx::new(re, 0.0);
        let map = AffinePhase {
            b: DMatrix::from_column_slice(2, 1, &[c(1.0), c(1.0)]),
            d: DVector::from_vec(vec![c(2.0), c(-2.0)]),
        };
        let r = ic_optimize(&inst, &map, &IcConfig::default(), &solver(), &RandomStream::new(0));
        assert!(matches!(r, Err(Error::IcInfeasible)), "{r:?}");
    }

    #[test]
    fn limited_feedback_matches_full_csi() {
        let cfg = SystemConfig {
            pairs: 1,
            ..SystemConfig::default()
        };
        let mut rng = RandomStream::new(14);
        let (_, ch) = draw_drop::<f64>(&cfg, &mut rng).unwrap();
        let inst = Instance::new(cfg.budget(), ch).unwrap();
        let full = build_representation(&stack(&inst)).unwrap().affine();
        let lf = limited_feedback_single_pair(&inst).unwrap();
        assert_eq!(lf.feedback_count, 128);
        let lim = lf.affine();
        let rel = |a: &DMatrix<Cx<f64>>, b: &DMatrix<Cx<f64>>| max_abs(&(a - b)) / max_abs(b);
        assert!(rel(&lim.b, &full.b) <= 1e-10);
        assert!((&lim.d - &full.d).norm() <= 1e-10 * full.d.norm());

        let m = IcConfig::default().modulus_margin;
        let p_full = ic_problem(&inst, &full, m).unwrap();
        let p_lim = ic_problem(&inst, &lim, m).unwrap();
        assert_eq!(p_full.sdp.constraints.len(), p_lim.sdp.constraints.len());
        for (a, b) in p_full.sdp.constraints.iter().zip(&p_lim.sdp.constraints) {
            let (da, db) = (a.matrix.to_dense(2), b.matrix.to_dense(2));
            assert!(max_abs(&(&da - &db)) <= 1e-10 * max_abs(&da).max(1e-300));
            assert_eq!((a.sense, a.rhs, a.xi_coeff), (b.sense, b.rhs, b.xi_coeff));
        }
        let sv = solver();
        let s_full = ic_optimize(&inst, &full, &IcConfig::default(), &sv, &RandomStream::new(3)).unwrap();
        let s_lim = ic_optimize(&inst, &lim, &IcConfig::default(), &sv, &RandomStream::new(3)).unwrap();
        assert!((s_full.report.min_sinr - s_lim.report.min_sinr).abs() <= 1e-6 * s_full.report.min_sinr);
    }

    #[test]
    fn limited_feedback_without_users_only_steers_gain() {
        let mut rng = RandomStream::new(15);
        let inst = random_instance::<f64>(Dims::new(2, 0, 1, 4), &mut rng);
        let lf = limited_feedback_single_pair(&inst).unwrap();
        let expected = -&lf.b * inst.channels.h_dd[(0, 0)];
        assert!((&lf.d - expected).norm() < 1e-12);
        let sol = ic_optimize(&inst, &lf.affine(), &IcConfig::default(), &solver(), &RandomStream::new(0)).unwrap();
        let exact = sol.f_sig[0].norm_sqr();
        assert!((sol.report.sinr_dev[0] - exact).abs() <= 1e-9 * exact);

        let two = random_instance::<f64>(Dims::new(2, 1, 2, 8), &mut rng);
        assert!(matches!(limited_feedback_single_pair(&two), Err(Error::Unsupported(_))));
    }

    #[test]
    fn feedback_counts() {
        assert_eq!(feedback_cost(2, 2, 64, FeedbackMode::FullMulti).unwrap(), 260);
        assert_eq!(feedback_cost(2, 1, 64, FeedbackMode::FullSingle).unwrap(), 195);
        assert_eq!(feedback_cost(2, 1, 64, FeedbackMode::LimitedSingle).unwrap(), 128);
        assert!(feedback_cost(2, 2, 64, FeedbackMode::LimitedSingle).is_err());
    }
}
