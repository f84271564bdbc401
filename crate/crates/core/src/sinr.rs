//! Per-link SINRs, the LMMSE combiner and the max-min objective.

use nalgebra::{Cholesky, DMatrix};

use crate::channels::{BsChannels, DeviceChannels, Instance, PhaseShift};
use crate::error::{Error, Result};
use crate::scalar::{abs2, re, to_db, Cx, Real};
use crate::scenario::LinkBudget;

/// BS combining matrix `W`, `K x M`, row `k` is `w_k^H`.
#[derive(Clone, Debug, PartialEq)]
pub struct Combiner<T: Real> {
    pub w: DMatrix<Cx<T>>,
}

impl<T: Real> Combiner<T> {
    pub fn new(w: DMatrix<Cx<T>>) -> Self {
        Self { w }
    }

    pub fn users(&self) -> usize {
        self.w.nrows()
    }

    /// `||w_k||^2`.
    pub fn norm_sqr(&self, k: usize) -> T {
        self.w.row(k).iter().fold(T::zero(), |a, z| a + abs2(*z))
    }
}

/// Linear-scale SINRs of every link.
#[derive(Clone, Debug, PartialEq)]
pub struct SinrReport<T: Real> {
    pub sinr_dev: Vec<T>,
    pub sinr_user: Vec<T>,
    pub min_sinr: T,
}

impl<T: Real> SinrReport<T> {
    pub fn new(sinr_dev: Vec<T>, sinr_user: Vec<T>) -> Self {
        let min_sinr = sinr_dev
            .iter()
            .chain(&sinr_user)
            .copied()
            .reduce(|a, b| a.min(b))
            .unwrap_or_else(T::zero);
        Self {
            sinr_dev,
            sinr_user,
            min_sinr,
        }
    }

    pub fn min_sinr_db(&self) -> f64 {
        to_db(self.min_sinr.as_f64())
    }

    /// Device SINRs followed by user SINRs, in dB.
    pub fn links_db(&self) -> Vec<f64> {
        self.sinr_dev.iter().chain(&self.sinr_user).map(|s| to_db(s.as_f64())).collect()
    }
}

/// SINR at each receive device.
pub fn sinr_device<T: Real>(budget: &LinkBudget<T>, dev: &DeviceChannels<T>) -> Vec<T> {
    let l_count = dev.f_dd.nrows();
    (0..l_count)
        .map(|l| {
            let signal = budget.p_dev[l] * abs2(dev.f_dd[(l, l)]);
            let mut denom = budget.noise_dev;
            for lp in (0..l_count).filter(|&lp| lp != l) {
                denom += budget.p_dev[lp] * abs2(dev.f_dd[(l, lp)]);
            }
            for (k, p) in budget.p_user.iter().enumerate() {
                denom += *p * abs2(dev.f_ud[(l, k)]);
            }
            signal / denom
        })
        .collect()
}

/// SINR of each cellular user after combining with `w`.
pub fn sinr_user<T: Real>(budget: &LinkBudget<T>, bs: &BsChannels<T>, w: &Combiner<T>) -> Result<Vec<T>> {
    let out_ub = &w.w * &bs.f_ub;
    let out_db = &w.w * &bs.f_db;
    (0..w.users())
        .map(|k| {
            let wn = w.norm_sqr(k);
            if wn == T::zero() {
                return Err(Error::ZeroCombiner(k));
            }
            let signal = budget.p_user[k] * abs2(out_ub[(k, k)]);
            let mut denom = wn * budget.noise_bs;
            for (kp, p) in budget.p_user.iter().enumerate().filter(|&(kp, _)| kp != k) {
                denom += *p * abs2(out_ub[(k, kp)]);
            }
            for (l, p) in budget.p_dev.iter().enumerate() {
                denom += *p * abs2(out_db[(k, l)]);
            }
            Ok(signal / denom)
        })
        .collect()
}

/// `w_k = R^{-1} f^UB_k` with `R` the received covariance
/// `sum p f f^H + sigma^2_B I`, solved through a Cholesky factorization.
pub fn lmmse_combiner<T: Real>(budget: &LinkBudget<T>, bs: &BsChannels<T>) -> Combiner<T> {
    let m = bs.f_ub.nrows();
    let mut r = DMatrix::<Cx<T>>::identity(m, m) * re(budget.noise_bs);
    for (k, p) in budget.p_user.iter().enumerate() {
        let f = bs.f_ub.column(k);
        r.ger(re(*p), &f, &f.conjugate(), Cx::new(T::one(), T::zero()));
    }
    for (l, p) in budget.p_dev.iter().enumerate() {
        let f = bs.f_db.column(l);
        r.ger(re(*p), &f, &f.conjugate(), Cx::new(T::one(), T::zero()));
    }
    // R is Hermitian positive definite since sigma^2_B > 0
    let chol = Cholesky::new(r).expect("noise term keeps the covariance positive definite");
    let sol = chol.solve(&bs.f_ub);
    Combiner::new(sol.adjoint())
}

/// Which combiner [`evaluate`] should use.
#[derive(Clone, Copy, Debug)]
pub enum CombinerChoice<'a, T: Real> {
    Lmmse,
    Given(&'a Combiner<T>),
}

/// Effective channels, combiner and SINR report for one `phi`.
pub fn evaluate<T: Real>(
    inst: &Instance<T>,
    phi: &PhaseShift<T>,
    choice: CombinerChoice<'_, T>,
) -> Result<(SinrReport<T>, Combiner<T>)> {
    let bs = inst.bs(phi);
    let dev = inst.device(phi);
    let w = match choice {
        CombinerChoice::Lmmse => lmmse_combiner(&inst.budget, &bs),
        CombinerChoice::Given(w) => w.clone(),
    };
    let report = SinrReport::new(sinr_device(&inst.budget, &dev), sinr_user(&inst.budget, &bs, &w)?);
    Ok((report, w))
}

/// Minimum SINR of `phi` under the LMMSE combiner.
pub fn min_sinr_lmmse<T: Real>(inst: &Instance<T>, phi: &PhaseShift<T>) -> T {
    evaluate(inst, phi, CombinerChoice::Lmmse)
        .map(|(r, _)| r.min_sinr)
        .unwrap_or_else(|_| T::zero())
}
