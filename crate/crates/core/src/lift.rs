//! Lifting of quadratic forms `|alpha + psi^H phi|^2` into trace-linear
//! forms `tr(Phi Psi)` over the augmented matrix `Phi = [phi;1][phi;1]^H`.

use nalgebra::{DMatrix, DVector};

use crate::channels::Instance;
use crate::scalar::{re, Cx, Real};
use crate::scenario::LinkBudget;
use crate::sinr::Combiner;

/// `Psi = [psi psi^H, alpha psi; alpha^* psi^H, |alpha|^2]`, Hermitian PSD of rank <= 1.
#[derive(Clone, Debug, PartialEq)]
pub struct LiftedQuadratic<T: Real> {
    pub psi: DMatrix<Cx<T>>,
}

/// `(A + A^H) / 2`.
pub fn hermitian_part<T: Real>(a: &DMatrix<Cx<T>>) -> DMatrix<Cx<T>> {
    (a + a.adjoint()) * re(T::lit(0.5))
}

/// `Re tr(A B)` for Hermitian `A`, evaluated as `Re <A, B>_F`.
pub fn trace_product<T: Real>(a: &DMatrix<Cx<T>>, b: &DMatrix<Cx<T>>) -> T {
    a.iter().zip(b.iter()).fold(T::zero(), |acc, (x, y)| acc + x.re * y.re + x.im * y.im)
}

pub fn lift_pair<T: Real>(psi: &DVector<Cx<T>>, alpha: Cx<T>) -> LiftedQuadratic<T> {
    let n = psi.len();
    let mut v = DVector::zeros(n + 1);
    v.rows_mut(0, n).copy_from(psi);
    v[n] = alpha.conj();
    // v v^H reproduces the block layout: top-right psi * alpha, corner |alpha|^2
    let outer = &v * v.adjoint();
    LiftedQuadratic {
        psi: hermitian_part(&outer),
    }
}

impl<T: Real> LiftedQuadratic<T> {
    /// `tr(Phi Psi)`.
    pub fn trace_with(&self, phi_lift: &DMatrix<Cx<T>>) -> T {
        trace_product(&self.psi, phi_lift)
    }

    /// `[phi;1]^H Psi [phi;1]` for an augmented vector.
    pub fn quadratic(&self, aug: &DVector<Cx<T>>) -> T {
        aug.dotc(&(&self.psi * aug)).re
    }

    pub fn dim(&self) -> usize {
        self.psi.nrows()
    }
}

/// Lifts of the user-side terms for a fixed combiner.
#[derive(Clone, Debug)]
pub struct UserLifts<T: Real> {
    /// `ub[k][k']`: user `k'` seen through `w_k`.
    pub ub: Vec<Vec<LiftedQuadratic<T>>>,
    /// `db[k][l]`: transmit device `l` seen through `w_k`.
    pub db: Vec<Vec<LiftedQuadratic<T>>>,
    /// `zeta_k = ||w_k||^2 sigma^2_B`.
    pub zeta: Vec<T>,
}

/// Lifts of the receive-device terms (combiner independent).
#[derive(Clone, Debug)]
pub struct DeviceLifts<T: Real> {
    /// `dd[l][l']`: TxD `l'` at RxD `l`.
    pub dd: Vec<Vec<LiftedQuadratic<T>>>,
    /// `ud[l][k]`: user `k` at RxD `l`.
    pub ud: Vec<Vec<LiftedQuadratic<T>>>,
}

pub fn build_user_lifts<T: Real>(inst: &Instance<T>, w: &Combiner<T>) -> UserLifts<T> {
    let ch = &inst.channels;
    let casc = &inst.cascaded;
    let lift_through = |k: usize, g: &DMatrix<Cx<T>>, h: DVector<Cx<T>>| {
        let wk: DVector<Cx<T>> = w.w.row(k).adjoint();
        // psi = (w_k^H G)^H = G^H w_k, alpha = w_k^H h
        lift_pair(&g.ad_mul(&wk), wk.dotc(&h))
    };
    let users = w.users();
    UserLifts {
        ub: (0..users)
            .map(|k| {
                (0..users)
                    .map(|kp| lift_through(k, &casc.g_ub[kp], ch.h_ub.column(kp).into()))
                    .collect()
            })
            .collect(),
        db: (0..users)
            .map(|k| {
                (0..casc.g_db.len())
                    .map(|l| lift_through(k, &casc.g_db[l], ch.h_db.column(l).into()))
                    .collect()
            })
            .collect(),
        zeta: (0..users).map(|k| w.norm_sqr(k) * inst.budget.noise_bs).collect(),
    }
}

pub fn build_device_lifts<T: Real>(inst: &Instance<T>) -> DeviceLifts<T> {
    let ch = &inst.channels;
    let casc = &inst.cascaded;
    DeviceLifts {
        dd: casc
            .g_dd
            .iter()
            .enumerate()
            .map(|(l, row)| row.iter().enumerate().map(|(lp, g)| lift_pair(g, ch.h_dd[(l, lp)])).collect())
            .collect(),
        ud: casc
            .g_ud
            .iter()
            .enumerate()
            .map(|(l, row)| row.iter().enumerate().map(|(k, g)| lift_pair(g, ch.h_ud[(l, k)])).collect())
            .collect(),
    }
}

/// Lifted SINR of user `k` at the (possibly higher-rank) lifted point `phi_lift`.
pub fn lifted_sinr_user<T: Real>(
    k: usize,
    budget: &LinkBudget<T>,
    lifts: &UserLifts<T>,
    phi_lift: &DMatrix<Cx<T>>,
) -> T {
    let signal = budget.p_user[k] * lifts.ub[k][k].trace_with(phi_lift);
    let mut denom = lifts.zeta[k];
    for (kp, p) in budget.p_user.iter().enumerate().filter(|&(kp, _)| kp != k) {
        denom += *p * lifts.ub[k][kp].trace_with(phi_lift);
    }
    for (l, p) in budget.p_dev.iter().enumerate() {
        denom += *p * lifts.db[k][l].trace_with(phi_lift);
    }
    signal / denom
}

/// Lifted SINR of device pair `l`.
pub fn lifted_sinr_device<T: Real>(
    l: usize,
    budget: &LinkBudget<T>,
    lifts: &DeviceLifts<T>,
    phi_lift: &DMatrix<Cx<T>>,
) -> T {
    let signal = budget.p_dev[l] * lifts.dd[l][l].trace_with(phi_lift);
    let mut denom = budget.noise_dev;
    for (lp, p) in budget.p_dev.iter().enumerate().filter(|&(lp, _)| lp != l) {
        denom += *p * lifts.dd[l][lp].trace_with(phi_lift);
    }
    for (k, p) in budget.p_user.iter().enumerate() {
        denom += *p * lifts.ud[l][k].trace_with(phi_lift);
    }
    signal / denom
}

/// One lifted SINR written as `tr(Phi num) / tr(Phi den)`; the noise
/// constant sits in the bottom-right corner of `den` (valid because
/// `Phi[N+1,N+1] = 1`).
#[derive(Clone, Debug)]
pub struct LinkFraction<T: Real> {
    pub num: DMatrix<Cx<T>>,
    pub den: DMatrix<Cx<T>>,
}

impl<T: Real> LinkFraction<T> {
    pub fn ratio(&self, phi_lift: &DMatrix<Cx<T>>) -> T {
        trace_product(&self.num, phi_lift) / trace_product(&self.den, phi_lift)
    }

    pub fn numerator(&self, phi_lift: &DMatrix<Cx<T>>) -> T {
        trace_product(&self.num, phi_lift)
    }

    pub fn denominator(&self, phi_lift: &DMatrix<Cx<T>>) -> T {
        trace_product(&self.den, phi_lift)
    }
}

/// Device links first, then users. Each fraction is divided by its noise
/// constant, so entries are on the SINR scale and the corner of `den` is 1.
pub fn link_fractions<T: Real>(
    budget: &LinkBudget<T>,
    users: &UserLifts<T>,
    devices: &DeviceLifts<T>,
) -> Vec<LinkFraction<T>> {
    let n1 = devices
        .dd
        .first()
        .and_then(|r| r.first())
        .or_else(|| users.ub.first().and_then(|r| r.first()))
        .map(|q| q.dim())
        .unwrap_or(1);
    let build = |signal: (T, &LiftedQuadratic<T>), interference: Vec<(T, &LiftedQuadratic<T>)>, noise: T| {
        let scale = T::one() / noise;
        let num = &signal.1.psi * re(signal.0 * scale);
        let mut den = DMatrix::<Cx<T>>::zeros(n1, n1);
        for (p, q) in interference {
            den += &q.psi * re(p * scale);
        }
        den[(n1 - 1, n1 - 1)] += re(T::one());
        LinkFraction { num, den }
    };
    let mut out = Vec::new();
    for l in 0..devices.dd.len() {
        let mut itf: Vec<_> = (0..devices.dd.len())
            .filter(|&lp| lp != l)
            .map(|lp| (budget.p_dev[lp], &devices.dd[l][lp]))
            .collect();
        itf.extend(budget.p_user.iter().enumerate().map(|(k, p)| (*p, &devices.ud[l][k])));
        out.push(build((budget.p_dev[l], &devices.dd[l][l]), itf, budget.noise_dev));
    }
    for k in 0..users.ub.len() {
        let mut itf: Vec<_> = (0..users.ub.len())
            .filter(|&kp| kp != k)
            .map(|kp| (budget.p_user[kp], &users.ub[k][kp]))
            .collect();
        itf.extend(budget.p_dev.iter().enumerate().map(|(l, p)| (*p, &users.db[k][l])));
        out.push(build((budget.p_user[k], &users.ub[k][k]), itf, users.zeta[k]));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{Dims, PhaseShift};
    use crate::rng::RandomStream;
    use crate::sinr::{evaluate, lmmse_combiner, CombinerChoice};
    use crate::testutil::{cn, cn_vector, random_instance, random_phase};
    use nalgebra::SymmetricEigen;

    fn outer(v: &DVector<Cx<f64>>) -> DMatrix<Cx<f64>> {
        v * v.adjoint()
    }

    fn check_lift(q: &LiftedQuadratic<f64>, psi: &DVector<Cx<f64>>, alpha: Cx<f64>, phi: &PhaseShift<f64>) {
        let direct = (alpha + psi.dotc(&phi.phi)).norm_sqr();
        let lifted = q.trace_with(&outer(&phi.augmented()));
        assert!((lifted - direct).abs() <= 1e-10 * direct.max(1e-300), "{lifted} vs {direct}");
        assert!((&q.psi - q.psi.adjoint()).norm() <= 1e-12);
        let tr = q.psi.trace().re;
        let ev = SymmetricEigen::new(q.psi.clone()).eigenvalues;
        assert!(ev.min() >= -1e-9 * tr);
    }

    #[test]
    fn unit_alpha_gives_corner_selector() {
        let q = lift_pair(&DVector::<Cx<f64>>::zeros(3), Cx::new(1.0, 0.0));
        let mut e = DMatrix::zeros(4, 4);
        e[(3, 3)] = Cx::new(1.0, 0.0);
        assert_eq!(q.psi, e);
        let mut rng = RandomStream::new(1);
        let phi = random_phase(3, &mut rng);
        assert!((q.trace_with(&outer(&phi.augmented())) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ris_off_gives_alpha_squared() {
        let mut rng = RandomStream::new(2);
        let psi = cn_vector::<f64>(5, &mut rng);
        let alpha = cn::<f64>(&mut rng);
        let q = lift_pair(&psi, alpha);
        let val = q.trace_with(&outer(&PhaseShift::zeros(5).augmented()));
        assert!((val - alpha.norm_sqr()).abs() < 1e-15);
    }

    #[test]
    fn trace_identity_on_random_draws() {
        let mut rng = RandomStream::new(3);
        for i in 0..1000 {
            let n = 1 + i % 9;
            let psi = cn_vector::<f64>(n, &mut rng);
            let alpha = cn::<f64>(&mut rng);
            let phi = random_phase(n, &mut rng);
            check_lift(&lift_pair(&psi, alpha), &psi, alpha, &phi);
        }
    }

    #[test]
    fn user_and_device_lifts_satisfy_trace_identity() {
        let mut rng = RandomStream::new(4);
        let inst = random_instance::<f64>(Dims::new(3, 2, 2, 6), &mut rng);
        let phi = random_phase(6, &mut rng);
        let w = lmmse_combiner(&inst.budget, &inst.bs(&phi));
        let ul = build_user_lifts(&inst, &w);
        let dl = build_device_lifts(&inst);
        for k in 0..2 {
            let wk: DVector<Cx<f64>> = w.w.row(k).adjoint();
            for kp in 0..2 {
                let psi = inst.cascaded.g_ub[kp].ad_mul(&wk);
                let alpha = wk.dotc(&inst.channels.h_ub.column(kp).clone_owned());
                check_lift(&ul.ub[k][kp], &psi, alpha, &phi);
            }
            for l in 0..2 {
                let psi = inst.cascaded.g_db[l].ad_mul(&wk);
                let alpha = wk.dotc(&inst.channels.h_db.column(l).clone_owned());
                check_lift(&ul.db[k][l], &psi, alpha, &phi);
            }
            assert!((ul.zeta[k] - wk.norm_squared() * inst.budget.noise_bs).abs() < 1e-15 * ul.zeta[k]);
        }
        for l in 0..2 {
            for lp in 0..2 {
                check_lift(&dl.dd[l][lp], &inst.cascaded.g_dd[l][lp], inst.channels.h_dd[(l, lp)], &phi);
            }
            for k in 0..2 {
                check_lift(&dl.ud[l][k], &inst.cascaded.g_ud[l][k], inst.channels.h_ud[(l, k)], &phi);
            }
        }
    }

    #[test]
    fn lifted_sinrs_match_direct_evaluation_at_rank_one() {
        let mut rng = RandomStream::new(5);
        for _ in 0..20 {
            let inst = random_instance::<f64>(Dims::new(4, 2, 2, 5), &mut rng);
            let phi = random_phase(5, &mut rng);
            let w0 = lmmse_combiner(&inst.budget, &inst.bs(&random_phase(5, &mut rng)));
            let (r, _) = evaluate(&inst, &phi, CombinerChoice::Given(&w0)).unwrap();
            let ul = build_user_lifts(&inst, &w0);
            let dl = build_device_lifts(&inst);
            let big = outer(&phi.augmented());
            let fr = link_fractions(&inst.budget, &ul, &dl);
            for k in 0..2 {
                let s = lifted_sinr_user(k, &inst.budget, &ul, &big);
                assert!((s - r.sinr_user[k]).abs() <= 1e-10 * s);
                assert!((fr[2 + k].ratio(&big) - s).abs() <= 1e-10 * s);
            }
            for l in 0..2 {
                let s = lifted_sinr_device(l, &inst.budget, &dl, &big);
                assert!((s - r.sinr_dev[l]).abs() <= 1e-10 * s);
                assert!((fr[l].ratio(&big) - s).abs() <= 1e-10 * s);
            }
        }
    }

    #[test]
    fn ris_off_lift_equals_direct_channel_sinr() {
        let mut rng = RandomStream::new(6);
        let inst = random_instance::<f64>(Dims::new(3, 2, 1, 4), &mut rng);
        let w = lmmse_combiner(&inst.budget, &inst.bs(&PhaseShift::zeros(4)));
        let (r, _) = evaluate(&inst, &PhaseShift::zeros(4), CombinerChoice::Given(&w)).unwrap();
        let ul = build_user_lifts(&inst, &w);
        let mut e = DMatrix::zeros(5, 5);
        e[(4, 4)] = Cx::new(1.0, 0.0);
        for k in 0..2 {
            assert!((lifted_sinr_user(k, &inst.budget, &ul, &e) - r.sinr_user[k]).abs() < 1e-12 * r.sinr_user[k]);
        }
    }

    #[test]
    fn lifted_sinr_is_homogeneous() {
        let mut rng = RandomStream::new(7);
        let inst = random_instance::<f64>(Dims::new(3, 2, 1, 4), &mut rng);
        let phi = random_phase(4, &mut rng);
        let w = lmmse_combiner(&inst.budget, &inst.bs(&phi));
        let ul = build_user_lifts(&inst, &w);
        let big = outer(&phi.augmented());
        let c = 7.5;
        let scaled = UserLifts {
            ub: ul.ub.iter().map(|r| r.iter().map(|q| LiftedQuadratic { psi: &q.psi * Cx::new(c, 0.0) }).collect()).collect(),
            db: ul.db.iter().map(|r| r.iter().map(|q| LiftedQuadratic { psi: &q.psi * Cx::new(c, 0.0) }).collect()).collect(),
            zeta: ul.zeta.iter().map(|z| z * c).collect(),
        };
        for k in 0..2 {
            let a = lifted_sinr_user(k, &inst.budget, &ul, &big);
            let b = lifted_sinr_user(k, &inst.budget, &scaled, &big);
            assert!((a - b).abs() < 1e-12 * a);
        }
    }
}
