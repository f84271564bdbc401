use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::channels::{ChannelSet, Dims, Instance, PhaseShift};
use crate::rng::RandomStream;
use crate::scalar::{Cx, Real};
use crate::scenario::LinkBudget;

pub fn cn<T: Real>(rng: &mut RandomStream) -> Cx<T> {
    let a: f64 = rng.sample(StandardNormal);
    let b: f64 = rng.sample(StandardNormal);
    Cx::new(T::lit(a / 2f64.sqrt()), T::lit(b / 2f64.sqrt()))
}

pub fn cn_matrix<T: Real>(r: usize, c: usize, rng: &mut RandomStream) -> DMatrix<Cx<T>> {
    DMatrix::from_fn(r, c, |_, _| cn(rng))
}

pub fn cn_vector<T: Real>(n: usize, rng: &mut RandomStream) -> DVector<Cx<T>> {
    DVector::from_fn(n, |_, _| cn(rng))
}

pub fn random_channels<T: Real>(d: Dims, rng: &mut RandomStream) -> ChannelSet<T> {
    let (m, k, l, n) = (d.antennas, d.users, d.pairs, d.elements);
    ChannelSet {
        h_rb: cn_matrix(m, n, rng),
        h_ud: cn_matrix(l, k, rng),
        h_dd: cn_matrix(l, l, rng),
        h_ub: cn_matrix(m, k, rng),
        h_db: cn_matrix(m, l, rng),
        h_rd: cn_matrix(l, n, rng),
        h_ur: cn_matrix(n, k, rng),
        h_dr: cn_matrix(n, l, rng),
    }
}

pub fn random_instance<T: Real>(d: Dims, rng: &mut RandomStream) -> Instance<T> {
    Instance::new(LinkBudget::unit(d.users, d.pairs), random_channels(d, rng)).unwrap()
}

/// Phases uniform on the circle, magnitudes uniform in [0, 1].
pub fn random_phase<T: Real>(n: usize, rng: &mut RandomStream) -> PhaseShift<T> {
    PhaseShift::new(DVector::from_fn(n, |_, _| {
        let r: f64 = rng.random();
        let t: f64 = rng.random::<f64>() * std::f64::consts::TAU;
        Cx::new(T::lit(r * t.cos()), T::lit(r * t.sin()))
    }))
}

pub fn rel_err(a: Cx<f64>, b: Cx<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}
