use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use risd2d::ic::{build_representation, residual_interference, stack};
use risd2d::maxmin::gaussian_randomize;
use risd2d::sinr::{lmmse_combiner, sinr_user};
use risd2d::{ChannelSet, Combiner, Cx, Dims, Instance, LinkBudget, PhaseShift, RandomStream, SystemConfig};

fn gaussian(seed: u64, len: usize) -> Vec<Cx<f64>> {
    use rand::Rng;
    use rand_distr::StandardNormal;
    let mut rng = RandomStream::new(seed);
    (0..len)
        .map(|_| {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            Cx::new(a, b) * std::f64::consts::FRAC_1_SQRT_2
        })
        .collect()
}

fn matrix(r: usize, c: usize, seed: u64) -> DMatrix<Cx<f64>> {
    DMatrix::from_vec(r, c, gaussian(seed, r * c))
}

fn instance(d: Dims, seed: u64) -> Instance<f64> {
    let (m, k, l, n) = (d.antennas, d.users, d.pairs, d.elements);
    let ch = ChannelSet {
        h_rb: matrix(m, n, seed),
        h_ud: matrix(l, k, seed + 1),
        h_dd: matrix(l, l, seed + 2),
        h_ub: matrix(m, k, seed + 3),
        h_db: matrix(m, l, seed + 4),
        h_rd: matrix(l, n, seed + 5),
        h_ur: matrix(n, k, seed + 6),
        h_dr: matrix(n, l, seed + 7),
    };
    Instance::new(LinkBudget::unit(k, l), ch).unwrap()
}

fn dims() -> impl Strategy<Value = Dims> {
    (1usize..4, 0usize..3, 0usize..3, 1usize..12)
        .prop_filter("at least one link", |(_, k, l, _)| k + l > 0)
        .prop_map(|(m, k, l, n)| Dims::new(m, k, l, n))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cancelling_family_nulls_interference(d in dims(), seed in any::<u64>(), scale in 0.01f64..10.0) {
        let inst = instance(d, seed);
        if let Ok(rep) = build_representation(&stack(&inst)) {
            let f = DVector::from_vec(gaussian(seed ^ 0xabc, d.pairs)) * Cx::new(scale, 0.0);
            let phi = rep.affine().phase(&f);
            for r in residual_interference(&inst, &phi) {
                prop_assert!(r <= 1e-9, "residual {r:e}");
            }
        }
    }

    #[test]
    fn lmmse_beats_any_combiner(d in dims(), seed in any::<u64>()) {
        prop_assume!(d.users > 0);
        let inst = instance(d, seed);
        let phi = PhaseShift::new(DVector::from_vec(gaussian(seed ^ 1, d.elements)).map(|z| z / (1.0 + z.norm())));
        let bs = inst.bs(&phi);
        let best = sinr_user(&inst.budget, &bs, &lmmse_combiner(&inst.budget, &bs)).unwrap();
        let other = sinr_user(&inst.budget, &bs, &Combiner::new(matrix(d.users, d.antennas, seed ^ 2))).unwrap();
        for (b, o) in best.iter().zip(&other) {
            prop_assert!(*b >= o * (1.0 - 1e-9), "{b} < {o}");
        }
    }

    #[test]
    fn randomization_stays_in_unit_disk(n in 1usize..10, rank in 1usize..4, seed in any::<u64>()) {
        let g = matrix(n + 1, rank, seed);
        let mut lift = &g * g.adjoint();
        let corner = lift[(n, n)].re;
        prop_assume!(corner > 1e-6);
        lift /= Cx::new(corner, 0.0);
        let best = gaussian_randomize(&lift, |p: &PhaseShift<f64>| -p.max_modulus(), 20, &RandomStream::new(seed)).unwrap();
        prop_assert!(best.phi.max_modulus() <= 1.0 + 1e-12);
    }
}

#[test]
fn config_file_round_trip() {
    let cfg = SystemConfig {
        elements: 40,
        seed: 9,
        ..SystemConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("system.toml");
    std::fs::write(&path, toml::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(SystemConfig::load(&path).unwrap(), cfg);
}
