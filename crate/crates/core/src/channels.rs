//! Channel containers, cascaded RIS channels and effective channels.
//!
//! Conventions: every stored vector is a column vector. A cascaded
//! device-side channel `g` enters the received signal as `g^H phi`, so the
//! conjugate transpose is applied where it is used, never when stored.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::{abs, Cx, Real};
use crate::scenario::LinkBudget;

/// Feasibility slack on `|phi_n| <= 1`.
pub const FEASIBILITY_SLACK: f64 = 1e-9;

/// Direct and RIS channels of one network drop.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSet<T: Real> {
    /// RIS to BS, `M x N`.
    pub h_rb: DMatrix<Cx<T>>,
    /// Users to receive devices, `L x K`.
    pub h_ud: DMatrix<Cx<T>>,
    /// Transmit devices to receive devices, `L x L`.
    pub h_dd: DMatrix<Cx<T>>,
    /// Users to BS, `M x K`; column `k` is `h^UB_k`.
    pub h_ub: DMatrix<Cx<T>>,
    /// Transmit devices to BS, `M x L`; column `l` is `h^DB_l`.
    pub h_db: DMatrix<Cx<T>>,
    /// RIS to receive devices, `L x N`; row `l` is `(h^RD_l)^H`.
    pub h_rd: DMatrix<Cx<T>>,
    /// Users to RIS, `N x K`.
    pub h_ur: DMatrix<Cx<T>>,
    /// Transmit devices to RIS, `N x L`.
    pub h_dr: DMatrix<Cx<T>>,
}

/// `(M, K, L, N)`: BS antennas, users, device pairs, RIS elements.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    pub antennas: usize,
    pub users: usize,
    pub pairs: usize,
    pub elements: usize,
}

impl Dims {
    pub fn new(antennas: usize, users: usize, pairs: usize, elements: usize) -> Self {
        Self {
            antennas,
            users,
            pairs,
            elements,
        }
    }

    /// Number of receive-device side coefficients `L(K+L)`.
    pub fn device_links(&self) -> usize {
        self.pairs * (self.users + self.pairs)
    }
}

fn check_shape<T: Real>(what: &'static str, m: &DMatrix<Cx<T>>, rows: usize, cols: usize) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::DimensionMismatch {
            what,
            expected: format!("{rows}x{cols}"),
            got: format!("{}x{}", m.nrows(), m.ncols()),
        });
    }
    Ok(())
}

impl<T: Real> ChannelSet<T> {
    pub fn zeros(d: Dims) -> Self {
        let z = |r, c| DMatrix::zeros(r, c);
        Self {
            h_rb: z(d.antennas, d.elements),
            h_ud: z(d.pairs, d.users),
            h_dd: z(d.pairs, d.pairs),
            h_ub: z(d.antennas, d.users),
            h_db: z(d.antennas, d.pairs),
            h_rd: z(d.pairs, d.elements),
            h_ur: z(d.elements, d.users),
            h_dr: z(d.elements, d.pairs),
        }
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.h_rb.nrows(), self.h_ub.ncols(), self.h_dd.nrows(), self.h_rb.ncols())
    }

    /// Verifies every matrix against the shapes implied by `h_rb`, `h_ub`, `h_dd`.
    pub fn validate(&self) -> Result<()> {
        let d = self.dims();
        let (m, k, l, n) = (d.antennas, d.users, d.pairs, d.elements);
        check_shape("H_RB", &self.h_rb, m, n)?;
        check_shape("H_UD", &self.h_ud, l, k)?;
        check_shape("H_DD", &self.h_dd, l, l)?;
        check_shape("H_UB", &self.h_ub, m, k)?;
        check_shape("H_DB", &self.h_db, m, l)?;
        check_shape("H_RD", &self.h_rd, l, n)?;
        check_shape("H_UR", &self.h_ur, n, k)?;
        check_shape("H_DR", &self.h_dr, n, l)
    }

    fn named(&self) -> [(&'static str, &DMatrix<Cx<T>>); 8] {
        [
            ("H_RB", &self.h_rb),
            ("H_UD", &self.h_ud),
            ("H_DD", &self.h_dd),
            ("H_UB", &self.h_ub),
            ("H_DB", &self.h_db),
            ("H_RD", &self.h_rd),
            ("H_UR", &self.h_ur),
            ("H_DR", &self.h_dr),
        ]
    }

    /// Writes the text fixture format:
    ///
    /// ```text
    /// risd2d-channels 1
    /// dims <M> <K> <L> <N>
    /// <NAME> <rows> <cols>
    /// <re> <im>          # one line per entry, row-major
    /// ```
    ///
    /// The eight blocks appear in the order H_RB, H_UD, H_DD, H_UB, H_DB,
    /// H_RD, H_UR, H_DR. Values are printed as the shortest decimal that
    /// round-trips to the same IEEE-754 double.
    pub fn write_fixture<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.dims();
        let mut s = String::new();
        writeln!(s, "risd2d-channels 1").ok();
        writeln!(s, "dims {} {} {} {}", d.antennas, d.users, d.pairs, d.elements).ok();
        for (name, m) in self.named() {
            writeln!(s, "{name} {} {}", m.nrows(), m.ncols()).ok();
            for r in 0..m.nrows() {
                for c in 0..m.ncols() {
                    let z = m[(r, c)];
                    writeln!(s, "{:?} {:?}", z.re.as_f64(), z.im.as_f64()).ok();
                }
            }
        }
        w.write_all(s.as_bytes())?;
        Ok(())
    }

    pub fn read_fixture<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().enumerate().filter_map(|(i, l)| match l {
            Ok(l) if l.trim().is_empty() || l.starts_with('#') => None,
            other => Some((i + 1, other)),
        });
        let mut next = |what: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some((i, Ok(l))) => Ok((i, l)),
                Some((_, Err(e))) => Err(e.into()),
                None => Err(Error::Fixture {
                    line: 0,
                    msg: format!("unexpected end of input, expected {what}"),
                }),
            }
        };
        let bad = |line: usize, msg: String| Error::Fixture { line, msg };

        let (ln, header) = next("header")?;
        if header.trim() != "risd2d-channels 1" {
            return Err(bad(ln, format!("unknown header `{header}`")));
        }
        let (ln, dims) = next("dims")?;
        let nums: Vec<usize> = dims
            .split_whitespace()
            .skip(1)
            .map(|t| t.parse().map_err(|_| bad(ln, format!("bad dimension `{t}`"))))
            .collect::<Result<_>>()?;
        if nums.len() != 4 {
            return Err(bad(ln, "dims line needs four integers".into()));
        }
        let d = Dims::new(nums[0], nums[1], nums[2], nums[3]);
        let mut out = Self::zeros(d);
        let names = ["H_RB", "H_UD", "H_DD", "H_UB", "H_DB", "H_RD", "H_UR", "H_DR"];
        for name in names {
            let (ln, head) = next(name)?;
            let toks: Vec<&str> = head.split_whitespace().collect();
            if toks.len() != 3 || toks[0] != name {
                return Err(bad(ln, format!("expected `{name} <rows> <cols>`, got `{head}`")));
            }
            let rows: usize = toks[1].parse().map_err(|_| bad(ln, "bad row count".into()))?;
            let cols: usize = toks[2].parse().map_err(|_| bad(ln, "bad column count".into()))?;
            let mut m = DMatrix::zeros(rows, cols);
            for r in 0..rows {
                for c in 0..cols {
                    let (ln, entry) = next("matrix entry")?;
                    let mut it = entry.split_whitespace();
                    let mut part = || -> Result<f64> {
                        it.next()
                            .and_then(|t| t.parse::<f64>().ok())
                            .ok_or_else(|| bad(ln, format!("bad complex entry `{entry}`")))
                    };
                    let (a, b) = (part()?, part()?);
                    m[(r, c)] = Cx::new(T::lit(a), T::lit(b));
                }
            }
            match name {
                "H_RB" => out.h_rb = m,
                "H_UD" => out.h_ud = m,
                "H_DD" => out.h_dd = m,
                "H_UB" => out.h_ub = m,
                "H_DB" => out.h_db = m,
                "H_RD" => out.h_rd = m,
                "H_UR" => out.h_ur = m,
                _ => out.h_dr = m,
            }
        }
        out.validate()?;
        Ok(out)
    }
}

/// Cascaded channels through the RIS.
#[derive(Clone, Debug, PartialEq)]
pub struct CascadedChannels<T: Real> {
    /// `g_dd[l][l']`: TxD `l'` to RxD `l`, enters as `g^H phi`.
    pub g_dd: Vec<Vec<DVector<Cx<T>>>>,
    /// `g_ud[l][k]`: user `k` to RxD `l`.
    pub g_ud: Vec<Vec<DVector<Cx<T>>>>,
    /// `G^UB_k = H^RB diag(h^UR_k)`, each `M x N`.
    pub g_ub: Vec<DMatrix<Cx<T>>>,
    /// `G^DB_l = H^RB diag(h^DR_l)`, each `M x N`.
    pub g_db: Vec<DMatrix<Cx<T>>>,
}

/// Builds the four cascaded channel families of a drop.
pub fn build_cascaded<T: Real>(ch: &ChannelSet<T>) -> CascadedChannels<T> {
    let d = ch.dims();
    // (g)^H = (h^RD_l)^H diag(h^XR) and row l of H_RD is (h^RD_l)^H
    let device_side = |l: usize, src: &DMatrix<Cx<T>>, j: usize| {
        DVector::from_fn(d.elements, |n, _| (ch.h_rd[(l, n)] * src[(n, j)]).conj())
    };
    let bs_side = |src: &DMatrix<Cx<T>>, j: usize| {
        DMatrix::from_fn(d.antennas, d.elements, |m, n| ch.h_rb[(m, n)] * src[(n, j)])
    };
    CascadedChannels {
        g_dd: (0..d.pairs)
            .map(|l| (0..d.pairs).map(|lp| device_side(l, &ch.h_dr, lp)).collect())
            .collect(),
        g_ud: (0..d.pairs)
            .map(|l| (0..d.users).map(|k| device_side(l, &ch.h_ur, k)).collect())
            .collect(),
        g_ub: (0..d.users).map(|k| bs_side(&ch.h_ur, k)).collect(),
        g_db: (0..d.pairs).map(|l| bs_side(&ch.h_dr, l)).collect(),
    }
}

/// RIS reflection coefficients `phi`, one per element.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseShift<T: Real> {
    pub phi: DVector<Cx<T>>,
}

impl<T: Real> PhaseShift<T> {
    pub fn new(phi: DVector<Cx<T>>) -> Self {
        Self { phi }
    }

    /// All elements switched off.
    pub fn zeros(n: usize) -> Self {
        Self::new(DVector::zeros(n))
    }

    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    pub fn max_modulus(&self) -> T {
        self.phi.iter().fold(T::zero(), |m, z| m.max(abs(*z)))
    }

    /// `|phi_n| <= 1 + 1e-9` for every element.
    pub fn is_feasible(&self) -> bool {
        self.max_modulus().as_f64() <= 1.0 + FEASIBILITY_SLACK
    }

    /// The augmented vector `[phi; 1]`.
    pub fn augmented(&self) -> DVector<Cx<T>> {
        let n = self.len();
        DVector::from_fn(n + 1, |i, _| if i < n { self.phi[i] } else { Cx::new(T::one(), T::zero()) })
    }

    pub fn to_pairs(&self) -> Vec<[f64; 2]> {
        self.phi.iter().map(|z| [z.re.as_f64(), z.im.as_f64()]).collect()
    }
}

impl<T: Real> serde::Serialize for PhaseShift<T> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        serde::Serialize::serialize(&self.to_pairs(), s)
    }
}

/// Effective BS-side channels for a given `phi`.
#[derive(Clone, Debug, PartialEq)]
pub struct BsChannels<T: Real> {
    /// Column `k` is `f^UB_k = h^UB_k + G^UB_k phi`.
    pub f_ub: DMatrix<Cx<T>>,
    /// Column `l` is `f^DB_l = h^DB_l + G^DB_l phi`.
    pub f_db: DMatrix<Cx<T>>,
}

/// Effective device-side channels for a given `phi`.
#[derive(Clone, Debug, PartialEq)]
pub struct DeviceChannels<T: Real> {
    /// `f_dd[(l, l')] = h^DD_{l,l'} + (g^DD_{l,l'})^H phi`.
    pub f_dd: DMatrix<Cx<T>>,
    /// `f_ud[(l, k)] = h^UD_{l,k} + (g^UD_{l,k})^H phi`.
    pub f_ud: DMatrix<Cx<T>>,
}

pub fn effective_bs_channels<T: Real>(
    ch: &ChannelSet<T>,
    casc: &CascadedChannels<T>,
    phi: &PhaseShift<T>,
) -> BsChannels<T> {
    let mut f_ub = ch.h_ub.clone();
    for (k, g) in casc.g_ub.iter().enumerate() {
        let mut col = f_ub.column_mut(k);
        col += g * &phi.phi;
    }
    let mut f_db = ch.h_db.clone();
    for (l, g) in casc.g_db.iter().enumerate() {
        let mut col = f_db.column_mut(l);
        col += g * &phi.phi;
    }
    BsChannels { f_ub, f_db }
}

pub fn effective_device_channels<T: Real>(
    ch: &ChannelSet<T>,
    casc: &CascadedChannels<T>,
    phi: &PhaseShift<T>,
) -> DeviceChannels<T> {
    let f_dd = DMatrix::from_fn(ch.h_dd.nrows(), ch.h_dd.ncols(), |l, lp| {
        ch.h_dd[(l, lp)] + casc.g_dd[l][lp].dotc(&phi.phi)
    });
    let f_ud = DMatrix::from_fn(ch.h_ud.nrows(), ch.h_ud.ncols(), |l, k| {
        ch.h_ud[(l, k)] + casc.g_ud[l][k].dotc(&phi.phi)
    });
    DeviceChannels { f_dd, f_ud }
}

/// Everything an optimizer needs about one drop: linear-scale powers and
/// noise, the direct channels and the cascaded RIS channels.
#[derive(Clone, Debug)]
pub struct Instance<T: Real> {
    pub budget: LinkBudget<T>,
    pub channels: ChannelSet<T>,
    pub cascaded: CascadedChannels<T>,
}

impl<T: Real> Instance<T> {
    pub fn new(budget: LinkBudget<T>, channels: ChannelSet<T>) -> Result<Self> {
        channels.validate()?;
        let d = channels.dims();
        if budget.p_user.len() != d.users || budget.p_dev.len() != d.pairs {
            return Err(Error::DimensionMismatch {
                what: "link budget",
                expected: format!("{} users, {} pairs", d.users, d.pairs),
                got: format!("{} users, {} pairs", budget.p_user.len(), budget.p_dev.len()),
            });
        }
        let cascaded = build_cascaded(&channels);
        Ok(Self {
            budget,
            channels,
            cascaded,
        })
    }

    pub fn dims(&self) -> Dims {
        self.channels.dims()
    }

    pub fn bs(&self, phi: &PhaseShift<T>) -> BsChannels<T> {
        effective_bs_channels(&self.channels, &self.cascaded, phi)
    }

    pub fn device(&self, phi: &PhaseShift<T>) -> DeviceChannels<T> {
        effective_device_channels(&self.channels, &self.cascaded, phi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomStream;
    use crate::testutil::{random_channels, rel_err};

    #[test]
    fn cascaded_matches_entrywise_oracle() {
        let mut rng = RandomStream::new(3);
        let ch = random_channels::<f64>(Dims::new(3, 2, 2, 5), &mut rng);
        let c = build_cascaded(&ch);
        let d = ch.dims();
        for l in 0..d.pairs {
            for lp in 0..d.pairs {
                for n in 0..d.elements {
                    // h^RD_l as a column vector is the conjugate of row l of H_RD
                    let h_rd_ln = ch.h_rd[(l, n)].conj();
                    let gh = h_rd_ln.conj() * ch.h_dr[(n, lp)];
                    assert!(rel_err(c.g_dd[l][lp][n].conj(), gh) < 1e-12);
                }
            }
            for k in 0..d.users {
                for n in 0..d.elements {
                    let gh = ch.h_rd[(l, n)] * ch.h_ur[(n, k)];
                    assert!(rel_err(c.g_ud[l][k][n].conj(), gh) < 1e-12);
                }
            }
        }
        for k in 0..d.users {
            for m in 0..d.antennas {
                for n in 0..d.elements {
                    assert!(rel_err(c.g_ub[k][(m, n)], ch.h_rb[(m, n)] * ch.h_ur[(n, k)]) < 1e-12);
                }
            }
        }
    }

    #[test]
    fn cascaded_with_unit_ris_to_device_is_copy_of_source() {
        let mut rng = RandomStream::new(4);
        let mut ch = random_channels::<f64>(Dims::new(2, 1, 2, 4), &mut rng);
        ch.h_rd.fill(Cx::new(1.0, 0.0));
        let c = build_cascaded(&ch);
        for n in 0..4 {
            assert_eq!(c.g_dd[0][1][n].conj(), ch.h_dr[(n, 1)]);
        }
    }

    #[test]
    fn scalar_ris_collapses_to_product() {
        let mut rng = RandomStream::new(5);
        let ch = random_channels::<f64>(Dims::new(1, 1, 1, 1), &mut rng);
        let c = build_cascaded(&ch);
        let expect = ch.h_rd[(0, 0)].conj().conj() * ch.h_dr[(0, 0)];
        assert!(rel_err(c.g_dd[0][0][0].conj(), expect) < 1e-15);
    }

    #[test]
    fn effective_channels_reduce_to_direct_when_ris_off() {
        let mut rng = RandomStream::new(6);
        let ch = random_channels::<f64>(Dims::new(4, 2, 2, 8), &mut rng);
        let c = build_cascaded(&ch);
        let phi = PhaseShift::zeros(8);
        let bs = effective_bs_channels(&ch, &c, &phi);
        let dev = effective_device_channels(&ch, &c, &phi);
        assert_eq!(bs.f_ub, ch.h_ub);
        assert_eq!(bs.f_db, ch.h_db);
        assert_eq!(dev.f_dd, ch.h_dd);
        assert_eq!(dev.f_ud, ch.h_ud);
    }

    #[test]
    fn effective_bs_channel_matches_scalar_expansion() {
        let mut rng = RandomStream::new(7);
        let ch = random_channels::<f64>(Dims::new(4, 2, 2, 8), &mut rng);
        let c = build_cascaded(&ch);
        let phi = crate::testutil::random_phase(8, &mut rng);
        let bs = effective_bs_channels(&ch, &c, &phi);
        for k in 0..2 {
            for m in 0..4 {
                let mut acc = ch.h_ub[(m, k)];
                for n in 0..8 {
                    acc += c.g_ub[k][(m, n)] * phi.phi[n];
                }
                assert!(rel_err(bs.f_ub[(m, k)], acc) < 1e-12);
            }
        }
    }

    #[test]
    fn zero_cascade_makes_bs_channel_independent_of_phi() {
        let mut rng = RandomStream::new(8);
        let mut ch = random_channels::<f64>(Dims::new(3, 1, 1, 4), &mut rng);
        ch.h_rb.fill(Cx::new(0.0, 0.0));
        let c = build_cascaded(&ch);
        let a = effective_bs_channels(&ch, &c, &crate::testutil::random_phase(4, &mut rng));
        let b = effective_bs_channels(&ch, &c, &crate::testutil::random_phase(4, &mut rng));
        assert_eq!(a.f_ub, b.f_ub);
    }

    #[test]
    fn effective_channels_are_affine_in_phi() {
        let mut rng = RandomStream::new(9);
        let ch = random_channels::<f64>(Dims::new(3, 2, 2, 6), &mut rng);
        let c = build_cascaded(&ch);
        let p1 = crate::testutil::random_phase(6, &mut rng);
        let p2 = crate::testutil::random_phase(6, &mut rng);
        let a = 0.3;
        let mix = PhaseShift::new(p1.phi.scale(a) + p2.phi.scale(1.0 - a));
        let (d1, d2, dm) = (
            effective_device_channels(&ch, &c, &p1),
            effective_device_channels(&ch, &c, &p2),
            effective_device_channels(&ch, &c, &mix),
        );
        let lin = d1.f_dd.scale(a) + d2.f_dd.scale(1.0 - a);
        assert!((lin - &dm.f_dd).norm() < 1e-12 * dm.f_dd.norm());
        let (b1, b2, bm) = (
            effective_bs_channels(&ch, &c, &p1),
            effective_bs_channels(&ch, &c, &p2),
            effective_bs_channels(&ch, &c, &mix),
        );
        let lin = b1.f_ub.scale(a) + b2.f_ub.scale(1.0 - a);
        assert!((lin - &bm.f_ub).norm() < 1e-12 * bm.f_ub.norm());
    }

    #[test]
    fn fixture_round_trip_is_bit_exact() {
        let mut rng = RandomStream::new(10);
        let ch = random_channels::<f64>(Dims::new(2, 2, 1, 3), &mut rng);
        let mut buf = Vec::new();
        ch.write_fixture(&mut buf).unwrap();
        let back = ChannelSet::<f64>::read_fixture(&buf[..]).unwrap();
        assert_eq!(back, ch);
    }

    #[test]
    fn fixture_rejects_truncated_input() {
        let err = ChannelSet::<f64>::read_fixture("risd2d-channels 1\ndims 1 1 1 1\nH_RB 1 1\n".as_bytes());
        assert!(matches!(err, Err(Error::Fixture { .. })));
    }
}
