//! Network drops: node placement, large-scale path loss and Rayleigh fading.

use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::channels::{ChannelSet, Dims};
use crate::error::{Error, Result};
use crate::rng::RandomStream;
use crate::scalar::{dbm_to_watts, from_db, Cx, Real};

/// Planar position in meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

impl From<[f64; 2]> for Point {
    fn from(p: [f64; 2]) -> Self {
        Self::new(p[0], p[1])
    }
}

/// Link classes that carry their own path-loss exponent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LinkClass {
    UserRis,
    TxdRis,
    RisRxd,
    RisBs,
    UserBs,
    TxdBs,
    UserRxd,
    TxdRxd,
}

impl LinkClass {
    pub fn name(self) -> &'static str {
        match self {
            LinkClass::UserRis => "user-RIS",
            LinkClass::TxdRis => "TxD-RIS",
            LinkClass::RisRxd => "RIS-RxD",
            LinkClass::RisBs => "RIS-BS",
            LinkClass::UserBs => "user-BS",
            LinkClass::TxdBs => "TxD-BS",
            LinkClass::UserRxd => "user-RxD",
            LinkClass::TxdRxd => "TxD-RxD",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathlossExponents {
    pub user_ris: f64,
    pub txd_ris: f64,
    pub ris_rxd: f64,
    pub ris_bs: f64,
    pub user_bs: f64,
    pub txd_bs: f64,
    pub user_rxd: f64,
    pub txd_rxd: f64,
}

impl Default for PathlossExponents {
    fn default() -> Self {
        Self {
            user_ris: 2.2,
            txd_ris: 2.2,
            ris_rxd: 2.2,
            ris_bs: 2.2,
            user_bs: 4.0,
            txd_bs: 4.0,
            user_rxd: 5.0,
            txd_rxd: 5.0,
        }
    }
}

impl PathlossExponents {
    pub fn get(&self, class: LinkClass) -> f64 {
        match class {
            LinkClass::UserRis => self.user_ris,
            LinkClass::TxdRis => self.txd_ris,
            LinkClass::RisRxd => self.ris_rxd,
            LinkClass::RisBs => self.ris_bs,
            LinkClass::UserBs => self.user_bs,
            LinkClass::TxdBs => self.txd_bs,
            LinkClass::UserRxd => self.user_rxd,
            LinkClass::TxdRxd => self.txd_rxd,
        }
    }

    fn all(&self) -> [f64; 8] {
        [
            self.user_ris,
            self.txd_ris,
            self.ris_rxd,
            self.ris_bs,
            self.user_bs,
            self.txd_bs,
            self.user_rxd,
            self.txd_rxd,
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Geometry {
    pub bs: [f64; 2],
    pub ris: [f64; 2],
    /// Center of the disk holding users and transmit devices.
    pub tx_cluster_center: [f64; 2],
    /// Center of the disk holding receive devices.
    pub rx_cluster_center: [f64; 2],
    pub cluster_radius: f64,
    pub pathloss_exponents: PathlossExponents,
    /// Path loss at the reference distance, dB.
    pub beta0_db: f64,
    /// Reference distance, m.
    pub reference_distance: f64,
}

impl Default for Geometry {
    fn default() -> Self {
        Self {
            bs: [0.0, 0.0],
            ris: [100.0, 30.0],
            tx_cluster_center: [200.0, 0.0],
            rx_cluster_center: [50.0, 0.0],
            cluster_radius: 25.0,
            pathloss_exponents: PathlossExponents::default(),
            beta0_db: -30.0,
            reference_distance: 1.0,
        }
    }
}

/// Scenario parameters, in the units a user writes them (dBm, dBm/Hz, Hz).
///
/// The TOML schema mirrors the field names; every key is optional and
/// defaults to the reference setup (M=8, K=2, L=2, N=64, 30 dBm,
/// -169 dBm/Hz over 1 MHz):
///
/// ```toml
/// antennas = 8
/// users = 2
/// pairs = 2
/// elements = 64
/// user_power_dbm = 30.0
/// device_power_dbm = 30.0
/// noise_psd_dbm_hz = -169.0
/// bandwidth_hz = 1e6
/// seed = 1
///
/// [geometry]
/// bs = [0.0, 0.0]
/// ris = [100.0, 30.0]
/// tx_cluster_center = [200.0, 0.0]
/// rx_cluster_center = [50.0, 0.0]
/// cluster_radius = 25.0
/// beta0_db = -30.0
/// reference_distance = 1.0
///
/// [geometry.pathloss_exponents]
/// user_ris = 2.2
/// txd_ris = 2.2
/// ris_rxd = 2.2
/// ris_bs = 2.2
/// user_bs = 4.0
/// txd_bs = 4.0
/// user_rxd = 5.0
/// txd_rxd = 5.0
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    /// BS antennas `M`.
    pub antennas: usize,
    /// Cellular users `K`.
    pub users: usize,
    /// D2D pairs `L`.
    pub pairs: usize,
    /// RIS elements `N`.
    pub elements: usize,
    pub user_power_dbm: f64,
    pub device_power_dbm: f64,
    pub noise_psd_dbm_hz: f64,
    pub bandwidth_hz: f64,
    pub seed: u64,
    pub geometry: Geometry,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            antennas: 8,
            users: 2,
            pairs: 2,
            elements: 64,
            user_power_dbm: 30.0,
            device_power_dbm: 30.0,
            noise_psd_dbm_hz: -169.0,
            bandwidth_hz: 1e6,
            seed: 1,
            geometry: Geometry::default(),
        }
    }
}

impl SystemConfig {
    pub fn dims(&self) -> Dims {
        Dims::new(self.antennas, self.users, self.pairs, self.elements)
    }

    /// Checks the structural invariants. Degenerate populations (`K = 0` or
    /// `L = 0`) are accepted as long as at least one link exists.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.antennas == 0 || self.elements == 0 {
            return bad("antennas and elements must be at least 1".into());
        }
        if self.users + self.pairs == 0 {
            return bad("need at least one user or device pair".into());
        }
        for (name, v) in [
            ("user_power_dbm", self.user_power_dbm),
            ("device_power_dbm", self.device_power_dbm),
            ("noise_psd_dbm_hz", self.noise_psd_dbm_hz),
        ] {
            if !v.is_finite() {
                return bad(format!("{name} must be finite"));
            }
        }
        if !(self.bandwidth_hz > 0.0 && self.bandwidth_hz.is_finite()) {
            return bad("bandwidth_hz must be positive".into());
        }
        let g = &self.geometry;
        if !(g.cluster_radius >= 0.0) {
            return bad("cluster_radius must be nonnegative".into());
        }
        if !(g.reference_distance > 0.0) {
            return bad("reference_distance must be positive".into());
        }
        if g.pathloss_exponents.all().iter().any(|&e| !(e >= 2.0)) {
            return bad("path-loss exponents must be at least 2".into());
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Noise power over the band, dBm: `psd + 10 log10(bandwidth)`.
    pub fn noise_dbm(&self) -> f64 {
        self.noise_psd_dbm_hz + 10.0 * self.bandwidth_hz.log10()
    }

    pub fn budget<T: Real>(&self) -> LinkBudget<T> {
        let noise = T::lit(dbm_to_watts(self.noise_dbm()));
        LinkBudget {
            p_user: vec![T::lit(dbm_to_watts(self.user_power_dbm)); self.users],
            p_dev: vec![T::lit(dbm_to_watts(self.device_power_dbm)); self.pairs],
            noise_bs: noise,
            noise_dev: noise,
        }
    }
}

/// Linear-scale transmit powers (W) and noise powers (W).
#[derive(Clone, Debug, PartialEq)]
pub struct LinkBudget<T: Real> {
    pub p_user: Vec<T>,
    pub p_dev: Vec<T>,
    /// `sigma^2_B`.
    pub noise_bs: T,
    /// `sigma^2_D`.
    pub noise_dev: T,
}

impl<T: Real> LinkBudget<T> {
    /// Every power and noise level equal to one.
    pub fn unit(users: usize, pairs: usize) -> Self {
        Self {
            p_user: vec![T::one(); users],
            p_dev: vec![T::one(); pairs],
            noise_bs: T::one(),
            noise_dev: T::one(),
        }
    }
}

/// Node positions of one drop.
#[derive(Clone, Debug, PartialEq)]
pub struct PositionSet {
    pub bs: Point,
    pub ris: Point,
    pub users: Vec<Point>,
    pub txd: Vec<Point>,
    pub rxd: Vec<Point>,
}

fn uniform_in_disk(center: Point, radius: f64, rng: &mut RandomStream) -> Point {
    let r = radius * rng.random::<f64>().sqrt();
    let theta = std::f64::consts::TAU * rng.random::<f64>();
    Point::new(center.x + r * theta.cos(), center.y + r * theta.sin())
}

/// Users and transmit devices uniform over the transmit disk, receive
/// devices uniform over the receive disk.
pub fn draw_positions(cfg: &SystemConfig, rng: &mut RandomStream) -> PositionSet {
    let g = &cfg.geometry;
    let tx = Point::from(g.tx_cluster_center);
    let rx = Point::from(g.rx_cluster_center);
    let users = (0..cfg.users).map(|_| uniform_in_disk(tx, g.cluster_radius, rng)).collect();
    let txd = (0..cfg.pairs).map(|_| uniform_in_disk(tx, g.cluster_radius, rng)).collect();
    let rxd = (0..cfg.pairs).map(|_| uniform_in_disk(rx, g.cluster_radius, rng)).collect();
    PositionSet {
        bs: g.bs.into(),
        ris: g.ris.into(),
        users,
        txd,
        rxd,
    }
}

/// Large-scale gain `beta0 (d/d0)^-eta`, linear scale.
pub fn pathloss(geometry: &Geometry, a: &Point, b: &Point, class: LinkClass) -> Result<f64> {
    let d = a.distance(b);
    if !(d > 0.0) {
        return Err(Error::CollocatedNodes(class.name()));
    }
    let eta = geometry.pathloss_exponents.get(class);
    Ok(from_db(geometry.beta0_db) * (d / geometry.reference_distance).powf(-eta))
}

/// Per-entry channel variances of a drop (large-scale gains).
#[derive(Clone, Debug, PartialEq)]
pub struct LinkGains {
    pub dims: Dims,
    pub ris_bs: f64,
    /// `[l][k]`.
    pub user_rxd: Vec<Vec<f64>>,
    /// `[l][l']`: TxD `l'` to RxD `l`.
    pub txd_rxd: Vec<Vec<f64>>,
    pub user_bs: Vec<f64>,
    pub txd_bs: Vec<f64>,
    pub ris_rxd: Vec<f64>,
    pub user_ris: Vec<f64>,
    pub txd_ris: Vec<f64>,
}

impl LinkGains {
    /// Every link with the same gain.
    pub fn uniform(dims: Dims, beta: f64) -> Self {
        let (k, l) = (dims.users, dims.pairs);
        Self {
            dims,
            ris_bs: beta,
            user_rxd: vec![vec![beta; k]; l],
            txd_rxd: vec![vec![beta; l]; l],
            user_bs: vec![beta; k],
            txd_bs: vec![beta; l],
            ris_rxd: vec![beta; l],
            user_ris: vec![beta; k],
            txd_ris: vec![beta; l],
        }
    }
}

pub fn link_gains(cfg: &SystemConfig, pos: &PositionSet) -> Result<LinkGains> {
    let g = &cfg.geometry;
    let dims = cfg.dims();
    if pos.users.len() != dims.users || pos.txd.len() != dims.pairs || pos.rxd.len() != dims.pairs {
        return Err(Error::DimensionMismatch {
            what: "position set",
            expected: format!("{} users, {} pairs", dims.users, dims.pairs),
            got: format!("{} users, {}/{} devices", pos.users.len(), pos.txd.len(), pos.rxd.len()),
        });
    }
    let pl = |a: &Point, b: &Point, c| pathloss(g, a, b, c);
    let each = |pts: &[Point], other: &Point, c| pts.iter().map(|p| pl(p, other, c)).collect::<Result<Vec<_>>>();
    Ok(LinkGains {
        dims,
        ris_bs: pl(&pos.ris, &pos.bs, LinkClass::RisBs)?,
        user_rxd: pos.rxd.iter().map(|r| each(&pos.users, r, LinkClass::UserRxd)).collect::<Result<_>>()?,
        txd_rxd: pos.rxd.iter().map(|r| each(&pos.txd, r, LinkClass::TxdRxd)).collect::<Result<_>>()?,
        user_bs: each(&pos.users, &pos.bs, LinkClass::UserBs)?,
        txd_bs: each(&pos.txd, &pos.bs, LinkClass::TxdBs)?,
        ris_rxd: each(&pos.rxd, &pos.ris, LinkClass::RisRxd)?,
        user_ris: each(&pos.users, &pos.ris, LinkClass::UserRis)?,
        txd_ris: each(&pos.txd, &pos.ris, LinkClass::TxdRis)?,
    })
}

/// Small-scale fading law: draws one complex coefficient of given variance.
pub trait Fading {
    fn sample<T: Real>(&self, variance: f64, rng: &mut RandomStream) -> Cx<T>;
}

/// Circularly-symmetric complex Gaussian entries, `CN(0, variance)`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Rayleigh;

impl Fading for Rayleigh {
    fn sample<T: Real>(&self, variance: f64, rng: &mut RandomStream) -> Cx<T> {
        let s = (variance / 2.0).sqrt();
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        Cx::new(T::lit(s * a), T::lit(s * b))
    }
}

/// Draws all eight channels entrywise from `fading`, with per-entry variance
/// given by `gains`. Matrices are filled in the fixed order H_RB, H_UD,
/// H_DD, H_UB, H_DB, H_RD, H_UR, H_DR, each row-major.
pub fn draw_channels_with<T: Real, F: Fading>(gains: &LinkGains, fading: &F, rng: &mut RandomStream) -> ChannelSet<T> {
    let d = gains.dims;
    let mut fill = |rows: usize, cols: usize, var: &dyn Fn(usize, usize) -> f64| {
        let mut m = DMatrix::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m[(r, c)] = fading.sample::<T>(var(r, c), rng);
            }
        }
        m
    };
    let (m, k, l, n) = (d.antennas, d.users, d.pairs, d.elements);
    let h_rb = fill(m, n, &|_, _| gains.ris_bs);
    let h_ud = fill(l, k, &|r, c| gains.user_rxd[r][c]);
    let h_dd = fill(l, l, &|r, c| gains.txd_rxd[r][c]);
    let h_ub = fill(m, k, &|_, c| gains.user_bs[c]);
    let h_db = fill(m, l, &|_, c| gains.txd_bs[c]);
    let h_rd = fill(l, n, &|r, _| gains.ris_rxd[r]);
    let h_ur = fill(n, k, &|_, c| gains.user_ris[c]);
    let h_dr = fill(n, l, &|_, c| gains.txd_ris[c]);
    ChannelSet {
        h_rb,
        h_ud,
        h_dd,
        h_ub,
        h_db,
        h_rd,
        h_ur,
        h_dr,
    }
}

/// Rayleigh-faded channels for the given placement.
pub fn draw_channels<T: Real>(cfg: &SystemConfig, pos: &PositionSet, rng: &mut RandomStream) -> Result<ChannelSet<T>> {
    let gains = link_gains(cfg, pos)?;
    Ok(draw_channels_with(&gains, &Rayleigh, rng))
}

/// One complete drop: positions then channels, both from `rng`.
pub fn draw_drop<T: Real>(cfg: &SystemConfig, rng: &mut RandomStream) -> Result<(PositionSet, ChannelSet<T>)> {
    let pos = draw_positions(cfg, rng);
    let ch = draw_channels(cfg, &pos, rng)?;
    Ok((pos, ch))
}
