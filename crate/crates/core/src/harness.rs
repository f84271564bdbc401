//! Seeded Monte-Carlo experiments over power, RIS size or iteration cap.
//!
//! Every `(sweep value, trial)` cell draws one drop and runs all requested
//! methods on it, so method comparisons are paired. The drop depends only
//! on the master seed and the trial index.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channels::Instance;
use crate::error::{Error, Result};
use crate::ic::{build_representation, ic_optimize, ic_stream, stack, IcConfig, IcSolution};
use crate::maxmin::{run_ao, AoConfig, AoInit};
use crate::rng::{purpose, RandomStream};
use crate::scalar::{from_db, to_db};
use crate::scenario::{draw_drop, SystemConfig};
use crate::sdp::{SdpSettings, SdpSolver};
use crate::sinr::SinrReport;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "AO")]
    Ao,
    #[serde(rename = "IC")]
    Ic,
    #[serde(rename = "ICAO")]
    IcAo,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Ao, Method::Ic, Method::IcAo];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ao => "AO",
            Method::Ic => "IC",
            Method::IcAo => "ICAO",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().replace(['-', '_'], "").as_str() {
            "AO" => Ok(Method::Ao),
            "IC" => Ok(Method::Ic),
            "ICAO" => Ok(Method::IcAo),
            other => Err(Error::InvalidConfig(format!("unknown method {other:?}"))),
        }
    }
}

/// Parses a comma-separated method list such as `AO,IC,ICAO`.
pub fn parse_methods(list: &str) -> Result<Vec<Method>> {
    let mut out: Vec<Method> = list.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect::<Result<_>>()?;
    out.sort();
    out.dedup();
    if out.is_empty() {
        return Err(Error::InvalidConfig("empty method list".into()));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepKind {
    Power,
    Elements,
    Iters,
}

impl FromStr for SweepKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "power" => Ok(SweepKind::Power),
            "elements" => Ok(SweepKind::Elements),
            "iters" => Ok(SweepKind::Iters),
            other => Err(Error::InvalidConfig(format!("unknown sweep {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Sweep {
    /// Common transmit power of users and devices, dBm.
    TxPowerDbm(Vec<f64>),
    RisElements(Vec<usize>),
    /// Cap on AO outer iterations (AO and ICAO).
    MaxIters(Vec<usize>),
}

impl Sweep {
    pub fn default_for(kind: SweepKind) -> Self {
        match kind {
            SweepKind::Power => Sweep::TxPowerDbm(vec![20.0, 25.0, 30.0, 35.0, 40.0]),
            SweepKind::Elements => Sweep::RisElements(vec![40, 60, 64, 80]),
            SweepKind::Iters => Sweep::MaxIters(vec![1, 2, 3, 5, 10, 15, 20]),
        }
    }

    /// Parses comma-separated values for `kind`.
    pub fn parse(kind: SweepKind, values: &str) -> Result<Self> {
        let bad = |v: &str| Error::InvalidConfig(format!("bad sweep value {v:?}"));
        let items = values.split(',').map(str::trim).filter(|s| !s.is_empty());
        Ok(match kind {
            SweepKind::Power => Sweep::TxPowerDbm(items.map(|v| v.parse().map_err(|_| bad(v))).collect::<Result<_>>()?),
            SweepKind::Elements => Sweep::RisElements(items.map(|v| v.parse().map_err(|_| bad(v))).collect::<Result<_>>()?),
            SweepKind::Iters => Sweep::MaxIters(items.map(|v| v.parse().map_err(|_| bad(v))).collect::<Result<_>>()?),
        })
    }

    pub fn kind(&self) -> SweepKind {
        match self {
            Sweep::TxPowerDbm(_) => SweepKind::Power,
            Sweep::RisElements(_) => SweepKind::Elements,
            Sweep::MaxIters(_) => SweepKind::Iters,
        }
    }

    pub fn values(&self) -> Vec<f64> {
        match self {
            Sweep::TxPowerDbm(v) => v.clone(),
            Sweep::RisElements(v) => v.iter().map(|&x| x as f64).collect(),
            Sweep::MaxIters(v) => v.iter().map(|&x| x as f64).collect(),
        }
    }

    fn validate(&self) -> Result<()> {
        let v = self.values();
        if v.is_empty() {
            return Err(Error::InvalidConfig("sweep list is empty".into()));
        }
        if v.iter().any(|x| !x.is_finite()) || v.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidConfig("sweep list must be finite and sorted".into()));
        }
        if matches!(self, Sweep::MaxIters(c) if c.contains(&0)) || matches!(self, Sweep::RisElements(c) if c.contains(&0)) {
            return Err(Error::InvalidConfig("sweep counts must be at least 1".into()));
        }
        Ok(())
    }
}

/// Solver and algorithm tolerances. [`Tolerances::from_env`] reads
/// overrides from `RISD2D_*` variables.
#[derive(Clone, Debug, PartialEq)]
pub struct Tolerances {
    pub sdp: SdpSettings,
    pub ao: AoConfig<f64>,
    pub ic: IcConfig,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            sdp: SdpSettings::default(),
            ao: AoConfig::default(),
            ic: IcConfig::default(),
        }
    }
}

/// Environment variables understood by [`Tolerances::from_env`].
pub const ENV_KNOBS: [&str; 8] = [
    "RISD2D_SDP_TOL_FEAS",
    "RISD2D_SDP_TOL_GAP",
    "RISD2D_SDP_MAX_ITERS",
    "RISD2D_AO_MAX_OUTER_ITERS",
    "RISD2D_AO_OUTER_TOL",
    "RISD2D_DINKELBACH_TOL",
    "RISD2D_DINKELBACH_MAX_ITERS",
    "RISD2D_RANDOMIZATIONS",
];

impl Tolerances {
    pub fn from_env() -> Result<Self> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    /// Applies overrides from `lookup` (keys are the names in [`ENV_KNOBS`]).
    pub fn from_lookup(lookup: impl Fn(&str) -> Option<String>) -> Result<Self> {
        fn get<V: FromStr>(lookup: &impl Fn(&str) -> Option<String>, key: &str, slot: &mut V) -> Result<()> {
            if let Some(raw) = lookup(key) {
                *slot = raw
                    .trim()
                    .parse()
                    .map_err(|_| Error::InvalidConfig(format!("{key}={raw:?} does not parse")))?;
            }
            Ok(())
        }
        let mut t = Self::default();
        get(&lookup, ENV_KNOBS[0], &mut t.sdp.tol_feas)?;
        get(&lookup, ENV_KNOBS[1], &mut t.sdp.tol_gap)?;
        get(&lookup, ENV_KNOBS[2], &mut t.sdp.max_iters)?;
        get(&lookup, ENV_KNOBS[3], &mut t.ao.max_outer_iters)?;
        get(&lookup, ENV_KNOBS[4], &mut t.ao.outer_tol)?;
        get(&lookup, ENV_KNOBS[5], &mut t.ao.dinkelbach_tol)?;
        get(&lookup, ENV_KNOBS[6], &mut t.ao.dinkelbach_max_iters)?;
        get(&lookup, ENV_KNOBS[7], &mut t.ao.num_randomizations)?;
        t.ic.num_randomizations = t.ao.num_randomizations;
        t.ao.validate()?;
        if !(t.sdp.tol_feas > 0.0 && t.sdp.tol_gap > 0.0 && t.sdp.max_iters > 0) {
            return Err(Error::InvalidConfig("SDP tolerances must be positive".into()));
        }
        Ok(t)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Experiment {
    pub base: SystemConfig,
    pub sweep: Sweep,
    pub methods: Vec<Method>,
    pub trials: usize,
    pub tolerances: Tolerances,
}

impl Experiment {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        self.sweep.validate()?;
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("no methods requested".into()));
        }
        Ok(())
    }

    /// System configuration and AO settings for one sweep value.
    fn cell(&self, value: f64) -> (SystemConfig, AoConfig<f64>) {
        let mut cfg = self.base.clone();
        let mut ao = self.tolerances.ao.clone();
        match self.sweep {
            Sweep::TxPowerDbm(_) => {
                cfg.user_power_dbm = value;
                cfg.device_power_dbm = value;
            }
            Sweep::RisElements(_) => cfg.elements = value as usize,
            Sweep::MaxIters(_) => ao.max_outer_iters = value as usize,
        }
        (cfg, ao)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Ok,
    IcUnavailable,
    SolverFail,
}

impl RecordStatus {
    pub fn name(self) -> &'static str {
        match self {
            RecordStatus::Ok => "ok",
            RecordStatus::IcUnavailable => "ic_unavailable",
            RecordStatus::SolverFail => "solver_fail",
        }
    }
}

/// Outcome of one method on one drop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: Method,
    pub sweep_value: f64,
    pub trial: usize,
    /// `None` unless `status` is ok.
    pub min_sinr_db: Option<f64>,
    /// Device links first, then users.
    pub per_link_sinrs_db: Vec<f64>,
    pub outer_iterations: usize,
    pub sdp_solves: usize,
    pub wall_ms: f64,
    pub status: RecordStatus,
}

impl RunRecord {
    fn failed(method: Method, sweep_value: f64, trial: usize, status: RecordStatus, wall_ms: f64) -> Self {
        Self {
            method,
            sweep_value,
            trial,
            min_sinr_db: None,
            per_link_sinrs_db: Vec::new(),
            outer_iterations: 0,
            sdp_solves: 0,
            wall_ms,
            status,
        }
    }

    fn ok(method: Method, sweep_value: f64, trial: usize, report: &SinrReport<f64>) -> Self {
        Self {
            method,
            sweep_value,
            trial,
            min_sinr_db: Some(report.min_sinr_db()),
            per_link_sinrs_db: report.links_db(),
            outer_iterations: 0,
            sdp_solves: 0,
            wall_ms: 0.0,
            status: RecordStatus::Ok,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == RecordStatus::Ok
    }
}

fn status_of(e: &Error) -> RecordStatus {
    match e {
        Error::Underdetermined { .. } | Error::IllConditioned(_) | Error::IcInfeasible => RecordStatus::IcUnavailable,
        _ => RecordStatus::SolverFail,
    }
}

/// Stream of trial `trial` under master seed `seed`.
pub fn trial_stream(seed: u64, trial: usize) -> RandomStream {
    RandomStream::derive(seed, &[trial as u64])
}

fn run_ic(inst: &Instance<f64>, tol: &Tolerances, solver: &SdpSolver, stream: &RandomStream) -> Result<IcSolution<f64>> {
    let rep = build_representation(&stack(inst))?;
    ic_optimize(inst, &rep.affine(), &tol.ic, solver, &ic_stream(stream))
}

/// Runs every requested method on one drop.
pub fn run_cell(e: &Experiment, value: f64, trial: usize) -> Vec<RunRecord> {
    let (cfg, ao_cfg) = e.cell(value);
    let stream = trial_stream(e.base.seed, trial);
    let solver = SdpSolver::new(e.tolerances.sdp.clone());
    let t0 = Instant::now();
    let inst = draw_drop::<f64>(&cfg, &mut stream.child(&[purpose::DROP]))
        .and_then(|(_, ch)| Instance::new(cfg.budget(), ch));
    let draw_ms = t0.elapsed().as_secs_f64() * 1e3;
    let inst = match inst {
        Ok(i) => i,
        Err(_) => {
            return e
                .methods
                .iter()
                .map(|&m| RunRecord::failed(m, value, trial, RecordStatus::SolverFail, draw_ms))
                .collect()
        }
    };

    let needs_ic = e.methods.iter().any(|m| matches!(m, Method::Ic | Method::IcAo));
    let t_ic = Instant::now();
    let ic = needs_ic.then(|| run_ic(&inst, &e.tolerances, &solver, &stream));
    let ic_ms = t_ic.elapsed().as_secs_f64() * 1e3;
    let ic_solves = solver.solves();

    let ao_run = |init: AoInit<f64>| {
        let cfg = AoConfig { init, ..ao_cfg.clone() };
        let t = Instant::now();
        let out = run_ao(&inst, &cfg, &solver, &stream);
        (out, t.elapsed().as_secs_f64() * 1e3)
    };

    let mut out = Vec::with_capacity(e.methods.len());
    for &method in &e.methods {
        let rec = match method {
            Method::Ic => match ic.as_ref().expect("computed when requested") {
                Ok(sol) => RunRecord {
                    outer_iterations: 1,
                    sdp_solves: ic_solves,
                    wall_ms: ic_ms,
                    ..RunRecord::ok(method, value, trial, &sol.report)
                },
                Err(err) => RunRecord::failed(method, value, trial, status_of(err), ic_ms),
            },
            Method::Ao | Method::IcAo => {
                let (init, extra_ms, extra_solves) = if method == Method::Ao {
                    (AoInit::Random, 0.0, 0)
                } else {
                    match ic.as_ref().expect("computed when requested") {
                        Ok(sol) => (AoInit::Given(sol.phi.clone()), ic_ms, ic_solves),
                        Err(err) => {
                            out.push(RunRecord::failed(method, value, trial, status_of(err), ic_ms));
                            continue;
                        }
                    }
                };
                let (res, ms) = ao_run(init);
                match res.and_then(|(phi, _, trace)| {
                    let (report, _) = crate::sinr::evaluate(&inst, &phi, crate::sinr::CombinerChoice::Lmmse)?;
                    Ok((report, trace))
                }) {
                    Ok((report, trace)) => RunRecord {
                        outer_iterations: trace.iterations,
                        sdp_solves: trace.sdp_solves + extra_solves,
                        wall_ms: ms + extra_ms,
                        ..RunRecord::ok(method, value, trial, &report)
                    },
                    Err(err) => RunRecord::failed(method, value, trial, status_of(&err), ms + extra_ms),
                }
            }
        };
        out.push(rec);
    }
    out
}

/// Runs all `(sweep value, trial)` cells in parallel and returns the records
/// sorted by sweep value, trial and method.
pub fn run_experiment(e: &Experiment) -> Result<Vec<RunRecord>> {
    e.validate()?;
    let values = e.sweep.values();
    let cells: Vec<(f64, usize)> = values.iter().flat_map(|&v| (0..e.trials).map(move |t| (v, t))).collect();
    let mut records: Vec<RunRecord> = cells.into_par_iter().flat_map_iter(|(v, t)| run_cell(e, v, t)).collect();
    sort_records(&mut records);
    Ok(records)
}

pub fn sort_records(records: &mut [RunRecord]) {
    records.sort_by(|a, b| {
        a.sweep_value
            .total_cmp(&b.sweep_value)
            .then(a.trial.cmp(&b.trial))
            .then(a.method.cmp(&b.method))
    });
}

/// Per `(method, sweep value)` statistics over the ok records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub sweep_value: f64,
    /// Ok records in the group.
    pub count: usize,
    /// Records with a non-ok status.
    pub failed: usize,
    /// `10 log10` of the mean linear min-SINR.
    pub mean_min_sinr_db: f64,
    pub median_min_sinr_db: f64,
    pub mean_outer_iterations: f64,
    pub mean_sdp_solves: f64,
}

/// Groups records by method and sweep value. Groups without any ok record
/// are omitted.
pub fn summarize(records: &[RunRecord]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(Method, u64), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.method, r.sweep_value.to_bits())).or_default().push(r);
    }
    let mut rows: Vec<SummaryRow> = groups
        .into_iter()
        .filter_map(|((method, bits), recs)| {
            let ok: Vec<&RunRecord> = recs.iter().copied().filter(|r| r.is_ok()).collect();
            if ok.is_empty() {
                return None;
            }
            let n = ok.len() as f64;
            let mut db: Vec<f64> = ok.iter().filter_map(|r| r.min_sinr_db).collect();
            db.sort_by(f64::total_cmp);
            let median = if db.len() % 2 == 1 {
                db[db.len() / 2]
            } else {
                0.5 * (db[db.len() / 2 - 1] + db[db.len() / 2])
            };
            Some(SummaryRow {
                method,
                sweep_value: f64::from_bits(bits),
                count: ok.len(),
                failed: recs.len() - ok.len(),
                mean_min_sinr_db: to_db(db.iter().map(|&d| from_db(d)).sum::<f64>() / n),
                median_min_sinr_db: median,
                mean_outer_iterations: ok.iter().map(|r| r.outer_iterations as f64).sum::<f64>() / n,
                mean_sdp_solves: ok.iter().map(|r| r.sdp_solves as f64).sum::<f64>() / n,
            })
        })
        .collect();
    rows.sort_by(|a, b| a.sweep_value.total_cmp(&b.sweep_value).then(a.method.cmp(&b.method)));
    rows
}

/// Columns of the CSV record format.
pub const CSV_COLUMNS: [&str; 8] = [
    "method",
    "sweep_value",
    "trial",
    "min_sinr_db",
    "outer_iterations",
    "sdp_solves",
    "wall_ms",
    "status",
];

#[derive(Serialize, Deserialize)]
struct CsvRow {
    method: Method,
    sweep_value: f64,
    trial: usize,
    min_sinr_db: Option<f64>,
    outer_iterations: usize,
    sdp_solves: usize,
    wall_ms: f64,
    status: RecordStatus,
}

/// Writes the fixed-column CSV. Per-link SINRs are only kept in JSON.
pub fn write_csv<W: Write>(records: &[RunRecord], w: W) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(CSV_COLUMNS)?;
    for r in records {
        out.serialize(CsvRow {
            method: r.method,
            sweep_value: r.sweep_value,
            trial: r.trial,
            min_sinr_db: r.min_sinr_db,
            outer_iterations: r.outer_iterations,
            sdp_solves: r.sdp_solves,
            wall_ms: r.wall_ms,
            status: r.status,
        })?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(r: R) -> Result<Vec<RunRecord>> {
    let mut rd = csv::Reader::from_reader(r);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_owned).collect();
    if header != CSV_COLUMNS {
        return Err(Error::InvalidConfig(format!("unexpected CSV header {header:?}")));
    }
    rd.deserialize::<CsvRow>()
        .map(|row| {
            let row = row?;
            Ok(RunRecord {
                method: row.method,
                sweep_value: row.sweep_value,
                trial: row.trial,
                min_sinr_db: row.min_sinr_db,
                per_link_sinrs_db: Vec::new(),
                outer_iterations: row.outer_iterations,
                sdp_solves: row.sdp_solves,
                wall_ms: row.wall_ms,
                status: row.status,
            })
        })
        .collect()
}

pub fn write_json<W: Write>(records: &[RunRecord], w: W) -> Result<()> {
    serde_json::to_writer_pretty(w, records)?;
    Ok(())
}

pub fn read_json<R: Read>(r: R) -> Result<Vec<RunRecord>> {
    Ok(serde_json::from_reader(r)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::InvalidConfig(format!("unknown format {other:?}"))),
        }
    }
}

pub fn emit<W: Write>(records: &[RunRecord], format: Format, w: W) -> Result<()> {
    match format {
        Format::Csv => write_csv(records, w),
        Format::Json => write_json(records, w),
    }
}

/// Reads records, guessing the format from the first non-blank byte.
pub fn load_records<R: Read>(mut r: R) -> Result<Vec<RunRecord>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    match buf.iter().find(|b| !b.is_ascii_whitespace()) {
        Some(b'[') => read_json(buf.as_slice()),
        _ => read_csv(buf.as_slice()),
    }
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    if rows.is_empty() {
        out.write_record([
            "method",
            "sweep_value",
            "count",
            "failed",
            "mean_min_sinr_db",
            "median_min_sinr_db",
            "mean_outer_iterations",
            "mean_sdp_solves",
        ])?;
    }
    out.flush()?;
    Ok(())
}
