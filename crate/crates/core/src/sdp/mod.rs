//! Small dense Hermitian semidefinite programs.
//!
//! ```text
//! maximize   tr(C X) + c_xi xi
//! subject to tr(A_j X) + a_j xi  (<= | = | >=)  b_j
//!            X Hermitian PSD, xi free
//! ```
//!
//! Solved by a primal-dual interior-point method (see `ipm`). Rows are
//! scaled to unit norm before solving and the solution is reported in the
//! original units.
//!
//! # Debug dump format
//!
//! [`SdpProblem::write_dump`] emits a line-oriented text file:
//!
//! ```text
//! risd2d-sdp 1
//! dim <n> constraints <m>
//! objective xi <c_xi>
//! matrix dense <nnz>            (or: matrix none)
//! <i> <j> <re> <im>             (upper triangle, i <= j, 0-based)
//! constraint <sense> <rhs> xi <a_j>
//! matrix dense <nnz> | matrix entry <index> <weight> | matrix zero
//! ...
//! ```
//!
//! `sense` is one of `le`, `eq`, `ge`. Numbers are printed in shortest
//! round-trip form, so [`SdpProblem::read_dump`] restores the problem exactly.

mod ipm;

use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lift::{hermitian_part, trace_product};
use crate::scalar::{cx, re, Cx, Real};
use ipm::{ConicData, Outcome};

/// Coefficient matrix of a constraint.
#[derive(Clone, Debug, PartialEq)]
pub enum SymMatrix<T: Real> {
    Dense(DMatrix<Cx<T>>),
    /// `weight * e_i e_i^T`: picks a single diagonal entry.
    Entry { index: usize, weight: T },
    Zero,
}

impl<T: Real> SymMatrix<T> {
    /// `Re tr(A X)`.
    pub fn inner(&self, x: &DMatrix<Cx<T>>) -> T {
        match self {
            SymMatrix::Dense(a) => trace_product(a, x),
            SymMatrix::Entry { index, weight } => *weight * x[(*index, *index)].re,
            SymMatrix::Zero => T::zero(),
        }
    }

    pub fn add_scaled_to(&self, acc: &mut DMatrix<Cx<T>>, s: T) {
        match self {
            SymMatrix::Dense(a) => *acc += a * re(s),
            SymMatrix::Entry { index, weight } => acc[(*index, *index)] += re(*weight * s),
            SymMatrix::Zero => {}
        }
    }

    pub fn norm(&self) -> T {
        match self {
            SymMatrix::Dense(a) => a.norm(),
            SymMatrix::Entry { weight, .. } => weight.abs(),
            SymMatrix::Zero => T::zero(),
        }
    }

    fn scaled(&self, s: T) -> Self {
        match self {
            SymMatrix::Dense(a) => SymMatrix::Dense(a * re(s)),
            SymMatrix::Entry { index, weight } => SymMatrix::Entry { index: *index, weight: *weight * s },
            SymMatrix::Zero => SymMatrix::Zero,
        }
    }

    pub fn to_dense(&self, n: usize) -> DMatrix<Cx<T>> {
        let mut out = DMatrix::zeros(n, n);
        self.add_scaled_to(&mut out, T::one());
        out
    }

    fn check(&self, n: usize) -> Result<()> {
        match self {
            SymMatrix::Dense(a) => {
                if a.nrows() != n || a.ncols() != n {
                    return Err(Error::MalformedSdp(format!("matrix is {}x{}, expected {n}x{n}", a.nrows(), a.ncols())));
                }
                let skew = (a - a.adjoint()).norm().to_f64().unwrap_or(f64::INFINITY);
                let scale = 1.0 + a.norm().to_f64().unwrap_or(0.0);
                let tol = if T::is_double() { 1e-12 } else { 1e-5 };
                if !(skew <= tol * scale) {
                    return Err(Error::MalformedSdp(format!("matrix not Hermitian (skew norm {skew:e})")));
                }
            }
            SymMatrix::Entry { index, weight } => {
                if *index >= n || !weight.is_finite() {
                    return Err(Error::MalformedSdp(format!("entry {index} out of range or weight not finite")));
                }
            }
            SymMatrix::Zero => {}
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

impl Sense {
    fn tag(self) -> &'static str {
        match self {
            Sense::Le => "le",
            Sense::Eq => "eq",
            Sense::Ge => "ge",
        }
    }
}

/// `tr(A X) + xi_coeff * xi  sense  rhs`.
#[derive(Clone, Debug, PartialEq)]
pub struct Constraint<T: Real> {
    pub matrix: SymMatrix<T>,
    pub xi_coeff: T,
    pub sense: Sense,
    pub rhs: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SdpProblem<T: Real> {
    pub dim: usize,
    /// `C` in `maximize tr(C X)`; `None` means zero.
    pub objective: Option<DMatrix<Cx<T>>>,
    pub xi_objective: T,
    /// Whether the scalar `xi` is part of the problem.
    pub has_xi: bool,
    pub constraints: Vec<Constraint<T>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SdpStatus {
    Optimal,
    Infeasible,
    /// The objective is unbounded above on a nonempty feasible set.
    Unbounded,
    MaxIters,
    NumericalTrouble,
}

#[derive(Clone, Debug)]
pub struct SdpSolution<T: Real> {
    pub x: DMatrix<Cx<T>>,
    pub xi: T,
    pub status: SdpStatus,
    /// Largest constraint violation, each constraint scaled to unit norm.
    pub primal_residual: T,
    /// Relative dual residual of the scaled problem.
    pub dual_residual: T,
    /// Relative duality gap of the scaled problem.
    pub gap: T,
    pub objective: T,
    /// Upper bound on the optimum from the dual iterate (meaningful when
    /// the dual residual is small).
    pub dual_bound: T,
    pub iterations: usize,
}

impl<T: Real> SdpSolution<T> {
    /// Optimal, or stopped early with residuals small enough to use.
    pub fn is_usable(&self) -> bool {
        match self.status {
            SdpStatus::Optimal => true,
            SdpStatus::MaxIters | SdpStatus::NumericalTrouble => {
                let tol = if T::is_double() { 1e-5 } else { 1e-3 };
                self.primal_residual.as_f64() <= tol
                    && self.dual_residual.as_f64() <= tol
                    && self.gap.as_f64() <= tol
            }
            _ => false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdpSettings {
    pub tol_feas: f64,
    pub tol_gap: f64,
    pub max_iters: usize,
}

impl Default for SdpSettings {
    fn default() -> Self {
        SdpSettings {
            tol_feas: 1e-7,
            tol_gap: 1e-8,
            max_iters: 100,
        }
    }
}

impl SdpSettings {
    /// Tolerances no tighter than the scalar type can deliver.
    fn effective<T: Real>(&self) -> (T, T) {
        let floor = if T::is_double() { 1e-13 } else { 2e-5 };
        (T::lit(self.tol_feas.max(floor)), T::lit(self.tol_gap.max(floor)))
    }
}

#[derive(Clone, Debug)]
pub enum Feasibility<T: Real> {
    Feasible(DMatrix<Cx<T>>),
    Infeasible,
    /// Neither feasibility nor a certificate could be established.
    Undetermined,
}

/// Solver handle that counts invocations.
#[derive(Debug, Default)]
pub struct SdpSolver {
    pub settings: SdpSettings,
    solves: AtomicUsize,
}

impl SdpSolver {
    pub fn new(settings: SdpSettings) -> Self {
        SdpSolver {
            settings,
            solves: AtomicUsize::new(0),
        }
    }

    pub fn solve<T: Real>(&self, p: &SdpProblem<T>) -> Result<SdpSolution<T>> {
        self.solves.fetch_add(1, Ordering::Relaxed);
        solve(p, &self.settings)
    }

    pub fn solves(&self) -> usize {
        self.solves.load(Ordering::Relaxed)
    }
}

impl<T: Real> SdpProblem<T> {
    pub fn new(dim: usize) -> Self {
        SdpProblem {
            dim,
            objective: None,
            xi_objective: T::zero(),
            has_xi: false,
            constraints: Vec::new(),
        }
    }

    pub fn push(&mut self, matrix: SymMatrix<T>, xi_coeff: T, sense: Sense, rhs: T) {
        if xi_coeff != T::zero() {
            self.has_xi = true;
        }
        self.constraints.push(Constraint {
            matrix,
            xi_coeff,
            sense,
            rhs,
        });
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::MalformedSdp("dimension must be at least 1".into()));
        }
        if let Some(c) = &self.objective {
            SymMatrix::Dense(c.clone()).check(self.dim)?;
        }
        for c in &self.constraints {
            c.matrix.check(self.dim)?;
            if !c.rhs.is_finite() || !c.xi_coeff.is_finite() {
                return Err(Error::MalformedSdp("non-finite constraint data".into()));
            }
            if !self.has_xi && c.xi_coeff != T::zero() {
                return Err(Error::MalformedSdp("xi coefficient given but xi disabled".into()));
            }
        }
        Ok(())
    }

    /// Objective value at `(X, xi)`.
    pub fn objective_value(&self, x: &DMatrix<Cx<T>>, xi: T) -> T {
        let c = self.objective.as_ref().map_or(T::zero(), |c| trace_product(c, x));
        c + if self.has_xi { self.xi_objective * xi } else { T::zero() }
    }

    /// Largest absolute violation over all constraints.
    pub fn max_violation(&self, x: &DMatrix<Cx<T>>, xi: T) -> T {
        self.constraints.iter().fold(T::zero(), |acc, c| {
            let lhs = c.matrix.inner(x) + c.xi_coeff * xi;
            let v = match c.sense {
                Sense::Le => (lhs - c.rhs).max(T::zero()),
                Sense::Ge => (c.rhs - lhs).max(T::zero()),
                Sense::Eq => (lhs - c.rhs).abs(),
            };
            acc.max(v)
        })
    }

    /// Largest violation with every constraint scaled to unit norm.
    pub fn max_scaled_violation(&self, x: &DMatrix<Cx<T>>, xi: T) -> T {
        self.constraints.iter().fold(T::zero(), |acc, c| {
            let lhs = c.matrix.inner(x) + c.xi_coeff * xi;
            let v = match c.sense {
                Sense::Le => (lhs - c.rhs).max(T::zero()),
                Sense::Ge => (c.rhs - lhs).max(T::zero()),
                Sense::Eq => (lhs - c.rhs).abs(),
            };
            let norm = (c.matrix.norm().powi(2) + c.xi_coeff.powi(2)).sqrt();
            acc.max(if norm > T::zero() { v / norm } else { v })
        })
    }

    pub fn write_dump(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "risd2d-sdp 1");
        let _ = writeln!(s, "dim {} constraints {}", self.dim, self.constraints.len());
        let _ = writeln!(s, "objective xi {:?}", if self.has_xi { self.xi_objective.as_f64() } else { f64::NAN });
        match &self.objective {
            Some(c) => dump_dense(&mut s, c),
            None => s.push_str("matrix none\n"),
        }
        for c in &self.constraints {
            let _ = writeln!(s, "constraint {} {:?} xi {:?}", c.sense.tag(), c.rhs.as_f64(), c.xi_coeff.as_f64());
            match &c.matrix {
                SymMatrix::Dense(a) => dump_dense(&mut s, a),
                SymMatrix::Entry { index, weight } => {
                    let _ = writeln!(s, "matrix entry {index} {:?}", weight.as_f64());
                }
                SymMatrix::Zero => s.push_str("matrix zero\n"),
            }
        }
        s
    }

    pub fn read_dump(text: &str) -> Result<Self> {
        let mut cur = DumpCursor {
            lines: text
                .lines()
                .enumerate()
                .map(|(i, l)| (i + 1, l.split_whitespace().collect::<Vec<_>>()))
                .filter(|(_, t)| !t.is_empty())
                .collect(),
            pos: 0,
        };
        let (l, h) = cur.next("header")?;
        if h != ["risd2d-sdp", "1"] {
            return Err(dump_err(l, "bad header"));
        }
        let (l, d) = cur.next("dim")?;
        if d.len() != 4 || d[0] != "dim" || d[2] != "constraints" {
            return Err(dump_err(l, "expected `dim <n> constraints <m>`"));
        }
        let n = dump_int(l, d[1])?;
        let m = dump_int(l, d[3])?;
        let (l, o) = cur.next("objective")?;
        if o.len() != 3 || o[0] != "objective" || o[1] != "xi" {
            return Err(dump_err(l, "expected `objective xi <c>`"));
        }
        let cxi = dump_num(l, o[2])?;
        let mut p = SdpProblem::new(n);
        p.has_xi = !cxi.is_nan();
        p.xi_objective = if p.has_xi { T::lit(cxi) } else { T::zero() };
        p.objective = match cur.matrix(n)? {
            Some(SymMatrix::Dense(c)) => Some(c),
            None => None,
            Some(_) => return Err(Error::MalformedSdp("objective must be dense or none".into())),
        };
        for _ in 0..m {
            let (l, c) = cur.next("constraint")?;
            if c.len() != 5 || c[0] != "constraint" || c[3] != "xi" {
                return Err(dump_err(l, "expected `constraint <sense> <rhs> xi <a>`"));
            }
            let sense = match c[1] {
                "le" => Sense::Le,
                "eq" => Sense::Eq,
                "ge" => Sense::Ge,
                _ => return Err(dump_err(l, "unknown sense")),
            };
            let rhs = T::lit(dump_num(l, c[2])?);
            let xi_coeff = T::lit(dump_num(l, c[4])?);
            let matrix = cur.matrix(n)?.ok_or_else(|| dump_err(l, "constraint matrix missing"))?;
            p.constraints.push(Constraint {
                matrix,
                xi_coeff,
                sense,
                rhs,
            });
        }
        p.validate()?;
        Ok(p)
    }
}

struct DumpCursor<'a> {
    lines: Vec<(usize, Vec<&'a str>)>,
    pos: usize,
}

fn dump_err(line: usize, msg: &str) -> Error {
    Error::MalformedSdp(format!("line {line}: {msg}"))
}

fn dump_num(line: usize, t: &str) -> Result<f64> {
    t.parse::<f64>().map_err(|_| dump_err(line, "bad number"))
}

fn dump_int(line: usize, t: &str) -> Result<usize> {
    t.parse::<usize>().map_err(|_| dump_err(line, "bad integer"))
}

impl<'a> DumpCursor<'a> {
    fn next(&mut self, what: &str) -> Result<(usize, Vec<&'a str>)> {
        let item = self
            .lines
            .get(self.pos)
            .cloned()
            .ok_or_else(|| Error::MalformedSdp(format!("unexpected end of dump, expected {what}")))?;
        self.pos += 1;
        Ok(item)
    }

    fn matrix<T: Real>(&mut self, n: usize) -> Result<Option<SymMatrix<T>>> {
        let (l, t) = self.next("matrix")?;
        match t.as_slice() {
            ["matrix", "none"] => Ok(None),
            ["matrix", "zero"] => Ok(Some(SymMatrix::Zero)),
            ["matrix", "entry", i, w] => Ok(Some(SymMatrix::Entry {
                index: dump_int(l, i)?,
                weight: T::lit(dump_num(l, w)?),
            })),
            ["matrix", "dense", k] => {
                let mut a = DMatrix::zeros(n, n);
                for _ in 0..dump_int(l, k)? {
                    let (l, e) = self.next("matrix entry")?;
                    if e.len() != 4 {
                        return Err(dump_err(l, "expected `<i> <j> <re> <im>`"));
                    }
                    let (i, j) = (dump_int(l, e[0])?, dump_int(l, e[1])?);
                    if i > j || j >= n {
                        return Err(dump_err(l, "entry outside upper triangle"));
                    }
                    let v = cx(T::lit(dump_num(l, e[2])?), T::lit(dump_num(l, e[3])?));
                    a[(i, j)] = v;
                    a[(j, i)] = v.conj();
                }
                Ok(Some(SymMatrix::Dense(a)))
            }
            _ => Err(dump_err(l, "bad matrix line")),
        }
    }
}

fn dump_dense<T: Real>(s: &mut String, a: &DMatrix<Cx<T>>) {
    let n = a.nrows();
    let entries: Vec<_> = (0..n)
        .flat_map(|i| (i..n).map(move |j| (i, j)))
        .filter(|&(i, j)| a[(i, j)] != Cx::new(T::zero(), T::zero()))
        .collect();
    let _ = writeln!(s, "matrix dense {}", entries.len());
    for (i, j) in entries {
        let v = a[(i, j)];
        let _ = writeln!(s, "{i} {j} {:?} {:?}", v.re.as_f64(), v.im.as_f64());
    }
}

/// Scaled conic form of a problem plus the bookkeeping to undo it.
struct Standardized<T: Real> {
    data: ConicData<T>,
    obj_scale: T,
    xi_scale: T,
}

enum Presolved<T: Real> {
    Ready(Standardized<T>),
    Inconsistent,
}

fn standardize<T: Real>(p: &SdpProblem<T>) -> Presolved<T> {
    let n = p.dim;
    let keep = match independent_equalities(p) {
        Some(k) => k,
        None => return Presolved::Inconsistent,
    };
    let kept: Vec<usize> = (0..p.constraints.len()).filter(|&j| keep[j]).collect();
    let m = kept.len();
    let nl = kept.iter().filter(|&&j| p.constraints[j].sense != Sense::Eq).count();
    let nu = usize::from(p.has_xi);

    let mut mats = Vec::with_capacity(m);
    let mut a_l = DMatrix::zeros(m, nl);
    let mut a_u = DMatrix::zeros(m, nu);
    let mut b = DVector::zeros(m);
    let mut slack = 0;
    for (r, &j) in kept.iter().enumerate() {
        let c = &p.constraints[j];
        let norm = (c.matrix.norm().powi(2) + c.xi_coeff.powi(2)).sqrt();
        let s = if norm > T::zero() { T::one() / norm } else { T::one() };
        mats.push(c.matrix.scaled(s));
        if nu == 1 {
            a_u[(r, 0)] = c.xi_coeff * s;
        }
        b[r] = c.rhs * s;
        match c.sense {
            Sense::Le => {
                a_l[(r, slack)] = T::one();
                slack += 1;
            }
            Sense::Ge => {
                a_l[(r, slack)] = -T::one();
                slack += 1;
            }
            Sense::Eq => {}
        }
    }
    // column scaling of xi so its coefficients are comparable to the rows
    let xi_scale = if nu == 1 {
        let cmax = a_u.iter().fold(T::zero(), |a, v: &T| a.max(v.abs()));
        if cmax > T::zero() { T::one() / cmax } else { T::one() }
    } else {
        T::one()
    };
    a_u *= xi_scale;
    let c_xi = if p.has_xi { p.xi_objective * xi_scale } else { T::zero() };
    let cnorm = (p.objective.as_ref().map_or(T::zero(), |c| c.norm_squared()) + c_xi * c_xi).sqrt();
    let obj_scale = if cnorm > T::zero() { T::one() / cnorm } else { T::one() };
    let c_s = p.objective.as_ref().map(|c| c * re(-obj_scale));
    let c_u = DVector::from_element(nu, -c_xi * obj_scale);
    Presolved::Ready(Standardized {
        data: ConicData {
            n,
            mats,
            a_l,
            a_u,
            b,
            c_s,
            c_l: DVector::zeros(nl),
            c_u,
        },
        obj_scale,
        xi_scale,
    })
}

/// Marks equality rows to keep. Linearly dependent rows are dropped when
/// consistent; `None` when they contradict each other.
fn independent_equalities<T: Real>(p: &SdpProblem<T>) -> Option<Vec<bool>> {
    let n = p.dim;
    let mut keep = vec![true; p.constraints.len()];
    let eq: Vec<usize> = (0..p.constraints.len()).filter(|&j| p.constraints[j].sense == Sense::Eq).collect();
    if eq.len() < 2 {
        return Some(keep);
    }
    let dense: Vec<DMatrix<Cx<T>>> = eq.iter().map(|&j| p.constraints[j].matrix.to_dense(n)).collect();
    let gram = |a: usize, b: usize| {
        trace_product(&dense[a], &dense[b]) + p.constraints[eq[a]].xi_coeff * p.constraints[eq[b]].xi_coeff
    };
    let tol = T::eps().sqrt() * T::lit(1e-2);
    let mut basis: Vec<usize> = Vec::new();
    for a in 0..eq.len() {
        let gaa = gram(a, a);
        let rhs_a = p.constraints[eq[a]].rhs;
        if basis.is_empty() {
            if gaa <= T::zero() {
                if rhs_a.abs() > tol {
                    return None;
                }
                keep[eq[a]] = false;
            } else {
                basis.push(a);
            }
            continue;
        }
        let k = basis.len();
        let g = DMatrix::from_fn(k, k, |i, j| gram(basis[i], basis[j]));
        let v = DVector::from_fn(k, |i, _| gram(basis[i], a));
        let coef = g.clone().cholesky().map(|c| c.solve(&v)).unwrap_or_else(|| DVector::zeros(k));
        let resid = gaa - v.dot(&coef);
        if resid <= tol * tol * gaa.max(T::one()) {
            let pred = basis.iter().zip(coef.iter()).fold(T::zero(), |s, (&i, c)| s + *c * p.constraints[eq[i]].rhs);
            if (pred - rhs_a).abs() > tol * (T::one() + rhs_a.abs()) {
                return None;
            }
            keep[eq[a]] = false;
        } else {
            basis.push(a);
        }
    }
    Some(keep)
}

fn infeasible_solution<T: Real>(p: &SdpProblem<T>, x: DMatrix<Cx<T>>, xi: T, iterations: usize) -> SdpSolution<T> {
    let primal_residual = p.max_scaled_violation(&x, xi);
    SdpSolution {
        objective: p.objective_value(&x, xi),
        x,
        xi,
        status: SdpStatus::Infeasible,
        primal_residual,
        dual_residual: T::zero(),
        gap: T::zero(),
        dual_bound: T::lit(f64::INFINITY),
        iterations,
    }
}

/// Solves `p` to the requested tolerances.
pub fn solve<T: Real>(p: &SdpProblem<T>, settings: &SdpSettings) -> Result<SdpSolution<T>> {
    p.validate()?;
    let (tol_feas, tol_gap) = settings.effective::<T>();
    let std = match standardize(p) {
        Presolved::Ready(s) => s,
        Presolved::Inconsistent => {
            return Ok(infeasible_solution(p, DMatrix::zeros(p.dim, p.dim), T::zero(), 0));
        }
    };
    let res = ipm::run(&std.data, tol_feas, tol_gap, settings.max_iters);
    let x = res.it.x.clone();
    let xi = if p.has_xi { res.it.u[0] * std.xi_scale } else { T::zero() };
    let status = match res.outcome {
        Outcome::Optimal => SdpStatus::Optimal,
        Outcome::PrimalInfeasible => SdpStatus::Infeasible,
        Outcome::DualInfeasible => SdpStatus::Unbounded,
        Outcome::MaxIters | Outcome::Stalled if res.pinf <= T::lit(1e3) * tol_feas => {
            if res.outcome == Outcome::MaxIters {
                SdpStatus::MaxIters
            } else {
                SdpStatus::NumericalTrouble
            }
        }
        Outcome::MaxIters | Outcome::Stalled => {
            match phase_one(&std, tol_feas, tol_gap, settings.max_iters) {
                Feasibility::Infeasible => SdpStatus::Infeasible,
                _ if res.outcome == Outcome::MaxIters => SdpStatus::MaxIters,
                _ => SdpStatus::NumericalTrouble,
            }
        }
    };
    Ok(SdpSolution {
        primal_residual: p.max_scaled_violation(&x, xi),
        objective: p.objective_value(&x, xi),
        dual_bound: -res.dobj / std.obj_scale,
        x,
        xi,
        status,
        dual_residual: res.dinf,
        gap: res.gap,
        iterations: res.iters,
    })
}

/// Minimizes `tau` over `A(X) + A_l x + A_u u + tau r0 = b`, where `r0` is
/// the residual of the identity start. The problem is always feasible and
/// bounded, so its optimum separates feasible from infeasible inputs.
fn phase_one<T: Real>(std: &Standardized<T>, tol_feas: T, tol_gap: T, max_iters: usize) -> Feasibility<T> {
    let d = &std.data;
    let n = d.n;
    let m = d.m();
    let nl = d.a_l.ncols();
    let ident = DMatrix::<Cx<T>>::identity(n, n);
    let r0 = DVector::from_fn(m, |j, _| d.b[j] - d.mats[j].inner(&ident)) - &d.a_l * DVector::from_element(nl, T::one());
    let r0_norm = r0.iter().fold(T::zero(), |a, v| a.max(v.abs()));
    let b_norm = d.b.iter().fold(T::zero(), |a, v| a.max(v.abs()));
    if r0_norm <= tol_feas * (T::one() + b_norm) {
        return Feasibility::Feasible(ident);
    }
    let mut a_l = DMatrix::zeros(m, nl + 1);
    a_l.columns_mut(0, nl).copy_from(&d.a_l);
    a_l.set_column(nl, &(&r0 / r0_norm));
    let mut c_l = DVector::zeros(nl + 1);
    c_l[nl] = T::one();
    let aux = ConicData {
        n,
        mats: d.mats.clone(),
        a_l,
        a_u: d.a_u.clone(),
        b: d.b.clone(),
        c_s: None,
        c_l,
        c_u: DVector::zeros(d.a_u.ncols()),
    };
    let res = ipm::run(&aux, tol_feas, tol_gap, max_iters.max(50));
    let scale = T::one() + b_norm;
    match res.outcome {
        Outcome::Optimal | Outcome::MaxIters | Outcome::Stalled => {
            let tau = res.it.xl[nl];
            if res.pinf <= tol_feas * T::lit(10.0) && tau <= tol_feas * scale {
                Feasibility::Feasible(res.it.x)
            } else if res.dobj > T::lit(1e3) * tol_feas * scale && res.dinf <= T::lit(1e-6).max(tol_feas) {
                Feasibility::Infeasible
            } else {
                Feasibility::Undetermined
            }
        }
        Outcome::PrimalInfeasible => Feasibility::Infeasible,
        Outcome::DualInfeasible => Feasibility::Undetermined,
    }
}

/// Finds a feasible `X` (objective ignored).
pub fn feasibility<T: Real>(p: &SdpProblem<T>, settings: &SdpSettings) -> Result<Feasibility<T>> {
    let mut q = p.clone();
    q.objective = None;
    q.xi_objective = T::zero();
    let sol = solve(&q, settings)?;
    let (tol_feas, _) = settings.effective::<T>();
    let scale = q
        .constraints
        .iter()
        .fold(T::one(), |a, c| a.max(c.rhs.abs()).max(c.matrix.norm()).max(c.xi_coeff.abs()));
    Ok(match sol.status {
        SdpStatus::Infeasible => Feasibility::Infeasible,
        _ if sol.primal_residual <= tol_feas * scale => Feasibility::Feasible(hermitian_part(&sol.x)),
        _ => Feasibility::Undetermined,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomStream;
    use crate::testutil::cn_matrix;

    fn random_hermitian(n: usize, rng: &mut RandomStream) -> DMatrix<Cx<f64>> {
        let a = cn_matrix(n, n, rng);
        hermitian_part(&a)
    }

    fn lambda_max_problem(c: &DMatrix<Cx<f64>>) -> SdpProblem<f64> {
        let n = c.nrows();
        let mut p = SdpProblem::new(n);
        p.objective = Some(c.clone());
        p.push(SymMatrix::Dense(DMatrix::identity(n, n)), 0.0, Sense::Eq, 1.0);
        p
    }

    #[test]
    fn lambda_max_matches_eigensolver() {
        let mut rng = RandomStream::new(5);
        for n in [1, 2, 4, 8, 16] {
            let c = random_hermitian(n, &mut rng);
            let sol = solve(&lambda_max_problem(&c), &SdpSettings::default()).unwrap();
            assert_eq!(sol.status, SdpStatus::Optimal);
            let lmax = c.symmetric_eigenvalues().max();
            assert!((sol.objective - lmax).abs() <= 1e-6 * lmax.abs().max(1.0), "n={n}: {} vs {lmax}", sol.objective);
            // the optimizer is the top eigenvector outer product
            let eig = nalgebra::SymmetricEigen::new(c.clone());
            let top = eig.eigenvalues.imax();
            let u = eig.eigenvectors.column(top).into_owned();
            let x_star = &u * u.adjoint();
            assert!((&sol.x - x_star).norm() < 1e-3, "n={n}");
        }
    }

    #[test]
    fn scalar_lp() {
        let mut p = SdpProblem::new(1);
        p.objective = Some(DMatrix::from_element(1, 1, cx(1.0, 0.0)));
        p.push(SymMatrix::Entry { index: 0, weight: 1.0 }, 0.0, Sense::Le, 5.0);
        p.push(SymMatrix::Entry { index: 0, weight: 1.0 }, 0.0, Sense::Ge, 0.0);
        let sol = solve(&p, &SdpSettings::default()).unwrap();
        assert_eq!(sol.status, SdpStatus::Optimal);
        assert!((sol.x[(0, 0)].re - 5.0f64).abs() < 1e-6);
    }

    #[test]
    fn free_scalar_variable() {
        // max xi s.t. xi <= X_00, xi <= X_11, tr X = 1  ->  xi = 1/2
        let mut p = SdpProblem::new(2);
        p.xi_objective = 1.0;
        p.push(SymMatrix::Entry { index: 0, weight: 1.0 }, -1.0, Sense::Ge, 0.0);
        p.push(SymMatrix::Entry { index: 1, weight: 1.0 }, -1.0, Sense::Ge, 0.0);
        p.push(SymMatrix::Dense(DMatrix::identity(2, 2)), 0.0, Sense::Eq, 1.0);
        let sol = solve(&p, &SdpSettings::default()).unwrap();
        assert_eq!(sol.status, SdpStatus::Optimal);
        assert!((sol.xi - 0.5f64).abs() < 1e-6);
        assert!(sol.dual_bound >= sol.objective - 1e-7);
    }

    #[test]
    fn diagonal_exceeding_trace_is_infeasible() {
        let mut p = SdpProblem::new(3);
        p.push(SymMatrix::Dense(DMatrix::identity(3, 3)), 0.0, Sense::Eq, 1.0);
        p.push(SymMatrix::Entry { index: 0, weight: 1.0 }, 0.0, Sense::Ge, 2.0);
        let sol = solve(&p, &SdpSettings::default()).unwrap();
        assert_eq!(sol.status, SdpStatus::Infeasible);
        assert!(matches!(feasibility(&p, &SdpSettings::default()).unwrap(), Feasibility::Infeasible));
    }

    #[test]
    fn contradictory_equalities() {
        let mut p = SdpProblem::new(2);
        p.push(SymMatrix::Dense(DMatrix::identity(2, 2)), 0.0, Sense::Eq, 1.0);
        p.push(SymMatrix::Dense(DMatrix::identity(2, 2)), 0.0, Sense::Eq, 2.0);
        assert!(matches!(feasibility(&p, &SdpSettings::default()).unwrap(), Feasibility::Infeasible));
    }

    #[test]
    fn duplicate_equalities_are_dropped() {
        let mut p = SdpProblem::new(2);
        p.push(SymMatrix::Dense(DMatrix::identity(2, 2)), 0.0, Sense::Eq, 1.0);
        p.push(SymMatrix::Dense(DMatrix::identity(2, 2) * cx(2.0, 0.0)), 0.0, Sense::Eq, 2.0);
        assert!(matches!(feasibility(&p, &SdpSettings::default()).unwrap(), Feasibility::Feasible(_)));
    }

    #[test]
    fn trace_only_gives_scaled_identity() {
        let n = 4;
        let mut p = SdpProblem::new(n);
        p.push(SymMatrix::Dense(DMatrix::identity(n, n)), 0.0, Sense::Eq, 1.0);
        let Feasibility::Feasible(x) = feasibility(&p, &SdpSettings::default()).unwrap() else {
            panic!("expected feasible")
        };
        let target = DMatrix::<Cx<f64>>::identity(n, n) * cx(0.25, 0.0);
        assert!((x - target).norm() < 1e-6);
    }

    #[test]
    fn construct_then_solve() {
        let mut rng = RandomStream::new(11);
        for _ in 0..10 {
            let n = 6;
            let g = cn_matrix(n, 3, &mut rng);
            let x0 = &g * g.adjoint();
            let mut p = SdpProblem::new(n);
            for k in 0..5 {
                let a = random_hermitian(n, &mut rng);
                let v = trace_product(&a, &x0);
                let sense = [Sense::Eq, Sense::Le, Sense::Ge][k % 3];
                p.push(SymMatrix::Dense(a), 0.0, sense, v);
            }
            let Feasibility::Feasible(x) = feasibility(&p, &SdpSettings::default()).unwrap() else {
                panic!("expected feasible")
            };
            assert!(p.max_violation(&x, 0.0) <= 1e-6);
            assert!(x.symmetric_eigenvalues().min() >= -1e-8 * x.norm());
        }
    }

    #[test]
    fn deterministic() {
        let mut rng = RandomStream::new(3);
        let c = random_hermitian(8, &mut rng);
        let p = lambda_max_problem(&c);
        let a = solve(&p, &SdpSettings::default()).unwrap();
        let b = solve(&p, &SdpSettings::default()).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.iterations, b.iterations);
    }

    #[test]
    fn unbounded_objective() {
        let mut p = SdpProblem::new(2);
        p.objective = Some(DMatrix::identity(2, 2));
        p.push(SymMatrix::Entry { index: 0, weight: 1.0 }, 0.0, Sense::Ge, 1.0);
        let sol = solve(&p, &SdpSettings::default()).unwrap();
        assert_eq!(sol.status, SdpStatus::Unbounded);
    }

    #[test]
    fn dump_round_trip() {
        let mut rng = RandomStream::new(9);
        let mut p = SdpProblem::new(3);
        p.objective = Some(random_hermitian(3, &mut rng));
        p.xi_objective = 0.5;
        p.push(SymMatrix::Dense(random_hermitian(3, &mut rng)), -1.0, Sense::Ge, 0.25);
        p.push(SymMatrix::Entry { index: 2, weight: 1.0 }, 0.0, Sense::Eq, 1.0);
        p.push(SymMatrix::Zero, 1.0, Sense::Le, 3.0);
        let back = SdpProblem::<f64>::read_dump(&p.write_dump()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn solver_counts_invocations() {
        let s = SdpSolver::new(SdpSettings::default());
        let mut rng = RandomStream::new(1);
        let p = lambda_max_problem(&random_hermitian(3, &mut rng));
        s.solve(&p).unwrap();
        s.solve(&p).unwrap();
        assert_eq!(s.solves(), 2);
    }

    #[test]
    fn single_precision_lambda_max() {
        let mut rng = RandomStream::new(2);
        let c = random_hermitian(6, &mut rng);
        let lmax = c.symmetric_eigenvalues().max();
        let c32 = c.map(|v| Cx::new(v.re as f32, v.im as f32));
        let mut p = SdpProblem::<f32>::new(6);
        p.objective = Some(c32);
        p.push(SymMatrix::Dense(DMatrix::identity(6, 6)), 0.0, Sense::Eq, 1.0);
        let sol = solve(&p, &SdpSettings::default()).unwrap();
        assert!(sol.is_usable());
        assert!(((sol.objective as f64) - lmax).abs() < 1e-3 * lmax.abs().max(1.0));
    }
}
