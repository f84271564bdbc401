//! Alternating optimization of the combiner and the RIS coefficients.
//!
//! Each outer iteration recomputes the LMMSE combiner and then solves the
//! semidefinite relaxation of the max-min SINR problem over the lifted
//! phase matrix. The multi-ratio objective is handled by a generalized
//! Dinkelbach loop; a rank-one point is recovered by Gaussian
//! randomization.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::channels::{Instance, PhaseShift};
use crate::error::{Error, Result};
use crate::lift::{build_device_lifts, build_user_lifts, hermitian_part, link_fractions, LinkFraction};
use crate::rng::{purpose, RandomStream};
use crate::scalar::{abs, cx, polar, Cx, Real};
use crate::sdp::{SdpProblem, SdpSettings, SdpSolver, Sense, SymMatrix};
use crate::sinr::{evaluate, lmmse_combiner, min_sinr_lmmse, Combiner, CombinerChoice};

/// Starting point of the outer loop.
#[derive(Clone, Debug, PartialEq)]
pub enum AoInit<T: Real> {
    /// Unit-modulus coefficients with uniform random phases.
    Random,
    /// RIS switched off.
    Zero,
    Given(PhaseShift<T>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct AoConfig<T: Real> {
    pub max_outer_iters: usize,
    /// Stop once the relative min-SINR improvement drops below this.
    pub outer_tol: f64,
    pub dinkelbach_tol: f64,
    pub dinkelbach_max_iters: usize,
    pub num_randomizations: usize,
    pub init: AoInit<T>,
    pub sdp: SdpSettings,
}

impl<T: Real> Default for AoConfig<T> {
    fn default() -> Self {
        AoConfig {
            max_outer_iters: 30,
            outer_tol: 1e-3,
            dinkelbach_tol: 1e-6,
            dinkelbach_max_iters: 20,
            num_randomizations: 50,
            init: AoInit::Random,
            sdp: SdpSettings::default(),
        }
    }
}

impl<T: Real> AoConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.max_outer_iters == 0 || self.dinkelbach_max_iters == 0 || self.num_randomizations == 0 {
            return Err(Error::InvalidConfig("AO iteration and randomization counts must be >= 1".into()));
        }
        if !(self.outer_tol > 0.0 && self.dinkelbach_tol > 0.0) {
            return Err(Error::InvalidConfig("AO tolerances must be positive".into()));
        }
        Ok(())
    }
}

/// Per-iteration record of one AO run.
#[derive(Clone, Debug, Serialize)]
pub struct AoTrace<T: Real> {
    /// Min-SINR (linear) of the initial point under its LMMSE combiner.
    pub initial_min_sinr: f64,
    /// Incumbent min-SINR (linear) after each outer iteration.
    pub min_sinr: Vec<f64>,
    /// Incumbent coefficients after each outer iteration.
    pub phi: Vec<PhaseShift<T>>,
    /// Upper bound on the relaxed optimum of each phase step.
    pub sdr_upper: Vec<f64>,
    /// Whether the randomized candidate replaced the incumbent.
    pub accepted: Vec<bool>,
    pub dinkelbach_iters: Vec<usize>,
    pub iterations: usize,
    pub sdp_solves: usize,
    pub converged: bool,
    pub combiner_ms: f64,
    pub sdp_ms: f64,
    pub randomize_ms: f64,
}

impl<T: Real> AoTrace<T> {
    fn new(initial: T) -> Self {
        AoTrace {
            initial_min_sinr: initial.as_f64(),
            min_sinr: Vec::new(),
            phi: Vec::new(),
            sdr_upper: Vec::new(),
            accepted: Vec::new(),
            dinkelbach_iters: Vec::new(),
            iterations: 0,
            sdp_solves: 0,
            converged: false,
            combiner_ms: 0.0,
            sdp_ms: 0.0,
            randomize_ms: 0.0,
        }
    }

    pub fn final_min_sinr(&self) -> f64 {
        self.min_sinr.last().copied().unwrap_or(self.initial_min_sinr)
    }
}

#[derive(Clone, Debug)]
pub struct DinkelbachResult<T: Real> {
    /// Best ratio found: `min_i N_i / D_i` at `phi_lift`.
    pub lambda: T,
    /// Upper bound on the relaxed max-min ratio.
    pub upper: T,
    pub phi_lift: DMatrix<Cx<T>>,
    /// `lambda` before each parametric solve.
    pub lambdas: Vec<T>,
    /// Optimal value of each parametric subproblem.
    pub parametric: Vec<T>,
    pub solves: usize,
    pub converged: bool,
}

fn min_ratio<T: Real>(fracs: &[LinkFraction<T>], x: &DMatrix<Cx<T>>) -> T {
    fracs.iter().map(|f| f.ratio(x)).fold(T::lit(f64::INFINITY), |a, r| a.min(r))
}

/// Solves `max t  s.t.  tr(Phi (N_i - lambda D_i)) >= t s_i` over the
/// feasible set of lifted phase matrices.
pub fn solve_parametric<T: Real>(
    fracs: &[LinkFraction<T>],
    lambda: T,
    scales: &[T],
    solver: &SdpSolver,
) -> Result<crate::sdp::SdpSolution<T>> {
    let n1 = fracs[0].num.nrows();
    let mut p = SdpProblem::new(n1);
    p.has_xi = true;
    p.xi_objective = T::one();
    for (f, &s) in fracs.iter().zip(scales) {
        let a = hermitian_part(&(&f.num - &f.den * cx(lambda, T::zero())));
        p.push(SymMatrix::Dense(a), -s, Sense::Ge, T::zero());
    }
    for n in 0..n1 - 1 {
        p.push(SymMatrix::Entry { index: n, weight: T::one() }, T::zero(), Sense::Le, T::one());
    }
    p.push(SymMatrix::Entry { index: n1 - 1, weight: T::one() }, T::zero(), Sense::Eq, T::one());
    let sol = solver.solve(&p)?;
    if !sol.is_usable() {
        return Err(Error::Solver {
            context: format!(
                "parametric subproblem at lambda = {:e} (residuals {:.1e}/{:.1e}, gap {:.1e})",
                lambda.as_f64(),
                sol.primal_residual.as_f64(),
                sol.dual_residual.as_f64(),
                sol.gap.as_f64()
            ),
            status: sol.status,
        });
    }
    Ok(sol)
}

/// Generalized Dinkelbach iteration for `max min_i tr(Phi N_i) / tr(Phi D_i)`
/// over `{Phi PSD, Phi_nn <= 1, Phi_last = 1}`, started from `start`.
///
/// Every `D_i` must dominate the corner selector, so `tr(Phi D_i) >= 1`.
pub fn dinkelbach_maxmin<T: Real>(
    fracs: &[LinkFraction<T>],
    start: &DMatrix<Cx<T>>,
    solver: &SdpSolver,
    tol: f64,
    max_iters: usize,
) -> Result<DinkelbachResult<T>> {
    let mut x = start.clone();
    let mut lambda = min_ratio(fracs, &x).max(T::zero());
    let mut out = DinkelbachResult {
        lambda,
        upper: T::lit(f64::INFINITY),
        phi_lift: x.clone(),
        lambdas: Vec::new(),
        parametric: Vec::new(),
        solves: 0,
        converged: false,
    };
    if fracs.is_empty() {
        out.converged = true;
        return Ok(out);
    }
    let tol = T::lit(tol);
    let floor = T::lit(10.0 * solver.settings.tol_gap);
    for _ in 0..max_iters {
        // rescaling by the current denominators gives superlinear convergence
        let scales: Vec<T> = fracs.iter().map(|f| f.denominator(&x).max(T::eps())).collect();
        let s_max = scales.iter().fold(T::zero(), |a, s| a.max(*s));
        let sol = solve_parametric(fracs, lambda, &scales, solver)?;
        out.solves += 1;
        out.lambdas.push(lambda);
        out.parametric.push(sol.xi);
        let f_ub = if sol.dual_bound.is_finite() { sol.dual_bound.max(sol.xi) } else { sol.xi };
        out.upper = out.upper.min(lambda + f_ub.max(T::zero()) * s_max);

        let cand = hermitian_part(&sol.x);
        let next = min_ratio(fracs, &cand);
        let gain = next - lambda;
        if gain > T::zero() {
            x = cand;
            lambda = next;
            out.lambda = lambda;
            out.phi_lift = x.clone();
        }
        let slack = tol * lambda.abs() + floor * (T::one() + lambda.abs());
        if out.upper - lambda <= slack || gain <= tol * lambda.abs() {
            out.converged = out.upper - lambda <= slack || gain > T::zero();
            break;
        }
    }
    out.upper = out.upper.max(out.lambda);
    Ok(out)
}

/// `phi_bar = v[..N] / v[N]`, then entries outside the unit disk are moved
/// onto the unit circle.
fn normalize_and_project<T: Real>(v: &DVector<Cx<T>>) -> Option<PhaseShift<T>> {
    let n = v.len() - 1;
    let last = v[n];
    if abs(last) <= T::eps() {
        return None;
    }
    let phi = DVector::from_fn(n, |i, _| {
        let z = v[i] / last;
        let r = abs(z);
        if r > T::one() {
            z / cx(r, T::zero())
        } else {
            z
        }
    });
    Some(PhaseShift::new(phi))
}

/// Outcome of Gaussian randomization.
#[derive(Clone, Debug)]
pub struct Randomized<T: Real> {
    pub phi: PhaseShift<T>,
    pub value: T,
    /// 0 is the top-eigenvector candidate, `i >= 1` the `i`-th Gaussian draw.
    pub index: usize,
}

/// Draws `count` Gaussian candidates `U Lambda^{1/2} g` from the lifted
/// solution plus its top-eigenvector candidate, and returns the one with
/// the largest `evaluator` value (ties go to the lowest index).
///
/// Candidate `i` uses the substream `stream.child(&[i])`, so the candidate
/// set for `count = a` is a prefix of the one for `count = b > a`.
pub fn gaussian_randomize<T, F>(
    phi_lift: &DMatrix<Cx<T>>,
    evaluator: F,
    count: usize,
    stream: &RandomStream,
) -> Result<Randomized<T>>
where
    T: Real,
    F: Fn(&PhaseShift<T>) -> T + Sync,
{
    let n1 = phi_lift.nrows();
    let corner = phi_lift[(n1 - 1, n1 - 1)].re;
    if !(corner > T::lit(1e-9)) {
        return Err(Error::DegenerateLift(corner.as_f64()));
    }
    let eig = SymmetricEigen::new(hermitian_part(phi_lift));
    let lmax = eig.eigenvalues.max();
    let cut = lmax * T::eps() * T::lit(100.0 * n1 as f64);
    let sqrt_vals: Vec<T> = eig.eigenvalues.iter().map(|&l| if l > cut { l.sqrt() } else { T::zero() }).collect();
    let factor = DMatrix::from_fn(n1, n1, |i, j| eig.eigenvectors[(i, j)] * cx(sqrt_vals[j], T::zero()));
    let top = eig.eigenvalues.imax();

    let candidates: Vec<Option<Randomized<T>>> = (0..=count)
        .into_par_iter()
        .map(|i| {
            let v = if i == 0 {
                factor.column(top).into_owned()
            } else {
                let mut rng = stream.child(&[i as u64]);
                let half = std::f64::consts::FRAC_1_SQRT_2;
                let g = DVector::from_fn(n1, |_, _| {
                    let a: f64 = rng.sample(StandardNormal);
                    let b: f64 = rng.sample(StandardNormal);
                    cx(T::lit(a * half), T::lit(b * half))
                });
                &factor * g
            };
            let phi = normalize_and_project(&v)?;
            let value = evaluator(&phi);
            value.is_finite().then_some(Randomized { phi, value, index: i })
        })
        .collect();
    candidates
        .into_iter()
        .flatten()
        .fold(None, |best: Option<Randomized<T>>, c| match best {
            Some(b) if b.value >= c.value => Some(b),
            _ => Some(c),
        })
        .ok_or(Error::DegenerateLift(corner.as_f64()))
}

/// Result of one RIS update with the combiner held fixed.
#[derive(Clone, Debug)]
pub struct PhiStep<T: Real> {
    pub phi: PhaseShift<T>,
    pub phi_lift: DMatrix<Cx<T>>,
    /// Relaxed max-min ratio reached by the Dinkelbach loop.
    pub xi: T,
    /// Certified upper bound on the relaxed optimum.
    pub xi_upper: T,
    /// Min-SINR of `phi` under the fixed combiner.
    pub value: T,
    /// Whether the randomized candidate beat the incumbent.
    pub accepted: bool,
    pub dinkelbach: DinkelbachResult<T>,
    pub sdp_ms: f64,
    pub randomize_ms: f64,
}

/// Min-SINR of `phi` under the fixed combiner `w`.
pub fn min_sinr_fixed<T: Real>(inst: &Instance<T>, phi: &PhaseShift<T>, w: &Combiner<T>) -> T {
    evaluate(inst, phi, CombinerChoice::Given(w))
        .map(|(r, _)| r.min_sinr)
        .unwrap_or_else(|_| T::zero())
}

/// Optimizes the RIS for the combiner `w`, starting the Dinkelbach loop at
/// `incumbent`. The incumbent is kept when no randomized candidate beats it.
pub fn phi_step<T: Real>(
    inst: &Instance<T>,
    w: &Combiner<T>,
    incumbent: &PhaseShift<T>,
    ao: &AoConfig<T>,
    solver: &SdpSolver,
    stream: &RandomStream,
) -> Result<PhiStep<T>> {
    let users = build_user_lifts(inst, w);
    let devices = build_device_lifts(inst);
    let fracs = link_fractions(&inst.budget, &users, &devices);
    let aug = incumbent.augmented();
    let start = &aug * aug.adjoint();

    let t0 = Instant::now();
    let dk = dinkelbach_maxmin(&fracs, &start, solver, ao.dinkelbach_tol, ao.dinkelbach_max_iters)?;
    let sdp_ms = t0.elapsed().as_secs_f64() * 1e3;

    let t1 = Instant::now();
    let best = gaussian_randomize(&dk.phi_lift, |p| min_sinr_fixed(inst, p, w), ao.num_randomizations, stream)?;
    let randomize_ms = t1.elapsed().as_secs_f64() * 1e3;

    let incumbent_value = min_sinr_fixed(inst, incumbent, w);
    let accepted = best.value > incumbent_value;
    let (phi, value) = if accepted {
        (best.phi, best.value)
    } else {
        (incumbent.clone(), incumbent_value)
    };
    Ok(PhiStep {
        phi,
        phi_lift: dk.phi_lift.clone(),
        xi: dk.lambda,
        xi_upper: dk.upper,
        value,
        accepted,
        dinkelbach: dk,
        sdp_ms,
        randomize_ms,
    })
}

/// Unit-modulus coefficients with phases uniform on `[0, 2 pi)`.
pub fn random_unit_phase<T: Real>(n: usize, rng: &mut RandomStream) -> PhaseShift<T> {
    PhaseShift::new(DVector::from_fn(n, |_, _| {
        let t: f64 = rng.random::<f64>() * std::f64::consts::TAU;
        polar(T::one(), T::lit(t))
    }))
}

/// Alternates LMMSE combiner updates with RIS updates until the relative
/// min-SINR gain falls below `outer_tol` or the iteration cap is hit.
pub fn run_ao<T: Real>(
    inst: &Instance<T>,
    ao: &AoConfig<T>,
    solver: &SdpSolver,
    stream: &RandomStream,
) -> Result<(PhaseShift<T>, Combiner<T>, AoTrace<T>)> {
    ao.validate()?;
    let n = inst.dims().elements;
    let mut phi = match &ao.init {
        AoInit::Random => random_unit_phase(n, &mut stream.child(&[purpose::AO_INIT])),
        AoInit::Zero => PhaseShift::zeros(n),
        AoInit::Given(p) => {
            if p.len() != n {
                return Err(Error::DimensionMismatch {
                    what: "initial phase shift",
                    expected: n.to_string(),
                    got: p.len().to_string(),
                });
            }
            p.clone()
        }
    };
    let mut prev = min_sinr_lmmse(inst, &phi);
    let mut trace = AoTrace::new(prev);
    for t in 0..ao.max_outer_iters {
        let t0 = Instant::now();
        let w = lmmse_combiner(&inst.budget, &inst.bs(&phi));
        trace.combiner_ms += t0.elapsed().as_secs_f64() * 1e3;

        let sub = stream.child(&[purpose::AO_RANDOMIZE, t as u64]);
        let step = phi_step(inst, &w, &phi, ao, solver, &sub)?;
        trace.sdp_ms += step.sdp_ms;
        trace.randomize_ms += step.randomize_ms;
        trace.sdp_solves += step.dinkelbach.solves;
        trace.dinkelbach_iters.push(step.dinkelbach.solves);
        trace.sdr_upper.push(step.xi_upper.as_f64());
        trace.accepted.push(step.accepted);
        phi = step.phi;

        let value = min_sinr_lmmse(inst, &phi).max(prev);
        trace.min_sinr.push(value.as_f64());
        trace.phi.push(phi.clone());
        trace.iterations = t + 1;
        let gain = value - prev;
        prev = value;
        if gain <= T::lit(ao.outer_tol) * value.abs() {
            trace.converged = true;
            break;
        }
    }
    let w = lmmse_combiner(&inst.budget, &inst.bs(&phi));
    Ok((phi, w, trace))
}
