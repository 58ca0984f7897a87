//! Globally optimal joint beamforming and power splitting.
//!
//! The rank constraints on `X_k = v_k v_k^H` are dropped and the remaining
//! convex problem
//!
//! ```text
//! min  sum_k tr X_k
//! s.t. h_k^H X_k h_k / gamma_k - sum_{j!=k} h_k^H X_j h_k >= sigma_k^2 + delta_k^2 / rho_k
//!      sum_j h_k^H X_j h_k >= e_k / (zeta_k (1 - rho_k)) - sigma_k^2
//!      X_k PSD,  0 < rho_k < 1
//! ```
//!
//! is solved by primal-dual path following (`pdip`), started either from the
//! SINR-optimal solution or from a phase-one point found with the log-barrier
//! engine in `barrier`. The relaxation is tight: every optimal `X_k` has rank
//! one, so the principal eigenvector recovers the beamformer and the final
//! multipliers certify global optimality.

mod barrier;
pub mod kkt;
mod pdip;
mod polish;

use std::time::{Duration, Instant};

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::feasibility::{is_feasible, RANK_TOL};
use crate::linalg::{hermitian_eig, hermitianize, left_singular_basis, outer, trace_re, CMatrix, CVector};
use crate::model::{JbpsSolution, Method, SystemInstance, Targets};
use crate::sinr::solve_sinr_opt;

use barrier::{BarrierProblem, Budget, Constraint, EngineError, Point};
pub use kkt::{dual_matrices, relaxed_slacks, verify_kkt, KktCertificate, KktReport, KktResiduals};

/// Where the interior-point method starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum InitStrategy {
    /// Inflated SINR-optimal solution, falling back to phase one if that fails.
    SinrOptimal,
    /// Always run the phase-one problem.
    PhaseOne,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SdrSolveOptions {
    /// Relative duality gap at which path following stops.
    pub kkt_tol: f64,
    /// Largest admissible `lambda_2 / lambda_1` when extracting beamformers.
    pub rank_one_tol: f64,
    /// Iteration budget of phase one and of each primal-dual run.
    pub max_iterations: usize,
    /// Factor applied to the barrier weight after each phase-one centering.
    pub barrier_growth: f64,
    /// Inflation of the SINR-optimal starting point.
    pub init_inflation: f64,
    pub init: InitStrategy,
    pub time_limit: Option<Duration>,
}

impl Default for SdrSolveOptions {
    fn default() -> Self {
        Self {
            kkt_tol: 1e-8,
            rank_one_tol: 1e-6,
            max_iterations: 200,
            barrier_growth: 20.0,
            init_inflation: 1.5,
            init: InitStrategy::SinrOptimal,
            time_limit: None,
        }
    }
}

impl SdrSolveOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if !positive(self.kkt_tol) || !positive(self.rank_one_tol) {
            return Err(Error::InvalidInput("solver tolerances must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidInput("max_iterations must be at least 1".into()));
        }
        if !(self.barrier_growth > 1.0) || !(self.init_inflation > 1.0) {
            return Err(Error::InvalidInput("barrier growth and init inflation must exceed 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RelaxationStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdrRelaxationSolution {
    /// Transmit covariance of every user, watts.
    pub x: Vec<CMatrix>,
    pub ps_ratios: Vec<f64>,
    /// `sum_k tr X_k`, watts.
    pub objective: f64,
    pub status: RelaxationStatus,
    /// Newton steps spent over all runs, phase one included.
    pub iterations: usize,
    pub diagnostic: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelaxationOutcome {
    pub solution: SdrRelaxationSolution,
    /// Present exactly when the status is `Optimal`.
    pub certificate: Option<KktCertificate>,
}

/// Principal eigenpair of one relaxed covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct RankOneExtraction {
    pub beamformer: CVector,
    /// `lambda_2 / lambda_1`
    pub ratio: f64,
}

/// `v = sqrt(lambda_1) u_1`, phase-normalised so its largest-modulus entry is
/// real and nonnegative.
pub fn extract_rank_one(x: &CMatrix, rank_one_tol: f64) -> Result<RankOneExtraction> {
    if x.nrows() != x.ncols() || x.nrows() == 0 {
        return Err(Error::DimensionMismatch(format!("{}x{} covariance", x.nrows(), x.ncols())));
    }
    if !(trace_re(x) > 0.0) {
        return Err(Error::InvalidInput("covariance has non-positive trace".into()));
    }
    let (eig, vecs) = hermitian_eig(x);
    let top = eig[0];
    let ratio = if eig.len() > 1 { (eig[1] / top).max(0.0) } else { 0.0 };
    if ratio > rank_one_tol {
        return Err(Error::RankOneViolation { user: 0, ratio });
    }
    let mut v: CVector = vecs.column(0).into_owned() * Complex64::from(top.sqrt());
    let pivot = v.iter().copied().max_by(|a, b| a.norm().total_cmp(&b.norm())).unwrap_or_default();
    if pivot.norm() > 0.0 {
        v *= pivot.conj() / pivot.norm();
    }
    Ok(RankOneExtraction { beamformer: v, ratio })
}

/// Positive-definite starting point for the relaxation.
#[derive(Debug, Clone)]
struct Start {
    x: Vec<CMatrix>,
    rho: Vec<f64>,
}

enum PhaseOne {
    Feasible(Start),
    Infeasible(String),
    Failure(String),
}

fn engine_failure(e: EngineError) -> Result<String> {
    match e {
        EngineError::TimeLimit => Err(Error::TimeLimit),
        EngineError::Budget(n) => Ok(format!("iteration budget exhausted after {n} Newton steps")),
        EngineError::LineSearch => Ok("line search failed to make progress".into()),
        EngineError::Singular => Ok("Newton system became singular".into()),
    }
}

/// Mean squared channel norm; constraint data are divided by this.
fn channel_scale(instance: &SystemInstance) -> f64 {
    let k = instance.num_users();
    (0..k).map(|u| instance.channel(u).norm_squared()).sum::<f64>() / k as f64
}

/// Strict interior point built from the SINR-optimal solution.
fn sinr_start(instance: &SystemInstance, targets: &Targets, inflation: f64) -> Option<Start> {
    let sol = solve_sinr_opt(instance, targets).ok()?;
    let k = instance.num_users();
    let n = instance.num_antennas();
    let mut eps_factor = 1e-6;
    for _ in 0..8 {
        let x: Vec<CMatrix> = (0..k)
            .map(|u| {
                let v = sol.beamformer(u) * Complex64::from(inflation.sqrt());
                let eps = eps_factor * v.norm_squared();
                outer(&v) + CMatrix::identity(n, n) * Complex64::from(eps)
            })
            .collect();
        let rho = centred_ratios(instance, targets, &x);
        let (s, h) = relaxed_slacks(instance, targets, &x, &rho);
        if s.iter().chain(&h).all(|&v| v > 0.0) && rho.iter().all(|&r| r > 0.0 && r < 1.0) {
            return Some(Start { x, rho });
        }
        eps_factor *= 0.1;
    }
    None
}

/// Midpoint of the interval of PS ratios for which both constraints of each
/// user hold at `x`, or NaN when it is empty.
fn centred_ratios(instance: &SystemInstance, targets: &Targets, x: &[CMatrix]) -> Vec<f64> {
    (0..instance.num_users())
        .map(|u| {
            let h = instance.channel(u);
            let q: Vec<f64> = x.iter().map(|xj| crate::linalg::quad_form(xj, &h)).collect();
            let total: f64 = q.iter().sum();
            let sigma2 = instance.antenna_noise()[u];
            let room = q[u] / targets.sinr()[u] - (total - q[u]) - sigma2;
            let lo = instance.id_noise()[u] / room;
            let hi = 1.0 - targets.harvest()[u] / (instance.eh_efficiency()[u] * (total + sigma2));
            if room > 0.0 && lo < hi {
                0.5 * (lo + hi)
            } else {
                f64::NAN
            }
        })
        .collect()
}

/// Normalised SINR margin below which phase one gives up on deciding.
const BOUNDARY_MARGIN: f64 = 1e-7;

/// Decides strict feasibility of the SINR targets and, when they are
/// feasible, returns an interior point of the relaxation.
///
/// Works on `Y_j = B^H X_j B` with `B` an orthonormal basis of the channel
/// span, fixes every user's own received power `h_k^H Y_k h_k = |h_k|^2` and
/// maximises the common margin
/// `t = min_k (1 / gamma_k - sum_{j!=k} h_k^H Y_j h_k / |h_k|^2)`.
/// The targets are feasible exactly when `t > 0`.
fn phase_one(instance: &SystemInstance, targets: &Targets, opts: &SdrSolveOptions, budget: &mut Budget) -> Result<PhaseOne> {
    let k = instance.num_users();
    let nt = instance.num_antennas();
    let hs = channel_scale(instance).sqrt();
    let (sv, basis) = left_singular_basis(instance.channels());
    let top = sv.first().copied().unwrap_or(0.0);
    let r = sv.iter().filter(|&&s| s > RANK_TOL * top).count();
    if r == 0 {
        return Ok(PhaseOne::Infeasible("all channels vanish".into()));
    }
    let b = basis.columns(0, r).into_owned();
    let reduced: Vec<CVector> = (0..k).map(|u| b.adjoint() * instance.channel(u) / Complex64::from(hs)).collect();
    let norms: Vec<f64> = reduced.iter().map(|h| h.norm_squared()).collect();
    if norms.iter().any(|&nk| !(nk > 0.0)) {
        return Ok(PhaseOne::Infeasible("a user has a zero channel".into()));
    }

    let constraints: Vec<Constraint> = (0..k)
        .map(|u| Constraint {
            user: u,
            block_coef: (0..k)
                .map(|j| if j == u { 1.0 / (targets.sinr()[u] * norms[u]) } else { -1.0 / norms[u] })
                .collect(),
            scalar: 0,
        })
        .collect();
    let equalities = reduced.iter().zip(&norms).map(|(h, nk)| outer(h) / Complex64::from(*nk)).collect();
    let mut prob = BarrierProblem {
        dim: r,
        num_blocks: k,
        channels: reduced,
        constraints,
        lower: vec![0.0],
        block_weight: 0.0,
        scalar_objective: vec![-1.0],
        equalities,
    };
    // Y_j = I meets every equality
    let mut p = Point { blocks: vec![CMatrix::identity(r, r); k], scalars: vec![0.0] };
    let margin0 = prob.slacks(&p).iter().copied().fold(f64::INFINITY, f64::min);
    p.scalars[0] = margin0 - 0.5;
    prob.lower[0] = margin0 - 1.0;

    let m = prob.degree();
    let mut tau = 1.0;
    loop {
        if let Err(err) = prob.center(&mut p, tau, budget) {
            let msg = engine_failure(err)?;
            return Ok(PhaseOne::Failure(format!("phase one stopped near the feasibility boundary: {msg}")));
        }
        let t = p.scalars[0];
        if t > 0.0 {
            break;
        }
        // the optimal margin is at most t + m / tau on the central path
        if t + 2.0 * m / tau < 0.0 {
            return Ok(PhaseOne::Infeasible(format!("largest normalised SINR margin is below {:.3e}", t + 2.0 * m / tau)));
        }
        if m / tau < BOUNDARY_MARGIN {
            return Ok(PhaseOne::Failure(format!(
                "SINR targets sit on the feasibility boundary (margin within {:.1e} of zero)",
                m / tau
            )));
        }
        tau *= opts.barrier_growth;
    }

    // Lift back to the antenna space with a small full-rank component and
    // scale until both constraint families hold with rho = 1/2.
    let t = p.scalars[0];
    let eps = 0.25 * t / k as f64;
    let mut x: Vec<CMatrix> = p
        .blocks
        .iter()
        .map(|y| {
            let mut lifted = &b * y * b.adjoint() + CMatrix::identity(nt, nt) * Complex64::from(eps);
            lifted /= Complex64::from(hs * hs);
            hermitianize(&mut lifted);
            lifted
        })
        .collect();
    let rho = vec![0.5; k];
    let mut scale: f64 = 0.0;
    for u in 0..k {
        let h = instance.channel(u);
        let q: Vec<f64> = x.iter().map(|xj| crate::linalg::quad_form(xj, &h)).collect();
        let total: f64 = q.iter().sum();
        let sinr_part = q[u] / targets.sinr()[u] - (total - q[u]);
        let noise = instance.antenna_noise()[u] + 2.0 * instance.id_noise()[u];
        let energy = targets.harvest()[u] / instance.eh_efficiency()[u];
        scale = scale.max(2.0 * noise / sinr_part).max(4.0 * energy / total);
    }
    for xj in x.iter_mut() {
        *xj *= Complex64::from(scale);
    }
    Ok(PhaseOne::Feasible(Start { x, rho }))
}

fn failure(
    k: usize,
    n: usize,
    status: RelaxationStatus,
    iterations: usize,
    diagnostic: String,
) -> RelaxationOutcome {
    RelaxationOutcome {
        solution: SdrRelaxationSolution {
            x: vec![CMatrix::zeros(n, n); k],
            ps_ratios: vec![0.5; k],
            objective: f64::NAN,
            status,
            iterations,
            diagnostic: Some(diagnostic),
        },
        certificate: None,
    }
}

/// Outcome of one primal-dual run: the final iterate in scaled units with
/// its step count and the scales `p0`, `hs^2`, or a diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    /// Multipliers `mu0 / s_i`.
    Plain,
    /// Multipliers that zero the PS-ratio stationarity residual.
    Balanced,
    /// Plain multipliers with the centring guard of `pdip::Problem`.
    Guarded,
}

type PathResult = std::result::Result<(pdip::Iterate, usize, f64, f64), (String, usize)>;

fn path_follow(
    instance: &SystemInstance,
    targets: &Targets,
    options: &SdrSolveOptions,
    start: &Start,
    mode: Mode,
    budget: usize,
    deadline: Option<Instant>,
) -> Result<PathResult> {
    let k = instance.num_users();
    let n = instance.num_antennas();
    // Scaled units: X = p0 X', h = hs h', so every constraint is divided by
    // hs^2 p0 and the objective by p0.
    let hs2 = channel_scale(instance);
    let p0: f64 = start.x.iter().map(trace_re).sum();
    let unit = hs2 * p0;
    let hs = hs2.sqrt();
    let prob = pdip::Problem {
        channels: (0..k).map(|u| instance.channel(u) / Complex64::from(hs)).collect(),
        sinr: targets.sinr().to_vec(),
        antenna_noise: instance.antenna_noise().iter().map(|s| s / unit).collect(),
        id_noise: instance.id_noise().iter().map(|d| d / unit).collect(),
        harvest: (0..k).map(|u| targets.harvest()[u] / (instance.eh_efficiency()[u] * unit)).collect(),
        x_unit: p0,
        guarded: mode == Mode::Guarded,
    };
    let x0: Vec<CMatrix> = start.x.iter().map(|x| x / Complex64::from(p0)).collect();
    let (s0, _) = prob.constraints(&x0, &start.rho);
    if s0.iter().any(|&v| !(v > 0.0)) {
        return Ok(Err(("starting point is not interior".into(), 0)));
    }
    let mu0 = x0.iter().map(trace_re).sum::<f64>() / (k * n) as f64;
    let lambda = if mode == Mode::Balanced {
        prob.starting_multipliers(&start.rho, &s0, mu0)
    } else {
        s0.iter().map(|s| mu0 / s).collect()
    };
    let it0 = pdip::Iterate { x: x0, rho: start.rho.clone(), lambda, s: s0, z: vec![CMatrix::identity(n, n); k] };
    Ok(match prob.solve(it0, options.kkt_tol, budget, deadline) {
        Ok((it, steps, _)) => Ok((it, steps, p0, hs2)),
        Err((e, steps)) => Err((
            match e {
                pdip::PdError::TimeLimit => return Err(Error::TimeLimit),
                pdip::PdError::Budget(n) => format!("iteration budget exhausted after {n} primal-dual steps"),
                pdip::PdError::Singular(what) => what.to_string(),
                pdip::PdError::Stalled(r) => format!("path following stalled with residual {r:.3e}"),
            },
            steps,
        )),
    })
}

/// Solves the convex relaxation and returns it with its KKT certificate.
///
/// Infeasible targets and numerical trouble are reported through the
/// solution status; `Err` is reserved for invalid input and the time limit.
pub fn solve_relaxation(
    instance: &SystemInstance,
    targets: &Targets,
    options: &SdrSolveOptions,
) -> Result<RelaxationOutcome> {
    options.validate()?;
    if targets.len() != instance.num_users() {
        return Err(Error::DimensionMismatch(format!(
            "{} targets for {} users",
            targets.len(),
            instance.num_users()
        )));
    }
    let k = instance.num_users();
    let n = instance.num_antennas();
    let deadline = options.time_limit.map(|d| Instant::now() + d);

    // The SINR-optimal start comes first and the phase-one start second; each
    // is tried in every mode until one run converges.
    let mut used = 0;
    let mut diagnostic = String::from("no starting point");
    let mut starts: Vec<Start> = match options.init {
        InitStrategy::SinrOptimal => sinr_start(instance, targets, options.init_inflation).into_iter().collect(),
        InitStrategy::PhaseOne => Vec::new(),
    };
    let mut phase_one_done = false;
    let mut next = 0;
    let (it, p0, hs2) = 'search: loop {
        if next == starts.len() {
            if phase_one_done {
                return Ok(failure(k, n, RelaxationStatus::NumericalFailure, used, diagnostic));
            }
            phase_one_done = true;
            let mut budget = Budget { used: 0, max: options.max_iterations, deadline };
            let res = phase_one(instance, targets, options, &mut budget)?;
            used += budget.used;
            match res {
                PhaseOne::Feasible(s) => starts.push(s),
                PhaseOne::Infeasible(msg) => return Ok(failure(k, n, RelaxationStatus::Infeasible, used, msg)),
                PhaseOne::Failure(msg) => return Ok(failure(k, n, RelaxationStatus::NumericalFailure, used, msg)),
            }
        }
        let start = &starts[next];
        next += 1;
        for mode in [Mode::Plain, Mode::Balanced, Mode::Guarded] {
            match path_follow(instance, targets, options, start, mode, options.max_iterations, deadline)? {
                Ok((it, steps, p0, hs2)) => {
                    used += steps;
                    break 'search (it, p0, hs2);
                }
                Err((msg, steps)) => {
                    used += steps;
                    diagnostic = msg;
                }
            }
        }
    };

    let lambda: Vec<f64> = (0..k).map(|u| it.lambda[2 * u] / hs2).collect();
    let mu: Vec<f64> = (0..k).map(|u| it.lambda[2 * u + 1] / hs2).collect();
    let x: Vec<CMatrix> = it
        .x
        .iter()
        .map(|xs| {
            let mut x = xs * Complex64::from(p0);
            hermitianize(&mut x);
            x
        })
        .collect();
    let duals = dual_matrices(instance, targets, &lambda, &mu);
    let (x, rho) = match polish::refine(instance, targets, &x, &it.rho, &duals, options.rank_one_tol) {
        Some(refined) => refined,
        None => (x, it.rho),
    };
    let residuals = kkt::residuals(instance, targets, &x, &rho, &lambda, &mu, &duals);
    let objective = x.iter().map(trace_re).sum();
    Ok(RelaxationOutcome {
        solution: SdrRelaxationSolution {
            x,
            ps_ratios: rho,
            objective,
            status: RelaxationStatus::Optimal,
            iterations: used,
            diagnostic: None,
        },
        certificate: Some(KktCertificate { lambda, mu, dual_matrices: duals, residuals }),
    })
}

/// Optimal solution together with the relaxation it came from and the
/// verified certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct CertifiedSolution {
    pub solution: JbpsSolution,
    pub relaxation: SdrRelaxationSolution,
    pub certificate: KktCertificate,
    /// `verify_kkt` at the solve tolerance.
    pub report: KktReport,
}

/// Globally optimal beamformers and PS ratios: feasibility test, relaxation,
/// then rank-one extraction for every user.
pub fn solve_jbps_optimal(instance: &SystemInstance, targets: &Targets, options: &SdrSolveOptions) -> Result<JbpsSolution> {
    solve_jbps_certified(instance, targets, options).map(|c| c.solution)
}

pub fn solve_jbps_certified(instance: &SystemInstance, targets: &Targets, options: &SdrSolveOptions) -> Result<CertifiedSolution> {
    targets.check_against(instance)?;
    let verdict = is_feasible(targets.sinr(), instance.channels(), RANK_TOL);
    if !verdict.feasible {
        return Err(Error::Infeasible(format!(
            "SINR load {:.6} exceeds channel rank {}",
            verdict.load, verdict.rank
        )));
    }
    let outcome = solve_relaxation(instance, targets, options)?;
    let sol = outcome.solution;
    let certificate = match (sol.status, outcome.certificate) {
        (RelaxationStatus::Optimal, Some(c)) => c,
        (RelaxationStatus::Infeasible, _) => return Err(Error::Infeasible(sol.diagnostic.unwrap_or_default())),
        _ => return Err(Error::NumericalFailure(sol.diagnostic.unwrap_or_default())),
    };
    let n = instance.num_antennas();
    let mut v = CMatrix::zeros(n, instance.num_users());
    for (u, x) in sol.x.iter().enumerate() {
        let ext = extract_rank_one(x, options.rank_one_tol).map_err(|e| match e {
            Error::RankOneViolation { ratio, .. } => Error::RankOneViolation { user: u, ratio },
            other => other,
        })?;
        v.set_column(u, &ext.beamformer);
    }
    let report = verify_kkt(&sol, &certificate, instance, targets, options.kkt_tol);
    let solution = JbpsSolution::evaluate(instance, v, sol.ps_ratios.clone(), Method::SdrOptimal)?;
    Ok(CertifiedSolution { solution, relaxation: sol, certificate, report })
}

#[cfg(test)]
mod tests;
