//! SINR-optimal beamforming followed by a common power scaling and
//! per-user power splitting.
//!
//! The SINR-only power minimisation is solved with the uplink-downlink
//! duality fixed point on the Lagrange multipliers,
//!
//! ```text
//! lambda_k <- gamma_k / (h_k^H (I + sum_{j != k} lambda_j h_j h_j^H)^{-1} h_k)
//! ```
//!
//! which does not depend on the noise powers. Directions are the MMSE
//! vectors `(I + sum_j lambda_j h_j h_j^H)^{-1} h_k`; downlink powers then
//! solve the K x K linear system that makes every SINR constraint tight.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{hpd_inverse, inner, outer, CMatrix, ONE};
use crate::model::{JbpsSolution, Method, SystemInstance, Targets};

/// Stop once the relative change of `sum_k lambda_k` drops below this.
pub const FIXED_POINT_TOL: f64 = 1e-12;
pub const FIXED_POINT_MAX_ITERATIONS: usize = 500;

/// Multipliers growing past this factor of their first iterate are taken as
/// divergence.
const DIVERGENCE_FACTOR: f64 = 1e14;

#[derive(Debug, Clone)]
pub struct SinrOnlySolution {
    /// Minimum-power beamformers meeting `|h_k^H v_k|^2 / (sum_{j!=k} |h_k^H v_j|^2 + sigma_k^2 + delta_k^2) = gamma_k`.
    pub beamformers: CMatrix,
    /// Uplink (dual) multipliers at the fixed point.
    pub multipliers: Vec<f64>,
    pub iterations: usize,
}

/// Minimum-power beamformers under SINR constraints only (receivers keep all
/// their power for decoding). `tol` is the fixed-point tolerance.
pub fn solve_sinr_only(instance: &SystemInstance, sinr: &[f64], tol: f64) -> Result<SinrOnlySolution> {
    let k = instance.num_users();
    let nt = instance.num_antennas();
    if sinr.len() != k {
        return Err(Error::DimensionMismatch(format!("{} SINR targets for {k} users", sinr.len())));
    }
    let h = instance.channels();
    let q: Vec<CMatrix> = (0..k).map(|u| outer(&instance.channel(u))).collect();

    let mut lambda: Vec<f64> = (0..k).map(|u| sinr[u] / h.column(u).norm_squared()).collect();
    let first_sum: f64 = lambda.iter().sum();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < FIXED_POINT_MAX_ITERATIONS {
        iterations += 1;
        let mut cov = CMatrix::identity(nt, nt);
        for u in 0..k {
            cov += &q[u] * ONE.scale(lambda[u]);
        }
        let mut next = Vec::with_capacity(k);
        for u in 0..k {
            let reduced = &cov - &q[u] * ONE.scale(lambda[u]);
            let inv = hpd_inverse(&reduced)
                .ok_or_else(|| Error::NumericalFailure("uplink covariance lost definiteness".into()))?;
            let hk = instance.channel(u);
            let x = inner(&hk, &(&inv * &hk)).re;
            next.push(sinr[u] / x);
        }
        let old: f64 = lambda.iter().sum();
        let new: f64 = next.iter().sum();
        lambda = next;
        if !new.is_finite() || new > DIVERGENCE_FACTOR * first_sum {
            return Err(Error::Infeasible("uplink multipliers diverge".into()));
        }
        if (new - old).abs() <= tol * new {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NotConverged { iterations });
    }

    let mut cov = CMatrix::identity(nt, nt);
    for u in 0..k {
        cov += &q[u] * ONE.scale(lambda[u]);
    }
    let inv = hpd_inverse(&cov).ok_or_else(|| Error::NumericalFailure("singular uplink covariance".into()))?;
    let mut dirs = &inv * h;
    for u in 0..k {
        let n = dirs.column(u).norm();
        dirs.column_mut(u).unscale_mut(n);
    }

    let cross = h.adjoint() * &dirs;
    let f = DMatrix::from_fn(k, k, |r, c| {
        let g = cross[(r, c)].norm_sqr();
        if r == c {
            g / sinr[r]
        } else {
            -g
        }
    });
    let noise = DVector::from_fn(k, |u, _| instance.antenna_noise()[u] + instance.id_noise()[u]);
    let powers = f
        .lu()
        .solve(&noise)
        .ok_or_else(|| Error::NumericalFailure("singular downlink power system".into()))?;
    if powers.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
        return Err(Error::Infeasible("downlink powers are not positive".into()));
    }
    for u in 0..k {
        dirs.column_mut(u).scale_mut(powers[u].sqrt());
    }
    Ok(SinrOnlySolution { beamformers: dirs, multipliers: lambda, iterations })
}

/// Per-user data of the common-scaling step.
#[derive(Debug, Clone)]
pub struct ScalingIntermediates {
    /// `|h_k^H v_k|^2 / gamma_k - sum_{j!=k} |h_k^H v_j|^2`
    pub c: Vec<f64>,
    /// `sum_j |h_k^H v_j|^2`
    pub d: Vec<f64>,
    /// Largest root of `g_k(alpha) = 1`.
    pub alpha_roots: Vec<f64>,
    pub alpha_star: f64,
}

/// `g_k(alpha) = delta^2 / (alpha c - sigma^2) + e / (zeta (alpha d + sigma^2))`
pub fn scaling_function(c: f64, d: f64, sigma2: f64, delta2: f64, harvest: f64, zeta: f64, alpha: f64) -> f64 {
    delta2 / (alpha * c - sigma2) + harvest / (zeta * (alpha * d + sigma2))
}

/// Largest root of `zeta (alpha c - s)(alpha d + s) = delta^2 zeta (alpha d + s) + e (alpha c - s)`,
/// `s = sigma^2`, with a bisection fallback when the closed form loses
/// accuracy.
fn largest_scaling_root(c: f64, d: f64, sigma2: f64, delta2: f64, harvest: f64, zeta: f64) -> f64 {
    let a2 = zeta * c * d;
    let a1 = zeta * sigma2 * (c - d) - delta2 * zeta * d - harvest * c;
    let a0 = -zeta * sigma2 * sigma2 - delta2 * zeta * sigma2 + harvest * sigma2;
    let disc = (a1 * a1 - 4.0 * a2 * a0).max(0.0).sqrt();
    let root = if a1 <= 0.0 { (-a1 + disc) / (2.0 * a2) } else { -2.0 * a0 / (a1 + disc) };
    let g = |a: f64| scaling_function(c, d, sigma2, delta2, harvest, zeta, a);
    if root.is_finite() && root > 1.0 && (g(root) - 1.0).abs() <= 1e-12 {
        return root;
    }
    // g decreases on alpha > sigma^2 / c and exceeds 1 at alpha = 1.
    let mut lo = 1.0_f64.max(sigma2 / c);
    let mut hi = 2.0 * lo;
    while g(hi) > 1.0 {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

pub fn scaling_roots(instance: &SystemInstance, targets: &Targets, beamformers: &CMatrix) -> Result<ScalingIntermediates> {
    targets.check_against(instance)?;
    let gains = instance.gain_matrix(beamformers)?;
    let k = instance.num_users();
    let mut out = ScalingIntermediates { c: Vec::with_capacity(k), d: Vec::with_capacity(k), alpha_roots: Vec::with_capacity(k), alpha_star: 0.0 };
    for u in 0..k {
        let interference: f64 = (0..k).filter(|&j| j != u).map(|j| gains[u][j]).sum();
        let c = gains[u][u] / targets.sinr()[u] - interference;
        let d = gains[u][u] + interference;
        if !(c > 0.0) {
            return Err(Error::DegenerateQuadratic { user: u, c });
        }
        let root = largest_scaling_root(
            c,
            d,
            instance.antenna_noise()[u],
            instance.id_noise()[u],
            targets.harvest()[u],
            instance.eh_efficiency()[u],
        );
        out.c.push(c);
        out.d.push(d);
        out.alpha_roots.push(root);
    }
    out.alpha_star = out.alpha_roots.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(out)
}

/// SINR-optimal directions scaled by the smallest common factor that lets
/// every user meet both targets, with the matching PS ratios.
pub fn solve_sinr_opt(instance: &SystemInstance, targets: &Targets) -> Result<JbpsSolution> {
    targets.check_against(instance)?;
    let base = solve_sinr_only(instance, targets.sinr(), FIXED_POINT_TOL)?;
    sinr_opt_from_directions(instance, targets, &base.beamformers)
}

/// Scaling step applied to given SINR-only beamformers.
pub fn sinr_opt_from_directions(instance: &SystemInstance, targets: &Targets, base: &CMatrix) -> Result<JbpsSolution> {
    let parts = scaling_roots(instance, targets, base)?;
    let alpha = parts.alpha_star;
    let rho: Vec<f64> = (0..instance.num_users())
        .map(|u| instance.id_noise()[u] / (alpha * parts.c[u] - instance.antenna_noise()[u]))
        .collect();
    let v = base * ONE.scale(alpha.sqrt());
    JbpsSolution::evaluate(instance, v, rho, Method::SinrOptimal)
}
