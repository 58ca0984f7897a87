//! Optimality certificate of the relaxation.
//!
//! With SINR multipliers `lambda` and harvest multipliers `mu`, the dual
//! matrix of user `k` is
//!
//! ```text
//! A_k = I + sum_j (lambda_j - mu_j) h_j h_j^H - (lambda_k / gamma_k + lambda_k) h_k h_k^H
//! ```
//!
//! A primal point is optimal when every `A_k` is PSD, `A_k X_k = 0`, both
//! constraint families hold with equality and all multipliers are positive.
//! At the optimum each `A_k` has rank `N_t - 1`, which forces `X_k` to be rank
//! one.

use serde::Serialize;

use crate::linalg::{frobenius, hermitian_eig, hermitianize, outer, CMatrix, CVector};
use crate::model::{SystemInstance, Targets};

use super::SdrRelaxationSolution;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KktResiduals {
    /// Largest relative residual of the PS-ratio stationarity condition
    /// `lambda_k delta_k^2 / rho_k^2 = mu_k e_k / (zeta_k (1 - rho_k)^2)`.
    pub stationarity: f64,
    /// `max_k ||A_k X_k||_F / (1 + ||X_k||_F)`
    pub complementarity: f64,
    /// `max_k max(0, -lambda_min(A_k))`
    pub psd_violation: f64,
    /// Largest relative constraint slack magnitude.
    pub tightness: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KktCertificate {
    /// SINR multipliers, one per user.
    pub lambda: Vec<f64>,
    /// Harvest multipliers, one per user.
    pub mu: Vec<f64>,
    pub dual_matrices: Vec<CMatrix>,
    pub residuals: KktResiduals,
}

/// Outcome of the five certificate checks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KktReport {
    pub tolerance: f64,
    /// (i) every `A_k >= -tol I`
    pub dual_psd: bool,
    /// (ii) `||A_k X_k||_F <= tol (1 + ||X_k||_F)`
    pub complementary: bool,
    /// (iii) both constraint families hold with equality
    pub tight: bool,
    /// (iv) `lambda_k |h_k|^2 >= tol` and `mu_k |h_k|^2 >= tol`
    pub duals_positive: bool,
    /// (v) `rank(A_k) = N_t - 1`
    pub rank_deficient_by_one: bool,
    pub dual_ranks: Vec<usize>,
    pub residuals: KktResiduals,
}

impl KktReport {
    pub fn all_passed(&self) -> bool {
        self.dual_psd && self.complementary && self.tight && self.duals_positive && self.rank_deficient_by_one
    }

    /// Names of the checks that failed.
    pub fn failures(&self) -> Vec<&'static str> {
        [
            (self.dual_psd, "dual_psd"),
            (self.complementary, "complementary"),
            (self.tight, "tight"),
            (self.duals_positive, "duals_positive"),
            (self.rank_deficient_by_one, "dual_rank"),
        ]
        .into_iter()
        .filter(|(ok, _)| !ok)
        .map(|(_, name)| name)
        .collect()
    }
}

/// `A_k` for every user from the multipliers.
pub fn dual_matrices(instance: &SystemInstance, targets: &Targets, lambda: &[f64], mu: &[f64]) -> Vec<CMatrix> {
    let n = instance.num_antennas();
    let k = instance.num_users();
    let q: Vec<CMatrix> = (0..k).map(|j| outer(&instance.channel(j))).collect();
    let mut common = CMatrix::identity(n, n);
    for j in 0..k {
        common += &q[j] * num_complex::Complex64::from(lambda[j] - mu[j]);
    }
    (0..k)
        .map(|u| {
            let coef = lambda[u] / targets.sinr()[u] + lambda[u];
            let mut a = &common - &q[u] * num_complex::Complex64::from(coef);
            hermitianize(&mut a);
            a
        })
        .collect()
}

/// Relative SINR and harvest slacks of the relaxed point, in the same form as
/// `check_solution`.
pub fn relaxed_slacks(
    instance: &SystemInstance,
    targets: &Targets,
    x: &[CMatrix],
    rho: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let k = instance.num_users();
    let mut sinr = Vec::with_capacity(k);
    let mut harvest = Vec::with_capacity(k);
    for u in 0..k {
        let h = instance.channel(u);
        let q: Vec<f64> = x.iter().map(|xj| quad(xj, &h)).collect();
        let total: f64 = q.iter().sum();
        let sigma2 = instance.antenna_noise()[u];
        let delta2 = instance.id_noise()[u];
        let zeta = instance.eh_efficiency()[u];
        let r = rho[u];
        let achieved = r * q[u] / (r * (total - q[u]) + r * sigma2 + delta2);
        sinr.push(achieved / targets.sinr()[u] - 1.0);
        harvest.push(zeta * (1.0 - r) * (total + sigma2) / targets.harvest()[u] - 1.0);
    }
    (sinr, harvest)
}

fn quad(x: &CMatrix, h: &CVector) -> f64 {
    crate::linalg::quad_form(x, h)
}

pub(crate) fn residuals(
    instance: &SystemInstance,
    targets: &Targets,
    x: &[CMatrix],
    rho: &[f64],
    lambda: &[f64],
    mu: &[f64],
    duals: &[CMatrix],
) -> KktResiduals {
    let mut stationarity = 0.0_f64;
    let mut complementarity = 0.0_f64;
    let mut psd_violation = 0.0_f64;
    for u in 0..instance.num_users() {
        let r = rho[u];
        let info = lambda[u] * instance.id_noise()[u] / (r * r);
        let energy = mu[u] * targets.harvest()[u] / (instance.eh_efficiency()[u] * (1.0 - r) * (1.0 - r));
        let scale = info.abs().max(energy.abs());
        if scale > 0.0 {
            stationarity = stationarity.max((info - energy).abs() / scale);
        }
        complementarity = complementarity.max(frobenius(&(&duals[u] * &x[u])) / (1.0 + frobenius(&x[u])));
        let (eig, _) = hermitian_eig(&duals[u]);
        let smallest = eig.last().copied().unwrap_or(0.0);
        psd_violation = psd_violation.max(-smallest);
    }
    let (s, h) = relaxed_slacks(instance, targets, x, rho);
    let tightness = s.iter().chain(&h).fold(0.0_f64, |acc, v| acc.max(v.abs()));
    KktResiduals { stationarity, complementarity, psd_violation, tightness }
}

/// Runs the five certificate checks at `tol`. `A_k` is rebuilt from the
/// certificate's multipliers, not taken from its stored matrices.
pub fn verify_kkt(
    primal: &SdrRelaxationSolution,
    certificate: &KktCertificate,
    instance: &SystemInstance,
    targets: &Targets,
    tol: f64,
) -> KktReport {
    let n = instance.num_antennas();
    let duals = dual_matrices(instance, targets, &certificate.lambda, &certificate.mu);
    let residuals = residuals(
        instance,
        targets,
        &primal.x,
        &primal.ps_ratios,
        &certificate.lambda,
        &certificate.mu,
        &duals,
    );
    let mut dual_psd = true;
    let mut complementary = true;
    let mut dual_ranks = Vec::with_capacity(duals.len());
    for (a, x) in duals.iter().zip(&primal.x) {
        let (eig, _) = hermitian_eig(a);
        if eig.last().is_some_and(|&e| e < -tol) {
            dual_psd = false;
        }
        if frobenius(&(a * x)) > tol * (1.0 + frobenius(x)) {
            complementary = false;
        }
        let top = eig.iter().fold(0.0_f64, |m, e| m.max(e.abs()));
        let cut = tol * top.max(1.0);
        dual_ranks.push(eig.iter().filter(|e| e.abs() > cut).count());
    }
    let tight = residuals.tightness <= tol;
    let duals_positive = (0..instance.num_users()).all(|u| {
        let g = instance.channel(u).norm_squared();
        certificate.lambda[u] * g >= tol && certificate.mu[u] * g >= tol
    });
    let rank_deficient_by_one = dual_ranks.iter().all(|&r| r + 1 == n);
    KktReport { tolerance: tol, dual_psd, complementary, tight, duals_positive, rank_deficient_by_one, dual_ranks, residuals }
}
