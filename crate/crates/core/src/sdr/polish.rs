//! Final rank-one refinement of a converged relaxation.
//!
//! At the optimum `X_k = p_k u_k u_k^H` with `u_k` spanning the null space of
//! `A_k`, and both constraints of every user hold with equality. Path
//! following reaches the duality gap long before the principal direction of
//! each `X_k` is aligned with `null(A_k)` to the same accuracy, so the final
//! point is rebuilt from the dual: directions from `A_k`, then powers and PS
//! ratios from the `2K` tight constraints by Newton's method.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::linalg::{hermitian_eig, inner, outer, CMatrix, CVector};
use crate::model::{SystemInstance, Targets};

const MAX_NEWTON: usize = 30;
const RESIDUAL_TOL: f64 = 1e-14;

/// Rebuilt primal point, or `None` when the raw iterate is not rank one
/// within `rank_one_tol`, its principal direction disagrees with the dual
/// null vector, or Newton does not converge.
pub(crate) fn refine(
    instance: &SystemInstance,
    targets: &Targets,
    x: &[CMatrix],
    rho: &[f64],
    duals: &[CMatrix],
    rank_one_tol: f64,
) -> Option<(Vec<CMatrix>, Vec<f64>)> {
    let k = instance.num_users();
    let mut dirs: Vec<CVector> = Vec::with_capacity(k);
    let mut power = Vec::with_capacity(k);
    for (xk, ak) in x.iter().zip(duals) {
        let (ex, vx) = hermitian_eig(xk);
        if !(ex[0] > 0.0) || ex.get(1).is_some_and(|e| e / ex[0] > rank_one_tol) {
            return None;
        }
        let (_, va) = hermitian_eig(ak);
        let u = va.column(va.ncols() - 1).into_owned();
        let w = vx.column(0).into_owned();
        if 1.0 - inner(&u, &w).norm_sqr() > rank_one_tol {
            return None;
        }
        power.push(inner(&u, &(xk * &u)).re);
        dirs.push(u);
    }
    // g[u][j] = |h_u^H u_j|^2
    let g: Vec<Vec<f64>> =
        (0..k).map(|u| dirs.iter().map(|d| inner(&instance.channel(u), d).norm_sqr()).collect()).collect();
    let (p, r) = tight_powers(instance, targets, &g, power, rho.to_vec())?;
    let x = dirs.iter().zip(&p).map(|(d, pk)| outer(d) * Complex64::from(*pk)).collect();
    Some((x, r))
}

/// Solves the `2K` tight constraints for powers and PS ratios.
fn tight_powers(
    instance: &SystemInstance,
    targets: &Targets,
    g: &[Vec<f64>],
    mut p: Vec<f64>,
    mut rho: Vec<f64>,
) -> Option<(Vec<f64>, Vec<f64>)> {
    let k = p.len();
    let sigma = instance.antenna_noise();
    let delta = instance.id_noise();
    let energy: Vec<f64> = (0..k).map(|u| targets.harvest()[u] / instance.eh_efficiency()[u]).collect();
    let gamma = targets.sinr();
    // rows scaled by the noise-free magnitude of each equation
    let eval = |p: &[f64], rho: &[f64]| -> (DVector<f64>, DMatrix<f64>) {
        let mut f = DVector::zeros(2 * k);
        let mut jac = DMatrix::zeros(2 * k, 2 * k);
        for u in 0..k {
            let total: f64 = (0..k).map(|j| p[j] * g[u][j]).sum();
            let own = p[u] * g[u][u];
            let si = 2 * u;
            let scale_i = own / gamma[u];
            f[si] = (own / gamma[u] - (total - own) - sigma[u] - delta[u] / rho[u]) / scale_i;
            for j in 0..k {
                let d = if j == u { g[u][u] / gamma[u] } else { -g[u][j] };
                jac[(si, j)] = d / scale_i;
            }
            jac[(si, k + u)] = delta[u] / (rho[u] * rho[u]) / scale_i;
            let he = 2 * u + 1;
            let scale_h = total;
            f[he] = (total + sigma[u] - energy[u] / (1.0 - rho[u])) / scale_h;
            for j in 0..k {
                jac[(he, j)] = g[u][j] / scale_h;
            }
            jac[(he, k + u)] = -energy[u] / ((1.0 - rho[u]) * (1.0 - rho[u])) / scale_h;
        }
        (f, jac)
    };
    for _ in 0..MAX_NEWTON {
        let (f, jac) = eval(&p, &rho);
        if !f.iter().all(|v| v.is_finite()) {
            return None;
        }
        if f.amax() <= RESIDUAL_TOL {
            return Some((p, rho));
        }
        let step = jac.lu().solve(&-f)?;
        // keep p > 0 and rho in (0, 1)
        let mut alpha: f64 = 1.0;
        for u in 0..k {
            let (dp, dr) = (step[u], step[k + u]);
            if dp < 0.0 {
                alpha = alpha.min(-0.9 * p[u] / dp);
            }
            if dr < 0.0 {
                alpha = alpha.min(-0.9 * rho[u] / dr);
            } else if dr > 0.0 {
                alpha = alpha.min(0.9 * (1.0 - rho[u]) / dr);
            }
        }
        for u in 0..k {
            p[u] += alpha * step[u];
            rho[u] += alpha * step[k + u];
        }
    }
    let (f, _) = eval(&p, &rho);
    (f.amax() <= 1e3 * RESIDUAL_TOL).then_some((p, rho))
}
