//! Zero-forcing beamforming with per-user closed-form power splitting.
//!
//! With every beam confined to the null space of the other users' channels
//! the problem separates over users; each user's PS ratio is the root in
//! `(0, 1)` of `alpha / (1 - rho) - beta / rho = 1`.

use crate::error::{Error, Result};
use crate::feasibility::{effective_rank, RANK_TOL};
use crate::linalg::{left_singular_basis, CMatrix, CVector, ONE};
use crate::model::{JbpsSolution, Method, SystemInstance, Targets};

/// Per-user quantities behind the ZF solution.
#[derive(Debug, Clone)]
pub struct ZfIntermediates {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// Orthonormal basis of the null space of `H_k^H`, one per user.
    pub null_bases: Vec<CMatrix>,
    /// `||U_k U_k^H h_k||^2`
    pub effective_gain: Vec<f64>,
    pub ps_ratios: Vec<f64>,
}

/// Orthonormal basis of `null(H_k^H)`; `interference` holds the other users'
/// channels as columns (possibly none).
pub fn null_space_basis(interference: &CMatrix, num_antennas: usize, rel_tol: f64, user: usize) -> Result<CMatrix> {
    if interference.ncols() == 0 {
        return Ok(CMatrix::identity(num_antennas, num_antennas));
    }
    if interference.nrows() != num_antennas {
        return Err(Error::DimensionMismatch(format!(
            "interference matrix has {} rows for {num_antennas} antennas",
            interference.nrows()
        )));
    }
    let (sv, u) = left_singular_basis(interference);
    let top = sv.first().copied().unwrap_or(0.0);
    let rank = sv.iter().filter(|&&s| top > 0.0 && s > rel_tol * top).count();
    if rank >= num_antennas {
        return Err(Error::NoNullSpace { user });
    }
    Ok(u.columns(rank, num_antennas - rank).into_owned())
}

/// Root in `(0, 1)` of `rho^2 + (alpha + beta - 1) rho - beta = 0`, computed
/// without cancellation when `alpha + beta - 1` is large and positive.
pub fn zf_ps_ratio(alpha: f64, beta: f64) -> f64 {
    let b = alpha + beta - 1.0;
    let disc = (b * b + 4.0 * beta).sqrt();
    if b > 0.0 {
        2.0 * beta / (b + disc)
    } else {
        (disc - b) / 2.0
    }
}

fn interference_matrix(h: &CMatrix, k: usize) -> CMatrix {
    let cols: Vec<CVector> = (0..h.ncols()).filter(|&j| j != k).map(|j| h.column(j).into_owned()).collect();
    if cols.is_empty() {
        CMatrix::zeros(h.nrows(), 0)
    } else {
        CMatrix::from_columns(&cols)
    }
}

pub fn zf_intermediates(instance: &SystemInstance, targets: &Targets) -> Result<ZfIntermediates> {
    targets.check_against(instance)?;
    let nt = instance.num_antennas();
    let k = instance.num_users();
    if nt < k {
        return Err(Error::ZfInapplicable(format!("N_t = {nt} < K = {k}")));
    }
    let rank = effective_rank(instance.channels(), RANK_TOL);
    if rank < k {
        return Err(Error::ZfInapplicable(format!("rank(H) = {rank} < K = {k}")));
    }
    let h = instance.channels();
    let mut out = ZfIntermediates {
        alpha: Vec::with_capacity(k),
        beta: Vec::with_capacity(k),
        null_bases: Vec::with_capacity(k),
        effective_gain: Vec::with_capacity(k),
        ps_ratios: Vec::with_capacity(k),
    };
    for u in 0..k {
        let gamma = targets.sinr()[u];
        let sigma2 = instance.antenna_noise()[u];
        let delta2 = instance.id_noise()[u];
        let zeta = instance.eh_efficiency()[u];
        let alpha = targets.harvest()[u] / (zeta * (gamma + 1.0) * sigma2);
        let beta = gamma * delta2 / ((gamma + 1.0) * sigma2);
        let basis = null_space_basis(&interference_matrix(h, u), nt, RANK_TOL, u)?;
        let hk = instance.channel(u);
        let projected = &basis * (basis.adjoint() * &hk);
        out.effective_gain.push(projected.norm_squared());
        out.ps_ratios.push(zf_ps_ratio(alpha, beta));
        out.alpha.push(alpha);
        out.beta.push(beta);
        out.null_bases.push(basis);
    }
    Ok(out)
}

/// ZF beamformers and PS ratios; both constraints of every user are tight.
pub fn solve_zf(instance: &SystemInstance, targets: &Targets) -> Result<JbpsSolution> {
    let parts = zf_intermediates(instance, targets)?;
    let nt = instance.num_antennas();
    let k = instance.num_users();
    let mut v = CMatrix::zeros(nt, k);
    for u in 0..k {
        let rho = parts.ps_ratios[u];
        let tau = targets.sinr()[u] * (instance.antenna_noise()[u] + instance.id_noise()[u] / rho);
        let basis = &parts.null_bases[u];
        let projected = basis * (basis.adjoint() * instance.channel(u));
        let scale = tau.sqrt() / parts.effective_gain[u];
        v.set_column(u, &(projected * (ONE * scale)));
    }
    JbpsSolution::evaluate(instance, v, parts.ps_ratios, Method::ZeroForcing)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_instance, ChannelConfig, NoiseParams};
    use crate::linalg::{inner, ZERO};
    use crate::model::check_solution;
    use num_complex::Complex64;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn scenario_instance(seed: u64, draw: u64) -> SystemInstance {
        let cfg = ChannelConfig { seed, ..ChannelConfig::default() };
        generate_instance(&cfg, &NoiseParams::default(), draw).unwrap()
    }

    fn defining_residual(alpha: f64, beta: f64, rho: f64) -> f64 {
        // alpha / (1 - rho) - beta / rho = 1, multiplied through by rho (1 - rho)
        let lhs = alpha * rho - beta * (1.0 - rho);
        let rhs = rho * (1.0 - rho);
        (lhs - rhs).abs() / (alpha * rho).abs().max(beta * (1.0 - rho)).max(rhs)
    }

    #[test]
    fn null_space_of_first_axis() {
        let e1 = CMatrix::from_column_slice(3, 1, &[c(1.0, 0.0), ZERO, ZERO]);
        let u = null_space_basis(&e1, 3, RANK_TOL, 0).unwrap();
        assert_eq!(u.ncols(), 2);
        assert!((e1.adjoint() * &u).norm() < 1e-14);
        assert!((u.adjoint() * &u - CMatrix::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn empty_interference_gives_identity() {
        let u = null_space_basis(&CMatrix::zeros(4, 0), 4, RANK_TOL, 0).unwrap();
        assert_eq!(u, CMatrix::identity(4, 4));
    }

    #[test]
    fn full_interference_has_no_null_space() {
        let h = CMatrix::identity(2, 2);
        assert!(matches!(null_space_basis(&h, 2, RANK_TOL, 1), Err(Error::NoNullSpace { user: 1 })));
    }

    #[test]
    fn projectors_are_idempotent_and_hermitian() {
        let inst = scenario_instance(4, 0);
        let parts = zf_intermediates(&inst, &Targets::uniform(4, 10.0, 1e-4).unwrap()).unwrap();
        for (k, u) in parts.null_bases.iter().enumerate() {
            let p = u * u.adjoint();
            assert!((&p * &p - &p).norm() <= 1e-12 * p.norm());
            assert!((p.adjoint() - &p).norm() <= 1e-12);
            assert!((u.adjoint() * u - CMatrix::identity(u.ncols(), u.ncols())).norm() < 1e-12);
            let hk = interference_matrix(inst.channels(), k);
            assert!((hk.adjoint() * u).norm() <= 1e-12 * hk.norm());
        }
    }

    #[test]
    fn golden_ratio_root() {
        let rho = zf_ps_ratio(1.0, 1.0);
        assert!((rho - 0.618_033_988_749_894_8).abs() < 1e-15);
        assert!(defining_residual(1.0, 1.0, rho) < 1e-15);
    }

    #[test]
    fn high_snr_regime_root() {
        let (gamma, delta2, sigma2, zeta, e): (f64, f64, f64, f64, f64) = (10.0, 1e-8, 1e-10, 0.5, 1e-4);
        let alpha = e / (zeta * (gamma + 1.0) * sigma2);
        let beta = gamma * delta2 / ((gamma + 1.0) * sigma2);
        assert!((alpha / 1.818_181_818_18e5 - 1.0).abs() < 1e-10);
        assert!((beta / 90.909_090_909 - 1.0).abs() < 1e-10);
        let rho = zf_ps_ratio(alpha, beta);
        assert!((rho / 4.9975e-4 - 1.0).abs() < 1e-4, "rho = {rho}");
        // the sigma^2 = 0 formula sits about rho / (alpha + beta) below the exact root
        let approx = gamma * delta2 / (e / zeta + gamma * delta2);
        let gap = rho / approx - 1.0;
        assert!(gap > 0.0 && (gap / (1.0 / (alpha + beta)) - 1.0).abs() < 1e-2, "gap = {gap}");
        // rho must solve gamma (sigma^2 + delta^2 / rho) = e / (zeta (1 - rho)) - sigma^2
        let lhs = gamma * (sigma2 + delta2 / rho);
        let rhs = e / (zeta * (1.0 - rho)) - sigma2;
        assert!((lhs - rhs).abs() <= 1e-9 * rhs);
    }

    #[test]
    fn more_harvest_lowers_split() {
        let beta = 90.0;
        let mut prev = 1.0;
        for i in 0..40 {
            let alpha = 1e-3 * 2f64.powi(i);
            let rho = zf_ps_ratio(alpha, beta);
            assert!(rho < prev);
            prev = rho;
        }
    }

    #[test]
    fn single_user_closed_form() {
        let h = CMatrix::from_column_slice(3, 1, &[c(1e-2, 3e-3), c(-2e-3, 5e-3), c(0.0, -7e-3)]);
        let inst = SystemInstance::uniform(h.clone(), 1e-10, 1e-8, 0.5).unwrap();
        let t = Targets::uniform(1, 10.0, 1e-4).unwrap();
        let sol = solve_zf(&inst, &t).unwrap();
        let rho = sol.ps_ratios[0];
        let tau = 10.0 * (1e-10 + 1e-8 / rho);
        let hn = h.column(0).norm_squared();
        assert!((sol.total_power / (tau / hn) - 1.0).abs() < 1e-12);
        let expected = h.column(0).into_owned() * Complex64::new(tau.sqrt() / hn, 0.0);
        assert!((sol.beamformer(0) - &expected).norm() <= 1e-12 * expected.norm());
    }

    #[test]
    fn constraints_tight_and_interference_nulled() {
        for draw in 0..10 {
            let inst = scenario_instance(21, draw);
            let t = Targets::uniform(4, 10.0, 1e-4).unwrap();
            let sol = solve_zf(&inst, &t).unwrap();
            let report = check_solution(&inst, &t, &sol, 1e-9).unwrap();
            assert!(report.max_abs_slack() <= 1e-9, "slack {}", report.max_abs_slack());
            for k in 0..4 {
                let vk = sol.beamformer(k);
                for i in (0..4).filter(|&i| i != k) {
                    let hi = inst.channel(i);
                    assert!(inner(&hi, &vk).norm() <= 1e-9 * hi.norm() * vk.norm());
                }
                let parts = zf_intermediates(&inst, &t).unwrap();
                assert!(defining_residual(parts.alpha[k], parts.beta[k], parts.ps_ratios[k]) < 1e-9);
            }
        }
    }

    #[test]
    fn users_decouple() {
        let inst = scenario_instance(8, 2);
        let t1 = Targets::new(vec![10.0, 3.0, 7.0, 1.0], vec![1e-4, 2e-4, 1e-5, 1e-3]).unwrap();
        let t2 = Targets::new(vec![10.0, 30.0, 0.5, 100.0], vec![1e-4, 1e-6, 1e-2, 1e-4]).unwrap();
        let a = solve_zf(&inst, &t1).unwrap();
        let b = solve_zf(&inst, &t2).unwrap();
        assert_eq!(a.beamformer(0), b.beamformer(0));
        assert_eq!(a.ps_ratios[0], b.ps_ratios[0]);
    }

    #[test]
    fn remark_limit_as_antenna_noise_vanishes() {
        let (gamma, delta2, zeta, e) = (10.0, 1e-8, 0.5, 1e-4);
        let limit = gamma * delta2 / (e / zeta + gamma * delta2);
        let mut prev_err = f64::INFINITY;
        for p in 10..=16 {
            let sigma2 = 10f64.powi(-p);
            let alpha = e / (zeta * (gamma + 1.0) * sigma2);
            let beta = gamma * delta2 / ((gamma + 1.0) * sigma2);
            let err = (zf_ps_ratio(alpha, beta) - limit).abs();
            // error shrinks proportionally to sigma^2
            assert!(err <= 10.0 * sigma2 / delta2 * limit, "sigma2 {sigma2}: err {err}");
            assert!(err <= prev_err);
            prev_err = err;
        }
    }

    #[test]
    fn rejects_more_users_than_antennas() {
        let cfg = ChannelConfig::default_scenario(3, 4, 1);
        let inst = generate_instance(&cfg, &NoiseParams::default(), 0).unwrap();
        let err = solve_zf(&inst, &Targets::uniform(4, 1.0, 1e-4).unwrap()).unwrap_err();
        assert!(matches!(err, Error::ZfInapplicable(_)));
        assert!(err.to_string().contains("ZF requires N_t \u{2265} K"));
    }

    #[test]
    fn rejects_dependent_channels() {
        let col = CVector::from_vec(vec![c(1e-2, 0.0), c(0.0, 1e-2), c(1e-3, 1e-3)]);
        let h = CMatrix::from_columns(&[col.clone(), col * c(2.0, 0.0)]);
        let inst = SystemInstance::uniform(h, 1e-10, 1e-8, 0.5).unwrap();
        assert!(matches!(
            solve_zf(&inst, &Targets::uniform(2, 1.0, 1e-4).unwrap()),
            Err(Error::ZfInapplicable(_))
        ));
    }
}
