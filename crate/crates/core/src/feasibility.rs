//! Closed-form feasibility test: the SINR targets are achievable (for any
//! harvest targets) iff `sum_k gamma_k / (1 + gamma_k) <= rank(H)`.

use serde::Serialize;

use crate::linalg::{singular_values, CMatrix};

/// Default relative threshold on singular values when counting rank.
pub const RANK_TOL: f64 = 1e-10;

/// Number of singular values above `rel_tol` times the largest one.
pub fn effective_rank(h: &CMatrix, rel_tol: f64) -> usize {
    let s = singular_values(h);
    match s.first() {
        Some(&top) if top > 0.0 => s.iter().filter(|&&x| x > rel_tol * top).count(),
        _ => 0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FeasibilityVerdict {
    pub feasible: bool,
    /// `rank(H) - sum_k gamma_k / (1 + gamma_k)`.
    pub margin: f64,
    pub rank: usize,
    pub load: f64,
}

/// Sum of `gamma_k / (1 + gamma_k)`.
pub fn sinr_load(sinr: &[f64]) -> f64 {
    sinr.iter().map(|&g| g / (1.0 + g)).sum()
}

/// Decides feasibility from the linear SINR targets alone; harvest targets
/// never matter. A zero margin counts as feasible.
pub fn is_feasible(sinr: &[f64], h: &CMatrix, rel_tol: f64) -> FeasibilityVerdict {
    let rank = effective_rank(h, rel_tol);
    let load = sinr_load(sinr);
    let margin = rank as f64 - load;
    FeasibilityVerdict { feasible: margin >= 0.0, margin, rank, load }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_instance, ChannelConfig, NoiseParams};
    use crate::linalg::CVector;
    use num_complex::Complex64;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn orthonormal_columns_have_full_rank() {
        let h = CMatrix::identity(4, 3);
        assert_eq!(effective_rank(&h, RANK_TOL), 3);
    }

    #[test]
    fn duplicate_column_drops_rank() {
        let col = CVector::from_vec(vec![c(1.0, 0.5), c(-0.3, 0.2), c(0.0, 1.0)]);
        let h = CMatrix::from_columns(&[col.clone(), col]);
        assert_eq!(effective_rank(&h, RANK_TOL), 1);
    }

    #[test]
    fn random_square_channels_have_full_rank() {
        let cfg = ChannelConfig { seed: 17, ..ChannelConfig::default() };
        for d in 0..100 {
            let inst = generate_instance(&cfg, &NoiseParams::default(), d).unwrap();
            assert_eq!(effective_rank(inst.channels(), RANK_TOL), 4);
        }
    }

    #[test]
    fn boundary_is_feasible() {
        let col = CVector::from_vec(vec![c(1.0, 0.0), c(0.0, 1.0)]);
        let h = CMatrix::from_columns(&[col.clone(), col]);
        let v = is_feasible(&[1.0, 1.0], &h, RANK_TOL);
        assert!(v.feasible);
        assert_eq!(v.margin, 0.0);
    }

    #[test]
    fn full_rank_always_feasible() {
        let h = CMatrix::identity(4, 4);
        for g in [1e-3, 1.0, 1e3, 1e9] {
            assert!(is_feasible(&[g; 4], &h, RANK_TOL).feasible);
        }
    }

    #[test]
    fn three_identical_users_overloaded() {
        let col = CVector::from_vec(vec![c(0.3, 0.1), c(1.0, -0.4), c(0.2, 0.0), c(0.0, 0.7)]);
        let h = CMatrix::from_columns(&[col.clone(), col.clone(), col]);
        let v = is_feasible(&[10.0; 3], &h, RANK_TOL);
        assert!(!v.feasible);
        assert!((v.load - 30.0 / 11.0).abs() < 1e-15);
        assert!((v.margin - (1.0 - 30.0 / 11.0)).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn margin_monotone_in_targets(g in prop::collection::vec(1e-3f64..1e4, 4), k in 0usize..4, bump in 1.0f64..100.0) {
            let h = CMatrix::identity(4, 4);
            let base = is_feasible(&g, &h, RANK_TOL).margin;
            let mut g2 = g.clone();
            g2[k] *= bump;
            prop_assert!(is_feasible(&g2, &h, RANK_TOL).margin <= base);
        }
    }
}
