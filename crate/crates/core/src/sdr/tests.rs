use super::*;
use crate::channel::{generate_instance, ChannelConfig, NoiseParams};
use crate::linalg::quad_form;
use crate::model::{check_solution, db_to_linear, dbm_to_watts};
use crate::zf::solve_zf;
use num_complex::Complex64;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn scenario_instance(nt: usize, k: usize, seed: u64, draw: u64) -> SystemInstance {
    generate_instance(&ChannelConfig::default_scenario(nt, k, seed), &NoiseParams::default(), draw).unwrap()
}

fn solve(inst: &SystemInstance, t: &Targets) -> RelaxationOutcome {
    solve_relaxation(inst, t, &SdrSolveOptions::default()).unwrap()
}

#[test]
fn rank_one_input_is_recovered_up_to_phase() {
    let w = CVector::from_vec(vec![c(0.3, -1.2), c(2.0, 0.5), c(-0.7, 0.1)]);
    let ext = extract_rank_one(&outer(&w), 1e-6).unwrap();
    assert!(ext.ratio <= 1e-12);
    let phase = crate::linalg::inner(&ext.beamformer, &w);
    let aligned = &ext.beamformer * (phase / phase.norm());
    assert!((aligned - &w).norm() < 1e-12 * w.norm());
    // largest-modulus entry is real nonnegative
    let pivot = ext.beamformer[1];
    assert!(pivot.re > 0.0 && pivot.im.abs() < 1e-15);
}

#[test]
fn identity_is_not_rank_one() {
    let err = extract_rank_one(&CMatrix::identity(2, 2), 1e-6).unwrap_err();
    assert_eq!(err, Error::RankOneViolation { user: 0, ratio: 1.0 });
}

#[test]
fn extraction_rejects_zero_matrix() {
    assert!(matches!(extract_rank_one(&CMatrix::zeros(3, 3), 1e-6), Err(Error::InvalidInput(_))));
}

#[test]
fn engine_quadratics_match_direct_complex_sum() {
    let inst = scenario_instance(4, 3, 5, 1);
    let t = Targets::uniform(3, 10.0, 1e-4).unwrap();
    let out = solve(&inst, &t);
    let prob = BarrierProblem {
        dim: 4,
        num_blocks: 3,
        channels: (0..3).map(|u| inst.channel(u)).collect(),
        constraints: vec![],
        lower: vec![],
        block_weight: 1.0,
        scalar_objective: vec![],
        equalities: vec![],
    };
    let p = Point { blocks: out.solution.x.clone(), scalars: vec![] };
    let q = prob.quadratics(&p);
    for u in 0..3 {
        let h = inst.channel(u);
        for (j, x) in out.solution.x.iter().enumerate() {
            let mut direct = Complex64::new(0.0, 0.0);
            for a in 0..4 {
                for b in 0..4 {
                    direct += h[a].conj() * x[(a, b)] * h[b];
                }
            }
            assert!(direct.im.abs() <= 1e-12 * direct.norm());
            assert!((q[u][j] - direct.re).abs() <= 1e-12 * direct.re.abs());
        }
    }
}

#[test]
fn single_user_matches_closed_form() {
    for seed in 0..5 {
        let inst = scenario_instance(4, 1, seed, 0);
        let t = Targets::uniform(1, db_to_linear(10.0), dbm_to_watts(-10.0)).unwrap();
        let out = solve(&inst, &t);
        assert_eq!(out.solution.status, RelaxationStatus::Optimal);
        let zf = solve_zf(&inst, &t).unwrap();
        assert!((out.solution.objective / zf.total_power - 1.0).abs() < 1e-6);
    }
}

#[test]
fn three_identical_users_are_infeasible() {
    let col = CVector::from_vec(vec![c(3e-3, 1e-3), c(1e-2, -4e-3), c(2e-3, 0.0), c(0.0, 7e-3)]);
    let h = CMatrix::from_columns(&[col.clone(), col.clone(), col]);
    let inst = SystemInstance::uniform(h, 1e-10, 1e-8, 0.5).unwrap();
    let t = Targets::uniform(3, 10.0, 1e-4).unwrap();
    let out = solve(&inst, &t);
    assert_eq!(out.solution.status, RelaxationStatus::Infeasible);
    assert!(out.certificate.is_none());
    assert!(matches!(solve_jbps_optimal(&inst, &t, &SdrSolveOptions::default()), Err(Error::Infeasible(_))));
}

#[test]
fn phase_one_certifies_overloaded_rank_deficient_channel() {
    // two users share one direction, third is orthogonal: rank 2, load 3 * 10/11
    let a = CVector::from_vec(vec![c(1e-2, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
    let b = CVector::from_vec(vec![c(0.0, 0.0), c(5e-3, 5e-3), c(0.0, 0.0)]);
    let h = CMatrix::from_columns(&[a.clone(), a * c(0.0, 2.0), b]);
    let inst = SystemInstance::uniform(h, 1e-10, 1e-8, 0.5).unwrap();
    let t = Targets::uniform(3, 10.0, 1e-4).unwrap();
    let opts = SdrSolveOptions { init: InitStrategy::PhaseOne, ..SdrSolveOptions::default() };
    let out = solve_relaxation(&inst, &t, &opts).unwrap();
    assert_eq!(out.solution.status, RelaxationStatus::Infeasible);
}

#[test]
fn boundary_targets_report_numerical_failure() {
    let col = CVector::from_vec(vec![c(1e-2, 0.0), c(0.0, 1e-2)]);
    let h = CMatrix::from_columns(&[col.clone(), col]);
    let inst = SystemInstance::uniform(h, 1e-10, 1e-8, 0.5).unwrap();
    let t = Targets::uniform(2, 1.0, 1e-4).unwrap();
    let err = solve_jbps_optimal(&inst, &t, &SdrSolveOptions::default()).unwrap_err();
    assert!(matches!(err, Error::NumericalFailure(ref m) if m.contains("boundary")), "{err:?}");
}

#[test]
fn default_scenario_solution_is_tight_and_certified() {
    let inst = scenario_instance(4, 4, 2024, 0);
    let t = Targets::uniform(4, db_to_linear(10.0), dbm_to_watts(-10.0)).unwrap();
    let out = solve(&inst, &t);
    assert_eq!(out.solution.status, RelaxationStatus::Optimal);
    let cert = out.certificate.as_ref().unwrap();
    let report = verify_kkt(&out.solution, cert, &inst, &t, 1e-6);
    assert!(report.all_passed(), "{report:?}");

    let sol = solve_jbps_optimal(&inst, &t, &SdrSolveOptions::default()).unwrap();
    let rep = check_solution(&inst, &t, &sol, 1e-6).unwrap();
    assert!(rep.feasible);
    assert!(rep.max_abs_slack() <= 1e-6, "{rep:?}");
    assert!((sol.total_power / out.solution.objective - 1.0).abs() <= 1e-6);
    for &r in &sol.ps_ratios {
        assert!(r > 1e-9 && r < 1.0 - 1e-9);
    }
}

#[test]
fn stored_dual_matrices_match_rebuilt_ones() {
    let inst = scenario_instance(4, 3, 8, 3);
    let t = Targets::uniform(3, db_to_linear(5.0), dbm_to_watts(-20.0)).unwrap();
    let out = solve(&inst, &t);
    let cert = out.certificate.unwrap();
    let rebuilt = dual_matrices(&inst, &t, &cert.lambda, &cert.mu);
    for (a, b) in rebuilt.iter().zip(&cert.dual_matrices) {
        assert!((a - b).norm() <= 1e-12 * (1.0 + b.norm()));
    }
    // independent construction straight from the definition
    for u in 0..3 {
        let mut a = CMatrix::identity(4, 4);
        for j in 0..3 {
            let h = inst.channel(j);
            let w = if j == u { cert.lambda[j] - cert.mu[j] - cert.lambda[j] / t.sinr()[j] - cert.lambda[j] } else { cert.lambda[j] - cert.mu[j] };
            a += &h * h.adjoint() * c(w, 0.0);
        }
        assert!((&a - &cert.dual_matrices[u]).norm() <= 1e-12 * (1.0 + a.norm()));
    }
}

#[test]
fn certificate_is_sensitive_to_multipliers() {
    let inst = scenario_instance(4, 4, 77, 0);
    let t = Targets::uniform(4, db_to_linear(10.0), dbm_to_watts(-10.0)).unwrap();
    let out = solve(&inst, &t);
    let cert = out.certificate.unwrap();

    let mut bumped = cert.clone();
    bumped.lambda[0] *= 1.1;
    let rep = verify_kkt(&out.solution, &bumped, &inst, &t, 1e-6);
    assert!(!rep.dual_psd || !rep.complementary, "{rep:?}");

    let mut zeroed = cert.clone();
    zeroed.mu[0] = 0.0;
    let rep = verify_kkt(&out.solution, &zeroed, &inst, &t, 1e-6);
    assert!(!rep.duals_positive);
}

#[test]
fn both_starting_points_reach_same_optimum() {
    let inst = scenario_instance(4, 4, 3, 9);
    let t = Targets::uniform(4, db_to_linear(10.0), dbm_to_watts(-10.0)).unwrap();
    let a = solve(&inst, &t);
    let opts = SdrSolveOptions { init: InitStrategy::PhaseOne, ..SdrSolveOptions::default() };
    let b = solve_relaxation(&inst, &t, &opts).unwrap();
    assert_eq!(b.solution.status, RelaxationStatus::Optimal);
    assert!((a.solution.objective / b.solution.objective - 1.0).abs() < 1e-6);
}

#[test]
fn relaxation_lower_bounds_suboptimal_methods() {
    for draw in 0..5 {
        let inst = scenario_instance(4, 4, 11, draw);
        let t = Targets::uniform(4, db_to_linear(0.0), dbm_to_watts(0.0)).unwrap();
        let out = solve(&inst, &t);
        let tol = 1e-9 + 1e-6 * out.solution.objective;
        let zf = solve_zf(&inst, &t).unwrap();
        let so = solve_sinr_opt(&inst, &t).unwrap();
        assert!(out.solution.objective <= zf.total_power + tol);
        assert!(out.solution.objective <= so.total_power + tol);
    }
}

#[test]
fn more_harvest_needs_more_power() {
    let inst = scenario_instance(4, 4, 21, 4);
    let opts = SdrSolveOptions::default();
    let mut prev = 0.0;
    for e in [-20.0, -10.0, 0.0] {
        let t = Targets::uniform(4, db_to_linear(10.0), dbm_to_watts(e)).unwrap();
        let p = solve_jbps_optimal(&inst, &t, &opts).unwrap().total_power;
        assert!(p > prev);
        prev = p;
    }
}

#[test]
fn relaxed_point_is_hermitian_and_psd() {
    let inst = scenario_instance(6, 3, 4, 2);
    let t = Targets::uniform(3, db_to_linear(20.0), dbm_to_watts(-20.0)).unwrap();
    let out = solve(&inst, &t);
    for x in &out.solution.x {
        assert!((x - x.adjoint()).norm() <= 1e-12 * x.norm());
        let (eig, _) = hermitian_eig(x);
        assert!(*eig.last().unwrap() >= -1e-9 * trace_re(x));
    }
    let h = inst.channel(0);
    assert!(quad_form(&out.solution.x[0], &h) > 0.0);
}

#[test]
fn invalid_options_are_rejected() {
    let inst = scenario_instance(4, 2, 0, 0);
    let t = Targets::uniform(2, 1.0, 1e-4).unwrap();
    let bad = SdrSolveOptions { kkt_tol: 0.0, ..SdrSolveOptions::default() };
    assert!(matches!(solve_relaxation(&inst, &t, &bad), Err(Error::InvalidInput(_))));
    let bad = SdrSolveOptions { max_iterations: 0, ..SdrSolveOptions::default() };
    assert!(matches!(solve_relaxation(&inst, &t, &bad), Err(Error::InvalidInput(_))));
}

#[test]
fn tiny_budget_is_reported() {
    let inst = scenario_instance(4, 4, 0, 0);
    let t = Targets::uniform(4, 10.0, 1e-4).unwrap();
    let opts = SdrSolveOptions { max_iterations: 3, ..SdrSolveOptions::default() };
    let out = solve_relaxation(&inst, &t, &opts).unwrap();
    assert_eq!(out.solution.status, RelaxationStatus::NumericalFailure);
    assert!(out.solution.diagnostic.unwrap().contains("budget"));
}
