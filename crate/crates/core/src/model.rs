//! Problem data, candidate solutions and the two receiver metrics.
//!
//! All quantities are linear (watts, linear SINR). Decibel conversions live at
//! the boundaries only (`dbm_to_watts` and friends).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{inner, CMatrix, CVector};

/// Lower edge of the power-splitting guard band; a ratio counts as strictly
/// inside `(0, 1)` when it lies in `[PS_GUARD, 1 - PS_GUARD]`.
pub const PS_GUARD: f64 = 1e-9;

/// Physical data of one downlink: channels, noise powers and harvesting
/// efficiencies for every user.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemInstance {
    channels: CMatrix,
    antenna_noise: Vec<f64>,
    id_noise: Vec<f64>,
    eh_efficiency: Vec<f64>,
}

impl SystemInstance {
    /// `channels` is `N_t x K`; column `k` is the conjugated channel `h_k`.
    pub fn new(
        channels: CMatrix,
        antenna_noise: Vec<f64>,
        id_noise: Vec<f64>,
        eh_efficiency: Vec<f64>,
    ) -> Result<Self> {
        let (nt, k) = channels.shape();
        if nt == 0 || k == 0 {
            return Err(Error::InvalidInput("need at least one antenna and one user".into()));
        }
        for (name, v) in [
            ("antenna_noise", &antenna_noise),
            ("id_noise", &id_noise),
            ("eh_efficiency", &eh_efficiency),
        ] {
            if v.len() != k {
                return Err(Error::DimensionMismatch(format!(
                    "{name} has {} entries for {k} users",
                    v.len()
                )));
            }
        }
        if let Some(u) = antenna_noise.iter().chain(&id_noise).position(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidInput(format!(
                "noise power #{u} must be finite and strictly positive"
            )));
        }
        if let Some(u) = eh_efficiency.iter().position(|&z| !(z > 0.0 && z <= 1.0)) {
            return Err(Error::InvalidInput(format!(
                "energy harvesting efficiency of user {u} must lie in (0, 1]"
            )));
        }
        if channels.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidInput("channel entries must be finite".into()));
        }
        for u in 0..k {
            if channels.column(u).iter().all(|z| z.norm_sqr() == 0.0) {
                return Err(Error::InvalidInput(format!("channel of user {u} is identically zero")));
            }
        }
        Ok(Self { channels, antenna_noise, id_noise, eh_efficiency })
    }

    /// Same noise and efficiency for every user.
    pub fn uniform(channels: CMatrix, antenna_noise: f64, id_noise: f64, eh_efficiency: f64) -> Result<Self> {
        let k = channels.ncols();
        Self::new(channels, vec![antenna_noise; k], vec![id_noise; k], vec![eh_efficiency; k])
    }

    pub fn num_antennas(&self) -> usize {
        self.channels.nrows()
    }

    pub fn num_users(&self) -> usize {
        self.channels.ncols()
    }

    pub fn channels(&self) -> &CMatrix {
        &self.channels
    }

    pub fn channel(&self, k: usize) -> CVector {
        self.channels.column(k).into_owned()
    }

    pub fn antenna_noise(&self) -> &[f64] {
        &self.antenna_noise
    }

    pub fn id_noise(&self) -> &[f64] {
        &self.id_noise
    }

    pub fn eh_efficiency(&self) -> &[f64] {
        &self.eh_efficiency
    }

    /// `|h_k^H v_j|^2` for every pair, row `k` = receiver, column `j` = beam.
    pub fn gain_matrix(&self, beamformers: &CMatrix) -> Result<Vec<Vec<f64>>> {
        self.check_beamformer_shape(beamformers)?;
        let k = self.num_users();
        let gains = self.channels.adjoint() * beamformers;
        Ok((0..k).map(|r| (0..k).map(|c| gains[(r, c)].norm_sqr()).collect()).collect())
    }

    fn check_beamformer_shape(&self, v: &CMatrix) -> Result<()> {
        if v.shape() != self.channels.shape() {
            return Err(Error::DimensionMismatch(format!(
                "beamformers are {}x{}, expected {}x{}",
                v.nrows(),
                v.ncols(),
                self.num_antennas(),
                self.num_users()
            )));
        }
        Ok(())
    }

    fn check_user(&self, k: usize) -> Result<()> {
        if k >= self.num_users() {
            return Err(Error::IndexOutOfRange { index: k, num_users: self.num_users() });
        }
        Ok(())
    }
}

/// Per-user SINR targets (linear) and harvested-power targets (watts).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Targets {
    sinr: Vec<f64>,
    harvest: Vec<f64>,
}

impl Targets {
    pub fn new(sinr: Vec<f64>, harvest: Vec<f64>) -> Result<Self> {
        if sinr.len() != harvest.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} SINR targets but {} harvest targets",
                sinr.len(),
                harvest.len()
            )));
        }
        if sinr.is_empty() {
            return Err(Error::InvalidInput("no targets given".into()));
        }
        if sinr.iter().chain(&harvest).any(|&x| !(x > 0.0 && x.is_finite())) {
            return Err(Error::InvalidInput("targets must be finite and strictly positive".into()));
        }
        Ok(Self { sinr, harvest })
    }

    pub fn uniform(num_users: usize, sinr: f64, harvest: f64) -> Result<Self> {
        Self::new(vec![sinr; num_users], vec![harvest; num_users])
    }

    pub fn sinr(&self) -> &[f64] {
        &self.sinr
    }

    pub fn harvest(&self) -> &[f64] {
        &self.harvest
    }

    pub fn len(&self) -> usize {
        self.sinr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sinr.is_empty()
    }

    pub(crate) fn check_against(&self, instance: &SystemInstance) -> Result<()> {
        if self.len() != instance.num_users() {
            return Err(Error::DimensionMismatch(format!(
                "{} targets for {} users",
                self.len(),
                instance.num_users()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    SdrOptimal,
    ZeroForcing,
    SinrOptimal,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::SdrOptimal, Method::ZeroForcing, Method::SinrOptimal];

    /// Name used on the command line and in CSV output.
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::SdrOptimal => "optimal",
            Method::ZeroForcing => "zf",
            Method::SinrOptimal => "sinr-opt",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "optimal" => Ok(Method::SdrOptimal),
            "zf" => Ok(Method::ZeroForcing),
            "sinr-opt" => Ok(Method::SinrOptimal),
            other => Err(Error::Parse(format!("unknown method '{other}'"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Beamformers and power-splitting ratios together with the metrics they
/// achieve on the instance they were computed for.
#[derive(Debug, Clone, PartialEq)]
pub struct JbpsSolution {
    pub beamformers: CMatrix,
    pub ps_ratios: Vec<f64>,
    pub total_power: f64,
    pub method: Method,
    pub per_user_sinr: Vec<f64>,
    pub per_user_harvest: Vec<f64>,
}

impl JbpsSolution {
    /// Evaluates the metrics of `(beamformers, ps_ratios)` on `instance`.
    pub fn evaluate(
        instance: &SystemInstance,
        beamformers: CMatrix,
        ps_ratios: Vec<f64>,
        method: Method,
    ) -> Result<Self> {
        instance.check_beamformer_shape(&beamformers)?;
        if ps_ratios.len() != instance.num_users() {
            return Err(Error::DimensionMismatch(format!(
                "{} PS ratios for {} users",
                ps_ratios.len(),
                instance.num_users()
            )));
        }
        let k = instance.num_users();
        let mut per_user_sinr = Vec::with_capacity(k);
        let mut per_user_harvest = Vec::with_capacity(k);
        for u in 0..k {
            per_user_sinr.push(achieved_sinr(instance, &beamformers, &ps_ratios, u)?);
            per_user_harvest.push(harvested_power(instance, &beamformers, &ps_ratios, u)?);
        }
        let total_power = beamformers.iter().map(|z| z.norm_sqr()).sum();
        Ok(Self { beamformers, ps_ratios, total_power, method, per_user_sinr, per_user_harvest })
    }

    pub fn beamformer(&self, k: usize) -> CVector {
        self.beamformers.column(k).into_owned()
    }
}

/// Relative constraint slacks of a candidate solution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstraintReport {
    pub sinr_slack: Vec<f64>,
    pub harvest_slack: Vec<f64>,
    pub feasible: bool,
    pub tolerance: f64,
}

impl ConstraintReport {
    /// Largest relative violation over both constraint families (0 when all
    /// constraints hold).
    pub fn max_violation(&self) -> f64 {
        self.sinr_slack
            .iter()
            .chain(&self.harvest_slack)
            .fold(0.0_f64, |acc, &s| acc.max(-s))
    }

    /// Largest slack magnitude; small values mean every constraint is tight.
    pub fn max_abs_slack(&self) -> f64 {
        self.sinr_slack.iter().chain(&self.harvest_slack).fold(0.0_f64, |acc, &s| acc.max(s.abs()))
    }
}

fn ps_ratio(instance: &SystemInstance, rho: &[f64], k: usize) -> Result<f64> {
    instance.check_user(k)?;
    if rho.len() != instance.num_users() {
        return Err(Error::DimensionMismatch(format!(
            "{} PS ratios for {} users",
            rho.len(),
            instance.num_users()
        )));
    }
    let r = rho[k];
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::InvalidPsRatio { user: k, value: r });
    }
    Ok(r)
}

fn received_terms(instance: &SystemInstance, v: &CMatrix, k: usize) -> Result<(f64, f64)> {
    instance.check_beamformer_shape(v)?;
    let h = instance.channels.column(k).into_owned();
    let mut signal = 0.0;
    let mut interference = 0.0;
    for j in 0..v.ncols() {
        let g = inner(&h, &v.column(j).into_owned()).norm_sqr();
        if j == k {
            signal = g;
        } else {
            interference += g;
        }
    }
    Ok((signal, interference))
}

/// SINR at the information decoder of user `k`.
pub fn achieved_sinr(instance: &SystemInstance, v: &CMatrix, rho: &[f64], k: usize) -> Result<f64> {
    let r = ps_ratio(instance, rho, k)?;
    let (signal, interference) = received_terms(instance, v, k)?;
    let sigma2 = instance.antenna_noise[k];
    let delta2 = instance.id_noise[k];
    Ok(r * signal / (r * interference + r * sigma2 + delta2))
}

/// Power collected by the energy harvester of user `k`, in watts.
pub fn harvested_power(instance: &SystemInstance, v: &CMatrix, rho: &[f64], k: usize) -> Result<f64> {
    let r = ps_ratio(instance, rho, k)?;
    let (signal, interference) = received_terms(instance, v, k)?;
    let zeta = instance.eh_efficiency[k];
    Ok(zeta * (1.0 - r) * (signal + interference + instance.antenna_noise[k]))
}

/// Slack report of `solution` against `targets`; `tol` is relative.
pub fn check_solution(
    instance: &SystemInstance,
    targets: &Targets,
    solution: &JbpsSolution,
    tol: f64,
) -> Result<ConstraintReport> {
    targets.check_against(instance)?;
    instance.check_beamformer_shape(&solution.beamformers)?;
    let k = instance.num_users();
    let mut sinr_slack = Vec::with_capacity(k);
    let mut harvest_slack = Vec::with_capacity(k);
    for u in 0..k {
        let s = achieved_sinr(instance, &solution.beamformers, &solution.ps_ratios, u)?;
        let e = harvested_power(instance, &solution.beamformers, &solution.ps_ratios, u)?;
        sinr_slack.push(s / targets.sinr[u] - 1.0);
        harvest_slack.push(e / targets.harvest[u] - 1.0);
    }
    let in_band = solution.ps_ratios.iter().all(|&r| (PS_GUARD..=1.0 - PS_GUARD).contains(&r));
    let feasible = in_band && sinr_slack.iter().chain(&harvest_slack).all(|&s| s >= -tol);
    Ok(ConstraintReport { sinr_slack, harvest_slack, feasible, tolerance: tol })
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * watts.log10() + 30.0
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::ZERO;
    use num_complex::Complex64;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_case(seed: u64, nt: usize, k: usize) -> (SystemInstance, CMatrix, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gen = |n: usize| -> CMatrix {
            CMatrix::from_fn(nt, n, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        };
        let h = gen(k);
        let v = gen(k);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let inst = SystemInstance::new(
            h,
            (0..k).map(|_| rng.random_range(0.1..2.0)).collect(),
            (0..k).map(|_| rng.random_range(0.1..2.0)).collect(),
            (0..k).map(|_| rng.random_range(0.1..1.0)).collect(),
        )
        .unwrap();
        let rho = (0..k).map(|_| rng.random_range(0.05..0.95)).collect();
        (inst, v, rho)
    }

    // Element-by-element re-evaluation of the two metric formulas.
    fn naive_metrics(inst: &SystemInstance, v: &CMatrix, rho: &[f64], k: usize) -> (f64, f64) {
        let nt = inst.num_antennas();
        let mut gains = Vec::new();
        for j in 0..v.ncols() {
            let mut acc = ZERO;
            for a in 0..nt {
                acc += inst.channels()[(a, k)].conj() * v[(a, j)];
            }
            gains.push(acc.re * acc.re + acc.im * acc.im);
        }
        let interference: f64 = gains.iter().enumerate().filter(|(j, _)| *j != k).map(|(_, g)| g).sum();
        let sinr = rho[k] * gains[k]
            / (rho[k] * interference + rho[k] * inst.antenna_noise()[k] + inst.id_noise()[k]);
        let total: f64 = gains.iter().sum();
        let harvest = inst.eh_efficiency()[k] * (1.0 - rho[k]) * (total + inst.antenna_noise()[k]);
        (sinr, harvest)
    }

    #[test]
    fn single_user_sinr() {
        let p: f64 = 3.7;
        let h = CMatrix::from_column_slice(2, 1, &[c(1.0, 0.0), ZERO]);
        let inst = SystemInstance::uniform(h, 1.0, 1.0, 1.0).unwrap();
        let v = CMatrix::from_column_slice(2, 1, &[c(p.sqrt(), 0.0), ZERO]);
        let s = achieved_sinr(&inst, &v, &[0.5], 0).unwrap();
        assert!((s - p / 3.0).abs() < 1e-15);
    }

    #[test]
    fn orthogonal_beam_has_zero_sinr() {
        let h = CMatrix::from_column_slice(2, 1, &[c(1.0, 0.0), ZERO]);
        let inst = SystemInstance::uniform(h, 1.0, 1.0, 1.0).unwrap();
        let v = CMatrix::from_column_slice(2, 1, &[ZERO, c(0.0, 2.0)]);
        assert_eq!(achieved_sinr(&inst, &v, &[0.5], 0).unwrap(), 0.0);
    }

    #[test]
    fn noise_only_harvest() {
        let h = CMatrix::from_column_slice(2, 1, &[c(1.0, 0.0), c(0.5, 0.5)]);
        let inst = SystemInstance::uniform(h, 2.0, 1.0, 1.0).unwrap();
        let v = CMatrix::zeros(2, 1);
        assert!((harvested_power(&inst, &v, &[0.5], 0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn harvest_vanishes_as_split_goes_to_one() {
        let (inst, v, mut rho) = random_case(3, 4, 3);
        rho[1] = 1.0 - 1e-12;
        let e = harvested_power(&inst, &v, &rho, 1).unwrap();
        let gains = inst.gain_matrix(&v).unwrap();
        let full = inst.eh_efficiency()[1] * (gains[1].iter().sum::<f64>() + inst.antenna_noise()[1]);
        assert!(e <= 1e-11 * full);
    }

    #[test]
    fn metrics_match_naive_oracle() {
        for seed in 0..20 {
            let (inst, v, rho) = random_case(seed, 4, 3);
            for k in 0..3 {
                let (s, e) = naive_metrics(&inst, &v, &rho, k);
                let s2 = achieved_sinr(&inst, &v, &rho, k).unwrap();
                let e2 = harvested_power(&inst, &v, &rho, k).unwrap();
                assert!((s - s2).abs() <= 1e-14 * s, "sinr {s} vs {s2}");
                assert!((e - e2).abs() <= 1e-14 * e, "harvest {e} vs {e2}");
            }
        }
    }

    #[test]
    fn errors_on_bad_index_and_ratio() {
        let (inst, v, mut rho) = random_case(1, 3, 2);
        assert!(matches!(
            achieved_sinr(&inst, &v, &rho, 2),
            Err(Error::IndexOutOfRange { index: 2, num_users: 2 })
        ));
        rho[0] = 1.0;
        assert!(matches!(harvested_power(&inst, &v, &rho, 0), Err(Error::InvalidPsRatio { user: 0, .. })));
        rho[0] = 0.0;
        assert!(achieved_sinr(&inst, &v, &rho, 0).is_err());
    }

    #[test]
    fn zero_beamformers_violate_sinr() {
        let (inst, _, rho) = random_case(2, 3, 2);
        let sol = JbpsSolution::evaluate(&inst, CMatrix::zeros(3, 2), rho, Method::ZeroForcing).unwrap();
        let targets = Targets::uniform(2, 1.0, 1e-3).unwrap();
        let report = check_solution(&inst, &targets, &sol, 1e-6).unwrap();
        assert!(!report.feasible);
        assert!(report.sinr_slack.iter().all(|&s| s == -1.0));
    }

    #[test]
    fn check_solution_rejects_dimension_mismatch() {
        let (inst, v, rho) = random_case(2, 3, 2);
        let sol = JbpsSolution::evaluate(&inst, v, rho, Method::ZeroForcing).unwrap();
        let targets = Targets::uniform(3, 1.0, 1e-3).unwrap();
        assert!(matches!(check_solution(&inst, &targets, &sol, 1e-6), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn constructor_rejects_zero_channel_and_bad_noise() {
        let h = CMatrix::from_column_slice(2, 2, &[c(1.0, 0.0), ZERO, ZERO, ZERO]);
        assert!(SystemInstance::uniform(h.clone(), 1.0, 1.0, 0.5).is_err());
        let h = CMatrix::from_column_slice(2, 1, &[c(1.0, 0.0), ZERO]);
        assert!(SystemInstance::uniform(h.clone(), 0.0, 1.0, 0.5).is_err());
        assert!(SystemInstance::uniform(h.clone(), 1.0, 1.0, 1.5).is_err());
        assert!(SystemInstance::uniform(h, 1.0, 1.0, 1.0).is_ok());
        assert!(Targets::new(vec![1.0], vec![0.0]).is_err());
    }

    #[test]
    fn dbm_fixed_points() {
        assert!((dbm_to_watts(-70.0) - 1e-10).abs() <= 1e-12 * 1e-10);
        assert!((dbm_to_watts(0.0) - 1e-3).abs() <= 1e-12 * 1e-3);
        assert!((dbm_to_watts(-50.0) - 1e-8).abs() <= 1e-12 * 1e-8);
    }

    proptest! {
        #[test]
        fn dbm_round_trip(x in -200.0f64..100.0) {
            let back = watts_to_dbm(dbm_to_watts(x));
            prop_assert!((back - x).abs() <= 1e-12 * x.abs().max(1.0));
            let w = dbm_to_watts(x);
            prop_assert!((dbm_to_watts(watts_to_dbm(w)) - w).abs() <= 1e-12 * w);
        }

        #[test]
        fn sinr_nondecreasing_in_beam_scale(seed in 0u64..1000) {
            let (inst, v, rho) = random_case(seed, 4, 3);
            for k in 0..3 {
                let mut prev = 0.0;
                for step in 1..=20 {
                    let scale = Complex64::new(0.25 * step as f64, 0.0);
                    let s = achieved_sinr(&inst, &v.map(|z| z * scale), &rho, k).unwrap();
                    prop_assert!(s >= prev * (1.0 - 1e-14));
                    prev = s;
                }
            }
        }
    }
}
