//! Seeded Rician-fading channels with a far-field ULA line-of-sight part.
//!
//! Random streams use ChaCha20 keyed by `seed_from_u64(seed)`; the stream id
//! of user `k` in draw `d` is `(d << 16) | k`. Every `(seed, draw, user)`
//! triple therefore owns an independent, reproducible substream, which makes
//! generation order- and thread-independent.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, CVector};
use crate::model::{db_to_linear, dbm_to_watts, SystemInstance};

const MAX_USERS: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub num_antennas: usize,
    /// Direction of each user seen from the array, degrees.
    #[serde(default = "default_directions")]
    pub user_directions_deg: Vec<f64>,
    #[serde(default = "default_rician_db")]
    pub rician_factor_db: f64,
    #[serde(default = "default_los_amplitude")]
    pub los_amplitude: f64,
    #[serde(default = "default_nlos_variance")]
    pub nlos_variance: f64,
    /// Element spacing over carrier wavelength, `d / lambda`.
    #[serde(default = "default_spacing")]
    pub element_spacing_ratio: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_directions() -> Vec<f64> {
    vec![-30.0, -60.0, 60.0, 30.0]
}
fn default_rician_db() -> f64 {
    5.0
}
fn default_los_amplitude() -> f64 {
    1e-4
}
fn default_nlos_variance() -> f64 {
    1e-4
}
fn default_spacing() -> f64 {
    0.5
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            num_antennas: 4,
            user_directions_deg: default_directions(),
            rician_factor_db: default_rician_db(),
            los_amplitude: default_los_amplitude(),
            nlos_variance: default_nlos_variance(),
            element_spacing_ratio: default_spacing(),
            seed: 0,
        }
    }
}

impl ChannelConfig {
    /// Simulation defaults with the first `num_users` directions.
    pub fn default_scenario(num_antennas: usize, num_users: usize, seed: u64) -> Self {
        let dirs = default_directions();
        let user_directions_deg = (0..num_users).map(|k| dirs[k % dirs.len()]).collect();
        Self { num_antennas, user_directions_deg, seed, ..Self::default() }
    }

    pub fn num_users(&self) -> usize {
        self.user_directions_deg.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_antennas == 0 {
            return Err(Error::InvalidInput("channel.num_antennas must be at least 1".into()));
        }
        if self.user_directions_deg.is_empty() || self.user_directions_deg.len() >= MAX_USERS {
            return Err(Error::InvalidInput("channel.user_directions_deg must list 1..65535 users".into()));
        }
        if !(self.nlos_variance > 0.0) || !(self.los_amplitude > 0.0) || !(self.element_spacing_ratio > 0.0) {
            return Err(Error::InvalidInput(
                "channel variance, amplitude and spacing ratio must be positive".into(),
            ));
        }
        if !self.rician_factor_db.is_finite() || self.user_directions_deg.iter().any(|d| !d.is_finite()) {
            return Err(Error::InvalidInput("channel angles and Rician factor must be finite".into()));
        }
        Ok(())
    }
}

/// Receiver noise and harvesting efficiency shared by all users, in watts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseParams {
    pub antenna_noise: f64,
    pub id_noise: f64,
    pub eh_efficiency: f64,
}

impl Default for NoiseParams {
    /// sigma^2 = -70 dBm, delta^2 = -50 dBm, zeta = 0.5.
    fn default() -> Self {
        Self { antenna_noise: dbm_to_watts(-70.0), id_noise: dbm_to_watts(-50.0), eh_efficiency: 0.5 }
    }
}

/// Far-field steering vector `amplitude * [1, e^{j theta}, ...]` with
/// `theta = -2 pi (d / lambda) sin(phi)`.
pub fn ula_los(num_antennas: usize, direction_deg: f64, spacing_ratio: f64, amplitude: f64) -> CVector {
    let theta = -2.0 * PI * spacing_ratio * direction_deg.to_radians().sin();
    CVector::from_fn(num_antennas, |n, _| Complex64::from_polar(amplitude, theta * n as f64))
}

/// `sqrt(K/(1+K)) los + sqrt(1/(1+K)) nlos` with i.i.d. CN(0, `nlos_variance`)
/// scattering; `rician_factor` is linear.
pub fn rician_draw<R: Rng + ?Sized>(rng: &mut R, los: &CVector, rician_factor: f64, nlos_variance: f64) -> CVector {
    let w_los = (rician_factor / (1.0 + rician_factor)).sqrt();
    let w_nlos = (1.0 / (1.0 + rician_factor)).sqrt();
    let std = (nlos_variance / 2.0).sqrt();
    CVector::from_fn(los.len(), |n, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        los[n] * w_los + Complex64::new(re * std, im * std) * w_nlos
    })
}

/// The RNG owning user `user` of draw `draw_index`.
pub fn substream(seed: u64, draw_index: u64, user: usize) -> ChaCha20Rng {
    assert!(user < MAX_USERS);
    assert!(draw_index < (1 << 48), "draw index exceeds the 48-bit stream space");
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream((draw_index << 16) | user as u64);
    rng
}

/// One channel realisation for every configured user.
pub fn generate_instance(config: &ChannelConfig, params: &NoiseParams, draw_index: u64) -> Result<SystemInstance> {
    config.validate()?;
    let k = config.num_users();
    let kr = db_to_linear(config.rician_factor_db);
    let mut h = CMatrix::zeros(config.num_antennas, k);
    for (u, &phi) in config.user_directions_deg.iter().enumerate() {
        let los = ula_los(config.num_antennas, phi, config.element_spacing_ratio, config.los_amplitude);
        let mut rng = substream(config.seed, draw_index, u);
        h.set_column(u, &rician_draw(&mut rng, &los, kr, config.nlos_variance));
    }
    SystemInstance::uniform(h, params.antenna_noise, params.id_noise, params.eh_efficiency)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadside_is_flat() {
        let v = ula_los(5, 0.0, 0.5, 2.0);
        for z in v.iter() {
            assert!((z - Complex64::new(2.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn endfire_alternates() {
        let v = ula_los(2, 90.0, 0.5, 1e-4);
        assert!((v[0] - Complex64::new(1e-4, 0.0)).norm() < 1e-18);
        assert!((v[1] - Complex64::new(-1e-4, 0.0)).norm() < 1e-18);
    }

    #[test]
    fn los_elements_have_constant_modulus() {
        let v = ula_los(8, -37.0, 0.5, 3e-4);
        for z in v.iter() {
            assert!((z.norm() - 3e-4).abs() <= 1e-15 * 3e-4 * 10.0);
        }
    }

    #[test]
    fn huge_rician_factor_recovers_los() {
        let los = ula_los(4, 30.0, 0.5, 1e-4);
        let mut rng = substream(7, 0, 0);
        let h = rician_draw(&mut rng, &los, 1e12, 1e-4);
        let tol = 1e-4 * los.norm();
        for (a, b) in h.iter().zip(los.iter()) {
            assert!((a - b).norm() < tol);
        }
    }

    #[test]
    fn pure_nlos_second_moment() {
        let los = ula_los(1, 0.0, 0.5, 1.0);
        let mut rng = substream(11, 0, 0);
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| rician_draw(&mut rng, &los, 0.0, 2.5e-3)[0].norm_sqr()).sum::<f64>() / n as f64;
        assert!((mean / 2.5e-3 - 1.0).abs() < 0.03, "mean {mean}");
    }

    #[test]
    fn draws_are_reproducible() {
        let los = ula_los(4, 30.0, 0.5, 1e-4);
        let a = rician_draw(&mut substream(5, 3, 1), &los, 3.0, 1e-4);
        let b = rician_draw(&mut substream(5, 3, 1), &los, 3.0, 1e-4);
        assert_eq!(a, b);
        let c = rician_draw(&mut substream(5, 3, 2), &los, 3.0, 1e-4);
        assert_ne!(a, c);
    }

    #[test]
    fn default_instance_parameters() {
        let cfg = ChannelConfig::default();
        assert_eq!(cfg.user_directions_deg, vec![-30.0, -60.0, 60.0, 30.0]);
        assert!((db_to_linear(cfg.rician_factor_db) - 10f64.powf(0.5)).abs() < 1e-15);
        assert_eq!(cfg.element_spacing_ratio, 0.5);
        let inst = generate_instance(&cfg, &NoiseParams::default(), 0).unwrap();
        assert_eq!(inst.num_users(), 4);
        for k in 0..4 {
            assert!((inst.eh_efficiency()[k] - 0.5).abs() < 1e-15);
            assert!((inst.antenna_noise()[k] / 1e-10 - 1.0).abs() < 1e-12);
            assert!((inst.id_noise()[k] / 1e-8 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn instance_independent_of_call_order() {
        let cfg = ChannelConfig { seed: 99, ..ChannelConfig::default() };
        let p = NoiseParams::default();
        let forward: Vec<_> = (0..5).map(|d| generate_instance(&cfg, &p, d).unwrap()).collect();
        let backward: Vec<_> = (0..5).rev().map(|d| generate_instance(&cfg, &p, d).unwrap()).collect();
        for d in 0..5 {
            assert_eq!(forward[d], backward[4 - d]);
        }
    }

    #[test]
    fn sample_mean_converges_to_scaled_los() {
        let los = ula_los(3, -60.0, 0.5, 1e-2);
        let kappa = db_to_linear(5.0);
        let var = 1e-4;
        let n = 20_000u64;
        let mut sum = CVector::zeros(3);
        for d in 0..n {
            sum += rician_draw(&mut substream(3, d, 0), &los, kappa, var);
        }
        let mean = sum / Complex64::new(n as f64, 0.0);
        let expected = &los * Complex64::new((kappa / (1.0 + kappa)).sqrt(), 0.0);
        // per real component: variance var / (2 (1 + kappa)) / n
        let se = (var / (2.0 * (1.0 + kappa)) / n as f64).sqrt();
        for (m, e) in mean.iter().zip(expected.iter()) {
            assert!((m.re - e.re).abs() < 3.0 * se);
            assert!((m.im - e.im).abs() < 3.0 * se);
        }
    }
}
