//! Infeasible primal-dual path following for the relaxation.
//!
//! Iterates are `(X_k, rho_k, s_i)` on the primal side and `(Z_k, lambda_i)` on
//! the dual side, one slack/multiplier pair per constraint. Each iteration
//! solves the linearised conditions
//!
//! ```text
//! I - sum_i lambda_i grad_k c_i - Z_k = 0        (dual, per block)
//! sum_i lambda_i c_i'(rho_k)        = 0          (per PS ratio)
//! c_i(X, rho) - s_i                 = 0          (primal, per constraint)
//! X_k Z_k = mu I,  s_i lambda_i = mu
//! ```
//!
//! with the HKM symmetrisation and a Mehrotra predictor-corrector. After
//! eliminating `dX`, `dZ`, `ds` and `drho` the system reduces to a dense
//! `2K x 2K` Schur complement in `dlambda`.
//!
//! Constraint `2u` is the SINR constraint of user `u`, `2u + 1` its harvest
//! constraint. All data are in scaled units chosen by the caller.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::linalg::{frobenius, herm_dot, hermitian_eig, hermitianize, inner, trace_re, CMatrix, CVector};

/// Scaled problem data.
#[derive(Debug, Clone)]
pub(crate) struct Problem {
    pub channels: Vec<CVector>,
    pub sinr: Vec<f64>,
    pub antenna_noise: Vec<f64>,
    pub id_noise: Vec<f64>,
    /// `e_k / zeta_k`
    pub harvest: Vec<f64>,
    /// Physical size of one unit of `X`; complementarity is judged in
    /// physical units.
    pub x_unit: f64,
    /// Bounds the centring parameter below by the PS-ratio stationarity
    /// residual. Slower, but keeps a vanishing multiplier from being driven
    /// to zero before its PS ratio has settled.
    pub guarded: bool,
}

#[derive(Debug, Clone)]
pub(crate) struct Iterate {
    pub x: Vec<CMatrix>,
    pub rho: Vec<f64>,
    pub s: Vec<f64>,
    pub z: Vec<CMatrix>,
    pub lambda: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Residuals {
    pub primal: f64,
    pub dual: f64,
    pub stationarity: f64,
    pub gap: f64,
    /// `max_k ||A_k X_k||_F / (1 + ||X_k||_F)` in physical units. Reported
    /// only; it is restored by the rank-one refinement.
    pub complementarity: f64,
    /// Largest constraint slack relative to its term magnitudes.
    pub tightness: f64,
}

impl Residuals {
    /// Tightness is held to `sqrt(tol)` only: a constraint with a vanishing
    /// multiplier closes its slack no faster than `mu / lambda_i`, and the
    /// rank-one refinement makes every constraint tight anyway.
    fn converged(&self, tol: f64) -> bool {
        [self.primal, self.dual, self.stationarity, self.gap].into_iter().all(|r| r <= tol) && self.tightness <= tol.sqrt()
    }

    fn worst(&self) -> f64 {
        [self.dual, self.stationarity, self.gap, self.tightness]
            .into_iter()
            .fold(self.primal, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum PdError {
    Budget(usize),
    Singular(&'static str),
    Stalled(f64),
    TimeLimit,
}

/// Fraction of the distance to the boundary a step may cover.
const STEP_FRACTION: f64 = 0.98;
/// Progress measure below which an iteration counts as stalled.
const MIN_STEP: f64 = 1e-10;
/// A stalled or out-of-budget run still returns its iterate when every
/// residual is within this factor of the tolerance; rounding in the PS-ratio
/// equations can floor the stationarity residual just above `tol` when a
/// multiplier is nearly zero.
const NEAR_FACTOR: f64 = 1e3;

/// Complementarity kept per unit of PS-ratio stationarity residual.
const STAT_LAG: f64 = 10.0;

struct Direction {
    x: Vec<CMatrix>,
    rho: Vec<f64>,
    s: Vec<f64>,
    z: Vec<CMatrix>,
    lambda: Vec<f64>,
}

/// Quantities fixed for both the predictor and the corrector.
struct Frame {
    zinv: Vec<CMatrix>,
    /// `X_k h_u`
    xh: Vec<Vec<CVector>>,
    /// `Z_k^{-1} h_u`
    zh: Vec<Vec<CVector>>,
    rd: Vec<CMatrix>,
    rp: Vec<f64>,
    rrho: Vec<f64>,
    dphi: Vec<f64>,
    hrho: Vec<f64>,
    schur: DMatrix<f64>,
}

impl Problem {
    pub fn num_users(&self) -> usize {
        self.channels.len()
    }

    fn dim(&self) -> usize {
        self.channels[0].len()
    }

    pub fn coef(&self, i: usize, k: usize) -> f64 {
        let u = i / 2;
        if i % 2 == 1 {
            1.0
        } else if k == u {
            1.0 / self.sinr[u]
        } else {
            -1.0
        }
    }

    /// Scalar part of constraint `i` with its first and second derivative.
    fn phi(&self, i: usize, rho: f64) -> (f64, f64, f64) {
        let u = i / 2;
        if i % 2 == 0 {
            let d = self.id_noise[u];
            (-self.antenna_noise[u] - d / rho, d / (rho * rho), -2.0 * d / (rho * rho * rho))
        } else {
            let a = self.harvest[u];
            let r = 1.0 - rho;
            (self.antenna_noise[u] - a / r, -a / (r * r), -2.0 * a / (r * r * r))
        }
    }

    /// Multipliers that zero the `rho` stationarity residual for each user,
    /// scaled so each pair's products with the slacks have geometric mean `mu`.
    pub fn starting_multipliers(&self, rho: &[f64], s: &[f64], mu: f64) -> Vec<f64> {
        let mut lambda = vec![0.0; s.len()];
        for (u, &r) in rho.iter().enumerate() {
            let a = self.phi(2 * u, r).1.abs();
            let b = self.phi(2 * u + 1, r).1.abs();
            let c = mu / (s[2 * u] * s[2 * u + 1] * a * b).sqrt();
            if c.is_finite() && c > 0.0 {
                lambda[2 * u] = c * b;
                lambda[2 * u + 1] = c * a;
            } else {
                lambda[2 * u] = mu / s[2 * u];
                lambda[2 * u + 1] = mu / s[2 * u + 1];
            }
        }
        lambda
    }

    /// `c_i(X, rho)` together with the magnitude of its terms.
    pub fn constraints(&self, x: &[CMatrix], rho: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let k = self.num_users();
        let mut vals = Vec::with_capacity(2 * k);
        let mut mags = Vec::with_capacity(2 * k);
        for u in 0..k {
            let h = &self.channels[u];
            let q: Vec<f64> = x.iter().map(|xj| inner(h, &(xj * h)).re).collect();
            for i in [2 * u, 2 * u + 1] {
                let (p, _, _) = self.phi(i, rho[u]);
                let lin: f64 = (0..k).map(|j| self.coef(i, j) * q[j]).sum();
                let mag: f64 = (0..k).map(|j| (self.coef(i, j) * q[j]).abs()).sum::<f64>() + p.abs();
                vals.push(lin + p);
                mags.push(mag);
            }
        }
        (vals, mags)
    }

    pub fn objective(&self, it: &Iterate) -> f64 {
        it.x.iter().map(trace_re).sum()
    }

    /// `I - sum_i lambda_i grad_k c_i`
    pub fn dual_matrix(&self, lambda: &[f64], k: usize) -> CMatrix {
        let n = self.dim();
        let mut a = CMatrix::identity(n, n);
        for (i, &l) in lambda.iter().enumerate() {
            let h = &self.channels[i / 2];
            a -= h * h.adjoint() * Complex64::from(l * self.coef(i, k));
        }
        hermitianize(&mut a);
        a
    }

    fn complementarity(&self, it: &Iterate) -> f64 {
        let m = (self.num_users() * self.dim() + 2 * self.num_users()) as f64;
        let block: f64 = it.x.iter().zip(&it.z).map(|(x, z)| herm_dot(x, z)).sum();
        (block + it.s.iter().zip(&it.lambda).map(|(s, l)| s * l).sum::<f64>()) / m
    }

    pub fn residuals(&self, it: &Iterate) -> Residuals {
        let k = self.num_users();
        let (c, mags) = self.constraints(&it.x, &it.rho);
        let primal = (0..2 * k).map(|i| (c[i] - it.s[i]).abs() / (1.0 + mags[i])).fold(0.0, f64::max);
        let tightness = (0..2 * k).map(|i| c[i].abs() / mags[i].max(f64::MIN_POSITIVE)).fold(0.0, f64::max);
        let mut dual = 0.0_f64;
        let mut complementarity = 0.0_f64;
        for u in 0..k {
            let a = self.dual_matrix(&it.lambda, u);
            dual = dual.max(frobenius(&(&a - &it.z[u])) / (self.dim() as f64).sqrt());
            let ax = frobenius(&(&a * &it.x[u])) * self.x_unit;
            complementarity = complementarity.max(ax / (1.0 + frobenius(&it.x[u]) * self.x_unit));
        }
        let mut stationarity = 0.0_f64;
        for u in 0..k {
            let a = it.lambda[2 * u] * self.phi(2 * u, it.rho[u]).1;
            let b = it.lambda[2 * u + 1] * self.phi(2 * u + 1, it.rho[u]).1;
            stationarity = stationarity.max((a + b).abs() / (a.abs() + b.abs()).max(f64::MIN_POSITIVE));
        }
        let block: f64 = it.x.iter().zip(&it.z).map(|(x, z)| herm_dot(x, z)).sum();
        let scalar: f64 = it.s.iter().zip(&it.lambda).map(|(s, l)| s * l).sum();
        let gap = (block + scalar).abs() / (1.0 + self.objective(it));
        Residuals { primal, dual, stationarity, gap, complementarity, tightness }
    }

    fn frame(&self, it: &Iterate) -> Result<Frame, PdError> {
        let k = self.num_users();
        let mut zinv = Vec::with_capacity(k);
        for z in &it.z {
            let mut inv = z.clone().cholesky().ok_or(PdError::Singular("dual matrix lost definiteness"))?.inverse();
            hermitianize(&mut inv);
            zinv.push(inv);
        }
        let xh: Vec<Vec<CVector>> = it.x.iter().map(|x| self.channels.iter().map(|h| x * h).collect()).collect();
        let zh: Vec<Vec<CVector>> = zinv.iter().map(|zi| self.channels.iter().map(|h| zi * h).collect()).collect();
        let rd: Vec<CMatrix> = (0..k).map(|u| self.dual_matrix(&it.lambda, u) - &it.z[u]).collect();
        let (c, _) = self.constraints(&it.x, &it.rho);
        let rp: Vec<f64> = c.iter().zip(&it.s).map(|(c, s)| c - s).collect();
        let mut dphi = vec![0.0; 2 * k];
        let mut rrho = vec![0.0; k];
        let mut hrho = vec![0.0; k];
        for i in 0..2 * k {
            let u = i / 2;
            let (_, d1, d2) = self.phi(i, it.rho[u]);
            dphi[i] = d1;
            rrho[u] -= it.lambda[i] * d1;
            hrho[u] -= it.lambda[i] * d2;
        }
        if hrho.iter().any(|&h| !(h > 0.0)) {
            return Err(PdError::Singular("PS-ratio curvature vanished"));
        }

        let m = 2 * k;
        let mut schur = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in i..m {
                let (ui, uj) = (i / 2, j / 2);
                let mut v = 0.0;
                for b in 0..k {
                    let w = self.coef(i, b) * self.coef(j, b);
                    // Re[(h_i^H X h_j)(h_j^H Z^{-1} h_i)]
                    let t = inner(&self.channels[ui], &xh[b][uj]) * inner(&self.channels[uj], &zh[b][ui]);
                    v += w * t.re;
                }
                if ui == uj {
                    v += dphi[i] * dphi[j] / hrho[ui];
                }
                if i == j {
                    v += it.s[i] / it.lambda[i];
                }
                schur[(i, j)] = v;
                schur[(j, i)] = v;
            }
        }
        Ok(Frame { zinv, xh, zh, rd, rp, rrho, dphi, hrho, schur })
    }

    /// Direction for the given block and scalar complementarity targets.
    /// `block_rhs[k]` is the constant part of `dX_k`, `slack_rhs[i]` that of
    /// `ds_i`.
    fn direction(
        &self,
        it: &Iterate,
        f: &Frame,
        solver: &SchurSolver,
        block_rhs: Vec<CMatrix>,
        slack_rhs: Vec<f64>,
    ) -> Result<Direction, PdError> {
        let k = self.num_users();
        let m = 2 * k;
        let mut rhs = DVector::zeros(m);
        for i in 0..m {
            let h = &self.channels[i / 2];
            let lin: f64 = (0..k).map(|b| self.coef(i, b) * inner(h, &(&block_rhs[b] * h)).re).sum();
            rhs[i] = -f.rp[i] - lin + slack_rhs[i] + f.dphi[i] * f.rrho[i / 2] / f.hrho[i / 2];
        }
        let dl = solver.solve(&rhs)?;

        let mut drho = vec![0.0; k];
        for u in 0..k {
            let acc = f.dphi[2 * u] * dl[2 * u] + f.dphi[2 * u + 1] * dl[2 * u + 1];
            drho[u] = (-f.rrho[u] + acc) / f.hrho[u];
        }
        let ds: Vec<f64> = (0..m).map(|i| slack_rhs[i] - it.s[i] / it.lambda[i] * dl[i]).collect();
        let mut dz = f.rd.clone();
        let mut dx = block_rhs;
        for b in 0..k {
            for i in 0..m {
                let w = dl[i] * self.coef(i, b);
                if w == 0.0 {
                    continue;
                }
                let u = i / 2;
                let h = &self.channels[u];
                dz[b] -= h * h.adjoint() * Complex64::from(w);
                let (xh, zh) = (&f.xh[b][u], &f.zh[b][u]);
                let sym = (xh * zh.adjoint() + zh * xh.adjoint()) * Complex64::from(0.5 * w);
                dx[b] += sym;
            }
            hermitianize(&mut dx[b]);
            hermitianize(&mut dz[b]);
        }
        Ok(Direction { x: dx, rho: drho, s: ds, z: dz, lambda: dl.iter().copied().collect() })
    }

    /// `sigma_mu Z^{-1} - X - sym(X R_d Z^{-1}) - sym(corr Z^{-1})`
    fn block_rhs(&self, it: &Iterate, f: &Frame, sigma_mu: f64, corr: Option<&[CMatrix]>) -> Vec<CMatrix> {
        (0..self.num_users())
            .map(|b| {
                let mut t = &it.x[b] * &f.rd[b];
                if let Some(c) = corr {
                    t += &c[b];
                }
                let tz = t * &f.zinv[b];
                let mut r = &f.zinv[b] * Complex64::from(sigma_mu) - &it.x[b] - (&tz + tz.adjoint()) * Complex64::from(0.5);
                hermitianize(&mut r);
                r
            })
            .collect()
    }

    /// Largest step in `(0, 1]` keeping every cone variable strictly inside.
    fn max_step(&self, it: &Iterate, d: &Direction) -> f64 {
        let mut alpha: f64 = 1.0;
        for (x, dx) in it.x.iter().zip(&d.x).chain(it.z.iter().zip(&d.z)) {
            alpha = alpha.min(psd_step(x, dx));
        }
        for (v, dv) in it.s.iter().zip(&d.s).chain(it.lambda.iter().zip(&d.lambda)) {
            if *dv < 0.0 {
                alpha = alpha.min(-v / dv);
            }
        }
        for (r, dr) in it.rho.iter().zip(&d.rho) {
            if *dr < 0.0 {
                alpha = alpha.min(-r / dr);
            } else if *dr > 0.0 {
                alpha = alpha.min((1.0 - r) / dr);
            }
        }
        alpha
    }

    fn apply(&self, it: &Iterate, d: &Direction, alpha: f64) -> Iterate {
        let a = Complex64::from(alpha);
        let mut x: Vec<CMatrix> = it.x.iter().zip(&d.x).map(|(x, dx)| x + dx * a).collect();
        let mut z: Vec<CMatrix> = it.z.iter().zip(&d.z).map(|(z, dz)| z + dz * a).collect();
        x.iter_mut().chain(z.iter_mut()).for_each(hermitianize);
        Iterate {
            x,
            z,
            rho: it.rho.iter().zip(&d.rho).map(|(r, dr)| r + alpha * dr).collect(),
            s: it.s.iter().zip(&d.s).map(|(s, ds)| s + alpha * ds).collect(),
            lambda: it.lambda.iter().zip(&d.lambda).map(|(l, dl)| l + alpha * dl).collect(),
        }
    }

    /// Runs predictor-corrector steps until every residual is below `tol`.
    pub fn solve(
        &self,
        mut it: Iterate,
        tol: f64,
        max_iterations: usize,
        deadline: Option<Instant>,
    ) -> Result<(Iterate, usize, Residuals), (PdError, usize)> {
        let mut iterations = 0;
        loop {
            let res = self.residuals(&it);
            if res.converged(tol) {
                return Ok((it, iterations, res));
            }
            if deadline.is_some_and(|d| Instant::now() >= d) {
                return Err((PdError::TimeLimit, iterations));
            }
            let step = if iterations >= max_iterations {
                Err(PdError::Budget(iterations))
            } else {
                iterations += 1;
                self.step(&it).and_then(|next| next.ok_or(PdError::Stalled(res.worst())))
            };
            match step {
                Ok(next) => it = next,
                Err(_) if res.converged(NEAR_FACTOR * tol) => return Ok((it, iterations, res)),
                Err(e) => return Err((e, iterations)),
            }
        }
    }

    /// One predictor-corrector step, `None` when it would be negligibly short.
    fn step(&self, it: &Iterate) -> Result<Option<Iterate>, PdError> {
        let mu = self.complementarity(it);
        let f = self.frame(it)?;
        let solver = SchurSolver::new(f.schur.clone())?;

        // predictor
        let pb = self.block_rhs(it, &f, 0.0, None);
        let ps: Vec<f64> = it.s.iter().map(|s| -s).collect();
        let aff = self.direction(it, &f, &solver, pb, ps)?;
        let a_aff = self.max_step(it, &aff);
        let trial = self.apply(it, &aff, a_aff);
        let mu_aff = self.complementarity(&trial).max(0.0);
        let mut sigma = (mu_aff / mu).powi(3);
        if self.guarded {
            // keep the target from outrunning the PS-ratio stationarity residual
            let lag = f.rrho.iter().fold(0.0_f64, |m, r| m.max(r.abs()));
            sigma = sigma.max(lag / (STAT_LAG * mu));
        }
        let sigma = sigma.clamp(0.0, 1.0);

        // corrector
        let corr: Vec<CMatrix> = aff.x.iter().zip(&aff.z).map(|(dx, dz)| dx * dz).collect();
        let cb = self.block_rhs(it, &f, sigma * mu, Some(&corr));
        let cs: Vec<f64> = (0..it.s.len())
            .map(|i| (sigma * mu - it.s[i] * it.lambda[i] - aff.s[i] * aff.lambda[i]) / it.lambda[i])
            .collect();
        let dir = self.direction(it, &f, &solver, cb, cs)?;
        let alpha = (STEP_FRACTION * self.max_step(it, &dir)).min(1.0);
        Ok((alpha >= MIN_STEP).then(|| self.apply(it, &dir, alpha)))
    }
}

/// Largest `alpha <= 1` (or infinity when unbounded) with `X + alpha dX`
/// positive definite.
fn psd_step(x: &CMatrix, dx: &CMatrix) -> f64 {
    let Some(ch) = x.clone().cholesky() else {
        return 0.0;
    };
    let l = ch.l();
    let Some(li) = l.clone().try_inverse() else {
        return 0.0;
    };
    let w = &li * dx * li.adjoint();
    let (eig, _) = hermitian_eig(&w);
    let smallest = eig.last().copied().unwrap_or(0.0);
    if smallest < 0.0 {
        -1.0 / smallest
    } else {
        f64::INFINITY
    }
}

/// Jacobi-scaled Cholesky (LU when rounding breaks definiteness) with one
/// step of iterative refinement.
struct SchurSolver {
    m: DMatrix<f64>,
    scale: DVector<f64>,
    factor: Factor,
}

enum Factor {
    Cholesky(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Lu(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

impl SchurSolver {
    fn new(m: DMatrix<f64>) -> Result<Self, PdError> {
        let n = m.nrows();
        let scale = DVector::from_iterator(
            n,
            (0..n).map(|i| if m[(i, i)] > 0.0 && m[(i, i)].is_finite() { 1.0 / m[(i, i)].sqrt() } else { 1.0 }),
        );
        let scaled = DMatrix::from_fn(n, n, |i, j| m[(i, j)] * scale[i] * scale[j]);
        if scaled.iter().any(|v| !v.is_finite()) {
            return Err(PdError::Singular("non-finite Schur complement"));
        }
        let factor = match scaled.clone().cholesky() {
            Some(c) => Factor::Cholesky(c),
            None => Factor::Lu(scaled.lu()),
        };
        Ok(Self { m, scale, factor })
    }

    fn raw(&self, b: &DVector<f64>) -> Result<DVector<f64>, PdError> {
        let bs = b.component_mul(&self.scale);
        let y = match &self.factor {
            Factor::Cholesky(c) => c.solve(&bs),
            Factor::Lu(lu) => lu.solve(&bs).ok_or(PdError::Singular("singular Schur complement"))?,
        };
        Ok(y.component_mul(&self.scale))
    }

    fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>, PdError> {
        let x = self.raw(b)?;
        let r = b - &self.m * &x;
        let x = x + self.raw(&r)?;
        if x.iter().all(|v| v.is_finite()) {
            Ok(x)
        } else {
            Err(PdError::Singular("non-finite Newton direction"))
        }
    }
}

