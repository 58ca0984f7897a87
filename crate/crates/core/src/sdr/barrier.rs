//! Primal log-barrier path following over `K` Hermitian blocks and a few
//! scalars.
//!
//! Every constraint has the form
//!
//! ```text
//! s_c = sum_j coef[c][j] * h_u^H X_j h_u - y_i > 0
//! ```
//!
//! for one channel vector `h_u` and one scalar `y_i`, and every scalar is
//! bounded below by `y_i > lo_i`.
//! The Hessian of the barrier is therefore a block-diagonal part plus one
//! rank-one term per constraint, and each Newton system is solved through the
//! Woodbury identity with a dense `m x m` Schur complement (`m` = number of
//! constraints). Blocks are kept as native complex matrices.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::linalg::{herm_dot, hermitianize, inner, trace_re, CMatrix, CVector};

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Constraint {
    pub user: usize,
    pub block_coef: Vec<f64>,
    pub scalar: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct BarrierProblem {
    pub dim: usize,
    pub num_blocks: usize,
    pub channels: Vec<CVector>,
    pub constraints: Vec<Constraint>,
    /// Open lower bound of each scalar.
    pub lower: Vec<f64>,
    /// Objective weight of `tr X_j` (same for every block).
    pub block_weight: f64,
    pub scalar_objective: Vec<f64>,
    /// `<E_j, X_j>` is held constant along every step, one matrix per block
    /// (or none at all).
    pub equalities: Vec<CMatrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Point {
    pub blocks: Vec<CMatrix>,
    pub scalars: Vec<f64>,
}

impl Point {
    fn axpy(&self, alpha: f64, dir: &Point) -> Point {
        let blocks = self.blocks.iter().zip(&dir.blocks).map(|(x, d)| x + d * Complex64::from(alpha)).collect();
        let scalars = self.scalars.iter().zip(&dir.scalars).map(|(x, d)| x + alpha * d).collect();
        Point { blocks, scalars }
    }

    fn sub(&self, other: &Point) -> Point {
        self.axpy(-1.0, other)
    }

    fn scaled(&self, alpha: f64) -> Point {
        Point {
            blocks: self.blocks.iter().map(|x| x * Complex64::from(alpha)).collect(),
            scalars: self.scalars.iter().map(|y| alpha * y).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum EngineError {
    Budget(usize),
    LineSearch,
    Singular,
    TimeLimit,
}

/// Newton-step counter shared by every centering of one solve.
#[derive(Debug, Clone)]
pub(crate) struct Budget {
    pub used: usize,
    pub max: usize,
    pub deadline: Option<Instant>,
}

impl Budget {
    fn spend(&mut self) -> Result<(), EngineError> {
        if self.used >= self.max {
            return Err(EngineError::Budget(self.used));
        }
        if let Some(d) = self.deadline {
            if Instant::now() >= d {
                return Err(EngineError::TimeLimit);
            }
        }
        self.used += 1;
        Ok(())
    }
}

/// Stop once the Newton decrement squared falls below this.
pub(crate) const CENTERING_TOL: f64 = 1e-10;
const ROUNDOFF_DECREMENT: f64 = 1e-4;
const ARMIJO: f64 = 0.25;
const FULL_STEP_DECREMENT: f64 = 0.1;
const MAX_BACKTRACKS: usize = 30;

/// Per-point quantities shared by gradient, Hessian and line search.
struct Local {
    slack: Vec<f64>,
    /// `X_j h_u` for block `j` and channel `u`.
    xh: Vec<Vec<CVector>>,
    /// Diagonal curvature of each scalar.
    curv: Vec<f64>,
    /// Gradient with respect to each scalar.
    grad_y: Vec<f64>,
}

impl BarrierProblem {
    pub fn degree(&self) -> f64 {
        (self.num_blocks * self.dim + self.constraints.len()) as f64
            + self.lower.len() as f64
    }

    pub fn objective(&self, p: &Point) -> f64 {
        let b: f64 = p.blocks.iter().map(trace_re).sum();
        self.block_weight * b + self.scalar_objective.iter().zip(&p.scalars).map(|(c, y)| c * y).sum::<f64>()
    }

    /// `q[u][j] = h_u^H X_j h_u`
    pub fn quadratics(&self, p: &Point) -> Vec<Vec<f64>> {
        self.channels
            .iter()
            .map(|h| p.blocks.iter().map(|x| inner(h, &(x * h)).re).collect())
            .collect()
    }

    /// Constraint values; may be non-positive.
    pub fn slacks(&self, p: &Point) -> Vec<f64> {
        let q = self.quadratics(p);
        self.constraints
            .iter()
            .map(|c| {
                let lin: f64 = c.block_coef.iter().zip(&q[c.user]).map(|(a, b)| a * b).sum();
                lin - p.scalars[c.scalar]
            })
            .collect()
    }

    /// True when `p` lies in the interior of every barrier domain.
    pub fn is_interior(&self, p: &Point) -> bool {
        p.blocks.iter().all(|x| x.clone().cholesky().is_some())
            && self.lower.iter().zip(&p.scalars).all(|(lo, y)| y > lo)
            && self.slacks(p).iter().all(|&s| s > 0.0 && s.is_finite())
    }

    /// Barrier function `tau * objective - sum log(...)`; `None` off-domain.
    fn barrier_value(&self, p: &Point, tau: f64) -> Option<f64> {
        let mut f = tau * self.objective(p);
        for (lo, y) in self.lower.iter().zip(&p.scalars) {
            if !(y > lo) {
                return None;
            }
            f -= (y - lo).ln();
        }
        for s in self.slacks(p) {
            if !(s > 0.0 && s.is_finite()) {
                return None;
            }
            f -= s.ln();
        }
        for x in &p.blocks {
            f -= crate::linalg::log_det_hpd(x)?;
        }
        f.is_finite().then_some(f)
    }

    fn local(&self, p: &Point, tau: f64) -> Option<Local> {
        let slack = self.slacks(p);
        if slack.iter().any(|&s| !(s > 0.0)) {
            return None;
        }
        let xh = p.blocks.iter().map(|x| self.channels.iter().map(|h| x * h).collect()).collect();
        let mut curv = vec![0.0; p.scalars.len()];
        let mut grad_y = vec![0.0; p.scalars.len()];
        for (i, (lo, y)) in self.lower.iter().zip(&p.scalars).enumerate() {
            let d = y - lo;
            if !(d > 0.0) {
                return None;
            }
            grad_y[i] = tau * self.scalar_objective[i] - 1.0 / d;
            curv[i] = 1.0 / (d * d);
        }
        for (c, &s) in self.constraints.iter().zip(&slack) {
            grad_y[c.scalar] += 1.0 / s;
        }
        Some(Local { slack, xh, curv, grad_y })
    }

    /// `D^{-1} A z` where column `c` of `A` is the gradient of constraint `c`.
    fn dinv_a(&self, loc: &Local, z: &[f64]) -> Point {
        let n = self.dim;
        let mut blocks = vec![CMatrix::zeros(n, n); self.num_blocks];
        let mut scalars = vec![0.0; loc.curv.len()];
        for (con, &zc) in self.constraints.iter().zip(z) {
            for (j, block) in blocks.iter_mut().enumerate() {
                let w = con.block_coef[j] * zc;
                if w != 0.0 {
                    let v = &loc.xh[j][con.user];
                    *block += v * v.adjoint() * Complex64::from(w);
                }
            }
            scalars[con.scalar] -= zc / loc.curv[con.scalar];
        }
        Point { blocks, scalars }
    }

    /// `A^T d`
    fn at(&self, d: &Point) -> DVector<f64> {
        DVector::from_iterator(
            self.constraints.len(),
            self.constraints.iter().map(|con| {
                let h = &self.channels[con.user];
                let lin: f64 = d
                    .blocks
                    .iter()
                    .zip(&con.block_coef)
                    .filter(|(_, &a)| a != 0.0)
                    .map(|(x, &a)| a * inner(h, &(x * h)).re)
                    .sum();
                lin - d.scalars[con.scalar]
            }),
        )
    }

    /// `S^2 + A^T D^{-1} A`
    fn schur(&self, loc: &Local) -> DMatrix<f64> {
        let m = self.constraints.len();
        // P_j[u][v] = h_u^H X_j h_v
        let gains: Vec<Vec<Vec<f64>>> = (0..self.num_blocks)
            .map(|j| {
                self.channels
                    .iter()
                    .map(|hu| loc.xh[j].iter().map(|xv| inner(hu, xv).norm_sqr()).collect())
                    .collect()
            })
            .collect();
        let mut s = DMatrix::zeros(m, m);
        for (a, ca) in self.constraints.iter().enumerate() {
            for (b, cb) in self.constraints.iter().enumerate().skip(a) {
                let mut v: f64 = (0..self.num_blocks)
                    .map(|j| ca.block_coef[j] * cb.block_coef[j] * gains[j][ca.user][cb.user])
                    .sum();
                if ca.scalar == cb.scalar {
                    v += 1.0 / loc.curv[ca.scalar];
                }
                if a == b {
                    v += loc.slack[a] * loc.slack[a];
                }
                s[(a, b)] = v;
                s[(b, a)] = v;
            }
        }
        s
    }

    /// Applies `H^{-1}` to a vector already multiplied by `D^{-1}`.
    /// Also returns `z` with `A^T H^{-1} v = S^2 z`.
    fn hinv(&self, loc: &Local, schur: &SchurSolver, dinv_v: &Point) -> Result<(Point, DVector<f64>), EngineError> {
        let rhs = self.at(dinv_v);
        let z = schur.solve(&rhs)?;
        let corr = self.dinv_a(loc, z.as_slice());
        Ok((dinv_v.sub(&corr), z))
    }

    /// Newton direction and decrement squared of the centering problem at `tau`.
    fn newton(&self, p: &Point, tau: f64) -> Result<(Point, f64), EngineError> {
        let loc = self.local(p, tau).ok_or(EngineError::Singular)?;
        // D^{-1} g, block part X G X with G = tau w I - X^{-1} - sum (coef / s) h h^H
        let mut blocks = Vec::with_capacity(self.num_blocks);
        for (j, x) in p.blocks.iter().enumerate() {
            let mut r = x * x * Complex64::from(tau * self.block_weight) - x;
            for (c, con) in self.constraints.iter().enumerate() {
                let w = con.block_coef[j] / loc.slack[c];
                if w != 0.0 {
                    let v = &loc.xh[j][con.user];
                    r -= v * v.adjoint() * Complex64::from(w);
                }
            }
            hermitianize(&mut r);
            blocks.push(r);
        }
        let scalars = loc.grad_y.iter().zip(&loc.curv).map(|(g, c)| g / c).collect();
        let dinv_g = Point { blocks, scalars };

        let schur = SchurSolver::new(self.schur(&loc))?;
        let (hg, zg) = self.hinv(&loc, &schur, &dinv_g)?;
        let (mut dir, z) = if self.equalities.is_empty() {
            (hg.scaled(-1.0), zg)
        } else {
            let zero = vec![0.0; p.scalars.len()];
            let nb = self.num_blocks;
            let mut he = Vec::with_capacity(nb);
            for (j, e) in self.equalities.iter().enumerate() {
                let mut blocks = vec![CMatrix::zeros(self.dim, self.dim); nb];
                blocks[j] = &p.blocks[j] * e * &p.blocks[j];
                he.push(self.hinv(&loc, &schur, &Point { blocks, scalars: zero.clone() })?);
            }
            // <E_i, (H^{-1} E)_j> only involves block i
            let gram = DMatrix::from_fn(nb, nb, |i, j| herm_dot(&self.equalities[i], &he[j].0.blocks[i]));
            let rhs = DVector::from_iterator(nb, (0..nb).map(|i| -herm_dot(&self.equalities[i], &hg.blocks[i])));
            let nu = gram.cholesky().ok_or(EngineError::Singular)?.solve(&rhs);
            let mut d = hg;
            let mut z = zg;
            for (j, (hej, zej)) in he.iter().enumerate() {
                d = d.axpy(nu[j], hej);
                z += zej * nu[j];
            }
            (d.scaled(-1.0), z)
        };
        for b in dir.blocks.iter_mut() {
            hermitianize(b);
        }
        let dec = self.hessian_norm2(p, &loc, &dir, &z);
        if !dec.is_finite() {
            return Err(EngineError::Singular);
        }
        Ok((dir, dec))
    }

    /// `<d, H d>` for `d = -H^{-1} v`; the constraint part uses
    /// `A^T d = -S^2 z`, which avoids recomputing `h^H d h` from `d`.
    fn hessian_norm2(&self, p: &Point, loc: &Local, d: &Point, z: &DVector<f64>) -> f64 {
        let mut acc = 0.0;
        for (x, dx) in p.blocks.iter().zip(&d.blocks) {
            match x.clone().cholesky() {
                Some(ch) => {
                    let w = ch.solve(dx);
                    acc += herm_dot(&w, &w);
                }
                None => return f64::NAN,
            }
        }
        for (c, s) in loc.slack.iter().enumerate() {
            acc += (s * z[c]).powi(2);
        }
        acc + loc.curv.iter().zip(&d.scalars).map(|(c, y)| c * y * y).sum::<f64>()
    }

    /// Minimises the barrier function at `tau` starting from `p`.
    pub fn center(&self, p: &mut Point, tau: f64, budget: &mut Budget) -> Result<(), EngineError> {
        let mut prev = f64::INFINITY;
        loop {
            budget.spend()?;
            let (dir, dec) = self.newton(p, tau)?;
            // below ROUNDOFF_DECREMENT a step that fails to halve the
            // decrement is limited by rounding, not by distance to the path
            let stalled = dec <= ROUNDOFF_DECREMENT && dec > 0.5 * prev;
            prev = dec;
            if dec <= CENTERING_TOL || stalled {
                let next = p.axpy(1.0, &dir);
                if self.is_interior(&next) {
                    *p = next;
                }
                return Ok(());
            }
            let f0 = if dec < FULL_STEP_DECREMENT { None } else { self.barrier_value(p, tau) };
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..MAX_BACKTRACKS {
                let next = p.axpy(alpha, &dir);
                let ok = match f0 {
                    None => self.is_interior(&next),
                    Some(f0) => self.barrier_value(&next, tau).is_some_and(|f| f <= f0 - ARMIJO * alpha * dec),
                };
                if ok {
                    *p = next;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                return Err(EngineError::LineSearch);
            }
        }
    }
}

/// Jacobi-scaled Cholesky of the Schur complement with one refinement step.
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
    fn new(m: DMatrix<f64>) -> Result<Self, EngineError> {
        let n = m.nrows();
        let scale = DVector::from_iterator(n, (0..n).map(|i| {
            let d = m[(i, i)];
            if d > 0.0 && d.is_finite() {
                1.0 / d.sqrt()
            } else {
                1.0
            }
        }));
        let scaled = DMatrix::from_fn(n, n, |i, j| m[(i, j)] * scale[i] * scale[j]);
        if scaled.iter().any(|v| !v.is_finite()) {
            return Err(EngineError::Singular);
        }
        let factor = match scaled.clone().cholesky() {
            Some(c) => Factor::Cholesky(c),
            None => Factor::Lu(scaled.lu()),
        };
        Ok(Self { m, scale, factor })
    }

    fn raw_solve(&self, b: &DVector<f64>) -> Result<DVector<f64>, EngineError> {
        let bs = b.component_mul(&self.scale);
        let ys = match &self.factor {
            Factor::Cholesky(c) => c.solve(&bs),
            Factor::Lu(lu) => lu.solve(&bs).ok_or(EngineError::Singular)?,
        };
        let x = ys.component_mul(&self.scale);
        if x.iter().all(|v| v.is_finite()) {
            Ok(x)
        } else {
            Err(EngineError::Singular)
        }
    }

    fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>, EngineError> {
        let x = self.raw_solve(b)?;
        let r = b - &self.m * &x;
        Ok(x + self.raw_solve(&r)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    /// min tr X  s.t.  h^H X h > y > 1, X in 2x2 Hermitian PSD; optimum 1 / |h|^2.
    fn single_block() -> BarrierProblem {
        let h = CVector::from_vec(vec![c(1.0, 0.5), c(-0.5, 2.0)]);
        BarrierProblem {
            dim: 2,
            num_blocks: 1,
            channels: vec![h],
            constraints: vec![Constraint { user: 0, block_coef: vec![1.0], scalar: 0 }],
            lower: vec![1.0],
            block_weight: 1.0,
            scalar_objective: vec![0.0],
            equalities: vec![],
        }
    }

    #[test]
    fn newton_direction_solves_full_system() {
        // compare the Woodbury direction against a dense real Hessian built by
        // finite differences of the barrier function
        let prob = single_block();
        let p = Point {
            blocks: vec![CMatrix::from_row_slice(2, 2, &[c(2.0, 0.0), c(0.3, -0.2), c(0.3, 0.2), c(1.5, 0.0)])],
            scalars: vec![1.4],
        };
        let tau = 3.0;
        let (dir, _) = prob.newton(&p, tau).unwrap();
        // real coordinates: x11, x22, re x12, im x12, y
        let pack = |v: &[f64]| Point {
            blocks: vec![CMatrix::from_row_slice(
                2,
                2,
                &[c(v[0], 0.0), c(v[2], v[3]), c(v[2], -v[3]), c(v[1], 0.0)],
            )],
            scalars: vec![v[4]],
        };
        let x0 = [2.0, 1.5, 0.3, -0.2, 1.4];
        let f = |v: &[f64]| prob.barrier_value(&pack(v), tau).unwrap();
        let eps = 1e-4;
        let grad = |v: &[f64]| -> Vec<f64> {
            (0..5)
                .map(|i| {
                    let mut a = v.to_vec();
                    let mut b = v.to_vec();
                    a[i] += eps;
                    b[i] -= eps;
                    (f(&a) - f(&b)) / (2.0 * eps)
                })
                .collect()
        };
        let g0 = grad(&x0);
        let hess = DMatrix::from_fn(5, 5, |i, j| {
            let mut a = x0.to_vec();
            let mut b = x0.to_vec();
            a[j] += eps;
            b[j] -= eps;
            (grad(&a)[i] - grad(&b)[i]) / (2.0 * eps)
        });
        let hs = (&hess + hess.transpose()) * 0.5;
        let step = hs.lu().solve(&-DVector::from_vec(g0)).unwrap();
        let d = &dir.blocks[0];
        let got = [d[(0, 0)].re, d[(1, 1)].re, d[(0, 1)].re, d[(0, 1)].im, dir.scalars[0]];
        for (a, b) in got.iter().zip(step.iter()) {
            assert!((a - b).abs() < 1e-4 * (1.0 + b.abs()), "{got:?} vs {step:?}");
        }
    }

    #[test]
    fn path_following_reaches_closed_form() {
        let prob = single_block();
        let mut p = Point { blocks: vec![CMatrix::identity(2, 2)], scalars: vec![1.5] };
        let mut budget = Budget { used: 0, max: 500, deadline: None };
        let mut tau = 1.0;
        loop {
            prob.center(&mut p, tau, &mut budget).unwrap();
            if prob.degree() / tau <= 1e-7 {
                break;
            }
            tau *= 20.0;
        }
        // central points are within degree / tau of the optimum
        let gap = prob.objective(&p) - 1.0 / prob.channels[0].norm_squared();
        assert!(gap > 0.0 && gap <= 1.01 * prob.degree() / tau, "{gap:e}");
    }

    #[test]
    fn equality_is_preserved() {
        let mut prob = single_block();
        let e = CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.2, 0.1), c(0.2, -0.1), c(0.5, 0.0)]);
        prob.equalities = vec![e.clone()];
        prob.block_weight = 0.0;
        prob.scalar_objective = vec![1.0];
        let mut p = Point { blocks: vec![CMatrix::identity(2, 2) * c(2.0, 0.0)], scalars: vec![1.5] };
        let before = herm_dot(&e, &p.blocks[0]);
        let mut budget = Budget { used: 0, max: 200, deadline: None };
        prob.center(&mut p, 5.0, &mut budget).unwrap();
        assert!((herm_dot(&e, &p.blocks[0]) - before).abs() < 1e-10 * before);
    }
}
