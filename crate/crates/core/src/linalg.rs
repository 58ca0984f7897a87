//! Small dense complex linear-algebra helpers on top of `nalgebra`.
//!
//! Everything works on native complex matrices; Hermitian quantities are kept
//! as full `n x n` complex matrices.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

pub const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
pub const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };

/// `a^H b`
pub fn inner(a: &CVector, b: &CVector) -> Complex64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

/// `h^H X h` for Hermitian `X`; the imaginary part is discarded.
pub fn quad_form(x: &CMatrix, h: &CVector) -> f64 {
    let xh = x * h;
    inner(h, &xh).re
}

/// `Re tr(A B)` for Hermitian `A`, `B`.
pub fn herm_dot(a: &CMatrix, b: &CMatrix) -> f64 {
    let n = a.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            // tr(AB) = sum_ij A_ij B_ji
            let p = a[(i, j)] * b[(j, i)];
            acc += p.re;
        }
    }
    acc
}

pub fn trace_re(a: &CMatrix) -> f64 {
    (0..a.nrows()).map(|i| a[(i, i)].re).sum()
}

pub fn outer(a: &CVector) -> CMatrix {
    a * a.adjoint()
}

/// Symmetrize `(A + A^H) / 2` in place.
pub fn hermitianize(a: &mut CMatrix) {
    let n = a.nrows();
    for i in 0..n {
        a[(i, i)].im = 0.0;
        for j in (i + 1)..n {
            let v = (a[(i, j)] + a[(j, i)].conj()) * 0.5;
            a[(i, j)] = v;
            a[(j, i)] = v.conj();
        }
    }
}

pub fn frobenius(a: &CMatrix) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Eigen-decomposition of a Hermitian matrix with eigenvalues sorted in
/// descending order. Columns of the returned matrix are the eigenvectors.
pub fn hermitian_eig(a: &CMatrix) -> (Vec<f64>, CMatrix) {
    let mut sym = a.clone();
    hermitianize(&mut sym);
    let eig = sym.symmetric_eigen();
    let n = a.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = CMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Singular values in descending order.
pub fn singular_values(a: &CMatrix) -> Vec<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// Full left singular basis of `a` (`m x m`) with singular values padded by
/// zeros to length `m`, both sorted by descending singular value.
pub fn left_singular_basis(a: &CMatrix) -> (Vec<f64>, CMatrix) {
    let m = a.nrows();
    let k = a.ncols();
    // Pad with zero columns so the thin SVD returns a complete basis.
    let mut padded = CMatrix::zeros(m, m.max(k));
    padded.view_mut((0, 0), (m, k)).copy_from(a);
    let svd = padded.svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let sv = svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]));
    let mut basis = CMatrix::zeros(m, m);
    let mut values = Vec::with_capacity(m);
    for (dst, &src) in order.iter().take(m).enumerate() {
        basis.set_column(dst, &u.column(src));
        values.push(sv[src]);
    }
    (values, basis)
}

/// Hermitian positive definite inverse through Cholesky; `None` when the
/// matrix is not numerically positive definite.
pub fn hpd_inverse(a: &CMatrix) -> Option<CMatrix> {
    let mut inv = a.clone().cholesky()?.inverse();
    hermitianize(&mut inv);
    Some(inv)
}

pub fn is_positive_definite(a: &CMatrix) -> bool {
    a.clone().cholesky().is_some()
}

/// `log det A` for Hermitian positive definite `A`.
pub fn log_det_hpd(a: &CMatrix) -> Option<f64> {
    let chol = a.clone().cholesky()?;
    let l = chol.l_dirty();
    let mut acc = 0.0;
    for i in 0..a.nrows() {
        let d = l[(i, i)].re;
        if d <= 0.0 || !d.is_finite() {
            return None;
        }
        acc += d.ln();
    }
    Some(2.0 * acc)
}

/// Real symmetric positive definite solve with an LU fallback.
pub fn solve_spd(m: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(chol) = m.clone().cholesky() {
        return Some(chol.solve(b));
    }
    m.clone().lu().solve(b)
}
