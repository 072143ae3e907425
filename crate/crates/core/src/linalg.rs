//! Dense complex matrices with Hermitian-aware helpers.
//!
//! Everything in this crate lives on small truncated Hilbert spaces (a qubit,
//! a few tens of Fock levels, or their tensor product), so a flat row-major
//! `Vec<Complex64>` is all the storage needed. The hot trajectory loops only use
//! products, sums and traces; spectral work (inverse square roots, exponentials,
//! matrix functions) goes through [`herm_eig`].

use std::fmt;
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Sub};

use nalgebra::DMatrix;
use num_complex::Complex64;
use thiserror::Error;

/// Largest dimension [`kron`] will build.
pub const MAX_DIM: usize = 4096;

/// Relative Frobenius tolerance for the Hermiticity precondition.
pub const HERMITIAN_TOL: f64 = 1e-10;

/// Default eigenvalue floor for [`inv_sqrt_psd`].
pub const DEFAULT_EIG_FLOOR: f64 = 1e-12;


pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);
pub const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension {0} exceeds the configured maximum {MAX_DIM}")]
    DimensionOverflow(usize),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("matrix is not Hermitian (relative residual {0:.3e})")]
    NotHermitian(f64),
    #[error("matrix has a negative eigenvalue {0:.3e}")]
    NegativeEigenvalue(f64),
    #[error("matrix function returned a non-finite value at eigenvalue {0}")]
    NonFiniteFunction(f64),
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("matrix dimension must be at least 1")]
    Empty,
}

/// Square complex matrix stored row-major.
#[derive(Clone, PartialEq)]
pub struct CMatrix {
    dim: usize,
    data: Vec<Complex64>,
}

impl fmt::Debug for CMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "CMatrix({}x{})", self.dim, self.dim)?;
        for i in 0..self.dim {
            write!(f, "  [")?;
            for j in 0..self.dim {
                let z = self[(i, j)];
                write!(f, " {:+.4}{:+.4}i", z.re, z.im)?;
            }
            writeln!(f, " ]")?;
        }
        Ok(())
    }
}

impl CMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![ZERO; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = ONE;
        }
        m
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                data.push(f(i, j));
            }
        }
        Self { dim, data }
    }

    pub fn from_diag(diag: &[Complex64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * diag.len() + i] = d;
        }
        m
    }

    pub fn from_real_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * diag.len() + i] = Complex64::new(d, 0.0);
        }
        m
    }

    /// Builds a matrix from row-major entries, checking shape and finiteness.
    pub fn from_row_major(dim: usize, data: Vec<Complex64>) -> Result<Self, LinalgError> {
        if dim == 0 {
            return Err(LinalgError::Empty);
        }
        if data.len() != dim * dim {
            return Err(LinalgError::DimensionMismatch(dim * dim, data.len()));
        }
        let m = Self { dim, data };
        if !m.is_finite() {
            return Err(LinalgError::NonFinite);
        }
        Ok(m)
    }

    /// Outer product |u⟩⟨v|.
    pub fn outer(u: &[Complex64], v: &[Complex64]) -> Self {
        assert_eq!(u.len(), v.len());
        Self::from_fn(u.len(), |i, j| u[i] * v[j].conj())
    }

    /// Projector |k⟩⟨k| on the computational basis.
    pub fn basis_projector(dim: usize, k: usize) -> Self {
        let mut m = Self::zeros(dim);
        m.data[k * dim + k] = ONE;
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn diag(&self) -> Vec<Complex64> {
        (0..self.dim).map(|i| self[(i, i)]).collect()
    }

    pub fn real_diag(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self[(i, i)].re).collect()
    }

    pub fn is_diagonal(&self) -> bool {
        (0..self.dim).all(|i| (0..self.dim).all(|j| i == j || self[(i, j)] == ZERO))
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.dim, |i, j| self[(j, i)].conj())
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.dim).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|&z| z * s).collect(),
        }
    }

    pub fn scale_real(&self, s: f64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|&z| z * s).collect(),
        }
    }

    /// `self += s * other`.
    pub fn add_scaled(&mut self, other: &CMatrix, s: Complex64) {
        debug_assert_eq!(self.dim, other.dim);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b * s;
        }
    }

    /// `self += s * other` for a real scalar.
    pub fn add_scaled_real(&mut self, other: &CMatrix, s: f64) {
        debug_assert_eq!(self.dim, other.dim);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b * s;
        }
    }

    pub fn matmul(&self, rhs: &CMatrix) -> CMatrix {
        assert_eq!(self.dim, rhs.dim, "matmul dimension mismatch");
        let n = self.dim;
        let mut out = vec![ZERO; n * n];
        for i in 0..n {
            let row = &mut out[i * n..(i + 1) * n];
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == ZERO {
                    continue;
                }
                let rk = &rhs.data[k * n..(k + 1) * n];
                for (o, &b) in row.iter_mut().zip(rk) {
                    *o += a * b;
                }
            }
        }
        CMatrix { dim: n, data: out }
    }

    /// `self * rhs†` without forming the adjoint.
    pub fn matmul_adjoint(&self, rhs: &CMatrix) -> CMatrix {
        assert_eq!(self.dim, rhs.dim, "matmul dimension mismatch");
        let n = self.dim;
        let mut out = vec![ZERO; n * n];
        for i in 0..n {
            let ri = &self.data[i * n..(i + 1) * n];
            for j in 0..n {
                let rj = &rhs.data[j * n..(j + 1) * n];
                out[i * n + j] = ri.iter().zip(rj).map(|(&a, &b)| a * b.conj()).sum();
            }
        }
        CMatrix { dim: n, data: out }
    }

    /// `self† * rhs`.
    pub fn adjoint_matmul(&self, rhs: &CMatrix) -> CMatrix {
        self.adjoint().matmul(rhs)
    }

    /// The congruence `A ρ A†` with `A = self`.
    pub fn sandwich(&self, rho: &CMatrix) -> CMatrix {
        self.matmul(rho).matmul_adjoint(self)
    }

    /// `Tr(A ρ A†)` computed without materialising the product.
    pub fn sandwich_trace(&self, rho: &CMatrix) -> f64 {
        let n = self.dim;
        let ar = self.matmul(rho);
        let mut acc = 0.0;
        for i in 0..n {
            for k in 0..n {
                acc += (ar.data[i * n + k] * self.data[i * n + k].conj()).re;
            }
        }
        acc
    }

    /// `Tr(self · rhs)`.
    pub fn trace_product(&self, rhs: &CMatrix) -> Complex64 {
        let n = self.dim;
        let mut acc = ZERO;
        for i in 0..n {
            for k in 0..n {
                acc += self.data[i * n + k] * rhs.data[k * n + i];
            }
        }
        acc
    }

    pub fn commutator(&self, rhs: &CMatrix) -> CMatrix {
        &self.matmul(rhs) - &rhs.matmul(self)
    }

    /// Replaces the matrix with `(A + A†)/2`.
    pub fn hermitize(&mut self) {
        let n = self.dim;
        for i in 0..n {
            let d = self.data[i * n + i];
            self.data[i * n + i] = Complex64::new(d.re, 0.0);
            for j in (i + 1)..n {
                let a = self.data[i * n + j];
                let b = self.data[j * n + i];
                let m = (a + b.conj()) * 0.5;
                self.data[i * n + j] = m;
                self.data[j * n + i] = m.conj();
            }
        }
    }

    /// ‖A − A†‖_F / max(‖A‖_F, 1).
    pub fn hermiticity_residual(&self) -> f64 {
        let n = self.dim;
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += (self[(i, j)] - self[(j, i)].conj()).norm_sqr();
            }
        }
        acc.sqrt() / self.frobenius_norm().max(1.0)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_residual() <= tol
    }

    /// ‖A − B‖_F.
    pub fn distance(&self, other: &CMatrix) -> f64 {
        assert_eq!(self.dim, other.dim);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// Restriction to the rows and columns listed in `idx`.
    pub fn submatrix(&self, idx: &[usize]) -> CMatrix {
        CMatrix::from_fn(idx.len(), |i, j| self[(idx[i], idx[j])])
    }

    fn to_nalgebra(&self) -> DMatrix<Complex64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.data)
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = Complex64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.data[i * self.dim + j]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        &mut self.data[i * self.dim + j]
    }
}

impl Add for &CMatrix {
    type Output = CMatrix;
    fn add(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!(self.dim, rhs.dim);
        CMatrix {
            dim: self.dim,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &CMatrix {
    type Output = CMatrix;
    fn sub(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!(self.dim, rhs.dim);
        CMatrix {
            dim: self.dim,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl AddAssign<&CMatrix> for CMatrix {
    fn add_assign(&mut self, rhs: &CMatrix) {
        assert_eq!(self.dim, rhs.dim);
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
    }
}

impl Mul for &CMatrix {
    type Output = CMatrix;
    fn mul(self, rhs: &CMatrix) -> CMatrix {
        self.matmul(rhs)
    }
}

impl Mul<Complex64> for &CMatrix {
    type Output = CMatrix;
    fn mul(self, s: Complex64) -> CMatrix {
        self.scale(s)
    }
}

impl Mul<f64> for &CMatrix {
    type Output = CMatrix;
    fn mul(self, s: f64) -> CMatrix {
        self.scale_real(s)
    }
}

/// Tensor product; `a` is the slow index.
pub fn kron(a: &CMatrix, b: &CMatrix) -> Result<CMatrix, LinalgError> {
    let dim = a
        .dim
        .checked_mul(b.dim)
        .filter(|&d| d <= MAX_DIM)
        .ok_or(LinalgError::DimensionOverflow(a.dim.saturating_mul(b.dim)))?;
    let bd = b.dim;
    Ok(CMatrix::from_fn(dim, |r, c| {
        a[(r / bd, c / bd)] * b[(r % bd, c % bd)]
    }))
}

/// Tensor product of state vectors, `u` slow.
pub fn kron_vec(u: &[Complex64], v: &[Complex64]) -> Vec<Complex64> {
    u.iter().flat_map(|&a| v.iter().map(move |&b| a * b)).collect()
}

/// Spectral decomposition `A = U diag(λ) U†` of a Hermitian matrix.
#[derive(Debug, Clone)]
pub struct HermitianEig {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Eigenvectors as columns.
    pub eigenvectors: CMatrix,
}

impl HermitianEig {
    /// `U f(Λ) U†`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> Complex64) -> CMatrix {
        let n = self.eigenvalues.len();
        let u = &self.eigenvectors;
        let fl: Vec<Complex64> = self.eigenvalues.iter().map(|&l| f(l)).collect();
        CMatrix::from_fn(n, |i, j| {
            (0..n).map(|k| u[(i, k)] * fl[k] * u[(j, k)].conj()).sum()
        })
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues[0]
    }
}

fn check_hermitian(a: &CMatrix) -> Result<(), LinalgError> {
    if a.dim == 0 {
        return Err(LinalgError::Empty);
    }
    if !a.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    let r = a.hermiticity_residual();
    if r > HERMITIAN_TOL {
        return Err(LinalgError::NotHermitian(r));
    }
    Ok(())
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues ascending.
pub fn herm_eig(a: &CMatrix) -> Result<HermitianEig, LinalgError> {
    check_hermitian(a)?;
    let mut h = a.clone();
    h.hermitize();
    let n = h.dim;
    let (values, vectors) = {
        let eig = h.to_nalgebra().symmetric_eigen();
        if eig.eigenvalues.iter().all(|l| l.is_finite()) {
            let v = CMatrix::from_fn(n, |i, j| eig.eigenvectors[(i, j)]);
            (eig.eigenvalues.as_slice().to_vec(), v)
        } else {
            // nalgebra's implicit QR can underflow to NaN on strongly graded
            // matrices (entries spanning 1 … 1e-150, e.g. nearly pure states).
            jacobi_eig(&h)?
        }
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| values[x].total_cmp(&values[y]));
    let eigenvalues = order.iter().map(|&k| values[k]).collect();
    let eigenvectors = CMatrix::from_fn(n, |i, j| vectors[(i, order[j])]);
    Ok(HermitianEig {
        eigenvalues,
        eigenvectors,
    })
}

/// Cyclic complex Jacobi eigensolver; slower than QR but robust on graded matrices.
fn jacobi_eig(a: &CMatrix) -> Result<(Vec<f64>, CMatrix), LinalgError> {
    let n = a.dim;
    let mut m = a.clone();
    let mut v = CMatrix::identity(n);
    for _ in 0..100 {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                let r = apq.norm();
                if r == 0.0 {
                    continue;
                }
                let (app, aqq) = (m[(p, p)].re, m[(q, q)].re);
                if r <= f64::EPSILON * 1e-3 * (app.abs() * aqq.abs()).sqrt() || r < f64::MIN_POSITIVE {
                    m[(p, q)] = ZERO;
                    m[(q, p)] = ZERO;
                    continue;
                }
                rotated = true;
                let phase = apq / r;
                let tau = (aqq - app) / (2.0 * r);
                let t = if tau == 0.0 {
                    1.0
                } else {
                    tau.signum() / (tau.abs() + tau.hypot(1.0))
                };
                let c = 1.0 / t.hypot(1.0);
                let sp = phase * (t * c);
                let sm = phase.conj() * (t * c);
                for k in 0..n {
                    let (kp, kq) = (m[(k, p)], m[(k, q)]);
                    m[(k, p)] = kp * c - kq * sm;
                    m[(k, q)] = kp * sp + kq * c;
                }
                for k in 0..n {
                    let (pk, qk) = (m[(p, k)], m[(q, k)]);
                    m[(p, k)] = pk * c - qk * sp;
                    m[(q, k)] = pk * sm + qk * c;
                }
                m[(p, q)] = ZERO;
                m[(q, p)] = ZERO;
                for k in 0..n {
                    let (kp, kq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = kp * c - kq * sm;
                    v[(k, q)] = kp * sp + kq * c;
                }
            }
        }
        if !rotated {
            let values: Vec<f64> = (0..n).map(|i| m[(i, i)].re).collect();
            if values.iter().any(|l| !l.is_finite()) {
                return Err(LinalgError::NonFinite);
            }
            return Ok((values, v));
        }
    }
    Err(LinalgError::NonFinite)
}

/// Hermitian `B` with `B a B = I`; eigenvalues below `floor` are raised to it.
pub fn inv_sqrt_psd(a: &CMatrix, floor: f64) -> Result<CMatrix, LinalgError> {
    assert!(floor > 0.0, "eigenvalue floor must be positive");
    let eig = herm_eig(a)?;
    let scale = a.frobenius_norm().max(f64::MIN_POSITIVE);
    if eig.min_eigenvalue() < -1e-10 * scale {
        return Err(LinalgError::NegativeEigenvalue(eig.min_eigenvalue()));
    }
    let mut b = eig.reconstruct_with(|l| Complex64::new(1.0 / l.max(floor).sqrt(), 0.0));
    b.hermitize();
    Ok(b)
}

/// `exp(scale · h)` for Hermitian `h`.
pub fn herm_expm(h: &CMatrix, scale: Complex64) -> Result<CMatrix, LinalgError> {
    let eig = herm_eig(h)?;
    Ok(eig.reconstruct_with(|l| (scale * l).exp()))
}

/// Applies a real function to the spectrum of a Hermitian matrix.
pub fn func_of_hermitian(a: &CMatrix, f: impl Fn(f64) -> f64) -> Result<CMatrix, LinalgError> {
    let eig = herm_eig(a)?;
    let values: Vec<f64> = eig.eigenvalues.iter().map(|&l| f(l)).collect();
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(LinalgError::NonFiniteFunction(eig.eigenvalues[pos]));
    }
    let n = a.dim;
    let u = &eig.eigenvectors;
    let mut out = CMatrix::from_fn(n, |i, j| {
        (0..n)
            .map(|k| u[(i, k)] * values[k] * u[(j, k)].conj())
            .sum()
    });
    out.hermitize();
    Ok(out)
}

/// Real function of a diagonal real matrix, evaluated entrywise.
///
/// Number-operator functions are diagonal in the Fock basis, where this avoids
/// an eigendecomposition and keeps exact zeros off the diagonal.
pub fn func_of_real_diagonal(diag: &[f64], f: impl Fn(f64) -> f64) -> Result<CMatrix, LinalgError> {
    let values: Vec<f64> = diag.iter().map(|&l| f(l)).collect();
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(LinalgError::NonFiniteFunction(diag[pos]));
    }
    Ok(CMatrix::from_real_diag(&values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn sx() -> CMatrix {
        CMatrix::from_row_major(2, vec![ZERO, ONE, ONE, ZERO]).unwrap()
    }

    fn sz() -> CMatrix {
        CMatrix::from_real_diag(&[-1.0, 1.0])
    }

    fn random_matrix(dim: usize, entries: &[f64]) -> CMatrix {
        CMatrix::from_fn(dim, |i, j| {
            let k = 2 * (i * dim + j);
            c(entries[k % entries.len()], entries[(k + 1) % entries.len()])
        })
    }

    fn random_hermitian(dim: usize, entries: &[f64]) -> CMatrix {
        let a = random_matrix(dim, entries);
        let mut h = &a + &a.adjoint();
        h.hermitize();
        h
    }

    #[test]
    fn kron_identity_and_diagonal() {
        let i4 = kron(&CMatrix::identity(2), &CMatrix::identity(2)).unwrap();
        assert_eq!(i4, CMatrix::identity(4));
        let z = kron(&sz(), &CMatrix::identity(2)).unwrap();
        assert_eq!(z, CMatrix::from_real_diag(&[-1.0, -1.0, 1.0, 1.0]));
    }

    #[test]
    fn kron_xx_squares_to_identity() {
        let xx = kron(&sx(), &sx()).unwrap();
        assert!(xx.matmul(&xx).distance(&CMatrix::identity(4)) < 1e-15);
    }

    #[test]
    fn kron_index_layout() {
        let a = random_matrix(2, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8]);
        let b = random_matrix(3, &[0.9, -0.2, 0.35, 0.4, -0.5, 0.61, 0.7, 0.18, 0.11]);
        let k = kron(&a, &b).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                for p in 0..3 {
                    for q in 0..3 {
                        assert_eq!(k[(i * 3 + p, j * 3 + q)], a[(i, j)] * b[(p, q)]);
                    }
                }
            }
        }
    }

    #[test]
    fn kron_rejects_overflow() {
        let big = CMatrix::identity(128);
        assert!(matches!(
            kron(&big, &CMatrix::identity(64)),
            Err(LinalgError::DimensionOverflow(8192))
        ));
    }

    #[test]
    fn eig_of_simple_matrices() {
        let e = herm_eig(&CMatrix::identity(3)).unwrap();
        assert!(e.eigenvalues.iter().all(|&l| (l - 1.0).abs() < 1e-14));
        let e = herm_eig(&sx()).unwrap();
        assert!((e.eigenvalues[0] + 1.0).abs() < 1e-14 && (e.eigenvalues[1] - 1.0).abs() < 1e-14);
        let e = herm_eig(&CMatrix::from_real_diag(&[4.0, 1.0])).unwrap();
        assert_eq!(e.eigenvalues, vec![1.0, 4.0]);
    }

    #[test]
    fn eig_rejects_non_hermitian() {
        let m = CMatrix::from_row_major(2, vec![ZERO, ONE, ZERO, ZERO]).unwrap();
        assert!(matches!(herm_eig(&m), Err(LinalgError::NotHermitian(_))));
    }

    #[test]
    fn inv_sqrt_examples() {
        let b = inv_sqrt_psd(&CMatrix::identity(3), DEFAULT_EIG_FLOOR).unwrap();
        assert!(b.distance(&CMatrix::identity(3)) < 1e-14);
        let b = inv_sqrt_psd(&CMatrix::from_real_diag(&[4.0, 1.0]), DEFAULT_EIG_FLOOR).unwrap();
        assert!(b.distance(&CMatrix::from_real_diag(&[0.5, 1.0])) < 1e-14);
    }

    #[test]
    fn inv_sqrt_of_step_normaliser() {
        // S = M0†M0 + dt L†L with L = σz, dt = 0.01
        let dt = 0.01;
        let l = sz();
        let ll = l.adjoint_matmul(&l);
        let mut m0 = CMatrix::identity(2);
        m0.add_scaled_real(&ll, -0.5 * dt);
        let mut s = m0.adjoint_matmul(&m0);
        s.add_scaled_real(&ll, dt);
        let b = inv_sqrt_psd(&s, DEFAULT_EIG_FLOOR).unwrap();
        assert!(b.matmul(&s).matmul(&b).distance(&CMatrix::identity(2)) < 1e-12);
    }

    #[test]
    fn inv_sqrt_rejects_negative() {
        let m = CMatrix::from_real_diag(&[1.0, -0.5]);
        assert!(matches!(
            inv_sqrt_psd(&m, DEFAULT_EIG_FLOOR),
            Err(LinalgError::NegativeEigenvalue(_))
        ));
    }

    #[test]
    fn expm_examples() {
        assert!(herm_expm(&sz(), ZERO).unwrap().distance(&CMatrix::identity(2)) < 1e-15);
        let u = herm_expm(&sz(), c(0.0, -PI / 2.0)).unwrap();
        let want = CMatrix::from_diag(&[c(0.0, PI / 2.0).exp(), c(0.0, -PI / 2.0).exp()]);
        // σz = diag(-1, +1) in the g/e ordering
        assert!(u.distance(&want) < 1e-14);
    }

    #[test]
    fn expm_sigma_x_matches_series() {
        // Oracle: truncated power series Σ (−iπ/2 σx)^k / k!
        let x = sx();
        let gen = x.scale(c(0.0, -PI / 2.0));
        let mut term = CMatrix::identity(2);
        let mut sum = CMatrix::identity(2);
        for k in 1..60 {
            term = term.matmul(&gen).scale_real(1.0 / k as f64);
            sum += &term;
        }
        let want = x.scale(c(0.0, -1.0));
        assert!(sum.distance(&want) < 1e-13);
        let u = herm_expm(&x, c(0.0, -PI / 2.0)).unwrap();
        assert!(u.distance(&sum) < 1e-13);
    }

    #[test]
    fn function_of_number_operator() {
        let n = CMatrix::from_real_diag(&[0.0, 1.0, 2.0]);
        let same = func_of_hermitian(&n, |l| l).unwrap();
        assert!(same.distance(&n) < 1e-14);
        let theta = 0.37;
        let cosm = func_of_hermitian(&n, |l| (theta * l.sqrt()).cos()).unwrap();
        let want = CMatrix::from_real_diag(&[1.0, theta.cos(), (theta * 2f64.sqrt()).cos()]);
        assert!(cosm.distance(&want) < 1e-14);
    }

    #[test]
    fn sinc_like_function_limit() {
        let theta = 0.8;
        let f = |l: f64| {
            if l == 0.0 {
                theta
            } else {
                (theta * l.sqrt()).sin() / l.sqrt()
            }
        };
        // Series oracle: sin(θ√λ)/√λ = θ − θ³λ/6 + θ⁵λ²/120 − …
        for &lam in &[1e-6, 1e-4, 1e-3] {
            let series = theta - theta.powi(3) * lam / 6.0 + theta.powi(5) * lam * lam / 120.0;
            assert!((f(lam) - series).abs() < 1e-9);
        }
        assert!((f(1e-12) - f(0.0)).abs() < 1e-12);
        let m = func_of_real_diagonal(&[0.0, 1.0, 2.0], f).unwrap();
        let want = [theta, theta.sin(), (theta * 2f64.sqrt()).sin() / 2f64.sqrt()];
        for (k, w) in want.iter().enumerate() {
            assert!((m[(k, k)].re - w).abs() < 1e-15);
        }
    }

    #[test]
    fn func_rejects_nan() {
        let n = CMatrix::from_real_diag(&[0.0, 1.0]);
        assert!(matches!(
            func_of_hermitian(&n, |l| 1.0 / l - f64::INFINITY),
            Err(LinalgError::NonFiniteFunction(_))
        ));
    }

    fn graded_pure_state(n: usize) -> CMatrix {
        // amplitudes decaying like a resonant-probe trajectory near the vacuum
        let psi: Vec<Complex64> = (0..n)
            .map(|k| c(10f64.powf(-2.5 * (k * k) as f64 / 4.0), 0.1 * k as f64))
            .collect();
        let mut m = CMatrix::outer(&psi, &psi);
        m.hermitize();
        m
    }

    #[test]
    fn jacobi_handles_graded_matrices() {
        for n in [5, 9, 13] {
            let m = graded_pure_state(n);
            let (vals, vecs) = jacobi_eig(&m).unwrap();
            assert!(vals.iter().all(|l| l.is_finite() && *l > -1e-15));
            let eig = HermitianEig { eigenvalues: vals, eigenvectors: vecs };
            assert!(eig.reconstruct_with(|l| c(l, 0.0)).distance(&m) < 1e-14);
            let e = herm_eig(&m).unwrap();
            assert!(e.min_eigenvalue() > -1e-15);
        }
    }

    proptest! {
        #[test]
        fn jacobi_agrees_with_qr(v in proptest::collection::vec(-1.0..1.0f64, 32)) {
            let a = CMatrix::from_fn(4, |i, j| c(v[4 * i + j] + v[4 * j + i], v[16 + 4 * i + j] - v[16 + 4 * j + i]));
            let (mut jv, jvec) = jacobi_eig(&a).unwrap();
            let eig = HermitianEig { eigenvalues: jv.clone(), eigenvectors: jvec };
            prop_assert!(eig.reconstruct_with(|l| c(l, 0.0)).distance(&a) < 1e-12);
            jv.sort_by(f64::total_cmp);
            let q = herm_eig(&a).unwrap().eigenvalues;
            for (x, y) in jv.iter().zip(&q) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn eig_reconstructs(entries in proptest::collection::vec(-1.0f64..1.0, 32), dim in 1usize..5) {
            let a = random_hermitian(dim, &entries);
            let e = herm_eig(&a).unwrap();
            let u = &e.eigenvectors;
            let back = e.reconstruct_with(|l| c(l, 0.0));
            prop_assert!(back.distance(&a) <= 1e-10 * a.frobenius_norm().max(1e-300));
            prop_assert!(u.adjoint_matmul(u).distance(&CMatrix::identity(dim)) < 1e-10);
            prop_assert!(e.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
        }

        #[test]
        fn kron_is_associative(x in proptest::collection::vec(-1.0f64..1.0, 18)) {
            let a = random_matrix(2, &x[0..8]);
            let b = random_matrix(2, &x[4..12]);
            let c3 = random_matrix(3, &x);
            let left = kron(&kron(&a, &b).unwrap(), &c3).unwrap();
            let right = kron(&a, &kron(&b, &c3).unwrap()).unwrap();
            prop_assert!(left.distance(&right) < 1e-12);
        }

        #[test]
        fn inv_sqrt_whitens(entries in proptest::collection::vec(-1.0f64..1.0, 32), dim in 1usize..5) {
            let a = random_matrix(dim, &entries);
            // a†a + I has spectrum ≥ 1 ≫ 10·floor
            let mut s = a.adjoint_matmul(&a);
            s.add_scaled_real(&CMatrix::identity(dim), 1.0);
            let b = inv_sqrt_psd(&s, DEFAULT_EIG_FLOOR).unwrap();
            prop_assert!(b.matmul(&s).matmul(&b).distance(&CMatrix::identity(dim)) < 1e-12);
        }

        #[test]
        fn expm_is_unitary(entries in proptest::collection::vec(-1.0f64..1.0, 32), dim in 1usize..5, t in 0.0f64..10.0) {
            let h = random_hermitian(dim, &entries);
            let u = herm_expm(&h, c(0.0, -t)).unwrap();
            let v = herm_expm(&h, c(0.0, t)).unwrap();
            prop_assert!(u.matmul(&v).distance(&CMatrix::identity(dim)) < 1e-10);
            prop_assert!(u.adjoint_matmul(&u).distance(&CMatrix::identity(dim)) < 1e-10);
        }
    }
}
