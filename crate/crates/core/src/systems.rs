//! Concrete qubit and photon operators, states and interaction propagators.
//!
//! Conventions used throughout the crate:
//! - qubit basis index 0 is |g⟩ and index 1 is |e⟩, so σz = |e⟩⟨e| − |g⟩⟨g| = diag(−1, +1);
//! - composite qubit/photon spaces are ordered qubit ⊗ photon (qubit is the slow index);
//! - Fock spaces are truncated at `nmax`, giving dimension `nmax + 1`.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, kron, CMatrix, LinalgError, ONE, ZERO};

/// Default truncation tolerance for coherent states.
pub const COHERENT_TAIL_TOL: f64 = 1e-8;

/// Default cutoff for qubit-probe scenarios.
pub const DEFAULT_NMAX_PROBE: usize = 10;
/// Default cutoff for coherent-state scenarios.
pub const DEFAULT_NMAX_COHERENT: usize = 30;

/// Tolerances on the density-operator invariants.
pub const STATE_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StateError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("density operator is not Hermitian (residual {0:.3e})")]
    NotHermitian(f64),
    #[error("density operator trace is {0}, expected 1")]
    BadTrace(f64),
    #[error("density operator has negative eigenvalue {0:.3e}")]
    NotPositive(f64),
    #[error("coherent state with |alpha|^2 = {norm_sqr} loses {tail:.3e} probability beyond nmax = {nmax}")]
    TruncationTooSmall { norm_sqr: f64, nmax: usize, tail: f64 },
    #[error("state vector has zero norm")]
    ZeroVector,
}

/// Truncated single-mode Fock space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FockSpace {
    nmax: usize,
}

impl FockSpace {
    pub fn new(nmax: usize) -> Self {
        Self { nmax }
    }

    pub fn nmax(&self) -> usize {
        self.nmax
    }

    pub fn dim(&self) -> usize {
        self.nmax + 1
    }

    /// Annihilation operator, a|k⟩ = √k |k−1⟩.
    pub fn annihilation(&self) -> CMatrix {
        let mut a = CMatrix::zeros(self.dim());
        for k in 1..self.dim() {
            a[(k - 1, k)] = Complex64::new((k as f64).sqrt(), 0.0);
        }
        a
    }

    pub fn creation(&self) -> CMatrix {
        self.annihilation().adjoint()
    }

    /// n = a†a = diag(0, …, nmax).
    pub fn number(&self) -> CMatrix {
        CMatrix::from_real_diag(&self.levels())
    }

    pub fn levels(&self) -> Vec<f64> {
        (0..self.dim()).map(|k| k as f64).collect()
    }

    /// `f(n)` as a diagonal matrix.
    pub fn number_function(&self, f: impl Fn(f64) -> f64) -> Result<CMatrix, LinalgError> {
        linalg::func_of_real_diagonal(&self.levels(), f)
    }

    /// e^{iφn}.
    pub fn phase_rotation(&self, phi: f64) -> CMatrix {
        let d: Vec<Complex64> = (0..self.dim())
            .map(|k| Complex64::from_polar(1.0, phi * k as f64))
            .collect();
        CMatrix::from_diag(&d)
    }

    pub fn basis(&self, k: usize) -> Vec<Complex64> {
        basis_vector(self.dim(), k)
    }
}

pub fn basis_vector(dim: usize, k: usize) -> Vec<Complex64> {
    let mut v = vec![ZERO; dim];
    v[k] = ONE;
    v
}

/// Qubit operators of the Pauli algebra.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pauli {
    X,
    Y,
    Z,
    /// σ+ = |e⟩⟨g|
    Plus,
    /// σ− = |g⟩⟨e|
    Minus,
}

pub fn pauli(which: Pauli) -> CMatrix {
    let i = Complex64::new(0.0, 1.0);
    let m = match which {
        Pauli::X => [ZERO, ONE, ONE, ZERO],
        Pauli::Y => [ZERO, i, -i, ZERO],
        Pauli::Z => [-ONE, ZERO, ZERO, ONE],
        Pauli::Plus => [ZERO, ZERO, ONE, ZERO],
        Pauli::Minus => [ZERO, ONE, ZERO, ZERO],
    };
    CMatrix::from_row_major(2, m.to_vec()).expect("2x2 literal")
}

/// Qubit ground state |g⟩.
pub fn ket_g() -> Vec<Complex64> {
    basis_vector(2, 0)
}

/// Qubit excited state |e⟩.
pub fn ket_e() -> Vec<Complex64> {
    basis_vector(2, 1)
}

/// Coherent state |α⟩ truncated to a Fock space.
#[derive(Debug, Clone)]
pub struct CoherentState {
    pub alpha: Complex64,
    pub space: FockSpace,
    /// Normalised amplitudes.
    pub amplitudes: Vec<Complex64>,
    /// Probability mass lost beyond `nmax` before renormalisation.
    pub tail: f64,
}

/// |α⟩ with components e^{−|α|²/2} α^k / √(k!), renormalised after truncation.
pub fn coherent(alpha: Complex64, space: FockSpace) -> Result<CoherentState, StateError> {
    coherent_with_tolerance(alpha, space, COHERENT_TAIL_TOL)
}

pub fn coherent_with_tolerance(
    alpha: Complex64,
    space: FockSpace,
    tol: f64,
) -> Result<CoherentState, StateError> {
    let mut amps = Vec::with_capacity(space.dim());
    let mut term = Complex64::new((-alpha.norm_sqr() / 2.0).exp(), 0.0);
    amps.push(term);
    for k in 1..space.dim() {
        term = term * alpha / (k as f64).sqrt();
        amps.push(term);
    }
    let mass: f64 = amps.iter().map(|z| z.norm_sqr()).sum();
    let tail = (1.0 - mass).max(0.0);
    if tail > tol {
        return Err(StateError::TruncationTooSmall {
            norm_sqr: alpha.norm_sqr(),
            nmax: space.nmax(),
            tail,
        });
    }
    let norm = mass.sqrt();
    for z in &mut amps {
        *z /= norm;
    }
    Ok(CoherentState {
        alpha,
        space,
        amplitudes: amps,
        tail,
    })
}

/// Hermitian, positive semidefinite, unit-trace matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityOperator {
    mat: CMatrix,
}

impl DensityOperator {
    /// Validates all density-operator invariants.
    pub fn new(mat: CMatrix) -> Result<Self, StateError> {
        if !mat.is_finite() {
            return Err(LinalgError::NonFinite.into());
        }
        let h = mat.hermiticity_residual();
        if h > STATE_TOL {
            return Err(StateError::NotHermitian(h));
        }
        let tr = mat.trace().re;
        if (tr - 1.0).abs() > STATE_TOL {
            return Err(StateError::BadTrace(tr));
        }
        let min = linalg::herm_eig(&mat)?.min_eigenvalue();
        if min < -STATE_TOL {
            return Err(StateError::NotPositive(min));
        }
        Ok(Self { mat })
    }

    /// Re-Hermitises and rescales to unit trace without a positivity check.
    ///
    /// Used after Kraus updates, which are positive by construction.
    pub fn normalized(mut mat: CMatrix) -> Self {
        mat.hermitize();
        let tr = mat.trace().re;
        let mat = mat.scale_real(1.0 / tr);
        Self { mat }
    }

    pub fn from_ket(psi: &[Complex64]) -> Result<Self, StateError> {
        let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum::<f64>();
        if norm == 0.0 {
            return Err(StateError::ZeroVector);
        }
        let n = norm.sqrt();
        let v: Vec<Complex64> = psi.iter().map(|z| z / n).collect();
        Ok(Self::normalized(CMatrix::outer(&v, &v)))
    }

    pub fn fock(space: FockSpace, k: usize) -> Self {
        Self::normalized(CMatrix::basis_projector(space.dim(), k))
    }

    /// Full-rank random state `GG†/Tr(GG†)` with a complex Ginibre `G`.
    pub fn random<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let mut normal = || -> f64 { Distribution::<f64>::sample(&StandardNormal, rng) };
        let g = CMatrix::from_fn(dim, |_, _| Complex64::new(normal(), normal()));
        Self::normalized(g.matmul(&g.adjoint()))
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self::normalized(CMatrix::identity(dim))
    }

    pub fn diagonal(pops: &[f64]) -> Result<Self, StateError> {
        Self::new(CMatrix::from_real_diag(pops))
    }

    /// Qubit state ½(I + xσx + yσy + zσz); the vector must lie in the unit ball.
    pub fn from_bloch(x: f64, y: f64, z: f64) -> Result<Self, StateError> {
        let mut m = CMatrix::identity(2);
        m.add_scaled_real(&pauli(Pauli::X), x);
        m.add_scaled_real(&pauli(Pauli::Y), y);
        m.add_scaled_real(&pauli(Pauli::Z), z);
        Self::new(m.scale_real(0.5))
    }

    pub fn qubit_g() -> Self {
        Self::normalized(CMatrix::basis_projector(2, 0))
    }

    pub fn qubit_e() -> Self {
        Self::normalized(CMatrix::basis_projector(2, 1))
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.mat
    }

    pub fn into_matrix(self) -> CMatrix {
        self.mat
    }

    pub fn dim(&self) -> usize {
        self.mat.dim()
    }

    /// Tr(Aρ).
    pub fn expect(&self, op: &CMatrix) -> Complex64 {
        op.trace_product(&self.mat)
    }

    pub fn population(&self, k: usize) -> f64 {
        self.mat[(k, k)].re
    }

    pub fn populations(&self) -> Vec<f64> {
        self.mat.real_diag()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        linalg::herm_eig(&self.mat)
            .map(|e| e.min_eigenvalue())
            .unwrap_or(f64::NAN)
    }
}

/// Dispersive propagator |g⟩⟨g|⊗e^{−iθn} + |e⟩⟨e|⊗e^{iθn}.
pub fn dispersive_propagator(theta: f64, space: FockSpace) -> CMatrix {
    let pg = CMatrix::basis_projector(2, 0);
    let pe = CMatrix::basis_projector(2, 1);
    let mut u = kron(&pg, &space.phase_rotation(-theta)).expect("small dimension");
    u += &kron(&pe, &space.phase_rotation(theta)).expect("small dimension");
    u
}

/// sin(θ√λ)/√λ, continued to θ at λ = 0.
pub fn sinc_sqrt(theta: f64, lambda: f64) -> f64 {
    if lambda <= 0.0 {
        theta
    } else {
        let s = lambda.sqrt();
        (theta * s).sin() / s
    }
}

/// Resonant propagator
/// |g⟩⟨g|⊗cos(θ√n) + |e⟩⟨e|⊗cos(θ√(n+1)) + |g⟩⟨e|⊗f(n)a† − |e⟩⟨g|⊗a f(n),
/// with f(n) = sin(θ√n)/√n.
///
/// On the truncated space a†|nmax⟩ = 0, so the column of |e, nmax⟩ loses its
/// |g, nmax+1⟩ component and unitarity holds only on levels n ≤ nmax − 1.
pub fn resonant_propagator(theta: f64, space: FockSpace) -> CMatrix {
    let a = space.annihilation();
    let ad = space.creation();
    let cos_n = space
        .number_function(|l| (theta * l.sqrt()).cos())
        .expect("finite");
    let cos_n1 = space
        .number_function(|l| (theta * (l + 1.0).sqrt()).cos())
        .expect("finite");
    let f = space
        .number_function(|l| sinc_sqrt(theta, l))
        .expect("finite");
    let gg = CMatrix::basis_projector(2, 0);
    let ee = CMatrix::basis_projector(2, 1);
    let ge = pauli(Pauli::Minus);
    let eg = pauli(Pauli::Plus);
    let mut u = kron(&gg, &cos_n).expect("small dimension");
    u += &kron(&ee, &cos_n1).expect("small dimension");
    u += &kron(&ge, &f.matmul(&ad)).expect("small dimension");
    u.add_scaled_real(&kron(&eg, &a.matmul(&f)).expect("small dimension"), -1.0);
    u
}

/// Total excitation number σ+σ− ⊗ I + I ⊗ n on the composite space.
pub fn excitation_number(space: FockSpace) -> CMatrix {
    let mut m = kron(&CMatrix::basis_projector(2, 1), &CMatrix::identity(space.dim())).unwrap();
    m += &kron(&CMatrix::identity(2), &space.number()).unwrap();
    m
}
