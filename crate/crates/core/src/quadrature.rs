//! Gauss–Hermite quadrature for expectations over continuous measurement outcomes.

use num_complex::Complex64;

use crate::linalg::{herm_eig, CMatrix};

/// Default node count for continuous-outcome expectations.
pub const DEFAULT_ORDER: usize = 15;
/// Node count used as a convergence cross-check.
pub const CHECK_ORDER: usize = 31;

/// Nodes and weights for ∫ e^{−x²} f(x) dx ≈ Σ wᵢ f(xᵢ).
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Nodes are the eigenvalues of the Jacobi matrix of the physicists'
    /// Hermite recurrence (Golub–Welsch); weights are the Christoffel numbers
    /// `1 / Σ_k p_k(x)²` over the orthonormal Hermite polynomials, which stay
    /// accurate for the tiny outer weights.
    pub fn new(order: usize) -> Self {
        assert!(order >= 1);
        let jacobi = CMatrix::from_fn(order, |i, j| {
            if i + 1 == j || j + 1 == i {
                Complex64::new((i.max(j) as f64 / 2.0).sqrt(), 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        let x = herm_eig(&jacobi).expect("Jacobi matrix is symmetric").eigenvalues;
        // The exact rule is symmetric about 0; impose it on the computed nodes.
        let nodes: Vec<f64> = (0..order).map(|i| 0.5 * (x[i] - x[order - 1 - i])).collect();
        let weights = nodes.iter().map(|&x| 1.0 / christoffel_sum(x, order)).collect();
        Self { nodes, weights }
    }

    /// ∫ e^{−x²} f(x) dx.
    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    /// E[f(Z)] for Z ~ Normal(mean, variance).
    pub fn normal_expectation(&self, mean: f64, variance: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        let s = (2.0 * variance).sqrt();
        self.integrate(|x| f(mean + s * x)) / std::f64::consts::PI.sqrt()
    }
}

/// `Σ_{k<n} p_k(x)²` for the polynomials orthonormal under `e^{−x²}`.
fn christoffel_sum(x: f64, n: usize) -> f64 {
    let mut prev = 0.0;
    let mut cur = std::f64::consts::PI.powf(-0.25);
    let mut sum = cur * cur;
    for k in 0..n - 1 {
        let kf = k as f64;
        let next = x * (2.0 / (kf + 1.0)).sqrt() * cur - (kf / (kf + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
        sum += cur * cur;
    }
    sum
}
