//! Discrete-time stochastic master equations built from Kraus channels.
//!
//! A [`KrausChannel`] gives the true measurement outcomes; a
//! [`LeftStochasticMatrix`] maps them to what an imperfect detector reports.
//! Together they form a [`PartitionedChannel`] with partial maps
//! `K_y(ρ) = Σ_μ η_{y,μ} M_μ ρ M_μ†`, outcome law `Tr K_y(ρ)` and Bayes update
//! `ρ ↦ K_y(ρ) / Tr K_y(ρ)`.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::analysis::ConditionalExpectation;
use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::quadrature::{GaussHermite, DEFAULT_ORDER};
use crate::systems::{resonant_propagator, sinc_sqrt, DensityOperator, FockSpace};

/// Completeness tolerance for Kraus families.
pub const COMPLETENESS_TOL: f64 = 1e-10;
/// Outcomes below this probability are never selected.
pub const MIN_OUTCOME_PROB: f64 = 1e-14;
/// Population threshold for declaring a trajectory converged to a Fock state.
pub const FOCK_CONVERGENCE: f64 = 1.0 - 1e-6;

/// Draws an index from unnormalised weights.
///
/// Weights in `[-1e-14, 0)` are treated as zero, and outcomes below
/// [`MIN_OUTCOME_PROB`] are dropped before renormalising.
pub(crate) fn sample_categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Result<usize> {
    let mut total = 0.0;
    for &w in weights {
        if w < -MIN_OUTCOME_PROB || !w.is_finite() {
            return Err(Error::InvalidChannel(format!("outcome weight {w} is negative")));
        }
        if w >= MIN_OUTCOME_PROB {
            total += w;
        }
    }
    if total < MIN_OUTCOME_PROB {
        return Err(Error::DegenerateOutcomes);
    }
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (k, &w) in weights.iter().enumerate() {
        if w < MIN_OUTCOME_PROB {
            continue;
        }
        acc += w;
        last = k;
        if u < acc {
            return Ok(k);
        }
    }
    Ok(last)
}

#[derive(Debug, Clone)]
struct KrausOp {
    mat: CMatrix,
    /// Cached diagonal for operators that are diagonal in the working basis.
    diag: Option<Vec<Complex64>>,
}

impl KrausOp {
    fn new(mat: CMatrix) -> Self {
        let diag = mat.is_diagonal().then(|| mat.diag());
        Self { mat, diag }
    }

    fn conjugate(&self, rho: &CMatrix) -> CMatrix {
        match &self.diag {
            Some(d) => CMatrix::from_fn(rho.dim(), |i, j| d[i] * rho[(i, j)] * d[j].conj()),
            None => self.mat.sandwich(rho),
        }
    }
}

/// Finite Kraus family `{M_μ}` with `Σ M_μ†M_μ = I`.
#[derive(Debug, Clone)]
pub struct KrausChannel {
    ops: Vec<KrausOp>,
    labels: Vec<String>,
    validity: Option<Vec<usize>>,
}

impl KrausChannel {
    pub fn new(ops: Vec<CMatrix>, labels: Vec<String>) -> Result<Self> {
        Self::build(ops, labels, None)
    }

    /// A channel whose completeness only holds on the basis states listed in
    /// `subspace` (a registered truncation defect).
    pub fn with_validity_subspace(
        ops: Vec<CMatrix>,
        labels: Vec<String>,
        subspace: Vec<usize>,
    ) -> Result<Self> {
        Self::build(ops, labels, Some(subspace))
    }

    fn build(ops: Vec<CMatrix>, labels: Vec<String>, validity: Option<Vec<usize>>) -> Result<Self> {
        if ops.is_empty() {
            return Err(Error::InvalidChannel("no Kraus operators".into()));
        }
        if labels.len() != ops.len() {
            return Err(Error::InvalidChannel(format!(
                "{} labels for {} operators",
                labels.len(),
                ops.len()
            )));
        }
        let dim = ops[0].dim();
        if ops.iter().any(|m| m.dim() != dim) {
            return Err(Error::InvalidChannel("Kraus operators differ in dimension".into()));
        }
        let ch = Self {
            ops: ops.into_iter().map(KrausOp::new).collect(),
            labels,
            validity,
        };
        let r = ch.completeness_residual();
        if r > COMPLETENESS_TOL {
            return Err(Error::InvalidChannel(format!(
                "completeness residual {r:.3e} exceeds {COMPLETENESS_TOL:.0e}"
            )));
        }
        Ok(ch)
    }

    pub fn dim(&self) -> usize {
        self.ops[0].mat.dim()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn op(&self, mu: usize) -> &CMatrix {
        &self.ops[mu].mat
    }

    /// ‖Σ M†M − I‖_F, restricted to the validity subspace when one is registered.
    pub fn completeness_residual(&self) -> f64 {
        let dim = self.dim();
        let mut sum = CMatrix::zeros(dim);
        for op in &self.ops {
            sum += &op.mat.adjoint_matmul(&op.mat);
        }
        let sum = &sum - &CMatrix::identity(dim);
        match &self.validity {
            Some(idx) => sum.submatrix(idx).frobenius_norm(),
            None => sum.frobenius_norm(),
        }
    }

    /// `M_μ ρ M_μ†`.
    pub fn branch(&self, mu: usize, rho: &CMatrix) -> CMatrix {
        self.ops[mu].conjugate(rho)
    }

    /// Outcome-averaged map `𝕂(ρ) = Σ_μ M_μ ρ M_μ†`.
    pub fn apply(&self, rho: &CMatrix) -> CMatrix {
        let mut out = CMatrix::zeros(rho.dim());
        for op in &self.ops {
            out += &op.conjugate(rho);
        }
        out
    }
}

/// Column-stochastic detector matrix: rows are reported outcomes `y`,
/// columns are true outcomes `μ`.
#[derive(Debug, Clone, PartialEq)]
pub struct LeftStochasticMatrix {
    rows: Vec<Vec<f64>>,
}

impl LeftStochasticMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let ncols = rows.first().map(Vec::len).unwrap_or(0);
        if ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
            return Err(Error::InvalidParameter("stochastic matrix must be rectangular and non-empty".into()));
        }
        for (y, r) in rows.iter().enumerate() {
            for (mu, &v) in r.iter().enumerate() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::InvalidParameter(format!("eta[{y}][{mu}] = {v} outside [0, 1]")));
                }
            }
        }
        for mu in 0..ncols {
            let s: f64 = rows.iter().map(|r| r[mu]).sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidParameter(format!("column {mu} sums to {s}, expected 1")));
            }
        }
        Ok(Self { rows })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect(),
        }
    }

    /// Two-outcome detector that reports the wrong outcome with probability `rate`.
    pub fn symmetric_error(rate: f64) -> Result<Self> {
        Self::asymmetric_error(rate, rate)
    }

    /// `eta_g` (resp. `eta_e`) is the error probability when the true outcome is g (resp. e).
    pub fn asymmetric_error(eta_g: f64, eta_e: f64) -> Result<Self> {
        Self::new(vec![vec![1.0 - eta_g, eta_e], vec![eta_g, 1.0 - eta_e]])
    }

    /// Photon counter with dark-count probability `dark` per step and detection efficiency `efficiency`.
    pub fn photon_counter(dark: f64, efficiency: f64) -> Result<Self> {
        Self::new(vec![vec![1.0 - dark, 1.0 - efficiency], vec![dark, efficiency]])
    }

    pub fn n_reported(&self) -> usize {
        self.rows.len()
    }

    pub fn n_true(&self) -> usize {
        self.rows[0].len()
    }

    pub fn get(&self, y: usize, mu: usize) -> f64 {
        self.rows[y][mu]
    }
}

/// A Kraus channel observed through an imperfect detector.
#[derive(Debug, Clone)]
pub struct PartitionedChannel {
    pub channel: KrausChannel,
    pub eta: LeftStochasticMatrix,
}

pub fn partition(channel: KrausChannel, eta: LeftStochasticMatrix) -> Result<PartitionedChannel> {
    if eta.n_true() != channel.len() {
        return Err(Error::InvalidParameter(format!(
            "detector matrix has {} columns but the channel has {} outcomes",
            eta.n_true(),
            channel.len()
        )));
    }
    Ok(PartitionedChannel { channel, eta })
}

impl PartitionedChannel {
    /// Perfect detection.
    pub fn perfect(channel: KrausChannel) -> Self {
        let eta = LeftStochasticMatrix::identity(channel.len());
        Self { channel, eta }
    }

    pub fn n_outcomes(&self) -> usize {
        self.eta.n_reported()
    }

    fn branches(&self, rho: &CMatrix) -> Vec<CMatrix> {
        (0..self.channel.len()).map(|mu| self.channel.branch(mu, rho)).collect()
    }

    fn combine(&self, y: usize, branches: &[CMatrix]) -> CMatrix {
        let mut k = CMatrix::zeros(branches[0].dim());
        for (mu, b) in branches.iter().enumerate() {
            let w = self.eta.get(y, mu);
            if w != 0.0 {
                k.add_scaled_real(b, w);
            }
        }
        k
    }

    /// `K_y(ρ)`.
    pub fn partial_map(&self, y: usize, rho: &DensityOperator) -> CMatrix {
        self.combine(y, &self.branches(rho.matrix()))
    }

    /// All `K_y(ρ)`, indexed by reported outcome.
    pub fn partial_maps(&self, rho: &DensityOperator) -> Vec<CMatrix> {
        let b = self.branches(rho.matrix());
        (0..self.n_outcomes()).map(|y| self.combine(y, &b)).collect()
    }

    /// `P(y | ρ) = Tr K_y(ρ)`.
    pub fn outcome_probabilities(&self, rho: &DensityOperator) -> Vec<f64> {
        self.partial_maps(rho).iter().map(|k| k.trace().re).collect()
    }

    pub fn bayes_update(&self, y: usize, rho: &DensityOperator) -> Result<DensityOperator> {
        let k = self.partial_map(y, rho);
        if k.trace().re < MIN_OUTCOME_PROB {
            return Err(Error::DegenerateOutcomes);
        }
        Ok(DensityOperator::normalized(k))
    }
}

/// One step of the discrete-time SME: draw `y` with probability `Tr K_y(ρ)`
/// and return `K_y(ρ) / Tr K_y(ρ)`.
pub fn discrete_step<R: Rng + ?Sized>(
    pc: &PartitionedChannel,
    rho: &DensityOperator,
    rng: &mut R,
) -> Result<(usize, DensityOperator)> {
    let maps = pc.partial_maps(rho);
    let probs: Vec<f64> = maps.iter().map(|k| k.trace().re).collect();
    let y = sample_categorical(&probs, rng)?;
    let k = maps.into_iter().nth(y).expect("sampled index in range");
    Ok((y, DensityOperator::normalized(k)))
}

impl ConditionalExpectation for PartitionedChannel {
    fn conditional_expectation(
        &self,
        rho: &DensityOperator,
        f: &dyn Fn(&DensityOperator) -> f64,
    ) -> Result<f64> {
        let mut acc = 0.0;
        for k in self.partial_maps(rho) {
            let p = k.trace().re;
            if p > 0.0 {
                acc += p * f(&DensityOperator::normalized(k));
            }
        }
        Ok(acc)
    }
}

impl ConditionalExpectation for KrausChannel {
    fn conditional_expectation(
        &self,
        rho: &DensityOperator,
        f: &dyn Fn(&DensityOperator) -> f64,
    ) -> Result<f64> {
        let mut acc = 0.0;
        for mu in 0..self.len() {
            let k = self.branch(mu, rho.matrix());
            let p = k.trace().re;
            if p > 0.0 {
                acc += p * f(&DensityOperator::normalized(k));
            }
        }
        Ok(acc)
    }
}

/// Projective measurement: outcome `μ` with probability `Tr(ρP_μ)`, collapse to
/// `P_μ ρ P_μ / Tr(ρP_μ)`.
pub fn projective_measure<R: Rng + ?Sized>(
    rho: &DensityOperator,
    projectors: &[CMatrix],
    rng: &mut R,
) -> Result<(usize, DensityOperator)> {
    if projectors.is_empty() {
        return Err(Error::InvalidChannel("no projectors".into()));
    }
    let dim = rho.dim();
    let mut sum = CMatrix::zeros(dim);
    for (i, p) in projectors.iter().enumerate() {
        if p.dim() != dim {
            return Err(Error::InvalidChannel(format!("projector {i} has dimension {}", p.dim())));
        }
        if p.matmul(p).distance(p) > COMPLETENESS_TOL || !p.is_hermitian(COMPLETENESS_TOL) {
            return Err(Error::InvalidChannel(format!("operator {i} is not an orthogonal projector")));
        }
        for (j, q) in projectors.iter().enumerate().skip(i + 1) {
            if p.matmul(q).frobenius_norm() > COMPLETENESS_TOL {
                return Err(Error::InvalidChannel(format!("projectors {i} and {j} overlap")));
            }
        }
        sum += p;
    }
    if sum.distance(&CMatrix::identity(dim)) > COMPLETENESS_TOL {
        return Err(Error::InvalidChannel("projectors do not resolve the identity".into()));
    }
    let probs: Vec<f64> = projectors.iter().map(|p| rho.expect(p).re).collect();
    let mu = sample_categorical(&probs, rng)?;
    let collapsed = projectors[mu].sandwich(rho.matrix());
    Ok((mu, DensityOperator::normalized(collapsed)))
}

/// Photon-box QND measurement: `M_g = cos(θn)`, `M_e = sin(θn)`.
pub fn qnd_channel(theta: f64, space: FockSpace) -> Result<KrausChannel> {
    let mg = space.number_function(|n| (theta * n).cos())?;
    let me = space.number_function(|n| (theta * n).sin())?;
    KrausChannel::new(vec![mg, me], vec!["g".into(), "e".into()])
}

/// Resonant photon measurement: `M_g = cos(θ√n)`, `M_e = a sin(θ√n)/√n`.
pub fn resonant_channel(theta: f64, space: FockSpace) -> Result<KrausChannel> {
    let mg = space.number_function(|n| (theta * n.sqrt()).cos())?;
    let f = space.number_function(|n| sinc_sqrt(theta, n))?;
    let me = space.annihilation().matmul(&f);
    KrausChannel::new(vec![mg, me], vec!["g".into(), "e".into()])
}

/// Qubit probed by a resonant photon prepared in vacuum and counted afterwards.
///
/// The Kraus operators are read off the composite propagator,
/// `M_k = (I ⊗ ⟨k|) U_θ (I ⊗ |0⟩)`, giving `M_0 = |g⟩⟨g| + cos θ |e⟩⟨e|` and
/// `M_1 = sin θ |g⟩⟨e|`.
pub fn resonant_qubit_channel(theta: f64) -> Result<KrausChannel> {
    let space = FockSpace::new(1);
    let u = resonant_propagator(theta, space);
    let d = space.dim();
    let ops = (0..d)
        .map(|k| CMatrix::from_fn(2, |q, p| u[(q * d + k, p * d)]))
        .collect();
    KrausChannel::new(ops, vec!["0".into(), "1".into()])
}

/// Index of the Fock level holding more than [`FOCK_CONVERGENCE`] of the population.
pub fn converged_fock_level(rho: &DensityOperator) -> Option<usize> {
    rho.populations().iter().position(|&p| p > FOCK_CONVERGENCE)
}

/// Dispersively coupled qubit read out through a photon quadrature.
///
/// The probe field starts in the coherent state |iα/√2⟩; the reported outcome
/// `y` is a quadrature measurement, smeared by Gaussian detector noise of
/// variance parameter `sigma` (σ = 0 is perfect detection).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianMeter {
    pub alpha: f64,
    pub theta: f64,
    pub sigma: f64,
}

impl GaussianMeter {
    pub fn new(alpha: f64, theta: f64, sigma: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!("alpha = {alpha} must be non-negative")));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma = {sigma} must be non-negative")));
        }
        Ok(Self { alpha, theta, sigma })
    }

    /// Separation α sin θ of the two outcome Gaussians.
    pub fn shift(&self) -> f64 {
        self.alpha * self.theta.sin()
    }

    /// Per-component outcome variance (1 + σ)/2.
    pub fn variance(&self) -> f64 {
        0.5 * (1.0 + self.sigma)
    }

    /// Perfect-detection Kraus operator `M_y`.
    pub fn kraus(&self, y: f64) -> CMatrix {
        let a = self.shift();
        let c = std::f64::consts::PI.powf(-0.25);
        CMatrix::from_real_diag(&[
            c * (-(y - a).powi(2) / 2.0).exp(),
            c * (-(y + a).powi(2) / 2.0).exp(),
        ])
    }

    /// `Tr K_y(ρ)`: a two-Gaussian mixture with weights ⟨g|ρ|g⟩, ⟨e|ρ|e⟩.
    pub fn density(&self, y: f64, rho: &DensityOperator) -> f64 {
        let a = self.shift();
        let s = 1.0 + self.sigma;
        let norm = 1.0 / (std::f64::consts::PI * s).sqrt();
        norm * ((-(y - a).powi(2) / s).exp() * rho.population(0)
            + (-(y + a).powi(2) / s).exp() * rho.population(1))
    }

    /// `K_y(ρ)`; reduces to `M_y ρ M_y†` at σ = 0.
    pub fn partial_map(&self, y: f64, rho: &CMatrix) -> CMatrix {
        let a = self.shift();
        let s = 1.0 + self.sigma;
        let norm = 1.0 / (std::f64::consts::PI * s).sqrt();
        let wg = norm * (-(y - a).powi(2) / s).exp();
        let we = norm * (-(y + a).powi(2) / s).exp();
        let wc = norm * (-y * y / s - a * a).exp();
        let mut k = CMatrix::zeros(2);
        k[(0, 0)] = rho[(0, 0)] * wg;
        k[(1, 1)] = rho[(1, 1)] * we;
        k[(0, 1)] = rho[(0, 1)] * wc;
        k[(1, 0)] = rho[(1, 0)] * wc;
        k
    }

    fn sample_outcome<R: Rng + ?Sized>(&self, rho: &DensityOperator, rng: &mut R) -> f64 {
        let pg = rho.population(0).clamp(0.0, 1.0);
        let mean = if rng.random::<f64>() < pg { self.shift() } else { -self.shift() };
        let z: f64 = StandardNormal.sample(rng);
        mean + self.variance().sqrt() * z
    }

    /// `∫ M_y†M_y dy` by Gauss–Hermite quadrature; should equal the identity.
    pub fn kraus_integral(&self, order: usize) -> CMatrix {
        let gh = GaussHermite::new(order);
        let mut acc = CMatrix::zeros(2);
        for (&x, &w) in gh.nodes.iter().zip(&gh.weights) {
            let m = self.kraus(x);
            acc.add_scaled_real(&m.adjoint_matmul(&m), w * (x * x).exp());
        }
        acc
    }

    /// `∫ K_y(ρ) dy` by quadrature; should equal `𝕂(ρ)` and have unit trace.
    pub fn averaged_map(&self, rho: &CMatrix, order: usize) -> CMatrix {
        let gh = GaussHermite::new(order);
        let s = (1.0 + self.sigma).sqrt();
        let mut acc = CMatrix::zeros(2);
        for (&x, &w) in gh.nodes.iter().zip(&gh.weights) {
            acc.add_scaled_real(&self.partial_map(s * x, rho), w * (x * x).exp() * s);
        }
        acc
    }

    /// `E[g(y, ρ′) | ρ]`, integrating against the outcome law with Gauss–Hermite
    /// nodes matched to the e^{−y²/(1+σ)} envelope of `K_y`.
    pub fn expectation_with_order(
        &self,
        rho: &DensityOperator,
        order: usize,
        g: &dyn Fn(f64, &DensityOperator) -> f64,
    ) -> f64 {
        let gh = GaussHermite::new(order);
        let s = (1.0 + self.sigma).sqrt();
        let mut acc = 0.0;
        for (&x, &w) in gh.nodes.iter().zip(&gh.weights) {
            let y = s * x;
            let k = self.partial_map(y, rho.matrix());
            let p = k.trace().re;
            if p > 0.0 {
                acc += w * (x * x).exp() * s * p * g(y, &DensityOperator::normalized(k));
            }
        }
        acc
    }
}

impl ConditionalExpectation for GaussianMeter {
    fn conditional_expectation(
        &self,
        rho: &DensityOperator,
        f: &dyn Fn(&DensityOperator) -> f64,
    ) -> Result<f64> {
        Ok(self.expectation_with_order(rho, DEFAULT_ORDER, &|_, r| f(r)))
    }
}

/// Perfect-detection meter step: `y` from the mixture, state updated by `M_y`.
pub fn gaussian_meter_sample<R: Rng + ?Sized>(
    m: &GaussianMeter,
    rho: &DensityOperator,
    rng: &mut R,
) -> Result<(f64, DensityOperator)> {
    if m.sigma != 0.0 {
        return Err(Error::InvalidParameter(
            "perfect-detection sampling requires sigma = 0".into(),
        ));
    }
    check_qubit(rho)?;
    let y = m.sample_outcome(rho, rng);
    let k = m.kraus(y).sandwich(rho.matrix());
    Ok((y, DensityOperator::normalized(k)))
}

/// Imperfect-detection meter step: `y` from `Tr K_y(ρ)`, state `K_y(ρ)/Tr K_y(ρ)`.
pub fn gaussian_meter_imperfect_step<R: Rng + ?Sized>(
    m: &GaussianMeter,
    rho: &DensityOperator,
    rng: &mut R,
) -> Result<(f64, DensityOperator)> {
    if !(m.sigma >= 0.0) {
        return Err(Error::InvalidParameter(format!("sigma = {} must be non-negative", m.sigma)));
    }
    check_qubit(rho)?;
    let y = m.sample_outcome(rho, rng);
    let k = m.partial_map(y, rho.matrix());
    Ok((y, DensityOperator::normalized(k)))
}

fn check_qubit(rho: &DensityOperator) -> Result<()> {
    if rho.dim() != 2 {
        return Err(Error::InvalidParameter(format!(
            "meter acts on a qubit, got dimension {}",
            rho.dim()
        )));
    }
    Ok(())
}
