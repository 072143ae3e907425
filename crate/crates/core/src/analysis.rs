//! Reference Lindblad propagation, Lyapunov and martingale checks, ensemble
//! statistics and state metrics.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{herm_eig, inv_sqrt_psd, CMatrix, DEFAULT_EIG_FLOOR};
use crate::record::TrajectoryRecord;
use crate::systems::{pauli, DensityOperator, Pauli};

/// Exact `E[f(ρ′) | ρ]` for a single-step sampler, by outcome enumeration or quadrature.
pub trait ConditionalExpectation {
    fn conditional_expectation(
        &self,
        rho: &DensityOperator,
        f: &dyn Fn(&DensityOperator) -> f64,
    ) -> Result<f64>;
}

impl<T: ConditionalExpectation + ?Sized> ConditionalExpectation for &T {
    fn conditional_expectation(
        &self,
        rho: &DensityOperator,
        f: &dyn Fn(&DensityOperator) -> f64,
    ) -> Result<f64> {
        (**self).conditional_expectation(rho, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LyapunovKind {
    /// `Σ_{n1<n2} √(p_{n1} p_{n2})`, zero exactly on Fock states.
    QndFock,
    /// `Tr(nρ)`, zero exactly on the vacuum.
    PhotonNumber,
    /// `√(⟨g|ρ|g⟩⟨e|ρ|e⟩)`.
    QubitCoherence,
    /// `√(1 − Tr(σzρ)²)`.
    BlochZ,
}

impl LyapunovKind {
    pub fn name(self) -> &'static str {
        match self {
            LyapunovKind::QndFock => "qnd_fock",
            LyapunovKind::PhotonNumber => "photon_number",
            LyapunovKind::QubitCoherence => "qubit_coherence",
            LyapunovKind::BlochZ => "bloch_z",
        }
    }

    pub fn evaluate(self, rho: &DensityOperator) -> f64 {
        match self {
            LyapunovKind::QndFock => {
                let roots: Vec<f64> = rho.populations().iter().map(|p| p.max(0.0).sqrt()).collect();
                // Σ_{i<j} r_i r_j = ((Σ r)² − Σ r²) / 2, but summed directly to keep
                // the value exactly zero on Fock states.
                let mut acc = 0.0;
                for (i, ri) in roots.iter().enumerate() {
                    if *ri == 0.0 {
                        continue;
                    }
                    for rj in &roots[i + 1..] {
                        acc += ri * rj;
                    }
                }
                acc
            }
            LyapunovKind::PhotonNumber => rho
                .populations()
                .iter()
                .enumerate()
                .map(|(n, p)| n as f64 * p)
                .sum::<f64>()
                .max(0.0),
            LyapunovKind::QubitCoherence => (rho.population(0) * rho.population(1)).max(0.0).sqrt(),
            LyapunovKind::BlochZ => {
                let z = bloch_vector(rho).2;
                (1.0 - z * z).max(0.0).sqrt()
            }
        }
    }
}

/// What the theory predicts for `E[V(ρ′) | ρ]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Contraction {
    /// `E[V′] ≤ factor · V` per step.
    Factor(f64),
    /// `E[V_t] ∝ e^{−rate·t}` in continuous time.
    Rate(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovSpec {
    pub kind: LyapunovKind,
    pub predicted: Option<Contraction>,
}

impl LyapunovSpec {
    /// QND photon measurement: factor `max |cos(θ(n1 ± n2))|` over `0 ≤ n1 < n2 ≤ nmax`.
    pub fn qnd_fock(theta: f64, nmax: usize) -> Self {
        let mut factor: f64 = 0.0;
        for n1 in 0..=nmax {
            for n2 in n1 + 1..=nmax {
                let (a, b) = (n1 as f64, n2 as f64);
                factor = factor
                    .max((theta * (a + b)).cos().abs())
                    .max((theta * (a - b)).cos().abs());
            }
        }
        Self {
            kind: LyapunovKind::QndFock,
            predicted: Some(Contraction::Factor(factor)),
        }
    }

    /// Photon number under the resonant channel; the decrement is state dependent.
    pub fn photon_number() -> Self {
        Self {
            kind: LyapunovKind::PhotonNumber,
            predicted: None,
        }
    }

    /// Gaussian meter with shift `a = α sin θ`: factor `e^{−a²}`.
    pub fn qubit_coherence(shift: f64) -> Self {
        Self {
            kind: LyapunovKind::QubitCoherence,
            predicted: Some(Contraction::Factor((-shift * shift).exp())),
        }
    }

    /// Diffusive σz measurement with efficiency `eta` and strength `gamma`.
    ///
    /// The predicted rate `2ηΓ` follows from `dz = 2√(ηΓ)(1 − z²)dW` and Itô's
    /// rule applied to `√(1 − z²)`.
    pub fn bloch_z(eta: f64, gamma: f64) -> Self {
        Self {
            kind: LyapunovKind::BlochZ,
            predicted: Some(Contraction::Rate(2.0 * eta * gamma)),
        }
    }

    pub fn evaluate(&self, rho: &DensityOperator) -> f64 {
        self.kind.evaluate(rho)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MartingaleReport {
    pub value: f64,
    pub expected_next: f64,
    /// `factor · V` when a per-step factor is predicted.
    pub bound: Option<f64>,
}

impl MartingaleReport {
    /// `E[V′] − factor·V`; non-positive when the supermartingale bound holds.
    pub fn excess(&self) -> Option<f64> {
        self.bound.map(|b| self.expected_next - b)
    }

    pub fn holds(&self, tol: f64) -> bool {
        match self.excess() {
            Some(e) => e <= tol,
            None => self.expected_next <= self.value + tol,
        }
    }
}

pub fn martingale_check(
    step: &dyn ConditionalExpectation,
    rho: &DensityOperator,
    lyap: &LyapunovSpec,
) -> Result<MartingaleReport> {
    let value = lyap.evaluate(rho);
    let expected_next = step.conditional_expectation(rho, &|r| lyap.evaluate(r))?;
    let bound = match lyap.predicted {
        Some(Contraction::Factor(f)) => Some(f * value),
        _ => None,
    };
    Ok(MartingaleReport {
        value,
        expected_next,
        bound,
    })
}

/// Unconditional dynamics `dρ/dt = −i[H,ρ] + Σ (LρL† − ½{L†L, ρ})`.
#[derive(Debug, Clone)]
pub struct LindbladModel {
    pub h: CMatrix,
    pub dissipators: Vec<CMatrix>,
}

impl LindbladModel {
    pub fn new(h: CMatrix, dissipators: Vec<CMatrix>) -> Result<Self> {
        if !h.is_hermitian(crate::linalg::HERMITIAN_TOL) {
            return Err(Error::InvalidParameter("Hamiltonian is not Hermitian".into()));
        }
        if dissipators.iter().any(|l| l.dim() != h.dim()) {
            return Err(Error::InvalidParameter("dissipator dimension differs from H".into()));
        }
        Ok(Self { h, dissipators })
    }

    pub fn dim(&self) -> usize {
        self.h.dim()
    }

    /// Right-hand side of the master equation.
    pub fn generator(&self, rho: &CMatrix) -> CMatrix {
        let mut out = self.h.commutator(rho).scale(Complex64::new(0.0, -1.0));
        for l in &self.dissipators {
            let ldl = l.adjoint_matmul(l);
            out += &l.sandwich(rho);
            out.add_scaled_real(&ldl.matmul(rho), -0.5);
            out.add_scaled_real(&rho.matmul(&ldl), -0.5);
        }
        out
    }

    pub fn propagator(&self, dt: f64) -> Result<LindbladPropagator> {
        LindbladPropagator::new(self, dt)
    }
}

/// Normalised Kraus map `ρ ↦ M̃₀ρM̃₀† + dt Σ L̃ρL̃†` for one reference step.
#[derive(Debug, Clone)]
pub struct LindbladPropagator {
    m0: CMatrix,
    l: Vec<CMatrix>,
    dt: f64,
}

impl LindbladPropagator {
    pub fn new(model: &LindbladModel, dt: f64) -> Result<Self> {
        let (m0, l) = normalized_kraus(Some(&model.h), &model.dissipators, dt)?;
        Ok(Self { m0, l, dt })
    }

    pub fn apply(&self, rho: &DensityOperator) -> DensityOperator {
        let mut next = self.m0.sandwich(rho.matrix());
        for l in &self.l {
            next.add_scaled_real(&l.sandwich(rho.matrix()), self.dt);
        }
        DensityOperator::normalized(next)
    }
}

/// `M̃₀ = M₀S^{−1/2}` and `L̃ = LS^{−1/2}` with `M₀ = I − (iH + ½ΣL†L)dt`,
/// `S = M₀†M₀ + dtΣL†L`, so that `M̃₀†M̃₀ + dtΣL̃†L̃ = I`.
///
/// Analytically `S = I + dt²A†A ≥ I`; the guard rejects steps where the
/// O(dt²) part is no longer small.
pub(crate) fn normalized_kraus(
    h: Option<&CMatrix>,
    ls: &[CMatrix],
    dt: f64,
) -> Result<(CMatrix, Vec<CMatrix>)> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("dt = {dt} must be positive")));
    }
    let dim = match (h, ls.first()) {
        (Some(h), _) => h.dim(),
        (None, Some(l)) => l.dim(),
        (None, None) => return Err(Error::InvalidParameter("empty model".into())),
    };
    let mut k = CMatrix::zeros(dim);
    for l in ls {
        k += &l.adjoint_matmul(l);
    }
    let mut m0 = CMatrix::identity(dim);
    if let Some(h) = h {
        m0.add_scaled(h, Complex64::new(0.0, -dt));
    }
    m0.add_scaled_real(&k, -0.5 * dt);
    let mut s = m0.adjoint_matmul(&m0);
    s.add_scaled_real(&k, dt);
    s.hermitize();
    let eig = herm_eig(&s)?;
    let excess = eig.eigenvalues.last().copied().unwrap_or(1.0) - 1.0;
    if excess > MAX_S_EXCESS {
        // excess ≈ (dt‖A‖)²; scale dt so it drops to a quarter of the limit
        let suggested_dt = dt * (0.25 * MAX_S_EXCESS / excess).sqrt();
        return Err(Error::StepTooLarge {
            reason: format!("normalisation S deviates from I by {excess:.3e}"),
            suggested_dt,
        });
    }
    let inv = inv_sqrt_psd(&s, DEFAULT_EIG_FLOOR)?;
    let m0t = m0.matmul(&inv);
    let lt = ls.iter().map(|l| l.matmul(&inv)).collect();
    Ok((m0t, lt))
}

/// Largest tolerated `λ_max(S) − 1`, i.e. `dt·‖iH + ½ΣL†L‖ ≲ 1`.
pub const MAX_S_EXCESS: f64 = 1.0;

/// One step of the reference Lindblad propagation.
pub fn lindblad_step(model: &LindbladModel, rho: &DensityOperator, dt: f64) -> Result<DensityOperator> {
    Ok(model.propagator(dt)?.apply(rho))
}

/// `nsteps` reference steps, returning the state after each (index 0 is `rho0`).
pub fn lindblad_evolve(
    model: &LindbladModel,
    rho0: &DensityOperator,
    dt: f64,
    nsteps: usize,
) -> Result<Vec<DensityOperator>> {
    let prop = model.propagator(dt)?;
    let mut out = Vec::with_capacity(nsteps + 1);
    out.push(rho0.clone());
    for k in 0..nsteps {
        let next = prop.apply(&out[k]);
        out.push(next);
    }
    Ok(out)
}

/// Per-time means and standard errors over a set of trajectories.
#[derive(Debug, Clone)]
pub struct EnsembleStats {
    pub times: Vec<f64>,
    pub names: Vec<String>,
    /// `mean[row][observable]`.
    pub mean: Vec<Vec<f64>>,
    /// Standard error of the mean, from the unbiased sample variance.
    pub stderr: Vec<Vec<f64>>,
    pub ntraj: usize,
    /// Averaged density operators per row, when the records carried states.
    pub mean_states: Option<Vec<DensityOperator>>,
}

impl EnsembleStats {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn mean_of(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.column(name)?;
        Some(self.mean.iter().map(|r| r[c]).collect())
    }
}

/// Streaming sums for [`EnsembleStats`]; feed records in a fixed order for
/// reproducible rounding.
#[derive(Debug, Clone)]
pub struct EnsembleAccumulator {
    times: Vec<f64>,
    names: Vec<String>,
    sum: Vec<Vec<f64>>,
    sumsq: Vec<Vec<f64>>,
    states: Option<Vec<CMatrix>>,
    n: usize,
}

impl EnsembleAccumulator {
    pub fn new() -> Self {
        Self {
            times: Vec::new(),
            names: Vec::new(),
            sum: Vec::new(),
            sumsq: Vec::new(),
            states: None,
            n: 0,
        }
    }

    pub fn ntraj(&self) -> usize {
        self.n
    }

    pub fn add(&mut self, rec: &TrajectoryRecord) -> Result<()> {
        if self.n == 0 {
            self.times = rec.times.clone();
            self.names = rec.observable_names.clone();
            self.sum = vec![vec![0.0; self.names.len()]; self.times.len()];
            self.sumsq = self.sum.clone();
            self.states = rec
                .states
                .as_ref()
                .map(|s| s.iter().map(|r| CMatrix::zeros(r.dim())).collect());
        } else if rec.times.len() != self.times.len() || rec.observable_names != self.names {
            return Err(Error::InvalidParameter(
                "trajectory records have different layouts".into(),
            ));
        }
        for (row, vals) in rec.observables.iter().enumerate() {
            for (c, &v) in vals.iter().enumerate() {
                self.sum[row][c] += v;
                self.sumsq[row][c] += v * v;
            }
        }
        match (&mut self.states, &rec.states) {
            (Some(acc), Some(s)) => {
                for (a, r) in acc.iter_mut().zip(s) {
                    *a += r.matrix();
                }
            }
            (None, None) => {}
            _ => {
                return Err(Error::InvalidParameter(
                    "some trajectory records carry states and some do not".into(),
                ))
            }
        }
        self.n += 1;
        Ok(())
    }

    pub fn finish(self) -> Result<EnsembleStats> {
        if self.n == 0 {
            return Err(Error::InvalidParameter("no trajectories to average".into()));
        }
        let n = self.n as f64;
        let mean: Vec<Vec<f64>> = self.sum.iter().map(|r| r.iter().map(|s| s / n).collect()).collect();
        let stderr = self
            .sum
            .iter()
            .zip(&self.sumsq)
            .map(|(s, q)| {
                s.iter()
                    .zip(q)
                    .map(|(&s, &q)| {
                        if self.n < 2 {
                            return 0.0;
                        }
                        let var = ((q - s * s / n) / (n - 1.0)).max(0.0);
                        (var / n).sqrt()
                    })
                    .collect()
            })
            .collect();
        let mean_states = self
            .states
            .map(|acc| acc.into_iter().map(|m| DensityOperator::normalized(m.scale_real(1.0 / n))).collect());
        Ok(EnsembleStats {
            times: self.times,
            names: self.names,
            mean,
            stderr,
            ntraj: self.n,
            mean_states,
        })
    }
}

impl Default for EnsembleAccumulator {
    fn default() -> Self {
        Self::new()
    }
}

pub fn ensemble_average(records: &[TrajectoryRecord]) -> Result<EnsembleStats> {
    let mut acc = EnsembleAccumulator::new();
    for r in records {
        acc.add(r)?;
    }
    acc.finish()
}

/// `½ Σ |λ_i(a − b)|`.
pub fn trace_distance(a: &DensityOperator, b: &DensityOperator) -> Result<f64> {
    let d = a.matrix() - b.matrix();
    let eig = herm_eig(&d)?;
    Ok(0.5 * eig.eigenvalues.iter().map(|l| l.abs()).sum::<f64>())
}

pub fn fock_population(rho: &DensityOperator, n: usize) -> f64 {
    rho.population(n)
}

/// `(Tr σxρ, Tr σyρ, Tr σzρ)` for a qubit.
pub fn bloch_vector(rho: &DensityOperator) -> (f64, f64, f64) {
    let m = rho.matrix();
    let x = 2.0 * m[(0, 1)].re;
    let y = rho.expect(&pauli(Pauli::Y)).re;
    let z = m[(1, 1)].re - m[(0, 0)].re;
    (x, y, z)
}

pub fn purity(rho: &DensityOperator) -> f64 {
    rho.matrix().trace_product(rho.matrix()).re
}

/// Least-squares fit of `log y = log A − rate·t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentialFit {
    pub amplitude: f64,
    pub rate: f64,
    /// Coefficient of determination of the fit in the original (not log) scale.
    pub r_squared: f64,
}

pub fn fit_exponential(t: &[f64], y: &[f64]) -> Result<ExponentialFit> {
    if t.len() != y.len() || t.len() < 3 {
        return Err(Error::InvalidParameter("need at least three matching points".into()));
    }
    if y.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidParameter("exponential fit needs positive data".into()));
    }
    let n = t.len() as f64;
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let tm = t.iter().sum::<f64>() / n;
    let lm = ly.iter().sum::<f64>() / n;
    let sxy: f64 = t.iter().zip(&ly).map(|(a, b)| (a - tm) * (b - lm)).sum();
    let sxx: f64 = t.iter().map(|a| (a - tm).powi(2)).sum();
    let slope = sxy / sxx;
    let amplitude = (lm - slope * tm).exp();
    let ym = y.iter().sum::<f64>() / n;
    let ss_res: f64 = t
        .iter()
        .zip(y)
        .map(|(&ti, &yi)| (yi - amplitude * (slope * ti).exp()).powi(2))
        .sum();
    let ss_tot: f64 = y.iter().map(|v| (v - ym).powi(2)).sum();
    Ok(ExponentialFit {
        amplitude,
        rate: -slope,
        r_squared: 1.0 - ss_res / ss_tot,
    })
}

/// One-sample Kolmogorov–Smirnov statistic of `samples` against the CDF `cdf`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic p-value of the KS statistic `d` for `n` samples, using the
/// Kolmogorov series with the Stephens small-sample correction.
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}
