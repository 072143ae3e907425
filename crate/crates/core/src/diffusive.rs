//! Diffusive stochastic master equations, integrated with the normalised
//! Kraus-map scheme
//!
//! ```text
//! ρ′ ∝ M̃_dy ρ M̃_dy† + Σ (1 − η_ν) dt L̃_ν ρ L̃_ν†,   M̃_dy = M̃₀ + Σ √η_ν dy_ν L̃_ν,
//! ```
//!
//! which keeps every step positive and trace one for any `dt` within the guard.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::analysis::{normalized_kraus, ConditionalExpectation, LindbladModel};
use crate::channels::MIN_OUTCOME_PROB;
use crate::error::{Error, Result};
use crate::linalg::{herm_expm, CMatrix, HERMITIAN_TOL};
use crate::quadrature::{GaussHermite, DEFAULT_ORDER};
use crate::record::{grid_steps, DiffusiveRecord, RecordOptions, Recorder};
use crate::systems::{pauli, DensityOperator, Pauli};

/// How the measurement increment is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseSampling {
    /// `dy = √η Tr((L + L†)ρ) dt + dW` with `dW ~ Normal(0, dt)`.
    #[default]
    FirstOrder,
    /// `dy = s√dt` with `s` drawn from the exact outcome law of the Kraus map,
    /// `P(s) ∝ Tr{M̃_{s√dt}ρM̃† + Σ(1−η)L̃ρL̃†dt} φ(s)`.
    Exact,
}

/// Piecewise-constant control `u(t)`: `u = u_k` on `[t_k, t_{k+1})`, zero before `t_0`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ControlSchedule {
    segments: Vec<(f64, f64)>,
}

impl ControlSchedule {
    pub fn constant(u: f64) -> Self {
        Self {
            segments: vec![(0.0, u)],
        }
    }

    /// `segments` are `(start_time, value)` pairs with strictly increasing starts.
    pub fn piecewise(segments: Vec<(f64, f64)>) -> Result<Self> {
        for w in segments.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::InvalidParameter(
                    "control segment start times must increase".into(),
                ));
            }
        }
        if segments.iter().any(|(t, u)| !t.is_finite() || !u.is_finite()) {
            return Err(Error::InvalidParameter("control schedule must be finite".into()));
        }
        Ok(Self { segments })
    }

    pub fn segments(&self) -> &[(f64, f64)] {
        &self.segments
    }

    pub fn value(&self, t: f64) -> f64 {
        // grid times are k·dt; the slack keeps a step that starts on a
        // breakpoint from reading the previous segment through rounding
        let t = t + 1e-12 * t.abs().max(1.0);
        self.segments
            .iter()
            .take_while(|(start, _)| *start <= t)
            .last()
            .map_or(0.0, |(_, u)| *u)
    }
}

/// A measured channel `L` read out with efficiency `eta`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusiveChannel {
    pub l: CMatrix,
    pub eta: f64,
}

impl DiffusiveChannel {
    pub fn new(l: CMatrix, eta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::InvalidParameter(format!("efficiency {eta} outside [0, 1]")));
        }
        if !l.is_finite() {
            return Err(Error::InvalidParameter("measurement operator is not finite".into()));
        }
        Ok(Self { l, eta })
    }
}

/// `H(t) = H₀ + u(t)H₁` with diffusive measurement channels.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusiveModel {
    pub h0: CMatrix,
    pub h1: CMatrix,
    pub control: ControlSchedule,
    pub channels: Vec<DiffusiveChannel>,
    pub sampling: NoiseSampling,
    /// Integrate with the Hamiltonian-splitting variant.
    pub split: bool,
}

impl DiffusiveModel {
    pub fn new(h0: CMatrix, channels: Vec<DiffusiveChannel>) -> Result<Self> {
        let dim = h0.dim();
        let m = Self {
            h1: CMatrix::zeros(dim),
            h0,
            control: ControlSchedule::default(),
            channels,
            sampling: NoiseSampling::FirstOrder,
            split: false,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn with_control(mut self, h1: CMatrix, control: ControlSchedule) -> Result<Self> {
        self.h1 = h1;
        self.control = control;
        self.validate()?;
        Ok(self)
    }

    pub fn with_sampling(mut self, sampling: NoiseSampling) -> Self {
        self.sampling = sampling;
        self
    }

    pub fn with_split(mut self, split: bool) -> Self {
        self.split = split;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.h0.dim();
        for (name, h) in [("h0", &self.h0), ("h1", &self.h1)] {
            if h.dim() != dim {
                return Err(Error::InvalidParameter(format!("{name} has dimension {}", h.dim())));
            }
            if !h.is_finite() || !h.is_hermitian(HERMITIAN_TOL) {
                return Err(Error::InvalidParameter(format!("{name} is not Hermitian")));
            }
        }
        for (k, c) in self.channels.iter().enumerate() {
            if c.l.dim() != dim {
                return Err(Error::InvalidParameter(format!(
                    "channel {k} has dimension {}, expected {dim}",
                    c.l.dim()
                )));
            }
            if !(0.0..=1.0).contains(&c.eta) {
                return Err(Error::InvalidParameter(format!("channel {k} efficiency {} outside [0, 1]", c.eta)));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.h0.dim()
    }

    pub fn hamiltonian(&self, t: f64) -> CMatrix {
        let u = self.control.value(t);
        let mut h = self.h0.clone();
        if u != 0.0 {
            h.add_scaled_real(&self.h1, u);
        }
        h
    }

    /// The unconditional dynamics at time `t` (all measurements unread).
    pub fn lindblad(&self, t: f64) -> LindbladModel {
        LindbladModel {
            h: self.hamiltonian(t),
            dissipators: self.channels.iter().map(|c| c.l.clone()).collect(),
        }
    }

    pub fn channel_names(&self) -> Vec<String> {
        (0..self.channels.len()).map(|k| format!("dy_{k}")).collect()
    }
}

/// σz measurement of a qubit: `H = 0`, `L = √γ σz` read with efficiency `eta`.
pub fn qubit_zmeas_model(eta: f64, gamma: f64) -> Result<DiffusiveModel> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidParameter(format!("gamma = {gamma} must be positive")));
    }
    let l = pauli(Pauli::Z).scale_real(gamma.sqrt());
    DiffusiveModel::new(CMatrix::zeros(2), vec![DiffusiveChannel::new(l, eta)?])
}

/// Normalised step operators with `M̃₀†M̃₀ + dt ΣL̃†L̃ = I`.
#[derive(Debug, Clone)]
pub struct DiffusiveStepOperators {
    pub m0_tilde: CMatrix,
    pub l_tilde: Vec<CMatrix>,
    pub dt: f64,
    l: Vec<CMatrix>,
    eta: Vec<f64>,
}

pub fn build_step_operators(model: &DiffusiveModel, t: f64, dt: f64) -> Result<DiffusiveStepOperators> {
    let h = model.hamiltonian(t);
    build_from_parts(Some(&h), model, dt)
}

fn build_from_parts(h: Option<&CMatrix>, model: &DiffusiveModel, dt: f64) -> Result<DiffusiveStepOperators> {
    let l: Vec<CMatrix> = model.channels.iter().map(|c| c.l.clone()).collect();
    let h = match h {
        Some(h) => h.clone(),
        None => CMatrix::zeros(model.dim()),
    };
    let (m0_tilde, l_tilde) = normalized_kraus(Some(&h), &l, dt)?;
    Ok(DiffusiveStepOperators {
        m0_tilde,
        l_tilde,
        dt,
        l,
        eta: model.channels.iter().map(|c| c.eta).collect(),
    })
}

impl DiffusiveStepOperators {
    pub fn n_channels(&self) -> usize {
        self.l.len()
    }

    /// `‖M̃₀†M̃₀ + dt ΣL̃†L̃ − I‖_F`.
    pub fn completeness_residual(&self) -> f64 {
        let mut s = self.m0_tilde.adjoint_matmul(&self.m0_tilde);
        for l in &self.l_tilde {
            s.add_scaled_real(&l.adjoint_matmul(l), self.dt);
        }
        s.distance(&CMatrix::identity(s.dim()))
    }

    /// Deterministic part `√η_ν Tr((L_ν + L_ν†)ρ) dt` of each output.
    pub fn measurement_drift(&self, rho: &DensityOperator) -> Vec<f64> {
        self.l
            .iter()
            .zip(&self.eta)
            .map(|(l, &eta)| eta.sqrt() * 2.0 * rho.expect(l).re * self.dt)
            .collect()
    }

    /// Unnormalised `M̃_dy ρ M̃_dy† + Σ(1−η)dt L̃ρL̃†`.
    pub(crate) fn numerator(&self, rho: &CMatrix, dy: &[f64]) -> CMatrix {
        let mut m = self.m0_tilde.clone();
        for ((lt, &eta), &y) in self.l_tilde.iter().zip(&self.eta).zip(dy) {
            if eta > 0.0 {
                m.add_scaled_real(lt, eta.sqrt() * y);
            }
        }
        let mut out = m.sandwich(rho);
        for (lt, &eta) in self.l_tilde.iter().zip(&self.eta) {
            if eta < 1.0 {
                out.add_scaled_real(&lt.sandwich(rho), (1.0 - eta) * self.dt);
            }
        }
        out
    }

    /// The state update for a given measurement `dy`.
    pub fn update(&self, rho: &DensityOperator, dy: &[f64]) -> Result<DensityOperator> {
        if dy.len() != self.n_channels() {
            return Err(Error::InvalidParameter(format!(
                "{} outputs for {} channels",
                dy.len(),
                self.n_channels()
            )));
        }
        let num = self.numerator(rho.matrix(), dy);
        let tr = num.trace().re;
        if !(tr >= MIN_OUTCOME_PROB) {
            return Err(Error::DegenerateOutcomes);
        }
        Ok(DensityOperator::normalized(num))
    }

    /// Outcome-averaged update `M̃₀ρM̃₀† + dt ΣL̃ρL̃†`, i.e. the step with every η = 0.
    pub fn unread_update(&self, rho: &DensityOperator) -> DensityOperator {
        let mut out = self.m0_tilde.sandwich(rho.matrix());
        for lt in &self.l_tilde {
            out.add_scaled_real(&lt.sandwich(rho.matrix()), self.dt);
        }
        DensityOperator::normalized(out)
    }

    /// `∫ (M̃_{s√dt}ρM̃† + …) φ(s) ds` by tensor Gauss–Hermite quadrature; the
    /// outcome-averaged numerator, which equals [`Self::unread_update`] exactly.
    pub fn quadrature_average(&self, rho: &DensityOperator, order: usize) -> Result<CMatrix> {
        let mut acc = CMatrix::zeros(rho.dim());
        self.for_each_node(order, |w, s| {
            let dy: Vec<f64> = s.iter().map(|v| v * self.dt.sqrt()).collect();
            acc.add_scaled_real(&self.numerator(rho.matrix(), &dy), w);
            Ok(())
        })?;
        Ok(acc)
    }

    /// Calls `f(weight, s)` on the nodes of the d-dimensional standard-normal rule.
    fn for_each_node(&self, order: usize, mut f: impl FnMut(f64, &[f64]) -> Result<()>) -> Result<()> {
        let d = self.n_channels();
        if d > 3 {
            return Err(Error::InvalidParameter(format!(
                "quadrature over {d} channels is not supported"
            )));
        }
        let gh = GaussHermite::new(order);
        let scale = std::f64::consts::PI.sqrt();
        let total = order.pow(d as u32);
        let mut s = vec![0.0; d];
        for mut idx in 0..total {
            let mut w = 1.0;
            for v in s.iter_mut() {
                let k = idx % order;
                idx /= order;
                *v = std::f64::consts::SQRT_2 * gh.nodes[k];
                w *= gh.weights[k] / scale;
            }
            f(w, &s)?;
        }
        Ok(())
    }

    /// Coefficients of the quadratic `w(s) = c + b·s + sᵀCs` with
    /// `w(s) = Tr{numerator(s√dt)}`.
    fn outcome_weight(&self, rho: &CMatrix) -> (f64, Vec<f64>, Vec<Vec<f64>>) {
        let d = self.n_channels();
        let sdt = self.dt.sqrt();
        let m0r = self.m0_tilde.matmul(rho);
        let lr: Vec<CMatrix> = self.l_tilde.iter().map(|l| l.matmul(rho)).collect();
        let mut c = m0r.trace_product(&self.m0_tilde.adjoint()).re;
        for (k, l) in self.l_tilde.iter().enumerate() {
            c += (1.0 - self.eta[k]) * self.dt * lr[k].trace_product(&l.adjoint()).re;
        }
        let b = (0..d)
            .map(|k| 2.0 * (self.eta[k]).sqrt() * sdt * lr[k].trace_product(&self.m0_tilde.adjoint()).re)
            .collect();
        let cm = (0..d)
            .map(|i| {
                (0..d)
                    .map(|j| {
                        (self.eta[i] * self.eta[j]).sqrt()
                            * self.dt
                            * lr[i].trace_product(&self.l_tilde[j].adjoint()).re
                    })
                    .collect()
            })
            .collect();
        (c, b, cm)
    }

    /// Draws `s` from its exact law by rejection from a `Normal(0, 2I)` proposal.
    fn sample_exact<R: Rng + ?Sized>(&self, rho: &DensityOperator, rng: &mut R) -> Result<Vec<f64>> {
        let d = self.n_channels();
        let (c, b, cm) = self.outcome_weight(rho.matrix());
        let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        // C is a Gram matrix, so its largest eigenvalue is at most its trace.
        let lam: f64 = (0..d).map(|i| cm[i][i]).sum::<f64>().max(0.0);
        // target/proposal = w(s) 2^{d/2} e^{−|s|²/4}; with r = |s|,
        // max r e^{−r²/4} = √(2/e) and max r² e^{−r²/4} = 4/e
        let e = std::f64::consts::E;
        let bound = c + bnorm * (2.0 / e).sqrt() + lam * 4.0 / e;
        for _ in 0..MAX_REJECTIONS {
            let s: Vec<f64> = (0..d)
                .map(|_| std::f64::consts::SQRT_2 * Distribution::<f64>::sample(&StandardNormal, rng))
                .collect();
            let r2: f64 = s.iter().map(|v| v * v).sum();
            let mut w = c;
            for i in 0..d {
                w += b[i] * s[i];
                for j in 0..d {
                    w += s[i] * cm[i][j] * s[j];
                }
            }
            let ratio = w.max(0.0) * (-r2 / 4.0).exp() / bound;
            if rng.random::<f64>() < ratio {
                return Ok(s);
            }
        }
        Err(Error::StepTooLarge {
            reason: "exact outcome sampling did not accept a proposal".into(),
            suggested_dt: self.dt / 10.0,
        })
    }

    /// Draws the outputs `dy` for the current state.
    pub fn sample_dy<R: Rng + ?Sized>(
        &self,
        sampling: NoiseSampling,
        rho: &DensityOperator,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        match sampling {
            NoiseSampling::FirstOrder => {
                let sdt = self.dt.sqrt();
                let drift = self.measurement_drift(rho);
                Ok(drift
                    .into_iter()
                    .map(|m| {
                        let z: f64 = StandardNormal.sample(rng);
                        m + sdt * z
                    })
                    .collect())
            }
            NoiseSampling::Exact => {
                let s = self.sample_exact(rho, rng)?;
                Ok(s.into_iter().map(|v| v * self.dt.sqrt()).collect())
            }
        }
    }
}

const MAX_REJECTIONS: usize = 10_000;

impl ConditionalExpectation for DiffusiveStepOperators {
    /// Expectation under the exact outcome law of the Kraus map.
    fn conditional_expectation(
        &self,
        rho: &DensityOperator,
        f: &dyn Fn(&DensityOperator) -> f64,
    ) -> Result<f64> {
        let mut acc = 0.0;
        self.for_each_node(DEFAULT_ORDER, |w, s| {
            let dy: Vec<f64> = s.iter().map(|v| v * self.dt.sqrt()).collect();
            let num = self.numerator(rho.matrix(), &dy);
            let p = num.trace().re;
            if p > 0.0 {
                acc += w * p * f(&DensityOperator::normalized(num));
            }
            Ok(())
        })?;
        Ok(acc)
    }
}

/// One step: draw `dy` and apply the normalised Kraus update.
pub fn diffusive_step<R: Rng + ?Sized>(
    ops: &DiffusiveStepOperators,
    model: &DiffusiveModel,
    rho: &DensityOperator,
    rng: &mut R,
) -> Result<(Vec<f64>, DensityOperator)> {
    let dy = ops.sample_dy(model.sampling, rho, rng)?;
    let next = ops.update(rho, &dy)?;
    Ok((dy, next))
}

/// Operators for the splitting scheme: half-step unitaries around a
/// measurement update with `M₀ = I − (dt/2)ΣL†L`.
#[derive(Debug, Clone)]
pub struct SplitStepOperators {
    pub half_unitary: CMatrix,
    pub inner: DiffusiveStepOperators,
}

pub fn build_split_operators(model: &DiffusiveModel, t: f64, dt: f64) -> Result<SplitStepOperators> {
    let h = model.hamiltonian(t);
    let half_unitary = herm_expm(&h, Complex64::new(0.0, -dt / 2.0))?;
    let inner = if model.channels.is_empty() {
        DiffusiveStepOperators {
            m0_tilde: CMatrix::identity(model.dim()),
            l_tilde: Vec::new(),
            dt,
            l: Vec::new(),
            eta: Vec::new(),
        }
    } else {
        build_from_parts(None, model, dt)?
    };
    Ok(SplitStepOperators { half_unitary, inner })
}

impl SplitStepOperators {
    pub fn update(&self, rho: &DensityOperator, dy: &[f64]) -> Result<DensityOperator> {
        let r1 = DensityOperator::normalized(self.half_unitary.sandwich(rho.matrix()));
        let r2 = self.inner.update(&r1, dy)?;
        Ok(DensityOperator::normalized(self.half_unitary.sandwich(r2.matrix())))
    }

    pub fn step<R: Rng + ?Sized>(
        &self,
        sampling: NoiseSampling,
        rho: &DensityOperator,
        rng: &mut R,
    ) -> Result<(Vec<f64>, DensityOperator)> {
        let r1 = DensityOperator::normalized(self.half_unitary.sandwich(rho.matrix()));
        let dy = self.inner.sample_dy(sampling, &r1, rng)?;
        let r2 = self.inner.update(&r1, &dy)?;
        Ok((dy, DensityOperator::normalized(self.half_unitary.sandwich(r2.matrix()))))
    }
}

/// One splitting-scheme step with `H = H(0)`.
pub fn diffusive_step_split<R: Rng + ?Sized>(
    model: &DiffusiveModel,
    rho: &DensityOperator,
    dt: f64,
    rng: &mut R,
) -> Result<(Vec<f64>, DensityOperator)> {
    build_split_operators(model, 0.0, dt)?.step(model.sampling, rho, rng)
}

enum Stepper {
    Kraus(DiffusiveStepOperators),
    Split(SplitStepOperators),
}

impl Stepper {
    fn build(model: &DiffusiveModel, t: f64, dt: f64) -> Result<Self> {
        Ok(if model.split {
            Stepper::Split(build_split_operators(model, t, dt)?)
        } else {
            Stepper::Kraus(build_step_operators(model, t, dt)?)
        })
    }

    fn step<R: Rng + ?Sized>(
        &self,
        model: &DiffusiveModel,
        rho: &DensityOperator,
        rng: &mut R,
    ) -> Result<(Vec<f64>, DensityOperator)> {
        match self {
            Stepper::Kraus(ops) => diffusive_step(ops, model, rho, rng),
            Stepper::Split(ops) => ops.step(model.sampling, rho, rng),
        }
    }
}

/// Integrates one trajectory on the grid `k·dt`, `k = 0..=tmax/dt`.
pub fn run_diffusive<R: Rng + ?Sized>(
    model: &DiffusiveModel,
    rho0: &DensityOperator,
    dt: f64,
    tmax: f64,
    rng: &mut R,
    opts: &RecordOptions,
) -> Result<DiffusiveRecord> {
    model.validate()?;
    if rho0.dim() != model.dim() {
        return Err(Error::InvalidParameter("initial state dimension differs from the model".into()));
    }
    let nsteps = grid_steps(dt, tmax)?;
    let mut rec = Recorder::new(opts, (0, 0), dt, nsteps, model.channel_names(), Vec::new(), rho0)?;
    let mut u = model.control.value(0.0);
    let mut stepper = Stepper::build(model, 0.0, dt)?;
    let mut rho = rho0.clone();
    for k in 1..=nsteps {
        let t = (k - 1) as f64 * dt;
        let uk = model.control.value(t);
        if uk != u {
            u = uk;
            stepper = Stepper::build(model, t, dt)?;
        }
        let (dy, next) = stepper.step(model, &rho, rng)?;
        rho = next;
        rec.push(k, &dy, &[], &rho)?;
    }
    Ok(rec.finish_at(nsteps, rho))
}
