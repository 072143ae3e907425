//! Jump stochastic master equations driven by photon counters, and the mixed
//! diffusive/jump case with crosstalk between detectors.
//!
//! Detector `μ` clicks with probability `p_μ dt`,
//! `p_μ = θ̄_μ + Σ_{μ'} η̄_{μ,μ'} Tr(V_{μ'}ρV_{μ'}†)`, at most once per step.
//! A click maps `ρ ↦ (θ̄_μρ + Σ η̄_{μ,μ'}V_{μ'}ρV_{μ'}†)/Tr`; without a click the
//! state follows the normalised smooth update, which also carries the
//! undetected fraction `(1 − η̄_{μ'}) dt Ṽ_{μ'}ρṼ_{μ'}†`.

use rand::Rng;

use crate::analysis::{normalized_kraus, ConditionalExpectation, LindbladModel};
use crate::channels::{
    discrete_step, partition, resonant_qubit_channel, sample_categorical, LeftStochasticMatrix,
    MIN_OUTCOME_PROB,
};
use crate::diffusive::{build_step_operators, DiffusiveModel, DiffusiveStepOperators, NoiseSampling};
use crate::ensemble::{map_trajectories, ExecMode};
use crate::error::{Error, Result};
use crate::linalg::{CMatrix, HERMITIAN_TOL};
use crate::record::{grid_steps, JumpRecord, RecordOptions, Recorder};
use crate::rng::trajectory_rng;
use crate::systems::{pauli, DensityOperator, Pauli};

/// Upper bound on the total click probability per step.
pub const MAX_CLICK_PROBABILITY: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct JumpModel {
    pub h: CMatrix,
    /// Jump operators `V_{μ'}`.
    pub jumps: Vec<CMatrix>,
    /// Dark-count rate `θ̄_μ` of each detector.
    pub shot_rates: Vec<f64>,
    /// `efficiency[μ][μ']` = η̄_{μ,μ'}: probability that a `V_{μ'}` jump clicks detector `μ`.
    pub efficiency: Vec<Vec<f64>>,
}

impl JumpModel {
    pub fn new(h: CMatrix, jumps: Vec<CMatrix>, shot_rates: Vec<f64>, efficiency: Vec<Vec<f64>>) -> Result<Self> {
        let m = Self {
            h,
            jumps,
            shot_rates,
            efficiency,
        };
        m.validate()?;
        Ok(m)
    }

    /// One detector per jump operator, without crosstalk.
    pub fn diagonal(h: CMatrix, jumps: Vec<CMatrix>, shot_rates: Vec<f64>, efficiencies: Vec<f64>) -> Result<Self> {
        let n = jumps.len();
        if efficiencies.len() != n {
            return Err(Error::InvalidParameter(format!(
                "{} efficiencies for {n} jump operators",
                efficiencies.len()
            )));
        }
        let eff = (0..n)
            .map(|i| (0..n).map(|j| if i == j { efficiencies[i] } else { 0.0 }).collect())
            .collect();
        Self::new(h, jumps, shot_rates, eff)
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.h.dim();
        if !self.h.is_finite() || !self.h.is_hermitian(HERMITIAN_TOL) {
            return Err(Error::InvalidParameter("jump model Hamiltonian is not Hermitian".into()));
        }
        for (k, v) in self.jumps.iter().enumerate() {
            if v.dim() != dim || !v.is_finite() {
                return Err(Error::InvalidParameter(format!("jump operator {k} has the wrong dimension or is not finite")));
            }
        }
        if self.efficiency.len() != self.shot_rates.len() {
            return Err(Error::InvalidParameter(format!(
                "{} shot rates for {} detectors",
                self.shot_rates.len(),
                self.efficiency.len()
            )));
        }
        for (mu, &th) in self.shot_rates.iter().enumerate() {
            if !(th >= 0.0 && th.is_finite()) {
                return Err(Error::InvalidParameter(format!("shot rate {mu} = {th} must be finite and non-negative")));
            }
        }
        for (mu, row) in self.efficiency.iter().enumerate() {
            if row.len() != self.jumps.len() {
                return Err(Error::InvalidParameter(format!(
                    "efficiency row {mu} has {} entries for {} jump operators",
                    row.len(),
                    self.jumps.len()
                )));
            }
            if row.iter().any(|&e| !(e >= 0.0 && e.is_finite())) {
                return Err(Error::InvalidParameter(format!("efficiency row {mu} has a negative entry")));
            }
        }
        for (j, s) in self.column_sums().iter().enumerate() {
            if *s > 1.0 + 1e-12 {
                return Err(Error::InvalidParameter(format!(
                    "efficiencies of jump operator {j} sum to {s} > 1"
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.h.dim()
    }

    pub fn n_detectors(&self) -> usize {
        self.shot_rates.len()
    }

    /// Overall detection efficiency `η̄_{μ'} = Σ_μ η̄_{μ,μ'}` of each jump operator.
    pub fn column_sums(&self) -> Vec<f64> {
        (0..self.jumps.len())
            .map(|j| self.efficiency.iter().map(|r| r[j]).sum())
            .collect()
    }

    pub fn detector_names(&self) -> Vec<String> {
        (0..self.n_detectors()).map(|k| format!("dN_{k}")).collect()
    }

    pub fn lindblad(&self) -> LindbladModel {
        LindbladModel {
            h: self.h.clone(),
            dissipators: self.jumps.clone(),
        }
    }

    /// Total click probability per unit time, `Σ_μ p_μ`.
    pub fn click_rates(&self, rho: &DensityOperator) -> Vec<f64> {
        let jump_rates: Vec<f64> = self.jumps.iter().map(|v| v.sandwich_trace(rho.matrix())).collect();
        self.shot_rates
            .iter()
            .zip(&self.efficiency)
            .map(|(th, row)| th + row.iter().zip(&jump_rates).map(|(e, r)| e * r).sum::<f64>())
            .collect()
    }
}

/// Qubit spontaneous emission `V = σ−`, counted by one detector.
pub fn qubit_decay_model(shot_rate: f64, efficiency: f64) -> Result<JumpModel> {
    JumpModel::diagonal(
        CMatrix::zeros(2),
        vec![pauli(Pauli::Minus)],
        vec![shot_rate],
        vec![efficiency],
    )
}

/// A detector that only sees dark counts (`V = 0`) on a qubit.
pub fn dark_count_model(shot_rate: f64) -> Result<JumpModel> {
    JumpModel::diagonal(CMatrix::zeros(2), vec![CMatrix::zeros(2)], vec![shot_rate], vec![1.0])
}

/// Diffusive channels and photon counters sharing one Hamiltonian.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedModel {
    pub diffusive: DiffusiveModel,
    pub jump: JumpModel,
}

impl MixedModel {
    pub fn new(diffusive: DiffusiveModel, jump: JumpModel) -> Result<Self> {
        let m = Self { diffusive, jump };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        self.diffusive.validate()?;
        self.jump.validate()?;
        if self.diffusive.dim() != self.jump.dim() {
            return Err(Error::InvalidParameter("diffusive and jump parts differ in dimension".into()));
        }
        if self.diffusive.h0.distance(&self.jump.h) > HERMITIAN_TOL {
            return Err(Error::InvalidParameter("diffusive and jump parts must share the Hamiltonian".into()));
        }
        if self.diffusive.sampling != NoiseSampling::FirstOrder && self.jump.n_detectors() > 0 {
            return Err(Error::InvalidParameter(
                "mixed models draw dy with first-order sampling".into(),
            ));
        }
        if self.diffusive.split {
            return Err(Error::InvalidParameter("the splitting scheme is not available for mixed models".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.jump.dim()
    }

    pub fn lindblad(&self, t: f64) -> LindbladModel {
        let mut l = self.diffusive.lindblad(t);
        l.dissipators.extend(self.jump.jumps.iter().cloned());
        l
    }

    /// Wraps a pure jump model; the diffusive part has no channels.
    pub fn from_jump(jump: JumpModel) -> Result<Self> {
        let diffusive = DiffusiveModel::new(jump.h.clone(), Vec::new())?;
        Self::new(diffusive, jump)
    }
}

/// Precomputed operators for one mixed step on a fixed `H`.
#[derive(Debug, Clone)]
pub struct MixedStepOperators {
    dt: f64,
    /// Smooth (no-click) update with all channels, including `Ṽ`.
    smooth: DiffusiveStepOperators,
    v_tilde: Vec<CMatrix>,
    undetected: Vec<f64>,
    /// Diffusive-only update applied after a click, absent without diffusive channels.
    after_click: Option<DiffusiveStepOperators>,
    jumps: JumpModel,
    sampling: NoiseSampling,
}

impl MixedStepOperators {
    pub fn new(model: &MixedModel, t: f64, dt: f64) -> Result<Self> {
        model.validate()?;
        let h = model.diffusive.hamiltonian(t);
        let nl = model.diffusive.channels.len();
        let mut all: Vec<CMatrix> = model.diffusive.channels.iter().map(|c| c.l.clone()).collect();
        all.extend(model.jump.jumps.iter().cloned());
        let (m0_tilde, mut tilde) = normalized_kraus(Some(&h), &all, dt)?;
        let v_tilde = tilde.split_off(nl);
        let mut smooth = build_step_operators(&model.diffusive, t, dt)?;
        smooth.m0_tilde = m0_tilde;
        smooth.l_tilde = tilde;
        let after_click = if nl > 0 {
            let mut d = model.diffusive.clone();
            d.h0 = CMatrix::zeros(d.dim());
            d.h1 = CMatrix::zeros(d.dim());
            Some(build_step_operators(&d, 0.0, dt)?)
        } else {
            None
        };
        let mut jumps = model.jump.clone();
        jumps.h = h;
        Ok(Self {
            dt,
            smooth,
            v_tilde,
            undetected: model.jump.column_sums().iter().map(|s| (1.0 - s).max(0.0)).collect(),
            after_click,
            jumps,
            sampling: model.diffusive.sampling,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// `Σ_μ p_μ dt`, checked against [`MAX_CLICK_PROBABILITY`].
    fn click_probabilities(&self, rho: &DensityOperator) -> Result<Vec<f64>> {
        let p: Vec<f64> = self.jumps.click_rates(rho).iter().map(|r| r * self.dt).collect();
        let total: f64 = p.iter().sum();
        if total > MAX_CLICK_PROBABILITY {
            return Err(Error::StepTooLarge {
                reason: format!("click probability {total:.3e} per step exceeds {MAX_CLICK_PROBABILITY}"),
                suggested_dt: 0.5 * MAX_CLICK_PROBABILITY * self.dt / total,
            });
        }
        Ok(p)
    }

    /// `(θ̄_μρ + Σ η̄_{μ,μ'}V_{μ'}ρV_{μ'}†)`, unnormalised.
    fn click_numerator(&self, mu: usize, rho: &DensityOperator) -> CMatrix {
        let mut out = rho.matrix().scale_real(self.jumps.shot_rates[mu]);
        for (v, &e) in self.jumps.jumps.iter().zip(&self.jumps.efficiency[mu]) {
            if e > 0.0 {
                out.add_scaled_real(&v.sandwich(rho.matrix()), e);
            }
        }
        out
    }

    fn smooth_numerator(&self, rho: &DensityOperator, dy: &[f64]) -> CMatrix {
        let mut out = self.smooth.numerator(rho.matrix(), dy);
        for (vt, &u) in self.v_tilde.iter().zip(&self.undetected) {
            if u > 0.0 {
                out.add_scaled_real(&vt.sandwich(rho.matrix()), u * self.dt);
            }
        }
        out
    }

    /// The state after a given outcome: `click = Some(μ)` or no click, with outputs `dy`.
    pub fn update(&self, rho: &DensityOperator, click: Option<usize>, dy: &[f64]) -> Result<DensityOperator> {
        if dy.len() != self.smooth.n_channels() {
            return Err(Error::InvalidParameter(format!(
                "{} outputs for {} diffusive channels",
                dy.len(),
                self.smooth.n_channels()
            )));
        }
        match click {
            Some(mu) => {
                let num = self.click_numerator(mu, rho);
                if !(num.trace().re >= MIN_OUTCOME_PROB) {
                    return Err(Error::DegenerateOutcomes);
                }
                let tilde = DensityOperator::normalized(num);
                match &self.after_click {
                    Some(ops) => ops.update(&tilde, dy),
                    None => Ok(tilde),
                }
            }
            None => {
                let num = self.smooth_numerator(rho, dy);
                if !(num.trace().re >= MIN_OUTCOME_PROB) {
                    return Err(Error::DegenerateOutcomes);
                }
                Ok(DensityOperator::normalized(num))
            }
        }
    }

    /// One step: resolve the click draw, then draw `dy` (drift from the pre-click
    /// state) and apply the matching update.
    pub fn step<R: Rng + ?Sized>(
        &self,
        rho: &DensityOperator,
        rng: &mut R,
    ) -> Result<(Vec<f64>, Vec<u32>, DensityOperator)> {
        let nd = self.jumps.n_detectors();
        let mut counts = vec![0; nd];
        let click = if nd > 0 {
            let p = self.click_probabilities(rho)?;
            let mut w = Vec::with_capacity(nd + 1);
            w.push(1.0 - p.iter().sum::<f64>());
            w.extend(p);
            match sample_categorical(&w, rng)? {
                0 => None,
                k => Some(k - 1),
            }
        } else {
            None
        };
        if let Some(mu) = click {
            counts[mu] = 1;
        }
        let dy = if self.smooth.n_channels() > 0 {
            self.smooth.sample_dy(self.sampling, rho, rng)?
        } else {
            Vec::new()
        };
        let next = self.update(rho, click, &dy)?;
        Ok((dy, counts, next))
    }

    /// Outcome-averaged state of a pure jump step (no diffusive channels).
    pub fn expected_state(&self, rho: &DensityOperator) -> Result<CMatrix> {
        let mut acc = CMatrix::zeros(rho.dim());
        self.for_each_branch(rho, |p, next| {
            acc.add_scaled_real(next.matrix(), p);
        })?;
        Ok(acc)
    }

    fn for_each_branch(&self, rho: &DensityOperator, mut f: impl FnMut(f64, &DensityOperator)) -> Result<()> {
        if self.smooth.n_channels() > 0 {
            return Err(Error::InvalidParameter(
                "branch enumeration needs a model without diffusive channels".into(),
            ));
        }
        let p = self.click_probabilities(rho)?;
        let p0 = 1.0 - p.iter().sum::<f64>();
        if p0 > 0.0 {
            f(p0, &self.update(rho, None, &[])?);
        }
        for (mu, &pm) in p.iter().enumerate() {
            if pm > 0.0 {
                f(pm, &self.update(rho, Some(mu), &[])?);
            }
        }
        Ok(())
    }
}

impl ConditionalExpectation for MixedStepOperators {
    fn conditional_expectation(
        &self,
        rho: &DensityOperator,
        f: &dyn Fn(&DensityOperator) -> f64,
    ) -> Result<f64> {
        let mut acc = 0.0;
        self.for_each_branch(rho, |p, next| acc += p * f(next))?;
        Ok(acc)
    }
}

/// Unnormalised branch traces with the raw operators,
/// `(1 − Σθ̄dt) Tr(M₀ρM₀† + Σ(1−η̄)dt VρV†) + Σ_μ dt Tr(θ̄_μρ + Σ η̄ VρV†)`,
/// which equals `1 + O(dt²)` with `M₀ = I − (iH + ½ΣV†V)dt`. The no-click
/// branch carries the probability that no dark count fires.
pub fn raw_branch_total(model: &JumpModel, rho: &DensityOperator, dt: f64) -> f64 {
    let dim = model.dim();
    let mut m0 = CMatrix::identity(dim);
    m0.add_scaled(&model.h, num_complex::Complex64::new(0.0, -dt));
    for v in &model.jumps {
        m0.add_scaled_real(&v.adjoint_matmul(v), -0.5 * dt);
    }
    let mut total = m0.sandwich_trace(rho.matrix());
    for (v, s) in model.jumps.iter().zip(model.column_sums()) {
        total += (1.0 - s) * dt * v.sandwich_trace(rho.matrix());
    }
    let dark: f64 = model.shot_rates.iter().sum();
    (1.0 - dark * dt) * total + dt * model.click_rates(rho).iter().sum::<f64>()
}

/// One jump step. Equivalent to a mixed step without diffusive channels.
pub fn jump_step<R: Rng + ?Sized>(
    model: &JumpModel,
    rho: &DensityOperator,
    dt: f64,
    rng: &mut R,
) -> Result<(Vec<u32>, DensityOperator)> {
    let ops = MixedStepOperators::new(&MixedModel::from_jump(model.clone())?, 0.0, dt)?;
    let (_, dn, next) = ops.step(rho, rng)?;
    Ok((dn, next))
}

/// One mixed step with `H = H(0)`.
pub fn mixed_step<R: Rng + ?Sized>(
    model: &MixedModel,
    rho: &DensityOperator,
    dt: f64,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<u32>, DensityOperator)> {
    MixedStepOperators::new(model, 0.0, dt)?.step(rho, rng)
}

/// Integrates a mixed trajectory on the grid `k·dt`, `k = 0..=tmax/dt`.
pub fn run_mixed<R: Rng + ?Sized>(
    model: &MixedModel,
    rho0: &DensityOperator,
    dt: f64,
    tmax: f64,
    rng: &mut R,
    opts: &RecordOptions,
) -> Result<JumpRecord> {
    model.validate()?;
    if rho0.dim() != model.dim() {
        return Err(Error::InvalidParameter("initial state dimension differs from the model".into()));
    }
    let nsteps = grid_steps(dt, tmax)?;
    let mut rec = Recorder::new(
        opts,
        (0, 0),
        dt,
        nsteps,
        model.diffusive.channel_names(),
        model.jump.detector_names(),
        rho0,
    )?;
    let control = &model.diffusive.control;
    let mut u = control.value(0.0);
    let mut ops = MixedStepOperators::new(model, 0.0, dt)?;
    let mut rho = rho0.clone();
    for k in 1..=nsteps {
        let t = (k - 1) as f64 * dt;
        let uk = control.value(t);
        if uk != u {
            u = uk;
            ops = MixedStepOperators::new(model, t, dt)?;
        }
        let (dy, dn, next) = ops.step(&rho, rng)?;
        rho = next;
        rec.push(k, &dy, &dn, &rho)?;
    }
    Ok(rec.finish_at(nsteps, rho))
}

pub fn run_jump<R: Rng + ?Sized>(
    model: &JumpModel,
    rho0: &DensityOperator,
    dt: f64,
    tmax: f64,
    rng: &mut R,
    opts: &RecordOptions,
) -> Result<JumpRecord> {
    run_mixed(&MixedModel::from_jump(model.clone())?, rho0, dt, tmax, rng, opts)
}

/// Click-count comparison between the discrete resonant probe and the jump model.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteJumpReport {
    pub dt: f64,
    pub nsteps: usize,
    pub samples: usize,
    /// `discrete[k]`: number of runs with `k` clicks.
    pub discrete: Vec<u64>,
    pub jump: Vec<u64>,
    pub tv_distance: f64,
}

impl DiscreteJumpReport {
    /// Fraction of runs with at least one click, `(discrete, jump)`.
    pub fn click_fractions(&self) -> (f64, f64) {
        let f = |h: &[u64]| 1.0 - h.first().copied().unwrap_or(0) as f64 / self.samples as f64;
        (f(&self.discrete), f(&self.jump))
    }

    /// Mean number of clicks per run, `(discrete, jump)`.
    pub fn mean_clicks(&self) -> (f64, f64) {
        let f = |h: &[u64]| {
            h.iter().enumerate().map(|(k, &c)| k as f64 * c as f64).sum::<f64>() / self.samples as f64
        };
        (f(&self.discrete), f(&self.jump))
    }
}

/// Runs the resonant qubit probe with `sin²θ = dt` against the qubit decay jump
/// model on the same grid, from `rho0`, and compares click-count distributions.
///
/// The two simulators use disjoint random streams.
pub fn resonant_discrete_to_jump_check(
    theta: f64,
    nsteps: usize,
    efficiency: f64,
    rho0: &DensityOperator,
    samples: usize,
    seed: u64,
    mode: ExecMode,
) -> Result<DiscreteJumpReport> {
    let dt = theta.sin().powi(2);
    let discrete = partition(
        resonant_qubit_channel(theta)?,
        LeftStochasticMatrix::photon_counter(0.0, efficiency)?,
    )?;
    let model = MixedModel::from_jump(qubit_decay_model(0.0, efficiency)?)?;
    let jump_ops = if dt > 0.0 {
        Some(MixedStepOperators::new(&model, 0.0, dt)?)
    } else {
        None
    };
    let counts = map_trajectories(samples as u64, mode, |k| {
        let mut rng = trajectory_rng(seed, k);
        let mut rho = rho0.clone();
        let mut nd = 0usize;
        for _ in 0..nsteps {
            let (y, next) = discrete_step(&discrete, &rho, &mut rng)?;
            nd += y;
            rho = next;
        }
        let mut nj = 0usize;
        if let Some(ops) = &jump_ops {
            let mut rng = trajectory_rng(seed, k | (1 << 63));
            let mut rho = rho0.clone();
            for _ in 0..nsteps {
                let (_, dn, next) = ops.step(&rho, &mut rng)?;
                nj += dn[0] as usize;
                rho = next;
            }
        }
        Ok((nd, nj))
    })?;
    let kmax = counts.iter().map(|&(a, b)| a.max(b)).max().unwrap_or(0);
    let mut hd = vec![0u64; kmax + 1];
    let mut hj = vec![0u64; kmax + 1];
    for (a, b) in counts {
        hd[a] += 1;
        hj[b] += 1;
    }
    let n = samples as f64;
    let tv = 0.5 * hd.iter().zip(&hj).map(|(&a, &b)| (a as f64 - b as f64).abs() / n).sum::<f64>();
    Ok(DiscreteJumpReport {
        dt,
        nsteps,
        samples,
        discrete: hd,
        jump: hj,
        tv_distance: tv,
    })
}
