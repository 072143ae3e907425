//! Command-line front end: scenario files, seeded batch runs, CSV export and
//! the built-in invariant checks.
//!
//! A run writes three files into the output directory:
//! `trajectories.csv` (one row per recorded step of every trajectory),
//! `ensemble.csv` (per-time mean and standard error of each observable) and
//! `metadata.toml` (generator id, seed and the effective configuration).

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::Parser;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    martingale_check, EnsembleAccumulator, EnsembleStats, LindbladModel, LyapunovKind, LyapunovSpec,
};
use crate::channels::{
    discrete_step, gaussian_meter_imperfect_step, partition, qnd_channel, resonant_channel, GaussianMeter,
    KrausChannel, LeftStochasticMatrix, PartitionedChannel,
};
use crate::diffusive::{
    build_step_operators, run_diffusive, ControlSchedule, DiffusiveChannel, DiffusiveModel, NoiseSampling,
};
use crate::ensemble::{for_each_trajectory, with_threads, ExecMode, DEFAULT_BATCH};
use crate::error::Error;
use crate::jump::{raw_branch_total, run_mixed, JumpModel, MixedModel, MixedStepOperators};
use crate::linalg::CMatrix;
use crate::record::{grid_steps, Observable, RecordOptions, Recorder, TrajectoryRecord};
use crate::rng::{trajectory_rng, ALGORITHM_ID};
use crate::systems::{coherent, pauli, DensityOperator, FockSpace, Pauli};

/// Largest Fock cutoff accepted from a configuration file.
pub const MAX_NMAX: usize = 200;

/// Random states drawn per identity in [`verify`].
pub const VERIFY_SAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// Dispersive photon counting through repeated qubit probes.
    QndPhoton,
    /// Resonant probes that absorb photons.
    ResonantPhoton,
    /// Weak Gaussian meter on a qubit.
    QubitGaussian,
    /// Diffusive (homodyne-type) measurement of a qubit.
    Diffusive,
    /// Photon counting on a qubit.
    Jump,
    /// Diffusive channels and photon counters together.
    Mixed,
    /// Deterministic Lindblad reference for the configured qubit channels.
    Lindblad,
}

impl Scenario {
    pub fn is_discrete(self) -> bool {
        matches!(self, Scenario::QndPhoton | Scenario::ResonantPhoton | Scenario::QubitGaussian)
    }

    fn is_photon(self) -> bool {
        matches!(self, Scenario::QndPhoton | Scenario::ResonantPhoton)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    #[serde(default)]
    pub numerics: Numerics,
    #[serde(default)]
    pub physics: Physics,
    #[serde(default)]
    pub output: Output,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Numerics {
    /// Fock cutoff for the photon scenarios.
    pub nmax: usize,
    /// Time step of the continuous-time scenarios.
    pub dt: f64,
    /// Final time of the continuous-time scenarios; a whole number of steps.
    pub tmax: f64,
    /// Number of probes for the discrete-time scenarios.
    pub steps: usize,
    pub ntraj: u64,
    pub seed: u64,
    /// Record every `stride` steps; measurements are summed over the window.
    pub stride: usize,
    /// Upper bound on steps per trajectory.
    pub max_steps: usize,
}

impl Default for Numerics {
    fn default() -> Self {
        Self {
            nmax: 15,
            dt: 1e-3,
            tmax: 1.0,
            steps: 500,
            ntraj: 100,
            seed: 0,
            stride: 1,
            max_steps: 10_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Physics {
    /// Probe interaction angle (photon scenarios and the Gaussian meter).
    pub theta: f64,
    /// Coherent amplitude of the initial field, or the meter amplitude.
    pub alpha: f64,
    /// Extra Gaussian noise of the meter readout.
    pub sigma: f64,
    /// Symmetric readout error of the discrete probe detector.
    pub error_rate: f64,
    /// Measurement strength: `L = √γ σ` for each measured axis.
    pub gamma: f64,
    /// Rabi drive, `H = ω/2 σx`.
    pub omega: f64,
    /// Measured operators of the diffusive channels.
    pub measure: Option<Vec<Pauli>>,
    /// Efficiency per diffusive channel (default 1).
    pub eta: Option<Vec<f64>>,
    /// Jump strength: `V = √κ σ` for each counted operator.
    pub kappa: f64,
    /// Counted jump operators.
    pub jumps: Option<Vec<Pauli>>,
    /// Dark-count rate per detector (default 0).
    pub theta_bar: Option<Vec<f64>>,
    /// Detector efficiency matrix `[detector][jump]` (default identity).
    pub eta_bar: Option<Vec<Vec<f64>>>,
    /// Piecewise-constant control `[start, u]` multiplying `σy/2`.
    pub control: Vec<[f64; 2]>,
    /// Initial Bloch vector of the qubit scenarios.
    pub bloch0: Option<[f64; 3]>,
    pub sampling: NoiseSampling,
    pub split: bool,
}

impl Default for Physics {
    fn default() -> Self {
        Self {
            theta: 0.61,
            alpha: 1.5,
            sigma: 0.0,
            error_rate: 0.0,
            gamma: 1.0,
            omega: 0.0,
            measure: None,
            eta: None,
            kappa: 1.0,
            jumps: None,
            theta_bar: None,
            eta_bar: None,
            control: Vec::new(),
            bloch0: None,
            sampling: NoiseSampling::FirstOrder,
            split: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Output {
    pub dir: PathBuf,
    /// Write `trajectories.csv`; the ensemble file is always written.
    pub trajectories: bool,
}

impl Default for Output {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("qsme-out"),
            trajectories: true,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad configuration value, reported with its field path.
    #[error("{path}: {message}")]
    Config { path: String, message: String },
    #[error(transparent)]
    Model(#[from] Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{failed} of {total} invariant checks failed")]
    Verify { failed: usize, total: usize },
}

impl CliError {
    /// 1 for invalid input, 2 for numerical guards and failed checks, 3 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 1,
            CliError::Model(e) if e.is_numerical_guard() => 2,
            CliError::Model(_) => 1,
            CliError::Verify { .. } => 2,
            CliError::Io { .. } => 3,
        }
    }
}

fn config_err(path: &str, message: impl Into<String>) -> CliError {
    CliError::Config {
        path: path.into(),
        message: message.into(),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn in_unit(path: &str, x: f64) -> Result<(), CliError> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(config_err(path, format!("{x} is outside [0, 1]")))
    }
}

fn finite(path: &str, x: f64) -> Result<(), CliError> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(config_err(path, "must be finite"))
    }
}

impl ScenarioConfig {
    pub fn new(scenario: Scenario) -> Self {
        Self {
            scenario,
            numerics: Numerics::default(),
            physics: Physics::default(),
            output: Output::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| config_err("config", e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| config_err("config", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        toml::from_str(&text).map_err(|e| config_err(&path.display().to_string(), e.to_string()))
    }

    /// Number of steps per trajectory.
    pub fn nsteps(&self) -> Result<usize, CliError> {
        if self.scenario.is_discrete() {
            return Ok(self.numerics.steps);
        }
        grid_steps(self.numerics.dt, self.numerics.tmax).map_err(|e| config_err("numerics.tmax", e.to_string()))
    }

    /// Diffusive channel operators in use, empty for the pure jump scenario.
    pub fn measured(&self) -> Vec<Pauli> {
        match self.scenario {
            Scenario::Diffusive | Scenario::Mixed | Scenario::Lindblad => {
                self.physics.measure.clone().unwrap_or_else(|| vec![Pauli::Z])
            }
            _ => Vec::new(),
        }
    }

    /// Counted jump operators in use.
    pub fn counted(&self) -> Vec<Pauli> {
        match self.scenario {
            Scenario::Jump | Scenario::Mixed => self.physics.jumps.clone().unwrap_or_else(|| vec![Pauli::Minus]),
            Scenario::Lindblad => self.physics.jumps.clone().unwrap_or_default(),
            _ => Vec::new(),
        }
    }

    fn etas(&self) -> Vec<f64> {
        let n = self.measured().len();
        self.physics.eta.clone().unwrap_or_else(|| vec![1.0; n])
    }

    fn theta_bars(&self) -> Vec<f64> {
        let n = self.counted().len();
        self.physics.theta_bar.clone().unwrap_or_else(|| vec![0.0; n])
    }

    fn eta_bars(&self) -> Vec<Vec<f64>> {
        let n = self.counted().len();
        self.physics
            .eta_bar
            .clone()
            .unwrap_or_else(|| (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let n = &self.numerics;
        let p = &self.physics;
        if n.nmax == 0 || n.nmax > MAX_NMAX {
            return Err(config_err("numerics.nmax", format!("must lie in 1..={MAX_NMAX}")));
        }
        if !(n.dt > 0.0 && n.dt.is_finite()) {
            return Err(config_err("numerics.dt", "must be positive"));
        }
        if n.ntraj == 0 {
            return Err(config_err("numerics.ntraj", "must be at least 1"));
        }
        if n.stride == 0 {
            return Err(config_err("numerics.stride", "must be at least 1"));
        }
        let steps = self.nsteps()?;
        if steps > n.max_steps {
            return Err(config_err(
                "numerics.max_steps",
                format!("{steps} steps per trajectory exceed the budget of {}", n.max_steps),
            ));
        }
        finite("physics.theta", p.theta)?;
        finite("physics.alpha", p.alpha)?;
        finite("physics.omega", p.omega)?;
        if !(p.sigma >= 0.0 && p.sigma.is_finite()) {
            return Err(config_err("physics.sigma", "must be non-negative"));
        }
        in_unit("physics.error_rate", p.error_rate)?;
        if !(p.gamma > 0.0 && p.gamma.is_finite()) {
            return Err(config_err("physics.gamma", "must be positive"));
        }
        if !(p.kappa >= 0.0 && p.kappa.is_finite()) {
            return Err(config_err("physics.kappa", "must be non-negative"));
        }
        let nl = self.measured().len();
        let etas = self.etas();
        if etas.len() != nl {
            return Err(config_err("physics.eta", format!("needs {nl} entries, one per measured channel")));
        }
        for (k, &e) in etas.iter().enumerate() {
            in_unit(&format!("physics.eta[{k}]"), e)?;
        }
        let nv = self.counted().len();
        let tb = self.theta_bars();
        if tb.len() != nv {
            return Err(config_err("physics.theta_bar", format!("needs {nv} entries, one per detector")));
        }
        for (k, &t) in tb.iter().enumerate() {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(config_err(&format!("physics.theta_bar[{k}]"), "must be non-negative"));
            }
        }
        let eb = self.eta_bars();
        if eb.len() != nv || eb.iter().any(|r| r.len() != nv) {
            return Err(config_err("physics.eta_bar", format!("must be {nv} x {nv}")));
        }
        for (i, row) in eb.iter().enumerate() {
            for (j, &e) in row.iter().enumerate() {
                in_unit(&format!("physics.eta_bar[{i}][{j}]"), e)?;
            }
        }
        for j in 0..nv {
            let s: f64 = eb.iter().map(|r| r[j]).sum();
            if s > 1.0 + 1e-12 {
                return Err(config_err(&format!("physics.eta_bar[..][{j}]"), format!("column sum {s} exceeds 1")));
            }
        }
        for w in p.control.windows(2) {
            if !(w[1][0] > w[0][0]) {
                return Err(config_err("physics.control", "segment start times must increase"));
            }
        }
        for (k, seg) in p.control.iter().enumerate() {
            if !seg.iter().all(|x| x.is_finite()) {
                return Err(config_err(&format!("physics.control[{k}]"), "must be finite"));
            }
        }
        if let Some(b) = p.bloch0 {
            let r2: f64 = b.iter().map(|x| x * x).sum();
            if !(r2 <= 1.0 + 1e-12) {
                return Err(config_err("physics.bloch0", "Bloch vector must have length at most 1"));
            }
        }
        Ok(())
    }

    fn hamiltonian(&self) -> CMatrix {
        pauli(Pauli::X).scale_real(0.5 * self.physics.omega)
    }

    pub fn diffusive_model(&self) -> Result<DiffusiveModel, CliError> {
        let g = self.physics.gamma.sqrt();
        let channels = self
            .measured()
            .into_iter()
            .zip(self.etas())
            .map(|(op, eta)| DiffusiveChannel::new(pauli(op).scale_real(g), eta))
            .collect::<Result<Vec<_>, _>>()?;
        let mut m = DiffusiveModel::new(self.hamiltonian(), channels)?
            .with_sampling(self.physics.sampling)
            .with_split(self.physics.split);
        if !self.physics.control.is_empty() {
            let segs = self.physics.control.iter().map(|s| (s[0], s[1])).collect();
            m = m.with_control(pauli(Pauli::Y).scale_real(0.5), ControlSchedule::piecewise(segs)?)?;
        }
        Ok(m)
    }

    pub fn jump_model(&self) -> Result<JumpModel, CliError> {
        let k = self.physics.kappa.sqrt();
        let jumps = self.counted().into_iter().map(|op| pauli(op).scale_real(k)).collect();
        Ok(JumpModel::new(self.hamiltonian(), jumps, self.theta_bars(), self.eta_bars())?)
    }

    pub fn mixed_model(&self) -> Result<MixedModel, CliError> {
        Ok(MixedModel::new(self.diffusive_model()?, self.jump_model()?)?)
    }

    fn discrete_channel(&self) -> Result<(KrausChannel, PartitionedChannel), CliError> {
        let space = FockSpace::new(self.numerics.nmax);
        let ch = match self.scenario {
            Scenario::QndPhoton => qnd_channel(self.physics.theta, space)?,
            _ => resonant_channel(self.physics.theta, space)?,
        };
        let pc = if self.physics.error_rate > 0.0 {
            partition(ch.clone(), LeftStochasticMatrix::symmetric_error(self.physics.error_rate)?)?
        } else {
            PartitionedChannel::perfect(ch.clone())
        };
        Ok((ch, pc))
    }

    fn meter(&self) -> Result<GaussianMeter, CliError> {
        Ok(GaussianMeter::new(self.physics.alpha, self.physics.theta, self.physics.sigma)?)
    }

    pub fn initial_state(&self) -> Result<DensityOperator, CliError> {
        if self.scenario.is_photon() {
            let psi = coherent(Complex64::new(self.physics.alpha, 0.0), FockSpace::new(self.numerics.nmax))
                .map_err(|e| config_err("physics.alpha", e.to_string()))?;
            return Ok(DensityOperator::from_ket(&psi.amplitudes).map_err(Error::from)?);
        }
        let default = match self.scenario {
            Scenario::Jump | Scenario::Mixed => [0.0, 0.0, 1.0],
            _ => [1.0, 0.0, 0.0],
        };
        let [x, y, z] = self.physics.bloch0.unwrap_or(default);
        DensityOperator::from_bloch(x, y, z).map_err(|e| config_err("physics.bloch0", e.to_string()))
    }

    pub fn observables(&self) -> Vec<Observable> {
        match self.scenario {
            Scenario::QndPhoton | Scenario::ResonantPhoton => {
                let mut v = vec![Observable::PhotonNumber, Observable::Purity];
                if self.scenario == Scenario::QndPhoton {
                    v.push(Observable::Lyapunov(LyapunovKind::QndFock));
                }
                v.extend((0..=self.numerics.nmax).map(Observable::Population));
                v
            }
            _ => {
                let lyap = if self.scenario == Scenario::QubitGaussian {
                    LyapunovKind::QubitCoherence
                } else {
                    LyapunovKind::BlochZ
                };
                vec![
                    Observable::BlochX,
                    Observable::BlochY,
                    Observable::BlochZ,
                    Observable::Purity,
                    Observable::Lyapunov(lyap),
                ]
            }
        }
    }
}

/// A validated scenario with its operators built once.
enum Plan {
    Discrete(PartitionedChannel),
    Meter(GaussianMeter),
    Diffusive(DiffusiveModel),
    Mixed(MixedModel),
    Lindblad(MixedModel),
}

impl Plan {
    fn new(cfg: &ScenarioConfig) -> Result<Self, CliError> {
        cfg.validate()?;
        Ok(match cfg.scenario {
            Scenario::QndPhoton | Scenario::ResonantPhoton => Plan::Discrete(cfg.discrete_channel()?.1),
            Scenario::QubitGaussian => Plan::Meter(cfg.meter()?),
            Scenario::Diffusive => Plan::Diffusive(cfg.diffusive_model()?),
            Scenario::Jump | Scenario::Mixed => Plan::Mixed(cfg.mixed_model()?),
            Scenario::Lindblad => Plan::Lindblad(cfg.mixed_model()?),
        })
    }
}

fn run_steps(
    opts: &RecordOptions,
    nsteps: usize,
    dy_names: Vec<String>,
    count_names: Vec<String>,
    rho0: &DensityOperator,
    mut step: impl FnMut(&DensityOperator) -> Result<(Vec<f64>, Vec<u32>, DensityOperator), Error>,
) -> Result<TrajectoryRecord, Error> {
    let mut rec = Recorder::new(opts, (0, 0), 1.0, nsteps, dy_names, count_names, rho0)?;
    let mut rho = rho0.clone();
    for k in 1..=nsteps {
        let (dy, dn, next) = step(&rho)?;
        rho = next;
        rec.push(k, &dy, &dn, &rho)?;
    }
    Ok(rec.finish_at(nsteps, rho))
}

fn lindblad_record(
    model: &MixedModel,
    rho0: &DensityOperator,
    dt: f64,
    nsteps: usize,
    opts: &RecordOptions,
) -> Result<TrajectoryRecord, Error> {
    let control = &model.diffusive.control;
    let mut u = control.value(0.0);
    let mut prop = model.lindblad(0.0).propagator(dt)?;
    let mut rec = Recorder::new(opts, (0, 0), dt, nsteps, Vec::new(), Vec::new(), rho0)?;
    let mut rho = rho0.clone();
    for k in 1..=nsteps {
        let t = (k - 1) as f64 * dt;
        if control.value(t) != u {
            u = control.value(t);
            prop = model.lindblad(t).propagator(dt)?;
        }
        rho = prop.apply(&rho);
        rec.push(k, &[], &[], &rho)?;
    }
    Ok(rec.finish_at(nsteps, rho))
}

/// Simulates trajectory `traj_id` of a validated configuration.
pub fn simulate_trajectory(cfg: &ScenarioConfig, traj_id: u64) -> Result<TrajectoryRecord, CliError> {
    let plan = Plan::new(cfg)?;
    let rho0 = cfg.initial_state()?;
    let opts = RecordOptions::new(cfg.observables()).with_stride(cfg.numerics.stride);
    Ok(trajectory(cfg, &plan, &rho0, &opts, traj_id)?)
}

fn trajectory(
    cfg: &ScenarioConfig,
    plan: &Plan,
    rho0: &DensityOperator,
    opts: &RecordOptions,
    traj_id: u64,
) -> Result<TrajectoryRecord, Error> {
    let seed = cfg.numerics.seed;
    let mut rng = trajectory_rng(seed, traj_id);
    let (dt, tmax, steps) = (cfg.numerics.dt, cfg.numerics.tmax, cfg.numerics.steps);
    let mut rec = match plan {
        Plan::Discrete(pc) => run_steps(opts, steps, Vec::new(), vec!["y".into()], rho0, |rho| {
            let (y, next) = discrete_step(pc, rho, &mut rng)?;
            Ok((Vec::new(), vec![y as u32], next))
        })?,
        Plan::Meter(m) => run_steps(opts, steps, vec!["y".into()], Vec::new(), rho0, |rho| {
            let (y, next) = gaussian_meter_imperfect_step(m, rho, &mut rng)?;
            Ok((vec![y], Vec::new(), next))
        })?,
        Plan::Diffusive(m) => run_diffusive(m, rho0, dt, tmax, &mut rng, opts)?,
        Plan::Mixed(m) => run_mixed(m, rho0, dt, tmax, &mut rng, opts)?,
        Plan::Lindblad(m) => lindblad_record(m, rho0, dt, grid_steps(dt, tmax)?, opts)?,
    };
    rec.traj_id = traj_id;
    rec.seed = seed;
    Ok(rec)
}

/// `{:.16e}`: 17 significant digits, enough to round-trip any `f64`.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn trajectory_header(rec: &TrajectoryRecord) -> String {
    let mut cols = vec!["traj_id".to_string(), "step".into(), "time".into()];
    cols.extend(rec.dy_names.iter().cloned());
    cols.extend(rec.count_names.iter().cloned());
    cols.extend(rec.observable_names.iter().cloned());
    cols.join(",")
}

pub fn write_trajectory_rows<W: Write>(w: &mut W, rec: &TrajectoryRecord) -> std::io::Result<()> {
    for row in 0..rec.len() {
        let mut line = format!("{},{},{}", rec.traj_id, rec.steps[row], format_float(rec.times[row]));
        for v in &rec.dy[row] {
            line.push(',');
            line.push_str(&format_float(*v));
        }
        for c in &rec.counts[row] {
            line.push(',');
            line.push_str(&c.to_string());
        }
        for v in &rec.observables[row] {
            line.push(',');
            line.push_str(&format_float(*v));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn write_ensemble<W: Write>(w: &mut W, stats: &EnsembleStats) -> std::io::Result<()> {
    let mut header = vec!["time".to_string()];
    for n in &stats.names {
        header.push(format!("{n}_mean"));
        header.push(format!("{n}_stderr"));
    }
    writeln!(w, "{}", header.join(","))?;
    for (row, t) in stats.times.iter().enumerate() {
        let mut line = format_float(*t);
        for (m, s) in stats.mean[row].iter().zip(&stats.stderr[row]) {
            line.push(',');
            line.push_str(&format_float(*m));
            line.push(',');
            line.push_str(&format_float(*s));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct Metadata<'a> {
    rng: &'a str,
    version: &'a str,
    seed: u64,
    ntraj: u64,
    config: &'a ScenarioConfig,
}

/// What a run produced.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub ntraj: u64,
    pub stats: EnsembleStats,
}

/// Simulates every trajectory and writes the CSV and metadata files.
/// Output depends only on the configuration, never on `mode` or thread count.
pub fn run(cfg: &ScenarioConfig, mode: ExecMode) -> Result<RunSummary, CliError> {
    let plan = Plan::new(cfg)?;
    let rho0 = cfg.initial_state()?;
    let opts = RecordOptions::new(cfg.observables()).with_stride(cfg.numerics.stride);
    let ntraj = if cfg.scenario == Scenario::Lindblad { 1 } else { cfg.numerics.ntraj };

    let dir = &cfg.output.dir;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let traj_path = dir.join("trajectories.csv");
    let mut traj_out = if cfg.output.trajectories {
        Some(BufWriter::new(File::create(&traj_path).map_err(io_err(&traj_path))?))
    } else {
        None
    };

    let mut acc = EnsembleAccumulator::new();
    let mut io_error = None;
    for_each_trajectory(
        ntraj,
        mode,
        DEFAULT_BATCH,
        |k| trajectory(cfg, &plan, &rho0, &opts, k),
        |rec| {
            if let Some(w) = traj_out.as_mut() {
                let written = if rec.traj_id == 0 {
                    writeln!(w, "{}", trajectory_header(&rec)).and_then(|_| write_trajectory_rows(w, &rec))
                } else {
                    write_trajectory_rows(w, &rec)
                };
                if let Err(e) = written {
                    io_error.get_or_insert(e);
                }
            }
            acc.add(&rec)
        },
    )?;
    if let Some(e) = io_error {
        return Err(io_err(&traj_path)(e));
    }
    if let Some(mut w) = traj_out {
        w.flush().map_err(io_err(&traj_path))?;
    }
    let stats = acc.finish()?;

    let ens_path = dir.join("ensemble.csv");
    let mut w = BufWriter::new(File::create(&ens_path).map_err(io_err(&ens_path))?);
    write_ensemble(&mut w, &stats)
        .and_then(|_| w.flush())
        .map_err(io_err(&ens_path))?;

    let meta = Metadata {
        rng: ALGORITHM_ID,
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.numerics.seed,
        ntraj,
        config: cfg,
    };
    let meta_path = dir.join("metadata.toml");
    let text = toml::to_string(&meta).map_err(|e| config_err("config", e.to_string()))?;
    fs::write(&meta_path, text).map_err(io_err(&meta_path))?;

    Ok(RunSummary {
        dir: dir.clone(),
        ntraj,
        stats,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Comparison {
    AtMost,
    AtLeast,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub comparison: Comparison,
}

impl Check {
    fn at_most(name: &str, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            value,
            limit,
            comparison: Comparison::AtMost,
        }
    }

    fn at_least(name: &str, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            value,
            limit,
            comparison: Comparison::AtLeast,
        }
    }

    pub fn passed(&self) -> bool {
        match self.comparison {
            Comparison::AtMost => self.value <= self.limit,
            Comparison::AtLeast => self.value >= self.limit,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = match self.comparison {
            Comparison::AtMost => "<=",
            Comparison::AtLeast => ">=",
        };
        let tag = if self.passed() { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {:.3e} (need {op} {:.1e})", self.name, self.value, self.limit)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }

    pub fn failed(&self) -> usize {
        self.checks.iter().filter(|c| !c.passed()).count()
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        Ok(())
    }
}

fn max_over<F>(states: &[DensityOperator], mut f: F) -> Result<f64, Error>
where
    F: FnMut(&DensityOperator) -> Result<f64, Error>,
{
    let mut worst: f64 = 0.0;
    for rho in states {
        worst = worst.max(f(rho)?);
    }
    Ok(worst)
}

/// Largest distance to the Lindblad propagator after one averaged step at
/// `dt` and at `dt/2`; the ratio is about 4 for a second-order local error.
fn lindblad_order(
    states: &[DensityOperator],
    lindblad: &LindbladModel,
    dt: f64,
    average: impl Fn(&DensityOperator, f64) -> Result<CMatrix, Error>,
) -> Result<Check, Error> {
    let mut r = [0.0f64; 2];
    for (slot, h) in r.iter_mut().zip([dt, dt / 2.0]) {
        let prop = lindblad.propagator(h)?;
        *slot = max_over(states, |rho| Ok(average(rho, h)?.distance(prop.apply(rho).matrix())))?;
    }
    // a step that is exact to rounding has no measurable order
    let order = if r[0] < 1e-13 { f64::INFINITY } else { (r[0] / r[1]).log2() };
    Ok(Check::at_least("lindblad local order", order, 1.5))
}

/// Runs the invariant suite of the configured scenario on random states.
pub fn verify(cfg: &ScenarioConfig) -> Result<VerifyReport, CliError> {
    cfg.validate()?;
    let dim = if cfg.scenario.is_photon() { cfg.numerics.nmax + 1 } else { 2 };
    let mut rng = trajectory_rng(cfg.numerics.seed, u64::MAX);
    let states: Vec<DensityOperator> = (0..VERIFY_SAMPLES).map(|_| DensityOperator::random(dim, &mut rng)).collect();
    let mut checks = Vec::new();
    let theta = cfg.physics.theta;
    let dt = cfg.numerics.dt;
    match cfg.scenario {
        Scenario::QndPhoton => {
            let (ch, _) = cfg.discrete_channel()?;
            checks.push(Check::at_most("kraus completeness", ch.completeness_residual(), 1e-10));
            let spec = LyapunovSpec::qnd_fock(theta, cfg.numerics.nmax);
            let excess = max_over(&states, |rho| {
                Ok(martingale_check(&ch, rho, &spec)?.excess().unwrap_or(f64::INFINITY))
            })?;
            checks.push(Check::at_most("qnd contraction excess", excess, 1e-12));
        }
        Scenario::ResonantPhoton => {
            let (ch, _) = cfg.discrete_channel()?;
            checks.push(Check::at_most("kraus completeness", ch.completeness_residual(), 1e-10));
            let space = FockSpace::new(cfg.numerics.nmax);
            let loss = space.number_function(|n| (theta * n.sqrt()).sin().powi(2)).map_err(Error::from)?;
            let spec = LyapunovSpec::photon_number();
            let err = max_over(&states, |rho| {
                let r = martingale_check(&ch, rho, &spec)?;
                Ok((r.expected_next - (r.value - rho.expect(&loss).re)).abs())
            })?;
            checks.push(Check::at_most("photon number decrement", err, 1e-12));
        }
        Scenario::QubitGaussian => {
            let m = cfg.meter()?;
            let resid = m.kraus_integral(64).distance(&CMatrix::identity(2));
            checks.push(Check::at_most("meter kraus integral", resid, 1e-8));
            // the identity is exact for perfect detection only
            let perfect = GaussianMeter::new(m.alpha, m.theta, 0.0)?;
            let spec = LyapunovSpec::qubit_coherence(m.shift());
            let err = max_over(&states, |rho| {
                let r = martingale_check(&perfect, rho, &spec)?;
                Ok((r.expected_next - r.bound.unwrap_or(f64::NAN)).abs())
            })?;
            checks.push(Check::at_most("coherence contraction", err, 1e-8));
        }
        Scenario::Diffusive | Scenario::Mixed | Scenario::Jump | Scenario::Lindblad => {
            let model = cfg.mixed_model()?;
            if !model.diffusive.channels.is_empty() {
                let ops = build_step_operators(&model.diffusive, 0.0, dt)?;
                checks.push(Check::at_most("diffusive completeness", ops.completeness_residual(), 1e-12));
                let err = max_over(&states, |rho| {
                    Ok(ops.quadrature_average(rho, 20)?.distance(ops.unread_update(rho).matrix()))
                })?;
                checks.push(Check::at_most("averaged step equals unread update", err, 1e-12));
                checks.push(lindblad_order(&states, &model.diffusive.lindblad(0.0), dt, |rho, h| {
                    Ok(build_step_operators(&model.diffusive, 0.0, h)?.unread_update(rho).into_matrix())
                })?);
            }
            if model.jump.n_detectors() > 0 {
                let jm = MixedModel::from_jump(model.jump.clone())?;
                let rates: f64 = model.jump.shot_rates.iter().sum::<f64>() + cfg.physics.kappa;
                let scale = (1.0 + rates + cfg.physics.omega.abs()).powi(2);
                let total = max_over(&states, |rho| Ok((raw_branch_total(&model.jump, rho, dt) - 1.0).abs()))?;
                checks.push(Check::at_most("jump branch total", total, 4.0 * scale * dt * dt));
                checks.push(lindblad_order(&states, &model.jump.lindblad(), dt, |rho, h| {
                    MixedStepOperators::new(&jm, 0.0, h)?.expected_state(rho)
                })?);
            }
        }
    }
    Ok(VerifyReport { checks })
}

#[derive(Debug, Parser)]
#[command(name = "qsme", version, about = "Quantum trajectory simulator for stochastic master equations")]
pub struct Args {
    /// Scenario file (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `numerics.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `numerics.ntraj`.
    #[arg(long)]
    pub ntraj: Option<u64>,
    /// Overrides `output.dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    /// Run the invariant checks instead of simulating.
    #[arg(long)]
    pub verify: bool,
}

impl Args {
    /// Loads the configuration file and applies the command-line overrides.
    pub fn resolve(&self) -> Result<ScenarioConfig, CliError> {
        let mut cfg = ScenarioConfig::load(&self.config)?;
        if let Some(s) = self.seed {
            cfg.numerics.seed = s;
        }
        if let Some(n) = self.ntraj {
            cfg.numerics.ntraj = n;
        }
        if let Some(o) = &self.out {
            cfg.output.dir = o.clone();
        }
        Ok(cfg)
    }
}

fn execute(args: &Args) -> Result<(), CliError> {
    let cfg = args.resolve()?;
    if args.verify {
        let report = verify(&cfg)?;
        print!("{report}");
        if !report.all_passed() {
            return Err(CliError::Verify {
                failed: report.failed(),
                total: report.checks.len(),
            });
        }
        return Ok(());
    }
    let summary = with_threads(args.threads, || run(&cfg, ExecMode::Parallel))?;
    println!(
        "wrote {} trajectories of {} rows to {}",
        summary.ntraj,
        summary.stats.times.len(),
        summary.dir.display()
    );
    Ok(())
}

/// Parses `argv`, runs, and returns the process exit code.
pub fn main_with<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
