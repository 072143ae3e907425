//! Trajectory records: time grid, measurement record and observable traces.

use crate::analysis::{bloch_vector, purity, LyapunovKind};
use crate::error::{Error, Result};
use crate::systems::DensityOperator;

/// Scalar functionals recorded along a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Observable {
    BlochX,
    BlochY,
    BlochZ,
    Purity,
    PhotonNumber,
    Population(usize),
    Lyapunov(LyapunovKind),
}

impl Observable {
    pub fn name(&self) -> String {
        match self {
            Observable::BlochX => "bloch_x".into(),
            Observable::BlochY => "bloch_y".into(),
            Observable::BlochZ => "bloch_z".into(),
            Observable::Purity => "purity".into(),
            Observable::PhotonNumber => "photon_number".into(),
            Observable::Population(n) => format!("pop_{n}"),
            Observable::Lyapunov(k) => format!("lyap_{}", k.name()),
        }
    }

    pub fn evaluate(&self, rho: &DensityOperator) -> f64 {
        match self {
            Observable::BlochX => bloch_vector(rho).0,
            Observable::BlochY => bloch_vector(rho).1,
            Observable::BlochZ => bloch_vector(rho).2,
            Observable::Purity => purity(rho),
            Observable::PhotonNumber => LyapunovKind::PhotonNumber.evaluate(rho),
            Observable::Population(n) => rho.population(*n),
            Observable::Lyapunov(k) => k.evaluate(rho),
        }
    }

    /// Checks the observable makes sense for a state of dimension `dim`.
    pub fn check_dim(&self, dim: usize) -> Result<()> {
        let ok = match self {
            Observable::BlochX | Observable::BlochY | Observable::BlochZ => dim == 2,
            Observable::Lyapunov(LyapunovKind::BlochZ | LyapunovKind::QubitCoherence) => dim == 2,
            Observable::Population(n) => *n < dim,
            _ => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "observable {} is not defined in dimension {dim}",
                self.name()
            )))
        }
    }
}

/// What to keep while integrating a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordOptions {
    pub observables: Vec<Observable>,
    /// Emit one row every `stride` steps; measurement columns are summed over the window.
    pub stride: usize,
    /// Keep the density operator at every emitted row.
    pub keep_states: bool,
}

impl Default for RecordOptions {
    fn default() -> Self {
        Self {
            observables: Vec::new(),
            stride: 1,
            keep_states: false,
        }
    }
}

impl RecordOptions {
    pub fn new(observables: Vec<Observable>) -> Self {
        Self {
            observables,
            ..Self::default()
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_states(mut self) -> Self {
        self.keep_states = true;
        self
    }
}

/// One trajectory. Row 0 is the initial state with an all-zero measurement;
/// row `k` holds the measurements accumulated since row `k − 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub traj_id: u64,
    pub seed: u64,
    pub steps: Vec<usize>,
    pub times: Vec<f64>,
    pub dy_names: Vec<String>,
    /// `dy[row][channel]`.
    pub dy: Vec<Vec<f64>>,
    pub count_names: Vec<String>,
    /// `counts[row][detector]`; discrete outcomes are stored as their index.
    pub counts: Vec<Vec<u32>>,
    pub observable_names: Vec<String>,
    /// `observables[row][k]`.
    pub observables: Vec<Vec<f64>>,
    pub states: Option<Vec<DensityOperator>>,
    pub final_state: Option<DensityOperator>,
}

pub type DiffusiveRecord = TrajectoryRecord;
pub type JumpRecord = TrajectoryRecord;

impl TrajectoryRecord {
    /// A record with observables only, mainly for aggregation tests.
    pub fn from_observables(times: Vec<f64>, names: Vec<String>, rows: Vec<Vec<f64>>) -> Self {
        let n = times.len();
        Self {
            traj_id: 0,
            seed: 0,
            steps: (0..n).collect(),
            times,
            dy_names: Vec::new(),
            dy: vec![Vec::new(); n],
            count_names: Vec::new(),
            counts: vec![Vec::new(); n],
            observable_names: names,
            observables: rows,
            states: None,
            final_state: None,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn observable(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.observable_names.iter().position(|n| n == name)?;
        Some(self.observables.iter().map(|r| r[c]).collect())
    }

    pub fn total_counts(&self) -> Vec<u32> {
        let mut tot = vec![0; self.count_names.len()];
        for row in &self.counts {
            for (t, c) in tot.iter_mut().zip(row) {
                *t += c;
            }
        }
        tot
    }
}

/// Builds a [`TrajectoryRecord`] step by step, handling the stride windows.
#[derive(Debug)]
pub(crate) struct Recorder<'a> {
    opts: &'a RecordOptions,
    nsteps: usize,
    dt: f64,
    rec: TrajectoryRecord,
    dy_acc: Vec<f64>,
    count_acc: Vec<u32>,
}

impl<'a> Recorder<'a> {
    pub fn new(
        opts: &'a RecordOptions,
        ids: (u64, u64),
        dt: f64,
        nsteps: usize,
        dy_names: Vec<String>,
        count_names: Vec<String>,
        rho0: &DensityOperator,
    ) -> Result<Self> {
        if opts.stride == 0 {
            return Err(Error::InvalidParameter("record stride must be at least 1".into()));
        }
        for o in &opts.observables {
            o.check_dim(rho0.dim())?;
        }
        let rows = nsteps / opts.stride + 2;
        let (seed, traj_id) = ids;
        let rec = TrajectoryRecord {
            traj_id,
            seed,
            steps: Vec::with_capacity(rows),
            times: Vec::with_capacity(rows),
            dy_names,
            dy: Vec::with_capacity(rows),
            count_names,
            counts: Vec::with_capacity(rows),
            observable_names: opts.observables.iter().map(Observable::name).collect(),
            observables: Vec::with_capacity(rows),
            states: opts.keep_states.then(|| Vec::with_capacity(rows)),
            final_state: None,
        };
        let mut r = Self {
            opts,
            nsteps,
            dt,
            dy_acc: vec![0.0; rec.dy_names.len()],
            count_acc: vec![0; rec.count_names.len()],
            rec,
        };
        r.emit(0, rho0);
        Ok(r)
    }

    fn emit(&mut self, step: usize, rho: &DensityOperator) {
        self.rec.steps.push(step);
        self.rec.times.push(step as f64 * self.dt);
        self.rec.dy.push(std::mem::replace(&mut self.dy_acc, vec![0.0; self.rec.dy_names.len()]));
        self.rec
            .counts
            .push(std::mem::replace(&mut self.count_acc, vec![0; self.rec.count_names.len()]));
        self.rec
            .observables
            .push(self.opts.observables.iter().map(|o| o.evaluate(rho)).collect());
        if let Some(s) = &mut self.rec.states {
            s.push(rho.clone());
        }
    }

    /// Registers step `step` (1-based) with its measurement and post-step state.
    pub fn push(&mut self, step: usize, dy: &[f64], counts: &[u32], rho: &DensityOperator) -> Result<()> {
        for (a, v) in self.dy_acc.iter_mut().zip(dy) {
            *a += v;
        }
        for (a, v) in self.count_acc.iter_mut().zip(counts) {
            *a += v;
        }
        if dy.iter().any(|v| !v.is_finite()) {
            return Err(Error::StepTooLarge {
                reason: format!("non-finite measurement at step {step}"),
                suggested_dt: self.dt / 10.0,
            });
        }
        if step.is_multiple_of(self.opts.stride) || step == self.nsteps {
            self.emit(step, rho);
        }
        Ok(())
    }

    /// Ends the record early at `step` (e.g. on convergence), emitting a final row.
    pub fn finish_at(mut self, step: usize, rho: DensityOperator) -> TrajectoryRecord {
        if self.rec.steps.last() != Some(&step) {
            self.emit(step, &rho);
        }
        self.rec.final_state = Some(rho);
        self.rec
    }
}

/// Number of grid steps for `(dt, tmax)`; `tmax` must be a multiple of `dt` up to rounding.
pub fn grid_steps(dt: f64, tmax: f64) -> Result<usize> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("dt = {dt} must be positive")));
    }
    if !(tmax >= 0.0 && tmax.is_finite()) {
        return Err(Error::InvalidParameter(format!("tmax = {tmax} must be non-negative")));
    }
    let n = (tmax / dt).round();
    if (n * dt - tmax).abs() > 1e-9 * tmax.max(dt) {
        return Err(Error::InvalidParameter(format!(
            "tmax = {tmax} is not a whole number of steps dt = {dt}"
        )));
    }
    Ok(n as usize)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stride_sums_measurements_and_keeps_last_row() {
        let opts = RecordOptions::new(vec![Observable::BlochZ]).with_stride(3);
        let rho = DensityOperator::qubit_g();
        let mut r = Recorder::new(&opts, (7, 1), 0.1, 7, vec!["dy".into()], vec!["dn".into()], &rho).unwrap();
        for k in 1..=7 {
            r.push(k, &[1.0], &[1], &rho).unwrap();
        }
        let rec = r.finish_at(7, rho);
        assert_eq!(rec.steps, vec![0, 3, 6, 7]);
        assert_eq!(rec.dy, vec![vec![0.0], vec![3.0], vec![3.0], vec![1.0]]);
        assert_eq!(rec.total_counts(), vec![7]);
        assert!((rec.times[3] - 0.7).abs() < 1e-15);
        assert_eq!(rec.observable("bloch_z").unwrap(), vec![-1.0; 4]);
    }

    #[test]
    fn grid_validation() {
        assert_eq!(grid_steps(1e-3, 1.0).unwrap(), 1000);
        assert!(grid_steps(0.3, 1.0).is_err());
        assert!(grid_steps(0.0, 1.0).is_err());
    }

    #[test]
    fn observable_dimension_check() {
        assert!(Observable::BlochZ.check_dim(3).is_err());
        assert!(Observable::Population(3).check_dim(3).is_err());
        assert!(Observable::PhotonNumber.check_dim(16).is_ok());
    }
}
