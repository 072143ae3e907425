//! Simulation of quantum trajectories from discrete-time and continuous-time
//! stochastic master equations.
//!
//! * [`linalg`], [`systems`]: dense complex matrices, Fock spaces, qubit and
//!   photon operators, interaction propagators.
//! * [`channels`]: Kraus channels, imperfect detectors, Bayes updates,
//!   Gaussian meters.
//! * [`diffusive`], [`jump`]: continuous-time SMEs integrated with a
//!   positivity-preserving Kraus-map scheme.
//! * [`analysis`]: Lindblad reference, Lyapunov/martingale checks, ensemble
//!   statistics and metrics.
//! * [`ensemble`]: sequential or rayon-parallel trajectory batches.
//! * [`cli`]: configuration files, batch runs and CSV export.

// NaN must fail these range checks, so they stay written as `!(x > 0.0)`
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod channels;
pub mod cli;
pub mod diffusive;
pub mod ensemble;
pub mod error;
pub mod jump;
pub mod linalg;
pub mod quadrature;
pub mod record;
pub mod rng;
pub mod systems;

pub use error::{Error, Result};
pub use linalg::CMatrix;
pub use systems::{DensityOperator, FockSpace};
