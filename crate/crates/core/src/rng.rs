//! Per-trajectory random streams.
//!
//! Each trajectory draws from ChaCha12 keyed by the run seed with the stream
//! word set to the trajectory id. ChaCha is a counter-mode generator, so the
//! stream of trajectory `k` does not depend on how many trajectories ran before
//! it or on which worker thread executes it.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Identifier written into output metadata.
pub const ALGORITHM_ID: &str = "chacha12-seed_from_u64-stream(traj_id)";

pub type TrajectoryRng = ChaCha12Rng;

pub fn trajectory_rng(seed: u64, traj_id: u64) -> TrajectoryRng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(traj_id);
    rng
}
