//! Monte-Carlo experiment drivers, metrics and CSV output.
//!
//! Every trial draws its randomness from ChaCha streams keyed by the master
//! seed, the trial index and a lane, so results do not depend on how trials
//! are scheduled across threads.

mod config;
mod experiments;
mod metrics;

pub use config::{EstimatorKind, ExperimentSpec, SolverSettings};
pub use experiments::{
    paths_with_separation, run_convergence_trace, run_data_aided_experiment, run_pilot_experiment,
    run_rank_experiment, write_convergence_csv, write_rank_csv, ConvergenceRow, RankPoint,
};
pub use metrics::{
    nmse_db, nmse_ratio, ratio_to_db, ser, sort_records, summarize, write_csv, MetricRecord, Summary, CSV_HEADER,
    NMSE_FLOOR_DB,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator for `lane` of trial `trial` under master seed `seed`.
pub fn trial_rng(seed: u64, trial: usize, lane: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((trial as u64) << 20) | lane);
    rng
}
