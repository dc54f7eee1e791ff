//! Config-driven experiment runner behind the `ml2o` binary.

pub mod check;
pub mod compare;
pub mod config;
pub mod run;
pub mod train;

use std::path::Path;

pub use check::{quick_suite, CheckReport};
pub use compare::{compare_runs, write_report, CompareMetric, CompareRow};
pub use config::{OptimizerKind, OptimizerSpec, ProblemSpec, ResumeSpec, RunConfig, TrainConfig};
pub use run::{front_file_name, read_summary, run_experiment, single_run, trace_file_name, ExperimentOutput, SummaryRow};
pub use train::{train_ml2o, TrainOutput};

use crate::error::{Error, Result};
use crate::problems::ProblemRegistry;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_CHECK: i32 = 3;

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

/// Population run that also writes one front file per seed.
pub fn front_experiment(cfg: &RunConfig, registry: &ProblemRegistry, out: &Path, threads: Option<usize>) -> Result<ExperimentOutput> {
    if cfg.population() < 2 {
        return Err(Error::Config(vec!["population: front runs need at least 2 members".into()]));
    }
    run_experiment(cfg, registry, out, threads)
}
