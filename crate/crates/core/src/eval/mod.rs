//! Evaluation harness: cases, method variants, synthetic noise, metrics and
//! sweeps.

mod case;
mod metrics;
mod noise;
mod run;
mod sweep;

use thiserror::Error;

pub use case::{
    case_complexity, generate_case, generate_suite, kpi_catalog, load_cases, suite_designs, write_cases, CaseDesign,
    CaseSpec, CatalogEntry, Complexity,
};
pub use metrics::{
    compute_f1, compute_instability, compute_success_rate, instability_per_code, mean, sample_variance,
};
pub use noise::{NoiseDraws, NoiseModel, NoiseProvider, Perturbation};
pub use run::{run_case, Mode, RunRecord, RunSettings, VariantConfig, RUN_FAILED};
pub use sweep::{parse_q_range, run_point, summarize, sweep, to_csv, SweepConfig, SweepRow, CSV_COLUMNS};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("need at least {needed} records, got {got}")]
    Arity { needed: usize, got: usize },
    #[error("case {case_id}: {message}")]
    Case { case_id: String, message: String },
    #[error("taxonomy: {0}")]
    Taxonomy(String),
    #[error("{0}")]
    Io(String),
    #[error("invalid sweep configuration: {0}")]
    Config(String),
}
