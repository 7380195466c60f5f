pub mod experiment;
pub mod grid;
pub mod metrics;

pub use experiment::{run_experiment, EvaluationReport, ExperimentSpec, Mode};
pub use grid::{grid_search, GridResult};
pub use metrics::mae;
