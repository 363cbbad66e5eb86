//! Monte Carlo evaluation: scenarios, trial orchestration, statistics and
//! output files.

mod harness;
mod output;
mod scenario;
mod stats;

pub use harness::{bound_table, run_monte_carlo, stream, tdoa_gdop, BoundRow, DropBounds, RunOptions, TrialRecord};
pub use output::{cdf_csv, emit_outputs, manifest_json, trials_csv, TRIALS_HEADER};
pub use scenario::{
    load_scenario, parse_scenario, CdlConfig, ChannelMode, CoopConfig, GeometryTag, Propagation, Rect, Scenario,
};
pub use stats::{median, percentile, summarize_solver, BoundOverlay, RunSummary, SolverSummary};
