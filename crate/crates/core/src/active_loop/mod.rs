//! The active-learning loop: selection under a reading budget, labeling, and
//! per-cycle retraining from the source model.

mod cycle;
mod grid;
mod labels;
mod oracle;
mod report;
mod select;

pub use cycle::{ActiveLearner, CycleConfig, CycleReport, RunResult, RunState};
pub use grid::{aggregate, enumerate_runs, run_grid, run_grid_with, AggregateRow, GridSpec, MeanVar};
pub use labels::{Label, LabeledPool, PoolEntry, Verdict};
pub use oracle::{oracle_label, ORACLE_ID};
pub use report::{
    read_timings_csv, timing_records, write_aggregate_csv, write_cycles_csv, write_timings_csv, RunManifest,
    CYCLE_COLUMNS, MANIFEST_FORMAT, MANIFEST_VERSION,
};
pub use select::{ranking_order, select_with_read_budget, ReadBudget};
