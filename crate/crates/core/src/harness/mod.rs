//! Config-driven experiment orchestration: dataset materialization, source
//! pretraining, the (model × init × dataset × seed) run matrix, persistence,
//! and report generation.

pub mod config;
pub mod matrix;
pub mod plot;
pub mod report;

pub use config::{
    merge_train, DatasetEntry, ExperimentConfig, ModelEntry, PretrainStage, ProbeKind, ProbeSpec, SchemeTemplate, CONFIG_VERSION,
};
pub use matrix::{
    distance_embeddings, domain_distance, expand_cells, materialize, network_from_snapshot, open_dataset, parallel_map,
    resolve_dataset_arg, run_dir, run_matrix, run_probe, snapshot_fingerprint, Cell, CellFailure, MatrixOutcome, ProbeResult,
    RunOptions, RunRow,
};
pub use report::{format_cell, load_runs, report, Normalization, ReportOutcome, ReportSpec};

#[cfg(test)]
mod tests;
