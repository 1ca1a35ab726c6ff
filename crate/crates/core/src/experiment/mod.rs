//! Experiment configuration, on-disk artifacts and plot-ready CSV output.

mod artifacts;
mod config;
mod csv_out;

pub use artifacts::{
    build_baseline, cmd_sample_baseline, cmd_train_prior, label_negative, load_record, read_json, record_stem, sha256_file,
    train_checkpoint, write_json, write_trial, Baseline, BaselineSummary, Checkpoint, ClusterFile, Experiment,
    StageSeeds,
};
pub use config::{ExperimentConfig, EXPERIMENT_TRIAL_LR, SCHEMA_VERSION};
pub use csv_out::{
    branch_str, series_name, validity_str, write_loss_curve, write_report, write_scatter, write_trajectory,
    LOSS_HEADER, PERCENTILE_HEADER, SCATTER_HEADER, TRAJECTORY_HEADER,
};
