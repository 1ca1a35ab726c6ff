//! Creative optimization: losses, pullback, negative clusters and the trial
//! runner.

mod clusters;
mod losses;
mod oracle;
mod snapshot;
mod trial;

pub use crate::optim::{adamw_step, AdamWConfig, AdamWState};
pub use clusters::{fit_negative_cluster, fit_reduced_cluster, NegativeCluster, NegativeClusterSet, MIN_CLUSTER_SAMPLES};
pub use losses::{
    anchor_loss, anchor_node, creative_loss, dynamic_loss_select, log_pdf_node, negative_loss, negative_node, project_node,
    total_loss, Branch, LossConfig, NegSign, SeedPolicy,
};
pub use oracle::{validity_check, AlwaysPass, ConceptRegionOracle, OracleConfig, Validity, ValidityOracle};
pub use snapshot::{snapshot_stats, BaselineModel, Snapshot, SnapshotStats};
pub use trial::{
    config_hash, run_trial, CommandLogEntry, CommandSource, IterationRow, NoCommands, ScriptedCommands, Termination,
    TrialCommand, TrialContext, TrialEvent, TrialRecord,
};

#[cfg(test)]
mod tests;
