use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::clusters::{NegativeCluster, NegativeClusterSet};
use super::losses::{anchor_node, dynamic_loss_select, log_pdf_node, negative_node, project_node, Branch, LossConfig, SeedPolicy};
use super::oracle::{validity_check, Validity, ValidityOracle};
use super::snapshot::{build_snapshot, BaselineModel, Snapshot};
use crate::autodiff::{Gradients, NodeId};
use crate::error::{Error, Result};
use crate::optim::{adamw_step, AdamWState};
use crate::prior::{sample_prior_batch, ConceptualSpace, DenoiserNet, NoiseSchedule, SamplerGraph};
use crate::rng::{derive_seed, substream, streams};
use crate::tensor::FORMAT_VERSION;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Completed,
    OracleRejected,
    Diverged,
    StoppedByUser,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Completed => "completed",
            Self::OracleRejected => "oracle_rejected",
            Self::Diverged => "diverged",
            Self::StoppedByUser => "stopped_by_user",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRow {
    pub iteration: u64,
    pub seed: u64,
    pub branch: Branch,
    pub creative_loss: f64,
    pub anchor_loss: f64,
    pub neg_loss: f64,
    /// Norm after clipping; absent when no update was applied.
    pub grad_norm: Option<f64>,
    pub validity: Validity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type", content = "cluster")]
pub enum TrialCommand {
    Stop,
    Pause,
    Resume,
    AddNegativeCluster(NegativeCluster),
}

/// A command together with the iteration boundary at which it took effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandLogEntry {
    pub iteration: u64,
    pub command: TrialCommand,
}

/// Source of external commands, polled once per iteration boundary.
pub trait CommandSource {
    /// Commands to apply before `iteration`. While `paused`, a live source
    /// should block until at least one command is available; an empty
    /// answer while paused ends the trial.
    fn poll(&mut self, iteration: u64, paused: bool) -> Vec<TrialCommand>;
}

/// No external commands.
#[derive(Debug, Default)]
pub struct NoCommands;

impl CommandSource for NoCommands {
    fn poll(&mut self, _iteration: u64, _paused: bool) -> Vec<TrialCommand> {
        Vec::new()
    }
}

/// Replays a recorded command log.
#[derive(Debug, Default)]
pub struct ScriptedCommands {
    pending: VecDeque<CommandLogEntry>,
}

impl ScriptedCommands {
    pub fn new(log: Vec<CommandLogEntry>) -> Self {
        Self { pending: log.into() }
    }
}

impl CommandSource for ScriptedCommands {
    fn poll(&mut self, iteration: u64, _paused: bool) -> Vec<TrialCommand> {
        let mut out = Vec::new();
        while self.pending.front().is_some_and(|e| e.iteration <= iteration) {
            out.push(self.pending.pop_front().expect("checked").command);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub format_version: u32,
    pub kind: String,
    pub config_hash: String,
    pub seed: u64,
    pub config: LossConfig,
    pub oracle: String,
    pub sample_steps: usize,
    /// Config hash of the record this trial continued from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    pub initial_space: ConceptualSpace,
    pub initial_clusters: NegativeClusterSet,
    pub rows: Vec<IterationRow>,
    pub snapshots: Vec<Snapshot>,
    pub termination: Termination,
    pub final_space: ConceptualSpace,
    pub negative_clusters: NegativeClusterSet,
    pub command_log: Vec<CommandLogEntry>,
}

impl TrialRecord {
    pub fn final_snapshot(&self) -> Option<&Snapshot> {
        self.snapshots.last()
    }
}

/// Progress notifications emitted while a trial runs.
#[derive(Debug)]
pub enum TrialEvent<'a> {
    Row(&'a IterationRow),
    Snapshot(&'a Snapshot),
    ClustersChanged(&'a NegativeClusterSet),
}

/// Fixed inputs of a trial.
pub struct TrialContext<'a> {
    pub net: &'a DenoiserNet,
    pub schedule: &'a NoiseSchedule,
    pub baseline: &'a BaselineModel,
    /// Unit anchor direction.
    pub anchor: &'a [f64],
    pub oracle: &'a dyn ValidityOracle,
    pub sample_steps: usize,
}

struct TrialGraph {
    sampler: SamplerGraph,
    creative: NodeId,
    anchor: NodeId,
    negative: NodeId,
    creative_total: NodeId,
}

impl TrialGraph {
    fn build(ctx: &TrialContext<'_>, space: &ConceptualSpace, clusters: &NegativeClusterSet, cfg: &LossConfig) -> Result<Self> {
        let mut sampler = SamplerGraph::new(ctx.net, ctx.schedule, space, ctx.sample_steps)?;
        let g = &mut sampler.graph;
        let e = sampler.output;
        let reduced = project_node(g, &ctx.baseline.pca, e)?;
        let creative = log_pdf_node(g, &ctx.baseline.density, reduced)?;
        let anchor = anchor_node(g, e, ctx.anchor)?;
        let negative = negative_node(g, clusters, reduced, cfg.neg_sign)?;
        let creative_total = g.add(creative, negative)?;
        Ok(Self { sampler, creative, anchor, negative, creative_total })
    }
}

/// Hash of everything that determines a trial besides the command log.
pub fn config_hash(
    cfg: &LossConfig,
    seed: u64,
    oracle: &str,
    sample_steps: usize,
    space: &ConceptualSpace,
    clusters: &NegativeClusterSet,
) -> Result<String> {
    let doc = serde_json::json!({
        "config": cfg,
        "seed": seed,
        "oracle": oracle,
        "sample_steps": sample_steps,
        "space": space,
        "clusters": clusters,
    });
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(&doc)?)))
}

fn snapshot(ctx: &TrialContext<'_>, space: &ConceptualSpace, cfg: &LossConfig, seed: u64, iteration: u64) -> Result<Snapshot> {
    let samples = sample_prior_batch(
        ctx.net,
        ctx.schedule,
        space,
        ctx.sample_steps,
        cfg.snapshot_size,
        substream(seed, streams::SNAPSHOTS),
    )?;
    build_snapshot(iteration, samples, ctx.baseline)
}

/// Runs creative optimization of `space` and returns the full record.
///
/// Each iteration samples one embedding from the current seed, evaluates
/// all three losses, and applies one AdamW step on the selected branch's
/// loss only. Setup errors are returned; failures during the loop end the
/// trial with a termination reason instead.
pub fn run_trial(
    ctx: &TrialContext<'_>,
    space: ConceptualSpace,
    clusters: NegativeClusterSet,
    cfg: &LossConfig,
    seed: u64,
    commands: &mut dyn CommandSource,
    observer: &mut dyn FnMut(TrialEvent<'_>),
) -> Result<TrialRecord> {
    cfg.validate()?;
    if ctx.anchor.len() != ctx.net.dims.dim {
        return Err(Error::DimensionMismatch { expected: ctx.net.dims.dim, got: ctx.anchor.len() });
    }
    let hash = config_hash(cfg, seed, ctx.oracle.id(), ctx.sample_steps, &space, &clusters)?;
    let initial_space = space.clone();
    let initial_clusters = clusters.clone();
    let mut space = space;
    let mut clusters = clusters;
    let mut tg = TrialGraph::build(ctx, &space, &clusters, cfg)?;
    let ids = tg.sampler.params.trainable_ids();
    let mut state = AdamWState::new();

    let stream = substream(seed, streams::TRIAL);
    let mut counter = 0u64;
    let mut current_seed = derive_seed(stream, counter);
    let mut rows = Vec::new();
    let mut snapshots: Vec<Snapshot> = Vec::new();
    let mut log = Vec::new();
    let mut termination = Termination::Completed;
    let mut consecutive_anchor = 0u64;
    let mut dirty = false;
    let mut paused = false;
    let mut iteration = 0u64;

    'outer: while iteration < cfg.max_steps {
        loop {
            let cmds = commands.poll(iteration, paused);
            if paused && cmds.is_empty() {
                termination = Termination::StoppedByUser;
                break 'outer;
            }
            let mut stop = false;
            for c in cmds {
                log.push(CommandLogEntry { iteration, command: c.clone() });
                match c {
                    TrialCommand::Stop => stop = true,
                    TrialCommand::Pause => paused = true,
                    TrialCommand::Resume => paused = false,
                    TrialCommand::AddNegativeCluster(cluster) => {
                        space.read_from(&tg.sampler.params)?;
                        clusters.push(cluster)?;
                        tg = TrialGraph::build(ctx, &space, &clusters, cfg)?;
                        observer(TrialEvent::ClustersChanged(&clusters));
                    }
                }
            }
            if stop {
                termination = Termination::StoppedByUser;
                break 'outer;
            }
            if !paused {
                break;
            }
        }

        if iteration % cfg.snapshot_interval == 0 {
            space.read_from(&tg.sampler.params)?;
            match snapshot(ctx, &space, cfg, seed, iteration) {
                Ok(s) => {
                    snapshots.push(s);
                    observer(TrialEvent::Snapshot(snapshots.last().expect("pushed")));
                    dirty = false;
                }
                Err(_) => {
                    termination = Termination::Diverged;
                    break;
                }
            }
        }

        let sampled = tg.sampler.run(current_seed);
        let values = sampled.and_then(|e| {
            let g = &tg.sampler.graph;
            Ok((e, g.scalar(tg.creative)?, g.scalar(tg.anchor)?, g.scalar(tg.negative)?))
        });
        let (e, creative, anchor, negative) = match values {
            Ok(v) if v.1.is_finite() && v.2.is_finite() && v.3.is_finite() => v,
            _ => {
                termination = Termination::Diverged;
                break;
            }
        };
        let (branch, policy) = if cfg.anchor_enabled {
            dynamic_loss_select(anchor, cfg.anchor_threshold)
        } else {
            (Branch::Creative, SeedPolicy::NewSeed)
        };
        let mut row = IterationRow {
            iteration,
            seed: current_seed,
            branch,
            creative_loss: creative,
            anchor_loss: anchor,
            neg_loss: negative,
            grad_norm: None,
            validity: validity_check(ctx.oracle, &e, iteration, cfg.checker_interval),
        };
        if row.validity == Validity::Fail {
            rows.push(row);
            observer(TrialEvent::Row(rows.last().expect("pushed")));
            termination = Termination::OracleRejected;
            break;
        }
        if branch == Branch::Anchor {
            consecutive_anchor += 1;
            if consecutive_anchor > cfg.pullback_cap {
                termination = Termination::Diverged;
                break;
            }
        } else {
            consecutive_anchor = 0;
        }

        let target = match branch {
            Branch::Creative => tg.creative_total,
            Branch::Anchor => tg.anchor,
        };
        let mut grads: Gradients = match tg.sampler.graph.backward_scalar(target, &tg.sampler.params) {
            Ok(g) if g.is_finite(&ids) => g,
            _ => {
                termination = Termination::Diverged;
                break;
            }
        };
        let norm = grads.clip_norm(&ids, cfg.grad_clip_norm);
        if adamw_step(&mut tg.sampler.params, &grads, &mut state, &cfg.optimizer).is_err() {
            termination = Termination::Diverged;
            break;
        }
        row.grad_norm = Some(norm);
        rows.push(row);
        observer(TrialEvent::Row(rows.last().expect("pushed")));
        dirty = true;
        if policy == SeedPolicy::NewSeed {
            counter += 1;
            current_seed = derive_seed(stream, counter);
        }
        iteration += 1;
    }

    space.read_from(&tg.sampler.params)?;
    if dirty {
        if let Ok(s) = snapshot(ctx, &space, cfg, seed, iteration) {
            snapshots.push(s);
            observer(TrialEvent::Snapshot(snapshots.last().expect("pushed")));
        } else if termination == Termination::Completed {
            termination = Termination::Diverged;
        }
    }
    Ok(TrialRecord {
        format_version: FORMAT_VERSION,
        kind: "trial_record".into(),
        config_hash: hash,
        seed,
        config: cfg.clone(),
        oracle: ctx.oracle.id().to_string(),
        sample_steps: ctx.sample_steps,
        parent: None,
        initial_space,
        initial_clusters,
        rows,
        snapshots,
        termination,
        final_space: space,
        negative_clusters: clusters,
        command_log: log,
    })
}
