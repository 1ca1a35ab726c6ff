use std::path::PathBuf;
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use serde::{Deserialize, Serialize};
use tokio::sync::watch;

use tailseek_core::creative::{
    total_loss, Branch, CommandSource, IterationRow, Snapshot, SnapshotStats, Termination, TrialCommand,
    TrialEvent, Validity,
};
use tailseek_core::experiment::{write_trial, Experiment};

use crate::geometry::{downsample, first_two, Ellipse};

/// Cap on the points of each scatter layer in a state document.
pub const MAX_SCATTER_POINTS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Idle,
    Running,
    Paused,
    Terminated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    /// Completed iterations.
    pub iteration: u64,
    pub seed: u64,
    pub branch: Branch,
    pub creative_loss: f64,
    pub anchor_loss: f64,
    pub neg_loss: f64,
    pub total_loss: f64,
    pub grad_norm: Option<f64>,
}

impl Progress {
    fn from_row(r: &IterationRow) -> Self {
        Self {
            iteration: r.iteration + 1,
            seed: r.seed,
            branch: r.branch,
            creative_loss: r.creative_loss,
            anchor_loss: r.anchor_loss,
            neg_loss: r.neg_loss,
            total_loss: total_loss(r.creative_loss, r.neg_loss, r.anchor_loss, r.branch),
            grad_norm: r.grad_norm,
        }
    }
}

/// Result of the most recent oracle evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidityEvent {
    pub iteration: u64,
    pub result: Validity,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterInfo {
    pub cluster_id: String,
    pub alpha: f64,
    /// `config` for clusters loaded with the experiment, `label` otherwise.
    pub source: String,
    pub samples: usize,
    /// 2-sigma ellipse of the cluster in the first two reduced coordinates.
    pub ellipse: Ellipse,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnapshotView {
    pub iteration: u64,
    pub stats: SnapshotStats,
    pub points: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateDocument {
    pub trial_id: String,
    pub status: Status,
    pub iteration: u64,
    pub progress: Option<Progress>,
    pub validity: Option<ValidityEvent>,
    pub baseline: Vec<[f64; 2]>,
    pub snapshot: Option<SnapshotView>,
    pub clusters: Vec<ClusterInfo>,
    pub termination: Option<Termination>,
    pub record_path: Option<PathBuf>,
    pub error: Option<String>,
}

/// Payload of the push stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventDocument {
    pub trial_id: String,
    pub status: Status,
    pub iteration: u64,
    pub progress: Option<Progress>,
    pub validity: Option<ValidityEvent>,
    pub snapshot_iteration: Option<u64>,
    pub clusters: usize,
    pub termination: Option<Termination>,
    pub terminal: bool,
}

#[derive(Default)]
struct Live {
    progress: Option<Progress>,
    validity: Option<ValidityEvent>,
    snapshot: Option<Arc<Snapshot>>,
    termination: Option<Termination>,
    record_path: Option<PathBuf>,
    error: Option<String>,
}

/// Reasons a lifecycle request is refused.
#[derive(Debug, Clone, PartialEq)]
pub enum Refusal {
    Illegal(Status),
    /// Fewer than three samples selected, or an unusable selection.
    Unprocessable(String),
}

/// One trial and its worker. All trial mutations go through `commands`.
pub struct TrialHandle {
    pub id: String,
    exp: Arc<Experiment>,
    seed: u64,
    status: Mutex<Status>,
    /// Set once a stop has been sent to the worker.
    stopping: AtomicBool,
    commands: Mutex<Option<Sender<TrialCommand>>>,
    live: Mutex<Live>,
    clusters: Mutex<Vec<ClusterInfo>>,
    baseline: Vec<[f64; 2]>,
    events: watch::Sender<EventDocument>,
    record_dir: PathBuf,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

struct ChannelCommands(Receiver<TrialCommand>);

impl CommandSource for ChannelCommands {
    fn poll(&mut self, _iteration: u64, paused: bool) -> Vec<TrialCommand> {
        let mut out = Vec::new();
        if paused {
            match self.0.recv() {
                Ok(c) => out.push(c),
                Err(_) => return out,
            }
        }
        out.extend(self.0.try_iter());
        out
    }
}

impl TrialHandle {
    pub fn new(id: String, exp: Experiment, record_dir: PathBuf) -> tailseek_core::Result<Arc<Self>> {
        let seed = exp.config.master_seed;
        let reduced = exp.baseline.reduced()?;
        let points: Vec<[f64; 2]> = reduced.iter().map(|r| first_two(r)).collect();
        let initial = exp.initial_clusters()?;
        let clusters = initial
            .iter()
            .enumerate()
            .map(|(i, c)| ClusterInfo {
                cluster_id: format!("c-{i}"),
                alpha: c.strength,
                source: "config".into(),
                samples: c.density.fit_size(),
                ellipse: Ellipse::two_sigma(&c.density),
            })
            .collect();
        let first = EventDocument {
            trial_id: id.clone(),
            status: Status::Idle,
            iteration: 0,
            progress: None,
            validity: None,
            snapshot_iteration: None,
            clusters: initial.len(),
            termination: None,
            terminal: false,
        };
        Ok(Arc::new(Self {
            id,
            exp: Arc::new(exp),
            seed,
            status: Mutex::new(Status::Idle),
            stopping: AtomicBool::new(false),
            commands: Mutex::new(None),
            live: Mutex::new(Live::default()),
            clusters: Mutex::new(clusters),
            baseline: downsample(&points, MAX_SCATTER_POINTS),
            events: watch::channel(first).0,
            record_dir,
        }))
    }

    pub fn status(&self) -> Status {
        *lock(&self.status)
    }

    pub fn subscribe(&self) -> watch::Receiver<EventDocument> {
        self.events.subscribe()
    }

    fn event(&self) -> EventDocument {
        let status = self.status();
        let live = lock(&self.live);
        EventDocument {
            trial_id: self.id.clone(),
            status,
            iteration: live.progress.map_or(0, |p| p.iteration),
            progress: live.progress,
            validity: live.validity,
            snapshot_iteration: live.snapshot.as_ref().map(|s| s.iteration),
            clusters: lock(&self.clusters).len(),
            termination: live.termination,
            terminal: status == Status::Terminated,
        }
    }

    fn publish(&self) {
        self.events.send_replace(self.event());
    }

    pub fn state(&self) -> StateDocument {
        let status = self.status();
        let live = lock(&self.live);
        StateDocument {
            trial_id: self.id.clone(),
            status,
            iteration: live.progress.map_or(0, |p| p.iteration),
            progress: live.progress,
            validity: live.validity,
            baseline: self.baseline.clone(),
            snapshot: live.snapshot.as_ref().map(|s| {
                let pts: Vec<[f64; 2]> = s.reduced_rows().iter().map(|r| first_two(r)).collect();
                SnapshotView { iteration: s.iteration, stats: s.stats, points: downsample(&pts, MAX_SCATTER_POINTS) }
            }),
            clusters: lock(&self.clusters).clone(),
            termination: live.termination,
            record_path: live.record_path.clone(),
            error: live.error.clone(),
        }
    }

    pub fn start(self: &Arc<Self>) -> Result<Status, Refusal> {
        let mut status = lock(&self.status);
        if *status != Status::Idle {
            return Err(Refusal::Illegal(*status));
        }
        let (tx, rx) = mpsc::channel();
        *lock(&self.commands) = Some(tx);
        *status = Status::Running;
        drop(status);
        let me = Arc::clone(self);
        std::thread::spawn(move || me.work(rx));
        self.publish();
        Ok(Status::Running)
    }

    fn send(&self, c: TrialCommand) -> bool {
        !self.stopping.load(Ordering::SeqCst)
            && lock(&self.commands).as_ref().is_some_and(|tx| tx.send(c).is_ok())
    }

    pub fn pause(&self) -> Result<Status, Refusal> {
        self.transition(Status::Running, Status::Paused, TrialCommand::Pause)
    }

    pub fn resume(&self) -> Result<Status, Refusal> {
        self.transition(Status::Paused, Status::Running, TrialCommand::Resume)
    }

    fn transition(&self, from: Status, to: Status, c: TrialCommand) -> Result<Status, Refusal> {
        let mut status = lock(&self.status);
        if *status != from || !self.send(c) {
            return Err(Refusal::Illegal(*status));
        }
        *status = to;
        drop(status);
        self.publish();
        Ok(to)
    }

    /// An idle trial terminates at once; a live one is told to stop and
    /// flushes its record with `stopped_by_user`.
    pub fn stop(&self) -> Result<Status, Refusal> {
        let mut status = lock(&self.status);
        match *status {
            Status::Idle => {
                lock(&self.live).termination = Some(Termination::StoppedByUser);
            }
            Status::Running | Status::Paused => {
                if !self.send(TrialCommand::Stop) {
                    return Err(Refusal::Illegal(Status::Terminated));
                }
                self.stopping.store(true, Ordering::SeqCst);
                return Ok(*status);
            }
            Status::Terminated => return Err(Refusal::Illegal(Status::Terminated)),
        }
        *status = Status::Terminated;
        drop(status);
        self.publish();
        Ok(Status::Terminated)
    }

    /// Fits a cluster to the chosen samples of the latest snapshot and
    /// queues it for the next iteration boundary.
    pub fn add_cluster(&self, selection: Selection, alpha: Option<f64>) -> Result<ClusterInfo, Refusal> {
        let status = lock(&self.status);
        if !matches!(*status, Status::Running | Status::Paused) {
            return Err(Refusal::Illegal(*status));
        }
        let alpha = alpha.unwrap_or(self.exp.config.trial.default_neg_strength);
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(Refusal::Unprocessable(format!("alpha must be a nonnegative number, got {alpha}")));
        }
        let snapshot = lock(&self.live).snapshot.clone().ok_or_else(|| Refusal::Unprocessable("no snapshot yet".into()))?;
        let rows = snapshot.reduced_rows();
        let picked: Vec<Vec<f64>> = match selection {
            Selection::SampleIds(ids) => ids
                .iter()
                .map(|&i| rows.get(i).cloned().ok_or_else(|| Refusal::Unprocessable(format!("no sample {i} in snapshot"))))
                .collect::<Result<_, _>>()?,
            Selection::Ellipse(e) => {
                if !e.is_valid() {
                    return Err(Refusal::Unprocessable("ellipse axes must be positive and finite".into()));
                }
                rows.iter().filter(|r| e.contains(first_two(r)[0], first_two(r)[1])).cloned().collect()
            }
        };
        let cluster = tailseek_core::creative::fit_reduced_cluster(&picked, alpha)
            .map_err(|e| Refusal::Unprocessable(e.to_string()))?;
        let info = {
            let mut clusters = lock(&self.clusters);
            let info = ClusterInfo {
                cluster_id: format!("c-{}", clusters.len()),
                alpha,
                source: "label".into(),
                samples: picked.len(),
                ellipse: Ellipse::two_sigma(&cluster.density),
            };
            if !self.send(TrialCommand::AddNegativeCluster(cluster)) {
                return Err(Refusal::Illegal(Status::Terminated));
            }
            clusters.push(info.clone());
            info
        };
        drop(status);
        self.publish();
        Ok(info)
    }

    fn work(self: Arc<Self>, rx: Receiver<TrialCommand>) {
        let exp = Arc::clone(&self.exp);
        let outcome = (|| {
            let space = exp.initial_space(self.seed)?;
            let clusters = exp.initial_clusters()?;
            let mut observer = |e: TrialEvent<'_>| {
                match e {
                    TrialEvent::Row(r) => {
                        let mut live = lock(&self.live);
                        live.progress = Some(Progress::from_row(r));
                        if r.validity != Validity::Skipped {
                            live.validity = Some(ValidityEvent { iteration: r.iteration, result: r.validity });
                        }
                    }
                    TrialEvent::Snapshot(s) => lock(&self.live).snapshot = Some(Arc::new(s.clone())),
                    TrialEvent::ClustersChanged(_) => {}
                }
                self.publish();
            };
            let record = exp.run(self.seed, space, clusters, &mut ChannelCommands(rx), &mut observer)?;
            let path = write_trial(&self.record_dir, &record)?;
            Ok::<_, tailseek_core::Error>((record.termination, path))
        })();
        {
            let mut status = lock(&self.status);
            let mut live = lock(&self.live);
            match outcome {
                Ok((t, path)) => {
                    live.termination = Some(t);
                    live.record_path = Some(path);
                }
                Err(e) => live.error = Some(e.to_string()),
            }
            *status = Status::Terminated;
        }
        *lock(&self.commands) = None;
        self.publish();
    }
}

/// Samples chosen for a negative cluster.
#[derive(Debug, Clone)]
pub enum Selection {
    SampleIds(Vec<usize>),
    Ellipse(Ellipse),
}
