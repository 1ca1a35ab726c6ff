use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use super::csv_out::{write_loss_curve, write_trajectory};
use crate::creative::{
    fit_reduced_cluster, run_trial, BaselineModel, CommandSource, NegativeCluster, NegativeClusterSet, TrialContext,
    TrialEvent, TrialRecord, ValidityOracle,
};
use crate::density::{EmbeddingSample, GaussianDensity, PcaModel};
use crate::error::{Error, Result};
use crate::prior::{
    make_concept, sample_prior_batch, train_prior, ConceptDataset, ConceptSpec, ConceptualSpace, DenoiserNet,
    NoiseSchedule, TokenEmbedding, TrainConfig,
};
use crate::rng::{derive_seed, streams, substream};
use crate::tensor::{check_version, Tensor, FORMAT_VERSION};

/// Seeds of each stage, all derived from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageSeeds {
    pub net_init: u64,
    pub train: u64,
    pub concept: u64,
    pub baseline: u64,
    /// Passed to the trial runner, which derives its own substreams.
    pub trial: u64,
}

impl StageSeeds {
    pub fn new(master: u64) -> Self {
        let prior = substream(master, streams::PRIOR_TRAIN);
        Self {
            net_init: derive_seed(prior, 0),
            train: derive_seed(prior, 1),
            concept: substream(master, streams::CONCEPT),
            baseline: substream(master, streams::BASELINE),
            trial: master,
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path)?;
    Ok(serde_json::from_slice(&bytes)?)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub kind: String,
    pub master_seed: u64,
    pub concept: ConceptSpec,
    pub schedule: NoiseSchedule,
    pub condition: TokenEmbedding,
    pub train: TrainConfig,
    pub net: DenoiserNet,
}

impl Checkpoint {
    pub fn load(path: &Path) -> Result<Self> {
        let ck: Self = read_json(path)?;
        check_version(ck.format_version, "checkpoint")?;
        if ck.kind != "prior_checkpoint" {
            return Err(Error::Format(format!("expected a prior_checkpoint, found {}", ck.kind)));
        }
        ck.net.validate()?;
        Ok(ck)
    }

    pub fn dataset(&self) -> Result<ConceptDataset> {
        make_concept(&self.concept, StageSeeds::new(self.master_seed).concept)
    }
}

/// Trains the prior described by `cfg`. Returns the checkpoint and the
/// per-step loss curve.
pub fn train_checkpoint(cfg: &ExperimentConfig) -> Result<(Checkpoint, Vec<f64>)> {
    let spec = cfg.load_concept_spec()?;
    let seeds = StageSeeds::new(cfg.master_seed);
    let data = make_concept(&spec, seeds.concept)?;
    let schedule = NoiseSchedule::linear(cfg.schedule)?;
    let condition = TokenEmbedding::from_concept(&spec.id, cfg.dims.cond_dim);
    let net = DenoiserNet::new(cfg.dims.clone(), seeds.net_init)?;
    let out = train_prior(&net, &data, &schedule, &condition, &cfg.train, seeds.train)?;
    let ck = Checkpoint {
        format_version: FORMAT_VERSION,
        kind: "prior_checkpoint".into(),
        master_seed: cfg.master_seed,
        concept: spec,
        schedule,
        condition,
        train: cfg.train,
        net: out.net,
    };
    Ok((ck, out.losses))
}

/// Trains and writes `checkpoint.json` plus `prior_loss.csv` next to it.
pub fn cmd_train_prior(cfg: &ExperimentConfig) -> Result<Checkpoint> {
    let (ck, losses) = train_checkpoint(cfg)?;
    let path = cfg.checkpoint_path();
    write_json(&path, &ck)?;
    let csv_path = path.with_file_name("prior_loss.csv");
    write_loss_curve(std::fs::File::create(csv_path)?, &losses)?;
    Ok(ck)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSummary {
    pub format_version: u32,
    pub kind: String,
    pub checkpoint_sha256: String,
    pub n_prior: usize,
    pub k: usize,
    pub sample_steps: usize,
    pub base_seed: u64,
    pub explained_variance_total: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SampleSet {
    format_version: u32,
    kind: String,
    samples: Tensor,
}

/// Samples drawn from the unmodified prior and the density fitted to them.
#[derive(Debug, Clone)]
pub struct Baseline {
    pub samples: Vec<EmbeddingSample>,
    pub model: BaselineModel,
    pub summary: BaselineSummary,
}

impl Baseline {
    pub fn reduced(&self) -> Result<Vec<Vec<f64>>> {
        self.model.pca.project_all(&self.samples)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let m = self.samples.first().map_or(0, EmbeddingSample::dim);
        let data = self.samples.iter().flat_map(|s| s.iter().copied()).collect();
        let set = SampleSet {
            format_version: FORMAT_VERSION,
            kind: "embedding_samples".into(),
            samples: Tensor::matrix(self.samples.len(), m, data)?,
        };
        write_json(&dir.join("samples.json"), &set)?;
        write_json(&dir.join("pca.json"), &self.model.pca)?;
        write_json(&dir.join("gaussian.json"), &self.model.density)?;
        write_json(&dir.join("summary.json"), &self.summary)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let summary: BaselineSummary = read_json(&dir.join("summary.json"))?;
        check_version(summary.format_version, "baseline summary")?;
        let set: SampleSet = read_json(&dir.join("samples.json"))?;
        check_version(set.format_version, "sample set")?;
        let (n, _) = set.samples.dims2();
        let samples =
            (0..n).map(|i| EmbeddingSample::new(set.samples.row(i).to_vec())).collect::<Result<Vec<_>>>()?;
        let pca: PcaModel = read_json(&dir.join("pca.json"))?;
        let density: GaussianDensity = read_json(&dir.join("gaussian.json"))?;
        let reduced = pca.project_all(&samples)?;
        let model = BaselineModel::from_parts(pca, density, &reduced)?;
        Ok(Self { samples, model, summary })
    }
}

/// Samples `n_prior` embeddings from the checkpoint's unmodified prior and
/// fits PCA and the zero-mean Gaussian.
pub fn build_baseline(cfg: &ExperimentConfig, ck: &Checkpoint, checkpoint_sha256: String) -> Result<Baseline> {
    let base_seed = StageSeeds::new(cfg.master_seed).baseline;
    let space = ConceptualSpace::token_only(ck.condition.clone());
    let samples = sample_prior_batch(&ck.net, &ck.schedule, &space, cfg.sample_steps, cfg.n_prior, base_seed)?;
    let model = BaselineModel::fit(&samples, cfg.pca_k)?;
    let summary = BaselineSummary {
        format_version: FORMAT_VERSION,
        kind: "baseline".into(),
        checkpoint_sha256,
        n_prior: cfg.n_prior,
        k: cfg.pca_k,
        sample_steps: cfg.sample_steps,
        base_seed,
        explained_variance_total: model.pca.explained_variance_total(),
    };
    Ok(Baseline { samples, model, summary })
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} not found: {}", path.display())))
    }
}

pub fn cmd_sample_baseline(cfg: &ExperimentConfig) -> Result<Baseline> {
    let ck_path = cfg.checkpoint_path();
    require_file(&ck_path, "prior checkpoint")?;
    let ck = Checkpoint::load(&ck_path)?;
    let baseline = build_baseline(cfg, &ck, sha256_file(&ck_path)?)?;
    baseline.write(&cfg.baseline_dir())?;
    Ok(baseline)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterFile {
    pub format_version: u32,
    pub kind: String,
    pub clusters: NegativeClusterSet,
}

impl ClusterFile {
    pub fn new(clusters: NegativeClusterSet) -> Self {
        Self { format_version: FORMAT_VERSION, kind: "negative_clusters".into(), clusters }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f: Self = read_json(path)?;
        check_version(f.format_version, "negative cluster file")?;
        if f.kind != "negative_clusters" {
            return Err(Error::Format(format!("expected negative_clusters, found {}", f.kind)));
        }
        Ok(f)
    }
}

pub fn load_record(path: &Path) -> Result<TrialRecord> {
    let r: TrialRecord = read_json(path)?;
    check_version(r.format_version, "trial record")?;
    if r.kind != "trial_record" {
        return Err(Error::Format(format!("expected trial_record, found {}", r.kind)));
    }
    Ok(r)
}

/// Fits a negative cluster to rows of one of the record's snapshots.
/// `snapshot` defaults to the last one, `sample_ids` to every row.
pub fn label_negative(
    record: &TrialRecord,
    snapshot: Option<usize>,
    sample_ids: Option<&[usize]>,
    strength: f64,
) -> Result<NegativeCluster> {
    let idx = snapshot.unwrap_or(record.snapshots.len().saturating_sub(1));
    let snap = record
        .snapshots
        .get(idx)
        .ok_or_else(|| Error::InvalidArgument(format!("record has no snapshot {idx}")))?;
    let rows = snap.reduced_rows();
    let picked: Vec<Vec<f64>> = match sample_ids {
        None => rows,
        Some(ids) => ids
            .iter()
            .map(|&i| {
                rows.get(i)
                    .cloned()
                    .ok_or_else(|| Error::InvalidArgument(format!("snapshot has no sample {i}")))
            })
            .collect::<Result<_>>()?,
    };
    fit_reduced_cluster(&picked, strength)
}

/// Everything a trial needs, loaded from a config's artifacts.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub checkpoint: Checkpoint,
    pub concept: ConceptDataset,
    pub baseline: Baseline,
    pub oracle: Box<dyn ValidityOracle>,
}

impl Experiment {
    /// Missing artifacts are config errors; unreadable ones are not.
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let ck_path = cfg.checkpoint_path();
        require_file(&ck_path, "prior checkpoint")?;
        let dir = cfg.baseline_dir();
        require_file(&dir.join("summary.json"), "baseline artifact")?;
        let checkpoint = Checkpoint::load(&ck_path)?;
        let baseline = Baseline::load(&dir)?;
        Self::from_parts(cfg.clone(), checkpoint, baseline)
    }

    pub fn from_parts(config: ExperimentConfig, checkpoint: Checkpoint, baseline: Baseline) -> Result<Self> {
        if baseline.model.pca.ambient_dim() != checkpoint.net.dims.dim {
            return Err(Error::DimensionMismatch { expected: checkpoint.net.dims.dim, got: baseline.model.pca.ambient_dim() });
        }
        let concept = checkpoint.dataset()?;
        let oracle = config.oracle.build(&concept);
        Ok(Self { config, checkpoint, concept, baseline, oracle })
    }

    pub fn context(&self) -> TrialContext<'_> {
        TrialContext {
            net: &self.checkpoint.net,
            schedule: &self.checkpoint.schedule,
            baseline: &self.baseline.model,
            anchor: self.concept.anchor(),
            oracle: self.oracle.as_ref(),
            sample_steps: self.config.sample_steps,
        }
    }

    /// Fresh conceptual space for `seed`: the base concept token and, when
    /// selected, adapters with `B = 0`.
    pub fn initial_space(&self, seed: u64) -> Result<ConceptualSpace> {
        ConceptualSpace::new(
            self.checkpoint.condition.clone(),
            &self.checkpoint.net.dims,
            self.config.selection,
            self.config.adapter,
            seed,
        )
    }

    pub fn initial_clusters(&self) -> Result<NegativeClusterSet> {
        match self.config.negative_clusters_path() {
            Some(p) => Ok(ClusterFile::load(&p)?.clusters),
            None => Ok(NegativeClusterSet::new()),
        }
    }

    pub fn run(
        &self,
        seed: u64,
        space: ConceptualSpace,
        clusters: NegativeClusterSet,
        commands: &mut dyn CommandSource,
        observer: &mut dyn FnMut(TrialEvent<'_>),
    ) -> Result<TrialRecord> {
        run_trial(&self.context(), space, clusters, &self.config.trial, seed, commands, observer)
    }
}

/// File stem of a record: `trial-<seed>`, plus the head of the config hash
/// when the trial was resumed or started with negative clusters, so it never
/// overwrites the plain record of the same seed.
pub fn record_stem(record: &TrialRecord) -> String {
    if record.parent.is_none() && record.initial_clusters.is_empty() {
        return format!("trial-{}", record.seed);
    }
    format!("trial-{}-{}", record.seed, &record.config_hash[..12.min(record.config_hash.len())])
}

/// Writes `<stem>.json` and the matching trajectory CSV into `dir` and
/// returns the record path.
pub fn write_trial(dir: &Path, record: &TrialRecord) -> Result<std::path::PathBuf> {
    std::fs::create_dir_all(dir)?;
    let stem = record_stem(record);
    let path = dir.join(format!("{stem}.json"));
    write_json(&path, record)?;
    let csv = dir.join(format!("{}.csv", stem.replacen("trial", "trajectory", 1)));
    write_trajectory(std::fs::File::create(csv)?, &record.rows)?;
    Ok(path)
}
