use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::creative::{LossConfig, OracleConfig};
use crate::error::{Error, Result};
use crate::prior::{AdapterConfig, ConceptSpec, DenoiserDims, ScheduleSpec, SpaceSelection, TrainConfig};

pub const SCHEMA_VERSION: u32 = 1;

/// Learning rate of the experiment's trials. The optimizer default of 1e-4
/// barely moves the toy prior's token within a 500-step trial.
pub const EXPERIMENT_TRIAL_LR: f64 = 6e-3;

/// One JSON document describing every stage of an experiment.
///
/// Relative paths resolve against the directory of the config file.
/// `checkpoint` and `baseline` default to locations under `output_dir`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub concept: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline: Option<PathBuf>,
    /// Negative clusters active from the first iteration.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub negative_clusters: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub master_seed: u64,
    pub pca_k: usize,
    pub n_prior: usize,
    pub sample_steps: usize,
    pub dims: DenoiserDims,
    pub schedule: ScheduleSpec,
    pub train: TrainConfig,
    pub trial: LossConfig,
    pub selection: SpaceSelection,
    pub adapter: AdapterConfig,
    pub oracle: OracleConfig,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut trial = LossConfig::default();
        trial.optimizer.lr = EXPERIMENT_TRIAL_LR;
        Self {
            schema_version: SCHEMA_VERSION,
            concept: PathBuf::from("concept.json"),
            checkpoint: None,
            baseline: None,
            negative_clusters: None,
            output_dir: PathBuf::from("out"),
            master_seed: 0,
            pca_k: 8,
            n_prior: 5000,
            sample_steps: 5,
            dims: DenoiserDims::default(),
            schedule: ScheduleSpec::default(),
            train: TrainConfig::default(),
            trial,
            selection: SpaceSelection::Token,
            adapter: AdapterConfig::default(),
            oracle: OracleConfig::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

fn overlay(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => overlay(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl ExperimentConfig {
    /// Reads and validates a config file. Any failure is a config error.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json(&text, &base)
    }

    /// Objects in `text` overlay the experiment defaults key by key, so a
    /// partial `trial` object keeps the experiment's learning rate.
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self> {
        let invalid = |e: serde_json::Error| Error::Config(format!("invalid config: {e}"));
        let given: Value = serde_json::from_str(text).map_err(invalid)?;
        if !given.is_object() {
            return Err(Error::Config("config must be a JSON object".into()));
        }
        let mut merged = serde_json::to_value(Self::default()).map_err(invalid)?;
        overlay(&mut merged, given);
        let mut cfg: Self = serde_json::from_value(merged).map_err(invalid)?;
        cfg.base_dir = if base_dir.as_os_str().is_empty() { PathBuf::from(".") } else { base_dir.to_path_buf() };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks everything that does not need an earlier stage's output.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {}, expected {SCHEMA_VERSION}",
                self.schema_version
            )));
        }
        let m = self.dims.dim;
        if self.pca_k == 0 || self.pca_k > m {
            return Err(Error::Config(format!("pca_k must lie in 1..={m}, got {}", self.pca_k)));
        }
        if self.n_prior < self.pca_k + 1 {
            return Err(Error::Config(format!("n_prior must be at least pca_k + 1 = {}", self.pca_k + 1)));
        }
        if self.sample_steps == 0 || self.sample_steps > self.schedule.train_steps {
            return Err(Error::Config(format!(
                "sample_steps must lie in 1..={}, got {}",
                self.schedule.train_steps, self.sample_steps
            )));
        }
        if self.adapter.rank == 0 {
            return Err(Error::Config("adapter rank must be positive".into()));
        }
        self.trial.validate()?;
        let concept = self.concept_path();
        if !concept.is_file() {
            return Err(Error::Config(format!("concept spec not found: {}", concept.display())));
        }
        if let Some(p) = &self.negative_clusters {
            let p = self.resolve(p);
            if !p.is_file() {
                return Err(Error::Config(format!("negative cluster file not found: {}", p.display())));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn concept_path(&self) -> PathBuf {
        self.resolve(&self.concept)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        match &self.checkpoint {
            Some(p) => self.resolve(p),
            None => self.output_dir().join("checkpoint.json"),
        }
    }

    pub fn baseline_dir(&self) -> PathBuf {
        match &self.baseline {
            Some(p) => self.resolve(p),
            None => self.output_dir().join("baseline"),
        }
    }

    pub fn negative_clusters_path(&self) -> Option<PathBuf> {
        self.negative_clusters.as_deref().map(|p| self.resolve(p))
    }

    pub fn load_concept_spec(&self) -> Result<ConceptSpec> {
        let path = self.concept_path();
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::Config(format!("cannot read concept spec {}: {e}", path.display())))?;
        let spec: ConceptSpec =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("invalid concept spec: {e}")))?;
        if spec.dim != self.dims.dim {
            return Err(Error::Config(format!(
                "concept dimension {} does not match dims.dim {}",
                spec.dim, self.dims.dim
            )));
        }
        Ok(spec)
    }
}
