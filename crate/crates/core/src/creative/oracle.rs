use serde::{Deserialize, Serialize};

use crate::prior::ConceptDataset;

/// Discrete membership check on a generated embedding. Implementations see
/// only the embedding, never a loss value.
pub trait ValidityOracle: Send + Sync {
    fn id(&self) -> &str;
    fn accepts(&self, e: &[f64]) -> bool;
}

/// Accepts when some mixture component is within Mahalanobis distance
/// `radius` of the embedding.
#[derive(Debug, Clone)]
pub struct ConceptRegionOracle {
    concept: ConceptDataset,
    radius: f64,
}

impl ConceptRegionOracle {
    pub fn new(concept: ConceptDataset, radius: f64) -> Self {
        Self { concept, radius }
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }
}

impl ValidityOracle for ConceptRegionOracle {
    fn id(&self) -> &str {
        "concept_region"
    }

    fn accepts(&self, e: &[f64]) -> bool {
        matches!(self.concept.min_component_mahalanobis(e), Ok(d) if d <= self.radius)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AlwaysPass;

impl ValidityOracle for AlwaysPass {
    fn id(&self) -> &str {
        "always_pass"
    }

    fn accepts(&self, _e: &[f64]) -> bool {
        true
    }
}

/// Serializable oracle choice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OracleConfig {
    /// `radius` defaults to the concept's own validity radius.
    ConceptRegion {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        radius: Option<f64>,
    },
    AlwaysPass,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self::ConceptRegion { radius: None }
    }
}

impl OracleConfig {
    pub fn build(&self, concept: &ConceptDataset) -> Box<dyn ValidityOracle> {
        match *self {
            Self::ConceptRegion { radius } => {
                Box::new(ConceptRegionOracle::new(concept.clone(), radius.unwrap_or(concept.validity_radius())))
            }
            Self::AlwaysPass => Box::new(AlwaysPass),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Validity {
    Pass,
    Fail,
    Skipped,
}

/// Runs the oracle only on iterations divisible by `interval`.
pub fn validity_check(oracle: &dyn ValidityOracle, e: &[f64], iteration: u64, interval: u64) -> Validity {
    if interval == 0 || iteration % interval != 0 {
        Validity::Skipped
    } else if oracle.accepts(e) {
        Validity::Pass
    } else {
        Validity::Fail
    }
}
