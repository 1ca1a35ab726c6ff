use serde::{Deserialize, Serialize};

use crate::density::{EmbeddingSample, GaussianDensity, PcaModel};
use crate::error::{Error, Result};

/// Minimum number of labeled samples for a negative cluster.
pub const MIN_CLUSTER_SAMPLES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegativeCluster {
    pub density: GaussianDensity,
    pub strength: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NegativeClusterSet {
    clusters: Vec<NegativeCluster>,
}

impl NegativeClusterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, cluster: NegativeCluster) -> Result<()> {
        if !(cluster.strength >= 0.0) || !cluster.strength.is_finite() {
            return Err(Error::InvalidArgument(format!("cluster strength must be nonnegative, got {}", cluster.strength)));
        }
        self.clusters.push(cluster);
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &NegativeCluster> {
        self.clusters.iter()
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&NegativeCluster> {
        self.clusters.get(i)
    }
}

/// Projects labeled embeddings and fits a Gaussian to them. With fewer than
/// `k + 1` samples the covariance is shrunk to a scaled identity.
pub fn fit_negative_cluster(labeled: &[EmbeddingSample], pca: &PcaModel, strength: f64) -> Result<NegativeCluster> {
    if labeled.len() < MIN_CLUSTER_SAMPLES {
        return Err(Error::Fit(format!(
            "a negative cluster needs at least {MIN_CLUSTER_SAMPLES} samples, got {}",
            labeled.len()
        )));
    }
    let reduced = pca.project_all(labeled)?;
    fit_reduced_cluster(&reduced, strength)
}

/// As [`fit_negative_cluster`] for points already in reduced coordinates.
pub fn fit_reduced_cluster(reduced: &[Vec<f64>], strength: f64) -> Result<NegativeCluster> {
    if reduced.len() < MIN_CLUSTER_SAMPLES {
        return Err(Error::Fit(format!(
            "a negative cluster needs at least {MIN_CLUSTER_SAMPLES} samples, got {}",
            reduced.len()
        )));
    }
    if !(strength >= 0.0) || !strength.is_finite() {
        return Err(Error::InvalidArgument(format!("cluster strength must be nonnegative, got {strength}")));
    }
    let k = reduced[0].len();
    let density = if reduced.len() > k {
        GaussianDensity::fit(reduced, false)?
    } else {
        GaussianDensity::fit_shrunk(reduced)?
    };
    Ok(NegativeCluster { density, strength })
}
