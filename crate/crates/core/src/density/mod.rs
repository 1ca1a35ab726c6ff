//! Dimensionality reduction and density estimation over embedding samples.

mod gaussian;
mod kde;
mod pca;

pub use gaussian::{GaussianDensity, PercentileReference};
pub use kde::{BandwidthRule, KdeDensity, MAX_KDE_DIM};
pub use pca::PcaModel;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in the ambient embedding space. Entries are always finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingSample(Vec<f64>);

impl EmbeddingSample {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("embedding entry {i}")));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Deref for EmbeddingSample {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}
