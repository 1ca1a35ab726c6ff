use serde::{Deserialize, Serialize};

use crate::density::{EmbeddingSample, GaussianDensity, PcaModel, PercentileReference};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// The fitted baseline: PCA, the Gaussian over reduced samples, and the
/// reference log-densities used for percentiles.
#[derive(Debug, Clone)]
pub struct BaselineModel {
    pub pca: PcaModel,
    pub density: GaussianDensity,
    pub reference: PercentileReference,
}

impl BaselineModel {
    pub fn fit(samples: &[EmbeddingSample], k: usize) -> Result<Self> {
        let pca = PcaModel::fit(samples, k)?;
        let reduced = pca.project_all(samples)?;
        let density = GaussianDensity::fit(&reduced, true)?;
        Self::from_parts(pca, density, &reduced)
    }

    pub fn from_parts(pca: PcaModel, density: GaussianDensity, reduced_reference: &[Vec<f64>]) -> Result<Self> {
        if pca.k() != density.dim() {
            return Err(Error::DimensionMismatch { expected: pca.k(), got: density.dim() });
        }
        let reference = PercentileReference::new(&density, reduced_reference)?;
        Ok(Self { pca, density, reference })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnapshotStats {
    pub median_percentile: f64,
    pub mean_mahalanobis: f64,
    /// Share of samples with Mahalanobis distance above 3.
    pub fraction_beyond_3sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub iteration: u64,
    /// `N x m` embeddings.
    pub samples: Tensor,
    /// `N x k` reduced coordinates.
    pub reduced: Tensor,
    pub stats: SnapshotStats,
}

impl Snapshot {
    pub fn len(&self) -> usize {
        self.samples.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn embeddings(&self) -> Vec<EmbeddingSample> {
        (0..self.len())
            .map(|i| EmbeddingSample::new(self.samples.row(i).to_vec()).expect("snapshot samples are finite"))
            .collect()
    }

    pub fn reduced_rows(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.reduced.row(i).to_vec()).collect()
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Summary of reduced samples under the baseline density.
pub fn snapshot_stats(reduced: &[Vec<f64>], baseline: &BaselineModel) -> Result<SnapshotStats> {
    if reduced.is_empty() {
        return Err(Error::InvalidArgument("empty snapshot".into()));
    }
    let g = &baseline.density;
    let mut pct = Vec::with_capacity(reduced.len());
    let mut maha = 0.0;
    let mut beyond = 0usize;
    for r in reduced {
        pct.push(baseline.reference.percentile(g, r)?);
        let d = g.mahalanobis(r)?;
        maha += d;
        if d > 3.0 {
            beyond += 1;
        }
    }
    let n = reduced.len() as f64;
    Ok(SnapshotStats {
        median_percentile: median(pct),
        mean_mahalanobis: maha / n,
        fraction_beyond_3sigma: beyond as f64 / n,
    })
}

pub(crate) fn build_snapshot(iteration: u64, samples: Vec<EmbeddingSample>, baseline: &BaselineModel) -> Result<Snapshot> {
    let reduced = baseline.pca.project_all(&samples)?;
    let stats = snapshot_stats(&reduced, baseline)?;
    let n = samples.len();
    let (m, k) = (samples[0].dim(), baseline.pca.k());
    Ok(Snapshot {
        iteration,
        samples: Tensor::matrix(n, m, samples.iter().flat_map(|s| s.iter().copied()).collect())?,
        reduced: Tensor::matrix(n, k, reduced.concat())?,
        stats,
    })
}
