use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::check_dim;
use crate::error::{Error, Result};
use crate::tensor::{check_version, dmatrix_block, dvector_block, FORMAT_VERSION};

/// Relative size of the diagonal loading added to a fitted covariance.
pub const REGULARIZATION_SCALE: f64 = 1e-6;

/// Multivariate normal density over reduced embeddings.
///
/// The precision matrix and log-determinant are cached at construction and
/// recomputed (not stored) when loading a document.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDensity {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    precision: DMatrix<f64>,
    log_det: f64,
    regularization: f64,
    fit_size: usize,
}

impl GaussianDensity {
    /// Builds a density from an explicit mean and covariance.
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        Self::with_metadata(mean, covariance, 0.0, 0)
    }

    fn with_metadata(
        mean: DVector<f64>,
        covariance: DMatrix<f64>,
        regularization: f64,
        fit_size: usize,
    ) -> Result<Self> {
        let k = mean.len();
        if covariance.shape() != (k, k) {
            return Err(Error::Shape(format!(
                "covariance is {:?}, mean has length {k}",
                covariance.shape()
            )));
        }
        if !mean.iter().chain(covariance.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("gaussian parameters".into()));
        }
        let asym = (&covariance - covariance.transpose()).amax();
        if asym > 1e-10 * covariance.amax().max(1.0) {
            return Err(Error::Fit(format!("covariance is not symmetric (|S - S^T| = {asym:e})")));
        }
        let chol = covariance
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Fit("covariance is singular or not positive definite".into()))?;
        let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let inv = chol.inverse();
        let precision = (&inv + inv.transpose()) * 0.5;
        if !log_det.is_finite() {
            return Err(Error::Fit("covariance log-determinant is not finite".into()));
        }
        Ok(Self {
            mean,
            covariance,
            precision,
            log_det,
            regularization,
            fit_size,
        })
    }

    /// Maximum-likelihood fit with diagonal loading `1e-6 * trace / k`.
    ///
    /// With `zero_mean` the mean is pinned to the origin and the covariance is
    /// the raw second moment.
    pub fn fit(samples: &[Vec<f64>], zero_mean: bool) -> Result<Self> {
        let n = samples.len();
        let k = samples.first().map(Vec::len).unwrap_or(0);
        if k == 0 {
            return Err(Error::Fit("no samples".into()));
        }
        if n < k + 1 {
            return Err(Error::Fit(format!("need at least {} samples, got {n}", k + 1)));
        }
        let (mean, cov) = moments(samples, zero_mean)?;
        Self::from_moments(mean, cov, n)
    }

    /// Fit for small labelled sets: with fewer than `k + 1` samples (minimum 3)
    /// the covariance is shrunk to `trace / k * I`.
    pub fn fit_shrunk(samples: &[Vec<f64>]) -> Result<Self> {
        let n = samples.len();
        if n < 3 {
            return Err(Error::Fit(format!("need at least 3 samples, got {n}")));
        }
        let k = samples[0].len();
        if n >= k + 1 {
            return Self::fit(samples, false);
        }
        let (mean, cov) = moments(samples, false)?;
        let scale = cov.trace() / k as f64;
        Self::from_moments(mean, DMatrix::identity(k, k) * scale, n)
    }

    fn from_moments(mean: DVector<f64>, mut cov: DMatrix<f64>, n: usize) -> Result<Self> {
        let k = mean.len();
        let eps = REGULARIZATION_SCALE * cov.trace() / k as f64;
        for i in 0..k {
            cov[(i, i)] += eps;
        }
        Self::with_metadata(mean, cov, eps, n)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn regularization(&self) -> f64 {
        self.regularization
    }

    pub fn fit_size(&self) -> usize {
        self.fit_size
    }

    /// `-(k/2) log 2pi - (1/2) log det`, the density's value at its mean.
    pub fn log_normalizer(&self) -> f64 {
        -0.5 * self.dim() as f64 * (2.0 * PI).ln() - 0.5 * self.log_det
    }

    fn quad_form(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("density query point".into()));
        }
        let k = self.dim();
        let d: Vec<f64> = (0..k).map(|i| x[i] - self.mean[i]).collect();
        let mut q = 0.0;
        for i in 0..k {
            let mut row = 0.0;
            for j in 0..k {
                row += self.precision[(i, j)] * d[j];
            }
            q += d[i] * row;
        }
        Ok(q.max(0.0))
    }

    pub fn log_pdf(&self, x: &[f64]) -> Result<f64> {
        Ok(self.log_normalizer() - 0.5 * self.quad_form(x)?)
    }

    /// `-Sigma^{-1} (x - mean)`.
    pub fn log_pdf_grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        let k = self.dim();
        Ok((0..k)
            .map(|i| {
                -(0..k)
                    .map(|j| self.precision[(i, j)] * (x[j] - self.mean[j]))
                    .sum::<f64>()
            })
            .collect())
    }

    pub fn mahalanobis(&self, x: &[f64]) -> Result<f64> {
        Ok(self.quad_form(x)?.sqrt())
    }

    /// Batch log-density, evaluated in parallel.
    pub fn log_pdf_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
        xs.par_iter().map(|x| self.log_pdf(x)).collect()
    }

    /// Percentage of `reference` samples strictly less probable than `x`.
    /// Zero means `x` is at least as deep in the tail as every reference point.
    pub fn likelihood_percentile(&self, x: &[f64], reference: &[Vec<f64>]) -> Result<f64> {
        PercentileReference::new(self, reference)?.percentile(self, x)
    }

    pub fn to_document(&self) -> GaussianDocument {
        GaussianDocument {
            format_version: FORMAT_VERSION,
            kind: "gaussian".into(),
            dims: self.dim(),
            mean: self.mean.clone(),
            covariance: self.covariance.clone(),
            regularization: self.regularization,
            fit_size: self.fit_size,
        }
    }

    pub fn from_document(doc: GaussianDocument) -> Result<Self> {
        check_version(doc.format_version, "gaussian")?;
        if doc.kind != "gaussian" {
            return Err(Error::Format(format!("expected kind gaussian, got {}", doc.kind)));
        }
        if doc.mean.len() != doc.dims {
            return Err(Error::Format("gaussian document dims disagree with payload".into()));
        }
        Self::with_metadata(doc.mean, doc.covariance, doc.regularization, doc.fit_size)
    }
}

fn moments(samples: &[Vec<f64>], zero_mean: bool) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = samples.len();
    let k = samples[0].len();
    let mut mean = DVector::zeros(k);
    for s in samples {
        check_dim(k, s.len())?;
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gaussian fit sample".into()));
        }
        if !zero_mean {
            for i in 0..k {
                mean[i] += s[i];
            }
        }
    }
    if !zero_mean {
        mean /= n as f64;
    }
    let mut cov = DMatrix::zeros(k, k);
    for s in samples {
        for i in 0..k {
            let di = s[i] - mean[i];
            for j in i..k {
                cov[(i, j)] += di * (s[j] - mean[j]);
            }
        }
    }
    for i in 0..k {
        for j in i..k {
            let v = cov[(i, j)] / n as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok((mean, cov))
}

/// Sorted reference log-densities for repeated percentile queries.
#[derive(Debug, Clone)]
pub struct PercentileReference {
    sorted_log_pdf: Vec<f64>,
}

impl PercentileReference {
    pub fn new(g: &GaussianDensity, reference: &[Vec<f64>]) -> Result<Self> {
        if reference.is_empty() {
            return Err(Error::InvalidArgument("empty percentile reference set".into()));
        }
        let mut sorted_log_pdf = g.log_pdf_batch(reference)?;
        sorted_log_pdf.sort_by(f64::total_cmp);
        Ok(Self { sorted_log_pdf })
    }

    pub fn len(&self) -> usize {
        self.sorted_log_pdf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted_log_pdf.is_empty()
    }

    pub fn percentile_of_log_pdf(&self, lp: f64) -> f64 {
        let below = self.sorted_log_pdf.partition_point(|v| *v < lp);
        100.0 * below as f64 / self.sorted_log_pdf.len() as f64
    }

    pub fn percentile(&self, g: &GaussianDensity, x: &[f64]) -> Result<f64> {
        Ok(self.percentile_of_log_pdf(g.log_pdf(x)?))
    }
}

/// Persisted form of a [`GaussianDensity`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianDocument {
    pub format_version: u32,
    pub kind: String,
    pub dims: usize,
    #[serde(with = "dvector_block")]
    pub mean: DVector<f64>,
    #[serde(with = "dmatrix_block")]
    pub covariance: DMatrix<f64>,
    pub regularization: f64,
    pub fit_size: usize,
}

impl Serialize for GaussianDensity {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_document().serialize(s)
    }
}

impl<'de> Deserialize<'de> for GaussianDensity {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        GaussianDensity::from_document(GaussianDocument::deserialize(d)?).map_err(D::Error::custom)
    }
}
