use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::check_dim;
use crate::error::{Error, Result};
use crate::tensor::{check_version, Tensor, FORMAT_VERSION};

/// Kernel density estimates are only trusted in very low dimension.
pub const MAX_KDE_DIM: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "value")]
pub enum BandwidthRule {
    /// `sigma * n^(-1 / (d + 4))` with `sigma` the RMS per-coordinate std.
    Scott,
    Fixed(f64),
}

/// Isotropic Gaussian-kernel density over the leading `dim` reduced coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct KdeDensity {
    support: Vec<Vec<f64>>,
    bandwidth: f64,
}

impl KdeDensity {
    /// Truncates each reduced sample to its first `target_dim` coordinates
    /// (the leading principal components) and builds the kernel mixture.
    pub fn fit(reduced: &[Vec<f64>], target_dim: usize, rule: BandwidthRule) -> Result<Self> {
        if target_dim == 0 || target_dim > MAX_KDE_DIM {
            return Err(Error::InvalidArgument(format!(
                "KDE target dimension {target_dim} outside 1..={MAX_KDE_DIM}; \
                 kernel estimates are unreliable beyond {MAX_KDE_DIM} dimensions"
            )));
        }
        let n = reduced.len();
        if n == 0 {
            return Err(Error::Fit("no KDE support points".into()));
        }
        let k = reduced[0].len();
        if target_dim > k {
            return Err(Error::InvalidArgument(format!(
                "KDE target dimension {target_dim} exceeds reduced dimension {k}"
            )));
        }
        let mut support = Vec::with_capacity(n);
        for r in reduced {
            check_dim(k, r.len())?;
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("KDE support point".into()));
            }
            support.push(r[..target_dim].to_vec());
        }
        let bandwidth = match rule {
            BandwidthRule::Fixed(h) => h,
            BandwidthRule::Scott => {
                let mut var_sum = 0.0;
                for j in 0..target_dim {
                    let mean = support.iter().map(|p| p[j]).sum::<f64>() / n as f64;
                    let var = support.iter().map(|p| (p[j] - mean).powi(2)).sum::<f64>()
                        / (n.max(2) - 1) as f64;
                    var_sum += var;
                }
                (var_sum / target_dim as f64).sqrt() * (n as f64).powf(-1.0 / (target_dim as f64 + 4.0))
            }
        };
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(Error::Fit(format!("KDE bandwidth must be positive, got {bandwidth}")));
        }
        Ok(Self { support, bandwidth })
    }

    pub fn dim(&self) -> usize {
        self.support[0].len()
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn support(&self) -> &[Vec<f64>] {
        &self.support
    }

    /// Log of `(1/n) sum_i N(x | s_i, h^2 I)`, computed with log-sum-exp.
    ///
    /// Queries may carry more than `dim` coordinates; extra trailing
    /// coordinates are ignored, matching the truncation done at fit time.
    pub fn log_pdf(&self, x: &[f64]) -> Result<f64> {
        let d = self.dim();
        if x.len() < d {
            return Err(Error::DimensionMismatch { expected: d, got: x.len() });
        }
        let h2 = self.bandwidth * self.bandwidth;
        let log_norm = -0.5 * d as f64 * (2.0 * PI * h2).ln();
        let exps: Vec<f64> = self
            .support
            .iter()
            .map(|s| {
                let sq: f64 = s.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                -0.5 * sq / h2
            })
            .collect();
        let max = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = exps.iter().map(|e| (e - max).exp()).sum();
        Ok(log_norm + max + sum.ln() - (self.support.len() as f64).ln())
    }

    pub fn to_document(&self) -> KdeDocument {
        let n = self.support.len();
        let d = self.dim();
        KdeDocument {
            format_version: FORMAT_VERSION,
            kind: "kde".into(),
            dims: d,
            support: Tensor::matrix(n, d, self.support.concat()).expect("consistent support"),
            bandwidth: self.bandwidth,
            fit_size: n,
        }
    }

    pub fn from_document(doc: KdeDocument) -> Result<Self> {
        check_version(doc.format_version, "kde")?;
        if doc.kind != "kde" {
            return Err(Error::Format(format!("expected kind kde, got {}", doc.kind)));
        }
        let (n, d) = doc.support.dims2();
        if d != doc.dims || n == 0 {
            return Err(Error::Format("kde document dims disagree with payload".into()));
        }
        let support: Vec<Vec<f64>> = (0..n).map(|i| doc.support.row(i).to_vec()).collect();
        Self::fit(&support, d, BandwidthRule::Fixed(doc.bandwidth))
    }
}

/// Persisted form of a [`KdeDensity`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KdeDocument {
    pub format_version: u32,
    pub kind: String,
    pub dims: usize,
    pub support: Tensor,
    pub bandwidth: f64,
    pub fit_size: usize,
}
