use serde::{Deserialize, Serialize};

use super::clusters::NegativeClusterSet;
use crate::autodiff::{Graph, NodeId};
use crate::density::{GaussianDensity, PcaModel};
use crate::error::{Error, Result};
use crate::optim::AdamWConfig;
use crate::tensor::Tensor;

/// Sign convention of the negative-cluster term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegSign {
    /// `+alpha log G_neg`: minimising pushes samples away from the cluster.
    #[default]
    Repulsive,
    /// `-alpha log G_neg`: minimising pulls samples into the cluster.
    Attractive,
}

impl NegSign {
    fn factor(self) -> f64 {
        match self {
            Self::Repulsive => 1.0,
            Self::Attractive => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub anchor_threshold: f64,
    /// When false the anchor branch is never taken.
    pub anchor_enabled: bool,
    pub neg_sign: NegSign,
    pub default_neg_strength: f64,
    pub grad_clip_norm: f64,
    pub checker_interval: u64,
    pub max_steps: u64,
    /// Consecutive anchor iterations tolerated before the trial is declared
    /// diverged.
    pub pullback_cap: u64,
    pub snapshot_interval: u64,
    pub snapshot_size: usize,
    pub optimizer: AdamWConfig,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            anchor_threshold: 0.3,
            anchor_enabled: true,
            neg_sign: NegSign::Repulsive,
            default_neg_strength: 1.0,
            grad_clip_norm: 1.0,
            checker_interval: 25,
            max_steps: 1000,
            pullback_cap: 200,
            snapshot_interval: 100,
            snapshot_size: 256,
            optimizer: AdamWConfig::default(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.anchor_threshold > 0.0 && self.anchor_threshold < 2.0) {
            return Err(Error::Config(format!("anchor threshold must lie in (0, 2), got {}", self.anchor_threshold)));
        }
        if self.checker_interval == 0 || self.snapshot_interval == 0 {
            return Err(Error::Config("checker and snapshot intervals must be at least 1".into()));
        }
        if !(self.grad_clip_norm > 0.0) {
            return Err(Error::Config("gradient clip norm must be positive".into()));
        }
        if self.snapshot_size == 0 {
            return Err(Error::Config("snapshot size must be positive".into()));
        }
        if !(self.default_neg_strength >= 0.0) {
            return Err(Error::Config("negative strength must be nonnegative".into()));
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0) || !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.eps > 0.0) || !(o.weight_decay >= 0.0) {
            return Err(Error::Config("invalid optimizer settings".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Creative,
    Anchor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedPolicy {
    NewSeed,
    SameSeed,
}

/// Below the threshold the creative branch runs and the next iteration draws
/// a new seed; at or above it the anchor branch pulls back on the same seed.
pub fn dynamic_loss_select(anchor_value: f64, threshold: f64) -> (Branch, SeedPolicy) {
    if anchor_value < threshold {
        (Branch::Creative, SeedPolicy::NewSeed)
    } else {
        (Branch::Anchor, SeedPolicy::SameSeed)
    }
}

/// `log G(e~)` with its gradient in reduced coordinates.
pub fn creative_loss(g_base: &GaussianDensity, reduced: &[f64]) -> Result<(f64, Vec<f64>)> {
    Ok((g_base.log_pdf(reduced)?, g_base.log_pdf_grad(reduced)?))
}

/// `1 - cos(e, anchor)` with its gradient in ambient coordinates.
pub fn anchor_loss(e: &[f64], anchor: &[f64]) -> Result<(f64, Vec<f64>)> {
    if e.len() != anchor.len() {
        return Err(Error::DimensionMismatch { expected: anchor.len(), got: e.len() });
    }
    let ne = e.iter().map(|v| v * v).sum::<f64>().sqrt();
    let na = anchor.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(ne > 0.0) || !(na > 0.0) {
        return Err(Error::InvalidArgument("anchor loss of a zero-norm vector".into()));
    }
    let dot: f64 = e.iter().zip(anchor).map(|(a, b)| a * b).sum();
    let cos = dot / (ne * na);
    let grad = e.iter().zip(anchor).map(|(x, a)| -(a / (ne * na) - cos * x / (ne * ne))).collect();
    Ok((1.0 - cos, grad))
}

/// Sum of signed `alpha log G_neg(e~)` terms with its gradient.
pub fn negative_loss(clusters: &NegativeClusterSet, reduced: &[f64], sign: NegSign) -> Result<(f64, Vec<f64>)> {
    let mut value = 0.0;
    let mut grad = vec![0.0; reduced.len()];
    for c in clusters.iter() {
        if c.strength == 0.0 {
            continue;
        }
        let w = sign.factor() * c.strength;
        value += w * c.density.log_pdf(reduced)?;
        for (g, d) in grad.iter_mut().zip(c.density.log_pdf_grad(reduced)?) {
            *g += w * d;
        }
    }
    Ok((value, grad))
}

/// The loss actually optimized in an iteration.
pub fn total_loss(creative: f64, negative: f64, anchor: f64, branch: Branch) -> f64 {
    match branch {
        Branch::Creative => creative + negative,
        Branch::Anchor => anchor,
    }
}

/// `W (e - mu0)` as graph nodes.
pub fn project_node(g: &mut Graph, pca: &PcaModel, e: NodeId) -> Result<NodeId> {
    let center = g.constant(Tensor::from_dvector(pca.center()));
    let w = g.constant(Tensor::from_dmatrix(pca.projection()));
    let centered = g.sub(e, center)?;
    g.matvec(w, centered)
}

/// `log N(x | mean, Sigma)` as graph nodes.
pub fn log_pdf_node(g: &mut Graph, density: &GaussianDensity, x: NodeId) -> Result<NodeId> {
    let mean = g.constant(Tensor::from_dvector(density.mean()));
    let precision = g.constant(Tensor::from_dmatrix(density.precision()));
    let d = g.sub(x, mean)?;
    let pd = g.matvec(precision, d)?;
    let q = g.dot(d, pd)?;
    let half = g.scale(q, -0.5)?;
    g.add_scalar(half, density.log_normalizer())
}

pub fn anchor_node(g: &mut Graph, e: NodeId, anchor: &[f64]) -> Result<NodeId> {
    let a = g.constant(Tensor::vector(anchor.to_vec()));
    let cos = g.cosine(e, a)?;
    let neg = g.scale(cos, -1.0)?;
    g.add_scalar(neg, 1.0)
}

pub fn negative_node(g: &mut Graph, clusters: &NegativeClusterSet, reduced: NodeId, sign: NegSign) -> Result<NodeId> {
    let mut total = g.constant(Tensor::scalar(0.0));
    for c in clusters.iter() {
        if c.strength == 0.0 {
            continue;
        }
        let lp = log_pdf_node(g, &c.density, reduced)?;
        let term = g.scale(lp, sign.factor() * c.strength)?;
        total = g.add(total, term)?;
    }
    Ok(total)
}
