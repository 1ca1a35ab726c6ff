use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::density::EmbeddingSample;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, standard_normal_vec, substream, streams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSpec {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Row-major `m x m` covariance.
    pub covariance: Vec<Vec<f64>>,
}

/// JSON description of a synthetic concept distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptSpec {
    pub id: String,
    pub dim: usize,
    pub components: Vec<ComponentSpec>,
    /// Defaults to the normalised mixture mean.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<Vec<f64>>,
    #[serde(default = "default_validity_radius")]
    pub validity_radius: f64,
    /// Related concepts the prior is also trained on, indexed by offsets of
    /// the condition vector.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variation: Option<ConceptVariation>,
}

/// Training draws use condition `c0 + z` with `z ~ N(0, spread^2 I)` and
/// data shifted by `shift * z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptVariation {
    /// Row-major `m x d_cond`.
    pub shift: Vec<Vec<f64>>,
    pub spread: f64,
}

fn default_validity_radius() -> f64 {
    8.0
}

fn orthonormal_columns(m: usize, n: usize, rng: &mut impl Rng, against: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let mut basis: Vec<DVector<f64>> = against.to_vec();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let mut v = DVector::from_vec(standard_normal_vec(rng, m));
        for b in &basis {
            let c = b.dot(&v);
            v -= b * c;
        }
        let norm = v.norm();
        if norm < 1e-8 {
            continue;
        }
        v /= norm;
        basis.push(v.clone());
        out.push(v);
    }
    out
}

impl ConceptSpec {
    /// Four-component mixture in 16 dimensions centred at distance 5 along
    /// the diagonal. Components spread along 8 tangential directions, which
    /// dominate the variance; the radial direction and the remaining 7
    /// directions are tighter. The variation maps the 8 condition
    /// coordinates onto the tangential directions, so moving the token
    /// moves the concept sideways.
    pub fn default_m16() -> Self {
        let m = 16;
        let mut rng = rng_from_seed(substream(0x00c0_ffee, streams::CONCEPT));
        let axis = DVector::from_element(m, 1.0 / (m as f64).sqrt());
        let tangential = orthonormal_columns(m, 8, &mut rng, std::slice::from_ref(&axis));
        let mut taken = vec![axis.clone()];
        taken.extend(tangential.iter().cloned());
        let rest = orthonormal_columns(m, 7, &mut rng, &taken);
        let scales = [1.0, 0.9, 1.1, 0.95];
        let weights = [0.3, 0.25, 0.25, 0.2];
        let components = (0..4)
            .map(|j| {
                let mean = &axis * 5.0 + &tangential[j] * 1.5;
                let mut cov = &axis * axis.transpose() * 0.09;
                for t in &tangential {
                    cov += t * t.transpose() * 0.81;
                }
                for r in &rest {
                    cov += r * r.transpose() * 0.25;
                }
                let cov = (&cov + cov.transpose()) * (0.5 * scales[j]);
                ComponentSpec {
                    weight: weights[j],
                    mean: mean.iter().copied().collect(),
                    covariance: (0..m).map(|r| cov.row(r).iter().copied().collect()).collect(),
                }
            })
            .collect();
        Self {
            id: "toy-concept".into(),
            dim: m,
            components,
            anchor: None,
            validity_radius: default_validity_radius(),
            variation: Some(ConceptVariation {
                shift: (0..m).map(|r| tangential.iter().map(|t| t[r]).collect()).collect(),
                spread: 2.5,
            }),
        }
    }
}

#[derive(Debug, Clone)]
struct Component {
    weight: f64,
    mean: DVector<f64>,
    chol: DMatrix<f64>,
}

/// Sampleable concept distribution with its anchor direction and validity
/// radius.
#[derive(Debug, Clone)]
pub struct ConceptDataset {
    spec: ConceptSpec,
    components: Vec<Component>,
    anchor: Vec<f64>,
    seed: u64,
}

/// Validates `spec` and builds a dataset whose draws are a function of `seed`.
pub fn make_concept(spec: &ConceptSpec, seed: u64) -> Result<ConceptDataset> {
    let m = spec.dim;
    if m == 0 || spec.components.is_empty() {
        return Err(Error::Config("concept needs a dimension and at least one component".into()));
    }
    let total: f64 = spec.components.iter().map(|c| c.weight).sum();
    if spec.components.iter().any(|c| !(c.weight >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("mixture weights must be nonnegative and sum to 1, got {total}")));
    }
    if !(spec.validity_radius > 0.0) {
        return Err(Error::Config("validity radius must be positive".into()));
    }
    if let Some(v) = &spec.variation {
        let d = v.shift.first().map_or(0, Vec::len);
        if v.shift.len() != m || d == 0 || v.shift.iter().any(|r| r.len() != d) {
            return Err(Error::Config(format!("variation shift must be a nonempty {m} x d matrix")));
        }
        if !(v.spread >= 0.0) || !v.spread.is_finite() {
            return Err(Error::Config("variation spread must be nonnegative".into()));
        }
    }
    let mut components = Vec::with_capacity(spec.components.len());
    for (j, c) in spec.components.iter().enumerate() {
        if c.mean.len() != m || c.covariance.len() != m || c.covariance.iter().any(|r| r.len() != m) {
            return Err(Error::Config(format!("component {j} does not match dimension {m}")));
        }
        let cov = DMatrix::from_fn(m, m, |r, s| c.covariance[r][s]);
        if (&cov - cov.transpose()).amax() > 1e-9 * cov.amax().max(1.0) {
            return Err(Error::Config(format!("component {j} covariance is not symmetric")));
        }
        let chol = cov
            .cholesky()
            .ok_or_else(|| Error::Config(format!("component {j} covariance is not positive definite")))?;
        components.push(Component {
            weight: c.weight,
            mean: DVector::from_column_slice(&c.mean),
            chol: chol.l(),
        });
    }
    let anchor = match &spec.anchor {
        Some(a) => {
            if a.len() != m {
                return Err(Error::Config(format!("anchor has length {}, expected {m}", a.len())));
            }
            let n = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(n > 0.0) || !n.is_finite() {
                return Err(Error::Config("anchor must be a finite nonzero vector".into()));
            }
            a.iter().map(|v| v / n).collect()
        }
        None => {
            let mean = components.iter().fold(DVector::zeros(m), |acc, c| acc + &c.mean * c.weight);
            let n = mean.norm();
            if n < 1e-9 {
                return Err(Error::Config(
                    "mixture mean is at the origin; an explicit anchor is required".into(),
                ));
            }
            (mean / n).iter().copied().collect()
        }
    };
    Ok(ConceptDataset { spec: spec.clone(), components, anchor, seed })
}

impl ConceptDataset {
    pub fn spec(&self) -> &ConceptSpec {
        &self.spec
    }

    pub fn id(&self) -> &str {
        &self.spec.id
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    /// Unit-length anchor direction.
    pub fn anchor(&self) -> &[f64] {
        &self.anchor
    }

    pub fn validity_radius(&self) -> f64 {
        self.spec.validity_radius
    }

    pub fn mixture_mean(&self) -> Vec<f64> {
        let m = self.dim();
        let mean = self.components.iter().fold(DVector::zeros(m), |acc, c| acc + &c.mean * c.weight);
        mean.iter().copied().collect()
    }

    pub fn draw(&self, rng: &mut impl Rng) -> Vec<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = self.components.len() - 1;
        for (j, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                pick = j;
                break;
            }
        }
        let c = &self.components[pick];
        let z = DVector::from_vec(standard_normal_vec(rng, self.dim()));
        (&c.mean + &c.chol * z).iter().copied().collect()
    }

    /// Condition width of the variation, if any.
    pub fn variation_dim(&self) -> Option<usize> {
        self.spec.variation.as_ref().map(|v| v.shift[0].len())
    }

    /// A training draw: the condition offset `z` and a sample of the concept
    /// shifted by `shift * z`. Without a variation `z` is empty.
    pub fn draw_varied(&self, rng: &mut impl Rng) -> (Vec<f64>, Vec<f64>) {
        let Some(v) = &self.spec.variation else {
            return (Vec::new(), self.draw(rng));
        };
        let z: Vec<f64> = standard_normal_vec(rng, v.shift[0].len()).into_iter().map(|x| x * v.spread).collect();
        let mut e = self.draw(rng);
        for (ei, row) in e.iter_mut().zip(&v.shift) {
            *ei += row.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>();
        }
        (z, e)
    }

    /// The `i`-th sample of this dataset's own stream.
    pub fn sample(&self, i: u64) -> EmbeddingSample {
        let mut rng = rng_from_seed(derive_seed(self.seed, i));
        EmbeddingSample::new(self.draw(&mut rng)).expect("mixture draws are finite")
    }

    pub fn samples(&self, n: usize) -> Vec<EmbeddingSample> {
        (0..n as u64).map(|i| self.sample(i)).collect()
    }

    /// Smallest per-component Mahalanobis distance.
    pub fn min_component_mahalanobis(&self, e: &[f64]) -> Result<f64> {
        if e.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: e.len() });
        }
        let x = DVector::from_column_slice(e);
        let mut best = f64::INFINITY;
        for c in &self.components {
            let z = c
                .chol
                .solve_lower_triangular(&(&x - &c.mean))
                .ok_or_else(|| Error::NonFinite("component solve".into()))?;
            best = best.min(z.norm());
        }
        Ok(best)
    }

    pub fn component_means(&self) -> Vec<Vec<f64>> {
        self.components.iter().map(|c| c.mean.iter().copied().collect()).collect()
    }
}
