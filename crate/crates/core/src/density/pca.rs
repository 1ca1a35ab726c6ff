use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{check_dim, EmbeddingSample};
use crate::error::{Error, Result};
use crate::tensor::{check_version, dmatrix_block, dvector_block, FORMAT_VERSION};

/// Linear projection onto the top principal directions of a sample set.
///
/// `projection` is `k x m` with orthonormal rows ordered by decreasing
/// eigenvalue; the first non-zero coordinate of each row is positive.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    projection: DMatrix<f64>,
    center: DVector<f64>,
    explained_variance: Vec<f64>,
    fit_size: usize,
}

const SIGN_EPS: f64 = 1e-12;

impl PcaModel {
    /// Fits a `k`-component PCA by eigendecomposition of the sample covariance.
    pub fn fit(samples: &[EmbeddingSample], k: usize) -> Result<Self> {
        let n = samples.len();
        if k == 0 {
            return Err(Error::Fit("k must be positive".into()));
        }
        if n <= k {
            return Err(Error::Fit(format!("need more than k={k} samples, got {n}")));
        }
        let m = samples[0].dim();
        if k > m {
            return Err(Error::Fit(format!("k={k} exceeds ambient dimension {m}")));
        }
        for s in samples {
            check_dim(m, s.dim())?;
        }

        let mut center = DVector::zeros(m);
        for s in samples {
            for (c, v) in center.iter_mut().zip(s.iter()) {
                *c += v;
            }
        }
        center /= n as f64;

        let mut centered = DMatrix::zeros(n, m);
        for (i, s) in samples.iter().enumerate() {
            for j in 0..m {
                centered[(i, j)] = s[j] - center[j];
            }
        }
        let mut cov = centered.tr_mul(&centered) / (n as f64 - 1.0);
        // Exact symmetry before the eigensolver.
        cov = (&cov + cov.transpose()) * 0.5;

        let total: f64 = cov.trace();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::Fit("zero total variance".into()));
        }

        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .partial_cmp(&eig.eigenvalues[a])
                .expect("finite eigenvalues")
                .then(a.cmp(&b))
        });

        let mut projection = DMatrix::zeros(k, m);
        let mut explained_variance = Vec::with_capacity(k);
        for (row, &idx) in order.iter().take(k).enumerate() {
            let v = eig.eigenvectors.column(idx);
            let flip = v
                .iter()
                .find(|x| x.abs() > SIGN_EPS)
                .map_or(false, |x| *x < 0.0);
            let norm = v.norm();
            for j in 0..m {
                let x = v[j] / norm;
                projection[(row, j)] = if flip { -x } else { x };
            }
            explained_variance.push(eig.eigenvalues[idx].max(0.0) / total);
        }

        Ok(Self {
            projection,
            center,
            explained_variance,
            fit_size: n,
        })
    }

    pub fn k(&self) -> usize {
        self.projection.nrows()
    }

    pub fn ambient_dim(&self) -> usize {
        self.projection.ncols()
    }

    pub fn projection(&self) -> &DMatrix<f64> {
        &self.projection
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn explained_variance(&self) -> &[f64] {
        &self.explained_variance
    }

    pub fn fit_size(&self) -> usize {
        self.fit_size
    }

    /// Share of the total variance kept by the retained components.
    pub fn explained_variance_total(&self) -> f64 {
        self.explained_variance.iter().sum()
    }

    /// `W (e - mu0)`.
    pub fn project(&self, e: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.ambient_dim(), e.len())?;
        if e.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("projection input".into()));
        }
        let (k, m) = self.projection.shape();
        let mut out = vec![0.0; k];
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for j in 0..m {
                acc += self.projection[(i, j)] * (e[j] - self.center[j]);
            }
            *o = acc;
        }
        Ok(out)
    }

    /// Maps a reduced vector back to the ambient space, `W^T r + mu0`.
    pub fn reconstruct(&self, reduced: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.k(), reduced.len())?;
        let (k, m) = self.projection.shape();
        let mut out: Vec<f64> = self.center.iter().copied().collect();
        for j in 0..m {
            for (i, r) in reduced.iter().enumerate().take(k) {
                out[j] += self.projection[(i, j)] * r;
            }
        }
        Ok(out)
    }

    pub fn project_all(&self, samples: &[EmbeddingSample]) -> Result<Vec<Vec<f64>>> {
        samples.iter().map(|s| self.project(s)).collect()
    }

    pub fn to_document(&self) -> PcaDocument {
        PcaDocument {
            format_version: FORMAT_VERSION,
            kind: "pca".into(),
            dims: [self.k(), self.ambient_dim()],
            projection: self.projection.clone(),
            center: self.center.clone(),
            explained_variance: self.explained_variance.clone(),
            fit_size: self.fit_size,
        }
    }

    pub fn from_document(doc: PcaDocument) -> Result<Self> {
        check_version(doc.format_version, "pca")?;
        if doc.kind != "pca" {
            return Err(Error::Format(format!("expected kind pca, got {}", doc.kind)));
        }
        let [k, m] = doc.dims;
        if doc.projection.shape() != (k, m) || doc.center.len() != m || doc.explained_variance.len() != k {
            return Err(Error::Format("pca document dims disagree with payload".into()));
        }
        Ok(Self {
            projection: doc.projection,
            center: doc.center,
            explained_variance: doc.explained_variance,
            fit_size: doc.fit_size,
        })
    }
}

/// Persisted form of a [`PcaModel`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PcaDocument {
    pub format_version: u32,
    pub kind: String,
    pub dims: [usize; 2],
    #[serde(with = "dmatrix_block")]
    pub projection: DMatrix<f64>,
    #[serde(with = "dvector_block")]
    pub center: DVector<f64>,
    pub explained_variance: Vec<f64>,
    pub fit_size: usize,
}

impl Serialize for PcaModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_document().serialize(s)
    }
}

impl<'de> Deserialize<'de> for PcaModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        PcaModel::from_document(PcaDocument::deserialize(d)?).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn samples(points: &[&[f64]]) -> Vec<EmbeddingSample> {
        points
            .iter()
            .map(|p| EmbeddingSample::new(p.to_vec()).unwrap())
            .collect()
    }

    fn random_samples(n: usize, m: usize, seed: u64) -> Vec<EmbeddingSample> {
        let mut rng = crate::rng::rng_from_seed(seed);
        (0..n)
            .map(|_| {
                let v = (0..m)
                    .map(|j| rng.random_range(-1.0..1.0) * (1.0 + j as f64))
                    .collect();
                EmbeddingSample::new(v).unwrap()
            })
            .collect()
    }

    #[test]
    fn constant_data_is_rejected() {
        let s = vec![EmbeddingSample::new(vec![1.0, 2.0]).unwrap(); 100];
        let err = PcaModel::fit(&s, 1).unwrap_err();
        assert!(err.to_string().contains("zero total variance"), "{err}");
    }

    #[test]
    fn too_few_samples_is_rejected() {
        let s = samples(&[&[0.0, 1.0], &[1.0, 0.0]]);
        assert!(PcaModel::fit(&s, 2).is_err());
        assert!(PcaModel::fit(&s, 3).is_err());
    }

    #[test]
    fn cross_shaped_points_pick_the_x_axis() {
        let s = samples(&[&[1.0, 0.0], &[-1.0, 0.0], &[0.0, 0.5], &[0.0, -0.5]]);
        let pca = PcaModel::fit(&s, 1).unwrap();
        assert_abs_diff_eq!(pca.projection()[(0, 0)], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pca.projection()[(0, 1)], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pca.explained_variance()[0], 0.8, epsilon = 1e-12);
    }

    #[test]
    fn invariants_hold_on_random_data() {
        let s = random_samples(200, 6, 3);
        let pca = PcaModel::fit(&s, 4).unwrap();
        let w = pca.projection();
        let gram = w * w.transpose();
        assert!((gram - DMatrix::identity(4, 4)).amax() < 1e-9);
        for pair in pca.explained_variance().windows(2) {
            assert!(pair[0] >= pair[1]);
        }
        assert!(pca.explained_variance_total() <= 1.0 + 1e-9);
        let center: Vec<f64> = pca.center().iter().copied().collect();
        assert!(pca.project(&center).unwrap().iter().all(|v| v.abs() < 1e-9));
        for i in 0..4 {
            let first = w.row(i).iter().copied().find(|x| x.abs() > SIGN_EPS).unwrap();
            assert!(first > 0.0);
        }
    }

    #[test]
    fn full_basis_keeps_all_variance() {
        let s = random_samples(50, 5, 9);
        let pca = PcaModel::fit(&s, 5).unwrap();
        assert_abs_diff_eq!(pca.explained_variance_total(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn rank_one_data_keeps_all_variance() {
        let s: Vec<_> = (0..20)
            .map(|i| EmbeddingSample::new(vec![i as f64, 2.0 * i as f64 + 1.0]).unwrap())
            .collect();
        let pca = PcaModel::fit(&s, 1).unwrap();
        assert_abs_diff_eq!(pca.explained_variance_total(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn projecting_center_plus_row_gives_basis_vector() {
        let s = random_samples(100, 5, 11);
        let pca = PcaModel::fit(&s, 3).unwrap();
        for i in 0..3 {
            let e: Vec<f64> = (0..5)
                .map(|j| pca.center()[j] + pca.projection()[(i, j)])
                .collect();
            let r = pca.project(&e).unwrap();
            for (j, v) in r.iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(*v, want, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn reconstruct_then_project_is_idempotent() {
        let s = random_samples(100, 6, 12);
        let pca = PcaModel::fit(&s, 3).unwrap();
        let mut rng = crate::rng::rng_from_seed(5);
        for _ in 0..20 {
            let e: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
            let r = pca.project(&e).unwrap();
            let r2 = pca.project(&pca.reconstruct(&r).unwrap()).unwrap();
            for (a, b) in r.iter().zip(&r2) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let s = random_samples(20, 4, 1);
        let pca = PcaModel::fit(&s, 2).unwrap();
        assert!(matches!(
            pca.project(&[1.0, 2.0]),
            Err(Error::DimensionMismatch { expected: 4, got: 2 })
        ));
    }

    #[test]
    fn document_round_trip() {
        let s = random_samples(30, 4, 2);
        let pca = PcaModel::fit(&s, 2).unwrap();
        let json = serde_json::to_string(&pca).unwrap();
        let back: PcaModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, pca);
    }
}
