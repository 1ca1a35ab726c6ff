use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::*;
use crate::autodiff::{Graph, ParameterSet};
use crate::density::{EmbeddingSample, GaussianDensity, PcaModel};
use crate::prior::{make_concept, ConceptSpec};

fn diag(values: &[f64]) -> GaussianDensity {
    let k = values.len();
    GaussianDensity::new(DVector::zeros(k), DMatrix::from_diagonal(&DVector::from_row_slice(values))).unwrap()
}

fn normal_rows(n: usize, k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..k).map(|_| StandardNormal.sample(&mut rng)).collect()).collect()
}

fn cluster_set(density: GaussianDensity, strength: f64) -> NegativeClusterSet {
    let mut set = NegativeClusterSet::new();
    set.push(NegativeCluster { density, strength }).unwrap();
    set
}

#[test]
fn creative_loss_of_a_unit_normal_at_two() {
    let (v, g) = creative_loss(&diag(&[1.0]), &[2.0]).unwrap();
    assert_relative_eq!(v, -2.9189385332046727, epsilon = 1e-9);
    assert_relative_eq!(g[0], -2.0, epsilon = 1e-12);
}

#[test]
fn creative_loss_peaks_at_the_mean() {
    let g = diag(&[2.0, 0.5, 1.0]);
    let (at_mean, grad) = creative_loss(&g, &[0.0; 3]).unwrap();
    assert!(grad.iter().all(|v| *v == 0.0));
    for x in normal_rows(50, 3, 1) {
        assert!(creative_loss(&g, &x).unwrap().0 < at_mean);
    }
}

#[test]
fn a_small_descent_step_lowers_the_creative_loss() {
    let g = diag(&[2.0, 0.5]);
    for x in normal_rows(20, 2, 2) {
        let (v, grad) = creative_loss(&g, &x).unwrap();
        let stepped: Vec<f64> = x.iter().zip(&grad).map(|(a, d)| a - 1e-3 * d).collect();
        assert!(creative_loss(&g, &stepped).unwrap().0 < v);
    }
}

#[test]
fn anchor_loss_spans_zero_to_two() {
    let a = [0.6, 0.8, 0.0];
    assert_relative_eq!(anchor_loss(&[1.2, 1.6, 0.0], &a).unwrap().0, 0.0, epsilon = 1e-12);
    assert_relative_eq!(anchor_loss(&[0.0, 0.0, 3.0], &a).unwrap().0, 1.0, epsilon = 1e-12);
    assert_relative_eq!(anchor_loss(&[-0.6, -0.8, 0.0], &a).unwrap().0, 2.0, epsilon = 1e-12);
    assert!(anchor_loss(&[0.0; 3], &a).is_err());
    assert!(anchor_loss(&[1.0, 0.0], &a).is_err());
}

#[test]
fn anchor_gradient_matches_finite_differences() {
    let a = [0.5, -0.5, 0.5, 0.5];
    for x in normal_rows(10, 4, 3) {
        let (_, grad) = anchor_loss(&x, &a).unwrap();
        for i in 0..4 {
            let h = 1e-6;
            let mut p = x.clone();
            let mut m = x.clone();
            p[i] += h;
            m[i] -= h;
            let fd = (anchor_loss(&p, &a).unwrap().0 - anchor_loss(&m, &a).unwrap().0) / (2.0 * h);
            assert_relative_eq!(grad[i], fd, epsilon = 1e-7);
        }
    }
}

#[test]
fn empty_or_zero_strength_clusters_contribute_nothing() {
    let x = [0.3, -1.0];
    let (v, g) = negative_loss(&NegativeClusterSet::new(), &x, NegSign::Repulsive).unwrap();
    assert_eq!(v, 0.0);
    assert!(g.iter().all(|d| *d == 0.0));
    let (v, g) = negative_loss(&cluster_set(diag(&[1.0, 1.0]), 0.0), &x, NegSign::Repulsive).unwrap();
    assert_eq!(v, 0.0);
    assert!(g.iter().all(|d| *d == 0.0));
}

#[test]
fn repulsive_loss_falls_along_every_ray_from_the_cluster_center() {
    let center = DVector::from_row_slice(&[1.0, -2.0, 0.5]);
    let cov = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.0, 0.3, 0.5, 0.1, 0.0, 0.1, 2.0]);
    let set = cluster_set(GaussianDensity::new(center.clone(), cov).unwrap(), 0.7);
    let c: Vec<f64> = center.iter().copied().collect();
    let (at_center, grad) = negative_loss(&set, &c, NegSign::Repulsive).unwrap();
    assert!(grad.iter().all(|d| d.abs() < 1e-12));
    for dir in normal_rows(40, 3, 4) {
        let mut prev = at_center;
        for step in 1..=5 {
            let t = 0.2 * step as f64;
            let p: Vec<f64> = c.iter().zip(&dir).map(|(a, d)| a + t * d).collect();
            let v = negative_loss(&set, &p, NegSign::Repulsive).unwrap().0;
            assert!(v < prev);
            prev = v;
        }
    }
    let (attractive, _) = negative_loss(&set, &c, NegSign::Attractive).unwrap();
    assert_relative_eq!(attractive, -at_center, epsilon = 1e-12);
}

#[test]
fn negative_loss_sums_weighted_cluster_terms() {
    let a = diag(&[1.0, 2.0]);
    let b = GaussianDensity::new(DVector::from_row_slice(&[3.0, 0.0]), DMatrix::identity(2, 2)).unwrap();
    let mut set = cluster_set(a.clone(), 0.5);
    set.push(NegativeCluster { density: b.clone(), strength: 2.0 }).unwrap();
    let x = [0.4, 1.1];
    let (v, _) = negative_loss(&set, &x, NegSign::Repulsive).unwrap();
    assert_relative_eq!(v, 0.5 * a.log_pdf(&x).unwrap() + 2.0 * b.log_pdf(&x).unwrap(), epsilon = 1e-12);
    assert!(set.clone().push(NegativeCluster { density: b, strength: -1.0 }).is_err());
}

#[test]
fn total_loss_follows_the_branch() {
    assert_eq!(total_loss(-3.0, 0.25, 0.4, Branch::Anchor), 0.4);
    assert_eq!(total_loss(-3.0, 0.0, 0.1, Branch::Creative), -3.0);
    assert_eq!(total_loss(-3.0, 0.25, 0.1, Branch::Creative), -2.75);
    assert!(total_loss(-1e3, 5.0, 2.0, Branch::Creative).is_finite());
}

#[test]
fn branch_selection_treats_the_threshold_as_a_violation() {
    assert_eq!(dynamic_loss_select(0.0, 0.3), (Branch::Creative, SeedPolicy::NewSeed));
    assert_eq!(dynamic_loss_select(0.5, 0.3), (Branch::Anchor, SeedPolicy::SameSeed));
    assert_eq!(dynamic_loss_select(0.3, 0.3), (Branch::Anchor, SeedPolicy::SameSeed));
    assert_eq!(dynamic_loss_select(f64::NAN, 0.3), (Branch::Anchor, SeedPolicy::SameSeed));
}

struct Counting(std::sync::atomic::AtomicUsize);

impl ValidityOracle for Counting {
    fn id(&self) -> &str {
        "counting"
    }

    fn accepts(&self, _e: &[f64]) -> bool {
        self.0.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        false
    }
}

#[test]
fn validity_runs_only_on_interval_multiples() {
    let o = Counting(Default::default());
    assert_eq!(validity_check(&o, &[1.0], 25, 25), Validity::Fail);
    assert_eq!(validity_check(&o, &[1.0], 26, 25), Validity::Skipped);
    assert_eq!(validity_check(&o, &[1.0], 0, 25), Validity::Fail);
    assert_eq!(validity_check(&o, &[1.0], 49, 25), Validity::Skipped);
    assert_eq!(o.0.load(std::sync::atomic::Ordering::SeqCst), 2);
    assert_eq!(validity_check(&AlwaysPass, &[1.0], 50, 25), Validity::Pass);
}

#[test]
fn concept_oracle_accepts_component_means_and_rejects_far_points() {
    let concept = make_concept(&ConceptSpec::default_m16(), 5).unwrap();
    let oracle = OracleConfig::default().build(&concept);
    for mean in concept.component_means() {
        assert_eq!(validity_check(oracle.as_ref(), &mean, 25, 25), Validity::Pass);
    }
    let far: Vec<f64> = concept.anchor().iter().map(|a| -40.0 * a).collect();
    assert_eq!(validity_check(oracle.as_ref(), &far, 25, 25), Validity::Fail);
    let tight = OracleConfig::ConceptRegion { radius: Some(0.0) }.build(&concept);
    let off: Vec<f64> = concept.component_means()[0].iter().map(|v| v + 0.5).collect();
    assert!(!tight.accepts(&off));
}

fn pca_on_normals(m: usize, k: usize) -> PcaModel {
    let rows = normal_rows(500, m, 6);
    let scaled: Vec<EmbeddingSample> = rows
        .into_iter()
        .map(|r| EmbeddingSample::new(r.iter().enumerate().map(|(i, v)| v * (m - i) as f64).collect()).unwrap())
        .collect();
    PcaModel::fit(&scaled, k).unwrap()
}

#[test]
fn tight_labels_fit_a_small_cluster_at_the_projected_point() {
    let pca = pca_on_normals(6, 3);
    let p = [2.0, -1.0, 0.5, 3.0, 0.0, 1.0];
    let labeled: Vec<EmbeddingSample> = normal_rows(100, 6, 7)
        .into_iter()
        .map(|n| EmbeddingSample::new(p.iter().zip(&n).map(|(a, b)| a + 1e-3 * b).collect()).unwrap())
        .collect();
    let c = fit_negative_cluster(&labeled, &pca, 0.35).unwrap();
    let target = pca.project(&p).unwrap();
    for (got, want) in c.density.mean().iter().zip(&target) {
        assert!((got - want).abs() < 1e-3);
    }
    assert!(c.density.covariance().iter().all(|v| v.abs() < 1e-4));
    assert_eq!(c.strength, 0.35);
    assert_eq!(fit_negative_cluster(&labeled, &pca, 0.35).unwrap(), c);
}

#[test]
fn small_label_sets_are_shrunk_or_refused() {
    let pca = pca_on_normals(6, 3);
    let labeled: Vec<EmbeddingSample> =
        normal_rows(3, 6, 8).into_iter().map(|r| EmbeddingSample::new(r).unwrap()).collect();
    let c = fit_negative_cluster(&labeled, &pca, 1.0).unwrap();
    assert_eq!(c.density.dim(), 3);
    assert!(c.density.log_pdf(&[0.0; 3]).unwrap().is_finite());
    assert!(fit_negative_cluster(&labeled[..2], &pca, 1.0).is_err());
    assert!(fit_negative_cluster(&labeled, &pca, -0.1).is_err());
    assert!(fit_reduced_cluster(&[vec![0.0; 3], vec![1.0; 3]], 1.0).is_err());
}

fn baseline_model(n: usize) -> (BaselineModel, Vec<Vec<f64>>) {
    let rows = normal_rows(n, 5, 9);
    let samples: Vec<EmbeddingSample> = rows
        .iter()
        .map(|r| EmbeddingSample::new(r.iter().enumerate().map(|(i, v)| 1.0 + v * (5 - i) as f64).collect()).unwrap())
        .collect();
    let model = BaselineModel::fit(&samples, 3).unwrap();
    let reduced = model.pca.project_all(&samples).unwrap();
    (model, reduced)
}

#[test]
fn baseline_samples_sit_at_the_median_percentile() {
    let (model, reduced) = baseline_model(4000);
    let stats = snapshot_stats(&reduced, &model).unwrap();
    assert!((stats.median_percentile - 50.0).abs() <= 3.0, "{}", stats.median_percentile);
    let fresh = model.pca.project_all(&{
        normal_rows(10000, 5, 10)
            .into_iter()
            .map(|r| EmbeddingSample::new(r.iter().enumerate().map(|(i, v)| 1.0 + v * (5 - i) as f64).collect()).unwrap())
            .collect::<Vec<_>>()
    });
    let fresh_stats = snapshot_stats(&fresh.unwrap(), &model).unwrap();
    assert!((fresh_stats.median_percentile - 50.0).abs() <= 3.0, "{}", fresh_stats.median_percentile);
}

#[test]
fn repeated_mean_is_top_percentile_and_deep_tail_is_all_beyond() {
    let (model, _) = baseline_model(2000);
    let mean: Vec<f64> = model.density.mean().iter().copied().collect();
    let at_mean = snapshot_stats(&vec![mean; 16], &model).unwrap();
    assert!(at_mean.median_percentile >= 99.9);
    assert_eq!(at_mean.fraction_beyond_3sigma, 0.0);
    assert_relative_eq!(at_mean.mean_mahalanobis, 0.0, epsilon = 1e-9);
    let tail: Vec<Vec<f64>> = normal_rows(32, 3, 11).into_iter().map(|r| r.iter().map(|v| 100.0 + v).collect()).collect();
    let deep = snapshot_stats(&tail, &model).unwrap();
    assert_eq!(deep.fraction_beyond_3sigma, 1.0);
    assert_eq!(deep.median_percentile, 0.0);
    assert!(snapshot_stats(&[], &model).is_err());
}

#[test]
fn graph_losses_agree_with_closed_forms() {
    let cov = DMatrix::from_row_slice(2, 2, &[1.5, 0.4, 0.4, 0.7]);
    let density = GaussianDensity::new(DVector::from_row_slice(&[0.2, -0.1]), cov).unwrap();
    let anchor = [0.6, 0.8];
    let clusters = cluster_set(diag(&[0.5, 0.5]), 0.8);
    let params = ParameterSet::new();
    for x in normal_rows(10, 2, 12) {
        let mut g = Graph::new();
        let input = g.input(2);
        let lp = log_pdf_node(&mut g, &density, input).unwrap();
        let an = anchor_node(&mut g, input, &anchor).unwrap();
        let ng = negative_node(&mut g, &clusters, input, NegSign::Repulsive).unwrap();
        g.forward(&[&x], &params).unwrap();
        let (cv, cg) = creative_loss(&density, &x).unwrap();
        let (av, ag) = anchor_loss(&x, &anchor).unwrap();
        let (nv, ngrad) = negative_loss(&clusters, &x, NegSign::Repulsive).unwrap();
        assert_relative_eq!(g.scalar(lp).unwrap(), cv, epsilon = 1e-12);
        assert_relative_eq!(g.scalar(an).unwrap(), av, epsilon = 1e-12);
        assert_relative_eq!(g.scalar(ng).unwrap(), nv, epsilon = 1e-12);
        for (node, want) in [(lp, cg), (an, ag), (ng, ngrad)] {
            let grads = g.backward_scalar(node, &params).unwrap();
            for (a, b) in grads.input(0).data().iter().zip(&want) {
                assert_relative_eq!(*a, *b, epsilon = 1e-10);
            }
        }
    }
}

#[test]
fn projection_node_matches_the_model() {
    let pca = pca_on_normals(6, 3);
    let params = ParameterSet::new();
    let x = [0.3, 1.0, -2.0, 0.5, 0.0, 4.0];
    let mut g = Graph::new();
    let input = g.input(6);
    let out = project_node(&mut g, &pca, input).unwrap();
    g.forward(&[&x], &params).unwrap();
    for (a, b) in g.value(out).unwrap().iter().zip(pca.project(&x).unwrap()) {
        assert_relative_eq!(*a, b, epsilon = 1e-12);
    }
}

#[test]
fn loss_config_rejects_bad_settings() {
    assert!(LossConfig::default().validate().is_ok());
    for bad in [
        LossConfig { anchor_threshold: 0.0, ..Default::default() },
        LossConfig { anchor_threshold: 2.0, ..Default::default() },
        LossConfig { checker_interval: 0, ..Default::default() },
        LossConfig { snapshot_interval: 0, ..Default::default() },
        LossConfig { grad_clip_norm: 0.0, ..Default::default() },
        LossConfig { snapshot_size: 0, ..Default::default() },
        LossConfig { default_neg_strength: -1.0, ..Default::default() },
    ] {
        assert!(bad.validate().is_err());
    }
    let json = serde_json::to_string(&LossConfig::default()).unwrap();
    assert_eq!(serde_json::from_str::<LossConfig>(&json).unwrap(), LossConfig::default());
    assert_eq!(serde_json::from_str::<LossConfig>("{}").unwrap(), LossConfig::default());
}
