use std::path::Path;

use tailseek_core::creative::{NegativeClusterSet, NoCommands, Termination};
use tailseek_core::experiment::{
    cmd_sample_baseline, cmd_train_prior, label_negative, load_record, sha256_file, write_json, write_report, write_trial,
    Baseline, Checkpoint, ClusterFile, Experiment, ExperimentConfig, LOSS_HEADER, PERCENTILE_HEADER, SCATTER_HEADER,
};
use tailseek_core::prior::ConceptSpec;
use tailseek_core::Error;

fn small_config(dir: &Path) -> ExperimentConfig {
    write_json(&dir.join("concept.json"), &ConceptSpec::default_m16()).unwrap();
    let mut cfg = ExperimentConfig { base_dir: dir.to_path_buf(), n_prior: 600, ..Default::default() };
    cfg.train.steps = 150;
    cfg.trial.max_steps = 120;
    cfg.trial.snapshot_size = 64;
    cfg
}

fn config_err(r: tailseek_core::Result<ExperimentConfig>) -> String {
    match r {
        Err(Error::Config(msg)) => msg,
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn config_documents_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let text = serde_json::to_string_pretty(&cfg).unwrap();
    let back = ExperimentConfig::from_json(&text, dir.path()).unwrap();
    assert_eq!(back, cfg);
    let minimal = ExperimentConfig::from_json("{}", dir.path()).unwrap();
    assert_eq!(minimal.trial.optimizer.lr, tailseek_core::experiment::EXPERIMENT_TRIAL_LR);
    assert_eq!(minimal.checkpoint_path(), dir.path().join("out").join("checkpoint.json"));
    assert_eq!(minimal.baseline_dir(), dir.path().join("out").join("baseline"));
    let partial = ExperimentConfig::from_json(r#"{"trial": {"max_steps": 7, "optimizer": {"beta1": 0.5}}}"#, dir.path()).unwrap();
    assert_eq!(partial.trial.max_steps, 7);
    assert_eq!(partial.trial.optimizer.beta1, 0.5);
    assert_eq!(partial.trial.optimizer.lr, tailseek_core::experiment::EXPERIMENT_TRIAL_LR);
    assert_eq!(partial.trial.anchor_threshold, cfg.trial.anchor_threshold);
}

#[test]
fn bad_configs_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(config_err(ExperimentConfig::from_json("{}", d)).contains("concept"));
    small_config(d);
    assert!(config_err(ExperimentConfig::from_json("{not json", d)).contains("invalid config"));
    config_err(ExperimentConfig::from_json("[1, 2]", d));
    config_err(ExperimentConfig::from_json(r#"{"trial": {"bogus": true}}"#, d));
    config_err(ExperimentConfig::from_json(r#"{"unknown_field": 1}"#, d));
    config_err(ExperimentConfig::from_json(r#"{"schema_version": 9}"#, d));
    config_err(ExperimentConfig::from_json(r#"{"pca_k": 0}"#, d));
    config_err(ExperimentConfig::from_json(r#"{"pca_k": 17}"#, d));
    config_err(ExperimentConfig::from_json(r#"{"n_prior": 8}"#, d));
    config_err(ExperimentConfig::from_json(r#"{"sample_steps": 0}"#, d));
    config_err(ExperimentConfig::from_json(r#"{"trial": {"anchor_threshold": 2.5}}"#, d));
    config_err(ExperimentConfig::from_json(r#"{"negative_clusters": "missing.json"}"#, d));
    config_err(ExperimentConfig::load(&d.join("nope.json")));
    std::fs::write(d.join("cfg.json"), r#"{"master_seed": 4}"#).unwrap();
    let cfg = ExperimentConfig::load(&d.join("cfg.json")).unwrap();
    assert_eq!(cfg.master_seed, 4);
    assert_eq!(cfg.base_dir, d);
}

#[test]
fn missing_artifacts_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    assert!(matches!(cmd_sample_baseline(&cfg), Err(Error::Config(_))));
    assert!(matches!(Experiment::load(&cfg), Err(Error::Config(_))));
    let mut wrong = cfg.clone();
    wrong.dims.dim = 8;
    wrong.pca_k = 4;
    assert!(matches!(cmd_train_prior(&wrong), Err(Error::Config(_))));
}

#[test]
fn file_pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());

    let ck = cmd_train_prior(&cfg).unwrap();
    let ck_path = cfg.checkpoint_path();
    assert_eq!(Checkpoint::load(&ck_path).unwrap().net, ck.net);
    let first_hash = sha256_file(&ck_path).unwrap();
    cmd_train_prior(&cfg).unwrap();
    assert_eq!(sha256_file(&ck_path).unwrap(), first_hash);
    let curve = std::fs::read_to_string(ck_path.with_file_name("prior_loss.csv")).unwrap();
    assert_eq!(curve.lines().next().unwrap(), "step,loss");
    assert_eq!(curve.lines().count(), cfg.train.steps + 1);

    let baseline = cmd_sample_baseline(&cfg).unwrap();
    assert_eq!(baseline.summary.checkpoint_sha256, first_hash);
    assert_eq!(baseline.samples.len(), cfg.n_prior);
    let loaded = Baseline::load(&cfg.baseline_dir()).unwrap();
    assert_eq!(loaded.samples, baseline.samples);
    assert_eq!(loaded.model.density, baseline.model.density);

    let exp = Experiment::load(&cfg).unwrap();
    let seed = 3;
    let rec = exp
        .run(seed, exp.initial_space(seed).unwrap(), exp.initial_clusters().unwrap(), &mut NoCommands, &mut |_| {})
        .unwrap();
    assert!(matches!(rec.termination, Termination::Completed | Termination::OracleRejected | Termination::Diverged));
    let path = write_trial(&cfg.output_dir(), &rec).unwrap();
    let rec = load_record(&path).unwrap();

    let cluster = label_negative(&rec, None, None, 0.8).unwrap();
    assert_eq!(cluster.strength, 0.8);
    assert_eq!(label_negative(&rec, None, None, 0.8).unwrap(), cluster);
    assert!(label_negative(&rec, Some(0), Some(&[0, 1]), 1.0).is_err());
    assert!(label_negative(&rec, Some(0), Some(&[0, 1, 9999]), 1.0).is_err());
    assert!(label_negative(&rec, Some(99), None, 1.0).is_err());
    let picked = label_negative(&rec, Some(0), Some(&[0, 1, 2, 3]), 1.0).unwrap();
    assert_eq!(picked.density.dim(), cfg.pca_k);

    let mut set = NegativeClusterSet::new();
    set.push(cluster).unwrap();
    let cl_path = cfg.output_dir().join("clusters.json");
    write_json(&cl_path, &ClusterFile::new(set.clone())).unwrap();
    let again = cfg.output_dir().join("clusters-again.json");
    write_json(&again, &ClusterFile::new(set.clone())).unwrap();
    assert_eq!(sha256_file(&cl_path).unwrap(), sha256_file(&again).unwrap());
    assert_eq!(ClusterFile::load(&cl_path).unwrap().clusters, set);
    assert!(ClusterFile::load(&path).is_err());
    assert!(load_record(&cl_path).is_err());

    let mut with_clusters = cfg.clone();
    with_clusters.negative_clusters = Some(cl_path);
    with_clusters.validate().unwrap();
    let exp = Experiment::load(&with_clusters).unwrap();
    assert_eq!(exp.initial_clusters().unwrap(), set);

    let report = dir.path().join("report");
    let other = {
        let exp = Experiment::load(&cfg).unwrap();
        exp.run(4, exp.initial_space(4).unwrap(), NegativeClusterSet::new(), &mut NoCommands, &mut |_| {}).unwrap()
    };
    write_report(&report, &[rec.clone(), other.clone()]).unwrap();
    let pct = std::fs::read_to_string(report.join("percentile.csv")).unwrap();
    assert_eq!(pct.lines().next().unwrap(), PERCENTILE_HEADER.join(","));
    assert_eq!(pct.lines().count(), 1 + rec.snapshots.len() + other.snapshots.len());
    let series: std::collections::BTreeSet<&str> = pct.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(series.into_iter().collect::<Vec<_>>(), ["seed-3", "seed-4"]);
    let loss = std::fs::read_to_string(report.join("loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 1 + rec.rows.len() + other.rows.len());
    let scatter = std::fs::read_to_string(report.join("scatter-seed-3.csv")).unwrap();
    assert_eq!(scatter.lines().next().unwrap(), "iteration,x,y,cluster_tag");
    let tags: std::collections::BTreeSet<&str> = scatter.lines().skip(1).map(|l| l.rsplit(',').next().unwrap()).collect();
    assert!(tags.contains("baseline"));
    assert_eq!(scatter.lines().count(), 1 + rec.snapshots.iter().map(|s| s.len()).sum::<usize>());
}

#[test]
fn empty_report_has_headers_only() {
    let dir = tempfile::tempdir().unwrap();
    write_report(dir.path(), &[]).unwrap();
    assert_eq!(std::fs::read_to_string(dir.path().join("percentile.csv")).unwrap(), PERCENTILE_HEADER.join(",") + "\n");
    assert_eq!(std::fs::read_to_string(dir.path().join("loss.csv")).unwrap(), LOSS_HEADER.join(",") + "\n");
    assert_eq!(SCATTER_HEADER, ["iteration", "x", "y", "cluster_tag"]);
}
