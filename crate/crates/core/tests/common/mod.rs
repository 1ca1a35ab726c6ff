#![allow(dead_code)]

use std::sync::OnceLock;

use tailseek_core::creative::{LossConfig, NegativeClusterSet, NoCommands, TrialContext, TrialRecord, ValidityOracle};
use tailseek_core::experiment::{build_baseline, train_checkpoint, write_json, Experiment, ExperimentConfig};
use tailseek_core::prior::ConceptSpec;

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub exp: Experiment,
}

/// Default experiment, trained once per test binary.
pub fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        write_json(&dir.path().join("concept.json"), &ConceptSpec::default_m16()).unwrap();
        let cfg = ExperimentConfig { base_dir: dir.path().to_path_buf(), ..Default::default() };
        cfg.validate().unwrap();
        let (ck, _) = train_checkpoint(&cfg).unwrap();
        let baseline = build_baseline(&cfg, &ck, "fixture".into()).unwrap();
        let exp = Experiment::from_parts(cfg, ck, baseline).unwrap();
        Fixture { dir, exp }
    })
}

pub fn trial_config(max_steps: u64) -> LossConfig {
    LossConfig { max_steps, ..fixture().exp.config.trial.clone() }
}

pub fn run_with(cfg: &LossConfig, oracle: Option<&dyn ValidityOracle>, clusters: NegativeClusterSet, seed: u64) -> TrialRecord {
    let exp = &fixture().exp;
    let mut ctx: TrialContext<'_> = exp.context();
    if let Some(o) = oracle {
        ctx.oracle = o;
    }
    let space = exp.initial_space(seed).unwrap();
    tailseek_core::creative::run_trial(&ctx, space, clusters, cfg, seed, &mut NoCommands, &mut |_| {}).unwrap()
}
