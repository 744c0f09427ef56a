use std::fs;
use std::time::Instant;

use aoi_sense::exec::Execution;
use aoi_sense::harness::{self, RunKey, RunMetrics, SweepResults};
use aoi_sense::policies::PolicyKind;
use aoi_sense::ExperimentConfig;

fn smoke() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.scenario.trajectory.num_slots = 300;
    cfg.scenario.codebook.num_beams = 4;
    cfg.scenario.codebook.num_antennas = 4;
    cfg.predictor.age_limit = 2;
    cfg.predictor.epochs = 2;
    cfg.predictor.hidden = vec![32, 32];
    cfg.dqn.epochs = 2;
    cfg.dqn.iterations_per_epoch = 100;
    cfg.dqn.hidden = vec![16, 16];
    cfg.budgets = vec![0.3];
    cfg.v_values = vec![10.0];
    cfg.horizon = 300;
    cfg
}

const ARTIFACTS: [&str; 9] = [
    "predictor.ckpt",
    "predictor.json",
    "qnet.ckpt",
    "qnet.json",
    "predictor_log.csv",
    "dqn_log.csv",
    "metrics.csv",
    "timing.csv",
    "trace.csv",
];

#[test]
fn smoke_run_is_fast_complete_and_reproducible() {
    let cfg = smoke();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let start = Instant::now();
    harness::run_algorithm1(&cfg, 3, Some(&a), Execution::default()).unwrap();
    assert!(start.elapsed().as_secs_f64() < 60.0);
    harness::run_algorithm1(&cfg, 3, Some(&b), Execution::Sequential).unwrap();
    for f in ARTIFACTS {
        assert!(a.join(f).exists(), "{f}");
        if !matches!(f, "timing.csv") {
            assert_eq!(
                fs::read(a.join(f)).unwrap(),
                fs::read(b.join(f)).unwrap(),
                "{f}"
            );
        }
    }
}

#[test]
fn failed_stage_is_named_and_leaves_no_files() {
    let mut cfg = smoke();
    // episodes longer than the training split
    cfg.dqn.iterations_per_epoch = 1000;
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let err = harness::run_algorithm1(&cfg, 0, Some(&out), Execution::default()).unwrap_err();
    assert!(err.to_string().starts_with("train-dqn failed"), "{err}");
    assert!(!out.exists() || fs::read_dir(&out).unwrap().next().is_none());
}

#[test]
fn full_budget_matches_the_always_sense_ceiling() {
    let mut cfg = smoke();
    cfg.budgets = vec![1.0];
    cfg.v_values = vec![100.0];
    let out = harness::run_algorithm1(&cfg, 1, None, Execution::default()).unwrap();
    let data = harness::generate_scenario(&cfg, 1).unwrap();
    let splits = harness::split_dataset(&data, &cfg.split);
    let key = RunKey {
        policy: PolicyKind::Always,
        alpha_max: 1.0,
        v_param: 100.0,
        age_limit: 2,
        seed: 1,
    };
    let (always, _) =
        harness::evaluate_arm(&cfg, &key, &out.predictor, None, &splits.test).unwrap();
    assert!(
        (out.metrics.top1 - always.top1).abs() <= 0.01,
        "{} vs {}",
        out.metrics.top1,
        always.top1
    );
}

#[test]
fn metrics_agree_with_the_trace() {
    let out = harness::run_algorithm1(&smoke(), 2, None, Execution::default()).unwrap();
    let t = &out.inference.trace;
    let n = t.len() as f64;
    let rate = t.iter().filter(|r| r.action).count() as f64 / n;
    let loss = t.iter().map(|r| r.loss).sum::<f64>() / n;
    assert!((rate - out.metrics.sensing_rate).abs() < 1e-12);
    assert!((loss - out.metrics.mean_loss).abs() < 1e-12);
    let ceiling = (4f64).ln() + 10.0;
    assert!(t.iter().all(|r| (0.0..=ceiling).contains(&r.loss)));
    assert!(out.metrics.top3 >= out.metrics.top1);
    assert!((0.0..=1.0).contains(&out.metrics.sensing_rate));
}

fn without_time(rows: &[RunMetrics]) -> Vec<RunMetrics> {
    rows.iter()
        .cloned()
        .map(|mut r| {
            r.wall_time_seconds = 0.0;
            r
        })
        .collect()
}

#[test]
fn sweep_cardinality_and_parallel_equivalence() {
    let mut cfg = smoke();
    cfg.budgets = vec![0.1, 0.3, 0.5, 0.7, 0.9];
    cfg.v_values = vec![];
    cfg.policies = vec![PolicyKind::Randomized, PolicyKind::Periodic];
    cfg.seeds = (0..5).collect();
    let par = harness::sweep(&cfg, Execution::Parallel).unwrap();
    assert_eq!(par.rows.len(), 50);
    for p in [PolicyKind::Randomized, PolicyKind::Periodic] {
        assert_eq!(par.rows.iter().filter(|r| r.policy == p).count(), 25);
    }
    assert!(par.rows.iter().all(|r| r.is_ok()));
    let seq = harness::sweep(&cfg, Execution::Sequential).unwrap();
    assert_eq!(without_time(&par.rows), without_time(&seq.rows));
    assert_eq!(par.curves, seq.curves);
    let summary = par.summary();
    assert_eq!(summary.len(), 10);
    assert!(summary.iter().all(|s| s.runs == 5 && s.failed == 0));

    let dir = tempfile::tempdir().unwrap();
    par.write(dir.path()).unwrap();
    let back = SweepResults::load(dir.path()).unwrap();
    assert_eq!(back.rows.len(), 50);
    let plots = harness::emit_plots(&back, dir.path().join("plots")).unwrap();
    assert!(plots.iter().any(|p| p.ends_with("top3_vs_budget.csv")));
}

#[test]
fn sweep_records_failed_runs_and_continues() {
    let mut cfg = smoke();
    cfg.policies = vec![PolicyKind::Dqn, PolicyKind::Randomized];
    cfg.dqn.iterations_per_epoch = 1000;
    let res = harness::sweep(&cfg, Execution::default()).unwrap();
    assert_eq!(res.rows.len(), 2);
    let dqn = res
        .rows
        .iter()
        .find(|r| r.policy == PolicyKind::Dqn)
        .unwrap();
    assert!(dqn.error.as_deref().unwrap().contains("train-dqn"));
    assert!(dqn.sensing_rate.is_nan());
    assert!(res
        .rows
        .iter()
        .any(|r| r.policy == PolicyKind::Randomized && r.is_ok()));
}

#[test]
fn age_limit_axis_multiplies_rows() {
    let mut cfg = smoke();
    cfg.policies = vec![PolicyKind::Randomized];
    cfg.age_limits = vec![0, 1, 2];
    cfg.seeds = vec![0, 1];
    let res = harness::sweep(&cfg, Execution::default()).unwrap();
    assert_eq!(res.rows.len(), 6);
    let mut ns: Vec<usize> = res.rows.iter().map(|r| r.age_limit).collect();
    ns.dedup();
    assert_eq!(ns, [0, 1, 2]);
}
