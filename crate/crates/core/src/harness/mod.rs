//! End-to-end pipeline (scenario, predictor, sensing agent, inference),
//! experiment sweeps, result tables and plots.

mod config;
mod manifest;
pub mod plot;

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{default_v, ConfigError, ExperimentConfig, ScenarioConfig, SplitConfig};
pub use manifest::{sha256_hex, write_manifest, Manifest, OutputHash, MANIFEST_FILE};

use crate::aoi_queue::BudgetConfig;
use crate::dqn::{self, DqnLog, InferenceMetrics, SensingAgent};
use crate::env::{self, ScenarioSample};
use crate::exec::{self, Execution};
use crate::policies::{self, PolicyKind};
use crate::predictor::{Predictor, TrainingLog};
use plot::{Chart, Series};

pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const CURVES_FILE: &str = "curves.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const TRACE_FILE: &str = "trace.csv";
pub const PREDICTOR_LOG_FILE: &str = "predictor_log.csv";
pub const DQN_LOG_FILE: &str = "dqn_log.csv";
pub const SCENARIO_FILE: &str = "scenario.csv";

/// Maximum number of points kept per run for the running-rate curves.
const CURVE_POINTS: usize = 200;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{stage} failed: {message}")]
    Stage {
        stage: &'static str,
        message: String,
    },
    #[error("{0}")]
    NoResults(String),
    #[error("{path}: {message}")]
    Csv { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

fn stage<E: Display>(stage: &'static str) -> impl Fn(E) -> HarnessError {
    move |e| HarnessError::Stage {
        stage,
        message: e.to_string(),
    }
}

const STREAM_SCENARIO: u64 = 1;
const STREAM_PREDICTOR: u64 = 2;
const STREAM_DQN: u64 = 3;
const STREAM_POLICY: u64 = 4;

/// Independent per-purpose seed (splitmix64 finaliser).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSplits {
    pub train: Vec<ScenarioSample>,
    pub validation: Vec<ScenarioSample>,
    pub test: Vec<ScenarioSample>,
}

/// Contiguous split in slot order.
pub fn split_dataset(samples: &[ScenarioSample], split: &SplitConfig) -> DataSplits {
    let n = samples.len();
    let a = ((n as f64) * split.train).round() as usize;
    let b = (((n as f64) * (split.train + split.validation)).round() as usize).max(a);
    DataSplits {
        train: samples[..a.min(n)].to_vec(),
        validation: samples[a.min(n)..b.min(n)].to_vec(),
        test: samples[b.min(n)..].to_vec(),
    }
}

pub fn generate_scenario(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<ScenarioSample>> {
    let mut traj = cfg.scenario.trajectory.clone();
    traj.seed = derive_seed(traj.seed ^ seed, STREAM_SCENARIO);
    env::generate_trajectory(&traj, &cfg.scenario.codebook, &cfg.scenario.channel)
        .map_err(stage("generate"))
}

pub fn train_predictor_stage(
    cfg: &ExperimentConfig,
    train: &[ScenarioSample],
    age_limit: usize,
    seed: u64,
) -> Result<(Predictor, TrainingLog)> {
    let pcfg = crate::predictor::PredictorConfig {
        age_limit,
        ..cfg.predictor.clone()
    };
    Predictor::train(
        train,
        &pcfg,
        cfg.num_beams(),
        derive_seed(seed, STREAM_PREDICTOR),
    )
    .map_err(stage("train-predictor"))
}

pub fn train_dqn_stage(
    cfg: &ExperimentConfig,
    predictor: &Predictor,
    train: &[ScenarioSample],
    budget: BudgetConfig,
    seed: u64,
    exec: Execution,
) -> Result<(SensingAgent, DqnLog)> {
    dqn::train_sensing_policy(
        predictor,
        train,
        &budget,
        &cfg.dqn,
        cfg.loss,
        derive_seed(seed, STREAM_DQN),
        exec,
    )
    .map_err(stage("train-dqn"))
}

/// One evaluated run. Failed runs carry `error` and NaN metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub policy: PolicyKind,
    pub alpha_max: f64,
    pub v_param: f64,
    pub age_limit: usize,
    pub seed: u64,
    pub sensing_rate: f64,
    pub mean_queue: f64,
    pub top1: f64,
    pub top3: f64,
    pub mean_loss: f64,
    pub acquisitions: usize,
    /// Mean queue over the second and last quarter of the run.
    pub queue_q2: f64,
    pub queue_q4: f64,
    /// Prefix length after which the running rate stays within budget + 0.02.
    pub time_to_compliance: usize,
    pub wall_time_seconds: f64,
    pub error: Option<String>,
}

/// Compliance slack used for `time_to_compliance`.
pub const COMPLIANCE_SLACK: f64 = 0.02;

impl RunMetrics {
    fn from_inference(key: &RunKey, m: &InferenceMetrics, wall: f64) -> Self {
        Self {
            policy: key.policy,
            alpha_max: key.alpha_max,
            v_param: key.v_param,
            age_limit: key.age_limit,
            seed: key.seed,
            sensing_rate: m.sensing_rate,
            mean_queue: m.mean_queue,
            top1: m.top1,
            top3: m.top3,
            mean_loss: m.mean_loss,
            acquisitions: m.acquisitions,
            queue_q2: m.quarter_mean_queue(1),
            queue_q4: m.quarter_mean_queue(3),
            time_to_compliance: m.time_to_stable_compliance(key.alpha_max + COMPLIANCE_SLACK),
            wall_time_seconds: wall,
            error: None,
        }
    }

    fn failed(key: &RunKey, error: String) -> Self {
        Self {
            policy: key.policy,
            alpha_max: key.alpha_max,
            v_param: key.v_param,
            age_limit: key.age_limit,
            seed: key.seed,
            sensing_rate: f64::NAN,
            mean_queue: f64::NAN,
            top1: f64::NAN,
            top3: f64::NAN,
            mean_loss: f64::NAN,
            acquisitions: 0,
            queue_q2: f64::NAN,
            queue_q4: f64::NAN,
            time_to_compliance: 0,
            wall_time_seconds: f64::NAN,
            error: Some(error),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunKey {
    pub policy: PolicyKind,
    pub alpha_max: f64,
    pub v_param: f64,
    pub age_limit: usize,
    pub seed: u64,
}

/// Runs one policy arm through inference on `test`, timing only the
/// inference loop.
pub fn evaluate_arm(
    cfg: &ExperimentConfig,
    key: &RunKey,
    predictor: &Predictor,
    agent: Option<&SensingAgent>,
    test: &[ScenarioSample],
) -> Result<(RunMetrics, InferenceMetrics)> {
    let policy_seed = derive_seed(key.seed, STREAM_POLICY);
    let mut baseline =
        policies::baseline(key.policy, key.alpha_max, policy_seed).map_err(stage("inference"))?;
    let mut greedy;
    let policy: &mut dyn policies::SensingPolicy = match baseline.as_deref_mut() {
        Some(p) => p,
        None => {
            let agent = agent.ok_or_else(|| HarnessError::Stage {
                stage: "inference",
                message: "dqn policy needs a trained agent".into(),
            })?;
            greedy = agent.policy();
            &mut greedy
        }
    };
    let start = Instant::now();
    let m = dqn::run_inference(
        policy,
        predictor,
        test,
        key.alpha_max,
        cfg.horizon,
        cfg.loss,
    )
    .map_err(stage("inference"))?;
    let wall = start.elapsed().as_secs_f64();
    Ok((RunMetrics::from_inference(key, &m, wall), m))
}

/// Artifacts of one end-to-end run.
#[derive(Debug, Clone)]
pub struct Algorithm1Output {
    pub predictor: Predictor,
    pub predictor_log: TrainingLog,
    pub agent: SensingAgent,
    pub dqn_log: DqnLog,
    pub metrics: RunMetrics,
    pub inference: InferenceMetrics,
}

/// Deletes registered files on drop unless committed.
struct OutputGuard {
    paths: Vec<PathBuf>,
    committed: bool,
}

impl OutputGuard {
    fn new() -> Self {
        Self {
            paths: Vec::new(),
            committed: false,
        }
    }

    fn add(&mut self, p: PathBuf) -> PathBuf {
        self.paths.push(p.clone());
        p
    }
}

impl Drop for OutputGuard {
    fn drop(&mut self) {
        if !self.committed {
            for p in &self.paths {
                let _ = fs::remove_file(p);
            }
        }
    }
}

/// Scenario -> augmented predictor -> sensing agent -> inference for the
/// first budget arm and `predictor.age_limit`. With `out_dir`, writes
/// checkpoints, logs, `metrics.csv` (deterministic), `timing.csv` and the
/// per-slot trace; on failure the files written so far are removed.
pub fn run_algorithm1(
    cfg: &ExperimentConfig,
    seed: u64,
    out_dir: Option<&Path>,
    exec: Execution,
) -> Result<Algorithm1Output> {
    cfg.validate()?;
    let (alpha_max, v_param) = cfg.budget_arms()[0];
    let budget = BudgetConfig::new(alpha_max, v_param).map_err(stage("config"))?;
    let data = generate_scenario(cfg, seed)?;
    let splits = split_dataset(&data, &cfg.split);
    let age_limit = cfg.predictor.age_limit;
    let (predictor, predictor_log) = train_predictor_stage(cfg, &splits.train, age_limit, seed)?;
    let (agent, dqn_log) = train_dqn_stage(cfg, &predictor, &splits.train, budget, seed, exec)?;
    let key = RunKey {
        policy: PolicyKind::Dqn,
        alpha_max,
        v_param,
        age_limit,
        seed,
    };
    let (metrics, inference) = evaluate_arm(cfg, &key, &predictor, Some(&agent), &splits.test)?;

    if let Some(dir) = out_dir {
        let mut guard = OutputGuard::new();
        fs::create_dir_all(dir)?;
        let write = |guard: &mut OutputGuard| -> Result<()> {
            for f in [
                crate::predictor::CHECKPOINT_FILE,
                crate::predictor::META_FILE,
            ] {
                guard.add(dir.join(f));
            }
            predictor.save(dir).map_err(stage("write"))?;
            for f in [dqn::AGENT_CHECKPOINT_FILE, dqn::AGENT_META_FILE] {
                guard.add(dir.join(f));
            }
            agent.save(dir).map_err(stage("write"))?;
            predictor_log.write_csv(guard.add(dir.join(PREDICTOR_LOG_FILE)))?;
            dqn_log.write_csv(guard.add(dir.join(DQN_LOG_FILE)))?;
            write_metrics_csv(
                guard.add(dir.join(METRICS_FILE)),
                std::slice::from_ref(&metrics),
            )?;
            write_timing_csv(
                guard.add(dir.join(TIMING_FILE)),
                std::slice::from_ref(&metrics),
            )?;
            write_trace_csv(guard.add(dir.join(TRACE_FILE)), &inference)?;
            Ok(())
        };
        write(&mut guard)?;
        guard.committed = true;
    }
    Ok(Algorithm1Output {
        predictor,
        predictor_log,
        agent,
        dqn_log,
        metrics,
        inference,
    })
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> HarnessError + '_ {
    move |e| HarnessError::Csv {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

const METRIC_COLUMNS: [&str; 14] = [
    "policy",
    "alpha_max",
    "v_param",
    "age_limit",
    "seed",
    "sensing_rate",
    "mean_queue",
    "top1",
    "top3",
    "mean_loss",
    "acquisitions",
    "queue_q2",
    "queue_q4",
    "time_to_compliance",
];

/// Every metric except wall time, so identical runs give identical bytes.
pub fn write_metrics_csv(path: impl AsRef<Path>, rows: &[RunMetrics]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(METRIC_COLUMNS).map_err(csv_err(path))?;
    for r in rows {
        w.write_record([
            r.policy.to_string(),
            r.alpha_max.to_string(),
            r.v_param.to_string(),
            r.age_limit.to_string(),
            r.seed.to_string(),
            r.sensing_rate.to_string(),
            r.mean_queue.to_string(),
            r.top1.to_string(),
            r.top3.to_string(),
            r.mean_loss.to_string(),
            r.acquisitions.to_string(),
            r.queue_q2.to_string(),
            r.queue_q4.to_string(),
            r.time_to_compliance.to_string(),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_timing_csv(path: impl AsRef<Path>, rows: &[RunMetrics]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record([
        "policy",
        "alpha_max",
        "v_param",
        "age_limit",
        "seed",
        "wall_time_seconds",
    ])
    .map_err(csv_err(path))?;
    for r in rows {
        w.write_record([
            r.policy.to_string(),
            r.alpha_max.to_string(),
            r.v_param.to_string(),
            r.age_limit.to_string(),
            r.seed.to_string(),
            r.wall_time_seconds.to_string(),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace_csv(path: impl AsRef<Path>, m: &InferenceMetrics) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for r in &m.trace {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub policy: PolicyKind,
    pub alpha_max: f64,
    pub v_param: f64,
    pub age_limit: usize,
    pub seed: u64,
    pub step: usize,
    pub running_rate: f64,
    pub queue: f64,
}

pub fn curve_points(key: &RunKey, m: &InferenceMetrics) -> Vec<CurvePoint> {
    let n = m.trace.len();
    let stride = n.div_ceil(CURVE_POINTS).max(1);
    let rate = m.running_rate();
    (0..n)
        .filter(|i| (i + 1) % stride == 0 || i + 1 == n)
        .map(|i| CurvePoint {
            policy: key.policy,
            alpha_max: key.alpha_max,
            v_param: key.v_param,
            age_limit: key.age_limit,
            seed: key.seed,
            step: i + 1,
            running_rate: rate[i],
            queue: m.trace[i].queue,
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepResults {
    pub rows: Vec<RunMetrics>,
    pub curves: Vec<CurvePoint>,
}

/// Runs the cross product of budget arms, policies, age limits and seeds.
///
/// Stages (scenarios, predictors, agents, inference runs) each fan out over
/// their independent keys; a failure is recorded on the affected rows and
/// the sweep continues.
pub fn sweep(cfg: &ExperimentConfig, exec: Execution) -> Result<SweepResults> {
    cfg.validate()?;
    exec::with_workers(cfg.workers, || sweep_inner(cfg, exec))
}

fn sweep_inner(cfg: &ExperimentConfig, exec: Execution) -> Result<SweepResults> {
    let seeds = &cfg.seeds;
    let ages = cfg.age_limits();
    let arms = cfg.budget_arms();

    let data: Vec<std::result::Result<DataSplits, String>> = exec::map(exec, seeds, |&s| {
        generate_scenario(cfg, s)
            .map(|d| split_dataset(&d, &cfg.split))
            .map_err(|e| e.to_string())
    });

    let pred_keys: Vec<(usize, usize)> = ages
        .iter()
        .flat_map(|&n| (0..seeds.len()).map(move |si| (n, si)))
        .collect();
    let preds: BTreeMap<(usize, usize), std::result::Result<Predictor, String>> = pred_keys
        .iter()
        .copied()
        .zip(exec::map(exec, &pred_keys, |&(n, si)| {
            let d = data[si].as_ref().map_err(Clone::clone)?;
            train_predictor_stage(cfg, &d.train, n, seeds[si])
                .map(|(p, _)| p)
                .map_err(|e| e.to_string())
        }))
        .collect();

    let agent_keys: Vec<(usize, usize, usize)> = if cfg.policies.contains(&PolicyKind::Dqn) {
        (0..arms.len())
            .flat_map(|ai| pred_keys.iter().map(move |&(n, si)| (ai, n, si)))
            .collect()
    } else {
        Vec::new()
    };
    let agents: BTreeMap<(usize, usize, usize), std::result::Result<SensingAgent, String>> =
        agent_keys
            .iter()
            .copied()
            .zip(exec::map(exec, &agent_keys, |&(ai, n, si)| {
                let p = preds[&(n, si)].as_ref().map_err(Clone::clone)?;
                let d = data[si].as_ref().map_err(Clone::clone)?;
                let (a, v) = arms[ai];
                let budget = BudgetConfig::new(a, v).map_err(|e| e.to_string())?;
                train_dqn_stage(cfg, p, &d.train, budget, seeds[si], Execution::Sequential)
                    .map(|(agent, _)| agent)
                    .map_err(|e| e.to_string())
            }))
            .collect();

    let mut run_keys = Vec::new();
    for (ai, &(alpha_max, v_param)) in arms.iter().enumerate() {
        for &policy in &cfg.policies {
            for &n in &ages {
                for (si, &seed) in seeds.iter().enumerate() {
                    run_keys.push((
                        ai,
                        si,
                        RunKey {
                            policy,
                            alpha_max,
                            v_param,
                            age_limit: n,
                            seed,
                        },
                    ));
                }
            }
        }
    }
    let runs = exec::map(exec, &run_keys, |(ai, si, key)| {
        let outcome = (|| -> std::result::Result<(RunMetrics, Vec<CurvePoint>), String> {
            let d = data[*si].as_ref().map_err(Clone::clone)?;
            let p = preds[&(key.age_limit, *si)]
                .as_ref()
                .map_err(Clone::clone)?;
            let agent = match key.policy {
                PolicyKind::Dqn => Some(
                    agents[&(*ai, key.age_limit, *si)]
                        .as_ref()
                        .map_err(Clone::clone)?,
                ),
                _ => None,
            };
            let (row, m) = evaluate_arm(cfg, key, p, agent, &d.test).map_err(|e| e.to_string())?;
            Ok((row, curve_points(key, &m)))
        })();
        match outcome {
            Ok(ok) => ok,
            Err(e) => {
                log::warn!("run {key:?} failed: {e}");
                (RunMetrics::failed(key, e), Vec::new())
            }
        }
    });

    let mut results = SweepResults::default();
    for (row, curve) in runs {
        results.rows.push(row);
        results.curves.extend(curve);
    }
    Ok(results)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub policy: PolicyKind,
    pub alpha_max: f64,
    pub v_param: f64,
    pub age_limit: usize,
    pub runs: usize,
    pub failed: usize,
    pub sensing_rate_mean: f64,
    pub sensing_rate_std: f64,
    pub mean_queue_mean: f64,
    pub mean_queue_std: f64,
    pub top1_mean: f64,
    pub top1_std: f64,
    pub top3_mean: f64,
    pub top3_std: f64,
    pub mean_loss_mean: f64,
    pub mean_loss_std: f64,
    pub time_to_compliance_mean: f64,
    pub time_to_compliance_std: f64,
    pub wall_time_seconds_mean: f64,
    pub wall_time_seconds_std: f64,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

type GroupKey = (PolicyKind, u64, u64, usize);

fn group_key(r: &RunMetrics) -> GroupKey {
    (
        r.policy,
        r.alpha_max.to_bits(),
        r.v_param.to_bits(),
        r.age_limit,
    )
}

/// Groups in first-appearance order.
fn grouped<T, K: PartialEq>(items: &[T], key: impl Fn(&T) -> K) -> Vec<(K, Vec<&T>)> {
    let mut out: Vec<(K, Vec<&T>)> = Vec::new();
    for it in items {
        let k = key(it);
        match out.iter_mut().find(|(g, _)| *g == k) {
            Some((_, v)) => v.push(it),
            None => out.push((k, vec![it])),
        }
    }
    out
}

impl SweepResults {
    pub fn summary(&self) -> Vec<SummaryRow> {
        grouped(&self.rows, group_key)
            .into_iter()
            .map(|((policy, a, v, n), rows)| {
                let ok: Vec<&RunMetrics> = rows.iter().copied().filter(|r| r.is_ok()).collect();
                let stat = |f: fn(&RunMetrics) -> f64| {
                    mean_std(&ok.iter().map(|r| f(r)).collect::<Vec<_>>())
                };
                let (sensing_rate_mean, sensing_rate_std) = stat(|r| r.sensing_rate);
                let (mean_queue_mean, mean_queue_std) = stat(|r| r.mean_queue);
                let (top1_mean, top1_std) = stat(|r| r.top1);
                let (top3_mean, top3_std) = stat(|r| r.top3);
                let (mean_loss_mean, mean_loss_std) = stat(|r| r.mean_loss);
                let (time_to_compliance_mean, time_to_compliance_std) =
                    stat(|r| r.time_to_compliance as f64);
                let (wall_time_seconds_mean, wall_time_seconds_std) = stat(|r| r.wall_time_seconds);
                SummaryRow {
                    policy,
                    alpha_max: f64::from_bits(a),
                    v_param: f64::from_bits(v),
                    age_limit: n,
                    runs: rows.len(),
                    failed: rows.len() - ok.len(),
                    sensing_rate_mean,
                    sensing_rate_std,
                    mean_queue_mean,
                    mean_queue_std,
                    top1_mean,
                    top1_std,
                    top3_mean,
                    top3_std,
                    mean_loss_mean,
                    mean_loss_std,
                    time_to_compliance_mean,
                    time_to_compliance_std,
                    wall_time_seconds_mean,
                    wall_time_seconds_std,
                }
            })
            .collect()
    }

    /// Writes `results.csv`, `summary.csv` and `curves.csv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let results = dir.join(RESULTS_FILE);
        write_serialized(&results, &self.rows)?;
        let summary = dir.join(SUMMARY_FILE);
        write_serialized(&summary, &self.summary())?;
        let curves = dir.join(CURVES_FILE);
        write_serialized(&curves, &self.curves)?;
        Ok(vec![results, summary, curves])
    }

    /// Reads a results directory written by [`SweepResults::write`] (or the
    /// `metrics.csv` of a single run when no `results.csv` exists).
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let results = dir.join(RESULTS_FILE);
        let rows: Vec<RunMetrics> = if results.exists() {
            read_serialized(&results)?
        } else {
            return Err(HarnessError::NoResults(format!(
                "no {RESULTS_FILE} in {}",
                dir.display()
            )));
        };
        let curves_path = dir.join(CURVES_FILE);
        let curves = if curves_path.exists() {
            read_serialized(&curves_path)?
        } else {
            Vec::new()
        };
        Ok(Self { rows, curves })
    }
}

fn write_serialized<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for r in rows {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.flush()?;
    Ok(())
}

fn read_serialized<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let rows = r
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(csv_err(path))?;
    Ok(rows)
}

fn fmt_num(v: f64) -> String {
    let s = format!("{v}");
    if s.len() > 8 {
        format!("{v:.4}")
    } else {
        s
    }
}

/// Builds series of `(x, mean, std)` by grouping `items` on a series label
/// and an x value, aggregating `y` over the rest (seeds).
fn aggregate<T>(
    items: &[T],
    label: impl Fn(&T) -> String,
    x: impl Fn(&T) -> f64,
    y: impl Fn(&T) -> f64,
) -> Vec<Series> {
    grouped(items, |t| (label(t), x(t).to_bits()))
        .into_iter()
        .fold(Vec::<Series>::new(), |mut acc, ((name, xb), members)| {
            let (m, s) = mean_std(&members.iter().map(|t| y(t)).collect::<Vec<_>>());
            let point = (f64::from_bits(xb), m, s);
            match acc.iter_mut().find(|se| se.name == name) {
                Some(se) => se.points.push(point),
                None => acc.push(Series {
                    name,
                    points: vec![point],
                }),
            }
            acc
        })
        .into_iter()
        .map(|mut s| {
            s.points.sort_by(|a, b| a.0.total_cmp(&b.0));
            s
        })
        .collect()
}

fn write_figure(dir: &Path, stem: &str, chart: &Chart) -> Result<Vec<PathBuf>> {
    let data = dir.join(format!("{stem}.csv"));
    let mut w = csv::Writer::from_path(&data).map_err(csv_err(&data))?;
    w.write_record(["x", "series", "mean", "std"])
        .map_err(csv_err(&data))?;
    for s in &chart.series {
        for &(x, m, sd) in &s.points {
            w.write_record([x.to_string(), s.name.clone(), m.to_string(), sd.to_string()])
                .map_err(csv_err(&data))?;
        }
    }
    w.flush()?;
    let svg = dir.join(format!("{stem}.svg"));
    fs::write(&svg, chart.to_svg())?;
    Ok(vec![data, svg])
}

/// Writes a data file (`x,series,mean,std`) and an SVG chart per figure:
/// running sensing rate and queue per V, accuracy against age limit,
/// accuracy against budget, and inference time against budget.
pub fn emit_plots(results: &SweepResults, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let rows: Vec<RunMetrics> = results.rows.iter().filter(|r| r.is_ok()).cloned().collect();
    if rows.is_empty() {
        return Err(HarnessError::NoResults(
            "results table has no successful runs to plot".into(),
        ));
    }
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let multi = |f: fn(&RunMetrics) -> u64| {
        let mut v: Vec<u64> = rows.iter().map(f).collect();
        v.sort_unstable();
        v.dedup();
        v.len() > 1
    };
    let multi_n = multi(|r| r.age_limit as u64);
    let multi_v_per_budget = grouped(&rows, |r| r.alpha_max.to_bits())
        .iter()
        .any(|(_, g)| {
            let mut v: Vec<u64> = g.iter().map(|r| r.v_param.to_bits()).collect();
            v.sort_unstable();
            v.dedup();
            v.len() > 1
        });
    let arm_label = |policy: PolicyKind, n: usize, v: f64| {
        let mut s = policy.to_string();
        if multi_n {
            s += &format!(" N={n}");
        }
        if multi_v_per_budget {
            s += &format!(" V={}", fmt_num(v));
        }
        s
    };

    let dqn_curves: Vec<&CurvePoint> = results
        .curves
        .iter()
        .filter(|c| c.policy == PolicyKind::Dqn)
        .collect();
    if !dqn_curves.is_empty() {
        let label = |c: &&CurvePoint| {
            let mut s = format!("a={} V={}", fmt_num(c.alpha_max), fmt_num(c.v_param));
            if multi_n {
                s += &format!(" N={}", c.age_limit);
            }
            s
        };
        for (stem, title, y_label, y) in [
            (
                "sensing_rate_curve",
                "Running sensing rate",
                "sensing rate",
                (|c: &&CurvePoint| c.running_rate) as fn(&&CurvePoint) -> f64,
            ),
            ("queue_curve", "Virtual queue", "queue", |c: &&CurvePoint| {
                c.queue
            }),
        ] {
            let chart = Chart {
                title: title.into(),
                x_label: "slot".into(),
                y_label: y_label.into(),
                series: aggregate(&dqn_curves, label, |c| c.step as f64, y),
            };
            written.extend(write_figure(dir, stem, &chart)?);
        }
    }

    let chart = Chart {
        title: "Top-1 accuracy vs age limit".into(),
        x_label: "age limit N".into(),
        y_label: "top-1".into(),
        series: aggregate(
            &rows,
            |r| format!("{} a={}", r.policy, fmt_num(r.alpha_max)),
            |r| r.age_limit as f64,
            |r| r.top1,
        ),
    };
    written.extend(write_figure(dir, "accuracy_vs_age_limit", &chart)?);

    for (stem, title, y_label, y) in [
        (
            "top1_vs_budget",
            "Top-1 accuracy vs sensing budget",
            "top-1",
            (|r: &RunMetrics| r.top1) as fn(&RunMetrics) -> f64,
        ),
        (
            "top3_vs_budget",
            "Top-3 accuracy vs sensing budget",
            "top-3",
            |r: &RunMetrics| r.top3,
        ),
        (
            "runtime_vs_budget",
            "Inference time vs sensing budget",
            "seconds",
            |r: &RunMetrics| r.wall_time_seconds,
        ),
    ] {
        let chart = Chart {
            title: title.into(),
            x_label: "sensing budget".into(),
            y_label: y_label.into(),
            series: aggregate(
                &rows,
                |r| arm_label(r.policy, r.age_limit, r.v_param),
                |r| r.alpha_max,
                y,
            ),
        };
        written.extend(write_figure(dir, stem, &chart)?);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(slot: usize) -> ScenarioSample {
        ScenarioSample {
            slot,
            position: [0.0, 0.0],
            embedding: vec![],
            label: 0,
            true_angle: None,
        }
    }

    #[test]
    fn split_is_contiguous_70_10_20() {
        let data: Vec<_> = (0..2000).map(sample).collect();
        let s = split_dataset(&data, &SplitConfig::default());
        assert_eq!(
            (s.train.len(), s.validation.len(), s.test.len()),
            (1400, 200, 400)
        );
        assert_eq!(s.train.last().unwrap().slot + 1, s.validation[0].slot);
        assert_eq!(s.validation.last().unwrap().slot + 1, s.test[0].slot);
    }

    #[test]
    fn derived_seeds_differ_by_stream() {
        assert_ne!(derive_seed(0, STREAM_DQN), derive_seed(0, STREAM_PREDICTOR));
        assert_ne!(derive_seed(1, STREAM_DQN), derive_seed(0, STREAM_DQN));
        assert_eq!(derive_seed(5, STREAM_DQN), derive_seed(5, STREAM_DQN));
    }

    #[test]
    fn mean_std_values() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-12);
        assert!(mean_std(&[]).0.is_nan());
    }

    fn row(policy: PolicyKind, alpha: f64, seed: u64, top1: f64) -> RunMetrics {
        let key = RunKey {
            policy,
            alpha_max: alpha,
            v_param: 1.0,
            age_limit: 2,
            seed,
        };
        let mut r = RunMetrics::failed(&key, String::new());
        r.error = None;
        r.top1 = top1;
        r.top3 = top1;
        r.sensing_rate = alpha;
        r.wall_time_seconds = alpha;
        r
    }

    #[test]
    fn summary_groups_seeds() {
        let res = SweepResults {
            rows: vec![
                row(PolicyKind::Dqn, 0.1, 0, 0.5),
                row(PolicyKind::Dqn, 0.1, 1, 0.7),
                row(PolicyKind::Randomized, 0.1, 0, 0.4),
            ],
            curves: vec![],
        };
        let s = res.summary();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].runs, 2);
        assert!((s[0].top1_mean - 0.6).abs() < 1e-12);
    }

    #[test]
    fn results_round_trip_and_plots() {
        let res = SweepResults {
            rows: vec![
                row(PolicyKind::Dqn, 0.1, 0, 0.5),
                row(PolicyKind::Dqn, 0.3, 0, 0.7),
                RunMetrics::failed(
                    &RunKey {
                        policy: PolicyKind::Never,
                        alpha_max: 0.1,
                        v_param: 1.0,
                        age_limit: 2,
                        seed: 0,
                    },
                    "boom, with comma".into(),
                ),
            ],
            curves: vec![CurvePoint {
                policy: PolicyKind::Dqn,
                alpha_max: 0.1,
                v_param: 1.0,
                age_limit: 2,
                seed: 0,
                step: 1,
                running_rate: 1.0,
                queue: 0.0,
            }],
        };
        let dir = tempfile::tempdir().unwrap();
        res.write(dir.path()).unwrap();
        let back = SweepResults::load(dir.path()).unwrap();
        assert_eq!(back.rows.len(), 3);
        assert_eq!(back.rows[2].error.as_deref(), Some("boom, with comma"));
        assert_eq!(back.curves, res.curves);
        let a = emit_plots(&back, dir.path().join("plots")).unwrap();
        let first: Vec<Vec<u8>> = a.iter().map(|p| fs::read(p).unwrap()).collect();
        let b = emit_plots(&back, dir.path().join("plots")).unwrap();
        assert_eq!(a, b);
        let second: Vec<Vec<u8>> = b.iter().map(|p| fs::read(p).unwrap()).collect();
        assert_eq!(first, second);
        assert!(a.iter().any(|p| p.ends_with("top1_vs_budget.svg")));
        assert!(emit_plots(&SweepResults::default(), dir.path()).is_err());
        assert!(SweepResults::load(dir.path().join("plots")).is_err());
    }
}
