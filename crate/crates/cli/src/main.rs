use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aoi_sense::aoi_queue::BudgetConfig;
use aoi_sense::dqn::SensingAgent;
use aoi_sense::env::{self, CsvSchema, ScenarioSample};
use aoi_sense::exec::Execution;
use aoi_sense::harness::{self, ExperimentConfig, RunKey, SweepResults};
use aoi_sense::policies::PolicyKind;
use aoi_sense::predictor::Predictor;
use clap::{Args, Parser, Subcommand};

const OUT_ENV: &str = "AOI_SENSE_OUT";

#[derive(Debug, Parser)]
#[command(
    name = "aoi-sense",
    version,
    about = "AoI-aware sensing and beam prediction experiments"
)]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Dotted-key override, e.g. `dqn.gamma=0.95`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory; defaults to $AOI_SENSE_OUT, then `<output_dir>/<command>`.
    #[arg(long, env = OUT_ENV)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic scenario and write it as CSV.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Train the age-augmented beam predictor on the training split.
    TrainPredictor {
        #[command(flatten)]
        common: Common,
        /// Scenario CSV or the directory holding it.
        #[arg(long)]
        data: PathBuf,
    },
    /// Train the sensing agent for the first budget arm.
    TrainDqn {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Directory with the predictor checkpoint.
        #[arg(long)]
        predictor: PathBuf,
    },
    /// Run inference on the test split for every configured policy.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        predictor: PathBuf,
        /// Directory with the sensing agent; required for the dqn policy.
        #[arg(long)]
        agent: Option<PathBuf>,
    },
    /// Full sweep over budgets, policies, age limits and seeds.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Render figures from a results directory.
    Plot {
        /// Directory holding results.csv (and curves.csv).
        #[arg(long)]
        results: PathBuf,
        /// Defaults to `<results>/plots`.
        #[arg(long, env = OUT_ENV)]
        out: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Generate { .. } => "generate",
            Command::TrainPredictor { .. } => "train-predictor",
            Command::TrainDqn { .. } => "train-dqn",
            Command::Evaluate { .. } => "evaluate",
            Command::Sweep { .. } => "sweep",
            Command::Plot { .. } => "plot",
        }
    }

    fn common(&self) -> Option<&Common> {
        match self {
            Command::Generate { common }
            | Command::TrainPredictor { common, .. }
            | Command::TrainDqn { common, .. }
            | Command::Evaluate { common, .. }
            | Command::Sweep { common } => Some(common),
            Command::Plot { .. } => None,
        }
    }
}

type AnyResult<T> = Result<T, Box<dyn std::error::Error>>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();

    // The config must parse and validate before any work starts.
    let cfg = match cli.command.common() {
        Some(c) => match ExperimentConfig::load(Some(&c.config), &c.overrides) {
            Ok(cfg) => Some(cfg),
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        },
        None => None,
    };

    match dispatch(&cli.command, cfg) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {} failed: {e}", cli.command.name());
            ExitCode::from(1)
        }
    }
}

fn out_dir(cfg: &ExperimentConfig, common: &Common, command: &str) -> PathBuf {
    common
        .out
        .clone()
        .unwrap_or_else(|| cfg.output_dir.join(command))
}

fn load_data(cfg: &ExperimentConfig, path: &Path) -> AnyResult<Vec<ScenarioSample>> {
    let file = if path.is_dir() {
        path.join(harness::SCENARIO_FILE)
    } else {
        path.to_path_buf()
    };
    if !file.exists() {
        return Err(format!("missing artifact: scenario data {}", file.display()).into());
    }
    let schema = CsvSchema {
        num_beams: cfg.num_beams(),
        embedding_dim: None,
    };
    Ok(env::load_csv_dataset(&file, &schema)?)
}

fn dispatch(command: &Command, cfg: Option<ExperimentConfig>) -> AnyResult<PathBuf> {
    let exec = Execution::default();
    let name = command.name();
    if let Command::Plot { results, out } = command {
        let res = SweepResults::load(results)?;
        let dir = out.clone().unwrap_or_else(|| results.join("plots"));
        for p in harness::emit_plots(&res, &dir)? {
            log::info!("wrote {}", p.display());
        }
        return Ok(dir);
    }
    let cfg = cfg.expect("config loaded for every non-plot command");
    let common = command.common().expect("non-plot command");
    let seed = common.seed;
    let dir = out_dir(&cfg, common, name);
    std::fs::create_dir_all(&dir)?;

    match command {
        Command::Generate { .. } => {
            let data = harness::generate_scenario(&cfg, seed)?;
            env::write_csv_dataset(dir.join(harness::SCENARIO_FILE), &data)?;
            log::info!("{} slots", data.len());
        }
        Command::TrainPredictor { data, .. } => {
            let data = load_data(&cfg, data)?;
            let splits = harness::split_dataset(&data, &cfg.split);
            let (predictor, log) =
                harness::train_predictor_stage(&cfg, &splits.train, cfg.predictor.age_limit, seed)?;
            predictor.save(&dir)?;
            log.write_csv(dir.join(harness::PREDICTOR_LOG_FILE))?;
        }
        Command::TrainDqn {
            data, predictor, ..
        } => {
            let data = load_data(&cfg, data)?;
            let predictor = Predictor::load(predictor)?;
            let splits = harness::split_dataset(&data, &cfg.split);
            let (alpha, v) = cfg.budget_arms()[0];
            let budget = BudgetConfig::new(alpha, v)?;
            let (agent, log) =
                harness::train_dqn_stage(&cfg, &predictor, &splits.train, budget, seed, exec)?;
            agent.save(&dir)?;
            log.write_csv(dir.join(harness::DQN_LOG_FILE))?;
        }
        Command::Evaluate {
            data,
            predictor,
            agent,
            ..
        } => {
            let data = load_data(&cfg, data)?;
            let predictor = Predictor::load(predictor)?;
            let agent = agent.as_ref().map(SensingAgent::load).transpose()?;
            let splits = harness::split_dataset(&data, &cfg.split);
            let (alpha_max, v_param) = match &agent {
                Some(a) => (a.budget.alpha_max, a.budget.v_param),
                None => cfg.budget_arms()[0],
            };
            let mut results = SweepResults::default();
            for &policy in &cfg.policies {
                if policy == PolicyKind::Dqn && agent.is_none() {
                    return Err("missing artifact: the dqn policy needs --agent".into());
                }
                let key = RunKey {
                    policy,
                    alpha_max,
                    v_param,
                    age_limit: predictor.age_limit,
                    seed,
                };
                let (row, m) =
                    harness::evaluate_arm(&cfg, &key, &predictor, agent.as_ref(), &splits.test)?;
                if policy == PolicyKind::Dqn {
                    harness::write_trace_csv(dir.join(harness::TRACE_FILE), &m)?;
                }
                results.rows.push(row);
                results.curves.extend(harness::curve_points(&key, &m));
            }
            harness::write_metrics_csv(dir.join(harness::METRICS_FILE), &results.rows)?;
            harness::write_timing_csv(dir.join(harness::TIMING_FILE), &results.rows)?;
            results.write(&dir)?;
        }
        Command::Sweep { .. } => {
            let results = harness::sweep(&cfg, exec)?;
            let failed = results.rows.iter().filter(|r| !r.is_ok()).count();
            if failed > 0 {
                log::warn!("{failed} of {} runs failed", results.rows.len());
            }
            results.write(&dir)?;
            harness::write_metrics_csv(dir.join(harness::METRICS_FILE), &results.rows)?;
            if results.rows.iter().any(|r| r.is_ok()) {
                harness::emit_plots(&results, dir.join("plots"))?;
            }
        }
        Command::Plot { .. } => unreachable!(),
    }
    harness::write_manifest(&dir, name, &cfg, Some(seed))?;
    Ok(dir)
}
