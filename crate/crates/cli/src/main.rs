//! `defersched`: generate workloads, run baselines, solve small instances
//! exactly, train and evaluate the learned scheduler.

mod config;
mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use defersched::oracle::{solve_exact_with_budget, OfflineInstance, DEFAULT_BUDGET};
use defersched::osdec::{OsdecAgent, OsdecModel, ScoreMode};
use defersched::schedulers::{run_episode, run_heuristic, EpisodeResult, SchedulerKind};
use defersched::simenv::RewardWeights;
use defersched::trainer::{aux_log_csv, log_csv, train, TrainOptions};
use defersched::workload::{
    generate_workload, to_realtime, write_capacity_csv, write_jobs_csv, CapacitySeries, SyntheticSpec, WorkloadTrace,
};
use serde::Serialize;

use config::{load_trace, ExperimentConfig};
use report::{compare_csv, compare_table, plan_metrics, run_report, schedule_csv, CompareRow};

#[derive(Debug, Parser)]
#[command(name = "defersched", version, about = "Online scheduling of deferrable jobs")]
struct Cli {
    /// More log output; repeat for more.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic trace as jobs.csv and capacity.csv.
    Generate {
        /// TOML file with generator settings; defaults when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run one baseline scheduler over a trace.
    RunHeuristic {
        /// fifo, sjf, hrrn, tetris or random:<seed>
        #[arg(long)]
        kind: SchedulerKind,
        #[command(flatten)]
        input: TraceArgs,
        /// Collapse every window to the submission time.
        #[arg(long)]
        realtime: bool,
        #[command(flatten)]
        weights: WeightArgs,
        /// Directory for metrics.json and schedule.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve a small trace exactly.
    SolveOracle {
        #[command(flatten)]
        input: TraceArgs,
        #[command(flatten)]
        weights: WeightArgs,
        /// Largest candidate count accepted.
        #[arg(long, default_value_t = DEFAULT_BUDGET)]
        budget: u128,
        /// Directory for plan.csv and objective.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the learned scheduler.
    Train {
        /// Experiment TOML; defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
        /// Replaces every seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Run a saved model deterministically over a trace.
    Evaluate {
        /// A directory written by `train` (its `model/`) or a checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        input: TraceArgs,
        #[command(flatten)]
        weights: WeightArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Every method on one trace, as a table.
    Compare {
        #[command(flatten)]
        input: TraceArgs,
        #[command(flatten)]
        weights: WeightArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Add the exact offline optimum.
        #[arg(long)]
        oracle: bool,
        #[arg(long)]
        realtime: bool,
        /// Seed of the random baseline.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for compare.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct TraceArgs {
    #[arg(long)]
    jobs: PathBuf,
    /// The capacity series also fixes the horizon.
    #[arg(long)]
    capacity: PathBuf,
}

impl TraceArgs {
    fn load(&self) -> Result<(WorkloadTrace, CapacitySeries)> {
        load_trace(&self.jobs, &self.capacity)
    }
}

#[derive(Debug, Args)]
struct WeightArgs {
    #[arg(long, default_value_t = RewardWeights::default().omega1)]
    omega1: f64,
    #[arg(long, default_value_t = RewardWeights::default().omega2)]
    omega2: f64,
}

impl WeightArgs {
    fn weights(&self) -> RewardWeights {
        RewardWeights { omega1: self.omega1, omega2: self.omega2 }
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn make_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn starts_of(result: &EpisodeResult) -> BTreeMap<u64, u32> {
    result.schedule.iter().copied().collect()
}

fn emit_run(trace: &WorkloadTrace, result: &EpisodeResult, weights: RewardWeights, out: Option<&Path>) -> Result<()> {
    let starts = starts_of(result);
    let metrics = json(&run_report(trace, result.metrics, &starts, weights))?;
    match out {
        Some(dir) => {
            make_dir(dir)?;
            write(&dir.join("metrics.json"), &metrics)?;
            write(&dir.join("schedule.csv"), &schedule_csv(&starts))?;
        }
        None => print!("{metrics}"),
    }
    Ok(())
}

fn generate(spec: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut spec: SyntheticSpec = match spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("in {}", path.display()))?
        }
        None => SyntheticSpec::default(),
    };
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let (trace, capacity) = generate_workload(&spec)?;
    make_dir(out)?;
    write(&out.join("jobs.csv"), &write_jobs_csv(&trace))?;
    write(&out.join("capacity.csv"), &write_capacity_csv(&capacity))?;
    log::info!("{} jobs over {} steps", trace.len(), trace.horizon());
    Ok(())
}

#[derive(Serialize)]
struct ObjectiveSummary {
    objective: f64,
    scheduled: usize,
    jobs: usize,
    candidates: u128,
    omega1: f64,
    omega2: f64,
}

fn solve_oracle(input: &TraceArgs, weights: RewardWeights, budget: u128, out: Option<&Path>) -> Result<()> {
    let (trace, capacity) = input.load()?;
    let instance = OfflineInstance::new(&trace, &capacity, weights);
    let plan = solve_exact_with_budget(&instance, budget)?;
    let summary = json(&ObjectiveSummary {
        objective: plan.objective,
        scheduled: plan.start_times.len(),
        jobs: trace.len(),
        candidates: instance.candidate_count(),
        omega1: weights.omega1,
        omega2: weights.omega2,
    })?;
    match out {
        Some(dir) => {
            make_dir(dir)?;
            write(&dir.join("plan.csv"), &schedule_csv(&plan.start_times))?;
            write(&dir.join("objective.json"), &summary)?;
        }
        None => print!("{summary}"),
    }
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    iterations: usize,
    initial_eval: defersched::trainer::EvalReport,
    final_eval: defersched::trainer::EvalReport,
}

fn run_train(
    config: Option<&Path>,
    out: &Path,
    iterations: Option<usize>,
    seed: Option<u64>,
    workers: Option<usize>,
) -> Result<()> {
    let mut cfg = match config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(n) = iterations {
        cfg.ppo.iterations = n;
    }
    if seed.is_some() {
        cfg.seed = seed;
    }
    if let Some(w) = workers {
        cfg.ppo.workers = w;
    }
    let cfg = cfg.resolve()?;
    let train_pool = cfg.train_pool()?;
    let eval_pool = cfg.eval_pool()?;
    make_dir(out)?;
    write(&out.join("config.toml"), &toml::to_string(&cfg)?)?;

    let model = OsdecModel::new(cfg.model.clone())?;
    model.save(&out.join("checkpoints").join("iter_0000"))?;
    log::info!("training for {} iterations on {} traces", cfg.ppo.iterations, train_pool.len());
    let result = train(model, &train_pool, &eval_pool, &cfg.ppo, cfg.rewards, &TrainOptions { out_dir: Some(out.to_path_buf()) })?;

    write(&out.join("train_log.csv"), &log_csv(&result.log))?;
    write(&out.join("aux_log.csv"), &aux_log_csv(&result.log))?;
    result.model.save(&out.join("model"))?;
    let final_eval = result.log.last().map_or_else(|| result.initial_eval.clone(), |r| r.eval.clone());
    write(
        &out.join("summary.json"),
        &json(&TrainSummary { iterations: result.log.len(), initial_eval: result.initial_eval, final_eval })?,
    )?;
    Ok(())
}

fn load_model(path: &Path) -> Result<OsdecModel> {
    // accept the run directory as well as the model directory inside it
    let dir = if path.join("model").is_dir() { path.join("model") } else { path.to_path_buf() };
    OsdecModel::load(&dir).with_context(|| format!("loading model from {}", dir.display()))
}

fn run_model(model: &OsdecModel, trace: &WorkloadTrace, capacity: &CapacitySeries, weights: RewardWeights) -> Result<EpisodeResult> {
    let mut agent = OsdecAgent::new(model, ScoreMode::Deterministic);
    Ok(run_episode(&mut agent, trace, capacity, weights)?)
}

#[allow(clippy::too_many_arguments)]
fn compare(
    input: &TraceArgs,
    weights: RewardWeights,
    checkpoint: Option<&Path>,
    oracle: bool,
    realtime: bool,
    seed: u64,
    out: Option<&Path>,
    budget: u128,
) -> Result<()> {
    let (mut trace, capacity) = input.load()?;
    if realtime {
        trace = to_realtime(&trace);
    }
    let mut rows = Vec::new();
    for kind in SchedulerKind::DETERMINISTIC.into_iter().chain([SchedulerKind::Random { seed }]) {
        let r = run_heuristic(kind, &trace, &capacity, weights)?;
        rows.push(CompareRow { method: kind.name().to_string(), metrics: r.metrics });
    }
    if let Some(path) = checkpoint {
        let model = load_model(path)?;
        rows.push(CompareRow { method: "OSDEC".into(), metrics: run_model(&model, &trace, &capacity, weights)?.metrics });
    }
    if oracle {
        let plan = solve_exact_with_budget(&OfflineInstance::new(&trace, &capacity, weights), budget)?;
        rows.push(CompareRow { method: "Oracle".into(), metrics: plan_metrics(&trace, &capacity, weights, &plan.start_times) });
    }
    print!("{}", compare_table(&rows));
    if let Some(dir) = out {
        make_dir(dir)?;
        write(&dir.join("compare.csv"), &compare_csv(&rows))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { spec, out, seed } => generate(spec.as_deref(), &out, seed),
        Command::RunHeuristic { kind, input, realtime, weights, out } => {
            let (mut trace, capacity) = input.load()?;
            if realtime {
                trace = to_realtime(&trace);
            }
            let w = weights.weights();
            let result = run_heuristic(kind, &trace, &capacity, w)?;
            emit_run(&trace, &result, w, out.as_deref())
        }
        Command::SolveOracle { input, weights, budget, out } => solve_oracle(&input, weights.weights(), budget, out.as_deref()),
        Command::Train { config, out, iterations, seed, workers } => {
            run_train(config.as_deref(), &out, iterations, seed, workers)
        }
        Command::Evaluate { checkpoint, input, weights, out } => {
            let model = load_model(&checkpoint)?;
            let (trace, capacity) = input.load()?;
            let w = weights.weights();
            let result = run_model(&model, &trace, &capacity, w)?;
            emit_run(&trace, &result, w, out.as_deref())
        }
        Command::Compare { input, weights, checkpoint, oracle, realtime, seed, out } => compare(
            &input,
            weights.weights(),
            checkpoint.as_deref(),
            oracle,
            realtime,
            seed,
            out.as_deref(),
            DEFAULT_BUDGET,
        ),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
