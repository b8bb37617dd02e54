use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use mfsim_core::backends::toy::Alphabets;
use mfsim_core::corpus::{
    generate_synthetic, load_corpus, save_corpus, Corpus, SyntheticGenConfig,
};
use mfsim_core::domain::{ContextStrategy, Event, SimulationConfig, Trajectory};
use mfsim_core::engine::intervention::InterventionSchedule;
use mfsim_core::engine::persist::{read_trajectory, JsonlSink};
use mfsim_core::engine::{fork_trajectory, run_simulation_with, ForkSource, RunOptions};
use mfsim_core::ibtune::{train_toy, IBHyper, TrainMode, TrainingData};
use mfsim_core::metrics::{align_runs, evaluate_run, series_csv};
use serde_json::{json, Map, Value};

use crate::config::{layered, FileConfig, JudgeSpec, Models, SchemaSpec};

#[derive(Debug, Parser)]
#[command(name = "mfsim", version, about = "Mean-field population simulator")]
pub struct Cli {
    /// JSON config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output path (a directory for train-toy).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, short, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one event end to end.
    Simulate(SimulateArgs),
    /// Score a generated trajectory against a real one.
    Evaluate(EvaluateArgs),
    /// Restart from the real prefix at a chosen step.
    Forecast(ForecastArgs),
    /// Fork an earlier run with an intervention schedule.
    Intervene(InterveneArgs),
    /// Train toy-scale parameters.
    TrainToy(TrainArgs),
    /// Write a synthetic corpus.
    GenSynthetic(GenArgs),
    /// Start the HTTP run service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct EventArgs {
    /// Corpus file, one event per line.
    #[arg(long = "event", visible_alias = "corpus")]
    pub corpus: PathBuf,
    /// Event to use; the first one when omitted.
    #[arg(long)]
    pub event_id: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Strategy {
    MeanField,
    StateOnly,
    RecentK,
    PopularK,
    Sft,
}

impl From<Strategy> for ContextStrategy {
    fn from(s: Strategy) -> Self {
        match s {
            Strategy::MeanField => ContextStrategy::MeanField,
            Strategy::StateOnly => ContextStrategy::StateOnly,
            Strategy::RecentK => ContextStrategy::RecentK,
            Strategy::PopularK => ContextStrategy::PopularK,
            Strategy::Sft => ContextStrategy::Sft,
        }
    }
}

#[derive(Debug, Args)]
pub struct SimFlags {
    #[arg(long, value_enum)]
    pub strategy: Option<Strategy>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub resample_states: bool,
    /// Concurrent policy calls per step (1 = sequential).
    #[arg(long)]
    pub fanout: Option<usize>,
}

impl SimFlags {
    fn patch(&self, seed: Option<u64>) -> Value {
        let mut m = Map::new();
        let mut put = |k: &str, v: Option<Value>| {
            if let Some(v) = v {
                m.insert(k.into(), v);
            }
        };
        put(
            "context_strategy",
            self.strategy.map(|s| json!(ContextStrategy::from(s))),
        );
        put("k", self.k.map(|v| json!(v)));
        put("horizon", self.horizon.map(|v| json!(v)));
        put("warmup_steps", self.warmup.map(|v| json!(v)));
        put("batch_size", self.batch_size.map(|v| json!(v)));
        put("temperature", self.temperature.map(|v| json!(v)));
        put(
            "resample_states",
            self.resample_states.then_some(json!(true)),
        );
        put("seed", seed.map(|v| json!(v)));
        Value::Object(m)
    }

    fn options(&self) -> RunOptions {
        RunOptions {
            fanout: self.fanout.unwrap_or(usize::MAX),
            ..RunOptions::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub event: EventArgs,
    #[command(flatten)]
    pub sim: SimFlags,
    /// Intervention schedule JSON.
    #[arg(long)]
    pub schedule: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    #[command(flatten)]
    pub event: EventArgs,
    #[command(flatten)]
    pub sim: SimFlags,
    /// Steps up to and including this one are observed.
    #[arg(long)]
    pub start: usize,
    #[arg(long)]
    pub schedule: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InterveneArgs {
    #[command(flatten)]
    pub event: EventArgs,
    #[command(flatten)]
    pub sim: SimFlags,
    /// Trajectory to fork.
    #[arg(long)]
    pub parent: PathBuf,
    #[arg(long)]
    pub start: usize,
    #[arg(long)]
    pub schedule: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub real: PathBuf,
    #[arg(long)]
    pub gen: PathBuf,
    /// mock | keywords | remote
    #[arg(long)]
    pub judge: Option<String>,
    /// opinion | toy:N
    #[arg(long)]
    pub schema: Option<String>,
    #[arg(long)]
    pub window: Option<usize>,
    /// Also report teacher-forced NLL under the configured backend.
    #[arg(long)]
    pub nll: bool,
    /// Write per-label proportion series as CSV.
    #[arg(long)]
    pub emit_series: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Mode {
    FullIbtune,
    PolicyOnlySft,
    NoMeanfield,
}

impl From<Mode> for TrainMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::FullIbtune => TrainMode::FullIbtune,
            Mode::PolicyOnlySft => TrainMode::PolicyOnlySft,
            Mode::NoMeanfield => TrainMode::NoMeanfield,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_enum, default_value = "full-ibtune")]
    pub mode: Mode,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub mean_field_alphabet: Option<usize>,
    /// Agents per step in the corpus.
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, default_value_t = 6)]
    pub states: usize,
    #[arg(long, default_value_t = 4)]
    pub actions: usize,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub events: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub agents: Option<usize>,
    /// Drop the majority feedback from the latent dynamics.
    #[arg(long)]
    pub no_feedback: bool,
    /// Also write the hidden latent paths as JSON.
    #[arg(long)]
    pub latents: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub addr: Option<String>,
    /// Run store directory.
    #[arg(long)]
    pub runs: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<mfsim_core::Error> for Failure {
    fn from(e: mfsim_core::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn out_path(cli: &Cli) -> Result<&Path, Failure> {
    cli.out
        .as_deref()
        .ok_or_else(|| usage("this command needs --out"))
}

fn pick_event<'a>(corpus: &'a Corpus, id: Option<&str>) -> Result<&'a Event, Failure> {
    match id {
        Some(id) => corpus
            .get(id)
            .ok_or_else(|| usage(format!("event {id} is not in the corpus"))),
        None => corpus
            .events
            .first()
            .ok_or_else(|| usage("corpus is empty")),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Effective simulation config: `base`, then the file's section, then flags.
fn sim_config(
    base: &SimulationConfig,
    file: &FileConfig,
    flags: &SimFlags,
    seed: Option<u64>,
) -> Result<SimulationConfig, Failure> {
    let patch = flags.patch(seed);
    let cfg = layered(base, &[file.simulation.as_ref(), Some(&patch)])
        .map_err(|e| usage(format!("{e:#}")))?;
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

struct Prepared {
    corpus: Corpus,
    cfg: SimulationConfig,
    models: Models,
    schedule: Option<InterventionSchedule>,
}

fn prepare(
    file: &FileConfig,
    seed: Option<u64>,
    event: &EventArgs,
    flags: &SimFlags,
    base: Option<SimulationConfig>,
    schedule: Option<&Path>,
) -> Result<(Prepared, usize), Failure> {
    let corpus = load_corpus(&event.corpus)?;
    let ev = pick_event(&corpus, event.event_id.as_deref())?;
    let idx = corpus
        .events
        .iter()
        .position(|e| e.event_id == ev.event_id)
        .unwrap_or(0);
    let base =
        base.unwrap_or_else(|| SimulationConfig::for_event(ev, flags.batch_size.unwrap_or(16)));
    let cfg = sim_config(&base, file, flags, seed)?;
    let schedule = schedule
        .map(read_json::<InterventionSchedule>)
        .transpose()?;
    if let Some(s) = &schedule {
        s.validate(cfg.horizon, cfg.batch_size)
            .map_err(|e| usage(e.to_string()))?;
    }
    let models = Models::build(&file.backend, cfg.seed)?;
    Ok((
        Prepared {
            corpus,
            cfg,
            models,
            schedule,
        },
        idx,
    ))
}

fn simulate(cli: &Cli, file: &FileConfig, a: &SimulateArgs) -> Result<(), Failure> {
    let out = out_path(cli)?;
    let (p, idx) = prepare(
        file,
        cli.seed,
        &a.event,
        &a.sim,
        None,
        a.schedule.as_deref(),
    )?;
    let event = &p.corpus.events[idx];
    let mut sink = JsonlSink::create(out)?;
    let t = run_simulation_with(
        event,
        &p.cfg,
        p.models.backends(),
        p.schedule.as_ref(),
        a.sim.options(),
        &mut sink,
    )?;
    log::info!("{} steps written to {}", t.steps.len(), out.display());
    Ok(())
}

fn forecast(cli: &Cli, file: &FileConfig, a: &ForecastArgs) -> Result<(), Failure> {
    let out = out_path(cli)?;
    let (p, idx) = prepare(
        file,
        cli.seed,
        &a.event,
        &a.sim,
        None,
        a.schedule.as_deref(),
    )?;
    if a.start > p.cfg.horizon {
        return Err(usage(format!(
            "--start {} is beyond the horizon {}",
            a.start, p.cfg.horizon
        )));
    }
    let event = &p.corpus.events[idx];
    let mut sink = JsonlSink::create(out)?;
    fork_trajectory(
        event,
        ForkSource::Event,
        a.start,
        &p.cfg,
        p.models.backends(),
        p.schedule.as_ref(),
        a.sim.options(),
        &mut sink,
    )?;
    Ok(())
}

fn intervene(cli: &Cli, file: &FileConfig, a: &InterveneArgs) -> Result<(), Failure> {
    let out = out_path(cli)?;
    let parent: Trajectory = read_trajectory(&a.parent)?;
    let event_args = EventArgs {
        corpus: a.event.corpus.clone(),
        event_id: Some(
            a.event
                .event_id
                .clone()
                .unwrap_or_else(|| parent.event_id.clone()),
        ),
    };
    let (p, idx) = prepare(
        file,
        cli.seed,
        &event_args,
        &a.sim,
        Some(parent.config.clone()),
        Some(&a.schedule),
    )?;
    if a.start > p.cfg.horizon {
        return Err(usage(format!(
            "--start {} is beyond the horizon {}",
            a.start, p.cfg.horizon
        )));
    }
    let event = &p.corpus.events[idx];
    let parent_id = a.parent.to_string_lossy().into_owned();
    let mut sink = JsonlSink::create(out)?;
    fork_trajectory(
        event,
        ForkSource::Parent {
            trajectory: &parent,
            run_id: Some(&parent_id),
        },
        a.start,
        &p.cfg,
        p.models.backends(),
        p.schedule.as_ref(),
        a.sim.options(),
        &mut sink,
    )?;
    Ok(())
}

fn evaluate(cli: &Cli, file: &FileConfig, a: &EvaluateArgs) -> Result<(), Failure> {
    let out = out_path(cli)?;
    let judge_spec = match &a.judge {
        Some(flag) => JudgeSpec::from_flag(flag, &file.judge).map_err(|e| usage(e.to_string()))?,
        None => file.judge.clone(),
    };
    let schema_spec = match &a.schema {
        Some(s) => SchemaSpec::parse(s).map_err(|e| usage(e.to_string()))?,
        None => file.schema.clone(),
    };
    let window = a.window.or(file.window).unwrap_or(16);
    if window == 0 {
        return Err(usage("--window must be at least 1"));
    }
    let schema = schema_spec.build()?;
    let real = read_trajectory(&a.real)?;
    let generated = read_trajectory(&a.gen)?;
    let judge = judge_spec.build(cli.seed.unwrap_or(0))?;
    let models = if a.nll {
        Some(Models::build(
            &file.backend,
            cli.seed.unwrap_or(generated.config.seed),
        )?)
    } else {
        None
    };
    let report = evaluate_run(
        &real,
        &generated,
        judge.as_ref(),
        &schema,
        window,
        models.as_ref().map(|m| m.policy()),
    )?;
    let body = if out.extension().is_some_and(|e| e == "csv") {
        report.to_csv()
    } else {
        pretty(&report)?
    };
    write_text(out, &body)?;
    if let Some(path) = &a.emit_series {
        let series = align_runs(&real, &generated, judge.as_ref(), &schema, window)?;
        write_text(path, &series_csv(&series, &schema))?;
    }
    Ok(())
}

fn train(cli: &Cli, file: &FileConfig, a: &TrainArgs) -> Result<(), Failure> {
    let out = out_path(cli)?;
    let mut patch = Map::new();
    if let Some(v) = a.beta {
        patch.insert("beta".into(), json!(v));
    }
    if let Some(v) = a.iterations {
        patch.insert("iterations".into(), json!(v));
    }
    if let Some(v) = a.learning_rate {
        patch.insert("learning_rate".into(), json!(v));
    }
    if let Some(v) = a.mean_field_alphabet {
        patch.insert("mean_field_alphabet".into(), json!(v));
    }
    if let Some(v) = a.batch_size {
        patch.insert("batch_size".into(), json!(v));
    }
    if let Some(v) = cli.seed {
        patch.insert("seed".into(), json!(v));
    }
    let patch = Value::Object(patch);
    let hyper: IBHyper = layered(&IBHyper::default(), &[file.training.as_ref(), Some(&patch)])
        .map_err(|e| usage(format!("{e:#}")))?;
    hyper.validate().map_err(|e| usage(e.to_string()))?;
    let corpus = load_corpus(&a.corpus)?;
    let alphabets = Alphabets {
        states: a.states,
        actions: a.actions,
        mean_field: hyper.mean_field_alphabet,
    };
    let data = TrainingData::from_corpus(&corpus, alphabets, hyper.batch_size)?;
    let trained = train_toy(&data, &hyper, a.mode.into())?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_text(&out.join("params.json"), &pretty(&trained.params)?)?;
    write_text(&out.join("prior.json"), &pretty(&trained.prior)?)?;
    write_text(&out.join("hyper.json"), &pretty(&trained.hyper)?)?;
    write_text(&out.join("curve.csv"), &trained.curve_csv())?;
    if let Some(last) = trained.curve.last() {
        log::info!("final policy loss {:.4}", last.policy_loss);
    }
    Ok(())
}

fn pretty<T: serde::Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn gen_synthetic(cli: &Cli, file: &FileConfig, a: &GenArgs) -> Result<(), Failure> {
    let out = out_path(cli)?;
    let mut patch = Map::new();
    if let Some(v) = a.events {
        patch.insert("num_events".into(), json!(v));
    }
    if let Some(v) = a.steps {
        patch.insert("steps_per_event".into(), json!(v));
    }
    if let Some(v) = a.agents {
        patch.insert("agents_per_step".into(), json!(v));
    }
    if let Some(v) = cli.seed {
        patch.insert("seed".into(), json!(v));
    }
    let patch = Value::Object(patch);
    let base = SyntheticGenConfig::self_exciting(cli.seed.unwrap_or(0));
    let mut cfg: SyntheticGenConfig = layered(&base, &[file.synthetic.as_ref(), Some(&patch)])
        .map_err(|e| usage(format!("{e:#}")))?;
    if a.no_feedback {
        cfg = cfg.without_feedback();
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let syn = generate_synthetic(&cfg)?;
    save_corpus(&syn.corpus, out)?;
    if let Some(path) = &a.latents {
        write_text(path, &pretty(&syn.latents)?)?;
    }
    Ok(())
}

fn serve(cli: &Cli, file: &FileConfig, a: &ServeArgs) -> Result<(), Failure> {
    let svc = &file.service;
    let addr = a.addr.clone().unwrap_or_else(|| svc.addr.clone());
    let runs = a
        .runs
        .clone()
        .or_else(|| cli.out.clone())
        .unwrap_or_else(|| svc.runs_dir.clone());
    let workers = a.workers.unwrap_or(svc.workers).max(1);
    let state = crate::build_state(file, &a.corpus, &runs, workers, cli.seed.unwrap_or(0))?;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(anyhow::Error::from)?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        log::info!("serving on {addr}, runs in {}", runs.display());
        axum::serve(listener, crate::service::router(Arc::new(state)))
            .await
            .context("server stopped")
    })?;
    Ok(())
}

pub fn dispatch(cli: &Cli) -> Result<(), Failure> {
    let file = FileConfig::load(cli.config.as_deref()).map_err(|e| usage(format!("{e:#}")))?;
    match &cli.command {
        Command::Simulate(a) => simulate(cli, &file, a),
        Command::Evaluate(a) => evaluate(cli, &file, a),
        Command::Forecast(a) => forecast(cli, &file, a),
        Command::Intervene(a) => intervene(cli, &file, a),
        Command::TrainToy(a) => train(cli, &file, a),
        Command::GenSynthetic(a) => gen_synthetic(cli, &file, a),
        Command::Serve(a) => serve(cli, &file, a),
    }
}
