//! HTTP run service. Runs execute on a bounded pool of blocking workers and
//! stream their steps to the run store as they go.

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use mfsim_core::corpus::Corpus;
use mfsim_core::domain::{DomainTag, SimulationConfig, Trajectory};
use mfsim_core::engine::intervention::{Intervention, InterventionSchedule};
use mfsim_core::engine::persist::JsonlSink;
use mfsim_core::engine::{
    fork_trajectory, run_simulation, run_simulation_with, ForkSource, RunOptions,
};
use mfsim_core::metrics::{evaluate_run, DimensionSchema, Judge, MetricReport};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Semaphore;

use crate::config::{layered, Models};
use crate::store::{persisted_steps, Lineage, RunRecord, RunStatus, RunStore};

pub struct AppState {
    pub corpus: Arc<Corpus>,
    pub store: Arc<RunStore>,
    pub models: Arc<Models>,
    pub judge: Arc<dyn Judge>,
    pub schema: DimensionSchema,
    pub window: usize,
    pub batch_size: usize,
    /// Partial `SimulationConfig` from the config file, applied under each
    /// request's own config.
    pub simulation_defaults: Option<Value>,
    pub workers: Arc<Semaphore>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    field: Option<String>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
            field: None,
        }
    }

    fn not_found(what: impl Into<String>) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, what)
    }

    fn conflict(what: impl Into<String>) -> Self {
        ApiError::new(StatusCode::CONFLICT, what)
    }

    fn invalid(field: &str, message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            message: message.into(),
            field: Some(field.to_string()),
        }
    }

    fn body(rej: JsonRejection) -> Self {
        ApiError::new(rej.status(), rej.body_text())
    }

    fn internal(err: impl std::fmt::Display) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, err.to_string())
    }

    /// Schedule errors carry their own path (`entries[0].step: ...`).
    fn schedule(err: mfsim_core::Error) -> Self {
        let msg = match err {
            mfsim_core::Error::Argument(m) => m,
            other => other.to_string(),
        };
        match msg.split_once(": ") {
            Some((path, rest)) if path.starts_with("entries[") => {
                ApiError::invalid(&format!("schedule.{path}"), rest)
            }
            _ => ApiError::invalid("schedule", msg),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if let Some(f) = self.field {
            body["field"] = json!(f);
        }
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// A schedule as a bare list of entries or as `{"entries": [...]}`.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum ScheduleBody {
    List(Vec<Intervention>),
    Full(InterventionSchedule),
}

impl From<ScheduleBody> for InterventionSchedule {
    fn from(b: ScheduleBody) -> Self {
        match b {
            ScheduleBody::List(entries) => InterventionSchedule { entries },
            ScheduleBody::Full(s) => s,
        }
    }
}

#[derive(Debug, Deserialize)]
pub struct CreateRun {
    pub event_id: String,
    #[serde(default)]
    pub config: Option<Value>,
    #[serde(default)]
    pub schedule: Option<ScheduleBody>,
}

#[derive(Debug, Deserialize)]
pub struct ForkRun {
    pub start_step: usize,
    #[serde(default)]
    pub schedule: Option<ScheduleBody>,
    #[serde(default)]
    pub config_overrides: Option<Value>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub run_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EventSummary {
    pub event_id: String,
    pub topic: String,
    pub domain_tag: DomainTag,
    pub timeline_len: usize,
    pub steps: usize,
}

#[derive(Debug, Deserialize)]
pub struct MetricsQuery {
    #[serde(default)]
    pub baseline: Option<String>,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/runs", post(create_run).get(list_runs))
        .route("/api/runs/{id}", get(get_run))
        .route("/api/runs/{id}/trajectory", get(get_trajectory))
        .route("/api/runs/{id}/metrics", get(get_metrics))
        .route("/api/runs/{id}/fork", post(fork_run))
        .route("/api/events", get(list_events))
        .route("/api/schema", get(get_schema))
        .with_state(state)
}

fn checked_schedule(
    body: Option<ScheduleBody>,
    cfg: &SimulationConfig,
) -> Result<Option<InterventionSchedule>, ApiError> {
    let Some(s) = body.map(InterventionSchedule::from) else {
        return Ok(None);
    };
    s.validate(cfg.horizon, cfg.batch_size)
        .map_err(ApiError::schedule)?;
    Ok((!s.is_empty()).then_some(s))
}

fn checked_config(cfg: anyhow::Result<SimulationConfig>) -> Result<SimulationConfig, ApiError> {
    let cfg = cfg.map_err(|e| ApiError::invalid("config", format!("{e:#}")))?;
    cfg.validate()
        .map_err(|e| ApiError::invalid("config", e.to_string()))?;
    Ok(cfg)
}

async fn create_run(
    State(st): State<Arc<AppState>>,
    body: Result<Json<CreateRun>, JsonRejection>,
) -> Result<(StatusCode, Json<Created>), ApiError> {
    let Json(req) = body.map_err(ApiError::body)?;
    let event = st
        .corpus
        .get(&req.event_id)
        .ok_or_else(|| ApiError::not_found(format!("unknown event {}", req.event_id)))?;
    let base = SimulationConfig::for_event(event, st.batch_size);
    let cfg = checked_config(layered(
        &base,
        &[st.simulation_defaults.as_ref(), req.config.as_ref()],
    ))?;
    let schedule = checked_schedule(req.schedule, &cfg)?;
    let rec = st
        .store
        .create(&req.event_id, cfg, None, schedule)
        .map_err(ApiError::internal)?;
    launch(st.clone(), rec.clone(), None);
    Ok((StatusCode::CREATED, Json(Created { run_id: rec.run_id })))
}

async fn fork_run(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<ForkRun>, JsonRejection>,
) -> Result<(StatusCode, Json<Created>), ApiError> {
    let Json(req) = body.map_err(ApiError::body)?;
    let parent = done_record(&st, &id)?;
    let cfg = checked_config(layered(&parent.config, &[req.config_overrides.as_ref()]))?;
    if req.start_step > cfg.horizon {
        return Err(ApiError::invalid(
            "start_step",
            format!("{} is beyond the horizon {}", req.start_step, cfg.horizon),
        ));
    }
    let schedule = checked_schedule(req.schedule, &cfg)?;
    let trajectory = st.store.trajectory(&parent).map_err(ApiError::internal)?;
    let rec = st
        .store
        .create(
            &parent.event_id,
            cfg,
            Some(Lineage {
                parent_run: parent.run_id.clone(),
                fork_step: req.start_step,
            }),
            schedule,
        )
        .map_err(ApiError::internal)?;
    launch(st.clone(), rec.clone(), Some(trajectory));
    Ok((StatusCode::CREATED, Json(Created { run_id: rec.run_id })))
}

/// Queue a run on the worker pool. `parent` is set for forks.
fn launch(st: Arc<AppState>, rec: RunRecord, parent: Option<Trajectory>) {
    tokio::spawn(async move {
        let permit = st.workers.clone().acquire_owned().await;
        if permit.is_err() {
            let _ = st.store.transition(
                &rec.run_id,
                RunStatus::Failed,
                Some("worker pool closed".into()),
            );
            return;
        }
        if let Err(e) = st.store.transition(&rec.run_id, RunStatus::Running, None) {
            log::error!("{e:#}");
            return;
        }
        let worker = st.clone();
        let id = rec.run_id.clone();
        let outcome =
            tokio::task::spawn_blocking(move || execute(&worker, &rec, parent.as_ref())).await;
        let (status, err) = match outcome {
            Ok(Ok(())) => (RunStatus::Done, None),
            Ok(Err(e)) => (RunStatus::Failed, Some(format!("{e:#}"))),
            Err(e) => (RunStatus::Failed, Some(format!("worker panicked: {e}"))),
        };
        if let Some(e) = &err {
            log::warn!("run {id} failed: {e}");
        }
        if let Err(e) = st.store.transition(&id, status, err) {
            log::error!("{e:#}");
        }
    });
}

fn execute(st: &AppState, rec: &RunRecord, parent: Option<&Trajectory>) -> anyhow::Result<()> {
    let event = st
        .corpus
        .get(&rec.event_id)
        .ok_or_else(|| anyhow::anyhow!("unknown event {}", rec.event_id))?;
    let mut sink = JsonlSink::create(&rec.trajectory_path)?;
    let backends = st.models.backends();
    let schedule = rec.schedule.as_ref();
    match (parent, rec.fork_step) {
        (Some(p), Some(step)) => {
            fork_trajectory(
                event,
                ForkSource::Parent {
                    trajectory: p,
                    run_id: rec.parent_run.as_deref(),
                },
                step,
                &rec.config,
                backends,
                schedule,
                RunOptions::default(),
                &mut sink,
            )?;
        }
        _ => {
            run_simulation_with(
                event,
                &rec.config,
                backends,
                schedule,
                RunOptions::default(),
                &mut sink,
            )?;
        }
    }
    Ok(())
}

fn record(st: &AppState, id: &str) -> Result<RunRecord, ApiError> {
    st.store
        .get(id)
        .ok_or_else(|| ApiError::not_found(format!("unknown run {id}")))
}

fn done_record(st: &AppState, id: &str) -> Result<RunRecord, ApiError> {
    let rec = record(st, id)?;
    if rec.status != RunStatus::Done {
        return Err(ApiError::conflict(format!(
            "run {id} is {:?}, not done",
            rec.status
        )));
    }
    Ok(rec)
}

async fn list_runs(State(st): State<Arc<AppState>>) -> Json<Vec<RunRecord>> {
    Json(st.store.list())
}

async fn get_run(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<RunRecord> {
    record(&st, &id).map(Json)
}

async fn get_trajectory(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    let rec = match record(&st, &id) {
        Ok(r) => r,
        Err(e) => return e.into_response(),
    };
    match persisted_steps(&rec.trajectory_path) {
        Ok(steps) => Json(steps).into_response(),
        Err(e) => ApiError::internal(e).into_response(),
    }
}

async fn get_metrics(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<MetricsQuery>,
) -> ApiResult<MetricReport> {
    let gen_rec = done_record(&st, &id)?;
    let base_rec = match &q.baseline {
        Some(b) => Some(done_record(&st, b)?),
        None => None,
    };
    if let Some(b) = &base_rec {
        if b.event_id != gen_rec.event_id {
            return Err(ApiError::invalid(
                "baseline",
                format!(
                    "baseline covers {}, run covers {}",
                    b.event_id, gen_rec.event_id
                ),
            ));
        }
    }
    let worker = st.clone();
    tokio::task::spawn_blocking(move || {
        let generated = worker
            .store
            .trajectory(&gen_rec)
            .map_err(ApiError::internal)?;
        let real = match base_rec {
            Some(b) => worker.store.trajectory(&b).map_err(ApiError::internal)?,
            None => ground_truth(&worker, &gen_rec)?,
        };
        evaluate_run(
            &real,
            &generated,
            worker.judge.as_ref(),
            &worker.schema,
            worker.window,
            Some(worker.models.policy()),
        )
        .map(Json)
        .map_err(|e| ApiError::invalid("baseline", e.to_string()))
    })
    .await
    .map_err(ApiError::internal)?
}

/// Every step observed: the event's own timeline.
fn ground_truth(st: &AppState, rec: &RunRecord) -> Result<Trajectory, ApiError> {
    let event = st
        .corpus
        .get(&rec.event_id)
        .ok_or_else(|| ApiError::not_found(format!("unknown event {}", rec.event_id)))?;
    let mut cfg = rec.config.clone();
    cfg.warmup_steps = Some(cfg.horizon);
    run_simulation(event, &cfg, st.models.backends(), None).map_err(ApiError::internal)
}

async fn list_events(State(st): State<Arc<AppState>>) -> Json<Vec<EventSummary>> {
    Json(
        st.corpus
            .events
            .iter()
            .map(|e| EventSummary {
                event_id: e.event_id.clone(),
                topic: e.topic.clone(),
                domain_tag: e.domain_tag,
                timeline_len: e.timeline.len(),
                steps: e.step_count(st.batch_size),
            })
            .collect(),
    )
}

async fn get_schema(State(st): State<Arc<AppState>>) -> Json<DimensionSchema> {
    Json(st.schema.clone())
}
