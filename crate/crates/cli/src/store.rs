//! Filesystem run store: one directory per run holding `record.json` and the
//! append-only `trajectory.jsonl`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use mfsim_core::domain::{SimulationConfig, StepRecord, Trajectory};
use mfsim_core::engine::intervention::InterventionSchedule;
use mfsim_core::engine::persist::read_trajectory;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Pending,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub event_id: String,
    pub config: SimulationConfig,
    pub status: RunStatus,
    pub trajectory_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_run: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fork_step: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<InterventionSchedule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Parent link of a forked run.
#[derive(Debug, Clone)]
pub struct Lineage {
    pub parent_run: String,
    pub fork_step: usize,
}

pub struct RunStore {
    dir: PathBuf,
    inner: Mutex<Inner>,
}

struct Inner {
    records: BTreeMap<String, RunRecord>,
    next: u64,
}

const RECORD_FILE: &str = "record.json";
const TRAJECTORY_FILE: &str = "trajectory.jsonl";

fn id_number(id: &str) -> Option<u64> {
    id.strip_prefix("run-")?.parse().ok()
}

impl RunStore {
    /// Open (or create) a store. Runs left pending or running by an earlier
    /// process are marked failed.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut records = BTreeMap::new();
        let mut next = 1;
        for entry in std::fs::read_dir(&dir)? {
            let path = entry?.path().join(RECORD_FILE);
            if !path.is_file() {
                continue;
            }
            let mut rec: RunRecord = serde_json::from_str(&std::fs::read_to_string(&path)?)
                .with_context(|| format!("parsing {}", path.display()))?;
            if matches!(rec.status, RunStatus::Pending | RunStatus::Running) {
                rec.status = RunStatus::Failed;
                rec.error = Some("interrupted by a service restart".into());
                write_record(&dir, &rec)?;
            }
            if let Some(n) = id_number(&rec.run_id) {
                next = next.max(n + 1);
            }
            records.insert(rec.run_id.clone(), rec);
        }
        Ok(RunStore {
            dir,
            inner: Mutex::new(Inner { records, next }),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn create(
        &self,
        event_id: &str,
        config: SimulationConfig,
        lineage: Option<Lineage>,
        schedule: Option<InterventionSchedule>,
    ) -> Result<RunRecord> {
        let mut inner = self.inner.lock().expect("store poisoned");
        let run_id = format!("run-{:06}", inner.next);
        inner.next += 1;
        let run_dir = self.dir.join(&run_id);
        std::fs::create_dir_all(&run_dir)?;
        let (parent_run, fork_step) = match lineage {
            Some(l) => (Some(l.parent_run), Some(l.fork_step)),
            None => (None, None),
        };
        let rec = RunRecord {
            run_id: run_id.clone(),
            event_id: event_id.to_string(),
            config,
            status: RunStatus::Pending,
            trajectory_path: run_dir.join(TRAJECTORY_FILE),
            parent_run,
            fork_step,
            schedule,
            error: None,
        };
        write_record(&self.dir, &rec)?;
        inner.records.insert(run_id, rec.clone());
        Ok(rec)
    }

    pub fn get(&self, run_id: &str) -> Option<RunRecord> {
        self.inner
            .lock()
            .expect("store poisoned")
            .records
            .get(run_id)
            .cloned()
    }

    pub fn list(&self) -> Vec<RunRecord> {
        self.inner
            .lock()
            .expect("store poisoned")
            .records
            .values()
            .cloned()
            .collect()
    }

    /// Move a run along pending -> running -> done | failed.
    pub fn transition(
        &self,
        run_id: &str,
        to: RunStatus,
        error: Option<String>,
    ) -> Result<RunRecord> {
        let mut inner = self.inner.lock().expect("store poisoned");
        let Some(rec) = inner.records.get_mut(run_id) else {
            bail!("unknown run {run_id}");
        };
        let allowed = matches!(
            (rec.status, to),
            (RunStatus::Pending, RunStatus::Running)
                | (RunStatus::Pending, RunStatus::Failed)
                | (RunStatus::Running, RunStatus::Done)
                | (RunStatus::Running, RunStatus::Failed)
        );
        if !allowed {
            bail!("run {run_id} cannot move from {:?} to {to:?}", rec.status);
        }
        let mut next = rec.clone();
        next.status = to;
        next.error = error;
        write_record(&self.dir, &next)?;
        *rec = next.clone();
        Ok(next)
    }

    pub fn trajectory(&self, rec: &RunRecord) -> Result<Trajectory> {
        Ok(read_trajectory(&rec.trajectory_path)?)
    }
}

fn write_record(dir: &Path, rec: &RunRecord) -> Result<()> {
    let run_dir = dir.join(&rec.run_id);
    let tmp = run_dir.join("record.json.tmp");
    std::fs::write(&tmp, serde_json::to_string_pretty(rec)?)?;
    std::fs::rename(&tmp, run_dir.join(RECORD_FILE))?;
    Ok(())
}

/// Steps persisted so far, ignoring a trailing line still being written.
pub fn persisted_steps(path: &Path) -> Result<Vec<StepRecord>> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    complete
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}
