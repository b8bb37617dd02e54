//! Trajectory JSONL: one header line, then one `StepRecord` per line.
//! Lines are flushed as they are produced, so an interrupted run leaves a
//! readable prefix.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{ForkInfo, SimulationConfig, StepRecord, Trajectory};
use crate::engine::StepSink;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryHeader {
    pub event_id: String,
    pub topic: String,
    pub config: SimulationConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fork: Option<ForkInfo>,
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    header: TrajectoryHeader,
}

impl TrajectoryHeader {
    pub fn of(t: &Trajectory) -> Self {
        TrajectoryHeader {
            event_id: t.event_id.clone(),
            topic: t.topic.clone(),
            config: t.config.clone(),
            fork: t.fork.clone(),
        }
    }
}

pub struct JsonlSink<W: Write> {
    out: W,
}

impl<W: Write> JsonlSink<W> {
    pub fn new(out: W) -> Self {
        JsonlSink { out }
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl JsonlSink<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        Ok(JsonlSink::new(BufWriter::new(File::create(path)?)))
    }
}

impl<W: Write> StepSink for JsonlSink<W> {
    fn header(&mut self, trajectory: &Trajectory) -> Result<()> {
        let line = serde_json::to_string(&HeaderLine {
            header: TrajectoryHeader::of(trajectory),
        })?;
        writeln!(self.out, "{line}")?;
        self.out.flush()?;
        Ok(())
    }

    fn step(&mut self, record: &StepRecord) -> Result<()> {
        writeln!(self.out, "{}", serde_json::to_string(record)?)?;
        self.out.flush()?;
        Ok(())
    }
}

pub fn trajectory_to_string(t: &Trajectory) -> String {
    let mut sink = JsonlSink::new(Vec::new());
    sink.header(t).expect("writing to memory");
    for s in &t.steps {
        sink.step(s).expect("writing to memory");
    }
    String::from_utf8(sink.into_inner()).expect("serde_json emits UTF-8")
}

pub fn write_trajectory(t: &Trajectory, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, trajectory_to_string(t))?;
    Ok(())
}

pub fn read_trajectory_from<R: BufRead>(reader: R) -> Result<Trajectory> {
    let mut lines = reader.lines().enumerate();
    let header = loop {
        match lines.next() {
            None => {
                return Err(Error::Parse {
                    line: 1,
                    message: "missing header line".into(),
                })
            }
            Some((i, line)) => {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let h: HeaderLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
                    line: i + 1,
                    message: format!("bad header: {e}"),
                })?;
                break h.header;
            }
        }
    };
    let mut steps = Vec::new();
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        steps.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(Trajectory {
        event_id: header.event_id,
        topic: header.topic,
        config: header.config,
        fork: header.fork,
        steps,
    })
}

pub fn read_trajectory(path: impl AsRef<Path>) -> Result<Trajectory> {
    read_trajectory_from(BufReader::new(File::open(path)?))
}
