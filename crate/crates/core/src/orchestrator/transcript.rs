//! Append-only JSON-lines transcript of one simulation run.
//!
//! Every line is a [`Record`]: `run_id`, `seq`, `ts`, `day`, optional
//! `nation`, and an `event` tag with event-specific fields. Lines are flushed
//! as they are written, so a crashed run leaves a readable prefix.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::{AgentTurn, ParseFailure};
use crate::taxonomy::ActionTaxonomy;

use super::{RunStatus, SimulationError, Treatment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Clock {
    /// RFC 3339 wall-clock timestamps.
    #[default]
    Wall,
    /// `logical:<seq>` timestamps; transcripts become byte-reproducible.
    Logical,
}

impl Clock {
    fn stamp(self, seq: u64) -> String {
        match self {
            Clock::Wall => chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            Clock::Logical => format!("logical:{seq:08}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    RunStart {
        treatment: Treatment,
        seed: u64,
        scenario: String,
        days: u32,
        nations: Vec<String>,
        policy: String,
        updater: String,
        taxonomy: ActionTaxonomy,
        system_prompt: String,
        system_sha256: String,
    },
    Prompt {
        user_prompt: String,
        digest: String,
    },
    Response {
        attempt: u32,
        request_tag: String,
        content: String,
        finish_reason: String,
        transport_attempts: u32,
        latency_ms: u64,
    },
    Parse {
        attempt: u32,
        ok: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        failure: Option<ParseFailure>,
    },
    Turn {
        turn: AgentTurn,
        score: i64,
    },
    Score {
        scores: BTreeMap<String, i64>,
    },
    Summary {
        text: String,
    },
    DayEnd,
    RunEnd {
        status: RunStatus,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub run_id: String,
    pub seq: u64,
    pub ts: String,
    pub day: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nation: Option<String>,
    #[serde(flatten)]
    pub event: Event,
}

pub struct TranscriptWriter {
    path: PathBuf,
    out: BufWriter<File>,
    run_id: String,
    clock: Clock,
    next_seq: u64,
}

impl TranscriptWriter {
    pub fn create(path: &Path, run_id: &str, clock: Clock) -> Result<Self, SimulationError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| SimulationError::io(parent, e))?;
        }
        let file = File::create(path).map_err(|e| SimulationError::io(path, e))?;
        Ok(Self::wrap(path, file, run_id, clock, 0))
    }

    /// Reopens `path` truncated to `keep_bytes`, continuing at `next_seq`.
    pub fn resume(
        path: &Path,
        run_id: &str,
        clock: Clock,
        keep_bytes: u64,
        next_seq: u64,
    ) -> Result<Self, SimulationError> {
        let file = OpenOptions::new()
            .write(true)
            .open(path)
            .map_err(|e| SimulationError::io(path, e))?;
        file.set_len(keep_bytes).map_err(|e| SimulationError::io(path, e))?;
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| SimulationError::io(path, e))?;
        Ok(Self::wrap(path, file, run_id, clock, next_seq))
    }

    fn wrap(path: &Path, file: File, run_id: &str, clock: Clock, next_seq: u64) -> Self {
        Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
            run_id: run_id.to_string(),
            clock,
            next_seq,
        }
    }

    pub fn write(&mut self, day: u32, nation: Option<&str>, event: Event) -> Result<(), SimulationError> {
        let record = Record {
            run_id: self.run_id.clone(),
            seq: self.next_seq,
            ts: self.clock.stamp(self.next_seq),
            day,
            nation: nation.map(str::to_string),
            event,
        };
        self.next_seq += 1;
        let mut line = serde_json::to_string(&record).expect("transcript record serializes");
        line.push('\n');
        self.out
            .write_all(line.as_bytes())
            .and_then(|_| self.out.flush())
            .map_err(|e| SimulationError::io(&self.path, e))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// Records parsed from a transcript, with the byte offset that ends each one.
/// A trailing partial or corrupt line is ignored.
pub fn read_records(path: &Path) -> Result<Vec<(Record, u64)>, SimulationError> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| SimulationError::io(path, e))?;
    let mut out = Vec::new();
    let mut start = 0usize;
    while let Some(pos) = bytes[start..].iter().position(|&b| b == b'\n') {
        let end = start + pos + 1;
        match serde_json::from_slice::<Record>(&bytes[start..end - 1]) {
            Ok(r) => out.push((r, end as u64)),
            Err(e) => {
                tracing::warn!(path = %path.display(), offset = start, "stopping at unreadable transcript line: {e}");
                break;
            }
        }
        start = end;
    }
    Ok(out)
}
