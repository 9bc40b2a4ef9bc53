//! Append-only run log.
//!
//! One JSON record per line, schema-versioned, strictly sequence-ordered.
//! Every gateway call, prompt assembly, execution, memory mutation, and
//! verdict lands here exactly once, which is what makes replay comparison and
//! routing audits mechanical.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::gateway::ChatMessage;

pub const EVENT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    RunStarted {
        schema: u32,
        run_id: String,
        target: String,
        goal_mode: String,
        limited_instruction: bool,
    },
    /// A completed model call, with the full wire content for auditing.
    GatewayCall {
        call_index: u64,
        profile: String,
        purpose: String,
        messages: Vec<ChatMessage>,
        response_text: String,
        tokens_in: u64,
        tokens_out: u64,
    },
    /// Refused calls still spend tokens, so the counts ride along for exact
    /// cost reconstruction from the log.
    GatewayRefusal {
        call_index: u64,
        purpose: String,
        #[serde(default)]
        tokens_in: u64,
        #[serde(default)]
        tokens_out: u64,
    },
    GatewayFailure {
        purpose: String,
        error: String,
    },
    /// What went into a planning prompt: which granularities and how many
    /// entries, keyed to the node whose path was activated.
    PromptAssembled {
        role: String,
        purpose: String,
        node: u64,
        granularities: Vec<String>,
        entry_count: usize,
    },
    PhasePlanned {
        goal_id: u64,
        description: String,
        node: u64,
        budget: u32,
    },
    PlanMalformed {
        raw_head: String,
    },
    Spawn {
        parent: u64,
        node: u64,
        kind: String,
        locus: String,
    },
    Record {
        node: u64,
        entry: u64,
        instruction: String,
        exit_status: Option<i32>,
        truncated: bool,
        timed_out: bool,
    },
    Compressed {
        entry: u64,
        granularity: String,
        degraded: bool,
    },
    Activated {
        node: u64,
        granularity: String,
        entry_count: usize,
    },
    Prioritized {
        node: u64,
        order: Vec<u64>,
    },
    Executed {
        mode: String,
        exit_status: Option<i32>,
        timed_out: bool,
        truncated: bool,
        session: Option<String>,
    },
    ShellProbe {
        session: String,
        acquired: bool,
        is_root: bool,
    },
    PhaseVerdict {
        goal_id: u64,
        verdict: String,
    },
    PhaseReported {
        goal_id: u64,
        outcome: String,
        detail: Option<String>,
    },
    MissionEnded {
        verdict: String,
        outcome: String,
        evidence: Option<String>,
    },
    Note {
        text: String,
    },
}

impl Event {
    /// Schema tag of the variant, as written on the wire.
    pub fn kind(&self) -> &'static str {
        match self {
            Event::RunStarted { .. } => "run_started",
            Event::GatewayCall { .. } => "gateway_call",
            Event::GatewayRefusal { .. } => "gateway_refusal",
            Event::GatewayFailure { .. } => "gateway_failure",
            Event::PromptAssembled { .. } => "prompt_assembled",
            Event::PhasePlanned { .. } => "phase_planned",
            Event::PlanMalformed { .. } => "plan_malformed",
            Event::Spawn { .. } => "spawn",
            Event::Record { .. } => "record",
            Event::Compressed { .. } => "compressed",
            Event::Activated { .. } => "activated",
            Event::Prioritized { .. } => "prioritized",
            Event::Executed { .. } => "executed",
            Event::ShellProbe { .. } => "shell_probe",
            Event::PhaseVerdict { .. } => "phase_verdict",
            Event::PhaseReported { .. } => "phase_reported",
            Event::MissionEnded { .. } => "mission_ended",
            Event::Note { .. } => "note",
        }
    }
}

/// One line of the log: the event plus its position and wall-clock stamp.
/// Timestamps are for humans; replay comparisons must ignore them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoggedEvent {
    pub seq: u64,
    pub ts_ms: u64,
    #[serde(flatten)]
    pub event: Event,
}

pub struct EventLog {
    file: File,
    seq: u64,
}

impl EventLog {
    pub fn create(path: &Path) -> std::io::Result<EventLog> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)?;
        Ok(EventLog { file, seq: 0 })
    }

    pub fn append(&mut self, event: Event) -> std::io::Result<u64> {
        let seq = self.seq;
        self.seq += 1;
        let ts_ms = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        let line = serde_json::to_string(&LoggedEvent { seq, ts_ms, event })
            .expect("event serialization");
        self.file.write_all(line.as_bytes())?;
        self.file.write_all(b"\n")?;
        Ok(seq)
    }

    pub fn next_seq(&self) -> u64 {
        self.seq
    }
}

/// Reads a log back. Returns the events plus a warning per corrupt line, so
/// a damaged log still yields a partial report.
pub fn read_log(path: &Path) -> std::io::Result<(Vec<LoggedEvent>, Vec<String>)> {
    let reader = BufReader::new(File::open(path)?);
    let mut events = Vec::new();
    let mut warnings = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<LoggedEvent>(&line) {
            Ok(ev) => events.push(ev),
            Err(e) => warnings.push(format!("line {}: {e}", i + 1)),
        }
    }
    Ok((events, warnings))
}
