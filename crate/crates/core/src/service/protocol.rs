//! Wire messages: one JSON object per line, discriminated by `kind`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunState {
    Running,
    Paused,
    Stopped,
}

impl std::fmt::Display for RunState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RunState::Running => "running",
            RunState::Paused => "paused",
            RunState::Stopped => "stopped",
        })
    }
}

/// Session state carried by `registry_update`, so a late subscriber can
/// render the current situation before live events arrive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateSummary {
    pub session: u64,
    pub run: RunState,
    pub mode: String,
    pub collected: usize,
    pub target: usize,
    pub snapshot_version: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Op {
    SavePattern { name: String, activity: String },
    IgnorePattern,
    NotOfInterest,
    CancelCollection,
    Retrain,
    Pause,
    Resume,
    Stop,
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::SavePattern { .. } => "save_pattern",
            Op::IgnorePattern => "ignore_pattern",
            Op::NotOfInterest => "not_of_interest",
            Op::CancelCollection => "cancel_collection",
            Op::Retrain => "retrain",
            Op::Pause => "pause",
            Op::Resume => "resume",
            Op::Stop => "stop",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Command {
    pub cid: String,
    #[serde(flatten)]
    pub op: Op,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Message {
    Frame {
        seq: u64,
        t_ms: u64,
        acc: [f64; 3],
        gyro: [f64; 3],
        orient: [f64; 3],
    },
    UnitEvent {
        seq: u64,
        t_ms: u64,
        raw: String,
        voted: Option<String>,
        conf: f64,
    },
    ActivityEvent {
        seq: u64,
        t0_ms: u64,
        t1_ms: u64,
        label: String,
        conf: f64,
    },
    NoveltyPrompt {
        seq: u64,
        candidate_id: String,
    },
    Progress {
        seq: u64,
        collected: usize,
        target: usize,
    },
    RegistryUpdate {
        seq: u64,
        version: u64,
        patterns: Vec<String>,
        activities: Vec<String>,
        state: StateSummary,
    },
    Command {
        cid: String,
        #[serde(flatten)]
        op: Op,
    },
    CommandAck {
        seq: u64,
        cid: String,
        ok: bool,
    },
    Error {
        seq: u64,
        #[serde(default)]
        cid: Option<String>,
        code: String,
        message: String,
    },
}

impl Message {
    pub fn seq(&self) -> Option<u64> {
        match self {
            Message::Frame { seq, .. }
            | Message::UnitEvent { seq, .. }
            | Message::ActivityEvent { seq, .. }
            | Message::NoveltyPrompt { seq, .. }
            | Message::Progress { seq, .. }
            | Message::RegistryUpdate { seq, .. }
            | Message::CommandAck { seq, .. }
            | Message::Error { seq, .. } => Some(*seq),
            Message::Command { .. } => None,
        }
    }

    pub(crate) fn set_seq(&mut self, n: u64) {
        match self {
            Message::Frame { seq, .. }
            | Message::UnitEvent { seq, .. }
            | Message::ActivityEvent { seq, .. }
            | Message::NoveltyPrompt { seq, .. }
            | Message::Progress { seq, .. }
            | Message::RegistryUpdate { seq, .. }
            | Message::CommandAck { seq, .. }
            | Message::Error { seq, .. } => *seq = n,
            Message::Command { .. } => {}
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Message::Frame { .. } => "frame",
            Message::UnitEvent { .. } => "unit_event",
            Message::ActivityEvent { .. } => "activity_event",
            Message::NoveltyPrompt { .. } => "novelty_prompt",
            Message::Progress { .. } => "progress",
            Message::RegistryUpdate { .. } => "registry_update",
            Message::Command { .. } => "command",
            Message::CommandAck { .. } => "command_ack",
            Message::Error { .. } => "error",
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("messages always serialize")
    }

    pub fn from_line(line: &str) -> Result<Message> {
        Ok(serde_json::from_str(line)?)
    }

    /// Error reply for `err`, classified by its variant.
    pub fn error(cid: Option<String>, err: &Error) -> Message {
        Message::Error { seq: 0, cid, code: error_code(err).into(), message: err.to_string() }
    }
}

pub fn error_code(err: &Error) -> &'static str {
    match err.root() {
        Error::Io(_) => "io",
        Error::Format(_) | Error::Parse { .. } | Error::Row { .. } => "format",
        Error::Data(_) => "data",
        Error::Argument(_) => "argument",
        Error::State(_) => "state",
        Error::Conflict(_) => "conflict",
        Error::Training(_) => "training",
        Error::Compatibility { .. } => "compatibility",
    }
}

/// Parses one inbound line. On failure returns the correlation id when it
/// could be recovered, so the error reply can carry it.
pub fn parse_command(line: &str) -> std::result::Result<Command, (Option<String>, Error)> {
    let v: serde_json::Value = serde_json::from_str(line).map_err(|e| (None, Error::from(e)))?;
    let cid = match v.get("cid") {
        Some(serde_json::Value::String(s)) => Some(s.clone()),
        Some(serde_json::Value::Number(n)) => Some(n.to_string()),
        _ => None,
    };
    if v.get("kind").and_then(|k| k.as_str()) != Some("command") {
        return Err((cid, Error::Format("expected a message of kind \"command\"".into())));
    }
    let Some(cid) = cid else {
        return Err((None, Error::Format("command without a cid".into())));
    };
    let op: Op = serde_json::from_value(v).map_err(|e| (Some(cid.clone()), Error::from(e)))?;
    Ok(Command { cid, op })
}
