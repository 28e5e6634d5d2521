use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::domain::{Ggid, Rank};
use crate::error::LogError;
use crate::workload::CollectiveKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Action {
    EnterCollective,
    ExitCollective,
    InitNonblocking,
    CompleteRequest,
    Send,
    RecvMatch,
    ProtocolMsgSend,
    ProtocolMsgRecv,
    CheckpointRequest,
    SnapshotTaken,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MsgKind {
    TargetUpdate,
    Release,
}

/// One record of the event log. Field order is the serialized order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimEvent {
    pub step: u64,
    pub rank: Rank,
    pub action: Action,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instr: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comm: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ggid: Option<Ggid>,
    /// Per-communicator instance number, 1-based.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ordinal: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<CollectiveKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peer: Option<Rank>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub msg: Option<MsgKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<u64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub protocol: bool,
}

impl SimEvent {
    pub fn new(step: u64, rank: Rank, action: Action) -> Self {
        SimEvent {
            step,
            rank,
            action,
            instr: None,
            comm: None,
            ggid: None,
            ordinal: None,
            kind: None,
            request: None,
            peer: None,
            tag: None,
            msg: None,
            value: None,
            protocol: false,
        }
    }
}

/// Writes one JSON record per line.
pub fn write_event_log<W: Write>(mut out: W, events: &[SimEvent]) -> io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_event_log<R: BufRead>(input: R) -> Result<Vec<SimEvent>, LogError> {
    let mut events = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| LogError::Decode {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let ev = serde_json::from_str(&line).map_err(|e| LogError::Decode {
            line: i + 1,
            message: e.to_string(),
        })?;
        events.push(ev);
    }
    Ok(events)
}
