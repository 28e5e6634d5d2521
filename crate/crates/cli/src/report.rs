use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use collective_clock::oracle::{CheckOutcome, ExploreVerdict};
use collective_clock::sim::{write_event_log, BlockedRank, Metrics, RankSummary, SimEvent, SimResult, SnapshotCut};
use serde::Serialize;

/// One line of `metrics.jsonl`.
#[derive(Clone, Debug, Serialize)]
pub struct MetricsRecord {
    pub workload: String,
    pub protocol: String,
    pub policy: String,
    pub seed: u64,
    pub request_step: Option<u64>,
    pub outcome: String,
    #[serde(flatten)]
    pub metrics: Metrics,
}

/// Contents of `verdict.json` for `run`.
#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub workload: String,
    pub protocol: String,
    pub policy: String,
    pub seed: u64,
    pub request_step: Option<u64>,
    pub outcome: String,
    pub safe: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_targets: Option<BTreeMap<String, u64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_mismatches: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub checks: Vec<CheckOutcome>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub frontier: Vec<(String, u64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cut: Option<SnapshotCut>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub blocked: Vec<BlockedRank>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub ranks: Vec<RankSummary>,
}

impl RunReport {
    pub fn from_result(base: RunReport, r: &SimResult) -> RunReport {
        let verdict = r.verdict.as_ref();
        RunReport {
            safe: verdict.map(|_| r.is_safe()),
            initial_targets: r
                .initial_targets
                .as_ref()
                .map(|t| t.iter().map(|(g, v)| (g.to_string(), *v)).collect()),
            target_mismatches: r.target_mismatches.clone(),
            checks: verdict.map(|v| v.checks.clone()).unwrap_or_default(),
            frontier: verdict.map(|v| v.frontier.iter().cloned().collect()).unwrap_or_default(),
            cut: r.cut.clone(),
            ranks: r.ranks.clone(),
            ..base
        }
    }
}

/// Contents of `verdict.json` for `verify`.
#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub workload: String,
    pub protocol: String,
    pub policy: String,
    pub request: String,
    pub max_instructions: usize,
    pub max_states: usize,
    pub safe: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(flatten)]
    pub verdict: ExploreVerdict,
}

/// Mean and extrema of one metric over a sweep.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    pub min: u64,
    pub max: u64,
}

impl Stat {
    pub fn of(values: &[u64]) -> Option<Stat> {
        let min = *values.iter().min()?;
        let max = *values.iter().max()?;
        let mean = values.iter().sum::<u64>() as f64 / values.len() as f64;
        Some(Stat { mean, min, max })
    }
}

/// One row of the comparison table: a protocol aggregated over the sweep.
#[derive(Clone, Debug, Serialize)]
pub struct CompareRow {
    pub protocol: String,
    pub runs: usize,
    pub snapshots: usize,
    pub safe: usize,
    pub extra_sync_events: Option<Stat>,
    pub protocol_messages_before_request: Option<Stat>,
    pub protocol_messages_after_request: Option<Stat>,
    pub steps_to_quiesce: Option<Stat>,
    pub collectives_executed_past_request: Option<Stat>,
    /// Per-run failures, as `seed N: message`.
    pub annotations: Vec<String>,
}

pub fn render_table(rows: &[CompareRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<9} {:>5} {:>5} {:>5}  {:<22} {:<22} {:<22} {:<22} {:<22}",
        "protocol", "runs", "snap", "safe", "extra_sync", "msgs_before", "msgs_after", "steps_to_quiesce", "past_request"
    );
    let cell = |s: &Option<Stat>| match s {
        Some(s) => format!("{:.1} [{}..{}]", s.mean, s.min, s.max),
        None => "-".to_string(),
    };
    for r in rows {
        let _ = writeln!(
            out,
            "{:<9} {:>5} {:>5} {:>5}  {:<22} {:<22} {:<22} {:<22} {:<22}",
            r.protocol,
            r.runs,
            r.snapshots,
            r.safe,
            cell(&r.extra_sync_events),
            cell(&r.protocol_messages_before_request),
            cell(&r.protocol_messages_after_request),
            cell(&r.steps_to_quiesce),
            cell(&r.collectives_executed_past_request),
        );
        for a in &r.annotations {
            let _ = writeln!(out, "          note: {a}");
        }
    }
    out
}

pub fn write_events(dir: &Path, events: &[SimEvent]) -> io::Result<()> {
    let mut f = BufWriter::new(fs::File::create(dir.join("events.log"))?);
    write_event_log(&mut f, events)?;
    f.flush()
}

pub fn write_metrics(dir: &Path, records: &[MetricsRecord]) -> io::Result<()> {
    let mut f = BufWriter::new(fs::File::create(dir.join("metrics.jsonl"))?);
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(dir.join(name), text)
}
