//! `ccsim`: runs workloads under a checkpoint protocol, compares protocols
//! over seed sweeps, and drives the exhaustive oracle.
//!
//! Exit codes: 0 safe or complete, 1 violation, 2 deadlock, 3 unsupported
//! feature, 4 usage error, 5 bounded or partial result.

mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::thread;

use clap::{Args, Parser, Subcommand};
use collective_clock::cc::{CcOptions, CcProtocol};
use collective_clock::oracle::{explore_interleavings, ExploreBounds, RequestMode};
use collective_clock::sim::{
    random_request_step, run, AnyProtocol, Outcome, ProgressPolicy, ProtocolKind, RequestAt, SimConfig, SimResult,
};
use collective_clock::workload::{generate_random_workload, parse_workload, validate_correctness, GenParams, Workload};
use collective_clock::SimError;
use log::{debug, info};
use thiserror::Error;

use report::{CompareRow, MetricsRecord, RunReport, Stat, VerifyReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Code {
    Ok = 0,
    Violation = 1,
    Deadlock = 2,
    Unsupported = 3,
    Usage = 4,
    Partial = 5,
}

impl Code {
    fn of(e: &SimError) -> Code {
        match e {
            SimError::Config(_) => Code::Usage,
            SimError::Erroneous(_) | SimError::InvariantViolation(_) => Code::Violation,
            SimError::Unsupported(_) => Code::Unsupported,
            SimError::Deadlock(_) => Code::Deadlock,
            SimError::Runaway { .. } => Code::Partial,
        }
    }

    fn label(e: &SimError) -> &'static str {
        match e {
            SimError::Config(_) => "config-error",
            SimError::Erroneous(_) => "erroneous",
            SimError::InvariantViolation(_) => "invariant-violation",
            SimError::Unsupported(_) => "unsupported",
            SimError::Deadlock(_) => "deadlock",
            SimError::Runaway { .. } => "runaway",
        }
    }

    /// The more severe of two codes, in the order deadlock, violation,
    /// unsupported, partial.
    fn worst(self, other: Code) -> Code {
        let rank = |c: Code| match c {
            Code::Ok => 0,
            Code::Partial => 1,
            Code::Unsupported => 2,
            Code::Violation => 3,
            Code::Deadlock => 4,
            Code::Usage => 5,
        };
        if rank(other) > rank(self) {
            other
        } else {
            self
        }
    }
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("cannot read workload {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
}

/// When to inject the checkpoint request.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum RequestArg {
    Step(u64),
    Random,
    Script,
    Anywhere,
    Never,
}

impl FromStr for RequestArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(RequestArg::Random),
            "script" => Ok(RequestArg::Script),
            "anywhere" => Ok(RequestArg::Anywhere),
            "never" | "none" => Ok(RequestArg::Never),
            n => n
                .parse()
                .map(RequestArg::Step)
                .map_err(|_| format!("expected a step number, `random`, `script`, `anywhere` or `never`, got `{n}`")),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ccsim", version, about = "Collective Clock checkpoint coordination simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one workload and write its event log, metrics and verdict.
    Run(RunArgs),
    /// Compare CC and 2PC over a sweep of seeds.
    Compare(CompareArgs),
    /// Enumerate every schedule of a small workload with the oracle.
    Verify(VerifyArgs),
    /// Check that a workload is a correct program.
    Validate(ValidateArgs),
    /// Print a random correct workload.
    Generate(GenerateArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Workload file.
    #[arg(long)]
    workload: PathBuf,
    /// Progress policy for non-blocking collectives: eager, lazy or random.
    #[arg(long, default_value = "eager")]
    progress: ProgressPolicy,
    /// Directory for report files; created if missing.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// cc, 2pc or none.
    #[arg(long, default_value = "cc")]
    protocol: ProtocolKind,
    /// Scheduler step, `random`, `script` or `never`.
    #[arg(long, default_value = "never")]
    request_at: RequestArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Disable the point-to-point release messages of CC.
    #[arg(long)]
    no_p2p_release: bool,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[command(flatten)]
    common: Common,
    /// Scheduler step, `random` or `script`.
    #[arg(long, default_value = "random")]
    request_at: RequestArg,
    /// First seed of the sweep.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of seeds in the sweep.
    #[arg(long, default_value_t = 10)]
    sweep: u64,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[command(flatten)]
    common: Common,
    /// cc, 2pc or none.
    #[arg(long, default_value = "cc")]
    protocol: ProtocolKind,
    /// `anywhere`, `script` or `never`.
    #[arg(long, default_value = "anywhere")]
    request_at: RequestArg,
    /// Largest instruction count explored exhaustively.
    #[arg(long)]
    verify_bounds: Option<usize>,
    /// Distinct states visited before giving up.
    #[arg(long)]
    max_states: Option<usize>,
    #[arg(long)]
    no_p2p_release: bool,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long)]
    workload: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    ranks: u32,
    #[arg(long, default_value_t = 10)]
    collectives: usize,
    #[arg(long, default_value_t = 0)]
    p2p: usize,
    /// Fraction of collectives issued as non-blocking.
    #[arg(long, default_value_t = 0.0)]
    nonblocking: f64,
    /// Write to this file instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("CC_SNAPSHOT_LOG_LEVEL")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(Code::Usage as u8)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Generate(a) => cmd_generate(a),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("ccsim: {e}");
            ExitCode::from(Code::Usage as u8)
        }
    }
}

fn load(path: &Path) -> Result<Workload, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    parse_workload(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn out_dir(out: &Option<PathBuf>) -> Result<Option<&Path>, CliError> {
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|source| CliError::Write {
            path: dir.clone(),
            source,
        })?;
    }
    Ok(out.as_deref())
}

fn write_err(dir: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |source| CliError::Write {
        path: dir.to_path_buf(),
        source,
    }
}

fn protocol(kind: ProtocolKind, world_size: u32, p2p_release: bool) -> AnyProtocol {
    match kind {
        ProtocolKind::Cc => AnyProtocol::Cc(CcProtocol::new(world_size, CcOptions { p2p_release })),
        other => AnyProtocol::new(other, world_size),
    }
}

/// Turns a request flag into what `run` takes plus the concrete step.
fn resolve_request(
    arg: RequestArg,
    config: &SimConfig,
    workload: &Workload,
) -> Result<(Option<RequestAt>, Option<u64>), SimError> {
    match arg {
        RequestArg::Never => Ok((None, None)),
        RequestArg::Step(s) => Ok((Some(RequestAt::Step(s)), Some(s))),
        RequestArg::Random => {
            let s = random_request_step(config, workload, config.scheduler_seed)?;
            Ok((Some(RequestAt::Step(s)), Some(s)))
        }
        RequestArg::Script => Ok((Some(RequestAt::Script), None)),
        RequestArg::Anywhere => Err(SimError::Config(
            "`anywhere` applies to `verify` only; use a step, `random` or `script`".into(),
        )),
    }
}

fn outcome_name(o: Outcome) -> &'static str {
    match o {
        Outcome::Completed => "completed",
        Outcome::Snapshot => "snapshot",
    }
}

fn cmd_run(a: RunArgs) -> Result<Code, CliError> {
    let w = load(&a.common.workload)?;
    let dir = out_dir(&a.common.out)?;
    let config = SimConfig::new(w.world_size)
        .seed(a.seed)
        .policy(a.common.progress);
    let mut base = RunReport {
        workload: a.common.workload.display().to_string(),
        protocol: a.protocol.to_string(),
        policy: a.common.progress.to_string(),
        seed: a.seed,
        request_step: None,
        outcome: String::new(),
        safe: None,
        error: None,
        initial_targets: None,
        target_mismatches: None,
        checks: Vec::new(),
        frontier: Vec::new(),
        cut: None,
        blocked: Vec::new(),
        ranks: Vec::new(),
    };
    let attempt = resolve_request(a.request_at, &config, &w).and_then(|(at, step)| {
        base.request_step = step;
        info!("running {} under {} (request {:?})", base.workload, a.protocol, at);
        run(&config, &w, protocol(a.protocol, w.world_size, !a.no_p2p_release), at)
    });

    let (code, report, events, metrics) = match attempt {
        Ok(r) => {
            let code = result_code(&r);
            base.outcome = outcome_name(r.outcome).to_string();
            let report = RunReport::from_result(base, &r);
            (code, report, r.events, Some(r.metrics))
        }
        Err(e) => {
            let code = Code::of(&e);
            base.outcome = Code::label(&e).to_string();
            base.error = Some(e.to_string());
            let events = match e {
                SimError::Deadlock(d) => {
                    base.blocked = d.blocked.clone();
                    d.events
                }
                _ => Vec::new(),
            };
            (code, base, events, None)
        }
    };

    print_run(&report, metrics.as_ref());
    if let Some(dir) = dir {
        report::write_events(dir, &events).map_err(write_err(dir))?;
        let records: Vec<MetricsRecord> = metrics
            .into_iter()
            .map(|m| MetricsRecord {
                workload: report.workload.clone(),
                protocol: report.protocol.clone(),
                policy: report.policy.clone(),
                seed: report.seed,
                request_step: report.request_step,
                outcome: report.outcome.clone(),
                metrics: m,
            })
            .collect();
        report::write_metrics(dir, &records).map_err(write_err(dir))?;
        report::write_json(dir, "verdict.json", &report).map_err(write_err(dir))?;
    }
    Ok(code)
}

fn result_code(r: &SimResult) -> Code {
    match r.outcome {
        Outcome::Completed => Code::Ok,
        Outcome::Snapshot if r.is_safe() => Code::Ok,
        Outcome::Snapshot => Code::Violation,
    }
}

fn print_run(report: &RunReport, metrics: Option<&collective_clock::sim::Metrics>) {
    println!("workload:  {}", report.workload);
    println!("protocol:  {} ({} progress, seed {})", report.protocol, report.policy, report.seed);
    if let Some(s) = report.request_step {
        println!("request:   step {s}");
    }
    println!("outcome:   {}", report.outcome);
    if let Some(e) = &report.error {
        println!("error:     {e}");
    }
    if let Some(t) = &report.initial_targets {
        let list: Vec<String> = t.iter().map(|(g, v)| format!("{g}={v}")).collect();
        println!("targets:   {}", list.join(" "));
    }
    if let Some(safe) = report.safe {
        println!("safe:      {safe}");
        for c in report.checks.iter().filter(|c| !c.passed) {
            println!("  {} failed: {}", c.check, c.witnesses.join("; "));
        }
    }
    if let Some(m) = report.target_mismatches.as_ref().filter(|m| !m.is_empty()) {
        println!("targets diverge: {}", m.join("; "));
    }
    if let Some(m) = metrics {
        println!(
            "metrics:   steps {}, protocol messages {} before / {} after request, extra sync {}, drain iterations {}",
            m.steps,
            m.protocol_messages_before_request,
            m.protocol_messages_after_request,
            m.extra_sync_events,
            m.drain_iterations
        );
    }
}

type SweepPoint = (u64, Option<u64>, Result<SimResult, SimError>);

fn sweep(
    w: &Workload,
    kind: ProtocolKind,
    seeds: &[u64],
    request_at: RequestArg,
    policy: ProgressPolicy,
) -> Vec<SweepPoint> {
    let workers = thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let chunk = seeds.len().div_ceil(workers).max(1);
    thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|&seed| {
                            let config = SimConfig::new(w.world_size).seed(seed).policy(policy);
                            match resolve_request(request_at, &config, w) {
                                Ok((at, step)) => (seed, step, run(&config, w, AnyProtocol::new(kind, w.world_size), at)),
                                Err(e) => (seed, None, Err(e)),
                            }
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("sweep worker panicked"))
            .collect()
    })
}

fn aggregate(kind: ProtocolKind, points: &[SweepPoint]) -> (CompareRow, Code) {
    let mut code = Code::Ok;
    let mut annotations = Vec::new();
    let ok: Vec<&SimResult> = points
        .iter()
        .filter_map(|(seed, _, r)| match r {
            Ok(r) => Some(r),
            Err(e) => {
                code = code.worst(Code::of(e));
                annotations.push(format!("seed {seed}: {e}"));
                None
            }
        })
        .collect();
    let stat = |f: &dyn Fn(&SimResult) -> Option<u64>| Stat::of(&ok.iter().filter_map(|r| f(r)).collect::<Vec<_>>());
    let snapshots = ok.iter().filter(|r| r.outcome == Outcome::Snapshot).count();
    let safe = ok.iter().filter(|r| r.outcome == Outcome::Snapshot && r.is_safe()).count();
    for (seed, _, r) in points {
        if r.as_ref().is_ok_and(|r| result_code(r) != Code::Ok) {
            code = code.worst(Code::Violation);
            annotations.push(format!("seed {seed}: unsafe snapshot"));
        }
    }
    let row = CompareRow {
        protocol: kind.to_string(),
        runs: points.len(),
        snapshots,
        safe,
        extra_sync_events: stat(&|r| Some(r.metrics.extra_sync_events)),
        protocol_messages_before_request: stat(&|r| Some(r.metrics.protocol_messages_before_request)),
        protocol_messages_after_request: stat(&|r| Some(r.metrics.protocol_messages_after_request)),
        steps_to_quiesce: stat(&|r| r.metrics.steps_to_quiesce),
        collectives_executed_past_request: stat(&|r| {
            Some(r.metrics.collectives_executed_past_request.values().sum())
        }),
        annotations,
    };
    (row, code)
}

fn cmd_compare(a: CompareArgs) -> Result<Code, CliError> {
    if matches!(a.request_at, RequestArg::Anywhere | RequestArg::Never) {
        return Err(CliError::Usage(
            "compare needs a request: a step, `random` or `script`".into(),
        ));
    }
    let w = load(&a.common.workload)?;
    let dir = out_dir(&a.common.out)?;
    let seeds: Vec<u64> = (0..a.sweep).map(|i| a.seed + i).collect();
    let mut rows = Vec::new();
    let mut records = Vec::new();
    let mut code = Code::Ok;
    if !seeds.is_empty() {
        for kind in [ProtocolKind::Cc, ProtocolKind::TwoPc] {
            let points = sweep(&w, kind, &seeds, a.request_at, a.common.progress);
            let (mut row, c) = aggregate(kind, &points);
            // 2PC cannot run non-blocking workloads; that is a known gap, not a failure.
            if kind == ProtocolKind::TwoPc && w.has_nonblocking() {
                row.annotations = vec!["unsupported: workload uses non-blocking collectives".into()];
            } else {
                code = code.worst(c);
            }
            debug!("{kind}: {} runs aggregated", points.len());
            for (seed, step, r) in &points {
                if let Ok(r) = r {
                    records.push(MetricsRecord {
                        workload: a.common.workload.display().to_string(),
                        protocol: kind.to_string(),
                        policy: a.common.progress.to_string(),
                        seed: *seed,
                        request_step: *step,
                        outcome: outcome_name(r.outcome).to_string(),
                        metrics: r.metrics.clone(),
                    });
                }
            }
            rows.push(row);
        }
    }
    print!("{}", report::render_table(&rows));
    if let Some(dir) = dir {
        report::write_metrics(dir, &records).map_err(write_err(dir))?;
        report::write_json(dir, "comparison.json", &rows).map_err(write_err(dir))?;
    }
    Ok(code)
}

fn cmd_verify(a: VerifyArgs) -> Result<Code, CliError> {
    let mode = match a.request_at {
        RequestArg::Anywhere => RequestMode::Anywhere,
        RequestArg::Script => RequestMode::Script,
        RequestArg::Never => RequestMode::Never,
        _ => {
            return Err(CliError::Usage(
                "verify takes `anywhere`, `script` or `never` as the request".into(),
            ))
        }
    };
    let w = load(&a.common.workload)?;
    let dir = out_dir(&a.common.out)?;
    let mut bounds = ExploreBounds::default();
    if let Some(n) = a.verify_bounds {
        bounds = bounds.with_instructions(n);
    }
    if let Some(n) = a.max_states {
        bounds.max_states = n;
    }
    let p = protocol(a.protocol, w.world_size, !a.no_p2p_release);
    let (verdict, error, code) = match explore_interleavings(&w, p, a.common.progress, mode, bounds) {
        Ok(v) => {
            let code = if v.deadlock.is_some() {
                Code::Deadlock
            } else if v.violation.is_some() {
                Code::Violation
            } else if v.bounded {
                Code::Partial
            } else {
                Code::Ok
            };
            (v, None, code)
        }
        Err(e) => (Default::default(), Some(e.to_string()), Code::of(&e)),
    };
    let report = VerifyReport {
        workload: a.common.workload.display().to_string(),
        protocol: a.protocol.to_string(),
        policy: a.common.progress.to_string(),
        request: format!("{mode:?}").to_lowercase(),
        max_instructions: bounds.max_instructions,
        max_states: bounds.max_states,
        safe: code == Code::Ok,
        error,
        verdict,
    };
    println!("workload:  {}", report.workload);
    println!("protocol:  {} ({} progress, request {})", report.protocol, report.policy, report.request);
    println!(
        "explored:  {} states, {} completions, {} snapshots, {} distinct frontiers",
        report.verdict.states,
        report.verdict.completions,
        report.verdict.snapshots,
        report.verdict.frontiers.len()
    );
    if let Some(e) = &report.error {
        println!("error:     {e}");
    }
    if let Some(r) = &report.verdict.bound_reason {
        println!("partial:   {r}");
    }
    if let Some(d) = &report.verdict.deadlock {
        println!("deadlock:  {}", d.message);
    }
    if let Some(v) = &report.verdict.violation {
        println!("violation: {}", v.message);
    }
    println!("verdict:   {}", if report.safe { "safe" } else { "not safe" });
    if let Some(dir) = dir {
        report::write_json(dir, "verdict.json", &report).map_err(write_err(dir))?;
    }
    Ok(code)
}

fn cmd_validate(a: ValidateArgs) -> Result<Code, CliError> {
    let w = load(&a.workload)?;
    let dir = out_dir(&a.out)?;
    let report = validate_correctness(&w);
    if report.is_correct() {
        println!("{}: correct", a.workload.display());
    } else {
        println!("{}: {} finding(s)", a.workload.display(), report.findings.len());
        for f in &report.findings {
            println!("  {f}");
        }
    }
    if let Some(dir) = dir {
        report::write_json(dir, "validation.json", &report).map_err(write_err(dir))?;
    }
    Ok(if report.is_correct() { Code::Ok } else { Code::Violation })
}

fn cmd_generate(a: GenerateArgs) -> Result<Code, CliError> {
    let params = GenParams::new(a.seed, a.ranks, a.collectives)
        .p2p(a.p2p)
        .nonblocking(a.nonblocking);
    let w = generate_random_workload(&params).map_err(|e| CliError::Usage(e.to_string()))?;
    let text = w.serialize();
    match a.output {
        Some(path) => fs::write(&path, text).map_err(|source| CliError::Write { path, source })?,
        None => print!("{text}"),
    }
    Ok(Code::Ok)
}
