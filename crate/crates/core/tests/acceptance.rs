//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use collective_clock::cc::{CcOptions, CcProtocol};
use collective_clock::domain::{compute_ggid, Ggid, Rank};
use collective_clock::oracle::{explore_interleavings, ExploreBounds, RequestMode};
use collective_clock::sim::{
    run, Action, MsgKind, NoProtocol, Outcome, ProgressPolicy, RequestAt, SimEvent, SimResult,
};
use collective_clock::twopc::TwoPcProtocol;
use collective_clock::workload::{generate_random_workload, GenParams, Instruction, Workload};
use collective_clock::SimError;
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const POLICIES: [ProgressPolicy; 3] = [ProgressPolicy::Eager, ProgressPolicy::Lazy, ProgressPolicy::Randomized];

type Check = Result<String, String>;

/// Convergence failures seen by criteria 1 to 5, reported by criterion 7.
#[derive(Default)]
struct Convergence {
    snapshots: usize,
    failures: Vec<String>,
}

impl Convergence {
    fn record(&mut self, label: &str, r: &SimResult) {
        if r.outcome != Outcome::Snapshot {
            return;
        }
        self.snapshots += 1;
        match &r.target_mismatches {
            Some(m) if m.is_empty() => {}
            Some(m) => self.failures.push(format!("{label}: {}", m.join("; "))),
            None => self.failures.push(format!("{label}: convergence not checked")),
        }
    }
}

fn ggid(ranks: &[u32]) -> Ggid {
    compute_ggid(ranks.iter().copied().map(Rank)).unwrap()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn criterion_1(conv: &mut Convergence) -> Check {
    let w = load("overlapping-groups.workload");
    let mut runs = 0;
    for policy in POLICIES {
        for seed in 0..5 {
            let r = run_cc(&w, seed, policy, Some(RequestAt::Script)).map_err(|e| e.to_string())?;
            conv.record("overlapping-groups", &r);
            runs += 1;
            let expected: BTreeMap<Ggid, u64> =
                [(ggid(&[1, 2]), 5), (ggid(&[2, 3]), 7), (ggid(&[3, 4, 5]), 2), (ggid(&[5, 6]), 3)]
                    .into_iter()
                    .collect();
            ensure(r.initial_targets.as_ref() == Some(&expected), || {
                format!("initial targets {:?}", r.initial_targets)
            })?;
            let updates: Vec<(u32, u32, &str, u64)> = r
                .events
                .iter()
                .filter(|e| e.action == Action::ProtocolMsgSend && e.msg == Some(MsgKind::TargetUpdate))
                .map(|e| {
                    let g = e.ggid.as_ref().map(|g| g.to_string()).unwrap_or_default();
                    let g = if g == "{3,4,5}" { "{3,4,5}" } else if g == "{5,6}" { "{5,6}" } else { "other" };
                    (e.rank.0, e.peer.unwrap().0, g, e.value.unwrap())
                })
                .collect();
            let mut sorted = updates.clone();
            sorted.sort();
            ensure(
                sorted == vec![(3, 4, "{3,4,5}", 3), (3, 5, "{3,4,5}", 3), (5, 6, "{5,6}", 4)],
                || format!("target updates {updates:?}"),
            )?;
            // Rank 5 restarts on {5,6} only after learning the raised {3,4,5} target.
            let recv = r
                .events
                .iter()
                .position(|e| e.action == Action::ProtocolMsgRecv && e.rank == Rank(5))
                .ok_or("rank 5 never received the update")?;
            let request = r
                .events
                .iter()
                .position(|e| e.action == Action::CheckpointRequest)
                .ok_or("no request event")?;
            let reexec = r.events[recv..]
                .iter()
                .any(|e| e.action == Action::EnterCollective && e.rank == Rank(5) && e.comm.as_deref() == Some("c56"));
            ensure(recv > request && reexec, || "rank 5 did not re-execute on {5,6}".into())?;
            ensure(r.is_safe(), || format!("unsafe: {:?}", unsafe_reason(&r)))?;
        }
    }
    Ok(format!("{runs} runs: targets 5,7,2,3; {{3,4,5}} 2->3 to ranks 4,5; rank 5 re-executes {{5,6}}"))
}

fn generated_corpus(n: u64, nonblocking: f64) -> Vec<(String, Workload)> {
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + i);
            let p = GenParams::new(i, rng.gen_range(2..=8), rng.gen_range(1..=40))
                .p2p(rng.gen_range(0..=10))
                .nonblocking(nonblocking);
            (format!("generated #{i}"), generate_random_workload(&p).unwrap())
        })
        .collect()
}

fn without_protocol(events: &[SimEvent]) -> Vec<&SimEvent> {
    events.iter().filter(|e| !e.protocol).collect()
}

fn criterion_2() -> Check {
    let mut corpus = correct_corpus();
    corpus.extend(generated_corpus(100, 0.3));
    corpus.extend(generated_corpus(100, 0.0));
    let (mut identical, mut twopc) = (0, 0);
    for (name, w) in &corpus {
        for (i, policy) in POLICIES.into_iter().enumerate() {
            let seed = 17 + i as u64;
            let native = run_native(w, seed, policy).map_err(|e| format!("{name}: {e}"))?;
            let cc = run_cc(w, seed, policy, None).map_err(|e| format!("{name}: {e}"))?;
            ensure(without_protocol(&native.events) == without_protocol(&cc.events), || {
                format!("{name} ({policy:?}): logs differ")
            })?;
            ensure(cc.events.len() == native.events.len(), || format!("{name}: extra events"))?;
            ensure(cc.metrics.protocol_messages_before_request == 0, || {
                format!("{name}: protocol messages before request")
            })?;
            identical += 1;
        }
        if w.has_nonblocking() {
            continue;
        }
        let r = run(&config(w, 3, ProgressPolicy::Eager), w, TwoPcProtocol::new(w.world_size), None)
            .map_err(|e| format!("{name} 2PC: {e}"))?;
        let need = w.blocking_collective_calls() as u64;
        ensure(r.metrics.extra_sync_events >= need, || {
            format!("{name}: 2PC extra_sync_events {} < {need}", r.metrics.extra_sync_events)
        })?;
        twopc += 1;
    }
    Ok(format!(
        "{} workloads, {identical} CC runs identical to native; 2PC extra sync >= blocking calls on {twopc}",
        corpus.len()
    ))
}

fn criterion_3(conv: &mut Convergence) -> Check {
    let corpus = generated_corpus(500, 0.3);
    let mut requested_mid_nonblocking = 0;
    for (i, (name, w)) in corpus.iter().enumerate() {
        let policy = POLICIES[i % 3];
        let cfg = config(w, i as u64, policy);
        let at = collective_clock::sim::random_request_step(&cfg, w, i as u64).map_err(|e| e.to_string())?;
        let r = run(&cfg, w, CcProtocol::new(w.world_size, CcOptions::default()), Some(RequestAt::Step(at)))
            .map_err(|e| format!("{name}: {e}"))?;
        conv.record(name, &r);
        ensure(r.outcome == Outcome::Snapshot, || format!("{name}: no snapshot"))?;
        if let Some(why) = unsafe_reason(&r) {
            return Err(format!("{name} ({policy:?}, request at {at}): {why}"));
        }
        if r.metrics.drain_iterations > 0 {
            requested_mid_nonblocking += 1;
        }
    }
    Ok(format!(
        "500 workloads safe ({requested_mid_nonblocking} needed draining)"
    ))
}

/// Communication instructions, not counting communicator setup.
fn operations(w: &Workload) -> usize {
    w.programs
        .iter()
        .flat_map(|p| &p.instructions)
        .filter(|i| !matches!(i, Instruction::CreateComm { .. }))
        .count()
}

fn criterion_4() -> Check {
    let corpus = small_corpus();
    ensure(corpus.len() >= 10, || format!("only {} workloads", corpus.len()))?;
    let mut states = 0;
    for (name, w) in &corpus {
        ensure(w.world_size <= 3 && operations(w) <= 12, || format!("{name} exceeds the size limit"))?;
        for policy in POLICIES {
            let v = explore_interleavings(
                w,
                CcProtocol::new(w.world_size, CcOptions::default()),
                policy,
                RequestMode::Anywhere,
                ExploreBounds::default(),
            )
            .map_err(|e| format!("{name}: {e}"))?;
            ensure(v.is_safe(), || format!("{name} ({policy:?}): {v:?}"))?;
            ensure(v.snapshots > 0 || w.total_instructions() == 0, || format!("{name}: no snapshot reached"))?;
            states += v.states;
        }
    }
    let cyclic = load("erroneous/cyclic.workload");
    let v = explore_interleavings(
        &cyclic,
        NoProtocol,
        ProgressPolicy::Eager,
        RequestMode::Never,
        ExploreBounds::default(),
    )
    .map_err(|e| e.to_string())?;
    ensure(v.deadlock.is_some(), || "cyclic workload not reported as deadlocking".into())?;
    Ok(format!(
        "{} workloads x 3 policies, {states} states, no deadlock or violation; cyclic deadlocks",
        corpus.len()
    ))
}

/// Requests outstanding at the checkpoint request, as `(rank, name)`.
fn outstanding_at_request(events: &[SimEvent]) -> Vec<(Rank, String)> {
    let mut open: Vec<(Rank, String)> = Vec::new();
    for e in events {
        match e.action {
            Action::CheckpointRequest => return open,
            Action::InitNonblocking => open.push((e.rank, e.request.clone().unwrap())),
            Action::CompleteRequest => open.retain(|(r, q)| !(*r == e.rank && Some(q) == e.request.as_ref())),
            _ => {}
        }
    }
    Vec::new()
}

fn criterion_5(conv: &mut Convergence) -> Check {
    let mut corpus: Vec<(String, Workload)> = ["drain.workload", "drain-multi.workload"]
        .into_iter()
        .map(|f| (f.to_string(), load(f)))
        .collect();
    corpus.extend(generated_corpus(20, 0.7));
    let (mut cases, mut drained) = (0, 0);
    for (name, w) in &corpus {
        for policy in POLICIES {
            for seed in 0..2u64 {
                let native = run_native(w, seed, policy).map_err(|e| e.to_string())?;
                let stride = (native.metrics.steps / 40).max(1) as usize;
                for at in (0..native.metrics.steps).step_by(stride) {
                    let r = run_cc(w, seed, policy, Some(RequestAt::Step(at))).map_err(|e| format!("{name}: {e}"))?;
                    let open = outstanding_at_request(&r.events);
                    if open.is_empty() {
                        continue;
                    }
                    conv.record(name, &r);
                    cases += 1;
                    let label = || format!("{name} ({policy:?}, seed {seed}, request at {at})");
                    ensure(r.is_safe(), || format!("{}: {:?}", label(), unsafe_reason(&r)))?;
                    let first_snap = r
                        .events
                        .iter()
                        .position(|e| e.action == Action::SnapshotTaken)
                        .ok_or_else(|| format!("{}: no snapshot", label()))?;
                    let last_completion = r
                        .events
                        .iter()
                        .rposition(|e| e.action == Action::CompleteRequest)
                        .unwrap_or(0);
                    ensure(last_completion < first_snap, || format!("{}: completion after snapshot", label()))?;
                    let cut = r.cut.as_ref().unwrap();
                    ensure(cut.ranks.iter().all(|c| c.pending_requests.is_empty()), || {
                        format!("{}: pending requests in cut", label())
                    })?;
                    for (rank, req) in &open {
                        let done = r.events[..first_snap].iter().any(|e| {
                            e.action == Action::CompleteRequest && e.rank == *rank && e.request.as_ref() == Some(req)
                        });
                        ensure(done, || format!("{}: {req} on rank {} not completed", label(), rank.0))?;
                    }
                    if r.metrics.drain_iterations > 0 {
                        drained += 1;
                    }
                }
            }
        }
    }
    ensure(drained > 0, || "no run needed the drain loop".into())?;
    Ok(format!(
        "{cases} requests inside non-blocking collectives ({drained} completed by the drain loop), none pending at the snapshot"
    ))
}

fn criterion_6() -> Check {
    let mut corpus: Vec<(String, Workload)> = correct_corpus().into_iter().filter(|(_, w)| w.has_nonblocking()).collect();
    corpus.extend(generated_corpus(50, 0.5).into_iter().filter(|(_, w)| w.has_nonblocking()));
    for (name, w) in &corpus {
        match run(&config(w, 0, ProgressPolicy::Eager), w, TwoPcProtocol::new(w.world_size), Some(RequestAt::Step(0))) {
            Err(SimError::Unsupported(_)) => {}
            other => return Err(format!("{name}: expected unsupported, got {:?}", other.map(|r| r.outcome))),
        }
    }
    Ok(format!("{} non-blocking workloads rejected as unsupported", corpus.len()))
}

fn criterion_7(conv: &Convergence) -> Check {
    ensure(conv.failures.is_empty(), || conv.failures.join(" | "))?;
    Ok(format!(
        "{} snapshots from criteria 1, 3 and 5 converged; exhaustive runs checked inside criterion 4",
        conv.snapshots
    ))
}

fn report(n: u32, limit: Duration, f: impl FnOnce() -> Check) -> bool {
    let start = Instant::now();
    let result = f();
    let took = start.elapsed();
    let (ok, detail) = match result {
        Ok(d) if took <= limit => (true, d),
        Ok(d) => (false, format!("{d}; too slow")),
        Err(e) => (false, e),
    };
    println!(
        "{} criterion {n}: {detail} [{:.2}s, limit {}s]",
        if ok { "PASS" } else { "FAIL" },
        took.as_secs_f64(),
        limit.as_secs()
    );
    ok
}

fn main() -> ExitCode {
    let mut conv = Convergence::default();
    let secs = Duration::from_secs;
    let mut ok = true;
    ok &= report(1, secs(1), || criterion_1(&mut conv));
    ok &= report(2, secs(10), criterion_2);
    ok &= report(3, secs(120), || criterion_3(&mut conv));
    ok &= report(4, secs(300), criterion_4);
    ok &= report(5, secs(30), || criterion_5(&mut conv));
    ok &= report(6, secs(1), criterion_6);
    ok &= report(7, secs(1), || criterion_7(&conv));
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
