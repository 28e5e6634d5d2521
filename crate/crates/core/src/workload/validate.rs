use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use crate::domain::{compute_ggid, Ggid, Rank};
use crate::oracle::{explore_interleavings, ExploreBounds, RequestMode};
use crate::sim::{NoProtocol, ProgressPolicy};

use super::{Instruction, Workload, WORLD_COMM};

/// One reason a workload is not a correct MPI program.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "finding", rename_all = "kebab-case")]
pub enum Finding {
    /// Members call a communicator's collectives a different number of times.
    CountMismatch {
        comm: String,
        ggid: Ggid,
        counts: BTreeMap<Rank, usize>,
    },
    /// The same instance is a different operation on different members.
    KindMismatch {
        comm: String,
        ordinal: usize,
        calls: BTreeMap<Rank, String>,
    },
    /// A matched send/receive pair crosses a blocking collective whose
    /// group contains both endpoints.
    CrossingPair {
        sender: Rank,
        receiver: Rank,
        tag: i32,
        comm: String,
        collective: String,
    },
    /// Sends and receives between two ranks do not pair up.
    UnmatchedP2p {
        sender: Rank,
        receiver: Rank,
        tag: i32,
        comm: String,
        sends: usize,
        recvs: usize,
    },
    RequestNeverWaited { rank: Rank, request: String },
    RequestOverwritten { rank: Rank, request: String },
    /// The static happens-before relation has a cycle.
    HappensBeforeCycle { ranks: Vec<Rank> },
    /// Exhaustive native exploration found a deadlocking schedule.
    Deadlock { report: String },
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::CountMismatch { comm, ggid, counts } => {
                write!(f, "collective count mismatch on `{comm}` {ggid}:")?;
                for (r, n) in counts {
                    write!(f, " rank {r}={n}")?;
                }
                Ok(())
            }
            Finding::KindMismatch { comm, ordinal, calls } => {
                write!(f, "instance {ordinal} on `{comm}` differs across members:")?;
                for (r, k) in calls {
                    write!(f, " rank {r}={k}")?;
                }
                Ok(())
            }
            Finding::CrossingPair {
                sender,
                receiver,
                tag,
                comm,
                collective,
            } => write!(
                f,
                "send {sender}->{receiver} (tag {tag}, `{comm}`) crosses blocking collective {collective}"
            ),
            Finding::UnmatchedP2p {
                sender,
                receiver,
                tag,
                comm,
                sends,
                recvs,
            } => write!(
                f,
                "{sends} send(s) {sender}->{receiver} (tag {tag}, `{comm}`) against {recvs} receive(s)"
            ),
            Finding::RequestNeverWaited { rank, request } => {
                write!(f, "rank {rank} never waits for request `{request}`")
            }
            Finding::RequestOverwritten { rank, request } => {
                write!(f, "rank {rank} reuses request `{request}` before waiting for it")
            }
            Finding::HappensBeforeCycle { ranks } => {
                let rs: Vec<String> = ranks.iter().map(|r| r.to_string()).collect();
                write!(f, "happens-before cycle through rank(s) {}", rs.join(","))
            }
            Finding::Deadlock { report } => write!(f, "deadlocking schedule: {report}"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
    /// Whether exhaustive exploration ran (small instances only).
    pub explored: bool,
}

impl ValidationReport {
    pub fn is_correct(&self) -> bool {
        self.findings.is_empty()
    }
}

type CommKey = (String, Ggid);

/// A program instruction with communicator names resolved.
enum Op {
    Coll {
        comm: CommKey,
        label: String,
        blocking: bool,
    },
    Send { peer: Rank, tag: i32, comm: CommKey },
    Recv { peer: Rank, tag: i32, comm: CommKey },
    Other,
}

fn resolve(workload: &Workload) -> Vec<Vec<Op>> {
    let world = compute_ggid((0..workload.world_size).map(Rank)).expect("world size is positive");
    workload
        .programs
        .iter()
        .map(|p| {
            let mut scope: BTreeMap<&str, Ggid> = BTreeMap::new();
            scope.insert(WORLD_COMM, world.clone());
            let key = |scope: &BTreeMap<&str, Ggid>, name: &str| -> CommKey {
                // the parser guarantees definition before use
                (name.to_string(), scope.get(name).cloned().unwrap_or_else(|| world.clone()))
            };
            p.instructions
                .iter()
                .map(|ins| match ins {
                    Instruction::CreateComm { name, members } => {
                        if let Ok(g) = compute_ggid(members.iter().copied()) {
                            scope.insert(name.as_str(), g);
                        }
                        Op::Other
                    }
                    Instruction::Collective { kind, comm } => Op::Coll {
                        comm: key(&scope, comm),
                        label: kind.to_string(),
                        blocking: true,
                    },
                    Instruction::ICollective { kind, comm, .. } => Op::Coll {
                        comm: key(&scope, comm),
                        label: format!("i{kind}"),
                        blocking: false,
                    },
                    Instruction::Send { peer, tag, comm } => Op::Send {
                        peer: *peer,
                        tag: *tag,
                        comm: key(&scope, comm),
                    },
                    Instruction::Recv { peer, tag, comm } => Op::Recv {
                        peer: *peer,
                        tag: *tag,
                        comm: key(&scope, comm),
                    },
                    Instruction::Test { .. }
                    | Instruction::Wait { .. }
                    | Instruction::WaitAll { .. }
                    | Instruction::Compute => Op::Other,
                })
                .collect()
        })
        .collect()
}

/// Static and (for small instances) exhaustive checks that the workload
/// is a correct program: matched collectives, matched point-to-point
/// pairs that do not cross blocking collectives, waited requests, and an
/// acyclic happens-before relation.
pub fn validate_correctness(workload: &Workload) -> ValidationReport {
    let ops = resolve(workload);
    let mut report = ValidationReport::default();
    check_collectives(&ops, &mut report);
    let pairs = check_p2p(&ops, &mut report);
    check_requests(workload, &mut report);
    check_cycles(workload, &ops, &pairs, &mut report);

    let bounds = ExploreBounds::default();
    if workload.world_size <= bounds.max_world && workload.total_instructions() <= bounds.max_instructions {
        report.explored = true;
        match explore_interleavings(workload, NoProtocol, ProgressPolicy::Eager, RequestMode::Never, bounds) {
            Ok(v) => {
                if let Some(d) = v.deadlock {
                    report.findings.push(Finding::Deadlock { report: d.message });
                } else if let Some(x) = v.violation {
                    report.findings.push(Finding::Deadlock { report: x.message });
                }
            }
            Err(e) => report.findings.push(Finding::Deadlock {
                report: e.to_string(),
            }),
        }
    }
    report
}

fn check_collectives(ops: &[Vec<Op>], report: &mut ValidationReport) {
    // per communicator, per member: the sequence of call labels
    let mut calls: BTreeMap<CommKey, BTreeMap<Rank, Vec<String>>> = BTreeMap::new();
    for (r, prog) in ops.iter().enumerate() {
        for op in prog {
            if let Op::Coll { comm, label, .. } = op {
                calls
                    .entry(comm.clone())
                    .or_default()
                    .entry(Rank(r as u32))
                    .or_default()
                    .push(label.clone());
            }
        }
    }
    for ((name, ggid), per_rank) in calls {
        let counts: BTreeMap<Rank, usize> = ggid
            .members()
            .iter()
            .map(|m| (*m, per_rank.get(m).map_or(0, Vec::len)))
            .collect();
        if counts.values().collect::<BTreeSet<_>>().len() > 1 {
            report.findings.push(Finding::CountMismatch {
                comm: name.clone(),
                ggid: ggid.clone(),
                counts: counts.clone(),
            });
        }
        let common = counts.values().copied().min().unwrap_or(0);
        for i in 0..common {
            let at: BTreeMap<Rank, String> = per_rank.iter().map(|(r, v)| (*r, v[i].clone())).collect();
            if at.values().collect::<BTreeSet<_>>().len() > 1 {
                report.findings.push(Finding::KindMismatch {
                    comm: name.clone(),
                    ordinal: i + 1,
                    calls: at,
                });
                break;
            }
        }
    }
}

/// A matched pair: sender position, receiver position.
struct Pair {
    sender: Rank,
    send_pc: usize,
    receiver: Rank,
    recv_pc: usize,
}

fn check_p2p(ops: &[Vec<Op>], report: &mut ValidationReport) -> Vec<Pair> {
    type Chan = (Rank, Rank, i32, CommKey);
    let mut sends: BTreeMap<Chan, Vec<usize>> = BTreeMap::new();
    let mut recvs: BTreeMap<Chan, Vec<usize>> = BTreeMap::new();
    for (r, prog) in ops.iter().enumerate() {
        let me = Rank(r as u32);
        for (pc, op) in prog.iter().enumerate() {
            match op {
                Op::Send { peer, tag, comm } => {
                    sends.entry((me, *peer, *tag, comm.clone())).or_default().push(pc)
                }
                Op::Recv { peer, tag, comm } => {
                    recvs.entry((*peer, me, *tag, comm.clone())).or_default().push(pc)
                }
                _ => {}
            }
        }
    }
    let chans: BTreeSet<Chan> = sends.keys().chain(recvs.keys()).cloned().collect();
    let mut pairs = Vec::new();
    for chan in chans {
        let s = sends.get(&chan).map(Vec::as_slice).unwrap_or(&[]);
        let r = recvs.get(&chan).map(Vec::as_slice).unwrap_or(&[]);
        let (sender, receiver, tag, comm) = chan;
        if s.len() != r.len() {
            report.findings.push(Finding::UnmatchedP2p {
                sender,
                receiver,
                tag,
                comm: comm.0.clone(),
                sends: s.len(),
                recvs: r.len(),
            });
        }
        for (&send_pc, &recv_pc) in s.iter().zip(r) {
            if let Some(c) = crossing(ops, sender, send_pc, receiver, recv_pc) {
                report.findings.push(Finding::CrossingPair {
                    sender,
                    receiver,
                    tag,
                    comm: comm.0.clone(),
                    collective: c,
                });
            }
            pairs.push(Pair {
                sender,
                send_pc,
                receiver,
                recv_pc,
            });
        }
    }
    pairs
}

/// Blocking collectives on groups containing both endpoints must sit on
/// the same side of the pair for both ranks.
fn crossing(ops: &[Vec<Op>], a: Rank, pa: usize, b: Rank, pb: usize) -> Option<String> {
    let before = |r: Rank, pc: usize| -> BTreeMap<CommKey, usize> {
        let mut m = BTreeMap::new();
        for op in &ops[r.index()][..pc] {
            if let Op::Coll {
                comm, blocking: true, ..
            } = op
            {
                if comm.1.contains(a) && comm.1.contains(b) {
                    *m.entry(comm.clone()).or_insert(0) += 1;
                }
            }
        }
        m
    };
    let ca = before(a, pa);
    let cb = before(b, pb);
    let keys: BTreeSet<&CommKey> = ca.keys().chain(cb.keys()).collect();
    for k in keys {
        let x = ca.get(k).copied().unwrap_or(0);
        let y = cb.get(k).copied().unwrap_or(0);
        if x != y {
            return Some(format!("`{}`#{} {}", k.0, x.min(y) + 1, k.1));
        }
    }
    None
}

fn check_requests(workload: &Workload, report: &mut ValidationReport) {
    for p in &workload.programs {
        let mut open: BTreeSet<&str> = BTreeSet::new();
        for ins in &p.instructions {
            match ins {
                Instruction::ICollective { request, .. } => {
                    if !open.insert(request) {
                        report.findings.push(Finding::RequestOverwritten {
                            rank: p.rank,
                            request: request.clone(),
                        });
                    }
                }
                Instruction::Wait { request } => {
                    open.remove(request.as_str());
                }
                Instruction::WaitAll { requests } => {
                    for r in requests {
                        open.remove(r.as_str());
                    }
                }
                _ => {}
            }
        }
        for r in open {
            report.findings.push(Finding::RequestNeverWaited {
                rank: p.rank,
                request: r.to_string(),
            });
        }
    }
}

/// Static happens-before graph over program positions. Each blocking
/// collective instance and each matched pair is one node shared by its
/// participants; a wait depends on every member's initiation.
fn check_cycles(workload: &Workload, ops: &[Vec<Op>], pairs: &[Pair], report: &mut ValidationReport) {
    let mut offset = Vec::with_capacity(ops.len());
    let mut n = 0usize;
    for prog in ops {
        offset.push(n);
        n += prog.len();
    }
    let mut uf: Vec<usize> = (0..n).collect();
    fn find(uf: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while uf[r] != r {
            r = uf[r];
        }
        let mut c = x;
        while uf[c] != r {
            let next = uf[c];
            uf[c] = r;
            c = next;
        }
        r
    }
    let union = |uf: &mut Vec<usize>, a: usize, b: usize| {
        let (ra, rb) = (find(uf, a), find(uf, b));
        if ra != rb {
            uf[ra] = rb;
        }
    };

    // (rank, op position, non-blocking) of each member call per (comm, ordinal)
    type Calls = Vec<(Rank, usize, bool)>;
    let mut instances: BTreeMap<(CommKey, usize), Calls> = BTreeMap::new();
    let mut req_instance: BTreeMap<(Rank, usize), (CommKey, usize)> = BTreeMap::new();
    for (r, prog) in ops.iter().enumerate() {
        let me = Rank(r as u32);
        let mut count: BTreeMap<&CommKey, usize> = BTreeMap::new();
        for (pc, op) in prog.iter().enumerate() {
            if let Op::Coll { comm, blocking, .. } = op {
                let c = count.entry(comm).or_insert(0);
                *c += 1;
                instances
                    .entry((comm.clone(), *c))
                    .or_default()
                    .push((me, pc, *blocking));
                if !blocking {
                    req_instance.insert((me, pc), (comm.clone(), *c));
                }
            }
        }
    }
    for members in instances.values() {
        let blocking: Vec<usize> = members
            .iter()
            .filter(|m| m.2)
            .map(|&(r, pc, _)| offset[r.index()] + pc)
            .collect();
        for w in blocking.windows(2) {
            union(&mut uf, w[0], w[1]);
        }
    }
    for p in pairs {
        union(
            &mut uf,
            offset[p.sender.index()] + p.send_pc,
            offset[p.receiver.index()] + p.recv_pc,
        );
    }

    let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
    for (r, prog) in ops.iter().enumerate() {
        for pc in 1..prog.len() {
            let a = find(&mut uf, offset[r] + pc - 1);
            let b = find(&mut uf, offset[r] + pc);
            edges.insert((a, b));
        }
    }
    // waits depend on the initiations of all members
    for p in &workload.programs {
        let me = p.rank;
        let mut last_init: BTreeMap<&str, usize> = BTreeMap::new();
        for (pc, ins) in p.instructions.iter().enumerate() {
            let waited: Vec<&String> = match ins {
                Instruction::ICollective { request, .. } => {
                    last_init.insert(request, pc);
                    continue;
                }
                Instruction::Wait { request } => vec![request],
                Instruction::WaitAll { requests } => requests.iter().collect(),
                _ => continue,
            };
            let w = find(&mut uf, offset[me.index()] + pc);
            for name in waited {
                let Some(&ipc) = last_init.get(name.as_str()) else { continue };
                let Some(key) = req_instance.get(&(me, ipc)) else { continue };
                if let Some(members) = instances.get(key) {
                    for &(r, mpc, _) in members {
                        let i = find(&mut uf, offset[r.index()] + mpc);
                        edges.insert((i, w));
                    }
                }
            }
        }
    }

    let mut adj: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut indeg: BTreeMap<usize, usize> = BTreeMap::new();
    for &(a, b) in &edges {
        if a == b {
            continue;
        }
        adj.entry(a).or_default().push(b);
        *indeg.entry(b).or_insert(0) += 1;
        indeg.entry(a).or_insert(0);
    }
    let mut ready: Vec<usize> = indeg.iter().filter(|(_, &d)| d == 0).map(|(&k, _)| k).collect();
    while let Some(x) = ready.pop() {
        if let Some(next) = adj.get(&x) {
            for &y in next {
                let d = indeg.get_mut(&y).expect("edge target registered");
                *d -= 1;
                if *d == 0 {
                    ready.push(y);
                }
            }
        }
    }
    let stuck: BTreeSet<usize> = indeg.iter().filter(|(_, &d)| d > 0).map(|(&k, _)| k).collect();
    if !stuck.is_empty() {
        let mut ranks = BTreeSet::new();
        for (r, prog) in ops.iter().enumerate() {
            for pc in 0..prog.len() {
                if stuck.contains(&find(&mut uf, offset[r] + pc)) {
                    ranks.insert(Rank(r as u32));
                }
            }
        }
        report.findings.push(Finding::HappensBeforeCycle {
            ranks: ranks.into_iter().collect(),
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::parse_workload;

    fn validate(text: &str) -> ValidationReport {
        validate_correctness(&parse_workload(text).unwrap())
    }

    #[test]
    fn matched_workload_is_correct() {
        let r = validate(
            "world 3\nrank 0,1,2: barrier world\nrank 0: send 1 0 world\nrank 1: recv 0 0 world\n\
             rank 0,1,2: bcast world\n",
        );
        assert!(r.is_correct(), "{:?}", r.findings);
        assert!(r.explored);
    }

    #[test]
    fn crossing_pair_is_flagged() {
        let r = validate("world 2\nrank 0: send 1 0 world\nrank 0,1: barrier world\nrank 1: recv 0 0 world\n");
        assert!(
            r.findings.iter().any(|f| matches!(f, Finding::CrossingPair { .. })),
            "{:?}",
            r.findings
        );
    }

    #[test]
    fn cyclic_order_is_flagged() {
        let r = validate(
            "world 2\nrank 0,1: create_comm c1 0,1\nrank 0,1: create_comm c2 0,1\n\
             rank 0: barrier c1\nrank 0: barrier c2\nrank 1: barrier c2\nrank 1: barrier c1\n",
        );
        assert!(r.findings.iter().any(|f| matches!(f, Finding::HappensBeforeCycle { .. })));
        assert!(r.findings.iter().any(|f| matches!(f, Finding::Deadlock { .. })));
    }

    #[test]
    fn count_and_request_findings() {
        let r = validate("world 2\nrank 0,1: barrier world\nrank 0: barrier world\n");
        assert!(r.findings.iter().any(|f| matches!(f, Finding::CountMismatch { .. })));

        let r = validate(
            "world 2\nrank 0,1: icollective barrier world r\nrank 0,1: icollective barrier world r\n\
             rank 0,1: wait r\nrank 0: icollective bcast world q\nrank 1: icollective bcast world q\n",
        );
        assert!(r.findings.iter().any(|f| matches!(f, Finding::RequestOverwritten { .. })));
        assert!(r.findings.iter().any(|f| matches!(f, Finding::RequestNeverWaited { .. })));

        let r = validate("world 2\nrank 0,1: barrier world\nrank 1: bcast world\nrank 0: reduce world\n");
        assert!(r.findings.iter().any(|f| matches!(f, Finding::KindMismatch { .. })));

        let r = validate("world 2\nrank 0: send 1 3 world\n");
        assert!(r.findings.iter().any(|f| matches!(f, Finding::UnmatchedP2p { .. })));
    }

    #[test]
    fn wait_before_peer_init_is_a_cycle() {
        // rank 0 waits before the barrier, rank 1 initiates after it
        let r = validate(
            "world 2\nrank 0: icollective barrier world r\nrank 0: wait r\nrank 0,1: bcast world\n\
             rank 1: icollective barrier world r\nrank 1: wait r\n",
        );
        assert!(!r.is_correct());
    }
}
