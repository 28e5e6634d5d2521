use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;

use crate::domain::{Ggid, Rank};
use crate::error::LogError;
use crate::sim::{Action, SimEvent};
use crate::workload::CollectiveKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum NodeId {
    Collective(usize),
    P2p(usize),
}

/// One rank's passage through a node. For non-blocking instances `enter`
/// is the initiation and `exit` the local completion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Visit {
    pub enter: u64,
    pub exit: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CollectiveNode {
    pub id: usize,
    pub comm: String,
    pub ggid: Ggid,
    /// Instance number on its communicator, 1-based.
    pub ordinal: u64,
    /// Sequence number the first visitor assigned for the group.
    pub seq: u64,
    pub kind: Option<CollectiveKind>,
    pub nonblocking: bool,
    pub visitors: BTreeMap<Rank, Visit>,
}

impl CollectiveNode {
    pub fn label(&self) -> String {
        format!("{}#{} {}", self.comm, self.ordinal, self.ggid)
    }

    pub fn visited_before(&self, rank: Rank, step: u64) -> bool {
        self.visitors.get(&rank).is_some_and(|v| v.enter < step)
    }

    pub fn any_visit_before(&self, step: u64) -> bool {
        self.visitors.values().any(|v| v.enter < step)
    }
}

/// A matched send/receive pair.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct P2pNode {
    pub id: usize,
    pub sender: Rank,
    pub receiver: Rank,
    pub tag: i32,
    pub comm: String,
    pub step: u64,
}

/// Collective instances and matched point-to-point pairs, linked by
/// rank-labeled edges between the consecutive nodes each rank visits.
#[derive(Clone, Debug, Default, Serialize)]
pub struct ExecutionGraph {
    pub collectives: Vec<CollectiveNode>,
    pub p2p: Vec<P2pNode>,
    /// Per rank, the nodes it visited in program order.
    pub chains: BTreeMap<Rank, Vec<NodeId>>,
    /// Step of the checkpoint-request event, if any.
    pub request_step: Option<u64>,
}

impl ExecutionGraph {
    pub fn find(&self, comm: &str, ordinal: u64) -> Option<&CollectiveNode> {
        self.collectives
            .iter()
            .find(|n| n.comm == comm && n.ordinal == ordinal)
    }

    /// Directed, rank-labeled edges.
    pub fn edges(&self) -> Vec<(NodeId, NodeId, Rank)> {
        let mut out = Vec::new();
        for (&r, chain) in &self.chains {
            for w in chain.windows(2) {
                out.push((w[0], w[1], r));
            }
        }
        out
    }

    fn predecessors(&self) -> HashMap<NodeId, Vec<NodeId>> {
        let mut preds: HashMap<NodeId, Vec<NodeId>> = HashMap::new();
        for (a, b, _) in self.edges() {
            preds.entry(b).or_default().push(a);
        }
        preds
    }

    /// Every node some node of `seeds` depends on, plus the seeds.
    pub fn backward_closure(&self, seeds: impl IntoIterator<Item = NodeId>) -> BTreeSet<NodeId> {
        let preds = self.predecessors();
        let mut seen = BTreeSet::new();
        let mut stack: Vec<NodeId> = seeds.into_iter().collect();
        while let Some(n) = stack.pop() {
            if seen.insert(n) {
                if let Some(ps) = preds.get(&n) {
                    stack.extend(ps.iter().copied());
                }
            }
        }
        seen
    }

    /// Whether `b` depends on `a`: a path of one or more edges leads from
    /// `a` to `b`.
    pub fn depends_on(&self, b: NodeId, a: NodeId) -> bool {
        let preds = self.predecessors();
        let mut seen = BTreeSet::new();
        let mut stack: Vec<NodeId> = preds.get(&b).cloned().unwrap_or_default();
        while let Some(n) = stack.pop() {
            if n == a {
                return true;
            }
            if seen.insert(n) {
                if let Some(ps) = preds.get(&n) {
                    stack.extend(ps.iter().copied());
                }
            }
        }
        false
    }

    /// Collective nodes with at least one visit before the checkpoint
    /// request.
    pub fn requested_nodes(&self) -> Vec<NodeId> {
        match self.request_step {
            Some(at) => self
                .collectives
                .iter()
                .filter(|n| n.any_visit_before(at))
                .map(|n| NodeId::Collective(n.id))
                .collect(),
            None => Vec::new(),
        }
    }
}

/// Rebuilds the execution graph from an event log. Protocol-internal
/// events (trial barriers, protocol messages) are ignored.
pub fn build_graph(events: &[SimEvent]) -> Result<ExecutionGraph, LogError> {
    let mut g = ExecutionGraph::default();
    let mut index: HashMap<(String, Ggid, u64), usize> = HashMap::new();
    let mut seq: HashMap<(Rank, Ggid), u64> = HashMap::new();
    let mut last_step: Option<u64> = None;

    for (i, ev) in events.iter().enumerate() {
        let bad = |m: &str| LogError::Malformed {
            index: i,
            message: m.to_string(),
        };
        if last_step.is_some_and(|s| ev.step <= s) {
            return Err(bad("steps must strictly increase"));
        }
        last_step = Some(ev.step);
        if ev.protocol {
            continue;
        }
        match ev.action {
            Action::EnterCollective | Action::InitNonblocking => {
                let (comm, ggid, ordinal) = instance_of(ev).ok_or_else(|| bad("missing instance fields"))?;
                if !ggid.contains(ev.rank) {
                    return Err(bad("visitor is not a member of the group"));
                }
                let nonblocking = ev.action == Action::InitNonblocking;
                let s = seq.entry((ev.rank, ggid.clone())).or_insert(0);
                *s += 1;
                let key = (comm.clone(), ggid.clone(), ordinal);
                let id = *index.entry(key).or_insert_with(|| {
                    g.collectives.push(CollectiveNode {
                        id: g.collectives.len(),
                        comm,
                        ggid,
                        ordinal,
                        seq: *s,
                        kind: ev.kind,
                        nonblocking,
                        visitors: BTreeMap::new(),
                    });
                    g.collectives.len() - 1
                });
                let node = &mut g.collectives[id];
                if node.nonblocking != nonblocking {
                    return Err(bad("blocking and non-blocking visits of one instance"));
                }
                if node
                    .visitors
                    .insert(ev.rank, Visit { enter: ev.step, exit: None })
                    .is_some()
                {
                    return Err(bad("rank visits an instance twice"));
                }
                g.chains.entry(ev.rank).or_default().push(NodeId::Collective(id));
            }
            Action::ExitCollective | Action::CompleteRequest => {
                let (comm, ggid, ordinal) = instance_of(ev).ok_or_else(|| bad("missing instance fields"))?;
                let id = *index
                    .get(&(comm, ggid, ordinal))
                    .ok_or_else(|| bad("exit without a matching enter"))?;
                let node = &mut g.collectives[id];
                if node.nonblocking != (ev.action == Action::CompleteRequest) {
                    return Err(bad("completion kind does not match the instance"));
                }
                let visit = node
                    .visitors
                    .get_mut(&ev.rank)
                    .ok_or_else(|| bad("exit without a matching enter"))?;
                if visit.exit.replace(ev.step).is_some() {
                    return Err(bad("instance exited twice"));
                }
            }
            Action::Send => {
                let peer = ev.peer.ok_or_else(|| bad("send without peer"))?;
                let next = events.get(i + 1);
                let matched = next.is_some_and(|n| {
                    n.action == Action::RecvMatch && n.rank == peer && n.peer == Some(ev.rank) && n.tag == ev.tag
                });
                if !matched {
                    return Err(bad("send not followed by its receive match"));
                }
                let id = g.p2p.len();
                g.p2p.push(P2pNode {
                    id,
                    sender: ev.rank,
                    receiver: peer,
                    tag: ev.tag.unwrap_or(0),
                    comm: ev.comm.clone().unwrap_or_default(),
                    step: ev.step,
                });
                g.chains.entry(ev.rank).or_default().push(NodeId::P2p(id));
                g.chains.entry(peer).or_default().push(NodeId::P2p(id));
            }
            Action::RecvMatch => {
                let prev = i.checked_sub(1).map(|j| &events[j]);
                if !prev.is_some_and(|p| p.action == Action::Send && p.peer == Some(ev.rank)) {
                    return Err(bad("receive match without a send"));
                }
            }
            Action::CheckpointRequest => {
                if g.request_step.replace(ev.step).is_some() {
                    return Err(bad("two checkpoint requests"));
                }
            }
            Action::ProtocolMsgSend | Action::ProtocolMsgRecv | Action::SnapshotTaken => {}
        }
    }
    Ok(g)
}

fn instance_of(ev: &SimEvent) -> Option<(String, Ggid, u64)> {
    Some((ev.comm.clone()?, ev.ggid.clone()?, ev.ordinal?))
}
