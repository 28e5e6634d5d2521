use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use log::{debug, trace};

use crate::cc::ProtocolMsg;
use crate::domain::{
    CommunicatorHandle, GroupMembership, Rank, RequestHandle, RequestId, RequestKind, RequestState,
};
use crate::error::SimError;
use crate::workload::{CollectiveKind, Instruction, Workload, WORLD_COMM};

use super::events::{Action, MsgKind, SimEvent};
use super::protocol::ProtocolAdapter;
use super::{
    BlockedRank, DeadlockReport, Metrics, Outcome, ProgressPolicy, RankCut, RankSummary, SimResult,
    SnapshotCut,
};

#[derive(Clone, Debug, PartialEq, Eq)]
enum Op {
    Local,
    Coll { kind: CollectiveKind, comm: u32 },
    ICol { kind: CollectiveKind, comm: u32, slot: u32 },
    Test { slot: u32 },
    Wait { slots: Vec<u32> },
    Send { peer: Rank, tag: i32, comm: u32 },
    Recv { peer: Rank, tag: i32, comm: u32 },
}

/// Immutable per-run data shared by every clone of a world.
#[derive(Debug)]
struct Static {
    comms: Vec<CommunicatorHandle>,
    programs: Vec<Vec<Op>>,
    slot_names: Vec<Vec<String>>,
    budgets: Option<Vec<Option<usize>>>,
    policy: ProgressPolicy,
}

impl Static {
    fn build(workload: &Workload, policy: ProgressPolicy, script: bool) -> Result<Self, SimError> {
        let n = workload.world_size;
        let mut comms: Vec<CommunicatorHandle> = Vec::new();
        let mut index: BTreeMap<(String, Vec<Rank>), u32> = BTreeMap::new();
        let world_members: Vec<Rank> = (0..n).map(Rank).collect();
        let mut intern = |name: &str, members: &[Rank]| -> Result<u32, SimError> {
            let group = GroupMembership::new(members.to_vec(), n)
                .map_err(|e| SimError::Erroneous(format!("communicator `{name}`: {e}")))?;
            let key = (name.to_string(), group.ggid().members().to_vec());
            if let Some(&id) = index.get(&key) {
                return Ok(id);
            }
            let id = comms.len() as u32;
            comms.push(CommunicatorHandle::new(id, name, group));
            index.insert(key, id);
            Ok(id)
        };
        let world_id = intern(WORLD_COMM, &world_members)?;

        let mut programs = Vec::new();
        let mut slot_names = Vec::new();
        for prog in &workload.programs {
            let mut scope: BTreeMap<&str, u32> = BTreeMap::new();
            scope.insert(WORLD_COMM, world_id);
            let mut slots: BTreeMap<String, u32> = BTreeMap::new();
            let mut names: Vec<String> = Vec::new();
            let slot_of = |name: &str, slots: &mut BTreeMap<String, u32>, names: &mut Vec<String>| -> u32 {
                *slots.entry(name.to_string()).or_insert_with(|| {
                    names.push(name.to_string());
                    (names.len() - 1) as u32
                })
            };
            let comm_of = |scope: &BTreeMap<&str, u32>, name: &str| -> Result<u32, SimError> {
                scope.get(name).copied().ok_or_else(|| {
                    SimError::Erroneous(format!("rank {}: undefined communicator `{name}`", prog.rank))
                })
            };
            let mut ops = Vec::new();
            for instr in &prog.instructions {
                let op = match instr {
                    Instruction::CreateComm { name, members } => {
                        let id = intern(name, members)?;
                        scope.insert(name.as_str(), id);
                        Op::Local
                    }
                    Instruction::Compute => Op::Local,
                    Instruction::Collective { kind, comm } => Op::Coll {
                        kind: *kind,
                        comm: comm_of(&scope, comm)?,
                    },
                    Instruction::ICollective {
                        kind,
                        comm,
                        request,
                    } => Op::ICol {
                        kind: *kind,
                        comm: comm_of(&scope, comm)?,
                        slot: slot_of(request, &mut slots, &mut names),
                    },
                    Instruction::Test { request } => Op::Test {
                        slot: slot_of(request, &mut slots, &mut names),
                    },
                    Instruction::Wait { request } => Op::Wait {
                        slots: vec![slot_of(request, &mut slots, &mut names)],
                    },
                    Instruction::WaitAll { requests } => Op::Wait {
                        slots: requests
                            .iter()
                            .map(|r| slot_of(r, &mut slots, &mut names))
                            .collect(),
                    },
                    Instruction::Send { peer, tag, comm } => Op::Send {
                        peer: *peer,
                        tag: *tag,
                        comm: comm_of(&scope, comm)?,
                    },
                    Instruction::Recv { peer, tag, comm } => Op::Recv {
                        peer: *peer,
                        tag: *tag,
                        comm: comm_of(&scope, comm)?,
                    },
                };
                ops.push(op);
            }
            programs.push(ops);
            slot_names.push(names);
        }

        let budgets = if script {
            workload.request_after.as_ref().map(|b| {
                (0..n)
                    .map(|r| b.get(&Rank(r)).copied())
                    .collect::<Vec<_>>()
            })
        } else {
            None
        };

        Ok(Static {
            comms,
            programs,
            slot_names,
            budgets,
            policy,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub(crate) struct InstanceKey {
    comm: u32,
    ordinal: u64,
    protocol: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct Instance {
    kind: CollectiveKind,
    nonblocking: bool,
    arrived: BTreeSet<Rank>,
    left: BTreeSet<Rank>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct Req {
    handle: RequestHandle,
    instance: InstanceKey,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Stage {
    Ready,
    /// In the 2PC trial barrier preceding the collective at `pc`.
    Trial(InstanceKey),
    /// Through the trial barrier, about to enter the real collective.
    Committed,
    Inside(InstanceKey),
    /// Back from the real call, held at the wrapper exit gate.
    After,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct RankRt {
    pc: usize,
    stage: Stage,
    issued: Vec<u64>,
    trial_issued: Vec<u64>,
    requests: Vec<Option<Req>>,
    next_req: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Phase {
    Running,
    Draining,
    Snapshot,
    Completed,
}

/// Everything that determines future behavior. Two worlds with equal cores
/// have identical futures, so the explorer memoizes on this.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub(crate) struct Core<P> {
    ranks: Vec<RankRt>,
    instances: BTreeMap<InstanceKey, Instance>,
    protocol: P,
    mailboxes: Vec<Vec<ProtocolMsg>>,
    phase: Phase,
    request_mark: Option<Vec<Vec<u64>>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Transition {
    /// The rank's next local action.
    Step(Rank),
    /// The rank's protocol loop consumes one message from its channel.
    Deliver { rank: Rank, index: usize },
    /// Background completion of a non-blocking collective (randomized policy).
    Background { rank: Rank, slot: u32 },
    /// The rank asks its blocked point-to-point peer to keep executing.
    Release { rank: Rank },
    /// The checkpoint request reaches every rank.
    Request,
    /// One `MPI_Test` of the post-quiescence drain loop.
    Drain { rank: Rank, slot: u32 },
}

#[derive(Clone, Debug)]
pub struct World<P> {
    stat: Arc<Static>,
    core: Core<P>,
    log: Vec<SimEvent>,
    metrics: Metrics,
    steps: u64,
    request_step: Option<u64>,
}

impl<P: ProtocolAdapter> World<P> {
    pub fn new(
        workload: &Workload,
        protocol: P,
        policy: ProgressPolicy,
        script: bool,
    ) -> Result<Self, SimError> {
        protocol.admit(workload)?;
        let stat = Static::build(workload, policy, script)?;
        let n_comms = stat.comms.len();
        let ranks = stat
            .slot_names
            .iter()
            .map(|names| RankRt {
                pc: 0,
                stage: Stage::Ready,
                issued: vec![0; n_comms],
                trial_issued: vec![0; n_comms],
                requests: vec![None; names.len()],
                next_req: 0,
            })
            .collect();
        let world = World {
            core: Core {
                ranks,
                instances: BTreeMap::new(),
                protocol,
                mailboxes: vec![Vec::new(); workload.world_size as usize],
                phase: Phase::Running,
                request_mark: None,
            },
            stat: Arc::new(stat),
            log: Vec::new(),
            metrics: Metrics::default(),
            steps: 0,
            request_step: None,
        };
        let mut world = world;
        world.settle_phase();
        Ok(world)
    }

    pub(crate) fn core(&self) -> &Core<P> {
        &self.core
    }

    pub fn events(&self) -> &[SimEvent] {
        &self.log
    }

    pub fn metrics(&self) -> &Metrics {
        &self.metrics
    }

    pub fn protocol(&self) -> &P {
        &self.core.protocol
    }

    pub fn phase(&self) -> Phase {
        self.core.phase
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn world_size(&self) -> usize {
        self.core.ranks.len()
    }

    pub fn requested(&self) -> bool {
        self.core.request_mark.is_some()
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self.core.phase, Phase::Snapshot | Phase::Completed)
    }

    pub fn can_request(&self) -> bool {
        !self.requested()
            && self.core.phase == Phase::Running
            && self.core.protocol.takes_checkpoints()
    }

    pub fn pc(&self, rank: Rank) -> usize {
        self.core.ranks[rank.index()].pc
    }

    pub fn is_finished(&self, rank: Rank) -> bool {
        let r = &self.core.ranks[rank.index()];
        r.stage == Stage::Ready && r.pc >= self.stat.programs[rank.index()].len()
    }

    /// True between entering a blocking collective (or committing through a
    /// trial barrier) and leaving it.
    pub fn inside_collective(&self, rank: Rank) -> bool {
        match self.core.ranks[rank.index()].stage {
            Stage::Inside(_) | Stage::Committed => true,
            Stage::Trial(key) => self.all_arrived(&key),
            Stage::Ready | Stage::After => false,
        }
    }

    pub fn in_flight(&self) -> usize {
        self.core.mailboxes.iter().map(Vec::len).sum()
    }

    fn members(&self, comm: u32) -> &[Rank] {
        self.stat.comms[comm as usize].ggid.members()
    }

    fn op(&self, rank: Rank) -> Option<&Op> {
        let r = &self.core.ranks[rank.index()];
        self.stat.programs[rank.index()].get(r.pc)
    }

    fn all_arrived(&self, key: &InstanceKey) -> bool {
        self.core
            .instances
            .get(key)
            .is_some_and(|i| i.arrived.len() == self.members(key.comm).len())
    }

    fn within_budget(&self, rank: Rank) -> bool {
        if self.requested() {
            return true;
        }
        match &self.stat.budgets {
            Some(b) => match b[rank.index()] {
                Some(limit) => self.core.ranks[rank.index()].pc < limit,
                None => true,
            },
            None => true,
        }
    }

    fn completable(&self, rank: Rank, slot: u32) -> bool {
        match &self.core.ranks[rank.index()].requests[slot as usize] {
            None => true,
            Some(req) => match req.handle.state {
                RequestState::Null | RequestState::LocallyComplete => true,
                RequestState::Pending => {
                    self.stat.policy == ProgressPolicy::Lazy && self.all_arrived(&req.instance)
                }
            },
        }
    }

    fn send_matches(&self, rank: Rank) -> bool {
        let Some(&Op::Send { peer, tag, comm }) = self.op(rank) else {
            return false;
        };
        let p = &self.core.ranks[peer.index()];
        if p.stage != Stage::Ready || !self.within_budget(peer) {
            return false;
        }
        matches!(self.op(peer), Some(&Op::Recv { peer: src, tag: t, comm: c })
            if src == rank && t == tag && c == comm)
            && self.core.protocol.may_run_local(peer)
    }

    pub fn step_enabled(&self, rank: Rank) -> bool {
        let r = &self.core.ranks[rank.index()];
        let proto = &self.core.protocol;
        match r.stage {
            Stage::Inside(key) | Stage::Trial(key) => self.all_arrived(&key),
            Stage::After => proto.may_leave(rank),
            Stage::Committed => true,
            Stage::Ready => {
                let Some(op) = self.op(rank) else {
                    return false;
                };
                if !self.within_budget(rank) {
                    return false;
                }
                match op {
                    Op::Coll { .. } | Op::ICol { .. } => proto.may_enter(rank),
                    Op::Local | Op::Test { .. } => proto.may_run_local(rank),
                    Op::Wait { slots } => {
                        proto.may_run_local(rank) && slots.iter().all(|&s| self.completable(rank, s))
                    }
                    Op::Send { .. } => proto.may_run_local(rank) && self.send_matches(rank),
                    Op::Recv { .. } => false,
                }
            }
        }
    }

    /// All transitions enabled in the current state, in a fixed order.
    /// `Request` is offered only when `allow_request` is set.
    pub fn enabled(&self, allow_request: bool) -> Vec<Transition> {
        let mut out = Vec::new();
        let n = self.world_size();
        match self.core.phase {
            Phase::Snapshot | Phase::Completed => return out,
            Phase::Draining => {
                for r in 0..n {
                    let rank = Rank(r as u32);
                    for id in self.core.protocol.pending_requests(rank) {
                        if let Some(slot) = self.slot_of(rank, id) {
                            out.push(Transition::Drain { rank, slot });
                        }
                    }
                }
                self.push_background(&mut out);
                return out;
            }
            Phase::Running => {}
        }
        for r in 0..n {
            let rank = Rank(r as u32);
            if self.step_enabled(rank) {
                out.push(Transition::Step(rank));
            }
        }
        self.push_background(&mut out);
        if self.core.protocol.checkpoint_pending() {
            for r in 0..n {
                let rank = Rank(r as u32);
                if self.step_enabled(rank) {
                    continue;
                }
                let mb = &self.core.mailboxes[r];
                for i in 0..mb.len() {
                    if i == 0 || mb[i] != mb[i - 1] {
                        out.push(Transition::Deliver { rank, index: i });
                    }
                }
                if self.core.ranks[r].stage == Stage::Ready {
                    if let Some(Op::Send { peer, .. } | Op::Recv { peer, .. }) = self.op(rank) {
                        if self.core.protocol.release_for(rank, *peer).is_some() {
                            out.push(Transition::Release { rank });
                        }
                    }
                }
            }
        }
        if allow_request && self.can_request() && !self.all_finished() {
            out.push(Transition::Request);
        }
        out
    }

    fn push_background(&self, out: &mut Vec<Transition>) {
        if self.stat.policy != ProgressPolicy::Randomized {
            return;
        }
        for (r, rt) in self.core.ranks.iter().enumerate() {
            for (slot, req) in rt.requests.iter().enumerate() {
                if let Some(req) = req {
                    if req.handle.state == RequestState::Pending && self.all_arrived(&req.instance) {
                        out.push(Transition::Background {
                            rank: Rank(r as u32),
                            slot: slot as u32,
                        });
                    }
                }
            }
        }
    }

    fn slot_of(&self, rank: Rank, id: RequestId) -> Option<u32> {
        self.core.ranks[rank.index()]
            .requests
            .iter()
            .position(|r| r.as_ref().is_some_and(|r| r.handle.id == id))
            .map(|s| s as u32)
    }

    pub fn all_finished(&self) -> bool {
        (0..self.world_size()).all(|r| self.is_finished(Rank(r as u32)))
    }

    fn emit(&mut self, mut ev: SimEvent) {
        ev.step = self.log.len() as u64;
        trace!("{:?}", ev);
        self.log.push(ev);
    }

    fn event(&self, rank: Rank, action: Action) -> SimEvent {
        let mut ev = SimEvent::new(0, rank, action);
        ev.instr = Some(self.core.ranks[rank.index()].pc);
        ev
    }

    fn comm_fields(&self, ev: &mut SimEvent, comm: u32) {
        let c = &self.stat.comms[comm as usize];
        ev.comm = Some(c.name.clone());
        ev.ggid = Some(c.ggid.clone());
    }

    fn send_protocol_msgs(&mut self, from: Rank, msgs: Vec<(Rank, ProtocolMsg)>) {
        for (to, msg) in msgs {
            let mut ev = self.event(from, Action::ProtocolMsgSend);
            ev.peer = Some(to);
            describe_msg(&mut ev, &msg);
            self.emit(ev);
            if self.requested() {
                self.metrics.protocol_messages_after_request += 1;
            } else {
                self.metrics.protocol_messages_before_request += 1;
            }
            let mb = &mut self.core.mailboxes[to.index()];
            let pos = mb.partition_point(|m| m <= &msg);
            mb.insert(pos, msg);
        }
    }

    /// Counts calls, one per member rank entering after the request.
    fn count_past_request(&mut self, key: InstanceKey) {
        if self.requested() {
            let key = self.stat.comms[key.comm as usize].ggid.to_string();
            *self
                .metrics
                .collectives_executed_past_request
                .entry(key)
                .or_insert(0) += 1;
        }
    }

    fn arrive(
        &mut self,
        rank: Rank,
        key: InstanceKey,
        kind: CollectiveKind,
        nonblocking: bool,
    ) -> Result<(), SimError> {
        let inst = self.core.instances.entry(key).or_insert_with(|| Instance {
            kind,
            nonblocking,
            arrived: BTreeSet::new(),
            left: BTreeSet::new(),
        });
        if inst.kind != kind || inst.nonblocking != nonblocking {
            return Err(SimError::Erroneous(format!(
                "rank {rank} calls {}{kind} as instance {} on communicator `{}`, other members called {}{}",
                if nonblocking { "non-blocking " } else { "" },
                key.ordinal,
                self.stat.comms[key.comm as usize].name,
                if inst.nonblocking { "non-blocking " } else { "" },
                inst.kind,
            )));
        }
        inst.arrived.insert(rank);
        Ok(())
    }

    fn leave(&mut self, rank: Rank, key: InstanceKey) {
        let n = self.members(key.comm).len();
        if let Some(inst) = self.core.instances.get_mut(&key) {
            inst.left.insert(rank);
            if inst.left.len() == n {
                self.core.instances.remove(&key);
            }
        }
    }

    fn enter_collective(&mut self, rank: Rank, kind: CollectiveKind, comm: u32) -> Result<(), SimError> {
        let handle = self.stat.comms[comm as usize].clone();
        let msgs = self.core.protocol.on_enter(rank, &handle, None)?;
        let rt = &mut self.core.ranks[rank.index()];
        rt.issued[comm as usize] += 1;
        let key = InstanceKey {
            comm,
            ordinal: rt.issued[comm as usize],
            protocol: false,
        };
        self.arrive(rank, key, kind, false)?;
        let mut ev = self.event(rank, Action::EnterCollective);
        self.comm_fields(&mut ev, comm);
        ev.ordinal = Some(key.ordinal);
        ev.kind = Some(kind);
        self.emit(ev);
        self.count_past_request(key);
        self.send_protocol_msgs(rank, msgs);
        self.core.ranks[rank.index()].stage = Stage::Inside(key);
        Ok(())
    }

    /// Pending -> locally complete, with its event.
    fn complete_locally(&mut self, rank: Rank, slot: u32) {
        let Some(req) = self.core.ranks[rank.index()].requests[slot as usize].as_mut() else {
            return;
        };
        if !req.handle.complete_locally() {
            return;
        }
        let key = req.instance;
        let mut ev = self.event(rank, Action::CompleteRequest);
        self.comm_fields(&mut ev, key.comm);
        ev.ordinal = Some(key.ordinal);
        ev.request = Some(self.stat.slot_names[rank.index()][slot as usize].clone());
        self.emit(ev);
        self.leave(rank, key);
    }

    /// A successful test/wait: completes if possible, then nulls the handle.
    fn finish_request(&mut self, rank: Rank, slot: u32) -> Result<(), SimError> {
        self.complete_locally(rank, slot);
        let Some(req) = self.core.ranks[rank.index()].requests[slot as usize].as_mut() else {
            return Ok(());
        };
        let was_null = req.handle.is_null();
        let id = req.handle.id;
        if req.handle.test() && !was_null {
            self.core.protocol.on_request_complete(rank, id)?;
        }
        Ok(())
    }

    fn step(&mut self, rank: Rank) -> Result<(), SimError> {
        let ri = rank.index();
        match self.core.ranks[ri].stage {
            Stage::Inside(key) => {
                let mut ev = self.event(rank, Action::ExitCollective);
                self.comm_fields(&mut ev, key.comm);
                ev.ordinal = Some(key.ordinal);
                ev.kind = self.core.instances.get(&key).map(|i| i.kind);
                self.emit(ev);
                self.leave(rank, key);
                self.finish_wrapper(rank);
            }
            Stage::After => {
                self.advance(rank);
            }
            Stage::Trial(key) => {
                let mut ev = self.event(rank, Action::ExitCollective);
                self.comm_fields(&mut ev, key.comm);
                ev.ordinal = Some(key.ordinal);
                ev.kind = Some(CollectiveKind::Barrier);
                ev.protocol = true;
                self.emit(ev);
                self.leave(rank, key);
                self.core.protocol.on_trial(rank, false);
                self.core.ranks[ri].stage = Stage::Committed;
            }
            Stage::Committed => {
                let Some(&Op::Coll { kind, comm }) = self.op(rank) else {
                    unreachable!("committed rank is not at a collective");
                };
                self.enter_collective(rank, kind, comm)?;
            }
            Stage::Ready => {
                let op = self.op(rank).cloned().expect("step on finished rank");
                match op {
                    Op::Local => self.advance(rank),
                    Op::Coll { kind, comm } => {
                        if self.core.protocol.trial_barrier() {
                            let rt = &mut self.core.ranks[ri];
                            rt.trial_issued[comm as usize] += 1;
                            let key = InstanceKey {
                                comm,
                                ordinal: rt.trial_issued[comm as usize],
                                protocol: true,
                            };
                            self.arrive(rank, key, CollectiveKind::Barrier, false)?;
                            let mut ev = self.event(rank, Action::EnterCollective);
                            self.comm_fields(&mut ev, comm);
                            ev.ordinal = Some(key.ordinal);
                            ev.kind = Some(CollectiveKind::Barrier);
                            ev.protocol = true;
                            self.emit(ev);
                            self.metrics.extra_sync_events += 1;
                            self.core.protocol.on_trial(rank, true);
                            self.core.ranks[ri].stage = Stage::Trial(key);
                        } else {
                            self.enter_collective(rank, kind, comm)?;
                        }
                    }
                    Op::ICol { kind, comm, slot } => self.init_nonblocking(rank, kind, comm, slot)?,
                    Op::Test { slot } => {
                        if self.completable(rank, slot) {
                            self.finish_request(rank, slot)?;
                        }
                        self.advance(rank);
                    }
                    Op::Wait { slots } => {
                        for slot in slots {
                            self.finish_request(rank, slot)?;
                        }
                        self.advance(rank);
                    }
                    Op::Send { peer, tag, comm } => {
                        let mut ev = self.event(rank, Action::Send);
                        self.comm_fields(&mut ev, comm);
                        ev.peer = Some(peer);
                        ev.tag = Some(tag);
                        self.emit(ev);
                        let mut ev = self.event(peer, Action::RecvMatch);
                        self.comm_fields(&mut ev, comm);
                        ev.peer = Some(rank);
                        ev.tag = Some(tag);
                        self.emit(ev);
                        self.core.protocol.on_p2p_complete(rank, peer);
                        self.core.protocol.on_p2p_complete(peer, rank);
                        self.advance(rank);
                        self.advance(peer);
                    }
                    Op::Recv { .. } => unreachable!("receives are driven by their sender"),
                }
            }
        }
        Ok(())
    }

    fn init_nonblocking(
        &mut self,
        rank: Rank,
        kind: CollectiveKind,
        comm: u32,
        slot: u32,
    ) -> Result<(), SimError> {
        let ri = rank.index();
        if let Some(old) = &self.core.ranks[ri].requests[slot as usize] {
            if !old.handle.is_null() {
                return Err(SimError::Erroneous(format!(
                    "rank {rank} reuses request `{}` while it is still active",
                    self.stat.slot_names[ri][slot as usize]
                )));
            }
        }
        let id = RequestId(self.core.ranks[ri].next_req);
        let handle = self.stat.comms[comm as usize].clone();
        let msgs = self.core.protocol.on_enter(rank, &handle, Some(id))?;
        let rt = &mut self.core.ranks[ri];
        rt.next_req += 1;
        rt.issued[comm as usize] += 1;
        let key = InstanceKey {
            comm,
            ordinal: rt.issued[comm as usize],
            protocol: false,
        };
        rt.requests[slot as usize] = Some(Req {
            handle: RequestHandle::pending(id, RequestKind::Collective, Some(handle.ggid.clone())),
            instance: key,
        });
        self.arrive(rank, key, kind, true)?;
        let mut ev = self.event(rank, Action::InitNonblocking);
        self.comm_fields(&mut ev, comm);
        ev.ordinal = Some(key.ordinal);
        ev.kind = Some(kind);
        ev.request = Some(self.stat.slot_names[ri][slot as usize].clone());
        self.emit(ev);
        self.count_past_request(key);
        self.send_protocol_msgs(rank, msgs);

        if self.stat.policy == ProgressPolicy::Eager && self.all_arrived(&key) {
            let members = self.members(comm).to_vec();
            for m in members {
                let slot = self.core.ranks[m.index()].requests.iter().position(|r| {
                    r.as_ref()
                        .is_some_and(|r| r.instance == key && r.handle.state == RequestState::Pending)
                });
                if let Some(s) = slot {
                    self.complete_locally(m, s as u32);
                }
            }
        }
        self.finish_wrapper(rank);
        Ok(())
    }

    fn finish_wrapper(&mut self, rank: Rank) {
        if self.core.protocol.may_leave(rank) {
            self.advance(rank);
        } else {
            self.core.ranks[rank.index()].stage = Stage::After;
        }
    }

    fn advance(&mut self, rank: Rank) {
        let rt = &mut self.core.ranks[rank.index()];
        rt.pc += 1;
        rt.stage = Stage::Ready;
    }

    pub fn apply(&mut self, t: &Transition) -> Result<(), SimError> {
        match *t {
            Transition::Step(rank) => self.step(rank)?,
            Transition::Deliver { rank, index } => {
                let msg = self.core.mailboxes[rank.index()].remove(index);
                let mut ev = self.event(rank, Action::ProtocolMsgRecv);
                ev.peer = Some(msg.sender());
                describe_msg(&mut ev, &msg);
                self.emit(ev);
                self.core.protocol.on_message(rank, &msg);
            }
            Transition::Background { rank, slot } => self.complete_locally(rank, slot),
            Transition::Release { rank } => {
                let peer = match self.op(rank) {
                    Some(Op::Send { peer, .. } | Op::Recv { peer, .. }) => *peer,
                    _ => unreachable!("release from a rank not at a point-to-point call"),
                };
                if let Some(msg) = self.core.protocol.release_for(rank, peer) {
                    self.core.protocol.on_release_sent(rank, peer, &msg);
                    self.send_protocol_msgs(rank, vec![(peer, msg)]);
                }
            }
            Transition::Request => {
                let mark = self.core.ranks.iter().map(|r| r.issued.clone()).collect();
                self.core.request_mark = Some(mark);
                self.request_step = Some(self.steps);
                let ev = SimEvent::new(0, Rank(0), Action::CheckpointRequest);
                self.emit(ev);
                self.core.protocol.on_checkpoint_request();
                debug!("checkpoint request at step {}", self.steps);
            }
            Transition::Drain { rank, slot } => {
                self.metrics.drain_iterations += 1;
                if self.completable(rank, slot) {
                    self.finish_request(rank, slot)?;
                }
            }
        }
        self.steps += 1;
        self.settle_phase();
        Ok(())
    }

    fn settle_phase(&mut self) {
        if self.core.phase == Phase::Running {
            let checkpointing = self.requested() && self.core.protocol.takes_checkpoints();
            if checkpointing && self.quiescent() {
                debug!("quiescent at step {}", self.steps);
                self.core.phase = Phase::Draining;
            } else if !checkpointing && self.all_finished() {
                self.core.phase = Phase::Completed;
                return;
            }
        }
        if self.core.phase == Phase::Draining {
            let n = self.world_size();
            let pending = (0..n).any(|r| !self.core.protocol.pending_requests(Rank(r as u32)).is_empty());
            if !pending {
                self.core.phase = Phase::Snapshot;
                if let Some(at) = self.request_step {
                    self.metrics.steps_to_quiesce = Some(self.steps - at);
                }
                for r in 0..n {
                    let ev = self.event(Rank(r as u32), Action::SnapshotTaken);
                    self.emit(ev);
                }
            }
        }
    }

    /// Omniscient quiescence: nobody inside a collective, every rank's
    /// protocol obligations met, no protocol message in flight.
    pub fn quiescent(&self) -> bool {
        self.in_flight() == 0
            && (0..self.world_size()).all(|r| {
                let rank = Rank(r as u32);
                !self.inside_collective(rank) && self.core.protocol.settled(rank)
            })
    }

    pub fn deadlock_report(&self) -> DeadlockReport {
        let mut blocked = Vec::new();
        for r in 0..self.world_size() {
            let rank = Rank(r as u32);
            if self.is_finished(rank) && self.core.mailboxes[r].is_empty() {
                continue;
            }
            let rt = &self.core.ranks[r];
            let awaiting = match rt.stage {
                Stage::Inside(key) | Stage::Trial(key) => {
                    let arrived = self
                        .core
                        .instances
                        .get(&key)
                        .map(|i| i.arrived.clone())
                        .unwrap_or_default();
                    let missing: Vec<String> = self
                        .members(key.comm)
                        .iter()
                        .filter(|m| !arrived.contains(m))
                        .map(|m| m.to_string())
                        .collect();
                    format!(
                        "{}collective #{} on `{}` to be entered by rank(s) {}",
                        if key.protocol { "trial " } else { "" },
                        key.ordinal,
                        self.stat.comms[key.comm as usize].name,
                        missing.join(",")
                    )
                }
                Stage::After | Stage::Committed => "new checkpoint targets".to_string(),
                Stage::Ready => match self.op(rank) {
                    None => "protocol messages at finalize".to_string(),
                    Some(Op::Coll { .. } | Op::ICol { .. }) => {
                        "new checkpoint targets at wrapper entry".to_string()
                    }
                    Some(Op::Wait { .. }) => "completion of non-blocking request(s)".to_string(),
                    Some(Op::Send { peer, tag, comm }) => format!(
                        "matching receive at rank {peer} (tag {tag}, communicator `{}`)",
                        self.stat.comms[*comm as usize].name
                    ),
                    Some(Op::Recv { peer, tag, comm }) => format!(
                        "matching send from rank {peer} (tag {tag}, communicator `{}`)",
                        self.stat.comms[*comm as usize].name
                    ),
                    Some(Op::Local | Op::Test { .. }) => "checkpoint to complete".to_string(),
                },
            };
            blocked.push(BlockedRank {
                rank,
                pc: rt.pc,
                awaiting,
            });
        }
        DeadlockReport {
            step: self.steps,
            blocked,
            events: self.log.clone(),
        }
    }

    pub fn snapshot_cut(&self) -> Option<SnapshotCut> {
        if self.core.phase != Phase::Snapshot {
            return None;
        }
        let at_step = self
            .log
            .iter()
            .find(|e| e.action == Action::SnapshotTaken)
            .map(|e| e.step)?;
        let ranks = (0..self.world_size())
            .map(|r| {
                let rank = Rank(r as u32);
                let rt = &self.core.ranks[r];
                let pending_requests = rt
                    .requests
                    .iter()
                    .enumerate()
                    .filter(|(_, q)| q.as_ref().is_some_and(|q| !q.handle.is_null()))
                    .map(|(s, _)| self.stat.slot_names[r][s].clone())
                    .collect();
                RankCut {
                    rank,
                    pc: rt.pc,
                    inside_collective: self.inside_collective(rank),
                    pending_requests,
                }
            })
            .collect();
        Some(SnapshotCut { at_step, ranks })
    }

    pub fn rank_summaries(&self) -> Vec<RankSummary> {
        (0..self.world_size())
            .map(|r| {
                let rank = Rank(r as u32);
                let (seq, target) = match self.core.protocol.tables(rank) {
                    Some((s, t)) => (
                        s.iter().map(|(g, v)| (g.to_string(), v)).collect(),
                        t.iter().map(|(g, v)| (g.to_string(), v)).collect(),
                    ),
                    None => Default::default(),
                };
                RankSummary {
                    rank,
                    pc: self.core.ranks[r].pc,
                    finished: self.is_finished(rank),
                    seq,
                    target,
                }
            })
            .collect()
    }

    pub fn into_result(mut self) -> Result<SimResult, SimError> {
        self.metrics.steps = self.steps;
        self.metrics.events = self.log.len() as u64;
        let outcome = match self.core.phase {
            Phase::Snapshot => Outcome::Snapshot,
            Phase::Completed => Outcome::Completed,
            p => {
                return Err(SimError::InvariantViolation(format!(
                    "run ended in non-terminal phase {p:?}"
                )))
            }
        };
        let mut result = SimResult {
            protocol: self.core.protocol.kind(),
            outcome,
            cut: self.snapshot_cut(),
            target_mismatches: if self.core.phase == Phase::Snapshot {
                self.core.protocol.convergence_problems()
            } else {
                None
            },
            ranks: self.rank_summaries(),
            initial_targets: self.core.protocol.initial_targets().cloned(),
            metrics: self.metrics,
            events: self.log,
            verdict: None,
        };
        result.attach_verdict()?;
        Ok(result)
    }
}

fn describe_msg(ev: &mut SimEvent, msg: &ProtocolMsg) {
    match msg {
        ProtocolMsg::TargetUpdate(u) => {
            ev.msg = Some(MsgKind::TargetUpdate);
            ev.ggid = Some(u.ggid.clone());
            ev.value = Some(u.new_target);
        }
        ProtocolMsg::Release(r) => {
            ev.msg = Some(MsgKind::Release);
            ev.value = Some(r.ordinal);
        }
    }
}
