//! The Collective Clock protocol.
//!
//! Every rank counts the collectives it executes per global group id
//! (`SEQ`). When a checkpoint is requested each group gets a target, the
//! maximum `SEQ` any member reached. Ranks keep running until they meet
//! their targets; a rank that overshoots raises the target and tells the
//! other members. The checkpoint is taken once every target is met, nobody
//! is inside a collective and no update is in flight.
//!
//! Point-to-point traffic can hold a rank short of its targets while the
//! peer it depends on is parked at a wrapper gate with all of its own
//! targets met. A parked peer only resumes when it receives a target
//! update, which never comes. [`CcOptions::p2p_release`] adds a second
//! message kind for that case: the blocked rank asks the peer to run up to
//! their next point-to-point exchange.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{
    CommunicatorHandle, Ggid, Rank, RequestId, SeqTable, TargetTable,
};
use crate::error::SimError;
use crate::sim::{ProtocolAdapter, ProtocolKind};

/// Payload of a target update.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TargetUpdateMsg {
    pub ggid: Ggid,
    pub new_target: u64,
    pub sender: Rank,
}

/// Asks the receiver to keep executing until it has completed `ordinal`
/// point-to-point exchanges with `sender`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ReleaseMsg {
    pub sender: Rank,
    pub ordinal: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ProtocolMsg {
    TargetUpdate(TargetUpdateMsg),
    Release(ReleaseMsg),
}

const TAG_UPDATE: u8 = 1;
const TAG_RELEASE: u8 = 2;

impl TargetUpdateMsg {
    /// Little-endian layout: `u32` member count, each member as `u32`,
    /// `u64` target, `u32` sender.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 * self.ggid.len() + 12);
        out.extend_from_slice(&(self.ggid.len() as u32).to_le_bytes());
        for r in self.ggid.members() {
            out.extend_from_slice(&r.0.to_le_bytes());
        }
        out.extend_from_slice(&self.new_target.to_le_bytes());
        out.extend_from_slice(&self.sender.0.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Option<Self> {
        let mut cur = Cursor(bytes);
        let n = cur.u32()? as usize;
        let mut members = Vec::with_capacity(n);
        for _ in 0..n {
            members.push(Rank(cur.u32()?));
        }
        let new_target = cur.u64()?;
        let sender = Rank(cur.u32()?);
        if !cur.0.is_empty() {
            return None;
        }
        let ggid = crate::domain::compute_ggid(members.iter().copied()).ok()?;
        // reject non-canonical member lists
        if ggid.members() != members.as_slice() {
            return None;
        }
        Some(TargetUpdateMsg {
            ggid,
            new_target,
            sender,
        })
    }
}

struct Cursor<'a>(&'a [u8]);

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> Option<[u8; N]> {
        if self.0.len() < N {
            return None;
        }
        let (head, rest) = self.0.split_at(N);
        self.0 = rest;
        head.try_into().ok()
    }
    fn u32(&mut self) -> Option<u32> {
        self.take::<4>().map(u32::from_le_bytes)
    }
    fn u64(&mut self) -> Option<u64> {
        self.take::<8>().map(u64::from_le_bytes)
    }
}

impl ProtocolMsg {
    pub fn sender(&self) -> Rank {
        match self {
            ProtocolMsg::TargetUpdate(m) => m.sender,
            ProtocolMsg::Release(m) => m.sender,
        }
    }

    /// One tag byte (1 update, 2 release) followed by the payload. A
    /// release payload is `u32` sender then `u64` ordinal.
    pub fn encode(&self) -> Vec<u8> {
        match self {
            ProtocolMsg::TargetUpdate(m) => {
                let mut out = vec![TAG_UPDATE];
                out.extend(m.encode());
                out
            }
            ProtocolMsg::Release(m) => {
                let mut out = vec![TAG_RELEASE];
                out.extend_from_slice(&m.sender.0.to_le_bytes());
                out.extend_from_slice(&m.ordinal.to_le_bytes());
                out
            }
        }
    }

    pub fn decode(bytes: &[u8]) -> Option<Self> {
        let (&tag, rest) = bytes.split_first()?;
        match tag {
            TAG_UPDATE => TargetUpdateMsg::decode(rest).map(ProtocolMsg::TargetUpdate),
            TAG_RELEASE => {
                let mut cur = Cursor(rest);
                let sender = Rank(cur.u32()?);
                let ordinal = cur.u64()?;
                cur.0.is_empty().then_some(ProtocolMsg::Release(ReleaseMsg { sender, ordinal }))
            }
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CcPhase {
    #[default]
    Running,
    Draining,
    Safe,
}

/// What [`wait_for_new_targets`] decides for a rank at a wrapper gate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gate {
    /// Keep executing: nothing pending, or some target not yet reached.
    Proceed,
    /// All targets met: block on the protocol channel.
    Wait,
}

/// One rank's protocol state.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct CcState {
    pub seq: SeqTable,
    pub target: TargetTable,
    /// Initiated, not yet completed non-blocking collectives.
    pub pending: Vec<(RequestId, Ggid)>,
    pub phase: CcPhase,
    /// Point-to-point exchanges completed with each peer.
    pub p2p_done: BTreeMap<Rank, u64>,
    /// Highest exchange ordinal a peer asked this rank to reach.
    pub owed: BTreeMap<Rank, u64>,
    /// Highest ordinal this rank asked each peer to reach.
    pub released: BTreeMap<Rank, u64>,
}

impl CcState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn ckpt_pending(&self) -> bool {
        self.target.ckpt_pending
    }

    /// Some group's sequence number is behind its target.
    pub fn behind_target(&self) -> bool {
        self.target
            .iter()
            .any(|(g, t)| self.seq.get(g) < t)
    }

    fn done_with(&self, peer: Rank) -> u64 {
        self.p2p_done.get(&peer).copied().unwrap_or(0)
    }

    /// Some peer asked for an exchange this rank has not reached yet.
    pub fn owes_exchange(&self) -> bool {
        self.owed.iter().any(|(p, &o)| o > self.done_with(*p))
    }

    /// Every target met exactly and no exchange owed.
    pub fn targets_met(&self) -> bool {
        self.target.iter().all(|(g, t)| self.seq.get(g) == t) && !self.owes_exchange()
    }
}

/// Gate decision at wrapper entry and exit.
///
/// A rank behind some target returns without touching the protocol
/// channel. One that has met every target waits for an update.
pub fn wait_for_new_targets(state: &CcState) -> Gate {
    if !state.ckpt_pending() || state.behind_target() || state.owes_exchange() {
        Gate::Proceed
    } else {
        Gate::Wait
    }
}

/// Sets `ckpt_pending` everywhere and installs each group's initial
/// target, the maximum `SEQ` over its members. Returns the targets.
pub fn on_checkpoint_request(states: &mut [CcState]) -> BTreeMap<Ggid, u64> {
    let mut targets: BTreeMap<Ggid, u64> = BTreeMap::new();
    for s in states.iter() {
        for (g, v) in s.seq.iter() {
            let t = targets.entry(g.clone()).or_insert(0);
            *t = (*t).max(v);
        }
    }
    for s in states.iter_mut() {
        s.target.ckpt_pending = true;
    }
    for (g, &t) in &targets {
        for m in g.members() {
            if let Some(s) = states.get_mut(m.index()) {
                s.target.merge(g, t);
            }
        }
    }
    targets
}

/// Wrapper steps between the entry gate and the real call: count the
/// collective and, when it overshoots the target, announce the new target.
pub fn on_collective(state: &mut CcState, me: Rank, ggid: &Ggid) -> Vec<(Rank, ProtocolMsg)> {
    let seq = state.seq.increment(ggid);
    if !state.ckpt_pending() || seq <= state.target.get(ggid) {
        return Vec::new();
    }
    state.target.merge(ggid, seq);
    ggid.members()
        .iter()
        .filter(|&&m| m != me)
        .map(|&m| {
            (
                m,
                ProtocolMsg::TargetUpdate(TargetUpdateMsg {
                    ggid: ggid.clone(),
                    new_target: seq,
                    sender: me,
                }),
            )
        })
        .collect()
}

/// As [`on_collective`], and records the request for draining.
pub fn on_nonblocking_init(
    state: &mut CcState,
    me: Rank,
    comm: &CommunicatorHandle,
    req: RequestId,
) -> Vec<(Rank, ProtocolMsg)> {
    let msgs = on_collective(state, me, &comm.ggid);
    state.pending.push((req, comm.ggid.clone()));
    msgs
}

pub fn on_request_completion(state: &mut CcState, req: RequestId) -> Result<(), SimError> {
    let pos = state
        .pending
        .iter()
        .position(|(id, _)| *id == req)
        .ok_or_else(|| {
            SimError::InvariantViolation(format!("completed request {} was never recorded", req.0))
        })?;
    state.pending.remove(pos);
    Ok(())
}

/// Tests every recorded request until all complete. `test` reports whether
/// one test call completed the request. A pass that completes nothing means
/// some member never initiated the operation.
pub fn drain_pending<F>(state: &mut CcState, mut test: F) -> Result<u64, SimError>
where
    F: FnMut(RequestId) -> bool,
{
    state.phase = CcPhase::Draining;
    let mut calls = 0;
    while !state.pending.is_empty() {
        let before = state.pending.len();
        let ids: Vec<RequestId> = state.pending.iter().map(|(id, _)| *id).collect();
        for id in ids {
            calls += 1;
            if test(id) {
                on_request_completion(state, id)?;
            }
        }
        if state.pending.len() == before {
            return Err(SimError::InvariantViolation(format!(
                "{} request(s) cannot complete during drain",
                before
            )));
        }
    }
    state.phase = CcPhase::Safe;
    Ok(calls)
}

/// Global quiescence as seen by an omniscient observer.
pub fn detect_quiescence(states: &[CcState], inside_collective: &[bool], in_flight: usize) -> bool {
    in_flight == 0
        && states.iter().all(|s| s.ckpt_pending() && s.targets_met())
        && !inside_collective.iter().any(|&b| b)
}

/// Checks that every group's members agree on one target equal to the
/// largest member sequence number. Returns a description of each mismatch.
pub fn check_target_convergence(states: &[CcState]) -> Result<(), Vec<String>> {
    let mut groups: BTreeMap<Ggid, ()> = BTreeMap::new();
    for s in states {
        for (g, _) in s.seq.iter().chain(s.target.iter()) {
            groups.insert(g.clone(), ());
        }
    }
    let mut problems = Vec::new();
    for g in groups.keys() {
        let max_seq = g
            .members()
            .iter()
            .filter_map(|m| states.get(m.index()))
            .map(|s| s.seq.get(g))
            .max()
            .unwrap_or(0);
        for m in g.members() {
            let Some(s) = states.get(m.index()) else { continue };
            let t = s.target.get(g);
            if t != max_seq {
                problems.push(format!(
                    "rank {m}: target {t} for {g}, members reached at most {max_seq}"
                ));
            }
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(problems)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CcOptions {
    /// Enables release messages for point-to-point dependencies. Without
    /// them a rank parked at a gate can starve its blocked peer forever.
    pub p2p_release: bool,
}

impl Default for CcOptions {
    fn default() -> Self {
        CcOptions { p2p_release: true }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CcProtocol {
    ranks: Vec<CcState>,
    options: CcOptions,
    initial_targets: Option<BTreeMap<Ggid, u64>>,
}

impl CcProtocol {
    pub fn new(world_size: u32, options: CcOptions) -> Self {
        CcProtocol {
            ranks: (0..world_size).map(|_| CcState::new()).collect(),
            options,
            initial_targets: None,
        }
    }

    pub fn state(&self, rank: Rank) -> &CcState {
        &self.ranks[rank.index()]
    }

    pub fn states(&self) -> &[CcState] {
        &self.ranks
    }

    pub fn options(&self) -> CcOptions {
        self.options
    }

    fn driven(&self, rank: Rank) -> bool {
        let s = &self.ranks[rank.index()];
        s.behind_target() || s.owes_exchange()
    }
}

impl ProtocolAdapter for CcProtocol {
    fn kind(&self) -> ProtocolKind {
        ProtocolKind::Cc
    }

    fn checkpoint_pending(&self) -> bool {
        self.initial_targets.is_some()
    }

    fn on_checkpoint_request(&mut self) {
        self.initial_targets = Some(on_checkpoint_request(&mut self.ranks));
    }

    fn may_enter(&self, rank: Rank) -> bool {
        wait_for_new_targets(&self.ranks[rank.index()]) == Gate::Proceed
    }

    fn on_enter(
        &mut self,
        rank: Rank,
        comm: &CommunicatorHandle,
        request: Option<RequestId>,
    ) -> Result<Vec<(Rank, ProtocolMsg)>, SimError> {
        let s = &mut self.ranks[rank.index()];
        Ok(match request {
            Some(id) => on_nonblocking_init(s, rank, comm, id),
            None => on_collective(s, rank, &comm.ggid),
        })
    }

    fn may_leave(&self, rank: Rank) -> bool {
        self.may_enter(rank)
    }

    fn on_request_complete(&mut self, rank: Rank, req: RequestId) -> Result<(), SimError> {
        on_request_completion(&mut self.ranks[rank.index()], req)
    }

    fn pending_requests(&self, rank: Rank) -> Vec<RequestId> {
        self.ranks[rank.index()].pending.iter().map(|(id, _)| *id).collect()
    }

    fn on_message(&mut self, rank: Rank, msg: &ProtocolMsg) {
        let s = &mut self.ranks[rank.index()];
        match msg {
            ProtocolMsg::TargetUpdate(u) => {
                s.target.merge(&u.ggid, u.new_target);
            }
            ProtocolMsg::Release(r) => {
                let owed = s.owed.entry(r.sender).or_insert(0);
                *owed = (*owed).max(r.ordinal);
            }
        }
    }

    fn on_p2p_complete(&mut self, rank: Rank, peer: Rank) {
        *self.ranks[rank.index()].p2p_done.entry(peer).or_insert(0) += 1;
    }

    fn release_for(&self, rank: Rank, peer: Rank) -> Option<ProtocolMsg> {
        if !self.options.p2p_release || !self.checkpoint_pending() || !self.driven(rank) {
            return None;
        }
        let s = &self.ranks[rank.index()];
        let ordinal = s.done_with(peer) + 1;
        if s.released.get(&peer).copied().unwrap_or(0) >= ordinal {
            return None;
        }
        Some(ProtocolMsg::Release(ReleaseMsg {
            sender: rank,
            ordinal,
        }))
    }

    fn on_release_sent(&mut self, rank: Rank, peer: Rank, msg: &ProtocolMsg) {
        if let ProtocolMsg::Release(r) = msg {
            let e = self.ranks[rank.index()].released.entry(peer).or_insert(0);
            *e = (*e).max(r.ordinal);
        }
    }

    fn settled(&self, rank: Rank) -> bool {
        self.ranks[rank.index()].targets_met()
    }

    fn tables(&self, rank: Rank) -> Option<(&SeqTable, &TargetTable)> {
        let s = &self.ranks[rank.index()];
        Some((&s.seq, &s.target))
    }

    fn initial_targets(&self) -> Option<&BTreeMap<Ggid, u64>> {
        self.initial_targets.as_ref()
    }

    fn convergence_problems(&self) -> Option<Vec<String>> {
        Some(check_target_convergence(&self.ranks).err().unwrap_or_default())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{compute_ggid, GroupMembership};
    use proptest::prelude::*;

    fn g(rs: &[u32]) -> Ggid {
        compute_ggid(rs.iter().map(|&r| Rank(r))).unwrap()
    }

    fn comm(rs: &[u32]) -> CommunicatorHandle {
        let grp = GroupMembership::new(rs.iter().map(|&r| Rank(r)).collect(), 8).unwrap();
        CommunicatorHandle::new(0, "c", grp)
    }

    /// SEQ tables of the seven-rank scenario at the moment of the request.
    fn overlapping_states() -> Vec<CcState> {
        let mut st: Vec<CcState> = (0..7).map(|_| CcState::new()).collect();
        type GroupSeqs<'a> = (&'a [u32], &'a [(u32, u64)]);
        let counts: [GroupSeqs; 4] = [
            (&[1, 2], &[(1, 5), (2, 5)]),
            (&[2, 3], &[(2, 7), (3, 6)]),
            (&[3, 4, 5], &[(3, 2), (4, 2), (5, 2)]),
            (&[5, 6], &[(5, 2), (6, 3)]),
        ];
        for (grp, per_rank) in counts {
            let grp = g(grp);
            for &(r, n) in per_rank {
                for _ in 0..n {
                    st[r as usize].seq.increment(&grp);
                }
            }
        }
        st
    }

    #[test]
    fn no_pending_checkpoint_only_counts() {
        let mut s = CcState::new();
        let c = comm(&[0, 1]);
        assert_eq!(wait_for_new_targets(&s), Gate::Proceed);
        let msgs = on_collective(&mut s, Rank(0), &c.ggid);
        assert!(msgs.is_empty());
        assert_eq!(s.seq.get(&c.ggid), 1);
    }

    #[test]
    fn initial_targets_are_group_maxima() {
        let mut st = overlapping_states();
        let t = on_checkpoint_request(&mut st);
        assert_eq!(t[&g(&[1, 2])], 5);
        assert_eq!(t[&g(&[2, 3])], 7);
        assert_eq!(t[&g(&[3, 4, 5])], 2);
        assert_eq!(t[&g(&[5, 6])], 3);
        assert!(st.iter().all(|s| s.ckpt_pending()));
        // every member holds the same initial target
        assert_eq!(st[3].target.get(&g(&[2, 3])), 7);
        assert_eq!(st[2].target.get(&g(&[2, 3])), 7);
        assert_eq!(st[5].target.get(&g(&[5, 6])), 3);
        // rank 0 took part in nothing
        assert!(st[0].target.is_empty());
    }

    #[test]
    fn overshoot_sends_updates_to_other_members() {
        let mut st = overlapping_states();
        on_checkpoint_request(&mut st);
        let g345 = g(&[3, 4, 5]);
        let msgs = on_collective(&mut st[3], Rank(3), &g345);
        assert_eq!(st[3].target.get(&g345), 3);
        let dests: Vec<Rank> = msgs.iter().map(|(r, _)| *r).collect();
        assert_eq!(dests, vec![Rank(4), Rank(5)]);
        for (_, m) in &msgs {
            let ProtocolMsg::TargetUpdate(u) = m else { panic!() };
            assert_eq!(u.new_target, 3);
            assert_eq!(u.sender, Rank(3));
        }
    }

    #[test]
    fn landing_on_target_sends_nothing() {
        let mut st = overlapping_states();
        on_checkpoint_request(&mut st);
        let msgs = on_collective(&mut st[3], Rank(3), &g(&[2, 3]));
        assert_eq!(st[3].seq.get(&g(&[2, 3])), 7);
        assert!(msgs.is_empty());
    }

    #[test]
    fn gate_behaviour() {
        let mut st = overlapping_states();
        on_checkpoint_request(&mut st);
        // rank 3 is behind on {2,3}
        assert_eq!(wait_for_new_targets(&st[3]), Gate::Proceed);
        // rank 5 met {3,4,5}=2 but is behind on {5,6}=3
        assert_eq!(wait_for_new_targets(&st[5]), Gate::Proceed);
        // rank 4 met everything and waits
        assert_eq!(wait_for_new_targets(&st[4]), Gate::Wait);
        let mut p = CcProtocol::new(7, CcOptions::default());
        p.ranks = st;
        p.on_message(
            Rank(4),
            &ProtocolMsg::TargetUpdate(TargetUpdateMsg {
                ggid: g(&[3, 4, 5]),
                new_target: 3,
                sender: Rank(3),
            }),
        );
        assert!(p.may_enter(Rank(4)));
    }

    #[test]
    fn no_collectives_means_immediately_quiescent() {
        let mut st: Vec<CcState> = (0..3).map(|_| CcState::new()).collect();
        let t = on_checkpoint_request(&mut st);
        assert!(t.is_empty());
        assert!(detect_quiescence(&st, &[false; 3], 0));
        assert!(!detect_quiescence(&st, &[false; 3], 1));
        assert!(!detect_quiescence(&st, &[false, true, false], 0));
    }

    #[test]
    fn request_bookkeeping() {
        let mut s = CcState::new();
        let c = comm(&[0, 1]);
        on_nonblocking_init(&mut s, Rank(0), &c, RequestId(0));
        on_nonblocking_init(&mut s, Rank(0), &c, RequestId(1));
        assert_eq!(s.seq.get(&c.ggid), 2);
        assert_eq!(s.pending.len(), 2);
        on_request_completion(&mut s, RequestId(1)).unwrap();
        assert_eq!(s.pending.len(), 1);
        assert!(matches!(
            on_request_completion(&mut s, RequestId(7)),
            Err(SimError::InvariantViolation(_))
        ));
    }

    #[test]
    fn drain_loops_until_empty() {
        let mut s = CcState::new();
        let c = comm(&[0, 1]);
        let d = comm(&[0, 2]);
        on_nonblocking_init(&mut s, Rank(0), &c, RequestId(0));
        on_nonblocking_init(&mut s, Rank(0), &d, RequestId(1));
        let mut tries = 0;
        let calls = drain_pending(&mut s, |_| {
            tries += 1;
            tries > 1
        })
        .unwrap();
        assert!(s.pending.is_empty());
        assert_eq!(s.phase, CcPhase::Safe);
        assert_eq!(calls, 3);

        let mut s = CcState::new();
        assert_eq!(drain_pending(&mut s, |_| false).unwrap(), 0);
        on_nonblocking_init(&mut s, Rank(0), &c, RequestId(0));
        assert!(drain_pending(&mut s, |_| false).is_err());
    }

    #[test]
    fn convergence_check() {
        let mut st = overlapping_states();
        on_checkpoint_request(&mut st);
        assert!(check_target_convergence(&st).is_ok());
        on_collective(&mut st[3], Rank(3), &g(&[3, 4, 5]));
        assert!(check_target_convergence(&st).is_err());
    }

    #[test]
    fn release_is_sent_once_per_ordinal() {
        let mut p = CcProtocol::new(2, CcOptions::default());
        let c = comm(&[0, 1]);
        p.on_enter(Rank(0), &c, None).unwrap();
        p.on_checkpoint_request();
        // rank 1 is behind on {0,1}
        let m = p.release_for(Rank(1), Rank(0)).unwrap();
        p.on_release_sent(Rank(1), Rank(0), &m);
        assert!(p.release_for(Rank(1), Rank(0)).is_none());
        assert!(!p.may_enter(Rank(0)));
        p.on_message(Rank(0), &m);
        assert!(p.may_enter(Rank(0)));
        assert!(!p.settled(Rank(0)));
        p.on_p2p_complete(Rank(0), Rank(1));
        p.on_p2p_complete(Rank(1), Rank(0));
        assert!(p.settled(Rank(0)));

        let off = CcProtocol::new(2, CcOptions { p2p_release: false });
        assert!(off.release_for(Rank(1), Rank(0)).is_none());
    }

    #[test]
    fn encoding_layout() {
        let m = TargetUpdateMsg {
            ggid: g(&[3, 4, 5]),
            new_target: 3,
            sender: Rank(3),
        };
        let bytes = m.encode();
        assert_eq!(&bytes[..4], &3u32.to_le_bytes());
        assert_eq!(bytes.len(), 4 + 12 + 8 + 4);
        assert_eq!(TargetUpdateMsg::decode(&bytes), Some(m.clone()));
        let mut bad = bytes.clone();
        bad.push(0);
        assert_eq!(TargetUpdateMsg::decode(&bad), None);
        assert_eq!(TargetUpdateMsg::decode(&bytes[..10]), None);
    }

    proptest! {
        #[test]
        fn protocol_msg_round_trips(members in proptest::collection::btree_set(0u32..64, 1..8),
                                    target in any::<u64>(), sender in any::<u32>(),
                                    release in any::<bool>()) {
            let msg = if release {
                ProtocolMsg::Release(ReleaseMsg { sender: Rank(sender), ordinal: target })
            } else {
                ProtocolMsg::TargetUpdate(TargetUpdateMsg {
                    ggid: compute_ggid(members.into_iter().map(Rank)).unwrap(),
                    new_target: target,
                    sender: Rank(sender),
                })
            };
            prop_assert_eq!(ProtocolMsg::decode(&msg.encode()), Some(msg));
        }

        #[test]
        fn initial_targets_converge(seqs in proptest::collection::vec(
            proptest::collection::vec(0u64..6, 3), 4)) {
            // four ranks, three fixed groups
            let groups = [g(&[0, 1]), g(&[1, 2, 3]), g(&[0, 3])];
            let mut st: Vec<CcState> = (0..4).map(|_| CcState::new()).collect();
            for (r, counts) in seqs.iter().enumerate() {
                for (gi, &n) in counts.iter().enumerate() {
                    if groups[gi].contains(Rank(r as u32)) {
                        for _ in 0..n {
                            st[r].seq.increment(&groups[gi]);
                        }
                    }
                }
            }
            on_checkpoint_request(&mut st);
            prop_assert!(check_target_convergence(&st).is_ok());
        }
    }
}
