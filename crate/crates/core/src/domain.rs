//! Protocol-level value types shared by the simulator, both protocols and
//! the oracle: ranks, groups, global group ids, the per-process sequence
//! table and the checkpoint target table.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::DomainError;

/// A process index in the world communicator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Rank(pub u32);

impl Rank {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for Rank {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u32> for Rank {
    fn from(r: u32) -> Self {
        Rank(r)
    }
}

/// Global group id.
///
/// The identifier is the sorted, de-duplicated list of member world ranks.
/// Two groups with the same member set (`MPI_SIMILAR`) therefore share a
/// ggid, and distinct member sets can never collide.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Ggid(Vec<Rank>);

impl Ggid {
    pub fn members(&self) -> &[Rank] {
        &self.0
    }

    pub fn contains(&self, rank: Rank) -> bool {
        self.0.binary_search(&rank).is_ok()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for Ggid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, r) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{r}")?;
        }
        f.write_str("}")
    }
}

/// Computes the canonical global id of a group from its member world ranks.
///
/// Order and duplicates in `members` are irrelevant.
pub fn compute_ggid<I>(members: I) -> Result<Ggid, DomainError>
where
    I: IntoIterator<Item = Rank>,
{
    let mut v: Vec<Rank> = members.into_iter().collect();
    if v.is_empty() {
        return Err(DomainError::EmptyGroup);
    }
    v.sort_unstable();
    v.dedup();
    Ok(Ggid(v))
}

/// An ordered group of world ranks with local (communicator) numbering.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GroupMembership {
    members: Vec<Rank>,
}

impl GroupMembership {
    /// Builds a group; local ranks follow the order given.
    pub fn new(members: Vec<Rank>, world_size: u32) -> Result<Self, DomainError> {
        if members.is_empty() {
            return Err(DomainError::EmptyGroup);
        }
        let mut seen = std::collections::BTreeSet::new();
        for &m in &members {
            if m.0 >= world_size {
                return Err(DomainError::RankOutOfRange { rank: m, world_size });
            }
            if !seen.insert(m) {
                return Err(DomainError::DuplicateMember(m));
            }
        }
        Ok(GroupMembership { members })
    }

    pub fn members(&self) -> &[Rank] {
        &self.members
    }

    pub fn local_rank_of(&self, rank: Rank) -> Option<usize> {
        self.members.iter().position(|&m| m == rank)
    }

    pub fn world_rank_of(&self, local: usize) -> Option<Rank> {
        self.members.get(local).copied()
    }

    pub fn contains(&self, rank: Rank) -> bool {
        self.local_rank_of(rank).is_some()
    }

    pub fn ggid(&self) -> Ggid {
        // non-empty by construction
        compute_ggid(self.members.iter().copied()).expect("group is non-empty")
    }
}

/// A communicator as seen by one process: a local handle plus its group.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CommunicatorHandle {
    pub id: u32,
    pub name: String,
    pub group: GroupMembership,
    pub ggid: Ggid,
}

impl CommunicatorHandle {
    pub fn new(id: u32, name: impl Into<String>, group: GroupMembership) -> Self {
        let ggid = group.ggid();
        CommunicatorHandle {
            id,
            name: name.into(),
            group,
            ggid,
        }
    }
}

/// Per-process `SEQ[ggid]` counters. Absent entries read as zero.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct SeqTable {
    seq: BTreeMap<Ggid, u64>,
}

impl SeqTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, g: &Ggid) -> u64 {
        self.seq.get(g).copied().unwrap_or(0)
    }

    /// Increments `SEQ[g]` and returns the new value.
    pub fn increment(&mut self, g: &Ggid) -> u64 {
        let slot = self.seq.entry(g.clone()).or_insert(0);
        *slot += 1;
        *slot
    }

    /// Registers `g` with a zero counter if it has not been seen yet.
    pub fn touch(&mut self, g: &Ggid) {
        self.seq.entry(g.clone()).or_insert(0);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Ggid, u64)> {
        self.seq.iter().map(|(g, v)| (g, *v))
    }
}

/// Per-process `TARGET[ggid]` values, meaningful only while a checkpoint is
/// pending.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct TargetTable {
    target: BTreeMap<Ggid, u64>,
    pub ckpt_pending: bool,
}

impl TargetTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, g: &Ggid) -> u64 {
        self.target.get(g).copied().unwrap_or(0)
    }

    /// `target[g] := max(target[g], value)`; returns whether it increased.
    pub fn merge(&mut self, g: &Ggid, value: u64) -> bool {
        let slot = self.target.entry(g.clone()).or_insert(0);
        if value > *slot {
            *slot = value;
            true
        } else {
            false
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Ggid, u64)> {
        self.target.iter().map(|(g, v)| (g, *v))
    }

    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }
}

pub fn seq_get(table: &SeqTable, g: &Ggid) -> u64 {
    table.get(g)
}

pub fn target_merge(table: &mut TargetTable, g: &Ggid, value: u64) -> bool {
    table.merge(g, value)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RequestState {
    Null,
    Pending,
    LocallyComplete,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RequestKind {
    P2pSend,
    P2pRecv,
    Collective,
}

/// Opaque per-rank request token.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RequestId(pub u32);

/// A non-blocking operation handle.
///
/// Lifecycle: `Pending -> LocallyComplete -> Null`, each step at most once.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RequestHandle {
    pub id: RequestId,
    pub state: RequestState,
    pub kind: RequestKind,
    pub ggid: Option<Ggid>,
}

impl RequestHandle {
    pub fn pending(id: RequestId, kind: RequestKind, ggid: Option<Ggid>) -> Self {
        RequestHandle {
            id,
            state: RequestState::Pending,
            kind,
            ggid,
        }
    }

    /// Marks background completion. Returns false if the request was not
    /// pending.
    pub fn complete_locally(&mut self) -> bool {
        if self.state == RequestState::Pending {
            self.state = RequestState::LocallyComplete;
            true
        } else {
            false
        }
    }

    /// `MPI_Test` semantics on an already-progressed request: a completed
    /// request is nulled and reports true; a null request reports true with
    /// no effect; a pending one reports false.
    pub fn test(&mut self) -> bool {
        match self.state {
            RequestState::Null => true,
            RequestState::LocallyComplete => {
                self.state = RequestState::Null;
                true
            }
            RequestState::Pending => false,
        }
    }

    pub fn is_null(&self) -> bool {
        self.state == RequestState::Null
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn g(rs: &[u32]) -> Ggid {
        compute_ggid(rs.iter().map(|&r| Rank(r))).unwrap()
    }

    #[test]
    fn ggid_is_canonical_sorted_list() {
        assert_eq!(g(&[1, 2]).members(), &[Rank(1), Rank(2)]);
        assert_eq!(g(&[2, 1]), g(&[1, 2]));
        assert_ne!(g(&[3, 4, 5]), g(&[3, 4, 6]));
        assert_eq!(g(&[5, 3, 4]).to_string(), "{3,4,5}");
    }

    #[test]
    fn empty_group_is_rejected() {
        assert_eq!(compute_ggid(Vec::<Rank>::new()), Err(DomainError::EmptyGroup));
        assert!(GroupMembership::new(vec![], 4).is_err());
    }

    #[test]
    fn group_membership_validation() {
        assert!(matches!(
            GroupMembership::new(vec![Rank(0), Rank(7)], 4),
            Err(DomainError::RankOutOfRange { .. })
        ));
        assert!(matches!(
            GroupMembership::new(vec![Rank(1), Rank(1)], 4),
            Err(DomainError::DuplicateMember(Rank(1)))
        ));
        let grp = GroupMembership::new(vec![Rank(3), Rank(1)], 4).unwrap();
        assert_eq!(grp.local_rank_of(Rank(3)), Some(0));
        assert_eq!(grp.world_rank_of(1), Some(Rank(1)));
        assert_eq!(grp.ggid(), g(&[1, 3]));
    }

    #[test]
    fn seq_table_reads() {
        let mut t = SeqTable::new();
        let g1 = g(&[0, 1]);
        let g2 = g(&[1, 2]);
        assert_eq!(seq_get(&t, &g1), 0);
        for _ in 0..5 {
            t.increment(&g1);
        }
        assert_eq!(seq_get(&t, &g1), 5);
        assert_eq!(seq_get(&t, &g2), 0);
    }

    #[test]
    fn target_merge_examples() {
        let grp = g(&[3, 4, 5]);
        let mut t = TargetTable::new();
        t.ckpt_pending = true;
        t.merge(&grp, 2);
        assert!(target_merge(&mut t, &grp, 3));
        assert_eq!(t.get(&grp), 3);

        let mut t = TargetTable::new();
        t.merge(&grp, 7);
        assert!(!target_merge(&mut t, &grp, 5));
        assert_eq!(t.get(&grp), 7);

        let mut t = TargetTable::new();
        assert!(!target_merge(&mut t, &grp, 0));
        assert_eq!(t.get(&grp), 0);
    }

    #[test]
    fn request_lifecycle() {
        let mut r = RequestHandle::pending(RequestId(0), RequestKind::Collective, None);
        assert!(!r.test());
        assert!(r.complete_locally());
        assert!(!r.complete_locally());
        assert!(r.test());
        assert!(r.is_null());
        assert!(r.test());
        assert!(!r.complete_locally());
    }

    proptest! {
        #[test]
        fn ggid_equality_is_set_equality(a in proptest::collection::vec(0u32..8, 1..6),
                                         b in proptest::collection::vec(0u32..8, 1..6)) {
            let sa: std::collections::BTreeSet<_> = a.iter().collect();
            let sb: std::collections::BTreeSet<_> = b.iter().collect();
            prop_assert_eq!(g(&a) == g(&b), sa == sb);
        }

        #[test]
        fn seq_counters_never_decrease(ops in proptest::collection::vec(0u32..3, 0..40)) {
            let groups = [g(&[0]), g(&[0, 1]), g(&[1, 2])];
            let mut t = SeqTable::new();
            let mut last = [0u64; 3];
            for op in ops {
                t.increment(&groups[op as usize]);
                for (i, grp) in groups.iter().enumerate() {
                    let now = t.get(grp);
                    prop_assert!(now >= last[i]);
                    last[i] = now;
                }
            }
        }

        #[test]
        fn target_merge_is_order_independent(vals in proptest::collection::vec(0u64..20, 0..12),
                                              seed in any::<u64>()) {
            let grp = g(&[0, 1]);
            let mut fwd = TargetTable::new();
            for &v in &vals {
                fwd.merge(&grp, v);
            }
            let mut shuffled = vals.clone();
            // deterministic permutation from the seed
            let n = shuffled.len();
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let j = (s >> 33) as usize % (i + 1);
                shuffled.swap(i, j);
            }
            let mut rev = TargetTable::new();
            for &v in shuffled.iter().chain(shuffled.iter()) {
                rev.merge(&grp, v);
            }
            prop_assert_eq!(fwd.get(&grp), rev.get(&grp));
            prop_assert_eq!(fwd.get(&grp), vals.iter().copied().max().unwrap_or(0));
        }
    }
}
