//! The shared-memory substrate: primitives, main memory, per-process
//! tracking sets for cached (speculative) accesses, and the event records
//! that executions are made of.
//!
//! Every shared step a machine takes goes through [`World`], which applies
//! the primitive, derives whether the event was nontrivial, and performs the
//! bookkeeping that cached accesses need (invalidation of other processes'
//! tracking sets). The returned [`Event`] is what gets appended to the
//! execution log; metrics and tests consume that log, never the live state.

use alloc::vec::Vec;
use core::fmt;

use crate::value::{ObjId, ProcId, TxnId, Val};
use alloc::collections::BTreeMap;

/// An rmw primitive applied to a single base object.
///
/// `read` is trivial, `write` and `fadd` are nontrivial, and `cas` is
/// nontrivial exactly when it succeeds.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Prim {
    Read,
    Write(Val),
    Cas { expect: Val, new: Val },
    Fadd(i64),
}

impl fmt::Debug for Prim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Prim::Read => write!(f, "read"),
            Prim::Write(v) => write!(f, "write({v:?})"),
            Prim::Cas { expect, new } => write!(f, "cas({expect:?}->{new:?})"),
            Prim::Fadd(d) => write!(f, "fadd({d})"),
        }
    }
}

/// Main memory: a total map from declared base objects to values.
///
/// Objects must be declared with [`Memory::init`] before use; reading an
/// undeclared object is a harness bug and panics.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct Memory {
    cells: BTreeMap<ObjId, Val>,
}

impl Memory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn init(&mut self, obj: ObjId, val: Val) {
        self.cells.insert(obj, val);
    }

    pub fn get(&self, obj: ObjId) -> &Val {
        self.cells
            .get(&obj)
            .unwrap_or_else(|| panic!("access to undeclared base object {obj:?}"))
    }

    /// Applies `prim` and returns `(response, nontrivial)`.
    ///
    /// cas responds 1 on success and 0 on failure; fadd responds with the
    /// previous value and faults on a non-integer cell.
    pub fn apply(&mut self, obj: ObjId, prim: &Prim) -> (Val, bool) {
        let cur = self.get(obj).clone();
        match prim {
            Prim::Read => (cur, false),
            Prim::Write(v) => {
                self.cells.insert(obj, v.clone());
                (Val::nil(), true)
            }
            Prim::Cas { expect, new } => {
                if cur == *expect {
                    self.cells.insert(obj, new.clone());
                    (Val::int(1), true)
                } else {
                    (Val::int(0), false)
                }
            }
            Prim::Fadd(d) => {
                let x = cur
                    .as_int()
                    .unwrap_or_else(|| panic!("fadd on non-integer object {obj:?}"));
                self.cells.insert(obj, Val::int(x + d));
                (Val::int(x), true)
            }
        }
    }
}

/// Mode of a tracking-set entry.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub enum TrackMode {
    Shared,
    Exclusive,
}

/// Default tracking-set capacity.
pub const TRACK_CAP: usize = 8;

/// A bounded per-process tracking set backing cached primitives.
///
/// Invariants, in the order they are checked on every cached access:
/// an invalidated set answers bottom; a full set answers bottom on the
/// first access to an untracked object (capacity); otherwise the primitive
/// is applied to the private copy, fetching from memory on first access.
/// Whenever a cached access or a commit answers bottom the set is emptied.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct TrackingSet {
    cap: usize,
    valid: bool,
    entries: BTreeMap<ObjId, (Val, TrackMode)>,
}

impl TrackingSet {
    pub fn new(cap: usize) -> Self {
        TrackingSet {
            cap,
            valid: true,
            entries: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn holds(&self, obj: ObjId) -> bool {
        self.entries.contains_key(&obj)
    }

    fn reset(&mut self) {
        self.entries.clear();
        self.valid = true;
    }

    /// Drops all entries, e.g. when the owning transaction aborts for a
    /// reason the cache layer cannot see (a value-based abort).
    pub fn clear(&mut self) {
        self.reset();
    }

    /// One cached primitive. `None` is bottom: the set was invalid, or the
    /// capacity bound fired. Either way the set is emptied.
    pub fn cached(&mut self, mem: &Memory, obj: ObjId, prim: &Prim) -> Option<Val> {
        if !self.valid {
            self.reset();
            return None;
        }
        if self.entries.len() == self.cap && !self.entries.contains_key(&obj) {
            self.reset();
            return None;
        }
        let (val, mode) = self
            .entries
            .entry(obj)
            .or_insert_with(|| (mem.get(obj).clone(), TrackMode::Shared));
        let resp = match prim {
            Prim::Read => val.clone(),
            Prim::Write(v) => {
                *val = v.clone();
                *mode = TrackMode::Exclusive;
                Val::nil()
            }
            Prim::Cas { expect, new } => {
                *mode = TrackMode::Exclusive;
                if *val == *expect {
                    *val = new.clone();
                    Val::int(1)
                } else {
                    Val::int(0)
                }
            }
            Prim::Fadd(d) => {
                *mode = TrackMode::Exclusive;
                let x = val.as_int().expect("fadd on non-integer object");
                let old = x;
                *val = Val::int(x + d);
                Val::int(old)
            }
        };
        Some(resp)
    }

    /// A foreign memory event on `obj` occurred. Any event invalidates an
    /// exclusive entry; only a nontrivial one invalidates a shared entry.
    pub fn foreign_event(&mut self, obj: ObjId, nontrivial: bool) {
        if let Some((_, mode)) = self.entries.get(&obj) {
            if nontrivial || *mode == TrackMode::Exclusive {
                self.valid = false;
            }
        }
    }

    /// Attempts to commit: if the set is still valid, all exclusive entries
    /// are written to memory atomically and the written pairs are returned.
    /// The set is emptied either way.
    pub fn commit(&mut self, mem: &mut Memory) -> Option<Vec<(ObjId, Val)>> {
        if !self.valid {
            self.reset();
            return None;
        }
        let writes: Vec<(ObjId, Val)> = self
            .entries
            .iter()
            .filter(|(_, (_, m))| *m == TrackMode::Exclusive)
            .map(|(o, (v, _))| (*o, v.clone()))
            .collect();
        for (o, v) in &writes {
            mem.cells.insert(*o, v.clone());
        }
        self.reset();
        Some(writes)
    }
}

/// One shared-memory event as recorded in an execution.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub enum EventKind {
    /// A primitive applied directly to main memory.
    Direct {
        obj: ObjId,
        prim: Prim,
        ret: Val,
        nontrivial: bool,
    },
    /// A primitive applied to the process's tracking set. `ret` of `None`
    /// is bottom (the access aborted the cached transaction).
    Cached {
        obj: ObjId,
        prim: Prim,
        ret: Option<Val>,
    },
    /// An attempt to commit the tracking set. On success all exclusive
    /// entries hit memory in this single event.
    CacheCommit { writes: Vec<(ObjId, Val)>, ok: bool },
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub struct Event {
    pub proc: ProcId,
    pub txn: Option<TxnId>,
    pub kind: EventKind,
}

impl Event {
    pub fn is_cached(&self) -> bool {
        matches!(self.kind, EventKind::Cached { .. })
    }

    /// Base objects this event touches in main memory. Cached events touch
    /// none; a cache commit touches everything it writes.
    pub fn memory_objs(&self) -> Vec<ObjId> {
        match &self.kind {
            EventKind::Direct { obj, .. } => alloc::vec![*obj],
            EventKind::Cached { .. } => Vec::new(),
            EventKind::CacheCommit { writes, ok } => {
                if *ok {
                    writes.iter().map(|(o, _)| *o).collect()
                } else {
                    Vec::new()
                }
            }
        }
    }

    /// Whether the event applies a nontrivial primitive to `obj` in memory.
    pub fn nontrivial_on(&self, obj: ObjId) -> bool {
        match &self.kind {
            EventKind::Direct {
                obj: o, nontrivial, ..
            } => *o == obj && *nontrivial,
            EventKind::Cached { .. } => false,
            EventKind::CacheCommit { writes, ok } => *ok && writes.iter().any(|(o, _)| *o == obj),
        }
    }
}

/// An execution: the chronological log of shared-memory events.
pub type Execution = Vec<Event>;

/// Main memory plus every process's tracking set.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct World {
    pub mem: Memory,
    tsets: BTreeMap<ProcId, TrackingSet>,
}

impl World {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_tracking(mut self, proc: ProcId, cap: usize) -> Self {
        self.tsets.insert(proc, TrackingSet::new(cap));
        self
    }

    pub fn tracking(&self, proc: ProcId) -> Option<&TrackingSet> {
        self.tsets.get(&proc)
    }

    pub fn reset_tracking(&mut self, proc: ProcId) {
        if let Some(ts) = self.tsets.get_mut(&proc) {
            ts.clear();
        }
    }

    /// Applies a primitive directly to memory on behalf of `proc`,
    /// invalidating other processes' tracking sets as appropriate.
    pub fn direct(&mut self, proc: ProcId, txn: Option<TxnId>, obj: ObjId, prim: Prim) -> Event {
        let (ret, nontrivial) = self.mem.apply(obj, &prim);
        for (p, ts) in self.tsets.iter_mut() {
            if *p != proc {
                ts.foreign_event(obj, nontrivial);
            }
        }
        Event {
            proc,
            txn,
            kind: EventKind::Direct {
                obj,
                prim,
                ret,
                nontrivial,
            },
        }
    }

    /// Applies a cached primitive via `proc`'s tracking set. Cached events
    /// never invalidate anyone else.
    pub fn cached(&mut self, proc: ProcId, txn: Option<TxnId>, obj: ObjId, prim: Prim) -> Event {
        let ts = self
            .tsets
            .get_mut(&proc)
            .expect("cached access without a tracking set");
        let ret = ts.cached(&self.mem, obj, &prim);
        Event {
            proc,
            txn,
            kind: EventKind::Cached { obj, prim, ret },
        }
    }

    /// Commits `proc`'s tracking set as one atomic event.
    pub fn cache_commit(&mut self, proc: ProcId, txn: Option<TxnId>) -> Event {
        let ts = self
            .tsets
            .get_mut(&proc)
            .expect("cache commit without a tracking set");
        let committed = ts.commit(&mut self.mem);
        let (writes, ok) = match committed {
            Some(w) => (w, true),
            None => (Vec::new(), false),
        };
        if ok {
            for (p, other) in self.tsets.iter_mut() {
                if *p != proc {
                    for (o, _) in &writes {
                        other.foreign_event(*o, true);
                    }
                }
            }
        }
        Event {
            proc,
            txn,
            kind: EventKind::CacheCommit { writes, ok },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w() -> World {
        let mut w = World::new();
        w.mem.init(ObjId(0), Val::int(0));
        w.mem.init(ObjId(1), Val::int(5));
        w
    }

    #[test]
    fn prim_semantics() {
        let mut m = w().mem;
        assert_eq!(m.apply(ObjId(1), &Prim::Read), (Val::int(5), false));
        assert_eq!(
            m.apply(ObjId(1), &Prim::Write(Val::int(9))),
            (Val::nil(), true)
        );
        let fail = Prim::Cas {
            expect: Val::int(5),
            new: Val::int(0),
        };
        assert_eq!(m.apply(ObjId(1), &fail), (Val::int(0), false));
        let ok = Prim::Cas {
            expect: Val::int(9),
            new: Val::int(2),
        };
        assert_eq!(m.apply(ObjId(1), &ok), (Val::int(1), true));
        assert_eq!(m.apply(ObjId(1), &Prim::Fadd(3)), (Val::int(2), true));
        assert_eq!(m.get(ObjId(1)), &Val::int(5));
    }

    #[test]
    #[should_panic(expected = "fadd on non-integer")]
    fn fadd_faults_on_tuple() {
        let mut m = Memory::new();
        m.init(ObjId(0), Val::pair(1, 2));
        m.apply(ObjId(0), &Prim::Fadd(1));
    }

    #[test]
    fn capacity_fires_exactly_at_the_bound() {
        let mut mem = Memory::new();
        for i in 0..4 {
            mem.init(ObjId(i), Val::int(0));
        }
        let mut ts = TrackingSet::new(3);
        for i in 0..3 {
            assert!(ts.cached(&mem, ObjId(i), &Prim::Read).is_some());
        }
        assert_eq!(ts.len(), 3);
        // already-tracked objects never capacity-abort
        assert!(ts.cached(&mem, ObjId(2), &Prim::Read).is_some());
        // first untracked object past the bound does
        assert!(ts.cached(&mem, ObjId(3), &Prim::Read).is_none());
        assert!(ts.is_empty());
    }

    #[test]
    fn invalidation_rules() {
        let mem = w().mem;
        let mut ts = TrackingSet::new(8);
        ts.cached(&mem, ObjId(0), &Prim::Read).unwrap();
        // foreign trivial event does not disturb a shared entry
        ts.foreign_event(ObjId(0), false);
        let mut m2 = mem.clone();
        assert!(ts.commit(&mut m2).is_some());

        let mut ts = TrackingSet::new(8);
        ts.cached(&mem, ObjId(0), &Prim::Read).unwrap();
        ts.foreign_event(ObjId(0), true);
        assert!(ts.cached(&mem, ObjId(0), &Prim::Read).is_none());

        let mut ts = TrackingSet::new(8);
        ts.cached(&mem, ObjId(0), &Prim::Write(Val::int(1))).unwrap();
        // any foreign event kills an exclusive entry
        ts.foreign_event(ObjId(0), false);
        let mut m2 = mem.clone();
        assert!(ts.commit(&mut m2).is_none());
        assert_eq!(m2.get(ObjId(0)), &Val::int(0));
    }

    #[test]
    fn commit_writes_exclusive_entries_atomically() {
        let mut world = w().with_tracking(ProcId(1), 8);
        world.cached(ProcId(1), None, ObjId(0), Prim::Read);
        world.cached(ProcId(1), None, ObjId(1), Prim::Write(Val::int(7)));
        let ev = world.cache_commit(ProcId(1), None);
        match ev.kind {
            EventKind::CacheCommit { writes, ok } => {
                assert!(ok);
                assert_eq!(writes, alloc::vec![(ObjId(1), Val::int(7))]);
            }
            _ => unreachable!(),
        }
        assert_eq!(world.mem.get(ObjId(1)), &Val::int(7));
    }

    #[test]
    fn own_direct_event_spares_own_tracking_set() {
        let mut world = w().with_tracking(ProcId(1), 8).with_tracking(ProcId(2), 8);
        world.cached(ProcId(1), None, ObjId(0), Prim::Read);
        world.cached(ProcId(2), None, ObjId(0), Prim::Read);
        world.direct(ProcId(1), None, ObjId(0), Prim::Write(Val::int(3)));
        // p2's shared entry was invalidated by the foreign write, p1 is not
        // its own foreigner
        let ev = world.cache_commit(ProcId(2), None);
        assert!(matches!(ev.kind, EventKind::CacheCommit { ok: false, .. }));
        let ev = world.cache_commit(ProcId(1), None);
        assert!(matches!(ev.kind, EventKind::CacheCommit { ok: true, .. }));
    }
}
