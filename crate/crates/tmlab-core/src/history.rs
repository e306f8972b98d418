//! Transactional histories: sequences of t-operation invocation and
//! response events, plus the derived notions the safety checkers build on
//! (completions, real-time order, read/write sets, conflicts).
//!
//! Transaction `T0` is the initializing transaction: it is considered to
//! have committed the initial value of every t-object before the history
//! begins, and never appears in the event sequence itself.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::value::{TObj, TxnId, Val};

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub enum HEventKind {
    InvRead(TObj),
    /// `None` means the read aborted the transaction.
    ResRead(TObj, Option<Val>),
    InvWrite(TObj, Val),
    /// `false` means the write aborted the transaction.
    ResWrite(TObj, bool),
    InvTryC,
    /// `true` is commit, `false` abort.
    ResTryC(bool),
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct HEvent {
    pub txn: TxnId,
    pub kind: HEventKind,
}

impl fmt::Debug for HEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = self.txn;
        match &self.kind {
            HEventKind::InvRead(x) => write!(f, "inv {t} read {x}"),
            HEventKind::ResRead(x, Some(v)) => write!(f, "res {t} read {x} {v}"),
            HEventKind::ResRead(x, None) => write!(f, "res {t} read {x} A"),
            HEventKind::InvWrite(x, v) => write!(f, "inv {t} write {x} {v}"),
            HEventKind::ResWrite(x, true) => write!(f, "res {t} write {x} ok"),
            HEventKind::ResWrite(x, false) => write!(f, "res {t} write {x} A"),
            HEventKind::InvTryC => write!(f, "inv {t} tryC"),
            HEventKind::ResTryC(true) => write!(f, "res {t} tryC C"),
            HEventKind::ResTryC(false) => write!(f, "res {t} tryC A"),
        }
    }
}

/// Completion status of one transaction within a history.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum TxnStatus {
    Committed,
    Aborted,
    /// Every invoked operation has responded but there is no commit or
    /// abort response yet.
    Live,
    /// The last invoked operation has no response.
    Pending,
}

/// One responded t-operation, as used when replaying a transaction.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum TxnOp {
    Read(TObj, Option<Val>),
    Write(TObj, Val),
    TryC(bool),
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct History {
    /// Initial t-object values committed by `T0`. Objects absent from the
    /// map start at integer 0.
    pub init: BTreeMap<TObj, Val>,
    pub events: Vec<HEvent>,
}

impl fmt::Debug for History {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.events {
            writeln!(f, "{e:?}")?;
        }
        Ok(())
    }
}

impl History {
    pub fn new(events: Vec<HEvent>) -> Self {
        History {
            init: BTreeMap::new(),
            events,
        }
    }

    pub fn init_of(&self, x: TObj) -> Val {
        self.init.get(&x).cloned().unwrap_or_else(|| Val::int(0))
    }

    /// Transactions in id order.
    pub fn txns(&self) -> Vec<TxnId> {
        let mut s: BTreeSet<TxnId> = BTreeSet::new();
        for e in &self.events {
            s.insert(e.txn);
        }
        s.into_iter().collect()
    }

    pub fn prefix(&self, n: usize) -> History {
        History {
            init: self.init.clone(),
            events: self.events[..n].to_vec(),
        }
    }

    pub fn status(&self, k: TxnId) -> TxnStatus {
        let mut pending = false;
        let mut last = None;
        for e in self.events.iter().filter(|e| e.txn == k) {
            match &e.kind {
                HEventKind::InvRead(_) | HEventKind::InvWrite(..) | HEventKind::InvTryC => {
                    pending = true
                }
                k => {
                    pending = false;
                    last = Some(k.clone());
                }
            }
        }
        match last {
            Some(HEventKind::ResTryC(true)) => TxnStatus::Committed,
            Some(HEventKind::ResTryC(false)) => TxnStatus::Aborted,
            Some(HEventKind::ResRead(_, None)) | Some(HEventKind::ResWrite(_, false)) => {
                TxnStatus::Aborted
            }
            _ if pending => TxnStatus::Pending,
            _ => TxnStatus::Live,
        }
    }

    pub fn is_t_complete(&self, k: TxnId) -> bool {
        matches!(self.status(k), TxnStatus::Committed | TxnStatus::Aborted)
    }

    pub fn first_index(&self, k: TxnId) -> Option<usize> {
        self.events.iter().position(|e| e.txn == k)
    }

    pub fn last_index(&self, k: TxnId) -> Option<usize> {
        self.events.iter().rposition(|e| e.txn == k)
    }

    /// Strict precedence in real time: `k` is t-complete and its last event
    /// precedes the first event of `m`.
    pub fn precedes_rt(&self, k: TxnId, m: TxnId) -> bool {
        if k == m || !self.is_t_complete(k) {
            return false;
        }
        match (self.last_index(k), self.first_index(m)) {
            (Some(a), Some(b)) => a < b,
            _ => false,
        }
    }

    /// Objects read (with a value response) by `k`.
    pub fn rset(&self, k: TxnId) -> BTreeSet<TObj> {
        self.events
            .iter()
            .filter(|e| e.txn == k)
            .filter_map(|e| match &e.kind {
                HEventKind::InvRead(x) => Some(*x),
                _ => None,
            })
            .collect()
    }

    pub fn wset(&self, k: TxnId) -> BTreeSet<TObj> {
        self.events
            .iter()
            .filter(|e| e.txn == k)
            .filter_map(|e| match &e.kind {
                HEventKind::InvWrite(x, _) => Some(*x),
                _ => None,
            })
            .collect()
    }

    pub fn dset(&self, k: TxnId) -> BTreeSet<TObj> {
        let mut d = self.rset(k);
        d.extend(self.wset(k));
        d
    }

    /// Two transactions conflict when they are concurrent, their data sets
    /// intersect, and at least one of them writes a shared t-object.
    pub fn conflicts(&self, k: TxnId, m: TxnId) -> bool {
        if k == m || self.precedes_rt(k, m) || self.precedes_rt(m, k) {
            return false;
        }
        let dk = self.dset(k);
        let dm = self.dset(m);
        let wk = self.wset(k);
        let wm = self.wset(m);
        dk.intersection(&dm)
            .any(|x| wk.contains(x) || wm.contains(x))
    }

    /// The responded operations of `k`, in order.
    pub fn txn_ops(&self, k: TxnId) -> Vec<TxnOp> {
        let mut ops = Vec::new();
        for (i, e) in self.events.iter().enumerate() {
            if e.txn != k {
                continue;
            }
            match &e.kind {
                HEventKind::ResRead(x, v) => ops.push(TxnOp::Read(*x, v.clone())),
                HEventKind::ResWrite(x, ok) => {
                    // recover the written value from the matching
                    // invocation, the last one before this response
                    if *ok {
                        let v = self.events[..i]
                            .iter()
                            .filter(|e2| e2.txn == k)
                            .filter_map(|e2| match &e2.kind {
                                HEventKind::InvWrite(x2, v) if x2 == x => Some(v.clone()),
                                _ => None,
                            })
                            .last()
                            .expect("write response without invocation");
                        ops.push(TxnOp::Write(*x, v));
                    }
                }
                HEventKind::ResTryC(c) => ops.push(TxnOp::TryC(*c)),
                _ => {}
            }
        }
        ops
    }

    /// Index of the response of `read_k(X)`, for the local-serialization
    /// prefix rule. At most one read per (transaction, object) may respond.
    pub fn read_res_index(&self, k: TxnId, x: TObj) -> Option<usize> {
        self.events.iter().position(
            |e| matches!(&e.kind, HEventKind::ResRead(x2, Some(_)) if e.txn == k && *x2 == x),
        )
    }

    /// Index of the invocation of `tryC_m`, if any.
    pub fn tryc_inv_index(&self, m: TxnId) -> Option<usize> {
        self.events
            .iter()
            .position(|e| e.txn == m && e.kind == HEventKind::InvTryC)
    }

    /// Sanity checks: alternating invocation/response per transaction with
    /// matching kinds, nothing after a terminal response, and at most one
    /// read per (transaction, object).
    pub fn check_well_formed(&self) -> Result<(), String> {
        use HEventKind::*;
        let mut open: BTreeMap<TxnId, Option<HEventKind>> = BTreeMap::new();
        let mut done: BTreeSet<TxnId> = BTreeSet::new();
        let mut reads: BTreeSet<(TxnId, TObj)> = BTreeSet::new();
        for e in &self.events {
            if done.contains(&e.txn) {
                return Err(alloc::format!("{:?} after terminal response", e));
            }
            let slot = open.entry(e.txn).or_insert(None);
            match (&slot, &e.kind) {
                (None, InvRead(x)) => {
                    if !reads.insert((e.txn, *x)) {
                        return Err(alloc::format!("repeated read of {x} by {}", e.txn));
                    }
                    *slot = Some(e.kind.clone());
                }
                (None, InvWrite(..)) | (None, InvTryC) => *slot = Some(e.kind.clone()),
                (Some(InvRead(x)), ResRead(x2, v)) if x == x2 => {
                    *slot = None;
                    if v.is_none() {
                        done.insert(e.txn);
                    }
                }
                (Some(InvWrite(x, _)), ResWrite(x2, ok)) if x == x2 => {
                    *slot = None;
                    if !ok {
                        done.insert(e.txn);
                    }
                }
                (Some(InvTryC), ResTryC(_)) => {
                    *slot = None;
                    done.insert(e.txn);
                }
                _ => return Err(alloc::format!("ill-formed event {:?}", e)),
            }
        }
        Ok(())
    }

    /// All completions of this history.
    ///
    /// Incomplete reads and writes abort immediately after their
    /// invocation. An incomplete tryC resolves to a commit or an abort
    /// placed immediately after its invocation, giving two completions per
    /// such transaction (commit variant first, transactions in id order).
    /// Transactions that are live but never invoked tryC get `tryC -> A`
    /// appended at the end, in id order.
    pub fn completions(&self) -> Vec<History> {
        let txns = self.txns();
        let mut pending_tryc: Vec<TxnId> = Vec::new();
        let mut insert_after: BTreeMap<usize, HEvent> = BTreeMap::new();
        for &k in &txns {
            if self.status(k) != TxnStatus::Pending {
                continue;
            }
            // find the dangling invocation
            let (idx, kind) = self
                .events
                .iter()
                .enumerate()
                .filter(|(_, e)| e.txn == k)
                .last()
                .map(|(i, e)| (i, e.kind.clone()))
                .expect("pending txn with no events");
            match kind {
                HEventKind::InvRead(x) => {
                    insert_after.insert(
                        idx,
                        HEvent {
                            txn: k,
                            kind: HEventKind::ResRead(x, None),
                        },
                    );
                }
                HEventKind::InvWrite(x, _) => {
                    insert_after.insert(
                        idx,
                        HEvent {
                            txn: k,
                            kind: HEventKind::ResWrite(x, false),
                        },
                    );
                }
                HEventKind::InvTryC => pending_tryc.push(k),
                _ => unreachable!("pending txn must end in an invocation"),
            }
        }
        let live_tail: Vec<TxnId> = txns
            .iter()
            .copied()
            .filter(|&k| self.status(k) == TxnStatus::Live)
            .collect();

        let n = pending_tryc.len();
        let mut out = Vec::new();
        for mask in 0..(1usize << n) {
            let mut events = Vec::with_capacity(self.events.len() + 4);
            for (i, e) in self.events.iter().enumerate() {
                events.push(e.clone());
                if let Some(resp) = insert_after.get(&i) {
                    events.push(resp.clone());
                }
                if let Some(pos) = pending_tryc.iter().position(|&k| {
                    self.events[i].txn == k && self.events[i].kind == HEventKind::InvTryC
                }) {
                    // bit 0 in the mask is the commit variant, so mask 0
                    // commits everything and comes first
                    let commit = mask & (1 << pos) == 0;
                    events.push(HEvent {
                        txn: pending_tryc[pos],
                        kind: HEventKind::ResTryC(commit),
                    });
                }
            }
            for &k in &live_tail {
                events.push(HEvent {
                    txn: k,
                    kind: HEventKind::InvTryC,
                });
                events.push(HEvent {
                    txn: k,
                    kind: HEventKind::ResTryC(false),
                });
            }
            out.push(History {
                init: self.init.clone(),
                events,
            });
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(txn: u32, kind: HEventKind) -> HEvent {
        HEvent {
            txn: TxnId(txn),
            kind,
        }
    }

    use HEventKind::*;

    fn x() -> TObj {
        TObj(0)
    }

    #[test]
    fn statuses() {
        let h = History::new(alloc::vec![
            ev(1, InvWrite(x(), Val::int(1))),
            ev(1, ResWrite(x(), true)),
            ev(2, InvRead(x())),
            ev(3, InvTryC),
            ev(4, InvRead(x())),
            ev(4, ResRead(x(), Some(Val::int(0)))),
        ]);
        assert_eq!(h.status(TxnId(1)), TxnStatus::Live);
        assert_eq!(h.status(TxnId(2)), TxnStatus::Pending);
        assert_eq!(h.status(TxnId(3)), TxnStatus::Pending);
        assert_eq!(h.status(TxnId(4)), TxnStatus::Live);
        assert!(h.check_well_formed().is_ok());
    }

    #[test]
    fn one_pending_tryc_gives_exactly_two_completions() {
        let h = History::new(alloc::vec![
            ev(1, InvWrite(x(), Val::int(1))),
            ev(1, ResWrite(x(), true)),
            ev(1, InvTryC),
        ]);
        let cs = h.completions();
        assert_eq!(cs.len(), 2);
        // commit variant first, response right after the invocation
        assert_eq!(cs[0].events[3], ev(1, ResTryC(true)));
        assert_eq!(cs[1].events[3], ev(1, ResTryC(false)));
        for c in &cs {
            assert!(c.check_well_formed().is_ok());
            assert!(c.is_t_complete(TxnId(1)));
        }
    }

    #[test]
    fn live_txn_gets_aborting_tryc_appended() {
        let h = History::new(alloc::vec![
            ev(1, InvRead(x())),
            ev(1, ResRead(x(), Some(Val::int(0)))),
        ]);
        let cs = h.completions();
        assert_eq!(cs.len(), 1);
        assert_eq!(
            &cs[0].events[2..],
            &[ev(1, InvTryC), ev(1, ResTryC(false))]
        );
    }

    #[test]
    fn pending_read_aborts_in_place() {
        let h = History::new(alloc::vec![
            ev(1, InvRead(x())),
            ev(2, InvWrite(x(), Val::int(3))),
            ev(2, ResWrite(x(), true)),
        ]);
        let cs = h.completions();
        assert_eq!(cs.len(), 1);
        assert_eq!(cs[0].events[1], ev(1, ResRead(x(), None)));
        assert_eq!(cs[0].status(TxnId(1)), TxnStatus::Aborted);
        // T2 is live, so it still picks up the appended abort
        assert_eq!(cs[0].status(TxnId(2)), TxnStatus::Aborted);
    }

    #[test]
    fn real_time_and_conflicts() {
        let y = TObj(1);
        let h = History::new(alloc::vec![
            ev(1, InvWrite(x(), Val::int(1))),
            ev(1, ResWrite(x(), true)),
            ev(1, InvTryC),
            ev(1, ResTryC(true)),
            ev(2, InvRead(x())),
            ev(2, ResRead(x(), Some(Val::int(1)))),
            ev(3, InvWrite(y, Val::int(2))),
            ev(3, ResWrite(y, true)),
        ]);
        assert!(h.precedes_rt(TxnId(1), TxnId(2)));
        assert!(!h.precedes_rt(TxnId(2), TxnId(1)));
        // T2 and T3 are concurrent but touch disjoint objects
        assert!(!h.conflicts(TxnId(2), TxnId(3)));
        // T1 precedes T2 in real time, hence no conflict despite shared X
        assert!(!h.conflicts(TxnId(1), TxnId(2)));
        let h2 = History::new(alloc::vec![
            ev(1, InvWrite(x(), Val::int(1))),
            ev(1, ResWrite(x(), true)),
            ev(2, InvRead(x())),
            ev(2, ResRead(x(), Some(Val::int(0)))),
        ]);
        assert!(h2.conflicts(TxnId(1), TxnId(2)));
        assert!(h2.conflicts(TxnId(2), TxnId(1)));
    }
}
