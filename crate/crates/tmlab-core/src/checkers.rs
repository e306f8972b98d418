//! Safety checkers for transactional histories.
//!
//! All four properties quantify over completions of the input history and
//! over t-sequential permutations of its transactions. The search places
//! one transaction at a time in ascending id order, pruning on real-time
//! edges and on read legality as soon as a transaction is placed, so the
//! returned witness is the lexicographically least serialization and two
//! runs on the same history are byte-identical.
//!
//! Legality is deferred-update throughout: a read sees the transaction's
//! own latest write, else the latest write of a *committed* transaction
//! placed earlier, else the initial value. The deferred-update variants
//! additionally require every checked read to be legal in its local
//! serialization: the prefix of the candidate up to the read with all
//! transactions removed that had not yet invoked tryC when the read
//! responded in the original history.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use crate::history::{History, TxnOp, TxnStatus};
use crate::value::{TObj, TxnId, Val};

/// Beyond this many transactions the factorial search is refused.
pub const MAX_TXNS: usize = 8;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CheckErr {
    /// The permutation search is capped at [`MAX_TXNS`] transactions.
    TooManyTxns(usize),
    Malformed(String),
}

impl core::fmt::Display for CheckErr {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            CheckErr::TooManyTxns(n) => {
                write!(f, "refusing to check {n} transactions (cap {MAX_TXNS})")
            }
            CheckErr::Malformed(s) => write!(f, "ill-formed history: {s}"),
        }
    }
}

/// Which property to check.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum CheckMode {
    FinalStateOpacity,
    Opacity,
    DuOpacity,
    StrictSer,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Verdict {
    pub holds: bool,
    /// Serialization witness over the checked transactions, present iff
    /// the property holds (for opacity: the witness of the full history).
    pub witness: Option<Vec<TxnId>>,
    /// The completion the witness was found in.
    pub completion: Option<History>,
    /// Human-readable failure note.
    pub detail: Option<String>,
}

impl Verdict {
    fn no(detail: String) -> Self {
        Verdict {
            holds: false,
            witness: None,
            completion: None,
            detail: Some(detail),
        }
    }
}

struct TxnView {
    id: TxnId,
    ops: Vec<TxnOp>,
    committed: bool,
    final_writes: BTreeMap<TObj, Val>,
}

impl TxnView {
    fn of(h: &History, id: TxnId) -> Self {
        let ops = h.txn_ops(id);
        let committed = h.status(id) == TxnStatus::Committed;
        let mut final_writes = BTreeMap::new();
        for op in &ops {
            if let TxnOp::Write(x, v) = op {
                final_writes.insert(*x, v.clone());
            }
        }
        TxnView {
            id,
            ops,
            committed,
            final_writes,
        }
    }
}

struct Search<'a> {
    views: Vec<TxnView>,
    /// rt_preds[i] = bitmask of views that must precede view i
    rt_preds: Vec<u64>,
    /// writers still allowed in the local serialization of read (k, X)
    allowed: &'a BTreeMap<(TxnId, TObj), BTreeSet<TxnId>>,
    init: &'a History,
    local_legality: bool,
}

impl<'a> Search<'a> {
    /// Is `t` legal when appended after `placed`?
    fn txn_legal(
        &self,
        t: &TxnView,
        placed: &[usize],
        committed_vals: &BTreeMap<TObj, Val>,
    ) -> bool {
        let mut own: BTreeMap<TObj, &Val> = BTreeMap::new();
        for op in &t.ops {
            match op {
                TxnOp::Read(_, None) => {}
                TxnOp::Read(x, Some(v)) => {
                    let global = own
                        .get(x)
                        .copied()
                        .cloned()
                        .or_else(|| committed_vals.get(x).cloned())
                        .unwrap_or_else(|| self.init.init_of(*x));
                    if global != *v {
                        return false;
                    }
                    if self.local_legality && !own.contains_key(x) {
                        let allowed = self.allowed.get(&(t.id, *x));
                        let mut local: Option<&Val> = None;
                        for &pi in placed.iter().rev() {
                            let m = &self.views[pi];
                            if !m.committed {
                                continue;
                            }
                            if let Some(w) = m.final_writes.get(x) {
                                if allowed.is_some_and(|a| a.contains(&m.id)) {
                                    local = Some(w);
                                }
                                // a removed or disallowed writer does not
                                // shadow earlier allowed ones, keep scanning
                                if local.is_some() {
                                    break;
                                }
                            }
                        }
                        let local = local.cloned().unwrap_or_else(|| self.init.init_of(*x));
                        if local != *v {
                            return false;
                        }
                    }
                }
                TxnOp::Write(x, v) => {
                    own.insert(*x, v);
                }
                TxnOp::TryC(_) => {}
            }
        }
        true
    }

    fn dfs(
        &self,
        placed: &mut Vec<usize>,
        placed_mask: u64,
        committed_vals: &BTreeMap<TObj, Val>,
    ) -> bool {
        if placed.len() == self.views.len() {
            return true;
        }
        for i in 0..self.views.len() {
            if placed_mask & (1 << i) != 0 {
                continue;
            }
            if self.rt_preds[i] & !placed_mask != 0 {
                continue;
            }
            let t = &self.views[i];
            if !self.txn_legal(t, placed, committed_vals) {
                continue;
            }
            placed.push(i);
            let next_vals = if t.committed && !t.final_writes.is_empty() {
                let mut cv = committed_vals.clone();
                for (x, v) in &t.final_writes {
                    cv.insert(*x, v.clone());
                }
                Some(cv)
            } else {
                None
            };
            let ok = self.dfs(placed, placed_mask | (1 << i), next_vals.as_ref().unwrap_or(committed_vals));
            if ok {
                return true;
            }
            placed.pop();
        }
        false
    }
}

/// The shared search: candidates are all transactions or only committed
/// ones, with or without the local-serialization legality condition.
fn search(h: &History, committed_only: bool, local_legality: bool) -> Result<Verdict, CheckErr> {
    if let Err(e) = h.check_well_formed() {
        return Err(CheckErr::Malformed(e));
    }
    let txns = h.txns();
    if txns.len() > MAX_TXNS {
        return Err(CheckErr::TooManyTxns(txns.len()));
    }

    // Local-serialization removal rule, computed on the original history:
    // a writer T_m stays in the local serialization of read_k(X) iff its
    // tryC invocation precedes the read's response in H.
    let mut allowed: BTreeMap<(TxnId, TObj), BTreeSet<TxnId>> = BTreeMap::new();
    if local_legality {
        for &k in &txns {
            for x in h.rset(k) {
                if let Some(ri) = h.read_res_index(k, x) {
                    let set = txns
                        .iter()
                        .copied()
                        .filter(|&m| m != k)
                        .filter(|&m| h.tryc_inv_index(m).is_some_and(|ti| ti < ri))
                        .collect();
                    allowed.insert((k, x), set);
                }
            }
        }
    }

    for completion in h.completions() {
        let cand: Vec<TxnId> = completion
            .txns()
            .into_iter()
            .filter(|&k| !committed_only || completion.status(k) == TxnStatus::Committed)
            .collect();
        let views: Vec<TxnView> = cand.iter().map(|&k| TxnView::of(&completion, k)).collect();
        let mut rt_preds = alloc::vec![0u64; views.len()];
        for (i, vi) in views.iter().enumerate() {
            for (j, vj) in views.iter().enumerate() {
                if i != j && completion.precedes_rt(vj.id, vi.id) {
                    rt_preds[i] |= 1 << j;
                }
            }
        }
        let s = Search {
            views,
            rt_preds,
            allowed: &allowed,
            init: h,
            local_legality,
        };
        let mut placed = Vec::new();
        if s.dfs(&mut placed, 0, &BTreeMap::new()) {
            let witness = placed.iter().map(|&i| s.views[i].id).collect();
            return Ok(Verdict {
                holds: true,
                witness: Some(witness),
                completion: Some(completion),
                detail: None,
            });
        }
    }
    Ok(Verdict::no(String::from("no legal serialization exists")))
}

/// Some completion has a legal t-sequential serialization that respects
/// real time.
pub fn final_state_opaque(h: &History) -> Result<Verdict, CheckErr> {
    search(h, false, false)
}

/// Every finite prefix is final-state opaque.
pub fn opaque(h: &History) -> Result<Verdict, CheckErr> {
    for n in 0..h.events.len() {
        let v = final_state_opaque(&h.prefix(n))?;
        if !v.holds {
            return Ok(Verdict::no(alloc::format!(
                "prefix of length {n} is not final-state opaque"
            )));
        }
    }
    final_state_opaque(h)
}

/// Final-state opacity strengthened by deferred-update legality: every
/// value-returning read must also be legal in its local serialization.
pub fn du_opaque(h: &History) -> Result<Verdict, CheckErr> {
    search(h, false, true)
}

/// The deferred-update variant of strict serializability: only committed
/// transactions are serialized, and only their reads are constrained.
pub fn strictly_serializable(h: &History) -> Result<Verdict, CheckErr> {
    search(h, true, true)
}

pub fn check(h: &History, mode: CheckMode) -> Result<Verdict, CheckErr> {
    match mode {
        CheckMode::FinalStateOpacity => final_state_opaque(h),
        CheckMode::Opacity => opaque(h),
        CheckMode::DuOpacity => du_opaque(h),
        CheckMode::StrictSer => strictly_serializable(h),
    }
}

/// Replays a verdict's witness against its completion and confirms every
/// constraint the checker claims to have established. Used as a
/// self-check in tests and by the command line tool.
pub fn verify_witness(h: &History, verdict: &Verdict, mode: CheckMode) -> bool {
    let (Some(witness), Some(completion)) = (&verdict.witness, &verdict.completion) else {
        return false;
    };
    let (committed_only, local) = match mode {
        CheckMode::FinalStateOpacity | CheckMode::Opacity => (false, false),
        CheckMode::DuOpacity => (false, true),
        CheckMode::StrictSer => (true, true),
    };
    let mut allowed: BTreeMap<(TxnId, TObj), BTreeSet<TxnId>> = BTreeMap::new();
    for &k in &h.txns() {
        for x in h.rset(k) {
            if let Some(ri) = h.read_res_index(k, x) {
                let set = h
                    .txns()
                    .into_iter()
                    .filter(|&m| m != k)
                    .filter(|&m| h.tryc_inv_index(m).is_some_and(|ti| ti < ri))
                    .collect();
                allowed.insert((k, x), set);
            }
        }
    }
    let expect: Vec<TxnId> = completion
        .txns()
        .into_iter()
        .filter(|&k| !committed_only || completion.status(k) == TxnStatus::Committed)
        .collect();
    if witness.len() != expect.len() || !expect.iter().all(|k| witness.contains(k)) {
        return false;
    }
    let views: Vec<TxnView> = witness.iter().map(|&k| TxnView::of(completion, k)).collect();
    for (i, vi) in views.iter().enumerate() {
        for vj in views.iter().skip(i + 1) {
            if completion.precedes_rt(vj.id, vi.id) {
                return false;
            }
        }
    }
    let s = Search {
        views,
        rt_preds: alloc::vec![0; witness.len()],
        allowed: &allowed,
        init: h,
        local_legality: local,
    };
    let mut committed_vals: BTreeMap<TObj, Val> = BTreeMap::new();
    let mut placed: Vec<usize> = Vec::new();
    for i in 0..s.views.len() {
        if !s.txn_legal(&s.views[i], &placed, &committed_vals) {
            return false;
        }
        if s.views[i].committed {
            for (x, v) in &s.views[i].final_writes {
                committed_vals.insert(*x, v.clone());
            }
        }
        placed.push(i);
    }
    true
}

/// A high-level set operation record for linearizability checking.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SetOpKind {
    Insert,
    Remove,
    Contains,
}

#[derive(Clone, Debug)]
pub struct SetOpRec {
    pub kind: SetOpKind,
    pub arg: i64,
    pub result: bool,
    /// (invocation, response) positions in the global order
    pub span: (usize, usize),
}

/// Linearizability of a complete history of set operations against
/// sequential set semantics, starting from `init`. Returns a witness order
/// of operation indices.
pub fn linearizable_set(init: &BTreeSet<i64>, ops: &[SetOpRec]) -> Option<Vec<usize>> {
    assert!(ops.len() <= 16, "linearizable_set is a small-history checker");
    fn go(
        init: &BTreeSet<i64>,
        ops: &[SetOpRec],
        done: u32,
        state: &BTreeSet<i64>,
        order: &mut Vec<usize>,
        seen: &mut BTreeSet<(u32, BTreeSet<i64>)>,
    ) -> bool {
        if done.count_ones() as usize == ops.len() {
            return true;
        }
        if !seen.insert((done, state.clone())) {
            return false;
        }
        for (i, op) in ops.iter().enumerate() {
            if done & (1 << i) != 0 {
                continue;
            }
            // real-time: an undone op that responded before op i invoked
            // must linearize first
            if ops
                .iter()
                .enumerate()
                .any(|(j, o)| done & (1 << j) == 0 && j != i && o.span.1 < op.span.0)
            {
                continue;
            }
            let holds = state.contains(&op.arg);
            let (ret, next): (bool, Option<bool>) = match op.kind {
                SetOpKind::Insert => (!holds, Some(true)),
                SetOpKind::Remove => (holds, Some(false)),
                SetOpKind::Contains => (holds, None),
            };
            if ret != op.result {
                continue;
            }
            let mut st = state.clone();
            if let Some(add) = next {
                // only effectful when the operation succeeded
                if op.result {
                    if add {
                        st.insert(op.arg);
                    } else {
                        st.remove(&op.arg);
                    }
                }
            }
            order.push(i);
            if go(init, ops, done | (1 << i), &st, order, seen) {
                return true;
            }
            order.pop();
        }
        false
    }
    let mut order = Vec::new();
    let mut seen = BTreeSet::new();
    if go(init, ops, 0, init, &mut order, &mut seen) {
        Some(order)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::golden;

    #[test]
    fn commit_race_is_final_state_opaque_but_not_opaque() {
        let h = golden::commit_race();
        let fs = final_state_opaque(&h).unwrap();
        assert!(fs.holds);
        assert!(verify_witness(&h, &fs, CheckMode::FinalStateOpacity));
        let p = h.prefix(4);
        assert!(!final_state_opaque(&p).unwrap().holds);
        assert!(!opaque(&h).unwrap().holds);
    }

    #[test]
    fn aborted_writer_value_is_opaque_but_not_du_opaque() {
        let h = golden::aborted_writer_value();
        assert!(opaque(&h).unwrap().holds);
        assert!(!du_opaque(&h).unwrap().holds);
    }

    #[test]
    fn incomplete_reader_is_du_opaque_with_canonical_witness() {
        let h = golden::incomplete_reader();
        let v = du_opaque(&h).unwrap();
        assert!(v.holds);
        assert_eq!(
            v.witness,
            Some(alloc::vec![TxnId(1), TxnId(3), TxnId(2)])
        );
        assert!(verify_witness(&h, &v, CheckMode::DuOpacity));
    }

    #[test]
    fn serializable_but_not_final_state_opaque() {
        let h = golden::serializable_not_opaque();
        let ss = strictly_serializable(&h).unwrap();
        assert!(ss.holds);
        assert_eq!(ss.witness, Some(alloc::vec![TxnId(3), TxnId(2)]));
        assert!(verify_witness(&h, &ss, CheckMode::StrictSer));
        assert!(!final_state_opaque(&h).unwrap().holds);
        assert!(!du_opaque(&h).unwrap().holds);
    }

    #[test]
    fn refuses_oversized_histories() {
        use crate::history::{HEvent, HEventKind};
        let mut events = Vec::new();
        for k in 1..=9u32 {
            events.push(HEvent {
                txn: TxnId(k),
                kind: HEventKind::InvTryC,
            });
            events.push(HEvent {
                txn: TxnId(k),
                kind: HEventKind::ResTryC(true),
            });
        }
        let h = History::new(events);
        assert_eq!(du_opaque(&h), Err(CheckErr::TooManyTxns(9)));
    }

    #[test]
    fn set_linearizability_small_cases() {
        let init: BTreeSet<i64> = [2, 4].into_iter().collect();
        // overlapping insert(2) false and remove(2) true: order remove
        // first and the insert must then succeed, so false fails...
        let ops = [
            SetOpRec {
                kind: SetOpKind::Insert,
                arg: 2,
                result: false,
                span: (0, 3),
            },
            SetOpRec {
                kind: SetOpKind::Remove,
                arg: 2,
                result: true,
                span: (1, 2),
            },
        ];
        // insert-before-remove explains both responses
        assert!(linearizable_set(&init, &ops).is_some());
        let ops_bad = [
            SetOpRec {
                kind: SetOpKind::Contains,
                arg: 4,
                result: false,
                span: (0, 1),
            },
            SetOpRec {
                kind: SetOpKind::Remove,
                arg: 4,
                result: true,
                span: (2, 3),
            },
        ];
        // contains(4) = false finished before remove(4) started
        assert!(linearizable_set(&init, &ops_bad).is_none());
    }
}
