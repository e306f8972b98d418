//! Complexity accounting over base-event traces: write-after-read
//! patterns, atomic read-modify-writes, memory stalls, and remote memory
//! references under two classic cache models.
//!
//! All counters work on plain event sequences. Cached accesses (the
//! tracking-set fast path) never reach memory and are skipped by the
//! stall and RMR models; the metadata counter is the one place where they
//! count, since there the question is which locations an access pattern
//! touches at all.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use crate::substrate::{Event, EventKind, Execution, Prim};
use crate::value::{ObjId, ProcId, TxnId};

/// One event as the pattern counters see it.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct PatEv {
    pub obj: ObjId,
    /// Updates memory (write, fetch-add, successful cas).
    pub nontrivial: bool,
    /// A plain read.
    pub is_read: bool,
}

pub fn pat(obj: ObjId, write: bool) -> PatEv {
    PatEv {
        obj,
        nontrivial: write,
        is_read: !write,
    }
}

fn pattern_of(events: &[Event]) -> Vec<PatEv> {
    let mut out = Vec::new();
    for e in events {
        if let EventKind::Direct {
            obj,
            prim,
            nontrivial,
            ..
        } = &e.kind
        {
            out.push(PatEv {
                obj: *obj,
                nontrivial: *nontrivial,
                is_read: matches!(prim, Prim::Read),
            });
        }
    }
    out
}

/// A write-after-read pair is a nontrivial event on some `b` followed by a
/// read of a different object, with no intervening event on `b` in
/// between. Counts the maximum number of non-overlapping pairs (the read
/// of one strictly precedes the write of the next) with a left-to-right
/// scan: take the earliest write, close it at the earliest legal read,
/// resume after that read. Exchanging any optimal solution's first pair
/// for the scan's first pair never loses a pair, so the scan is exact;
/// `max_raws_brute` reproves that on demand.
pub fn count_raws(trace: &[PatEv]) -> usize {
    let mut count = 0;
    let mut i = 0;
    while i < trace.len() {
        if trace[i].nontrivial {
            let b = trace[i].obj;
            let mut j = i + 1;
            let mut matched = None;
            while j < trace.len() {
                if trace[j].obj == b {
                    break;
                }
                if trace[j].is_read {
                    matched = Some(j);
                    break;
                }
                j += 1;
            }
            if let Some(j) = matched {
                count += 1;
                i = j + 1;
                continue;
            }
        }
        i += 1;
    }
    count
}

/// Exhaustive maximum over all non-overlapping pair selections.
pub fn max_raws_brute(trace: &[PatEv]) -> usize {
    let n = trace.len();
    // pairs[i] = reads that close a pattern opened at i
    let mut pairs: Vec<Vec<usize>> = alloc::vec![Vec::new(); n];
    for i in 0..n {
        if !trace[i].nontrivial {
            continue;
        }
        let b = trace[i].obj;
        for j in i + 1..n {
            if trace[j].obj == b {
                break;
            }
            if trace[j].is_read {
                pairs[i].push(j);
            }
        }
    }
    let mut best = alloc::vec![0usize; n + 1];
    for i in (0..n).rev() {
        best[i] = best[i + 1];
        for &j in &pairs[i] {
            best[i] = best[i].max(1 + best[j + 1]);
        }
    }
    best[0]
}

pub fn count_raws_events(events: &[Event]) -> usize {
    count_raws(&pattern_of(events))
}

/// Streaming form of [`count_raws`] for state-graph searches: feeds a log
/// suffix into a scanner `(open objects, saturating count)`. The open set
/// holds every object whose most recent event was nontrivial since the
/// last counted pattern; a read of anything else closes one pattern and
/// resets the set, exactly like the batch scan's resume-after-the-read.
/// The count saturates at 5, all a ≤4 bound ever needs, which keeps the
/// scanner's state space finite.
pub fn raw_fold_absorb(slot: &mut (BTreeSet<ObjId>, u8), log: &[crate::machine::LogEntry]) {
    for entry in log {
        let ev = match entry {
            crate::machine::LogEntry::Base(ev) => ev,
            _ => continue,
        };
        let (obj, prim, nontrivial) = match &ev.kind {
            EventKind::Direct {
                obj,
                prim,
                nontrivial,
                ..
            } => (obj, prim, nontrivial),
            _ => continue,
        };
        if matches!(prim, Prim::Read) {
            if slot.0.iter().any(|b| b != obj) {
                slot.1 = (slot.1 + 1).min(5);
                slot.0.clear();
            } else {
                slot.0.remove(obj);
            }
        } else if *nontrivial {
            slot.0.insert(*obj);
        } else {
            // a failed cas still breaks any pattern open on its object
            slot.0.remove(obj);
        }
    }
}

pub fn max_raws_brute_events(events: &[Event]) -> usize {
    max_raws_brute(&pattern_of(events))
}

/// Atomic read-modify-writes: direct events that both return a value and
/// update memory. Fetch-add always does; cas only when it succeeds.
pub fn count_awars(events: &[Event]) -> usize {
    events
        .iter()
        .filter(|e| {
            matches!(
                &e.kind,
                EventKind::Direct {
                    prim: Prim::Cas { .. } | Prim::Fadd(_),
                    nontrivial: true,
                    ..
                }
            )
        })
        .count()
}

/// Memory stalls incurred by `txn` in an interleaved execution: an event
/// on `b` pays one stall per event in the maximal run of nontrivial
/// events on `b` immediately before it, by pairwise distinct processes
/// other than the victim's. Any other event, or a repeated process,
/// breaks the run.
pub fn count_stalls(execution: &Execution, txn: TxnId) -> usize {
    let mut total = 0;
    for (i, e) in execution.iter().enumerate() {
        if e.txn != Some(txn) {
            continue;
        }
        let (obj, p) = match &e.kind {
            EventKind::Direct { obj, .. } => (*obj, e.proc),
            _ => continue,
        };
        let mut seen: BTreeSet<ProcId> = BTreeSet::new();
        for prev in execution[..i].iter().rev() {
            match &prev.kind {
                EventKind::Direct {
                    obj: ob,
                    nontrivial: true,
                    ..
                } if *ob == obj && prev.proc != p && !seen.contains(&prev.proc) => {
                    seen.insert(prev.proc);
                }
                _ => break,
            }
        }
        total += seen.len();
    }
    total
}

/// Remote memory references in the write-through cache-coherent model.
/// A read is local only on a valid cached copy from an earlier read; any
/// update goes to memory and invalidates every copy of the object,
/// including the updater's own.
pub fn rmrs_cc_wt(execution: &Execution) -> BTreeMap<ProcId, usize> {
    let mut cached: BTreeSet<(ProcId, ObjId)> = BTreeSet::new();
    let mut out: BTreeMap<ProcId, usize> = BTreeMap::new();
    for e in execution {
        let (obj, is_read) = match &e.kind {
            EventKind::Direct { obj, prim, .. } => (*obj, matches!(prim, Prim::Read)),
            _ => continue,
        };
        if is_read {
            if cached.contains(&(e.proc, obj)) {
                continue;
            }
            *out.entry(e.proc).or_insert(0) += 1;
            cached.insert((e.proc, obj));
        } else {
            *out.entry(e.proc).or_insert(0) += 1;
            cached.retain(|(_, b)| *b != obj);
        }
    }
    out
}

/// Remote memory references in the distributed shared-memory model: every
/// event on an object the process does not own is remote. Panics if an
/// accessed object has no owner assigned.
pub fn rmrs_dsm(execution: &Execution, owner: &BTreeMap<ObjId, ProcId>) -> BTreeMap<ProcId, usize> {
    let mut out: BTreeMap<ProcId, usize> = BTreeMap::new();
    for e in execution {
        let obj = match &e.kind {
            EventKind::Direct { obj, .. } => *obj,
            _ => continue,
        };
        let own = owner
            .get(&obj)
            .unwrap_or_else(|| panic!("no owner assigned for {obj:?}"));
        if *own != e.proc {
            *out.entry(e.proc).or_insert(0) += 1;
        }
    }
    out
}

/// Distinct base objects accessed by `txn`, restricted by a predicate.
/// Cached accesses count: the question here is footprint, not cost.
pub fn distinct_accessed(
    execution: &Execution,
    txn: TxnId,
    mut keep: impl FnMut(ObjId) -> bool,
) -> BTreeSet<ObjId> {
    let mut out = BTreeSet::new();
    for e in execution {
        if e.txn != Some(txn) {
            continue;
        }
        let touched: Vec<ObjId> = match &e.kind {
            EventKind::Direct { obj, .. } | EventKind::Cached { obj, .. } => alloc::vec![*obj],
            EventKind::CacheCommit { writes, ok } => {
                if *ok {
                    writes.iter().map(|(o, _)| *o).collect()
                } else {
                    Vec::new()
                }
            }
        };
        for obj in touched {
            if keep(obj) {
                out.insert(obj);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(i: u32) -> ObjId {
        ObjId(i)
    }

    #[test]
    fn raw_needs_a_different_object_and_an_open_window() {
        // w(0) r(1): one pattern
        assert_eq!(count_raws(&[pat(b(0), true), pat(b(1), false)]), 1);
        // w(0) r(0): same object, none
        assert_eq!(count_raws(&[pat(b(0), true), pat(b(0), false)]), 0);
        // w(0) w(0) r(1): window of the first is closed by the second
        assert_eq!(
            count_raws(&[pat(b(0), true), pat(b(0), true), pat(b(1), false)]),
            1
        );
        // w(0) r(1) w(2) r(3): two disjoint patterns
        assert_eq!(
            count_raws(&[
                pat(b(0), true),
                pat(b(1), false),
                pat(b(2), true),
                pat(b(3), false)
            ]),
            2
        );
        // w(0) w(1) r(2): overlapping, only one counts
        assert_eq!(
            count_raws(&[pat(b(0), true), pat(b(1), true), pat(b(2), false)]),
            1
        );
    }

    #[test]
    fn greedy_matches_brute_force_on_small_traces() {
        // exhaustive over all traces of length 6 with 2 objects
        let n = 6;
        let mut trace = Vec::new();
        fn go(trace: &mut Vec<PatEv>, n: usize) {
            if trace.len() == n {
                assert_eq!(
                    count_raws(trace),
                    max_raws_brute(trace),
                    "trace {trace:?}"
                );
                return;
            }
            for obj in 0..2u32 {
                for write in [false, true] {
                    trace.push(pat(ObjId(obj), write));
                    go(trace, n);
                    trace.pop();
                }
            }
        }
        go(&mut trace, n);
    }

    #[test]
    fn stall_runs_require_distinct_other_processes() {
        use crate::substrate::{Memory, World};
        use crate::value::Val;
        let mut w = World::new();
        w.mem.init(b(0), Val::int(0));
        let mut ex = Vec::new();
        // p2 and p3 write b0, then p1 reads it: 2 stalls
        ex.push(w.direct(ProcId(2), Some(TxnId(2)), b(0), Prim::Write(Val::int(1))));
        ex.push(w.direct(ProcId(3), Some(TxnId(3)), b(0), Prim::Write(Val::int(2))));
        ex.push(w.direct(ProcId(1), Some(TxnId(1)), b(0), Prim::Read));
        assert_eq!(count_stalls(&ex, TxnId(1)), 2);

        // repeated process does not extend the run
        let mut w = World::new();
        w.mem.init(b(0), Val::int(0));
        let mut ex = Vec::new();
        ex.push(w.direct(ProcId(2), Some(TxnId(2)), b(0), Prim::Write(Val::int(1))));
        ex.push(w.direct(ProcId(2), Some(TxnId(2)), b(0), Prim::Write(Val::int(2))));
        ex.push(w.direct(ProcId(1), Some(TxnId(1)), b(0), Prim::Read));
        assert_eq!(count_stalls(&ex, TxnId(1)), 1);
        let _ = Memory::default();
    }

    #[test]
    fn write_through_invalidates_the_writers_own_copy() {
        use crate::substrate::World;
        use crate::value::Val;
        let mut w = World::new();
        w.mem.init(b(0), Val::int(0));
        let p = ProcId(1);
        let mut ex = Vec::new();
        ex.push(w.direct(p, None, b(0), Prim::Read)); // remote, caches
        ex.push(w.direct(p, None, b(0), Prim::Read)); // local
        ex.push(w.direct(p, None, b(0), Prim::Write(Val::int(1)))); // remote, kills own copy
        ex.push(w.direct(p, None, b(0), Prim::Read)); // remote again
        let rmrs = rmrs_cc_wt(&ex);
        assert_eq!(rmrs.get(&p), Some(&3));
    }
}
