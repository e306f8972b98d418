//! A progressive, invisible-read TM over read-write registers.
//!
//! Per t-object `X_j` the implementation keeps a register `v_j` holding the
//! value together with the id of the committing writer, a lock bit `L_j`,
//! and one single-writer announcement bit `r_ij` per process. Reads are
//! invisible: a t-read touches `v_j`, checks `L_j`, and (in the full
//! variant) revalidates every previously read entry, aborting on any
//! change or held lock. Writes are buffered. tryC announces the write set
//! in the `r` bits, scans for concurrent announcements, takes the `L`
//! locks, rechecks the read set, applies the writes and releases. The
//! announcement scan is what makes two conflicting committers see each
//! other: whoever writes its bits second reads the other's bit and backs
//! off, so a transaction aborts only when a concurrent conflicting one is
//! in flight.
//!
//! The relaxed variant drops the per-read revalidation (a read is just
//! `v_j` plus the lock check) and instead rechecks the read set once at
//! commit time, even when the write set is empty. That gives constant-cost
//! reads and linear commits: enough for serializability of committed
//! transactions, while opacity of in-flight reads is given up.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::history::{HEvent, HEventKind};
use crate::machine::{Machine, Poise, Sink};
use crate::substrate::{EventKind, Prim, World};
use crate::value::{ObjId, ProcId, TObj, TxnId, Val};
use crate::workload::{OpSpec, ProcSpec, TxnSpec, Workload};

/// Maps t-objects to the base objects of this implementation family.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub struct LpLayout {
    /// Number of t-objects.
    pub m: u32,
    /// Number of processes (ids 1..=n).
    pub n: u32,
}

impl LpLayout {
    pub fn of(wl: &Workload) -> Self {
        LpLayout {
            m: wl.n_objects() as u32,
            n: wl.procs.len() as u32,
        }
    }

    pub fn v(&self, x: TObj) -> ObjId {
        ObjId(x.0)
    }

    pub fn l(&self, x: TObj) -> ObjId {
        ObjId(self.m + x.0)
    }

    pub fn r(&self, p: ProcId, x: TObj) -> ObjId {
        ObjId(2 * self.m + (p.0 - 1) * self.m + x.0)
    }

    /// The t-object a base object belongs to. Total for this layout: the
    /// implementation is strictly data-partitioned.
    pub fn tobj_of(&self, b: ObjId) -> TObj {
        TObj(b.0 % self.m)
    }

    pub fn init_world(&self, wl: &Workload) -> World {
        let mut w = World::new();
        for j in 0..self.m {
            let x = TObj(j);
            w.mem.init(self.v(x), pack(&wl.init_of(x), TxnId::INIT));
            w.mem.init(self.l(x), Val::int(0));
        }
        for p in 1..=self.n {
            for j in 0..self.m {
                w.mem.init(self.r(ProcId(p), TObj(j)), Val::int(0));
            }
        }
        w
    }
}

/// `v_j` holds the written value's fields with the writer id appended.
pub fn pack(val: &Val, writer: TxnId) -> Val {
    let mut fields = val.0.clone();
    fields.push(writer.0 as i64);
    Val(fields)
}

pub fn unpack(stored: &Val) -> (Val, TxnId) {
    let mut fields = stored.0.clone();
    let writer = fields.pop().expect("packed value must carry a writer id") as u32;
    (Val(fields), TxnId(writer))
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub enum LpVariant {
    /// Per-read revalidation: opaque under deferred-update reads.
    Full,
    /// Commit-time validation only: strictly serializable.
    Relaxed,
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug)]
enum Ph {
    /// About to invoke operation `o` of the current transaction.
    AtOp,
    /// Buffer the write and respond, one local move.
    WLocal,
    /// read v_x
    ReadV,
    /// read L_x, aborting on a held lock
    ReadL { obs: Val },
    /// Revalidate prior read-set entries: entry `idx`, lock bit first.
    ReadChk { obs: Val, idx: usize, lock: bool },
    /// Respond to the read; `obs` present on a first read records it.
    ReadRes { obs: Option<Val>, val: Val },
    /// tryC: announce write set, bit `j`.
    AcqR { j: usize },
    /// Scan other processes' announcement bits: write-set entry `j`,
    /// other-process index `t`.
    Scan { j: usize, t: usize },
    /// Concurrent announcement seen: withdraw own bits, then abort.
    ResetR { j: usize },
    LockL { j: usize },
    /// Lock checks over read set minus write set.
    ChkL { j: usize },
    /// Value validation over the full read set.
    ChkV { j: usize },
    WriteV { j: usize },
    RelL { j: usize, abort: bool },
    RelR { j: usize, abort: bool },
    Commit,
    AbortRead,
    AbortTryC,
    Finished,
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub struct LpProc {
    layout: LpLayout,
    variant: LpVariant,
    proc: ProcId,
    txns: Vec<TxnSpec>,
    t: usize,
    o: usize,
    ph: Ph,
    /// Observed packed `v_j` content per read t-object.
    rset: BTreeMap<TObj, Val>,
    wset: BTreeMap<TObj, Val>,
}

impl LpProc {
    pub fn new(layout: LpLayout, variant: LpVariant, spec: &ProcSpec) -> Self {
        let ph = if spec.txns.is_empty() {
            Ph::Finished
        } else {
            Ph::AtOp
        };
        LpProc {
            layout,
            variant,
            proc: spec.id,
            txns: spec.txns.clone(),
            t: 0,
            o: 0,
            ph,
            rset: BTreeMap::new(),
            wset: BTreeMap::new(),
        }
    }

    /// A single transaction grown one operation at a time by an outer
    /// driver (used when the program is data-dependent, e.g. a list
    /// traversal). The machine parks at the op boundary whenever it runs
    /// out of pushed operations; the driver must not step it there.
    pub fn dynamic(layout: LpLayout, variant: LpVariant, proc: ProcId, tid: TxnId) -> Self {
        LpProc {
            layout,
            variant,
            proc,
            txns: vec![TxnSpec {
                id: tid,
                ops: Vec::new(),
            }],
            t: 0,
            o: 0,
            ph: Ph::AtOp,
            rset: BTreeMap::new(),
            wset: BTreeMap::new(),
        }
    }

    /// True at the op boundary with no operation pushed yet.
    pub fn awaiting_op(&self) -> bool {
        self.ph == Ph::AtOp && self.t < self.txns.len() && self.o >= self.txn().ops.len()
    }

    pub fn push_op(&mut self, op: OpSpec) {
        let t = self.t.min(self.txns.len() - 1);
        self.txns[t].ops.push(op);
    }

    /// Poised to fetch a first read's value word from memory.
    pub fn at_value_read(&self) -> bool {
        self.ph == Ph::ReadV
    }

    /// Poised to buffer a write locally.
    pub fn at_write_buffer(&self) -> bool {
        self.ph == Ph::WLocal
    }

    /// The locally buffered write to `x`, if any.
    pub fn buffered_write(&self, x: TObj) -> Option<&Val> {
        self.wset.get(&x)
    }

    fn txn(&self) -> &TxnSpec {
        &self.txns[self.t]
    }

    fn op(&self) -> &OpSpec {
        &self.txn().ops[self.o]
    }

    fn tid(&self) -> TxnId {
        self.txn().id
    }

    fn read_target(&self) -> TObj {
        match self.op() {
            OpSpec::Read(x) => *x,
            _ => unreachable!("not at a read"),
        }
    }

    fn wlist(&self) -> Vec<TObj> {
        self.wset.keys().copied().collect()
    }

    fn chk_l_list(&self) -> Vec<TObj> {
        self.rset
            .keys()
            .copied()
            .filter(|x| !self.wset.contains_key(x))
            .collect()
    }

    fn rlist(&self) -> Vec<TObj> {
        self.rset.keys().copied().collect()
    }

    fn others(&self) -> Vec<ProcId> {
        (1..=self.layout.n)
            .map(ProcId)
            .filter(|p| *p != self.proc)
            .collect()
    }

    fn next_op(&mut self) {
        self.o += 1;
        self.ph = Ph::AtOp;
    }

    fn next_txn(&mut self) {
        self.rset.clear();
        self.wset.clear();
        self.t += 1;
        self.o = 0;
        self.ph = if self.t >= self.txns.len() {
            Ph::Finished
        } else {
            Ph::AtOp
        };
    }

    fn read(&mut self, world: &mut World, sink: &mut Sink, obj: ObjId) -> Val {
        let ev = world.direct(self.proc, Some(self.tid()), obj, Prim::Read);
        let ret = match &ev.kind {
            EventKind::Direct { ret, .. } => ret.clone(),
            _ => unreachable!(),
        };
        sink.base(ev);
        ret
    }

    fn write(&mut self, world: &mut World, sink: &mut Sink, obj: ObjId, v: Val) {
        let ev = world.direct(self.proc, Some(self.tid()), obj, Prim::Write(v));
        sink.base(ev);
    }

    fn hist(&self, sink: &mut Sink, kind: HEventKind) {
        sink.hist(HEvent {
            txn: self.tid(),
            kind,
        });
    }

    /// Validation or lock-check failure inside tryC.
    fn tryc_fail(&mut self) {
        self.ph = if self.wset.is_empty() {
            Ph::AbortTryC
        } else {
            Ph::RelL { j: 0, abort: true }
        };
    }
}

impl Machine for LpProc {
    fn proc(&self) -> ProcId {
        self.proc
    }

    fn done(&self) -> bool {
        self.ph == Ph::Finished
    }

    fn at_boundary(&self) -> bool {
        self.done() || (self.ph == Ph::AtOp && self.o == 0)
    }

    fn poised(&self, _world: &World) -> Poise {
        match self.ph {
            Ph::Finished => Poise::Done,
            Ph::AtOp => Poise::LocalPre,
            Ph::WLocal
            | Ph::ReadRes { .. }
            | Ph::Commit
            | Ph::AbortRead
            | Ph::AbortTryC => Poise::LocalPost,
            _ => Poise::Shared,
        }
    }

    fn micro(&mut self, world: &mut World, sink: &mut Sink) {
        let lay = self.layout;
        match self.ph.clone() {
            Ph::Finished => {}

            Ph::AtOp => match self.op().clone() {
                OpSpec::Read(x) => {
                    self.hist(sink, HEventKind::InvRead(x));
                    self.ph = if let Some(v) = self.wset.get(&x) {
                        // read own buffered write
                        Ph::ReadRes {
                            obs: None,
                            val: v.clone(),
                        }
                    } else if let Some(rec) = self.rset.get(&x) {
                        Ph::ReadRes {
                            obs: None,
                            val: unpack(rec).0,
                        }
                    } else {
                        Ph::ReadV
                    };
                }
                OpSpec::Write(x, v) => {
                    self.hist(sink, HEventKind::InvWrite(x, v));
                    self.ph = Ph::WLocal;
                }
                OpSpec::TryC => {
                    self.hist(sink, HEventKind::InvTryC);
                    self.ph = if self.wset.is_empty() {
                        match self.variant {
                            LpVariant::Full => Ph::Commit,
                            LpVariant::Relaxed => {
                                if self.rset.is_empty() {
                                    Ph::Commit
                                } else {
                                    Ph::ChkL { j: 0 }
                                }
                            }
                        }
                    } else {
                        Ph::AcqR { j: 0 }
                    };
                }
            },

            Ph::WLocal => {
                let (x, v) = match self.op() {
                    OpSpec::Write(x, v) => (*x, v.clone()),
                    _ => unreachable!(),
                };
                self.wset.insert(x, v);
                self.hist(sink, HEventKind::ResWrite(x, true));
                self.next_op();
            }

            Ph::ReadV => {
                let x = self.read_target();
                let obs = self.read(world, sink, lay.v(x));
                self.ph = Ph::ReadL { obs };
            }

            Ph::ReadL { obs } => {
                let x = self.read_target();
                let lock = self.read(world, sink, lay.l(x));
                if lock != Val::int(0) {
                    self.ph = Ph::AbortRead;
                } else if self.variant == LpVariant::Relaxed || self.rset.is_empty() {
                    self.ph = Ph::ReadRes {
                        val: unpack(&obs).0,
                        obs: Some(obs),
                    };
                } else {
                    self.ph = Ph::ReadChk {
                        obs,
                        idx: 0,
                        lock: true,
                    };
                }
            }

            Ph::ReadChk { obs, idx, lock } => {
                let prior = self.rlist()[idx];
                if lock {
                    let l = self.read(world, sink, lay.l(prior));
                    if l != Val::int(0) {
                        self.ph = Ph::AbortRead;
                    } else {
                        self.ph = Ph::ReadChk {
                            obs,
                            idx,
                            lock: false,
                        };
                    }
                } else {
                    let cur = self.read(world, sink, lay.v(prior));
                    if &cur != self.rset.get(&prior).unwrap() {
                        self.ph = Ph::AbortRead;
                    } else if idx + 1 < self.rset.len() {
                        self.ph = Ph::ReadChk {
                            obs,
                            idx: idx + 1,
                            lock: true,
                        };
                    } else {
                        self.ph = Ph::ReadRes {
                            val: unpack(&obs).0,
                            obs: Some(obs),
                        };
                    }
                }
            }

            Ph::ReadRes { obs, val } => {
                let x = self.read_target();
                if let Some(obs) = obs {
                    self.rset.insert(x, obs);
                }
                self.hist(sink, HEventKind::ResRead(x, Some(val)));
                self.next_op();
            }

            Ph::AcqR { j } => {
                let x = self.wlist()[j];
                self.write(world, sink, lay.r(self.proc, x), Val::int(1));
                self.ph = if j + 1 < self.wset.len() {
                    Ph::AcqR { j: j + 1 }
                } else {
                    Ph::Scan { j: 0, t: 0 }
                };
            }

            Ph::Scan { j, t } => {
                let x = self.wlist()[j];
                let others = self.others();
                let bit = self.read(world, sink, lay.r(others[t], x));
                if bit != Val::int(0) {
                    self.ph = Ph::ResetR { j: 0 };
                } else if t + 1 < others.len() {
                    self.ph = Ph::Scan { j, t: t + 1 };
                } else if j + 1 < self.wset.len() {
                    self.ph = Ph::Scan { j: j + 1, t: 0 };
                } else {
                    self.ph = Ph::LockL { j: 0 };
                }
            }

            Ph::ResetR { j } => {
                let x = self.wlist()[j];
                self.write(world, sink, lay.r(self.proc, x), Val::int(0));
                self.ph = if j + 1 < self.wset.len() {
                    Ph::ResetR { j: j + 1 }
                } else {
                    Ph::AbortTryC
                };
            }

            Ph::LockL { j } => {
                let x = self.wlist()[j];
                self.write(world, sink, lay.l(x), Val::int(1));
                self.ph = if j + 1 < self.wset.len() {
                    Ph::LockL { j: j + 1 }
                } else {
                    Ph::ChkL { j: 0 }
                };
            }

            Ph::ChkL { j } => {
                let list = self.chk_l_list();
                if list.is_empty() {
                    // nothing to lock-check, fall through to validation
                    self.ph = Ph::ChkV { j: 0 };
                    return self.micro(world, sink);
                }
                let l = self.read(world, sink, lay.l(list[j]));
                if l != Val::int(0) {
                    self.tryc_fail();
                } else if j + 1 < list.len() {
                    self.ph = Ph::ChkL { j: j + 1 };
                } else {
                    self.ph = Ph::ChkV { j: 0 };
                }
            }

            Ph::ChkV { j } => {
                let list = self.rlist();
                if list.is_empty() {
                    self.ph = if self.wset.is_empty() {
                        Ph::Commit
                    } else {
                        Ph::WriteV { j: 0 }
                    };
                    return self.micro(world, sink);
                }
                let cur = self.read(world, sink, lay.v(list[j]));
                if &cur != self.rset.get(&list[j]).unwrap() {
                    self.tryc_fail();
                } else if j + 1 < list.len() {
                    self.ph = Ph::ChkV { j: j + 1 };
                } else if self.wset.is_empty() {
                    self.ph = Ph::Commit;
                } else {
                    self.ph = Ph::WriteV { j: 0 };
                }
            }

            Ph::WriteV { j } => {
                let x = self.wlist()[j];
                let v = pack(self.wset.get(&x).unwrap(), self.tid());
                self.write(world, sink, lay.v(x), v);
                self.ph = if j + 1 < self.wset.len() {
                    Ph::WriteV { j: j + 1 }
                } else {
                    Ph::RelL { j: 0, abort: false }
                };
            }

            Ph::RelL { j, abort } => {
                let x = self.wlist()[j];
                self.write(world, sink, lay.l(x), Val::int(0));
                self.ph = if j + 1 < self.wset.len() {
                    Ph::RelL { j: j + 1, abort }
                } else {
                    Ph::RelR { j: 0, abort }
                };
            }

            Ph::RelR { j, abort } => {
                let x = self.wlist()[j];
                self.write(world, sink, lay.r(self.proc, x), Val::int(0));
                self.ph = if j + 1 < self.wset.len() {
                    Ph::RelR { j: j + 1, abort }
                } else if abort {
                    Ph::AbortTryC
                } else {
                    Ph::Commit
                };
            }

            Ph::Commit => {
                self.hist(sink, HEventKind::ResTryC(true));
                self.next_txn();
            }

            Ph::AbortRead => {
                let x = self.read_target();
                self.hist(sink, HEventKind::ResRead(x, None));
                self.next_txn();
            }

            Ph::AbortTryC => {
                self.hist(sink, HEventKind::ResTryC(false));
                self.next_txn();
            }
        }
    }
}

/// Builds the world and one machine per process for a workload.
pub fn setup(wl: &Workload, variant: LpVariant) -> (World, Vec<LpProc>) {
    let layout = LpLayout::of(wl);
    let world = layout.init_world(wl);
    let procs = wl
        .procs
        .iter()
        .map(|p| LpProc::new(layout, variant, p))
        .collect();
    (world, procs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkers::du_opaque;
    use crate::machine::{enumerate, log_history, run_fair, EnumOpts};
    use crate::workload::{c, r, w, Workload};

    fn wl_rw() -> Workload {
        Workload::build(
            &["X", "Y"],
            &[],
            &[
                alloc::vec![(1, alloc::vec![w(0, 1), w(1, 2), c()])],
                alloc::vec![(2, alloc::vec![r(0), r(1), c()])],
            ],
        )
    }

    #[test]
    fn solo_reader_sees_initial_values() {
        let wl = Workload::build(
            &["X", "Y"],
            &[(0, 7)],
            &[alloc::vec![(1, alloc::vec![r(0), r(1), c()])]],
        );
        let (mut world, mut procs) = setup(&wl, LpVariant::Full);
        let (out, _) = run_fair(&mut world, &mut procs, 1000);
        assert!(out.complete);
        let h = log_history(&out.log, &wl.init);
        assert!(h.check_well_formed().is_ok());
        let ops = h.txn_ops(TxnId(1));
        assert_eq!(
            ops[0],
            crate::history::TxnOp::Read(TObj(0), Some(Val::int(7)))
        );
        assert_eq!(
            ops[1],
            crate::history::TxnOp::Read(TObj(1), Some(Val::int(0)))
        );
    }

    #[test]
    fn read_step_counts_grow_with_the_read_set() {
        // full variant: read i (1-based) costs 2i base events
        for m in [2u32, 4, 8] {
            let names: Vec<alloc::string::String> =
                (0..m).map(|i| alloc::format!("X{i}")).collect();
            let name_refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
            let ops: Vec<_> = (0..m).map(|i| r(i)).chain([c()]).collect();
            let wl = Workload::build(&name_refs, &[], &[alloc::vec![(1, ops)]]);
            let (mut world, mut procs) = setup(&wl, LpVariant::Full);
            let (out, _) = run_fair(&mut world, &mut procs, 100_000);
            assert!(out.complete);
            let execution = crate::machine::log_execution(&out.log);
            assert_eq!(execution.len(), (m * m + m) as usize);
        }
    }

    #[test]
    fn concurrent_read_write_histories_are_du_opaque() {
        let wl = wl_rw();
        let (world, procs) = setup(&wl, LpVariant::Full);
        let mut n = 0;
        let mut aborts = 0;
        enumerate(&world, &procs, EnumOpts::default(), &mut |out| {
            assert!(out.complete);
            let h = log_history(&out.log, &wl.init);
            let v = du_opaque(&h).unwrap();
            assert!(v.holds, "not du-opaque:\n{h:?}");
            if h.events
                .iter()
                .any(|e| matches!(e.kind, HEventKind::ResTryC(false) | HEventKind::ResRead(_, None)))
            {
                aborts += 1;
            }
            n += 1;
        });
        assert!(n > 1000, "expected a rich interleaving space, got {n}");
        assert!(aborts > 0, "some interleavings must abort");
    }
}
