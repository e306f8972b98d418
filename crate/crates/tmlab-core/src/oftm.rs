//! An obstruction-free TM in the DSTM mold, in two flavors.
//!
//! Every t-object lives in one cas-able register holding a descriptor
//! triple: the owning transaction, the value before that owner, and the
//! value the owner wants to install. A per-transaction status word
//! (live / committed / aborted) decides which of the two values is
//! current; helping is destructive, in that any transaction finding a
//! live owner in its way may atomically abort it and move on. Commit is a
//! single cas of one's own status word, so the whole design is
//! obstruction-free rather than lock-based: a transaction running alone
//! past any prefix of interference always gets to finish.
//!
//! The validating flavor keeps reads invisible. A read resolves the
//! descriptor, rechecks its own status, revalidates every earlier read
//! against the current descriptors, and records the observed triple;
//! tryC revalidates once more before the status cas. The owning flavor
//! makes reads visible instead: a read resolves the descriptor and
//! immediately installs itself as owner with before and after values
//! equal, which turns later conflicting access into a descriptor cas
//! failure. Its reads cost a fixed four shared accesses regardless of how
//! much the transaction has read, and its tryC is the bare status cas.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::history::{HEvent, HEventKind};
use crate::machine::{Machine, Poise, Sink};
use crate::substrate::{EventKind, Prim, World};
use crate::value::{ObjId, ProcId, TObj, TxnId, Val};
use crate::workload::{OpSpec, ProcSpec, TxnSpec, Workload};

const LIVE: i64 = 0;
const COMMITTED: i64 = 1;
const ABORTED: i64 = 2;

/// [owner, |before|, before fields, after fields]
pub fn triple(owner: TxnId, before: &Val, after: &Val) -> Val {
    let mut f = Vec::with_capacity(2 + before.0.len() + after.0.len());
    f.push(owner.0 as i64);
    f.push(before.0.len() as i64);
    f.extend_from_slice(&before.0);
    f.extend_from_slice(&after.0);
    Val(f)
}

pub fn untriple(v: &Val) -> (TxnId, Val, Val) {
    let owner = TxnId(v.0[0] as u32);
    let blen = v.0[1] as usize;
    let before = Val(v.0[2..2 + blen].to_vec());
    let after = Val(v.0[2 + blen..].to_vec());
    (owner, before, after)
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub struct OfLayout {
    pub m: u32,
    /// status words for transaction ids 0..n_status
    pub n_status: u32,
}

impl OfLayout {
    pub fn of(wl: &Workload) -> Self {
        let max_tid = wl
            .procs
            .iter()
            .flat_map(|p| p.txns.iter())
            .map(|t| t.id.0)
            .max()
            .unwrap_or(0);
        OfLayout {
            m: wl.n_objects() as u32,
            n_status: max_tid + 1,
        }
    }

    pub fn tvar(&self, x: TObj) -> ObjId {
        ObjId(x.0)
    }

    pub fn status(&self, t: TxnId) -> ObjId {
        ObjId(self.m + t.0)
    }

    pub fn init_world(&self, wl: &Workload) -> World {
        let mut w = World::new();
        for j in 0..self.m {
            let x = TObj(j);
            let v0 = wl.init_of(x);
            w.mem.init(self.tvar(x), triple(TxnId::INIT, &v0, &v0));
        }
        w.mem.init(self.status(TxnId::INIT), Val::int(COMMITTED));
        for t in 1..self.n_status {
            w.mem.init(self.status(TxnId(t)), Val::int(LIVE));
        }
        w
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub enum OfVariant {
    /// invisible validating reads
    Validating,
    /// visible owning reads
    Owning,
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug, Default)]
struct OfEntry {
    /// triple this transaction's reads are valid against
    vtriple: Val,
    /// descriptor we installed, if we own the object
    installed: Option<Val>,
    in_r: bool,
    in_w: bool,
    /// current value as this transaction sees it
    value: Val,
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug)]
enum Ph {
    AtOp,
    RTvar,
    RStatus { obs: Val },
    RResolve { obs: Val },
    /// owning flavor: become the owner with before == after
    RTakeOwn { obs: Val, curr: Val },
    ROwnStatus { vtriple: Val, installed: Option<Val>, curr: Val },
    RValidate { j: usize, vtriple: Val, curr: Val },
    ReadResLocal { val: Val },
    ReadResRecord { vtriple: Val, installed: Option<Val>, curr: Val },
    WOwnCas,
    WTvar,
    WStatus { obs: Val },
    WResolve { obs: Val },
    WInstall { obs: Val, curr: Val },
    WOwnStatus { obs: Val, installed: Val },
    WResOk { observed: Val, installed: Val },
    CValidate { j: usize },
    CCas,
    Commit,
    AbortRead,
    AbortWrite,
    AbortTryC,
    Finished,
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct OfProc {
    layout: OfLayout,
    variant: OfVariant,
    proc: ProcId,
    txns: Vec<TxnSpec>,
    t: usize,
    o: usize,
    ph: Ph,
    map: BTreeMap<TObj, OfEntry>,
}

impl OfProc {
    pub fn new(layout: OfLayout, variant: OfVariant, spec: &ProcSpec) -> Self {
        let ph = if spec.txns.is_empty() {
            Ph::Finished
        } else {
            Ph::AtOp
        };
        OfProc {
            layout,
            variant,
            proc: spec.id,
            txns: spec.txns.clone(),
            t: 0,
            o: 0,
            ph,
            map: BTreeMap::new(),
        }
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

    fn write_args(&self) -> (TObj, Val) {
        match self.op() {
            OpSpec::Write(x, v) => (*x, v.clone()),
            _ => unreachable!("not at a write"),
        }
    }

    fn rlist(&self) -> Vec<TObj> {
        self.map
            .iter()
            .filter(|(_, e)| e.in_r)
            .map(|(x, _)| *x)
            .collect()
    }

    fn next_op(&mut self) {
        self.o += 1;
        self.ph = Ph::AtOp;
    }

    fn next_txn(&mut self) {
        self.map.clear();
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

    /// cas returning success
    fn cas(&mut self, world: &mut World, sink: &mut Sink, obj: ObjId, expect: Val, new: Val) -> bool {
        let ev = world.direct(self.proc, Some(self.tid()), obj, Prim::Cas { expect, new });
        let ok = match &ev.kind {
            EventKind::Direct { ret, .. } => *ret == Val::int(1),
            _ => unreachable!(),
        };
        sink.base(ev);
        ok
    }

    fn hist(&self, sink: &mut Sink, kind: HEventKind) {
        sink.hist(HEvent {
            txn: self.tid(),
            kind,
        });
    }

    /// After the descriptor is resolved to a current value.
    fn after_resolve_read(&mut self, obs: Val, curr: Val) {
        self.ph = match self.variant {
            OfVariant::Validating => Ph::ROwnStatus {
                vtriple: obs,
                installed: None,
                curr,
            },
            OfVariant::Owning => Ph::RTakeOwn { obs, curr },
        };
    }
}

impl Machine for OfProc {
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
            Ph::ReadResLocal { .. }
            | Ph::ReadResRecord { .. }
            | Ph::WResOk { .. }
            | Ph::Commit
            | Ph::AbortRead
            | Ph::AbortWrite
            | Ph::AbortTryC => Poise::LocalPost,
            _ => Poise::Shared,
        }
    }

    fn micro(&mut self, world: &mut World, sink: &mut Sink) {
        let lay = self.layout;
        let me = self.tid();
        match self.ph.clone() {
            Ph::Finished => {}

            Ph::AtOp => match self.op().clone() {
                OpSpec::Read(x) => {
                    self.hist(sink, HEventKind::InvRead(x));
                    self.ph = match (self.variant, self.map.get(&x)) {
                        (OfVariant::Owning, Some(e)) => Ph::ReadResLocal {
                            val: e.value.clone(),
                        },
                        (OfVariant::Validating, Some(e)) if e.in_w => Ph::ReadResLocal {
                            val: e.value.clone(),
                        },
                        // validating repeated reads rerun the protocol
                        _ => Ph::RTvar,
                    };
                }
                OpSpec::Write(x, v) => {
                    self.hist(sink, HEventKind::InvWrite(x, v));
                    let owned = self
                        .map
                        .get(&x)
                        .map(|e| e.installed.is_some())
                        .unwrap_or(false);
                    self.ph = if owned { Ph::WOwnCas } else { Ph::WTvar };
                }
                OpSpec::TryC => {
                    self.hist(sink, HEventKind::InvTryC);
                    self.ph = match self.variant {
                        OfVariant::Validating if !self.rlist().is_empty() => {
                            Ph::CValidate { j: 0 }
                        }
                        _ => Ph::CCas,
                    };
                }
            },

            Ph::RTvar => {
                let x = self.read_target();
                let obs = self.read(world, sink, lay.tvar(x));
                self.ph = Ph::RStatus { obs };
            }

            Ph::RStatus { obs } => {
                let (owner, before, after) = untriple(&obs);
                let s = self.read(world, sink, lay.status(owner));
                match s.as_int().unwrap() {
                    COMMITTED => self.after_resolve_read(obs, after),
                    ABORTED => self.after_resolve_read(obs, before),
                    _ => self.ph = Ph::RResolve { obs },
                }
            }

            Ph::RResolve { obs } => {
                let (owner, before, _) = untriple(&obs);
                let ok = self.cas(
                    world,
                    sink,
                    lay.status(owner),
                    Val::int(LIVE),
                    Val::int(ABORTED),
                );
                if ok {
                    self.after_resolve_read(obs, before);
                } else {
                    self.ph = Ph::AbortRead;
                }
            }

            Ph::RTakeOwn { obs, curr } => {
                let x = self.read_target();
                let installed = triple(me, &curr, &curr);
                let ok = self.cas(world, sink, lay.tvar(x), obs, installed.clone());
                if ok {
                    self.ph = Ph::ROwnStatus {
                        vtriple: installed.clone(),
                        installed: Some(installed),
                        curr,
                    };
                } else {
                    self.ph = Ph::AbortRead;
                }
            }

            Ph::ROwnStatus {
                vtriple,
                installed,
                curr,
            } => {
                let s = self.read(world, sink, lay.status(me));
                if s.as_int() != Some(LIVE) {
                    self.ph = Ph::AbortRead;
                } else if self.variant == OfVariant::Validating && !self.rlist().is_empty() {
                    self.ph = Ph::RValidate {
                        j: 0,
                        vtriple,
                        curr,
                    };
                } else {
                    self.ph = Ph::ReadResRecord {
                        vtriple,
                        installed,
                        curr,
                    };
                }
            }

            Ph::RValidate { j, vtriple, curr } => {
                let list = self.rlist();
                let cur = self.read(world, sink, lay.tvar(list[j]));
                if cur != self.map.get(&list[j]).unwrap().vtriple {
                    self.ph = Ph::AbortRead;
                } else if j + 1 < list.len() {
                    self.ph = Ph::RValidate {
                        j: j + 1,
                        vtriple,
                        curr,
                    };
                } else {
                    self.ph = Ph::ReadResRecord {
                        vtriple,
                        installed: None,
                        curr,
                    };
                }
            }

            Ph::ReadResLocal { val } => {
                let x = self.read_target();
                self.hist(sink, HEventKind::ResRead(x, Some(val)));
                self.next_op();
            }

            Ph::ReadResRecord {
                vtriple,
                installed,
                curr,
            } => {
                let x = self.read_target();
                let e = self.map.entry(x).or_default();
                e.vtriple = vtriple;
                if installed.is_some() {
                    e.installed = installed;
                }
                e.in_r = true;
                e.value = curr.clone();
                self.hist(sink, HEventKind::ResRead(x, Some(curr)));
                self.next_op();
            }

            Ph::WOwnCas => {
                let (x, v) = self.write_args();
                let inst_old = self.map.get(&x).unwrap().installed.clone().unwrap();
                let (_, before, _) = untriple(&inst_old);
                let inst_new = triple(me, &before, &v);
                let ok = self.cas(world, sink, lay.tvar(x), inst_old.clone(), inst_new.clone());
                self.ph = if ok {
                    Ph::WResOk {
                        observed: inst_old,
                        installed: inst_new,
                    }
                } else {
                    Ph::AbortWrite
                };
            }

            Ph::WTvar => {
                let (x, _) = self.write_args();
                let obs = self.read(world, sink, lay.tvar(x));
                self.ph = Ph::WStatus { obs };
            }

            Ph::WStatus { obs } => {
                let (owner, before, after) = untriple(&obs);
                let s = self.read(world, sink, lay.status(owner));
                match s.as_int().unwrap() {
                    COMMITTED => self.ph = Ph::WInstall { obs, curr: after },
                    ABORTED => self.ph = Ph::WInstall { obs, curr: before },
                    _ => self.ph = Ph::WResolve { obs },
                }
            }

            Ph::WResolve { obs } => {
                let (owner, before, _) = untriple(&obs);
                let ok = self.cas(
                    world,
                    sink,
                    lay.status(owner),
                    Val::int(LIVE),
                    Val::int(ABORTED),
                );
                self.ph = if ok {
                    Ph::WInstall { obs, curr: before }
                } else {
                    Ph::AbortWrite
                };
            }

            Ph::WInstall { obs, curr } => {
                let (x, v) = self.write_args();
                let installed = triple(me, &curr, &v);
                let ok = self.cas(world, sink, lay.tvar(x), obs.clone(), installed.clone());
                self.ph = if ok {
                    Ph::WOwnStatus {
                        obs,
                        installed,
                    }
                } else {
                    Ph::AbortWrite
                };
            }

            Ph::WOwnStatus { obs, installed } => {
                let s = self.read(world, sink, lay.status(me));
                self.ph = if s.as_int() == Some(LIVE) {
                    Ph::WResOk {
                        observed: obs,
                        installed,
                    }
                } else {
                    Ph::AbortWrite
                };
            }

            Ph::WResOk {
                observed,
                installed,
            } => {
                let (x, v) = self.write_args();
                let e = self.map.entry(x).or_default();
                // a read stays valid across our own install only if the
                // install really replaced what the read saw
                if !e.in_r || e.vtriple == observed {
                    e.vtriple = installed.clone();
                }
                e.installed = Some(installed);
                e.in_w = true;
                e.value = v;
                let x = self.write_args().0;
                self.hist(sink, HEventKind::ResWrite(x, true));
                self.next_op();
            }

            Ph::CValidate { j } => {
                let list = self.rlist();
                let cur = self.read(world, sink, lay.tvar(list[j]));
                if cur != self.map.get(&list[j]).unwrap().vtriple {
                    self.ph = Ph::AbortTryC;
                } else if j + 1 < list.len() {
                    self.ph = Ph::CValidate { j: j + 1 };
                } else {
                    self.ph = Ph::CCas;
                }
            }

            Ph::CCas => {
                let ok = self.cas(
                    world,
                    sink,
                    lay.status(me),
                    Val::int(LIVE),
                    Val::int(COMMITTED),
                );
                self.ph = if ok { Ph::Commit } else { Ph::AbortTryC };
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

            Ph::AbortWrite => {
                let x = self.write_args().0;
                self.hist(sink, HEventKind::ResWrite(x, false));
                self.next_txn();
            }

            Ph::AbortTryC => {
                self.hist(sink, HEventKind::ResTryC(false));
                self.next_txn();
            }
        }
    }
}

pub fn setup(wl: &Workload, variant: OfVariant) -> (World, Vec<OfProc>) {
    let layout = OfLayout::of(wl);
    let world = layout.init_world(wl);
    let procs = wl
        .procs
        .iter()
        .map(|p| OfProc::new(layout, variant, p))
        .collect();
    (world, procs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkers::du_opaque;
    use crate::machine::{enumerate, log_history, log_execution, run_fair, EnumOpts};
    use crate::workload::{c, r, w, Workload};

    #[test]
    fn descriptor_roundtrip() {
        let t = triple(TxnId(3), &Val::nil(), &Val::pair(1, 2));
        assert_eq!(untriple(&t), (TxnId(3), Val::nil(), Val::pair(1, 2)));
    }

    #[test]
    fn solo_transactions_commit_and_owning_reads_cost_four() {
        for m in [1u32, 4, 8] {
            let names: Vec<alloc::string::String> =
                (0..m).map(|i| alloc::format!("X{i}")).collect();
            let name_refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
            let ops: Vec<_> = (0..m).map(r).chain([c()]).collect();
            let wl = Workload::build(&name_refs, &[], &[alloc::vec![(1, ops)]]);
            let (mut world, mut procs) = setup(&wl, OfVariant::Owning);
            let (out, _) = run_fair(&mut world, &mut procs, 100_000);
            assert!(out.complete);
            let h = log_history(&out.log, &wl.init);
            assert_eq!(h.status(TxnId(1)), crate::history::TxnStatus::Committed);
            // 4 per read plus the commit cas
            assert_eq!(log_execution(&out.log).len(), (4 * m + 1) as usize);
        }
    }

    #[test]
    fn contended_histories_stay_du_opaque() {
        let wl = Workload::build(
            &["X", "Y"],
            &[],
            &[
                alloc::vec![(1, alloc::vec![r(0), w(1, 1), c()])],
                alloc::vec![(2, alloc::vec![r(1), w(0, 2), c()])],
            ],
        );
        for variant in [OfVariant::Validating, OfVariant::Owning] {
            let (world, procs) = setup(&wl, variant);
            let mut n = 0;
            enumerate(&world, &procs, EnumOpts::default(), &mut |out| {
                assert!(out.complete);
                let h = log_history(&out.log, &wl.init);
                let v = du_opaque(&h).unwrap();
                assert!(v.holds, "{variant:?} not du-opaque:\n{h:?}");
                n += 1;
            });
            assert!(n > 10, "{variant:?} explored only {n} executions");
        }
    }
}
