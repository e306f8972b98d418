//! A strongly progressive TM built on a deadlock-free multi-trylock, plus
//! a mutual-exclusion harness driving it.
//!
//! The lock layer keeps one announcement bit `a_ij` per process and
//! lockable object, a global epoch `color`, and per process a stamped copy
//! `mc_i` of the color plus a bakery-style level `la_i`. Acquiring a set
//! of objects announces the bits, stamps the current color, derives a
//! level above every same-epoch peer, and then spins on each peer with an
//! announced bit: while the peer has no level yet (it is mid doorway and
//! may still level below us), while it outranks us within the same epoch
//! (smaller level, process id breaking ties), and, across epochs, while
//! our own stamp matches the current color (the older batch drains first).
//! Releasing withdraws the bits, flips the color, and clears the level. The scheme
//! never rejects: acquisition blocks until conflicts drain, and the whole
//! acquire/release pair costs at most four write-after-read patterns.
//!
//! The TM on top keeps the value registers `v_j` with the writer id
//! packed in. Reads are optimistic and revalidate the read set against
//! both the announcement bits and the current values; writes are
//! buffered; tryC locks the write set via the trylock, revalidates, and
//! applies. A transaction aborts only when a concurrent conflicting one
//! exists, and transactions that never read cannot abort at all, which is
//! what the mutex harness leans on.
//!
//! The harness turns a single fetch-and-swap style transaction (read the
//! tail pointer, replace it with yourself) into a queue lock: each entrant
//! chains behind the previous tail, hands its id to the predecessor, and
//! spins on a dedicated flag cell until woken. Per round a process flips a
//! face bit so the two generations of its handshake cells never collide.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::history::{HEvent, HEventKind};
use crate::machine::{Machine, Poise, Sink};
use crate::substrate::{EventKind, Prim, World};
use crate::value::{ObjId, ProcId, TObj, TxnId, Val};
use crate::workload::{OpSpec, ProcSpec, TxnSpec, Workload};

use crate::lp::{pack, unpack};

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub struct StrongLayout {
    pub m: u32,
    pub n: u32,
}

impl StrongLayout {
    pub fn of(wl: &Workload) -> Self {
        StrongLayout {
            m: wl.n_objects() as u32,
            n: wl.procs.len() as u32,
        }
    }

    pub fn v(&self, x: TObj) -> ObjId {
        ObjId(x.0)
    }

    pub fn a(&self, p: ProcId, x: TObj) -> ObjId {
        ObjId(self.m + (p.0 - 1) * self.m + x.0)
    }

    pub fn color(&self) -> ObjId {
        ObjId(self.m + self.n * self.m)
    }

    pub fn mc(&self, p: ProcId) -> ObjId {
        ObjId(self.m + self.n * self.m + 1 + (p.0 - 1))
    }

    pub fn la(&self, p: ProcId) -> ObjId {
        ObjId(self.m + self.n * self.m + 1 + self.n + (p.0 - 1))
    }

    pub fn size(&self) -> u32 {
        self.m + self.n * self.m + 1 + 2 * self.n
    }

    pub fn init_world(&self, init_of: impl Fn(TObj) -> Val) -> World {
        let mut w = World::new();
        for j in 0..self.m {
            let x = TObj(j);
            w.mem.init(self.v(x), pack(&init_of(x), TxnId::INIT));
        }
        for p in 1..=self.n {
            let p = ProcId(p);
            for j in 0..self.m {
                w.mem.init(self.a(p, TObj(j)), Val::int(0));
            }
            w.mem.init(self.mc(p), Val::int(0));
            w.mem.init(self.la(p), Val::int(0));
        }
        w.mem.init(self.color(), Val::int(0));
        w
    }
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug)]
enum Ph {
    AtOp,
    WLocal,
    /// read v_x on a first read
    RdV,
    /// contended check over read set minus write set, entry j, peer k
    RdBits { j: usize, k: usize },
    /// revalidation over the full read set
    RdVal { j: usize },
    ReadRes { val: Val },
    /// tryC: announce write-set bits
    AcqBits { j: usize },
    RdColor,
    WrMC,
    RdOtherMC { k: usize },
    RdOtherLA { k: usize, same: bool },
    WrLA,
    /// spin over peers' announcements, write-set entry j, peer k
    Scan { j: usize, k: usize },
    ScanLA { j: usize, k: usize },
    ScanMC { j: usize, k: usize, la: i64 },
    ScanColor { j: usize, k: usize },
    ChkBits { j: usize, k: usize },
    ChkVal { j: usize },
    WrV { j: usize },
    RelBits { j: usize, abort: bool },
    RelRdMC { abort: bool },
    RelWrColor { abort: bool },
    RelWrLA { abort: bool },
    Commit,
    AbortRead,
    AbortTryC,
    Finished,
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct StrongProc {
    layout: StrongLayout,
    proc: ProcId,
    txns: Vec<TxnSpec>,
    t: usize,
    o: usize,
    ph: Ph,
    rset: BTreeMap<TObj, Val>,
    wset: BTreeMap<TObj, Val>,
    /// my stamped color for the acquisition in flight
    epoch: i64,
    /// highest same-epoch level seen while announcing
    best: i64,
    /// my level
    level: i64,
    /// own stamped color read back during release
    rel_mc: i64,
    /// whether the most recently finished transaction aborted
    aborted_last: bool,
    /// commit flag per finished transaction, in program order
    outcomes: Vec<bool>,
    /// read results of the current transaction, in op order
    pub read_log: Vec<Val>,
}

impl StrongProc {
    pub fn new(layout: StrongLayout, spec: &ProcSpec) -> Self {
        let ph = if spec.txns.is_empty() {
            Ph::Finished
        } else {
            Ph::AtOp
        };
        StrongProc {
            layout,
            proc: spec.id,
            txns: spec.txns.clone(),
            t: 0,
            o: 0,
            ph,
            rset: BTreeMap::new(),
            wset: BTreeMap::new(),
            epoch: 0,
            best: 0,
            level: 0,
            rel_mc: 0,
            aborted_last: false,
            outcomes: Vec::new(),
            read_log: Vec::new(),
        }
    }

    /// A single-transaction machine, used when another machine embeds one
    /// transaction as a building block.
    pub fn single(layout: StrongLayout, proc: ProcId, tid: TxnId, ops: Vec<OpSpec>) -> Self {
        Self::new(
            layout,
            &ProcSpec {
                id: proc,
                fast: false,
                txns: alloc::vec![TxnSpec { id: tid, ops }],
            },
        )
    }

    /// None while running; Some(committed?) once finished (single-txn use).
    pub fn outcome(&self) -> Option<bool> {
        if self.ph == Ph::Finished && self.txns.len() == 1 {
            Some(!self.aborted_last)
        } else {
            None
        }
    }

    /// Commit flag of every finished transaction so far, in program order.
    pub fn outcomes(&self) -> &[bool] {
        &self.outcomes
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

    fn rlist(&self) -> Vec<TObj> {
        self.rset.keys().copied().collect()
    }

    fn contended_list(&self) -> Vec<TObj> {
        self.rset
            .keys()
            .copied()
            .filter(|x| !self.wset.contains_key(x))
            .collect()
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

    fn next_txn(&mut self, committed: bool) {
        self.aborted_last = !committed;
        self.outcomes.push(committed);
        self.rset.clear();
        self.wset.clear();
        self.t += 1;
        self.o = 0;
        self.ph = if self.t >= self.txns.len() {
            Ph::Finished
        } else {
            self.read_log.clear();
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

    /// Advance the contended read check; entered with the lists nonempty.
    fn rd_bits_next(&mut self, j: usize, k: usize) {
        let list = self.contended_list();
        let others = self.others();
        if k + 1 < others.len() {
            self.ph = Ph::RdBits { j, k: k + 1 };
        } else if j + 1 < list.len() {
            self.ph = Ph::RdBits { j: j + 1, k: 0 };
        } else {
            self.ph = Ph::RdVal { j: 0 };
        }
    }

    fn scan_next(&mut self, j: usize, k: usize) {
        let others = self.others();
        if k + 1 < others.len() {
            self.ph = Ph::Scan { j, k: k + 1 };
        } else if j + 1 < self.wset.len() {
            self.ph = Ph::Scan { j: j + 1, k: 0 };
        } else {
            self.ph = self.chk_entry();
        }
    }

    fn chk_entry(&self) -> Ph {
        if self.contended_list().is_empty() || self.others().is_empty() {
            self.chk_val_entry()
        } else {
            Ph::ChkBits { j: 0, k: 0 }
        }
    }

    fn chk_val_entry(&self) -> Ph {
        if self.rset.is_empty() {
            Ph::WrV { j: 0 }
        } else {
            Ph::ChkVal { j: 0 }
        }
    }

    fn chk_bits_next(&mut self, j: usize, k: usize) {
        let list = self.contended_list();
        let others = self.others();
        if k + 1 < others.len() {
            self.ph = Ph::ChkBits { j, k: k + 1 };
        } else if j + 1 < list.len() {
            self.ph = Ph::ChkBits { j: j + 1, k: 0 };
        } else {
            self.ph = self.chk_val_entry();
        }
    }
}

impl Machine for StrongProc {
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
            Ph::WLocal | Ph::ReadRes { .. } | Ph::Commit | Ph::AbortRead | Ph::AbortTryC => {
                Poise::LocalPost
            }
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
                        Ph::ReadRes { val: v.clone() }
                    } else if let Some(rec) = self.rset.get(&x) {
                        Ph::ReadRes {
                            val: unpack(rec).0,
                        }
                    } else {
                        Ph::RdV
                    };
                }
                OpSpec::Write(x, v) => {
                    self.hist(sink, HEventKind::InvWrite(x, v));
                    self.ph = Ph::WLocal;
                }
                OpSpec::TryC => {
                    self.hist(sink, HEventKind::InvTryC);
                    self.ph = if self.wset.is_empty() {
                        Ph::Commit
                    } else {
                        Ph::AcqBits { j: 0 }
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

            Ph::RdV => {
                let x = self.read_target();
                let obs = self.read(world, sink, lay.v(x));
                self.rset.insert(x, obs);
                self.ph = if self.others().is_empty() {
                    Ph::RdVal { j: 0 }
                } else {
                    Ph::RdBits { j: 0, k: 0 }
                };
            }

            Ph::RdBits { j, k } => {
                let list = self.contended_list();
                let others = self.others();
                let bit = self.read(world, sink, lay.a(others[k], list[j]));
                if bit != Val::int(0) {
                    self.ph = Ph::AbortRead;
                } else {
                    self.rd_bits_next(j, k);
                }
            }

            Ph::RdVal { j } => {
                let list = self.rlist();
                let cur = self.read(world, sink, lay.v(list[j]));
                if &cur != self.rset.get(&list[j]).unwrap() {
                    self.ph = Ph::AbortRead;
                } else if j + 1 < list.len() {
                    self.ph = Ph::RdVal { j: j + 1 };
                } else {
                    let x = self.read_target();
                    self.ph = Ph::ReadRes {
                        val: unpack(self.rset.get(&x).unwrap()).0,
                    };
                }
            }

            Ph::ReadRes { val } => {
                let x = self.read_target();
                self.read_log.push(val.clone());
                self.hist(sink, HEventKind::ResRead(x, Some(val)));
                self.next_op();
            }

            Ph::AcqBits { j } => {
                let x = self.wlist()[j];
                self.write(world, sink, lay.a(self.proc, x), Val::int(1));
                self.ph = if j + 1 < self.wset.len() {
                    Ph::AcqBits { j: j + 1 }
                } else {
                    Ph::RdColor
                };
            }

            Ph::RdColor => {
                let c = self.read(world, sink, lay.color());
                self.epoch = c.as_int().unwrap();
                self.ph = Ph::WrMC;
            }

            Ph::WrMC => {
                self.write(world, sink, lay.mc(self.proc), Val::int(self.epoch));
                self.best = 0;
                self.ph = if self.others().is_empty() {
                    Ph::WrLA
                } else {
                    Ph::RdOtherMC { k: 0 }
                };
            }

            Ph::RdOtherMC { k } => {
                let v = self.read(world, sink, lay.mc(self.others()[k]));
                self.ph = Ph::RdOtherLA {
                    k,
                    same: v.as_int().unwrap() == self.epoch,
                };
            }

            Ph::RdOtherLA { k, same } => {
                let v = self.read(world, sink, lay.la(self.others()[k]));
                if same && v.as_int().unwrap() > self.best {
                    self.best = v.as_int().unwrap();
                }
                self.ph = if k + 1 < self.others().len() {
                    Ph::RdOtherMC { k: k + 1 }
                } else {
                    Ph::WrLA
                };
            }

            Ph::WrLA => {
                self.level = self.best + 1;
                self.write(world, sink, lay.la(self.proc), Val::int(self.level));
                self.ph = if self.others().is_empty() {
                    self.chk_entry()
                } else {
                    Ph::Scan { j: 0, k: 0 }
                };
            }

            Ph::Scan { j, k } => {
                let x = self.wlist()[j];
                let peer = self.others()[k];
                let bit = self.read(world, sink, lay.a(peer, x));
                if bit == Val::int(0) {
                    self.scan_next(j, k);
                } else {
                    self.ph = Ph::ScanLA { j, k };
                }
            }

            Ph::ScanLA { j, k } => {
                let peer = self.others()[k];
                let la = self.read(world, sink, lay.la(peer));
                if la == Val::int(0) {
                    // announced but no label yet: the peer is mid doorway,
                    // and its label may land below ours. Passing it here is
                    // the classic bakery race, so re-poll until it levels.
                    self.ph = Ph::Scan { j: 0, k: 0 };
                } else {
                    self.ph = Ph::ScanMC {
                        j,
                        k,
                        la: la.as_int().unwrap(),
                    };
                }
            }

            Ph::ScanMC { j, k, la } => {
                let peer = self.others()[k];
                let mc = self.read(world, sink, lay.mc(peer));
                if mc.as_int().unwrap() == self.epoch {
                    if (la, peer.0) < (self.level, self.proc.0) {
                        // same epoch, higher priority: wait it out
                        self.ph = Ph::Scan { j: 0, k: 0 };
                    } else {
                        self.scan_next(j, k);
                    }
                } else {
                    self.ph = Ph::ScanColor { j, k };
                }
            }

            Ph::ScanColor { j, k } => {
                let c = self.read(world, sink, lay.color());
                if c.as_int().unwrap() == self.epoch {
                    // the peer is from the previous epoch and goes first
                    self.ph = Ph::Scan { j: 0, k: 0 };
                } else {
                    self.scan_next(j, k);
                }
            }

            Ph::ChkBits { j, k } => {
                let list = self.contended_list();
                let bit = self.read(world, sink, lay.a(self.others()[k], list[j]));
                if bit != Val::int(0) {
                    self.ph = Ph::RelBits { j: 0, abort: true };
                } else {
                    self.chk_bits_next(j, k);
                }
            }

            Ph::ChkVal { j } => {
                let list = self.rlist();
                let cur = self.read(world, sink, lay.v(list[j]));
                if &cur != self.rset.get(&list[j]).unwrap() {
                    self.ph = Ph::RelBits { j: 0, abort: true };
                } else if j + 1 < list.len() {
                    self.ph = Ph::ChkVal { j: j + 1 };
                } else {
                    self.ph = Ph::WrV { j: 0 };
                }
            }

            Ph::WrV { j } => {
                let x = self.wlist()[j];
                let v = pack(self.wset.get(&x).unwrap(), self.tid());
                self.write(world, sink, lay.v(x), v);
                self.ph = if j + 1 < self.wset.len() {
                    Ph::WrV { j: j + 1 }
                } else {
                    Ph::RelBits { j: 0, abort: false }
                };
            }

            Ph::RelBits { j, abort } => {
                let x = self.wlist()[j];
                self.write(world, sink, lay.a(self.proc, x), Val::int(0));
                self.ph = if j + 1 < self.wset.len() {
                    Ph::RelBits { j: j + 1, abort }
                } else {
                    Ph::RelRdMC { abort }
                };
            }

            Ph::RelRdMC { abort } => {
                let mc = self.read(world, sink, lay.mc(self.proc));
                self.rel_mc = mc.as_int().unwrap();
                self.ph = Ph::RelWrColor { abort };
            }

            Ph::RelWrColor { abort } => {
                self.write(world, sink, lay.color(), Val::int(1 - self.rel_mc));
                self.ph = Ph::RelWrLA { abort };
            }

            Ph::RelWrLA { abort } => {
                self.write(world, sink, lay.la(self.proc), Val::int(0));
                self.ph = if abort { Ph::AbortTryC } else { Ph::Commit };
            }

            Ph::Commit => {
                self.hist(sink, HEventKind::ResTryC(true));
                self.next_txn(true);
            }

            Ph::AbortRead => {
                let x = self.read_target();
                self.hist(sink, HEventKind::ResRead(x, None));
                self.next_txn(false);
            }

            Ph::AbortTryC => {
                self.hist(sink, HEventKind::ResTryC(false));
                self.next_txn(false);
            }
        }
    }
}

pub fn setup(wl: &Workload) -> (World, Vec<StrongProc>) {
    let layout = StrongLayout::of(wl);
    let world = layout.init_world(|x| wl.init_of(x));
    let procs = wl.procs.iter().map(|p| StrongProc::new(layout, p)).collect();
    (world, procs)
}

/// The queue-lock harness: `rounds` critical-section entries per process,
/// sequenced through one shared t-object holding the queue tail.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub struct MutexLayout {
    pub tm: StrongLayout,
    pub n: u32,
}

impl MutexLayout {
    pub fn new(n: u32) -> Self {
        MutexLayout {
            tm: StrongLayout { m: 1, n },
            n,
        }
    }

    fn base(&self) -> u32 {
        self.tm.size()
    }

    pub fn done(&self, p: ProcId, face: i64) -> ObjId {
        ObjId(self.base() + (p.0 - 1) * 2 + face as u32)
    }

    pub fn succ(&self, p: ProcId, face: i64) -> ObjId {
        ObjId(self.base() + 2 * self.n + (p.0 - 1) * 2 + face as u32)
    }

    pub fn lock(&self, waiter: ProcId, holder: ProcId) -> ObjId {
        ObjId(self.base() + 4 * self.n + (waiter.0 - 1) * self.n + (holder.0 - 1))
    }

    pub fn init_world(&self) -> World {
        let mut w = self.tm.init_world(|_| Val::nil());
        for p in 1..=self.n {
            let p = ProcId(p);
            for f in 0..2 {
                w.mem.init(self.done(p, f), Val::int(1));
                w.mem.init(self.succ(p, f), Val::nil());
            }
            for q in 1..=self.n {
                w.mem.init(self.lock(p, ProcId(q)), Val::int(0));
            }
        }
        w
    }
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug)]
enum MPh {
    StartRound,
    WrDone,
    WrSucc,
    Txn,
    /// predecessor handle: (pid, face)
    WrLock { prev: (u32, i64) },
    WrPrevSucc { prev: (u32, i64) },
    RdDone { prev: (u32, i64) },
    SpinLock { prev: (u32, i64) },
    /// critical section: write done, collect successor, wake it
    CsDone,
    CsRdSucc,
    CsWrUnlock { s: u32 },
    RoundDone,
    Finished,
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct MutexProc {
    lay: MutexLayout,
    proc: ProcId,
    rounds: u32,
    round: u32,
    face: i64,
    ph: MPh,
    txn: Option<StrongProc>,
}

impl MutexProc {
    pub fn new(lay: MutexLayout, proc: ProcId, rounds: u32) -> Self {
        MutexProc {
            lay,
            proc,
            rounds,
            round: 0,
            face: 0,
            ph: if rounds == 0 {
                MPh::Finished
            } else {
                MPh::StartRound
            },
            txn: None,
        }
    }

    /// In the critical section: entry is complete and the exit has not
    /// been announced yet. Writing the Done bit is the exit point; the
    /// successor handover after it may overlap the successor's entry.
    pub fn in_cs(&self) -> bool {
        self.ph == MPh::CsDone
    }

    fn fresh_txn(&mut self) {
        // stable per round: retries of the swap replay the same id, which
        // keeps the reachable state graph finite
        let tid = TxnId(self.proc.0 + self.lay.n * self.round);
        let me = Val::pair(self.proc.0 as i64, self.face);
        self.txn = Some(StrongProc::single(
            self.lay.tm,
            self.proc,
            tid,
            alloc::vec![
                OpSpec::Read(TObj(0)),
                OpSpec::Write(TObj(0), me),
                OpSpec::TryC,
            ],
        ));
    }

    fn read(&mut self, world: &mut World, sink: &mut Sink, obj: ObjId) -> Val {
        let ev = world.direct(self.proc, None, obj, Prim::Read);
        let ret = match &ev.kind {
            EventKind::Direct { ret, .. } => ret.clone(),
            _ => unreachable!(),
        };
        sink.base(ev);
        ret
    }

    fn write(&mut self, world: &mut World, sink: &mut Sink, obj: ObjId, v: Val) {
        let ev = world.direct(self.proc, None, obj, Prim::Write(v));
        sink.base(ev);
    }
}

impl Machine for MutexProc {
    fn proc(&self) -> ProcId {
        self.proc
    }

    fn done(&self) -> bool {
        self.ph == MPh::Finished
    }

    fn at_boundary(&self) -> bool {
        self.done() || self.ph == MPh::StartRound
    }

    fn poised(&self, world: &World) -> Poise {
        match &self.ph {
            MPh::Finished => Poise::Done,
            MPh::StartRound | MPh::RoundDone => Poise::LocalPost,
            MPh::Txn => {
                let inner = self.txn.as_ref().unwrap();
                if inner.done() {
                    Poise::LocalPost
                } else {
                    inner.poised(world)
                }
            }
            _ => Poise::Shared,
        }
    }

    fn micro(&mut self, world: &mut World, sink: &mut Sink) {
        let lay = self.lay;
        match self.ph.clone() {
            MPh::Finished => {}

            MPh::StartRound => {
                self.face = 1 - self.face;
                self.ph = MPh::WrDone;
            }

            MPh::WrDone => {
                let me = self.proc;
                let f = self.face;
                self.write(world, sink, lay.done(me, f), Val::int(0));
                self.ph = MPh::WrSucc;
            }

            MPh::WrSucc => {
                let me = self.proc;
                let f = self.face;
                self.write(world, sink, lay.succ(me, f), Val::nil());
                self.fresh_txn();
                self.ph = MPh::Txn;
            }

            MPh::Txn => {
                let inner = self.txn.as_mut().unwrap();
                if !inner.done() {
                    inner.micro(world, sink);
                    return;
                }
                if inner.outcome() != Some(true) {
                    self.fresh_txn();
                    return;
                }
                let prev = inner.read_log[0].clone();
                self.txn = None;
                if prev.is_nil() {
                    self.ph = MPh::CsDone;
                } else {
                    self.ph = MPh::WrLock {
                        prev: (prev.field(0).unwrap() as u32, prev.field(1).unwrap()),
                    };
                }
            }

            MPh::WrLock { prev } => {
                let me = self.proc;
                self.write(world, sink, lay.lock(me, ProcId(prev.0)), Val::int(1));
                self.ph = MPh::WrPrevSucc { prev };
            }

            MPh::WrPrevSucc { prev } => {
                let me = self.proc;
                self.write(
                    world,
                    sink,
                    lay.succ(ProcId(prev.0), prev.1),
                    Val::int(me.0 as i64),
                );
                self.ph = MPh::RdDone { prev };
            }

            MPh::RdDone { prev } => {
                let d = self.read(world, sink, lay.done(ProcId(prev.0), prev.1));
                self.ph = if d == Val::int(1) {
                    MPh::CsDone
                } else {
                    MPh::SpinLock { prev }
                };
            }

            MPh::SpinLock { prev } => {
                let me = self.proc;
                let l = self.read(world, sink, lay.lock(me, ProcId(prev.0)));
                self.ph = if l == Val::int(0) {
                    MPh::CsDone
                } else {
                    MPh::SpinLock { prev }
                };
            }

            MPh::CsDone => {
                let me = self.proc;
                let f = self.face;
                self.write(world, sink, lay.done(me, f), Val::int(1));
                self.ph = MPh::CsRdSucc;
            }

            MPh::CsRdSucc => {
                let me = self.proc;
                let f = self.face;
                let s = self.read(world, sink, lay.succ(me, f));
                self.ph = if s.is_nil() {
                    MPh::RoundDone
                } else {
                    MPh::CsWrUnlock {
                        s: s.as_int().unwrap() as u32,
                    }
                };
            }

            MPh::CsWrUnlock { s } => {
                let me = self.proc;
                self.write(world, sink, lay.lock(ProcId(s), me), Val::int(0));
                self.ph = MPh::RoundDone;
            }

            MPh::RoundDone => {
                self.round += 1;
                self.ph = if self.round >= self.rounds {
                    MPh::Finished
                } else {
                    MPh::StartRound
                };
            }
        }
    }
}

pub fn mutex_setup(n: u32, rounds: u32) -> (World, Vec<MutexProc>) {
    let lay = MutexLayout::new(n);
    let world = lay.init_world();
    let procs = (1..=n).map(|p| MutexProc::new(lay, ProcId(p), rounds)).collect();
    (world, procs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::{run_fair, search_graph, search_states, LogEntry};
    use crate::metrics::raw_fold_absorb;
    use crate::workload::{c, w, Workload};
    use alloc::collections::BTreeSet;

    #[test]
    fn two_blind_updaters_always_both_commit() {
        let wl = Workload::build(
            &["X"],
            &[],
            &[
                alloc::vec![(1, alloc::vec![w(0, 1), c()])],
                alloc::vec![(2, alloc::vec![w(0, 2), c()])],
            ],
        );
        let (world, procs) = setup(&wl);
        // per process, the streaming write-after-read scanner rides along
        // in the search state
        let fold0: alloc::vec::Vec<(BTreeSet<ObjId>, u8)> =
            alloc::vec![(BTreeSet::new(), 0); 2];
        let mut absorb =
            |fold: &alloc::vec::Vec<(BTreeSet<ObjId>, u8)>, i: usize, log: &[LogEntry]| {
                let mut f = fold.clone();
                raw_fold_absorb(&mut f[i], log);
                f
            };
        let res = search_graph(&world, &procs, fold0, &mut absorb, &mut |ms, _, fold| {
            for m in ms {
                assert!(
                    m.outcomes().iter().all(|ok| *ok),
                    "a blind updater aborted"
                );
            }
            for (_, n) in fold {
                assert!(*n <= 4, "more than four write-after-read patterns");
            }
        });
        assert!(!res.dead_end, "blind updaters deadlocked");
        assert!(res.terminals > 0);
    }

    #[test]
    fn mutex_harness_is_exclusive_and_live() {
        let (world, procs) = mutex_setup(2, 2);
        let res = search_states(&world, &procs, 200, &mut |ms, _| {
            ms.iter().filter(|m| m.in_cs()).count() <= 1
        });
        assert!(!res.violated, "two processes in the critical section");

        let (mut world, mut procs) = mutex_setup(2, 2);
        let (out, steps) = run_fair(&mut world, &mut procs, 10_000);
        assert!(out.complete, "harness did not finish in {steps} steps");
    }
}
