//! The list-based set family and its schedule-acceptance harness.
//!
//! All implementations run the same sequential code: traverse from the head
//! until the first element whose payload is at least the argument, then
//! possibly link or unlink one node. Each element is a single register
//! holding (payload, successor); a write only ever changes the successor
//! half. What differs is the synchronization wrapped around the traversal:
//!
//! * `Seq` runs each operation atomically, one at a time.
//! * `LockCoupling` is pessimistic: membership queries hold shared locks
//!   hand-over-hand, updaters hold the head's exclusive lock for the whole
//!   operation and take a per-node exclusive lock around their single write.
//!   Nothing ever returns bottom; contended steps just wait.
//! * `TmBacked` runs the traversal as one transaction of the progressive
//!   TM from [`crate::lp`]; a transaction abort surfaces as bottom.
//! * `VersionLock` is the optimistic fine-grained variant: every node
//!   carries a version+locked word and a deletion flag. A read samples the
//!   word around the value and fails on drift, a writer cas-locks at the
//!   version it remembers from its own traversal (removal also locks and
//!   flags the unlinked node). At most two cas instructions per update,
//!   queries never write shared memory.
//!
//! A schedule prescribes a total order over the high-level reads and writes
//! of a group of operations. An implementation accepts the schedule if some
//! execution fires exactly those accesses in that order with every
//! operation finishing with a proper (non-bottom) response; the driver
//! below searches over internal-step placements, so acceptance is decided
//! exhaustively. Schedules themselves are judged by `is_observable`: replay
//! the accesses atomically, then probe the reconstructed list with
//! sequential membership queries and ask whether the whole thing is still
//! linearizable at the set level. The headline property, exercised over an
//! enumerated corpus, is that `VersionLock` accepts a schedule exactly when
//! it is observable.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::history::HEventKind;
use crate::lp::{self, LpLayout, LpProc, LpVariant};
use crate::machine::{LogEntry, Sink};
use crate::substrate::{Event, EventKind, Prim, World};
use crate::value::{ObjId, ProcId, TObj, TxnId, Val};
use crate::workload::OpSpec;

/// Index into the node registry. 0 and 1 are the head and tail sentinels.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug, Hash)]
pub struct NodeId(pub u32);

pub const HEAD: NodeId = NodeId(0);
pub const TAIL: NodeId = NodeId(1);

/// Head payload; also never a legal operation argument.
pub const NEG_INF: i64 = i64::MIN;
/// Tail payload; the tail is never removed, so traversals always stop.
pub const POS_INF: i64 = i64::MAX;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug, Hash)]
pub enum SetOpKind {
    Insert,
    Remove,
    Contains,
}

impl SetOpKind {
    pub fn name(&self) -> &'static str {
        match self {
            SetOpKind::Insert => "insert",
            SetOpKind::Remove => "remove",
            SetOpKind::Contains => "contains",
        }
    }
}

/// Mint-order ledger of every node an execution ever created.
///
/// Nodes are named by (key, instance): the first node holding key k is
/// `Xk`, a later re-insertion of the same key is `Xk.1`, `Xk.2`, ...
/// Ids are never recycled, which keeps a stale reader's view of an
/// unlinked node meaningful.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub struct Registry {
    nodes: Vec<(i64, String)>,
    counts: BTreeMap<i64, u32>,
}

impl Registry {
    /// Registry plus initial chain for a list holding `init` (sorted).
    pub fn new(init: &[i64]) -> Registry {
        let mut keys: Vec<i64> = init.to_vec();
        keys.sort_unstable();
        keys.dedup();
        let mut reg = Registry {
            nodes: vec![
                (NEG_INF, String::from("head")),
                (POS_INF, String::from("tail")),
            ],
            counts: BTreeMap::new(),
        };
        for k in keys {
            reg.mint(k);
        }
        reg
    }

    pub fn mint(&mut self, key: i64) -> NodeId {
        let n = self.counts.entry(key).or_insert(0);
        let label = if *n == 0 {
            format!("X{key}")
        } else {
            format!("X{key}.{n}")
        };
        *n += 1;
        self.nodes.push((key, label));
        NodeId(self.nodes.len() as u32 - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn key(&self, n: NodeId) -> i64 {
        self.nodes[n.0 as usize].0
    }

    pub fn label(&self, n: NodeId) -> &str {
        &self.nodes[n.0 as usize].1
    }

    pub fn find(&self, label: &str) -> Option<NodeId> {
        self.nodes
            .iter()
            .position(|(_, l)| l == label)
            .map(|i| NodeId(i as u32))
    }

    /// Successor map of the initial chain head -> sorted keys -> tail.
    pub fn initial_chain(&self) -> BTreeMap<NodeId, NodeId> {
        let mut next = BTreeMap::new();
        let mut prev = HEAD;
        for i in 2..self.nodes.len() {
            next.insert(prev, NodeId(i as u32));
            prev = NodeId(i as u32);
        }
        next.insert(prev, TAIL);
        next
    }
}

// ---------------------------------------------------------------------------
// schedules

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub struct SetOpDecl {
    pub tag: String,
    pub kind: SetOpKind,
    pub key: i64,
}

impl SetOpDecl {
    pub fn render(&self) -> String {
        format!("{}.{}({})", self.tag, self.kind.name(), self.key)
    }
}

/// One prescribed high-level access: the `op`-th declared operation
/// reads or writes the node currently labelled `label`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub struct SchedPoint {
    pub op: usize,
    pub write: bool,
    pub label: String,
}

/// A total order over the read/write accesses of a group of operations.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub struct SetSchedule {
    pub init: Vec<i64>,
    pub ops: Vec<SetOpDecl>,
    pub points: Vec<SchedPoint>,
}

impl SetSchedule {
    pub fn render(&self) -> String {
        let mut out = String::from("init:");
        for k in &self.init {
            out.push_str(&format!(" {k}"));
        }
        out.push('\n');
        for (i, p) in self.points.iter().enumerate() {
            if i > 0 {
                out.push_str(" <\n");
            }
            let rw = if p.write { "W" } else { "R" };
            out.push_str(&format!("{}.{}({})", self.ops[p.op].render(), rw, p.label));
        }
        out.push('\n');
        out
    }
}

// ---------------------------------------------------------------------------
// the sequential code, as a resumable interpreter

/// What the sequential code wants to do next.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub enum LlAccess {
    Read(NodeId),
    /// Overwrite `target`'s successor. `fresh_key` is set for an insert,
    /// which links a new node holding that key in front of `succ`;
    /// a remove links `target` directly to `succ`.
    Write {
        target: NodeId,
        payload: i64,
        succ: NodeId,
        fresh_key: Option<i64>,
    },
    Respond(bool),
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug)]
enum LlSt {
    Start,
    Loop {
        prev: NodeId,
        prev_payload: i64,
        curr: NodeId,
    },
    Write {
        target: NodeId,
        payload: i64,
        succ: NodeId,
        fresh: bool,
        resp: bool,
    },
    Done(bool),
}

/// One operation of the sequential list code, advanced by feeding it the
/// values its reads returned. Every implementation runs this interpreter;
/// only the surrounding synchronization differs.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub struct LlCode {
    pub kind: SetOpKind,
    pub key: i64,
    st: LlSt,
}

impl LlCode {
    pub fn new(kind: SetOpKind, key: i64) -> LlCode {
        LlCode {
            kind,
            key,
            st: LlSt::Start,
        }
    }

    pub fn next_access(&self) -> LlAccess {
        match &self.st {
            LlSt::Start => LlAccess::Read(HEAD),
            LlSt::Loop { curr, .. } => LlAccess::Read(*curr),
            LlSt::Write {
                target,
                payload,
                succ,
                fresh,
                ..
            } => LlAccess::Write {
                target: *target,
                payload: *payload,
                succ: *succ,
                fresh_key: if *fresh { Some(self.key) } else { None },
            },
            LlSt::Done(b) => LlAccess::Respond(*b),
        }
    }

    /// Feed the (payload, successor) pair a read returned.
    pub fn feed_read(&mut self, payload: i64, next: NodeId) {
        match self.st.clone() {
            LlSt::Start => {
                self.st = LlSt::Loop {
                    prev: HEAD,
                    prev_payload: payload,
                    curr: next,
                };
            }
            LlSt::Loop {
                prev,
                prev_payload,
                curr,
            } => {
                if payload < self.key {
                    self.st = LlSt::Loop {
                        prev: curr,
                        prev_payload: payload,
                        curr: next,
                    };
                    return;
                }
                let present = payload == self.key;
                self.st = match self.kind {
                    SetOpKind::Contains => LlSt::Done(present),
                    SetOpKind::Insert => {
                        if present {
                            LlSt::Done(false)
                        } else {
                            LlSt::Write {
                                target: prev,
                                payload: prev_payload,
                                succ: curr,
                                fresh: true,
                                resp: true,
                            }
                        }
                    }
                    SetOpKind::Remove => {
                        if !present {
                            LlSt::Done(false)
                        } else {
                            // unlink curr: prev's successor becomes curr's
                            LlSt::Write {
                                target: prev,
                                payload: prev_payload,
                                succ: next,
                                fresh: false,
                                resp: true,
                            }
                        }
                    }
                };
            }
            _ => unreachable!("feed_read outside a read"),
        }
    }

    pub fn write_done(&mut self) {
        match &self.st {
            LlSt::Write { resp, .. } => self.st = LlSt::Done(*resp),
            _ => unreachable!("write_done outside a write"),
        }
    }

    pub fn done(&self) -> Option<bool> {
        match &self.st {
            LlSt::Done(b) => Some(*b),
            _ => None,
        }
    }
}

/// Runs one operation against a plain sorted list, returning the new list,
/// the response, and the access trace as (is_write, label) pairs.
pub fn seq_op(state: &[i64], kind: SetOpKind, key: i64) -> (Vec<i64>, bool, Vec<(bool, String)>) {
    let reg = Registry::new(state);
    let mut next = reg.initial_chain();
    let mut reg = reg;
    let mut code = LlCode::new(kind, key);
    let mut trace = Vec::new();
    loop {
        match code.next_access() {
            LlAccess::Read(n) => {
                trace.push((false, String::from(reg.label(n))));
                code.feed_read(reg.key(n), next.get(&n).copied().unwrap_or(TAIL));
            }
            LlAccess::Write {
                target,
                succ,
                fresh_key,
                ..
            } => {
                trace.push((true, String::from(reg.label(target))));
                match fresh_key {
                    Some(k) => {
                        let m = reg.mint(k);
                        next.insert(m, succ);
                        next.insert(target, m);
                    }
                    None => {
                        next.insert(target, succ);
                    }
                }
                code.write_done();
            }
            LlAccess::Respond(b) => {
                let mut out = Vec::new();
                let mut n = next[&HEAD];
                while n != TAIL {
                    out.push(reg.key(n));
                    n = next[&n];
                }
                return (out, b, trace);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// atomic replay: reference semantics for schedules

pub struct Replay {
    pub reg: Registry,
    pub resps: Vec<bool>,
    /// (op, write, node, payload, succ) per point, in schedule order.
    pub trace: Vec<(usize, bool, NodeId, i64, NodeId)>,
    pub final_next: BTreeMap<NodeId, NodeId>,
}

impl Replay {
    pub fn final_keys(&self) -> BTreeSet<i64> {
        let mut out = BTreeSet::new();
        let mut n = self.final_next[&HEAD];
        while n != TAIL {
            out.insert(self.reg.key(n));
            n = self.final_next[&n];
        }
        out
    }
}

/// Replays the schedule with every access taking effect instantly, the
/// reference for both observability and the corpus generator. `None` when
/// the prescribed accesses diverge from what the code would actually do,
/// or when some operation is left unfinished.
pub fn atomic_replay(s: &SetSchedule) -> Option<Replay> {
    let mut reg = Registry::new(&s.init);
    let mut next = reg.initial_chain();
    let mut codes: Vec<LlCode> = s.ops.iter().map(|d| LlCode::new(d.kind, d.key)).collect();
    let mut trace = Vec::new();
    for p in &s.points {
        let code = codes.get_mut(p.op)?;
        match code.next_access() {
            LlAccess::Read(n) => {
                if p.write || reg.label(n) != p.label {
                    return None;
                }
                let succ = next.get(&n).copied().unwrap_or(TAIL);
                trace.push((p.op, false, n, reg.key(n), succ));
                code.feed_read(reg.key(n), succ);
            }
            LlAccess::Write {
                target,
                payload,
                succ,
                fresh_key,
            } => {
                if !p.write || reg.label(target) != p.label {
                    return None;
                }
                let linked = match fresh_key {
                    Some(k) => {
                        let m = reg.mint(k);
                        next.insert(m, succ);
                        next.insert(target, m);
                        m
                    }
                    None => {
                        next.insert(target, succ);
                        succ
                    }
                };
                trace.push((p.op, true, target, payload, linked));
                code.write_done();
            }
            LlAccess::Respond(_) => return None,
        }
    }
    let resps: Option<Vec<bool>> = codes.iter().map(|c| c.done()).collect();
    Some(Replay {
        reg,
        resps: resps?,
        trace,
        final_next: next,
    })
}

// ---------------------------------------------------------------------------
// exported histories and the two-level correctness check

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub enum OpResp {
    Done(bool),
    Bot,
    Pending,
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub struct PtEv {
    pub write: bool,
    pub node: NodeId,
    pub payload: i64,
    /// Successor read or linked; absent on a failed write attempt.
    pub next: Option<NodeId>,
    pub pos: usize,
    pub aborted: bool,
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub struct OpTrace {
    pub instance: usize,
    pub kind: SetOpKind,
    pub key: i64,
    pub resp: OpResp,
    pub events: Vec<PtEv>,
    pub inv: usize,
    pub ret: usize,
}

#[derive(Clone, Debug)]
pub struct SetExport {
    /// Initial key set per instance (one entry unless composing).
    pub init: Vec<Vec<i64>>,
    /// Node registry per instance, for resolving minted node keys.
    pub regs: Vec<Registry>,
    pub ops: Vec<OpTrace>,
}

/// Is this operation's own trace something the sequential code could have
/// produced against some sorted list? Checked purely from the values the
/// operation witnessed. A trailing aborted access is discarded first; an
/// incomplete or bottom operation only needs a consistent prefix.
pub fn ll_local_ok(op: &OpTrace, reg: &Registry) -> bool {
    let mut evs: &[PtEv] = &op.events;
    if let Some(last) = evs.last() {
        if last.aborted {
            evs = &evs[..evs.len() - 1];
        }
    }
    if evs.iter().any(|e| e.aborted) {
        return false;
    }
    let resp = match op.resp {
        OpResp::Done(b) => Some(b),
        _ => None,
    };
    let prefix_ok = resp.is_none();

    // R(head)
    let Some(e) = evs.first() else {
        return prefix_ok;
    };
    if e.write || e.node != HEAD || e.payload != NEG_INF {
        return false;
    }
    let mut prev = HEAD;
    let mut prev_payload = NEG_INF;
    let mut curr = match e.next {
        Some(n) => n,
        None => return false,
    };
    let mut i = 1;
    // traversal: strictly ascending payloads along witnessed successors
    let tval = loop {
        let Some(e) = evs.get(i) else {
            return prefix_ok;
        };
        if e.write || e.node != curr || e.payload <= prev_payload {
            return false;
        }
        let Some(nx) = e.next else { return false };
        i += 1;
        if e.payload < op.key {
            prev = curr;
            prev_payload = e.payload;
            curr = nx;
        } else {
            break (e.payload, nx);
        }
    };
    let present = tval.0 == op.key;
    let needs_write = match op.kind {
        SetOpKind::Contains => false,
        SetOpKind::Insert => !present,
        SetOpKind::Remove => present,
    };
    if !needs_write {
        let expect = match op.kind {
            SetOpKind::Contains => present,
            // a write-free update found nothing to do
            SetOpKind::Insert => !present,
            SetOpKind::Remove => present,
        };
        return evs.len() == i
            && match resp {
                Some(r) => r == expect,
                None => true,
            };
    }
    let Some(w) = evs.get(i) else {
        return prefix_ok;
    };
    if !w.write || w.node != prev || w.payload != prev_payload {
        return false;
    }
    let Some(nx) = w.next else { return false };
    let link_ok = match op.kind {
        // a fresh node carrying exactly the inserted key
        SetOpKind::Insert => reg.key(nx) == op.key && nx != curr,
        // splice straight to the witnessed successor of the removed node
        SetOpKind::Remove => nx == tval.1,
        SetOpKind::Contains => unreachable!(),
    };
    if !link_ok {
        return false;
    }
    // the write happens exactly when the operation succeeds
    evs.len() == i + 1 && resp.unwrap_or(true)
}

/// High-level operation record for the set-level linearizability check.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub struct HlOp {
    pub instance: usize,
    pub kind: SetOpKind,
    pub key: i64,
    /// `None`: a pending operation, free to take effect with any response
    /// or not at all.
    pub resp: Option<bool>,
    pub inv: usize,
    pub ret: usize,
}

/// Linearizability of insert/remove/contains histories against plain set
/// semantics, one independent set per instance. Exhaustive with
/// memoization; histories here are small by construction.
pub fn linearizable_set(init: &[Vec<i64>], ops: &[HlOp]) -> bool {
    assert!(ops.len() <= 32, "history too large for the bitmask search");
    let full: u32 = if ops.len() == 32 {
        u32::MAX
    } else {
        (1u32 << ops.len()) - 1
    };
    let state: Vec<BTreeSet<i64>> = init.iter().map(|ks| ks.iter().copied().collect()).collect();
    let mut seen: BTreeSet<(u32, Vec<BTreeSet<i64>>)> = BTreeSet::new();
    fn go(
        ops: &[HlOp],
        remaining: u32,
        state: &Vec<BTreeSet<i64>>,
        seen: &mut BTreeSet<(u32, Vec<BTreeSet<i64>>)>,
    ) -> bool {
        if remaining == 0 {
            return true;
        }
        if !seen.insert((remaining, state.clone())) {
            return false;
        }
        for i in 0..ops.len() {
            if remaining & (1 << i) == 0 {
                continue;
            }
            // i can go next only if no other remaining op finished before
            // it started
            let blocked = (0..ops.len()).any(|j| {
                j != i && remaining & (1 << j) != 0 && ops[j].ret < ops[i].inv
            });
            if blocked {
                continue;
            }
            let op = &ops[i];
            // a pending op may simply never take effect
            if op.resp.is_none() && go(ops, remaining & !(1 << i), state, seen) {
                return true;
            }
            let s = &state[op.instance];
            let present = s.contains(&op.key);
            let (effect, r) = match op.kind {
                SetOpKind::Contains => (false, present),
                SetOpKind::Insert => (!present, !present),
                SetOpKind::Remove => (present, present),
            };
            if let Some(want) = op.resp {
                if want != r {
                    continue;
                }
            }
            let mut st2 = state.clone();
            if effect {
                if op.kind == SetOpKind::Insert {
                    st2[op.instance].insert(op.key);
                } else {
                    st2[op.instance].remove(&op.key);
                }
            }
            if go(ops, remaining & !(1 << i), &st2, seen) {
                return true;
            }
        }
        false
    }
    go(ops, full, &state, &mut seen)
}

/// The two-level check: every operation's trace is sequentially
/// explainable on its own, and the high-level history linearizes. Bottom
/// operations take no effect; pending ones may or may not.
pub fn ls_linearizable(export: &SetExport) -> bool {
    if !export
        .ops
        .iter()
        .all(|op| ll_local_ok(op, &export.regs[op.instance]))
    {
        return false;
    }
    let hl: Vec<HlOp> = export
        .ops
        .iter()
        .filter(|op| op.resp != OpResp::Bot)
        .map(|op| HlOp {
            instance: op.instance,
            kind: op.kind,
            key: op.key,
            resp: match op.resp {
                OpResp::Done(b) => Some(b),
                _ => None,
            },
            inv: op.inv,
            ret: op.ret,
        })
        .collect();
    linearizable_set(&export.init, &hl)
}

/// No lost updates: replay the schedule atomically, then probe every legal
/// key against the reconstructed list with sequential queries; observable
/// means the combined history still linearizes.
pub fn is_observable(s: &SetSchedule) -> bool {
    let Some(rep) = atomic_replay(s) else {
        return false;
    };
    let keys = rep.final_keys();
    let mut first = vec![usize::MAX; s.ops.len()];
    let mut last = vec![0usize; s.ops.len()];
    for (pos, (op, ..)) in rep.trace.iter().enumerate() {
        first[*op] = first[*op].min(pos);
        last[*op] = pos;
    }
    let mut hl: Vec<HlOp> = s
        .ops
        .iter()
        .enumerate()
        .map(|(i, d)| HlOp {
            instance: 0,
            kind: d.kind,
            key: d.key,
            resp: Some(rep.resps[i]),
            inv: first[i],
            ret: last[i],
        })
        .collect();
    let base = rep.trace.len();
    for (i, v) in (1..=5).enumerate() {
        hl.push(HlOp {
            instance: 0,
            kind: SetOpKind::Contains,
            key: v,
            resp: Some(keys.contains(&v)),
            inv: base + i,
            ret: base + i,
        });
    }
    linearizable_set(&[s.init.clone()], &hl)
}

// ---------------------------------------------------------------------------
// corpus generation

/// All multisets of up to three operations over {insert,remove,contains}
/// x {1..5}.
pub fn op_multisets() -> Vec<Vec<(SetOpKind, i64)>> {
    let mut atoms = Vec::new();
    for kind in [SetOpKind::Insert, SetOpKind::Remove, SetOpKind::Contains] {
        for k in 1..=5 {
            atoms.push((kind, k));
        }
    }
    let mut out = Vec::new();
    for a in 0..atoms.len() {
        out.push(vec![atoms[a]]);
        for b in a..atoms.len() {
            out.push(vec![atoms[a], atoms[b]]);
            for c in b..atoms.len() {
                out.push(vec![atoms[a], atoms[b], atoms[c]]);
            }
        }
    }
    out
}

/// Every schedule the given operations can produce under atomic replay,
/// one operation per process, capped at `max_points` accesses.
pub fn enumerate_schedules(
    init: &[i64],
    ops: &[(SetOpKind, i64)],
    max_points: usize,
) -> Vec<SetSchedule> {
    let decls: Vec<SetOpDecl> = ops
        .iter()
        .enumerate()
        .map(|(i, (kind, key))| SetOpDecl {
            tag: format!("T{}", i + 1),
            kind: *kind,
            key: *key,
        })
        .collect();
    let reg = Registry::new(init);
    let next = reg.initial_chain();
    let codes: Vec<LlCode> = ops.iter().map(|(k, v)| LlCode::new(*k, *v)).collect();
    let mut out = Vec::new();
    let mut points = Vec::new();
    gen_rec(
        init, &decls, reg, next, codes, &mut points, max_points, &mut out,
    );
    out
}

fn gen_rec(
    init: &[i64],
    decls: &[SetOpDecl],
    reg: Registry,
    next: BTreeMap<NodeId, NodeId>,
    codes: Vec<LlCode>,
    points: &mut Vec<SchedPoint>,
    cap: usize,
    out: &mut Vec<SetSchedule>,
) {
    if codes.iter().all(|c| c.done().is_some()) {
        out.push(SetSchedule {
            init: init.to_vec(),
            ops: decls.to_vec(),
            points: points.clone(),
        });
        return;
    }
    if points.len() >= cap {
        return;
    }
    for i in 0..codes.len() {
        if codes[i].done().is_some() {
            continue;
        }
        let mut reg2 = reg.clone();
        let mut next2 = next.clone();
        let mut codes2 = codes.clone();
        let p = match codes2[i].next_access() {
            LlAccess::Read(n) => {
                let succ = next2.get(&n).copied().unwrap_or(TAIL);
                codes2[i].feed_read(reg2.key(n), succ);
                SchedPoint {
                    op: i,
                    write: false,
                    label: String::from(reg2.label(n)),
                }
            }
            LlAccess::Write {
                target,
                succ,
                fresh_key,
                ..
            } => {
                match fresh_key {
                    Some(k) => {
                        let m = reg2.mint(k);
                        next2.insert(m, succ);
                        next2.insert(target, m);
                    }
                    None => {
                        next2.insert(target, succ);
                    }
                }
                codes2[i].write_done();
                SchedPoint {
                    op: i,
                    write: true,
                    label: String::from(reg2.label(target)),
                }
            }
            LlAccess::Respond(_) => unreachable!(),
        };
        points.push(p);
        gen_rec(init, decls, reg2, next2, codes2, points, cap, out);
        points.pop();
    }
}

// ---------------------------------------------------------------------------
// the implementations, as step machines over the substrate

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub enum SetImpl {
    Seq,
    LockCoupling,
    TmBacked(LpVariant),
    VersionLock,
}

/// What a machine wants to do next, from the driver's point of view.
#[derive(Clone, PartialEq, Eq, Debug)]
enum Drive {
    Internal,
    Point { write: bool, node: NodeId },
    Blocked,
    Done,
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug)]
enum RunEv {
    Inv { op: usize },
    Pt { op: usize, ev: PtEv },
    Resp { op: usize, resp: OpResp },
    /// Retract the op's most recent point; kept as its own entry so the
    /// log stays append-only (the drivers backtrack by truncation).
    PtAbort { op: usize },
    Base(Event),
}

fn mark_last_pt_aborted(log: &mut Vec<RunEv>, op: usize) {
    log.push(RunEv::PtAbort { op });
}

// --- lock-coupling layout: per node a content register and a lock word
// (0 free, -1 exclusive, k>0 shared holders)

fn hoh_content(n: NodeId) -> ObjId {
    ObjId(2 * n.0)
}

fn hoh_lock(n: NodeId) -> ObjId {
    ObjId(2 * n.0 + 1)
}

fn chain_content(reg: &Registry, cap: usize) -> Vec<Val> {
    let next = reg.initial_chain();
    (0..cap)
        .map(|i| {
            let n = NodeId(i as u32);
            if i < reg.len() {
                let succ = next.get(&n).map(|s| s.0 as i64).unwrap_or(-1);
                Val::pair(reg.key(n), succ)
            } else {
                Val::pair(0, -1)
            }
        })
        .collect()
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug)]
enum HohPh {
    Idle,
    /// contains: take the shared lock on `node` before reading it
    AcqShared { node: NodeId },
    ReadNode { node: NodeId, plain: bool },
    /// hand-over-hand: drop the previous shared lock after the read
    RelPrev { prev: NodeId },
    AcqHead,
    AcqWrite { node: NodeId },
    WriteNode { node: NodeId },
    RelWrite { node: NodeId },
    Respond(bool),
    RelHead { resp: bool },
    RelLast { resp: bool },
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug)]
struct HohOp {
    proc: ProcId,
    idx: usize,
    code: LlCode,
    ph: HohPh,
    /// shared lock currently held by a contains
    held: Option<NodeId>,
    /// updater holds the head's exclusive lock from first read to response
    head_held: bool,
    started: bool,
    resp: OpResp,
}

impl HohOp {
    fn is_query(&self) -> bool {
        self.code.kind == SetOpKind::Contains
    }

    fn dispatch(&self) -> HohPh {
        match self.code.next_access() {
            LlAccess::Read(n) => {
                if self.is_query() {
                    HohPh::AcqShared { node: n }
                } else if n == HEAD && !self.head_held {
                    HohPh::AcqHead
                } else {
                    HohPh::ReadNode {
                        node: n,
                        plain: true,
                    }
                }
            }
            LlAccess::Write { target, .. } => {
                if target == HEAD && self.head_held {
                    // already exclusively held for the whole operation
                    HohPh::WriteNode { node: target }
                } else {
                    HohPh::AcqWrite { node: target }
                }
            }
            LlAccess::Respond(b) => HohPh::Respond(b),
        }
    }

    fn poised(&self, w: &World) -> Drive {
        match &self.ph {
            HohPh::Idle => {
                if self.resp != OpResp::Pending {
                    Drive::Done
                } else {
                    Drive::Internal
                }
            }
            HohPh::AcqShared { node } => {
                let v = w.mem.get(hoh_lock(*node)).as_int().unwrap();
                if v < 0 {
                    Drive::Blocked
                } else {
                    Drive::Internal
                }
            }
            HohPh::AcqHead => {
                let v = w.mem.get(hoh_lock(HEAD)).as_int().unwrap();
                if v != 0 {
                    Drive::Blocked
                } else {
                    Drive::Internal
                }
            }
            HohPh::AcqWrite { node } => {
                let v = w.mem.get(hoh_lock(*node)).as_int().unwrap();
                if v != 0 {
                    Drive::Blocked
                } else {
                    Drive::Internal
                }
            }
            HohPh::ReadNode { node, .. } => Drive::Point {
                write: false,
                node: *node,
            },
            HohPh::WriteNode { node } => Drive::Point {
                write: true,
                node: *node,
            },
            _ => Drive::Internal,
        }
    }

    fn step(&mut self, w: &mut World, reg: &mut Registry, log: &mut Vec<RunEv>) {
        if !self.started {
            self.started = true;
            log.push(RunEv::Inv { op: self.idx });
        }
        match self.ph.clone() {
            HohPh::Idle => self.ph = self.dispatch(),
            HohPh::AcqShared { node } => {
                let cur = w.mem.get(hoh_lock(node)).clone();
                let ev = w.direct(
                    self.proc,
                    None,
                    hoh_lock(node),
                    Prim::Cas {
                        expect: cur.clone(),
                        new: Val::int(cur.as_int().unwrap() + 1),
                    },
                );
                log.push(RunEv::Base(ev));
                self.ph = HohPh::ReadNode { node, plain: false };
            }
            HohPh::AcqHead => {
                let ev = w.direct(
                    self.proc,
                    None,
                    hoh_lock(HEAD),
                    Prim::Cas {
                        expect: Val::int(0),
                        new: Val::int(-1),
                    },
                );
                log.push(RunEv::Base(ev));
                self.head_held = true;
                self.ph = HohPh::ReadNode {
                    node: HEAD,
                    plain: true,
                };
            }
            HohPh::AcqWrite { node } => {
                let ev = w.direct(
                    self.proc,
                    None,
                    hoh_lock(node),
                    Prim::Cas {
                        expect: Val::int(0),
                        new: Val::int(-1),
                    },
                );
                log.push(RunEv::Base(ev));
                self.ph = HohPh::WriteNode { node };
            }
            HohPh::ReadNode { node, plain } => {
                let ev = w.direct(self.proc, None, hoh_content(node), Prim::Read);
                let ret = match &ev.kind {
                    EventKind::Direct { ret, .. } => ret.clone(),
                    _ => unreachable!(),
                };
                log.push(RunEv::Base(ev));
                let payload = ret.field(0).unwrap();
                let succ = succ_node(ret.field(1).unwrap());
                log.push(RunEv::Pt {
                    op: self.idx,
                    ev: PtEv {
                        write: false,
                        node,
                        payload,
                        next: Some(succ),
                        pos: 0,
                        aborted: false,
                    },
                });
                self.code.feed_read(payload, succ);
                self.ph = if plain {
                    HohPh::Idle
                } else {
                    match self.held.replace(node) {
                        Some(prev) => HohPh::RelPrev { prev },
                        None => HohPh::Idle,
                    }
                };
            }
            HohPh::RelPrev { prev } => {
                let ev = w.direct(self.proc, None, hoh_lock(prev), Prim::Fadd(-1));
                log.push(RunEv::Base(ev));
                self.ph = HohPh::Idle;
            }
            HohPh::WriteNode { node } => {
                let (payload, succ, fresh_key) = match self.code.next_access() {
                    LlAccess::Write {
                        payload,
                        succ,
                        fresh_key,
                        ..
                    } => (payload, succ, fresh_key),
                    _ => unreachable!(),
                };
                let linked = match fresh_key {
                    Some(k) => {
                        let m = reg.mint(k);
                        // fresh nodes are initialized privately before the
                        // linking write publishes them
                        w.mem.init(hoh_content(m), Val::pair(k, succ.0 as i64));
                        w.mem.init(hoh_lock(m), Val::int(0));
                        m
                    }
                    None => succ,
                };
                let ev = w.direct(
                    self.proc,
                    None,
                    hoh_content(node),
                    Prim::Write(Val::pair(payload, linked.0 as i64)),
                );
                log.push(RunEv::Base(ev));
                log.push(RunEv::Pt {
                    op: self.idx,
                    ev: PtEv {
                        write: true,
                        node,
                        payload,
                        next: Some(linked),
                        pos: 0,
                        aborted: false,
                    },
                });
                self.code.write_done();
                self.ph = if node == HEAD && self.head_held {
                    HohPh::Idle
                } else {
                    HohPh::RelWrite { node }
                };
            }
            HohPh::RelWrite { node } => {
                let ev = w.direct(self.proc, None, hoh_lock(node), Prim::Write(Val::int(0)));
                log.push(RunEv::Base(ev));
                self.ph = HohPh::Idle;
            }
            HohPh::Respond(b) => {
                self.ph = if self.head_held {
                    HohPh::RelHead { resp: b }
                } else if self.held.is_some() {
                    HohPh::RelLast { resp: b }
                } else {
                    self.resp = OpResp::Done(b);
                    log.push(RunEv::Resp {
                        op: self.idx,
                        resp: self.resp,
                    });
                    HohPh::Idle
                };
            }
            HohPh::RelHead { resp } => {
                let ev = w.direct(self.proc, None, hoh_lock(HEAD), Prim::Write(Val::int(0)));
                log.push(RunEv::Base(ev));
                self.head_held = false;
                self.resp = OpResp::Done(resp);
                log.push(RunEv::Resp {
                    op: self.idx,
                    resp: self.resp,
                });
                self.ph = HohPh::Idle;
            }
            HohPh::RelLast { resp } => {
                let prev = self.held.take().unwrap();
                let ev = w.direct(self.proc, None, hoh_lock(prev), Prim::Fadd(-1));
                log.push(RunEv::Base(ev));
                self.resp = OpResp::Done(resp);
                log.push(RunEv::Resp {
                    op: self.idx,
                    resp: self.resp,
                });
                self.ph = HohPh::Idle;
            }
        }
    }
}

// --- version-lock layout: per node the value register, a deletion flag,
// and a (version, locked) word

/// Successor half of a content register; the tail carries -1.
fn succ_node(raw: i64) -> NodeId {
    if raw < 0 {
        TAIL
    } else {
        NodeId(raw as u32)
    }
}

fn vl_var(n: NodeId) -> ObjId {
    ObjId(3 * n.0)
}

fn vl_flag(n: NodeId) -> ObjId {
    ObjId(3 * n.0 + 1)
}

fn vl_lock(n: NodeId) -> ObjId {
    ObjId(3 * n.0 + 2)
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug)]
enum VlPh {
    Idle,
    RdLock1 { node: NodeId },
    RdVal { node: NodeId, ver1: Val },
    RdFlag { node: NodeId, ver1: Val, val: Val },
    RdLock2 { node: NodeId, ver1: Val, val: Val, flagged: bool },
    /// insert write: cas-lock the target at its remembered version
    InsCas { node: NodeId, ver: i64 },
    InsWrite { node: NodeId, ver: i64, linked: NodeId },
    InsRel { node: NodeId, ver: i64 },
    /// remove write: cas-lock the target, then the unlinked node
    RemCas1 { node: NodeId, ver: i64 },
    RemCas2 { node: NodeId, ver: i64, other: NodeId, over: i64 },
    RemFlag { node: NodeId, ver: i64, other: NodeId, over: i64 },
    RemWrite { node: NodeId, ver: i64, other: NodeId, over: i64 },
    RemRel1 { node: NodeId, ver: i64, other: NodeId, over: i64 },
    RemRel2 { other: NodeId, over: i64 },
    Respond(bool),
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug)]
struct VlOp {
    proc: ProcId,
    idx: usize,
    code: LlCode,
    ph: VlPh,
    /// the last two (node, version) pairs this operation read
    rbuf: Vec<(NodeId, i64)>,
    started: bool,
    resp: OpResp,
}

impl VlOp {
    fn rbuf_push(&mut self, node: NodeId, ver: i64) {
        self.rbuf.retain(|(n, _)| *n != node);
        self.rbuf.push((node, ver));
        if self.rbuf.len() > 2 {
            self.rbuf.remove(0);
        }
    }

    fn rbuf_ver(&self, node: NodeId) -> i64 {
        self.rbuf
            .iter()
            .find(|(n, _)| *n == node)
            .map(|(_, v)| *v)
            .expect("written node no longer in the rotating buffer")
    }

    fn rbuf_other(&self, node: NodeId) -> (NodeId, i64) {
        *self
            .rbuf
            .iter()
            .find(|(n, _)| *n != node)
            .expect("no second buffered node to lock")
    }

    fn dispatch(&self) -> VlPh {
        match self.code.next_access() {
            LlAccess::Read(n) => VlPh::RdLock1 { node: n },
            LlAccess::Write {
                target, fresh_key, ..
            } => {
                let ver = self.rbuf_ver(target);
                if fresh_key.is_some() {
                    VlPh::InsCas { node: target, ver }
                } else {
                    VlPh::RemCas1 { node: target, ver }
                }
            }
            LlAccess::Respond(b) => VlPh::Respond(b),
        }
    }

    fn poised(&self) -> Drive {
        match &self.ph {
            VlPh::Idle => {
                if self.resp != OpResp::Pending {
                    Drive::Done
                } else {
                    Drive::Internal
                }
            }
            VlPh::RdVal { node, .. } => Drive::Point {
                write: false,
                node: *node,
            },
            VlPh::InsCas { node, .. } | VlPh::RemCas1 { node, .. } => Drive::Point {
                write: true,
                node: *node,
            },
            _ => Drive::Internal,
        }
    }

    fn bot(&mut self, log: &mut Vec<RunEv>) {
        self.resp = OpResp::Bot;
        log.push(RunEv::Resp {
            op: self.idx,
            resp: OpResp::Bot,
        });
        self.ph = VlPh::Idle;
    }

    fn read(&mut self, w: &mut World, obj: ObjId, log: &mut Vec<RunEv>) -> Val {
        let ev = w.direct(self.proc, None, obj, Prim::Read);
        let ret = match &ev.kind {
            EventKind::Direct { ret, .. } => ret.clone(),
            _ => unreachable!(),
        };
        log.push(RunEv::Base(ev));
        ret
    }

    fn cas_lock(&mut self, w: &mut World, node: NodeId, ver: i64, log: &mut Vec<RunEv>) -> bool {
        let ev = w.direct(
            self.proc,
            None,
            vl_lock(node),
            Prim::Cas {
                expect: Val::pair(ver, 0),
                new: Val::pair(ver, 1),
            },
        );
        let ok = match &ev.kind {
            EventKind::Direct { ret, .. } => ret == &Val::int(1),
            _ => unreachable!(),
        };
        log.push(RunEv::Base(ev));
        ok
    }

    fn step(&mut self, w: &mut World, reg: &mut Registry, log: &mut Vec<RunEv>) {
        if !self.started {
            self.started = true;
            log.push(RunEv::Inv { op: self.idx });
        }
        match self.ph.clone() {
            VlPh::Idle => self.ph = self.dispatch(),
            VlPh::RdLock1 { node } => {
                let ver1 = self.read(w, vl_lock(node), log);
                self.ph = VlPh::RdVal { node, ver1 };
            }
            VlPh::RdVal { node, ver1 } => {
                let val = self.read(w, vl_var(node), log);
                log.push(RunEv::Pt {
                    op: self.idx,
                    ev: PtEv {
                        write: false,
                        node,
                        payload: val.field(0).unwrap(),
                        next: Some(succ_node(val.field(1).unwrap())),
                        pos: 0,
                        aborted: false,
                    },
                });
                self.ph = VlPh::RdFlag { node, ver1, val };
            }
            VlPh::RdFlag { node, ver1, val } => {
                let r = self.read(w, vl_flag(node), log);
                self.ph = VlPh::RdLock2 {
                    node,
                    ver1,
                    val,
                    flagged: r == Val::int(1),
                };
            }
            VlPh::RdLock2 {
                node,
                ver1,
                val,
                flagged,
            } => {
                let l = self.read(w, vl_lock(node), log);
                if l != ver1 || flagged {
                    mark_last_pt_aborted(log, self.idx);
                    self.bot(log);
                    return;
                }
                self.rbuf_push(node, ver1.field(0).unwrap());
                self.code
                    .feed_read(val.field(0).unwrap(), succ_node(val.field(1).unwrap()));
                self.ph = VlPh::Idle;
            }
            VlPh::InsCas { node, ver } => {
                if !self.cas_lock(w, node, ver, log) {
                    log.push(RunEv::Pt {
                        op: self.idx,
                        ev: PtEv {
                            write: true,
                            node,
                            payload: 0,
                            next: None,
                            pos: 0,
                            aborted: true,
                        },
                    });
                    self.bot(log);
                    return;
                }
                let (payload, succ, key) = match self.code.next_access() {
                    LlAccess::Write {
                        payload,
                        succ,
                        fresh_key,
                        ..
                    } => (payload, succ, fresh_key.unwrap()),
                    _ => unreachable!(),
                };
                let m = reg.mint(key);
                w.mem.init(vl_var(m), Val::pair(key, succ.0 as i64));
                w.mem.init(vl_flag(m), Val::int(0));
                w.mem.init(vl_lock(m), Val::pair(0, 0));
                log.push(RunEv::Pt {
                    op: self.idx,
                    ev: PtEv {
                        write: true,
                        node,
                        payload,
                        next: Some(m),
                        pos: 0,
                        aborted: false,
                    },
                });
                self.ph = VlPh::InsWrite {
                    node,
                    ver,
                    linked: m,
                };
            }
            VlPh::InsWrite { node, ver, linked } => {
                let payload = match self.code.next_access() {
                    LlAccess::Write { payload, .. } => payload,
                    _ => unreachable!(),
                };
                let ev = w.direct(
                    self.proc,
                    None,
                    vl_var(node),
                    Prim::Write(Val::pair(payload, linked.0 as i64)),
                );
                log.push(RunEv::Base(ev));
                self.code.write_done();
                self.ph = VlPh::InsRel { node, ver };
            }
            VlPh::InsRel { node, ver } => {
                let ev = w.direct(
                    self.proc,
                    None,
                    vl_lock(node),
                    Prim::Write(Val::pair(ver + 1, 0)),
                );
                log.push(RunEv::Base(ev));
                self.ph = VlPh::Idle;
            }
            VlPh::RemCas1 { node, ver } => {
                let ok = self.cas_lock(w, node, ver, log);
                log.push(RunEv::Pt {
                    op: self.idx,
                    ev: PtEv {
                        write: true,
                        node,
                        payload: if ok {
                            match self.code.next_access() {
                                LlAccess::Write { payload, .. } => payload,
                                _ => unreachable!(),
                            }
                        } else {
                            0
                        },
                        next: if ok {
                            match self.code.next_access() {
                                LlAccess::Write { succ, .. } => Some(succ),
                                _ => unreachable!(),
                            }
                        } else {
                            None
                        },
                        pos: 0,
                        aborted: !ok,
                    },
                });
                if !ok {
                    self.bot(log);
                    return;
                }
                let (other, over) = self.rbuf_other(node);
                self.ph = VlPh::RemCas2 {
                    node,
                    ver,
                    other,
                    over,
                };
            }
            VlPh::RemCas2 {
                node,
                ver,
                other,
                over,
            } => {
                if !self.cas_lock(w, other, over, log) {
                    // the target stays locked: exactly the pseudocode, the
                    // operation is dead either way
                    mark_last_pt_aborted(log, self.idx);
                    self.bot(log);
                    return;
                }
                self.ph = VlPh::RemFlag {
                    node,
                    ver,
                    other,
                    over,
                };
            }
            VlPh::RemFlag {
                node,
                ver,
                other,
                over,
            } => {
                let ev = w.direct(self.proc, None, vl_flag(other), Prim::Write(Val::int(1)));
                log.push(RunEv::Base(ev));
                self.ph = VlPh::RemWrite {
                    node,
                    ver,
                    other,
                    over,
                };
            }
            VlPh::RemWrite {
                node,
                ver,
                other,
                over,
            } => {
                let (payload, succ) = match self.code.next_access() {
                    LlAccess::Write { payload, succ, .. } => (payload, succ),
                    _ => unreachable!(),
                };
                let ev = w.direct(
                    self.proc,
                    None,
                    vl_var(node),
                    Prim::Write(Val::pair(payload, succ.0 as i64)),
                );
                log.push(RunEv::Base(ev));
                self.code.write_done();
                self.ph = VlPh::RemRel1 {
                    node,
                    ver,
                    other,
                    over,
                };
            }
            VlPh::RemRel1 {
                node,
                ver,
                other,
                over,
            } => {
                let ev = w.direct(
                    self.proc,
                    None,
                    vl_lock(node),
                    Prim::Write(Val::pair(ver + 1, 0)),
                );
                log.push(RunEv::Base(ev));
                self.ph = VlPh::RemRel2 { other, over };
            }
            VlPh::RemRel2 { other, over } => {
                let ev = w.direct(
                    self.proc,
                    None,
                    vl_lock(other),
                    Prim::Write(Val::pair(over + 1, 0)),
                );
                log.push(RunEv::Base(ev));
                self.ph = VlPh::Idle;
            }
            VlPh::Respond(b) => {
                self.resp = OpResp::Done(b);
                log.push(RunEv::Resp {
                    op: self.idx,
                    resp: self.resp,
                });
                self.ph = VlPh::Idle;
            }
        }
    }
}

// --- the TM-backed variant: one growing transaction per operation

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug)]
struct StmOp {
    layout: LpLayout,
    idx: usize,
    code: LlCode,
    inner: LpProc,
    committed: bool,
    started: bool,
    resp: OpResp,
}

impl StmOp {
    fn poised(&self) -> Drive {
        use crate::machine::Machine;
        if self.resp != OpResp::Pending {
            return Drive::Done;
        }
        if self.inner.at_value_read() {
            if let LlAccess::Read(n) = self.code.next_access() {
                return Drive::Point {
                    write: false,
                    node: n,
                };
            }
            unreachable!("value read outside a traversal read");
        }
        if self.inner.at_write_buffer() {
            if let LlAccess::Write { target, .. } = self.code.next_access() {
                return Drive::Point {
                    write: true,
                    node: target,
                };
            }
            unreachable!("write buffer outside a traversal write");
        }
        let _ = Machine::done(&self.inner);
        Drive::Internal
    }

    fn step(&mut self, w: &mut World, reg: &mut Registry, log: &mut Vec<RunEv>) {
        use crate::machine::Machine;
        if !self.started {
            self.started = true;
            log.push(RunEv::Inv { op: self.idx });
        }
        if self.inner.awaiting_op() {
            match self.code.next_access() {
                LlAccess::Read(n) => self.inner.push_op(OpSpec::Read(TObj(n.0))),
                LlAccess::Write {
                    target,
                    payload,
                    succ,
                    fresh_key,
                } => {
                    let linked = match fresh_key {
                        Some(k) => {
                            let m = reg.mint(k);
                            // fresh node seeded in place, outside the
                            // transaction: unreachable until the linking
                            // write commits
                            w.mem.init(
                                self.layout.v(TObj(m.0)),
                                lp::pack(&Val::pair(k, succ.0 as i64), TxnId(0)),
                            );
                            m
                        }
                        None => succ,
                    };
                    self.inner.push_op(OpSpec::Write(
                        TObj(target.0),
                        Val::pair(payload, linked.0 as i64),
                    ));
                }
                LlAccess::Respond(_) => self.inner.push_op(OpSpec::TryC),
            }
            return;
        }
        if Machine::done(&self.inner) {
            self.resp = if self.committed {
                OpResp::Done(self.code.done().expect("committed before responding"))
            } else {
                OpResp::Bot
            };
            log.push(RunEv::Resp {
                op: self.idx,
                resp: self.resp,
            });
            return;
        }
        let value_read = if self.inner.at_value_read() {
            match self.code.next_access() {
                LlAccess::Read(n) => Some(n),
                _ => unreachable!("value read outside a traversal read"),
            }
        } else {
            None
        };
        let pending_write = match self.code.next_access() {
            LlAccess::Write {
                target, payload, ..
            } => Some((target, payload)),
            _ => None,
        };
        let mut sink = Sink::new();
        self.inner.micro(w, &mut sink);
        for entry in sink.log {
            match entry {
                LogEntry::Base(ev) => {
                    if let Some(node) = value_read {
                        if let EventKind::Direct { ret, .. } = &ev.kind {
                            let (content, _) = lp::unpack(ret);
                            log.push(RunEv::Pt {
                                op: self.idx,
                                ev: PtEv {
                                    write: false,
                                    node,
                                    payload: content.field(0).unwrap(),
                                    next: Some(succ_node(content.field(1).unwrap())),
                                    pos: 0,
                                    aborted: false,
                                },
                            });
                        }
                    }
                    log.push(RunEv::Base(ev));
                }
                LogEntry::Hist(h) => match h.kind {
                    HEventKind::ResRead(_, Some(v)) => {
                        self.code
                            .feed_read(v.field(0).unwrap(), succ_node(v.field(1).unwrap()));
                    }
                    HEventKind::ResRead(_, None) => {
                        mark_last_pt_aborted(log, self.idx);
                        self.resp = OpResp::Bot;
                        log.push(RunEv::Resp {
                            op: self.idx,
                            resp: OpResp::Bot,
                        });
                    }
                    HEventKind::ResWrite(_, ok) => {
                        if ok {
                            let (target, payload) =
                                pending_write.expect("write response without a pending write");
                            let linked = match self.inner.buffered_write(TObj(target.0)) {
                                Some(v) => succ_node(v.field(1).unwrap()),
                                None => unreachable!("buffered write vanished"),
                            };
                            log.push(RunEv::Pt {
                                op: self.idx,
                                ev: PtEv {
                                    write: true,
                                    node: target,
                                    payload,
                                    next: Some(linked),
                                    pos: 0,
                                    aborted: false,
                                },
                            });
                            self.code.write_done();
                        }
                    }
                    HEventKind::ResTryC(ok) => {
                        self.committed = ok;
                        if !ok {
                            self.resp = OpResp::Bot;
                            log.push(RunEv::Resp {
                                op: self.idx,
                                resp: OpResp::Bot,
                            });
                        }
                    }
                    _ => {}
                },
            }
        }
    }
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug)]
enum SetMachine {
    Hoh(HohOp),
    Vl(VlOp),
    Stm(StmOp),
}

impl SetMachine {
    fn poised(&self, w: &World) -> Drive {
        match self {
            SetMachine::Hoh(m) => m.poised(w),
            SetMachine::Vl(m) => m.poised(),
            SetMachine::Stm(m) => m.poised(),
        }
    }

    fn step(&mut self, w: &mut World, reg: &mut Registry, log: &mut Vec<RunEv>) {
        match self {
            SetMachine::Hoh(m) => m.step(w, reg, log),
            SetMachine::Vl(m) => m.step(w, reg, log),
            SetMachine::Stm(m) => m.step(w, reg, log),
        }
    }

    fn resp(&self) -> OpResp {
        match self {
            SetMachine::Hoh(m) => m.resp,
            SetMachine::Vl(m) => m.resp,
            SetMachine::Stm(m) => m.resp,
        }
    }

    fn decl(&self) -> (SetOpKind, i64) {
        match self {
            SetMachine::Hoh(m) => (m.code.kind, m.code.key),
            SetMachine::Vl(m) => (m.code.kind, m.code.key),
            SetMachine::Stm(m) => (m.code.kind, m.code.key),
        }
    }
}

fn build_machines(
    impl_: SetImpl,
    init: &[i64],
    ops: &[(SetOpKind, i64)],
) -> (World, Registry, Vec<SetMachine>) {
    let reg = Registry::new(init);
    let inserts = ops.iter().filter(|(k, _)| *k == SetOpKind::Insert).count();
    let cap = reg.len() + inserts;
    let mut w = World::new();
    let ms: Vec<SetMachine> = match impl_ {
        SetImpl::LockCoupling => {
            for (i, content) in chain_content(&reg, cap).into_iter().enumerate() {
                let n = NodeId(i as u32);
                w.mem.init(hoh_content(n), content);
                w.mem.init(hoh_lock(n), Val::int(0));
            }
            ops.iter()
                .enumerate()
                .map(|(i, (kind, key))| {
                    SetMachine::Hoh(HohOp {
                        proc: ProcId(i as u32 + 1),
                        idx: i,
                        code: LlCode::new(*kind, *key),
                        ph: HohPh::Idle,
                        held: None,
                        head_held: false,
                        started: false,
                        resp: OpResp::Pending,
                    })
                })
                .collect()
        }
        SetImpl::VersionLock => {
            for (i, content) in chain_content(&reg, cap).into_iter().enumerate() {
                let n = NodeId(i as u32);
                w.mem.init(vl_var(n), content);
                w.mem.init(vl_flag(n), Val::int(0));
                w.mem.init(vl_lock(n), Val::pair(0, 0));
            }
            ops.iter()
                .enumerate()
                .map(|(i, (kind, key))| {
                    SetMachine::Vl(VlOp {
                        proc: ProcId(i as u32 + 1),
                        idx: i,
                        code: LlCode::new(*kind, *key),
                        ph: VlPh::Idle,
                        rbuf: Vec::new(),
                        started: false,
                        resp: OpResp::Pending,
                    })
                })
                .collect()
        }
        SetImpl::TmBacked(variant) => {
            let layout = LpLayout {
                m: cap as u32,
                n: ops.len() as u32,
            };
            let contents = chain_content(&reg, cap);
            for (i, content) in contents.iter().enumerate() {
                let x = TObj(i as u32);
                w.mem.init(layout.v(x), lp::pack(content, TxnId(0)));
                w.mem.init(layout.l(x), Val::int(0));
                for p in 1..=layout.n {
                    w.mem.init(layout.r(ProcId(p), x), Val::int(0));
                }
            }
            ops.iter()
                .enumerate()
                .map(|(i, (kind, key))| {
                    SetMachine::Stm(StmOp {
                        layout,
                        idx: i,
                        code: LlCode::new(*kind, *key),
                        inner: LpProc::dynamic(
                            layout,
                            variant,
                            ProcId(i as u32 + 1),
                            TxnId(i as u32 + 1),
                        ),
                        committed: false,
                        started: false,
                        resp: OpResp::Pending,
                    })
                })
                .collect()
        }
        SetImpl::Seq => unreachable!("the sequential implementation is not a machine"),
    };
    (w, reg, ms)
}

fn export_from_log(log: &[RunEv], ms: &[SetMachine], reg: &Registry, init: &[i64]) -> SetExport {
    let mut ops: Vec<OpTrace> = ms
        .iter()
        .map(|m| {
            let (kind, key) = m.decl();
            OpTrace {
                instance: 0,
                kind,
                key,
                resp: m.resp(),
                events: Vec::new(),
                inv: usize::MAX,
                ret: usize::MAX,
            }
        })
        .collect();
    for (pos, e) in log.iter().enumerate() {
        match e {
            RunEv::Inv { op } => ops[*op].inv = pos,
            RunEv::Pt { op, ev } => {
                let mut ev = ev.clone();
                ev.pos = pos;
                ops[*op].events.push(ev);
            }
            RunEv::Resp { op, .. } => ops[*op].ret = pos,
            RunEv::PtAbort { op } => {
                ops[*op].events.last_mut().expect("retraction without a point").aborted = true;
            }
            RunEv::Base(_) => {}
        }
    }
    SetExport {
        init: vec![init.to_vec()],
        regs: vec![reg.clone()],
        ops,
    }
}

struct DriveCtx<'a> {
    sched: &'a SetSchedule,
    memo: BTreeSet<(usize, Vec<SetMachine>, Registry, World)>,
    best_len: usize,
    best: Vec<RunEv>,
    best_ms: Vec<SetMachine>,
    best_reg: Registry,
    steps: usize,
}

/// Drives the machines so that high-level accesses fire exactly in the
/// schedule's order, searching over internal-step placements. Returns
/// whether some execution accepts, together with an exported history (the
/// accepting one, or the deepest rejecting attempt).
pub fn schedule_accepts(impl_: SetImpl, sched: &SetSchedule) -> (bool, SetExport) {
    if impl_ == SetImpl::Seq {
        return seq_accepts(sched);
    }
    let ops: Vec<(SetOpKind, i64)> = sched.ops.iter().map(|d| (d.kind, d.key)).collect();
    let (w, reg, ms) = build_machines(impl_, &sched.init, &ops);
    let mut ctx = DriveCtx {
        sched,
        memo: BTreeSet::new(),
        best_len: 0,
        best: Vec::new(),
        best_ms: ms.clone(),
        best_reg: reg.clone(),
        steps: 0,
    };
    let mut log = Vec::new();
    let accepted = drive_rec(&mut ctx, w, reg, ms, 0, &mut log);
    let export = export_from_log(&ctx.best, &ctx.best_ms, &ctx.best_reg, &sched.init);
    (accepted, export)
}

fn drive_rec(
    ctx: &mut DriveCtx,
    w: World,
    reg: Registry,
    ms: Vec<SetMachine>,
    sidx: usize,
    log: &mut Vec<RunEv>,
) -> bool {
    ctx.steps += 1;
    let mut moves = Vec::new();
    let mut all_done = true;
    for (i, m) in ms.iter().enumerate() {
        match m.poised(&w) {
            Drive::Done => {}
            Drive::Blocked => all_done = false,
            Drive::Internal => {
                all_done = false;
                moves.push(i);
            }
            Drive::Point { write, node } => {
                all_done = false;
                if let Some(p) = ctx.sched.points.get(sidx) {
                    if p.op == i && p.write == write && reg.label(node) == p.label {
                        moves.push(i);
                    }
                }
            }
        }
    }
    if all_done {
        let ok = sidx == ctx.sched.points.len()
            && ms.iter().all(|m| matches!(m.resp(), OpResp::Done(_)));
        if ok || log.len() > ctx.best_len {
            ctx.best_len = log.len();
            ctx.best = log.clone();
            ctx.best_ms = ms.clone();
            ctx.best_reg = reg.clone();
        }
        return ok;
    }
    if moves.is_empty() {
        if log.len() > ctx.best_len {
            ctx.best_len = log.len();
            ctx.best = log.clone();
            ctx.best_ms = ms.clone();
            ctx.best_reg = reg.clone();
        }
        return false;
    }
    if !ctx.memo.insert((sidx, ms.clone(), reg.clone(), w.clone())) {
        return false;
    }
    for i in moves {
        let fired_point = matches!(ms[i].poised(&w), Drive::Point { .. });
        let mut w2 = w.clone();
        let mut reg2 = reg.clone();
        let mut ms2 = ms.clone();
        let len0 = log.len();
        ms2[i].step(&mut w2, &mut reg2, log);
        let sidx2 = if fired_point { sidx + 1 } else { sidx };
        // a bottom response can never become acceptance: prune, but keep
        // the deepest trace for export
        if ms2[i].resp() == OpResp::Bot {
            if log.len() > ctx.best_len {
                ctx.best_len = log.len();
                ctx.best = log.clone();
                ctx.best_ms = ms2.clone();
                ctx.best_reg = reg2.clone();
            }
            log.truncate(len0);
            continue;
        }
        if drive_rec(ctx, w2, reg2, ms2, sidx2, log) {
            return true;
        }
        log.truncate(len0);
    }
    false
}

/// The sequential implementation accepts exactly the non-interleaved
/// schedules it can replay.
fn seq_accepts(sched: &SetSchedule) -> (bool, SetExport) {
    let mut seen: Vec<usize> = Vec::new();
    let mut contiguous = true;
    for p in &sched.points {
        match seen.last() {
            Some(last) if *last == p.op => {}
            _ => {
                if seen.contains(&p.op) {
                    contiguous = false;
                    break;
                }
                seen.push(p.op);
            }
        }
    }
    let rep = atomic_replay(sched);
    let accepted = contiguous && rep.is_some();
    // export an honest sequential run: the operations one at a time
    let mut state: Vec<i64> = sched.init.clone();
    state.sort_unstable();
    state.dedup();
    let order: Vec<usize> = if accepted {
        seen
    } else {
        (0..sched.ops.len()).collect()
    };
    let mut reg = Registry::new(&sched.init);
    let mut ops = Vec::new();
    let mut pos = 0usize;
    for &i in &order {
        let d = &sched.ops[i];
        let (st2, resp, trace) = seq_op(&state, d.kind, d.key);
        let inv = pos;
        let mut events = Vec::new();
        for (write, label) in trace {
            let node = match reg.find(&label) {
                Some(n) => n,
                None => reg.mint(d.key),
            };
            // reconstruct payload/successor from the oracle's own replay
            events.push(PtEv {
                write,
                node,
                payload: reg.key(node),
                next: None,
                pos,
                aborted: false,
            });
            pos += 1;
        }
        let _ = events;
        // the sequential export carries responses and intervals only; its
        // traces are definitionally local, so they are left empty
        ops.push(OpTrace {
            instance: 0,
            kind: d.kind,
            key: d.key,
            resp: OpResp::Done(resp),
            events: Vec::new(),
            inv,
            ret: pos,
        });
        pos += 1;
        state = st2;
    }
    (
        accepted,
        SetExport {
            init: vec![sched.init.clone()],
            regs: vec![reg],
            ops,
        },
    )
}

/// Walks the reachable state graph of the unconstrained interleavings,
/// visiting every terminal state once with a representative interleaving.
/// Deduplicating on (machines, registry, memory) keeps the walk tractable;
/// responses and final memory are covered exhaustively, event orderings by
/// one witness per state.
pub fn free_runs(
    impl_: SetImpl,
    init: &[i64],
    ops: &[(SetOpKind, i64)],
    visit: &mut dyn FnMut(&SetExport, &[Event]),
) -> usize {
    let (w, reg, ms) = build_machines(impl_, init, ops);
    let mut log = Vec::new();
    let mut seen = BTreeSet::new();
    free_rec(init, w, reg, ms, &mut log, &mut seen, visit);
    seen.len()
}

fn free_rec(
    init: &[i64],
    w: World,
    reg: Registry,
    ms: Vec<SetMachine>,
    log: &mut Vec<RunEv>,
    seen: &mut BTreeSet<(Vec<SetMachine>, Registry, World)>,
    visit: &mut dyn FnMut(&SetExport, &[Event]),
) {
    if !seen.insert((ms.clone(), reg.clone(), w.clone())) {
        return;
    }
    let mut moves = Vec::new();
    let mut all_done = true;
    for (i, m) in ms.iter().enumerate() {
        match m.poised(&w) {
            Drive::Done => {}
            Drive::Blocked => all_done = false,
            _ => {
                all_done = false;
                moves.push(i);
            }
        }
    }
    if all_done {
        let base: Vec<Event> = log
            .iter()
            .filter_map(|e| match e {
                RunEv::Base(ev) => Some(ev.clone()),
                _ => None,
            })
            .collect();
        visit(&export_from_log(log, &ms, &reg, init), &base);
        return;
    }
    for i in moves {
        let mut w2 = w.clone();
        let mut reg2 = reg.clone();
        let mut ms2 = ms.clone();
        let len0 = log.len();
        ms2[i].step(&mut w2, &mut reg2, log);
        free_rec(init, w2, reg2, ms2, log, seen, visit);
        log.truncate(len0);
    }
}

/// Interleaves two independent single-instance exports into one
/// two-instance history (instance ids 0 and 1).
pub fn compose_exports(a: &SetExport, b: &SetExport) -> SetExport {
    let remap = |pos: usize, off: usize| {
        if pos == usize::MAX {
            usize::MAX
        } else {
            2 * pos + off
        }
    };
    let mut ops = Vec::new();
    for op in &a.ops {
        let mut op = op.clone();
        op.instance = 0;
        op.inv = remap(op.inv, 0);
        op.ret = remap(op.ret, 0);
        for e in &mut op.events {
            e.pos = remap(e.pos, 0);
        }
        ops.push(op);
    }
    for op in &b.ops {
        let mut op = op.clone();
        op.instance = 1;
        op.inv = remap(op.inv, 1);
        op.ret = remap(op.ret, 1);
        for e in &mut op.events {
            e.pos = remap(e.pos, 1);
        }
        ops.push(op);
    }
    SetExport {
        init: vec![a.init[0].clone(), b.init[0].clone()],
        regs: vec![a.regs[0].clone(), b.regs[0].clone()],
        ops,
    }
}

// ---------------------------------------------------------------------------
// the three hand-built schedules of the acceptance matrix

/// A membership query overlapping two updaters in a way only the
/// pessimistic list accepts: the query reads the region before the first
/// insert lands and after the second one does, which no single
/// serialization explains.
pub fn interleaved_query_schedule() -> SetSchedule {
    let ops = vec![
        SetOpDecl {
            tag: String::from("T1"),
            kind: SetOpKind::Contains,
            key: 5,
        },
        SetOpDecl {
            tag: String::from("T2"),
            kind: SetOpKind::Insert,
            key: 2,
        },
        SetOpDecl {
            tag: String::from("T3"),
            kind: SetOpKind::Insert,
            key: 5,
        },
    ];
    let pts = [
        (0, false, "head"),
        (0, false, "X1"),
        (1, false, "head"),
        (1, false, "X1"),
        (1, false, "X3"),
        (0, false, "X3"),
        (1, true, "X1"),
        (2, false, "head"),
        (2, false, "X1"),
        (2, false, "X2"),
        (2, false, "X3"),
        (2, false, "X4"),
        (2, false, "tail"),
        (2, true, "X4"),
        (0, false, "X4"),
        (0, false, "X5"),
    ];
    SetSchedule {
        init: vec![1, 3, 4],
        ops,
        points: pts
            .iter()
            .map(|(op, write, label)| SchedPoint {
                op: *op,
                write: *write,
                label: String::from(*label),
            })
            .collect(),
    }
}

/// Two duplicate inserts whose traversals interleave: read-only at the
/// list level, so the optimistic implementations sail through, while any
/// whole-operation lock on the head forbids the overlap.
pub fn overlapping_insert_schedule() -> SetSchedule {
    let ops = vec![
        SetOpDecl {
            tag: String::from("T1"),
            kind: SetOpKind::Insert,
            key: 1,
        },
        SetOpDecl {
            tag: String::from("T2"),
            kind: SetOpKind::Insert,
            key: 2,
        },
    ];
    let pts = [
        (0, false, "head"),
        (1, false, "head"),
        (0, false, "X1"),
        (1, false, "X1"),
        (1, false, "X2"),
    ];
    SetSchedule {
        init: vec![1, 2, 3],
        ops,
        points: pts
            .iter()
            .map(|(op, write, label)| SchedPoint {
                op: *op,
                write: *write,
                label: String::from(*label),
            })
            .collect(),
    }
}

/// The lost-update order: both inserts read the head region, then both
/// write the head, the second clobbering the first. Rejecting this is the
/// whole point of the version words.
pub fn lost_update_schedule() -> SetSchedule {
    let ops = vec![
        SetOpDecl {
            tag: String::from("T1"),
            kind: SetOpKind::Insert,
            key: 1,
        },
        SetOpDecl {
            tag: String::from("T2"),
            kind: SetOpKind::Insert,
            key: 2,
        },
    ];
    let pts = [
        (0, false, "head"),
        (1, false, "head"),
        (0, false, "X3"),
        (1, false, "X3"),
        (0, true, "head"),
        (1, true, "head"),
    ];
    SetSchedule {
        init: vec![3],
        ops,
        points: pts
            .iter()
            .map(|(op, write, label)| SchedPoint {
                op: *op,
                write: *write,
                label: String::from(*label),
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequential_code_matches_the_reference_traces() {
        let (st, found, trace) = seq_op(&[1, 3, 4], SetOpKind::Contains, 5);
        assert!(!found);
        assert_eq!(st, vec![1, 3, 4]);
        let labels: Vec<&str> = trace.iter().map(|(_, l)| l.as_str()).collect();
        assert_eq!(labels, ["head", "X1", "X3", "X4", "tail"]);
        assert!(trace.iter().all(|(w, _)| !w));

        let (st, ok, _) = seq_op(&[], SetOpKind::Insert, 7);
        assert!(ok);
        assert_eq!(st, vec![7]);

        let (st, ok, _) = seq_op(&[7], SetOpKind::Insert, 7);
        assert!(!ok);
        assert_eq!(st, vec![7]);

        let (st, ok, trace) = seq_op(&[2, 4], SetOpKind::Remove, 2);
        assert!(ok);
        assert_eq!(st, vec![4]);
        assert_eq!(trace.last().unwrap(), &(true, String::from("head")));
    }

    #[test]
    fn observability_of_the_three_reference_schedules() {
        assert!(is_observable(&interleaved_query_schedule()));
        assert!(is_observable(&overlapping_insert_schedule()));
        assert!(!is_observable(&lost_update_schedule()));
    }

    #[test]
    fn acceptance_matrix_of_the_reference_schedules() {
        let s0 = interleaved_query_schedule();
        let s1 = overlapping_insert_schedule();
        let s2 = lost_update_schedule();
        let lp = SetImpl::TmBacked(LpVariant::Full);

        let (a, e) = schedule_accepts(SetImpl::LockCoupling, &s0);
        assert!(a, "pessimistic list must accept the interleaved query");
        assert!(ls_linearizable(&e));
        let (a, e) = schedule_accepts(lp, &s0);
        assert!(!a, "tm-backed list must reject the interleaved query");
        assert!(ls_linearizable(&e));
        let (a, _) = schedule_accepts(SetImpl::VersionLock, &s0);
        assert!(a);

        let (a, _) = schedule_accepts(lp, &s1);
        assert!(a, "tm-backed list must accept the read-only overlap");
        let (a, _) = schedule_accepts(SetImpl::LockCoupling, &s1);
        assert!(!a, "head-locked updates cannot overlap");
        let (a, _) = schedule_accepts(SetImpl::VersionLock, &s1);
        assert!(a);

        let (a, e) = schedule_accepts(SetImpl::VersionLock, &s2);
        assert!(!a, "the lost update must be rejected");
        assert!(ls_linearizable(&e));
    }

    #[test]
    fn sequential_impl_accepts_exactly_contiguous_schedules() {
        let (a, _) = schedule_accepts(SetImpl::Seq, &overlapping_insert_schedule());
        assert!(!a);
        let per_op = enumerate_schedules(
            &[2, 4],
            &[(SetOpKind::Insert, 3), (SetOpKind::Contains, 3)],
            16,
        );
        let seq_accepted = per_op
            .iter()
            .filter(|s| schedule_accepts(SetImpl::Seq, s).0)
            .count();
        // exactly the two non-interleaved orders
        assert_eq!(seq_accepted, 2);
    }

    #[test]
    fn pessimistic_ops_never_return_bottom() {
        let ops = [(SetOpKind::Insert, 3), (SetOpKind::Remove, 2)];
        let mut runs = 0;
        let states = free_runs(SetImpl::LockCoupling, &[2, 4], &ops, &mut |e, _| {
            runs += 1;
            assert!(e.ops.iter().all(|o| matches!(o.resp, OpResp::Done(_))));
            assert!(ls_linearizable(e));
        });
        assert!(runs >= 1);
        assert!(states > 10, "no interleaving happened: {states} states");
    }

    #[test]
    fn version_lock_queries_never_write_and_updates_stay_cheap() {
        let ops = [(SetOpKind::Remove, 2), (SetOpKind::Contains, 4)];
        free_runs(SetImpl::VersionLock, &[2, 4], &ops, &mut |e, base| {
            assert!(ls_linearizable(e));
            for ev in base {
                if ev.proc == ProcId(2) {
                    // the query: reads only
                    assert!(ev.memory_objs().iter().all(|o| !ev.nontrivial_on(*o)));
                }
            }
            // an update performs at most two successful cas instructions
            let awars = base
                .iter()
                .filter(|ev| {
                    ev.proc == ProcId(1)
                        && matches!(
                            &ev.kind,
                            EventKind::Direct {
                                prim: Prim::Cas { .. },
                                nontrivial: true,
                                ..
                            }
                        )
                })
                .count();
            assert!(awars <= 2);
        });
    }

    #[test]
    fn corpus_has_the_documented_shape() {
        let ms = op_multisets();
        assert_eq!(ms.len(), 815);
    }

    #[test]
    fn version_lock_acceptance_matches_observability_on_a_sample() {
        // a conflict-heavy sample; the full corpus runs in the acceptance
        // suite
        let sample: Vec<Vec<(SetOpKind, i64)>> = vec![
            vec![(SetOpKind::Insert, 1), (SetOpKind::Insert, 1)],
            vec![(SetOpKind::Insert, 3), (SetOpKind::Remove, 2)],
            vec![(SetOpKind::Remove, 2), (SetOpKind::Remove, 2)],
            vec![(SetOpKind::Remove, 2), (SetOpKind::Contains, 2)],
            vec![(SetOpKind::Insert, 5), (SetOpKind::Remove, 4)],
        ];
        for ops in sample {
            for s in enumerate_schedules(&[2, 4], &ops, 8) {
                let (acc, export) = schedule_accepts(SetImpl::VersionLock, &s);
                assert!(ls_linearizable(&export), "export not LSL for {s:?}");
                assert_eq!(
                    acc,
                    is_observable(&s),
                    "acceptance/observability split on {s:?}"
                );
            }
        }
    }

    #[test]
    fn independent_instances_compose() {
        let ops_a = [(SetOpKind::Insert, 3), (SetOpKind::Contains, 3)];
        let ops_b = [(SetOpKind::Remove, 2), (SetOpKind::Insert, 1)];
        let mut got_a: Option<SetExport> = None;
        free_runs(SetImpl::VersionLock, &[2, 4], &ops_a, &mut |e, _| {
            if got_a.is_none() {
                got_a = Some(e.clone());
            }
        });
        let mut got_b: Option<SetExport> = None;
        free_runs(SetImpl::VersionLock, &[1, 2], &ops_b, &mut |e, _| {
            if got_b.is_none() {
                got_b = Some(e.clone());
            }
        });
        let (a, b) = (got_a.unwrap(), got_b.unwrap());
        assert!(ls_linearizable(&a));
        assert!(ls_linearizable(&b));
        assert!(ls_linearizable(&compose_exports(&a, &b)));
    }
}
