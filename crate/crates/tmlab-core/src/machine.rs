//! The scheduler: machines, steps, fair runs, exhaustive enumeration and
//! state-space search.
//!
//! A machine advances in *micro* moves, each either a local move (emitting
//! a history event or updating private state) or exactly one shared-memory
//! event. The scheduler's unit is the [`step`]: leading local moves, one
//! shared event, then trailing local moves up to (not including) the next
//! operation's invocation. Invocations are therefore emitted as late as
//! possible and responses as early as possible, which maximizes real-time
//! edges in the exported history; every such history is a real execution's
//! history, and checking the edge-maximal variant covers the laxer ones.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use crate::history::{HEvent, History};
use crate::substrate::{Event, Execution, World};
use crate::value::{ProcId, TObj, Val};
use alloc::collections::BTreeMap;

/// What kind of micro move the machine will make next.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Poise {
    /// A local move that belongs to the *next* shared event (an
    /// invocation): it waits for a fresh step.
    LocalPre,
    /// A local move that belongs to the *previous* shared event (a
    /// response, a private buffer update): it is flushed eagerly.
    LocalPost,
    Shared,
    Done,
}

/// One entry of the chronological run log.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum LogEntry {
    Hist(HEvent),
    Base(Event),
}

/// Collects the run log.
#[derive(Default)]
pub struct Sink {
    pub log: Vec<LogEntry>,
}

impl Sink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn hist(&mut self, e: HEvent) {
        self.log.push(LogEntry::Hist(e));
    }

    pub fn base(&mut self, e: Event) {
        self.log.push(LogEntry::Base(e));
    }
}

pub fn log_history(log: &[LogEntry], init: &BTreeMap<TObj, Val>) -> History {
    History {
        init: init.clone(),
        events: log
            .iter()
            .filter_map(|e| match e {
                LogEntry::Hist(h) => Some(h.clone()),
                _ => None,
            })
            .collect(),
    }
}

pub fn log_execution(log: &[LogEntry]) -> Execution {
    log.iter()
        .filter_map(|e| match e {
            LogEntry::Base(b) => Some(b.clone()),
            _ => None,
        })
        .collect()
}

pub trait Machine: Clone + Eq + Ord {
    fn proc(&self) -> ProcId;
    /// Classifies the next micro move. Must not mutate anything.
    fn poised(&self, world: &World) -> Poise;
    /// Performs the next micro move.
    fn micro(&mut self, world: &mut World, sink: &mut Sink);
    fn done(&self) -> bool;
    /// True when the machine sits between transactions (the next one has
    /// not emitted any event yet), or is done.
    fn at_boundary(&self) -> bool;
}

/// One scheduler step. Returns whether a shared event was applied (a
/// machine draining trailing local moves steps silently once).
pub fn step<M: Machine>(m: &mut M, world: &mut World, sink: &mut Sink) -> bool {
    let mut made_shared = false;
    loop {
        match m.poised(world) {
            Poise::Done => return made_shared,
            Poise::LocalPre if made_shared => return true,
            Poise::LocalPre | Poise::LocalPost => m.micro(world, sink),
            Poise::Shared if made_shared => return true,
            Poise::Shared => {
                m.micro(world, sink);
                made_shared = true;
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    /// Every machine ran to completion.
    pub complete: bool,
    /// The branch was cut by the shared-event bound.
    pub truncated: bool,
    /// No machine could make progress (every child state repeated).
    pub stuck: bool,
    pub log: Vec<LogEntry>,
    /// Scheduling decisions: machine index per step.
    pub choices: Vec<usize>,
}

/// Round-robin over unfinished machines. Returns the outcome and the
/// number of steps taken; `truncated` is set when `max_steps` ran out.
pub fn run_fair<M: Machine>(
    world: &mut World,
    machines: &mut [M],
    max_steps: usize,
) -> (RunOutcome, usize) {
    let mut sink = Sink::new();
    let mut choices = Vec::new();
    let mut steps = 0;
    'outer: while steps < max_steps {
        if machines.iter().all(|m| m.done()) {
            break 'outer;
        }
        for i in 0..machines.len() {
            if steps >= max_steps {
                break;
            }
            if machines[i].done() {
                continue;
            }
            step(&mut machines[i], world, &mut sink);
            choices.push(i);
            steps += 1;
        }
    }
    let complete = machines.iter().all(|m| m.done());
    (
        RunOutcome {
            complete,
            truncated: !complete,
            stuck: false,
            log: sink.log,
            choices,
        },
        steps,
    )
}

/// Replays an explicit schedule of machine indices. Panics on an index out
/// of range; scheduling a finished machine is a silent no-op.
pub fn run_choices<M: Machine>(
    world: &mut World,
    machines: &mut [M],
    choices: &[usize],
) -> RunOutcome {
    let mut sink = Sink::new();
    for &i in choices {
        if !machines[i].done() {
            step(&mut machines[i], world, &mut sink);
        }
    }
    RunOutcome {
        complete: machines.iter().all(|m| m.done()),
        truncated: false,
        stuck: false,
        log: sink.log,
        choices: choices.to_vec(),
    }
}

/// Runs machine `idx` alone until it finishes or `max_steps` elapse.
pub fn solo_run<M: Machine>(
    world: &mut World,
    machines: &mut [M],
    idx: usize,
    max_steps: usize,
) -> RunOutcome {
    let mut sink = Sink::new();
    let mut steps = 0;
    while !machines[idx].done() && steps < max_steps {
        step(&mut machines[idx], world, &mut sink);
        steps += 1;
    }
    RunOutcome {
        complete: machines[idx].done(),
        truncated: !machines[idx].done(),
        stuck: false,
        log: sink.log,
        choices: Vec::new(),
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EnumOpts {
    /// Bound on shared events per execution; branches that exceed it are
    /// reported truncated.
    pub max_events: usize,
}

impl Default for EnumOpts {
    fn default() -> Self {
        EnumOpts { max_events: 10_000 }
    }
}

/// Exhaustive depth-first enumeration of executions.
///
/// At every node each unfinished machine is tried in index order. A child
/// whose (machines, world) state already occurred on the current path is
/// skipped: spinning in place never changes the reachable outcomes, and
/// cutting state repetitions makes the tree finite for machines that busy
/// wait. Leaves are complete executions (or truncated/stuck branches,
/// flagged as such) and are reported to `visit` in deterministic order.
pub fn enumerate<M: Machine>(
    world: &World,
    machines: &[M],
    opts: EnumOpts,
    visit: &mut dyn FnMut(&RunOutcome),
) {
    struct Ctx<'a, M: Machine> {
        opts: EnumOpts,
        visit: &'a mut dyn FnMut(&RunOutcome),
        path: BTreeSet<(Vec<M>, World)>,
        log: Vec<LogEntry>,
        choices: Vec<usize>,
        events: usize,
    }

    fn go<M: Machine>(ctx: &mut Ctx<'_, M>, world: &World, machines: &[M]) {
        if machines.iter().all(|m| m.done()) {
            (ctx.visit)(&RunOutcome {
                complete: true,
                truncated: false,
                stuck: false,
                log: ctx.log.clone(),
                choices: ctx.choices.clone(),
            });
            return;
        }
        if ctx.events >= ctx.opts.max_events {
            (ctx.visit)(&RunOutcome {
                complete: false,
                truncated: true,
                stuck: false,
                log: ctx.log.clone(),
                choices: ctx.choices.clone(),
            });
            return;
        }
        let mut progressed = false;
        for i in 0..machines.len() {
            if machines[i].done() {
                continue;
            }
            let mut w2 = world.clone();
            let mut ms2 = machines.to_vec();
            let mut sink = Sink::new();
            let made = step(&mut ms2[i], &mut w2, &mut sink);
            let key = (ms2.clone(), w2.clone());
            if ctx.path.contains(&key) {
                continue;
            }
            progressed = true;
            let log_len = ctx.log.len();
            ctx.log.extend(sink.log);
            ctx.choices.push(i);
            if made {
                ctx.events += 1;
            }
            ctx.path.insert(key);
            go(ctx, &w2, &ms2);
            let key = (ms2, w2);
            ctx.path.remove(&key);
            if made {
                ctx.events -= 1;
            }
            ctx.choices.pop();
            ctx.log.truncate(log_len);
        }
        if !progressed {
            (ctx.visit)(&RunOutcome {
                complete: false,
                truncated: false,
                stuck: true,
                log: ctx.log.clone(),
                choices: ctx.choices.clone(),
            });
        }
    }

    let mut ctx = Ctx {
        opts,
        visit,
        path: BTreeSet::new(),
        log: Vec::new(),
        choices: Vec::new(),
        events: 0,
    };
    ctx.path.insert((machines.to_vec(), world.clone()));
    go(&mut ctx, world, machines);
}

#[derive(Debug)]
pub struct StateSearch {
    pub states: usize,
    /// A state where the invariant callback returned false.
    pub violated: bool,
    /// Some branch hit the depth bound.
    pub truncated: bool,
}

/// Breadth-first search over reachable (machines, world) states with a
/// per-path depth bound. `invariant` is evaluated at every reached state.
pub fn search_states<M: Machine>(
    world: &World,
    machines: &[M],
    max_depth: usize,
    invariant: &mut dyn FnMut(&[M], &World) -> bool,
) -> StateSearch {
    let mut visited: BTreeSet<(Vec<M>, World)> = BTreeSet::new();
    let mut frontier: Vec<(Vec<M>, World)> = Vec::new();
    let mut out = StateSearch {
        states: 0,
        violated: false,
        truncated: false,
    };
    visited.insert((machines.to_vec(), world.clone()));
    frontier.push((machines.to_vec(), world.clone()));
    if !invariant(machines, world) {
        out.violated = true;
    }
    out.states = 1;
    let mut depth = 0;
    while !frontier.is_empty() {
        if depth == max_depth {
            out.truncated = true;
            break;
        }
        depth += 1;
        let mut next = Vec::new();
        for (ms, w) in &frontier {
            for i in 0..ms.len() {
                if ms[i].done() {
                    continue;
                }
                let mut w2 = w.clone();
                let mut ms2 = ms.clone();
                let mut sink = Sink::new();
                step(&mut ms2[i], &mut w2, &mut sink);
                let key = (ms2, w2);
                if visited.contains(&key) {
                    continue;
                }
                if !invariant(&key.0, &key.1) {
                    out.violated = true;
                }
                out.states += 1;
                visited.insert(key.clone());
                next.push(key);
            }
        }
        frontier = next;
    }
    out
}

#[derive(Debug)]
pub struct GraphSearch {
    /// Distinct (machines, world, fold) states reached.
    pub states: usize,
    /// Distinct terminal states (every machine done).
    pub terminals: usize,
    /// Some state had unfinished machines but no step changed anything:
    /// a genuine deadlock (machines are deterministic, so nothing ever
    /// will change).
    pub dead_end: bool,
}

/// Exhaustive walk of the reachable state graph with global
/// deduplication, covering executions that a path-wise enumeration cannot
/// (busy-wait loops collapse into finite cycles here).
///
/// A caller fold value rides along in the deduplication key: `absorb`
/// digests the log suffix each step produced into a new fold. Properties
/// of whole executions are covered exactly when they are functions of the
/// terminal (machines, fold) pair, so the fold must carry whatever the
/// terminal check needs and should stay small (saturating counters,
/// flags), or the graph will not close. `terminal` fires once per
/// distinct terminal state.
pub fn search_graph<M: Machine, A: Clone + Eq + Ord>(
    world: &World,
    machines: &[M],
    fold0: A,
    absorb: &mut dyn FnMut(&A, usize, &[LogEntry]) -> A,
    terminal: &mut dyn FnMut(&[M], &World, &A),
) -> GraphSearch {
    let mut out = GraphSearch {
        states: 0,
        terminals: 0,
        dead_end: false,
    };
    let mut seen: BTreeSet<(Vec<M>, World, A)> = BTreeSet::new();
    let mut stack: Vec<(Vec<M>, World, A)> = Vec::new();
    let first = (machines.to_vec(), world.clone(), fold0);
    seen.insert(first.clone());
    stack.push(first);
    while let Some((ms, w, fold)) = stack.pop() {
        out.states += 1;
        if ms.iter().all(|m| m.done()) {
            out.terminals += 1;
            terminal(&ms, &w, &fold);
            continue;
        }
        let mut moved = false;
        for i in 0..ms.len() {
            if ms[i].done() {
                continue;
            }
            let mut w2 = w.clone();
            let mut ms2 = ms.clone();
            let mut sink = Sink::new();
            step(&mut ms2[i], &mut w2, &mut sink);
            if ms2 == ms && w2 == w {
                // a pure self-loop (spinning in place)
                continue;
            }
            moved = true;
            let fold2 = absorb(&fold, i, &sink.log);
            let key = (ms2, w2, fold2);
            if seen.contains(&key) {
                continue;
            }
            seen.insert(key.clone());
            stack.push(key);
        }
        if !moved {
            out.dead_end = true;
        }
    }
    out
}
