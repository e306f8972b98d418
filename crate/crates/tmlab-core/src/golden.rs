//! Hand-verified history fixtures exercising the corners where the safety
//! properties disagree with one another. Each constructor documents the
//! verdicts the checkers must produce; the unit and acceptance tests pin
//! them.

use alloc::vec::Vec;

use crate::history::{HEvent, HEventKind, History};
use crate::value::{TObj, TxnId, Val};

pub const X: TObj = TObj(0);
pub const Y: TObj = TObj(1);

fn ev(txn: u32, kind: HEventKind) -> HEvent {
    HEvent {
        txn: TxnId(txn),
        kind,
    }
}

fn iw(t: u32, x: TObj, v: i64) -> HEvent {
    ev(t, HEventKind::InvWrite(x, Val::int(v)))
}
fn rw(t: u32, x: TObj) -> HEvent {
    ev(t, HEventKind::ResWrite(x, true))
}
fn ir(t: u32, x: TObj) -> HEvent {
    ev(t, HEventKind::InvRead(x))
}
fn rr(t: u32, x: TObj, v: i64) -> HEvent {
    ev(t, HEventKind::ResRead(x, Some(Val::int(v))))
}
fn itc(t: u32) -> HEvent {
    ev(t, HEventKind::InvTryC)
}
fn rtc(t: u32, c: bool) -> HEvent {
    ev(t, HEventKind::ResTryC(c))
}

/// A writer and a reader racing to commit. The reader observes the
/// writer's value before either commits, and both then commit.
///
/// Final-state opaque (serialize T1 before T2), but its length-4 prefix is
/// not: there the writer must abort in every completion, so the read of 1
/// has no source. Hence the full history is not opaque.
pub fn commit_race() -> History {
    History::new(Vec::from([
        iw(1, X, 1),
        ir(2, X),
        rw(1, X),
        rr(2, X, 1),
        itc(1),
        itc(2),
        rtc(1, true),
        rtc(2, true),
    ]))
}

/// Two writers of the same value; the reader's read responds before the
/// successful writer invokes tryC, and the unsuccessful writer aborts.
///
/// Opaque: in the final state T3's commit explains the read. Not
/// du-opaque: when the read responded, only the eventually-aborted T1 had
/// invoked tryC, so T3 is removed from the read's local serialization and
/// the value 1 has no committed source there.
pub fn aborted_writer_value() -> History {
    History::new(Vec::from([
        iw(1, X, 1),
        rw(1, X),
        iw(3, X, 1),
        rw(3, X),
        itc(1),
        ir(2, X),
        rr(2, X, 1),
        itc(3),
        rtc(1, false),
        rtc(3, true),
    ]))
}

/// An incomplete reader bracketing a second committed writer.
///
/// Du-opaque with exactly one serialization, T1 T3 T2: the read of X must
/// come from T1 (T3 had not invoked tryC yet), the read of Y from T3.
pub fn incomplete_reader() -> History {
    History::new(Vec::from([
        iw(1, X, 1),
        rw(1, X),
        itc(1),
        rtc(1, true),
        ir(2, X),
        rr(2, X, 1),
        iw(3, X, 1),
        rw(3, X),
        iw(3, Y, 1),
        rw(3, Y),
        itc(3),
        rtc(3, true),
        ir(2, Y),
        rr(2, Y, 1),
    ]))
}

/// Committed transactions serialize, but the aborted reader's two reads
/// force a cycle on the full history.
///
/// Strictly serializable with witness T3 T2. Not final-state opaque (and
/// so neither opaque nor du-opaque): T1 read X from T2 and missed T3's
/// write of Y, forcing T3 < T2 < T1 < T3.
pub fn serializable_not_opaque() -> History {
    History::new(Vec::from([
        ir(3, X),
        rr(3, X, 0),
        iw(2, X, 1),
        rw(2, X),
        itc(2),
        rtc(2, true),
        ir(1, X),
        rr(1, X, 1),
        ir(1, Y),
        rr(1, Y, 0),
        itc(1),
        rtc(1, false),
        iw(3, Y, 1),
        rw(3, Y),
        itc(3),
        rtc(3, true),
    ]))
}

/// All four fixtures with their names, for corpus generation.
pub fn all() -> Vec<(&'static str, History)> {
    Vec::from([
        ("commit-race", commit_race()),
        ("aborted-writer-value", aborted_writer_value()),
        ("incomplete-reader", incomplete_reader()),
        ("serializable-not-opaque", serializable_not_opaque()),
    ])
}
