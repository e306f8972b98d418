//! tmlab-core: a deterministic laboratory for software transactional
//! memory algorithms.
//!
//! The crate models a shared memory of single-word base objects accessed
//! through atomic primitives, runs hand-coded transactional-memory
//! implementations over it one event at a time under an explicit
//! scheduler, and checks the resulting histories against machine-checked
//! safety properties. Cost metrics (expensive synchronization patterns,
//! stalls, remote memory references, metadata footprints) are computed
//! from the same event logs. A concurrent linked-list layer drives list
//! implementations point by point against prescribed schedules.
//!
//! Everything is deterministic: no clocks, no OS threads, no hidden hash
//! ordering. Exploration is exhaustive within explicit bounds, so tests
//! can assert over *all* executions of a small workload rather than a
//! sample.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod checkers;
pub mod golden;
pub mod history;
pub mod hytm;
pub mod listset;
pub mod lp;
pub mod machine;
pub mod metrics;
pub mod oftm;
pub mod strongprog;
pub mod substrate;
pub mod value;
pub mod workload;

pub use value::{ObjId, ProcId, TObj, TxnId, Val};
