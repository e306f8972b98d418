//! Static workload descriptions: which processes run which transactions
//! over which t-objects. Parsing and printing of the on-disk format live
//! in the command line crate; this module only carries the shapes.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::value::{ProcId, TObj, TxnId, Val};

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub enum OpSpec {
    Read(TObj),
    Write(TObj, Val),
    TryC,
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub struct TxnSpec {
    pub id: TxnId,
    pub ops: Vec<OpSpec>,
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub struct ProcSpec {
    pub id: ProcId,
    /// Runs the hardware (cached) path of a hybrid implementation.
    pub fast: bool,
    pub txns: Vec<TxnSpec>,
}

#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct Workload {
    /// T-object names, indexed by `TObj`.
    pub names: Vec<String>,
    pub init: BTreeMap<TObj, Val>,
    pub procs: Vec<ProcSpec>,
}

impl Workload {
    pub fn n_objects(&self) -> usize {
        self.names.len()
    }

    pub fn init_of(&self, x: TObj) -> Val {
        self.init.get(&x).cloned().unwrap_or_else(|| Val::int(0))
    }

    pub fn name_of(&self, x: TObj) -> &str {
        &self.names[x.0 as usize]
    }

    pub fn obj_by_name(&self, name: &str) -> Option<TObj> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| TObj(i as u32))
    }

    /// Programmatic construction for tests: `procs` lists per process the
    /// transactions as `(txn id, ops)`.
    pub fn build(
        names: &[&str],
        init: &[(usize, i64)],
        procs: &[Vec<(u32, Vec<OpSpec>)>],
    ) -> Workload {
        Workload {
            names: names.iter().map(|s| String::from(*s)).collect(),
            init: init
                .iter()
                .map(|(i, v)| (TObj(*i as u32), Val::int(*v)))
                .collect(),
            procs: procs
                .iter()
                .enumerate()
                .map(|(pi, txns)| ProcSpec {
                    id: ProcId(pi as u32 + 1),
                    fast: false,
                    txns: txns
                        .iter()
                        .map(|(tid, ops)| TxnSpec {
                            id: TxnId(*tid),
                            ops: ops.clone(),
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

/// Shorthands used all over the tests.
pub fn r(x: u32) -> OpSpec {
    OpSpec::Read(TObj(x))
}
pub fn w(x: u32, v: i64) -> OpSpec {
    OpSpec::Write(TObj(x), Val::int(v))
}
pub fn c() -> OpSpec {
    OpSpec::TryC
}
