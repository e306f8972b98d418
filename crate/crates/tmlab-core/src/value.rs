//! Values stored in base objects and t-objects, plus the small id newtypes
//! used throughout the crate.
//!
//! A [`Val`] is a short tuple of machine integers. Registers hold single
//! integers, versioned words hold pairs, ownership records hold triples, and
//! the empty tuple doubles as the "unset" value that some algorithms use as
//! an initial state. Keeping everything in one ordered, hashable shape means
//! whole machine states can be compared and deduplicated during exhaustive
//! exploration.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

/// A base-object or t-object value: a tuple of integers.
///
/// The empty tuple is the distinguished "nil" value.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Val(pub Vec<i64>);

impl Val {
    pub fn nil() -> Self {
        Val(Vec::new())
    }

    pub fn int(x: i64) -> Self {
        Val(vec![x])
    }

    pub fn pair(a: i64, b: i64) -> Self {
        Val(vec![a, b])
    }

    pub fn triple(a: i64, b: i64, c: i64) -> Self {
        Val(vec![a, b, c])
    }

    pub fn is_nil(&self) -> bool {
        self.0.is_empty()
    }

    /// The single integer held by this value, if it is a 1-tuple.
    pub fn as_int(&self) -> Option<i64> {
        match self.0.as_slice() {
            [x] => Some(*x),
            _ => None,
        }
    }

    /// Component access that tolerates shorter tuples.
    pub fn field(&self, i: usize) -> Option<i64> {
        self.0.get(i).copied()
    }
}

impl fmt::Debug for Val {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0.as_slice() {
            [] => write!(f, "nil"),
            [x] => write!(f, "{x}"),
            xs => {
                write!(f, "[")?;
                for (i, x) in xs.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{x}")?;
                }
                write!(f, "]")
            }
        }
    }
}

impl fmt::Display for Val {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

macro_rules! id_type {
    ($(#[$doc:meta])* $name:ident, $prefix:literal) => {
        $(#[$doc])*
        #[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
        pub struct $name(pub u32);

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}{}", $prefix, self.0)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                fmt::Debug::fmt(self, f)
            }
        }
    };
}

id_type!(
    /// A base object (a word of shared memory).
    ObjId,
    "b"
);
id_type!(
    /// A t-object (a transactional variable).
    TObj,
    "X"
);
id_type!(
    /// A transaction. `TxnId(0)` is reserved for the initializing
    /// transaction that is considered to have committed all initial values.
    TxnId,
    "T"
);
id_type!(
    /// A process.
    ProcId,
    "p"
);

impl TxnId {
    /// The initializing transaction.
    pub const INIT: TxnId = TxnId(0);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn val_accessors() {
        assert!(Val::nil().is_nil());
        assert_eq!(Val::int(7).as_int(), Some(7));
        assert_eq!(Val::pair(1, 2).as_int(), None);
        assert_eq!(Val::triple(1, 2, 3).field(2), Some(3));
        assert_eq!(Val::pair(1, 2).field(5), None);
    }

    #[test]
    fn val_ordering_is_lexicographic() {
        assert!(Val::nil() < Val::int(0));
        assert!(Val::int(1) < Val::pair(1, 0));
        assert!(Val::pair(1, 2) < Val::pair(2, 0));
    }
}
