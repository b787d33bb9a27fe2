//! Per-thread operation counters.
//!
//! The accumulator and tree code record every block hash, big-integer
//! multiplication and modular exponentiation they perform. [`measure`] runs a
//! closure and returns the counts it incurred on the current thread.

use std::cell::Cell;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounts {
    pub hashes: u64,
    pub multiplications: u64,
    pub modexps: u64,
}

impl std::ops::Sub for OpCounts {
    type Output = OpCounts;

    fn sub(self, rhs: OpCounts) -> OpCounts {
        OpCounts {
            hashes: self.hashes - rhs.hashes,
            multiplications: self.multiplications - rhs.multiplications,
            modexps: self.modexps - rhs.modexps,
        }
    }
}

thread_local! {
    static COUNTS: Cell<OpCounts> = const { Cell::new(OpCounts { hashes: 0, multiplications: 0, modexps: 0 }) };
}

fn bump(f: impl FnOnce(&mut OpCounts)) {
    COUNTS.with(|c| {
        let mut v = c.get();
        f(&mut v);
        c.set(v);
    });
}

pub(crate) fn record_hash() {
    bump(|c| c.hashes += 1);
}

pub(crate) fn record_multiplication() {
    bump(|c| c.multiplications += 1);
}

pub(crate) fn record_modexp() {
    bump(|c| c.modexps += 1);
}

pub fn snapshot() -> OpCounts {
    COUNTS.with(Cell::get)
}

pub fn measure<T>(f: impl FnOnce() -> T) -> (T, OpCounts) {
    let before = snapshot();
    let out = f();
    (out, snapshot() - before)
}
