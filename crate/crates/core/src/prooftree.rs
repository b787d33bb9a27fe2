//! Sparse m-ary product tree over block exponents.
//!
//! Leaf `k` (0-based) holds the exponent of block `k + 1`; a node at level `j`
//! with index `i` covers leaves `[i * m^j, (i + 1) * m^j)` and stores the
//! product of the occupied leaves below it. Empty subtrees are never stored
//! (their value is 1), and levels above the smallest one that covers every
//! occupied leaf are implicit. That keeps storage at `(log_m n + 1)` levels of
//! roughly `n * 256` bits each, regardless of the configured height.
//!
//! Operation counts follow modular exponentiations. The multiplications on
//! stored nodes still grow with the bit length of the product, so total
//! bit-work of a suffix product is superlinear in the number of blocks it
//! covers even though it touches only `O(m log_m n)` nodes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use num_bigint::BigUint;
use num_traits::One;

use crate::accumulator::{modexp, mul_assign, BlockExponent, MembershipProof};
use crate::chain::{write_atomic, ChainStore};
use crate::codec::{DecodeError, Reader, Writer};
use crate::Error;

pub const DEFAULT_BRANCHING: u32 = 2;
pub const DEFAULT_HEIGHT: u8 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeConfig {
    branching: u32,
    height: u8,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            branching: DEFAULT_BRANCHING,
            height: DEFAULT_HEIGHT,
        }
    }
}

impl TreeConfig {
    pub fn new(branching: u32, height: u8) -> Result<Self, Error> {
        if branching < 2 {
            return Err(Error::InvalidTreeConfig("branching factor must be at least 2"));
        }
        if height == 0 {
            return Err(Error::InvalidTreeConfig("height must be at least 1"));
        }
        Ok(Self { branching, height })
    }

    pub fn branching(&self) -> u32 {
        self.branching
    }

    pub fn height(&self) -> u8 {
        self.height
    }

    /// `m^(h-1)` leaves, saturating at `u128::MAX`.
    pub fn capacity(&self) -> u128 {
        u128::from(self.branching)
            .checked_pow(u32::from(self.height) - 1)
            .unwrap_or(u128::MAX)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProductTree {
    config: TreeConfig,
    leaves: u64,
    top: u8,
    nodes: BTreeMap<(u8, u64), BigUint>,
}

impl ProductTree {
    pub fn new(config: TreeConfig) -> Self {
        Self {
            config,
            leaves: 0,
            top: 0,
            nodes: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> TreeConfig {
        self.config
    }

    pub fn len(&self) -> u64 {
        self.leaves
    }

    pub fn is_empty(&self) -> bool {
        self.leaves == 0
    }

    fn span(&self, level: u8) -> u64 {
        u64::from(self.config.branching).saturating_pow(u32::from(level))
    }

    /// Smallest level whose single node covers `n` leaves.
    fn top_level_for(&self, n: u64) -> u8 {
        let mut level = 0u8;
        while self.span(level) < n {
            level += 1;
        }
        level
    }

    pub fn node(&self, level: u8, index: u64) -> Option<&BigUint> {
        self.nodes.get(&(level, index))
    }

    pub fn leaf(&self, position: u64) -> Option<&BigUint> {
        self.node(0, position.checked_sub(1)?)
    }

    /// Product of every leaf; 1 for the empty tree.
    pub fn root(&self) -> BigUint {
        self.node(self.top, 0).cloned().unwrap_or_else(BigUint::one)
    }

    pub fn append(&mut self, exponent: &BlockExponent) -> Result<(), Error> {
        let capacity = self.config.capacity();
        if u128::from(self.leaves) >= capacity {
            return Err(Error::CapacityExceeded(capacity));
        }
        let index = self.leaves;
        let new_top = self.top_level_for(index + 1);
        if new_top > self.top {
            debug_assert_eq!(new_top, self.top + 1);
            let old_root = self.nodes[&(self.top, 0)].clone();
            self.nodes.insert((new_top, 0), old_root);
        }
        self.nodes.insert((0, index), exponent.value().clone());
        for level in 1..=new_top {
            let key = (level, index / self.span(level));
            match self.nodes.get_mut(&key) {
                Some(v) => mul_assign(v, exponent.value()),
                None => {
                    self.nodes.insert(key, exponent.value().clone());
                }
            }
        }
        self.top = new_top;
        self.leaves += 1;
        Ok(())
    }

    /// Bottom-up construction from a full list of exponents.
    pub fn from_exponents(config: TreeConfig, exponents: &[BlockExponent]) -> Result<Self, Error> {
        let mut tree = Self::new(config);
        if u128::from(exponents.len() as u64) > config.capacity() {
            return Err(Error::CapacityExceeded(config.capacity()));
        }
        if exponents.is_empty() {
            return Ok(tree);
        }
        let n = exponents.len() as u64;
        tree.leaves = n;
        tree.top = tree.top_level_for(n);
        let mut level: Vec<BigUint> = exponents.iter().map(|e| e.value().clone()).collect();
        let m = config.branching as usize;
        for j in 0..=tree.top {
            for (i, v) in level.iter().enumerate() {
                tree.nodes.insert((j, i as u64), v.clone());
            }
            level = level
                .chunks(m)
                .map(|c| c.iter().fold(BigUint::one(), |acc, v| acc * v))
                .collect();
        }
        Ok(tree)
    }

    /// `prod_{k = from..=n} e_k` from stored nodes; 1 when `from = n + 1`.
    pub fn suffix_product(&self, from: u64) -> Result<BigUint, Error> {
        self.range_product(from, self.leaves)
    }

    /// `prod_{k = from..=to} e_k` (1-based, inclusive); 1 when `from = to + 1`.
    ///
    /// Covers the range with the highest stored nodes that fit inside it,
    /// leftmost first. A node's range is clipped to the occupied leaves, so a
    /// suffix takes at most `m - 1` nodes per level.
    pub fn range_product(&self, from: u64, to: u64) -> Result<BigUint, Error> {
        if to > self.leaves || from == 0 || from > to + 1 {
            return Err(Error::IndexOutOfRange {
                index: from,
                len: self.leaves,
            });
        }
        let mut acc: Option<BigUint> = None;
        if from <= to {
            self.cover(self.top, 0, from - 1, to, &mut acc);
        }
        Ok(acc.unwrap_or_else(BigUint::one))
    }

    fn cover(&self, level: u8, index: u64, lo: u64, hi: u64, acc: &mut Option<BigUint>) {
        let span = self.span(level);
        let start = index * span;
        let end = start.saturating_add(span).min(self.leaves);
        if start >= hi || end <= lo {
            return;
        }
        if lo <= start && end <= hi {
            let node = &self.nodes[&(level, index)];
            match acc.as_mut() {
                Some(a) => mul_assign(a, node),
                None => *acc = Some(node.clone()),
            }
            return;
        }
        let m = u64::from(self.config.branching);
        for child in 0..m {
            self.cover(level - 1, index * m + child, lo, hi, acc);
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Sum of the bit lengths of every stored node.
    pub fn stored_bits(&self) -> u64 {
        self.nodes.values().map(BigUint::bits).sum()
    }

    /// Header `(m u32, h u8, n u64)` then `(level u8, index u64, value)`
    /// records sorted by level and index.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u32(self.config.branching).u8(self.config.height).u64(self.leaves);
        for ((level, index), value) in &self.nodes {
            w.u8(*level).u64(*index).biguint(value);
        }
        w.finish()
    }

    /// Parses a snapshot and checks it against a rebuild from its leaves.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, Error> {
        let mut r = Reader::new(bytes);
        let config = TreeConfig::new(r.u32()?, r.u8()?)?;
        let leaves = r.u64()?;
        let mut nodes = BTreeMap::new();
        while r.remaining() > 0 {
            let key = (r.u8()?, r.u64()?);
            let value = r.biguint()?;
            if nodes.insert(key, value).is_some() {
                return Err(DecodeError::Invalid("duplicate tree node").into());
            }
        }
        let exponents = (0..leaves)
            .map(|k| {
                nodes
                    .get(&(0, k))
                    .cloned()
                    .ok_or(DecodeError::Invalid("missing leaf"))
                    .and_then(|v| BlockExponent::new(v).map_err(|_| DecodeError::Invalid("zero leaf")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let rebuilt = Self::from_exponents(config, &exponents)?;
        if rebuilt.nodes != nodes {
            return Err(DecodeError::Invalid("internal node is not the product of its children").into());
        }
        Ok(rebuilt)
    }

    pub fn save(&self, path: &Path) -> Result<(), Error> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Tree over every exponent of `store`.
    pub fn for_chain(config: TreeConfig, store: &ChainStore) -> Result<Self, Error> {
        Self::from_exponents(config, store.exponents())
    }
}

/// Proof for block `index` as `S_{index-1}^r mod N` with `r` the suffix
/// product after `index`. Equal to the naive proof bit for bit.
pub fn prove_fast(store: &ChainStore, tree: &ProductTree, index: u64) -> Result<MembershipProof, Error> {
    prove_at_height(store, tree, index, store.height())
}

/// Proof for block `index` against the historical summary `S_height`.
pub fn prove_at_height(store: &ChainStore, tree: &ProductTree, index: u64, height: u64) -> Result<MembershipProof, Error> {
    let n = store.height();
    if tree.len() != n {
        return Err(Error::TreeOutOfSync { tree: tree.len(), chain: n });
    }
    if height > n {
        return Err(Error::IndexOutOfRange { index: height, len: n });
    }
    if index == 0 || index > height {
        return Err(Error::IndexOutOfRange { index, len: height });
    }
    let leaf = tree.leaf(index).expect("in range");
    let exponent = store.exponent(index).expect("in range");
    if leaf != exponent.value() {
        return Err(Error::TreeOutOfSync { tree: tree.len(), chain: n });
    }
    let suffix = tree.range_product(index + 1, height)?;
    let base = store.summary_at(index - 1).expect("in range");
    let p2 = modexp(base.value(), &suffix, store.params().modulus());
    Ok(MembershipProof {
        p1: exponent.clone(),
        p2,
    })
}

fn branching_cost(n: f64, m: u32) -> f64 {
    n.ln() / f64::from(m).ln() + f64::from(m)
}

/// Integer `m >= 2` minimizing `log_m n + m`; ties go to the smaller `m`.
pub fn optimal_branching(n: u64) -> u32 {
    if n < 2 {
        return 2;
    }
    let n = n as f64;
    let mut m = 2u32;
    // The derivative 1 - ln n / (m ln^2 m) increases in m, so the cost is unimodal.
    while branching_cost(n, m + 1) < branching_cost(n, m) {
        m += 1;
    }
    m
}

/// Real root of `m ln^2 m = ln n`, the stationary point of `log_m n + m`.
pub fn continuous_optimum(n: f64) -> f64 {
    let target = n.ln();
    let g = |m: f64| m * m.ln().powi(2);
    let mut lo = 1.0f64;
    let mut hi = target.max(std::f64::consts::E) + 1.0;
    while g(hi) < target {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
