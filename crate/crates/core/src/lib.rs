//! Constant-size accumulator summaries for proof-of-work chains.
//!
//! A light client keeps one element of `Z_N*` (the [`Summary`]) and checks
//! that a block sits at a given position with a two-part
//! [`MembershipProof`]. Full nodes build those proofs from the chain, either
//! directly or through a [`ProductTree`](prooftree::ProductTree) that cuts the
//! work to a logarithmic number of stored-node multiplications.
//!
//! Module map:
//! - [`accumulator`]: exponents, summary recurrence, naive proofs, verification
//! - [`params`]: public parameters and the single-party dev setup
//! - [`chain`]: minimal PoW chain with summary sidecars and its file format
//! - [`prooftree`]: sparse m-ary product tree and fast proofs
//! - [`ceremony`]: multi-party modulus generation with a biprimality test
//! - [`node`]: prover state, wire protocol and adversarial serving strategies
//! - [`lightclient`]: chain identification and transaction verification
//! - [`harness`]: deterministic scenarios, benchmarks and storage reports

pub mod accumulator;
pub mod ceremony;
pub mod chain;
pub mod codec;
pub mod harness;
pub mod lightclient;
pub mod metrics;
pub mod node;
pub mod params;
pub mod prooftree;

pub use accumulator::{
    hash_to_exponent, prove_naive, summary_append, verify, BlockExponent, MembershipProof, Summary, Verdict,
};
pub use chain::{Block, BlockHeader, ChainStore, Transaction};
pub use codec::DecodeError;
pub use metrics::OpCounts;
pub use params::{dev_setup, HashId, PublicParams, Trapdoor};
pub use prooftree::{ProductTree, TreeConfig};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("hash output is zero")]
    ZeroExponent,
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: u64, len: u64 },
    #[error("invalid parameters: {0}")]
    InvalidParams(&'static str),
    #[error("invalid summary: {0}")]
    InvalidSummary(&'static str),
    #[error("prime generation failed after bounded retries")]
    PrimalityFailure,
    #[error("malformed encoding: {0}")]
    Malformed(#[from] DecodeError),
    #[error("block does not link to the chain head")]
    InvalidLink,
    #[error("block hash does not meet the difficulty target")]
    InvalidPoW,
    #[error("transaction root does not match transactions")]
    InvalidTxRoot,
    #[error("stored summary does not match recomputation at position {0}")]
    InvalidSidecar(u64),
    #[error("difficulty {0} exceeds the 24-bit cap")]
    DifficultyTooHigh(u8),
    #[error("transaction not found")]
    NotFound,
    #[error("product tree capacity {0} exceeded")]
    CapacityExceeded(u128),
    #[error("product tree holds {tree} leaves but chain has {chain} blocks")]
    TreeOutOfSync { tree: u64, chain: u64 },
    #[error("invalid tree configuration: {0}")]
    InvalidTreeConfig(&'static str),
    #[error("ceremony exhausted {0} attempts without a biprime modulus")]
    ExhaustedAttempts(u64),
    #[error("biprimality witness shares a factor with the modulus")]
    NonUnitWitness,
    #[error("parameters do not match the client state")]
    ParamsMismatch,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
