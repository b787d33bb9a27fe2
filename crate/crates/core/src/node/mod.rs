//! Full-node prover: chain, product tree and summaries behind a request/response protocol.

pub mod transport;
pub mod wire;

use num_bigint::{BigUint, RandBigInt};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::accumulator::{hash_to_exponent, Summary};
use crate::chain::{Block, ChainStore, Hash32, Transaction};
use crate::params::PublicParams;
use crate::prooftree::{prove_at_height, ProductTree, TreeConfig};
use crate::Error;

pub use transport::{serve_tcp, LocalPeer, Peer, ServingNode, TcpPeer, TransportError};
pub use wire::{FrameDecoder, FrameError, ProofPayload, WireMessage};

use wire::{ERR_INDEX_OUT_OF_RANGE, ERR_INTERNAL, ERR_TX_NOT_FOUND, ERR_UNKNOWN_TYPE};

/// Chain plus product tree, kept in lockstep.
#[derive(Debug, Clone)]
pub struct ProverState {
    chain: ChainStore,
    tree: ProductTree,
}

impl ProverState {
    pub fn new(params: PublicParams, config: TreeConfig) -> Self {
        Self {
            chain: ChainStore::new(params),
            tree: ProductTree::new(config),
        }
    }

    /// Builds the tree over an existing chain.
    pub fn from_chain(chain: ChainStore, config: TreeConfig) -> Result<Self, Error> {
        let tree = ProductTree::for_chain(config, &chain)?;
        Ok(Self { chain, tree })
    }

    pub fn chain(&self) -> &ChainStore {
        &self.chain
    }

    pub fn tree(&self) -> &ProductTree {
        &self.tree
    }

    pub fn params(&self) -> &PublicParams {
        self.chain.params()
    }

    pub fn height(&self) -> u64 {
        self.chain.height()
    }

    pub fn summary(&self) -> Summary {
        self.chain.summary()
    }

    /// Appends `block` to chain and tree, or leaves both untouched on error.
    pub fn ingest_block(&mut self, block: Block) -> Result<(), Error> {
        let (encoding, exponent, sidecar) = self.chain.prepare_append(&block)?;
        self.tree.append(&exponent)?;
        self.chain.commit_append(block, encoding, exponent, sidecar);
        Ok(())
    }

    /// Proof for `index` against the summary at `height`.
    pub fn proof_at(&self, index: u64, height: u64) -> Result<ProofPayload, Error> {
        let proof = prove_at_height(&self.chain, &self.tree, index, height)?;
        Ok(ProofPayload {
            block: self.chain.encoding(index).expect("proved index exists").to_vec(),
            index,
            proof,
        })
    }

    /// Honest answer to a request.
    pub fn serve(&self, request: &WireMessage) -> WireMessage {
        self.serve_at(request, self.height())
    }

    /// Answers as if the chain ended at `height`.
    fn serve_at(&self, request: &WireMessage, height: u64) -> WireMessage {
        match request {
            WireMessage::GetSummary => {
                let s = self.chain.summary_at(height).expect("height within chain");
                WireMessage::Summary {
                    value: s.value().clone(),
                    height: s.height(),
                }
            }
            WireMessage::GetProof { index } => match self.proof_at(*index, height) {
                Ok(p) => WireMessage::Proof(p),
                Err(e) => error_response(&e),
            },
            WireMessage::GetTx { txid } => {
                let loc = match self.chain.find_tx(txid) {
                    Ok((_, loc)) if loc.position <= height => loc,
                    _ => return WireMessage::error(ERR_TX_NOT_FOUND, "transaction not found"),
                };
                match self.proof_at(loc.position, height) {
                    Ok(proof) => WireMessage::TxProof {
                        proof,
                        tx_offset: loc.offset,
                    },
                    Err(e) => error_response(&e),
                }
            }
            _ => WireMessage::error(ERR_UNKNOWN_TYPE, "not a request"),
        }
    }

    /// Answer shaped by `strategy`. `Honest` is exactly [`ProverState::serve`].
    pub fn serve_with(&self, strategy: &Strategy, request: &WireMessage) -> WireMessage {
        match strategy {
            Strategy::Honest => self.serve(request),
            Strategy::StaleSummary { lag } => self.serve_at(request, self.height().saturating_sub(*lag)),
            Strategy::ForgedBlock => self.serve_forged(request),
            Strategy::RandomProof { seed } => self.serve_random(*seed, request),
            Strategy::WrongPosition => self.serve_shifted(request),
        }
    }

    fn serve_forged(&self, request: &WireMessage) -> WireMessage {
        let hash_id = self.params().hash_id();
        let forge = |mut p: ProofPayload, block: Option<Block>| -> WireMessage {
            let mut block = match block {
                Some(b) => b,
                None => match Block::canonical_decode(&p.block) {
                    Ok(b) => b,
                    Err(_) => return WireMessage::error(ERR_INTERNAL, "stored block undecodable"),
                },
            };
            block.header.nonce ^= 1;
            p.block = block.canonical_encode();
            match hash_to_exponent(&p.block, p.index, hash_id) {
                Ok(e) => p.proof.p1 = e,
                Err(e) => return error_response(&e),
            }
            WireMessage::Proof(p)
        };
        match self.serve(request) {
            WireMessage::Proof(p) => forge(p, None),
            WireMessage::TxProof { proof, tx_offset } => match forge(proof, None) {
                WireMessage::Proof(proof) => WireMessage::TxProof { proof, tx_offset },
                other => other,
            },
            WireMessage::Error { code, .. } if code == ERR_TX_NOT_FOUND => {
                // Claim the missing transaction sits deep in the chain.
                let WireMessage::GetTx { txid } = request else {
                    unreachable!("only GET_TX yields tx-not-found")
                };
                match self.proof_at(1, self.height()) {
                    Ok(p) => {
                        let mut block = self.chain.block(1).expect("height >= 1").clone();
                        block.summary_sidecar = None;
                        block.transactions.push(fabricated_tx(txid));
                        let tx_offset = (block.transactions.len() - 1) as u32;
                        match forge(p, Some(block)) {
                            WireMessage::Proof(proof) => WireMessage::TxProof { proof, tx_offset },
                            other => other,
                        }
                    }
                    Err(_) => WireMessage::error(ERR_TX_NOT_FOUND, "transaction not found"),
                }
            }
            other => other,
        }
    }

    fn serve_random(&self, seed: u64, request: &WireMessage) -> WireMessage {
        let modulus = self.params().modulus().clone();
        let mut rng = request_rng(seed, request);
        let mut scramble = |p: &mut ProofPayload| {
            p.proof.p2 = rng.gen_biguint_range(&BigUint::from(1u8), &modulus);
        };
        match self.serve(request) {
            WireMessage::Proof(mut p) => {
                scramble(&mut p);
                WireMessage::Proof(p)
            }
            WireMessage::TxProof { mut proof, tx_offset } => {
                scramble(&mut proof);
                WireMessage::TxProof { proof, tx_offset }
            }
            other => other,
        }
    }

    fn serve_shifted(&self, request: &WireMessage) -> WireMessage {
        let n = self.height();
        let neighbour = |i: u64| if i < n { i + 1 } else { i.saturating_sub(1) };
        match request {
            WireMessage::GetProof { index } if (1..=n).contains(index) => {
                let j = neighbour(*index);
                if j == 0 {
                    // Single-block chain: relabel the only proof.
                    return match self.proof_at(1, n) {
                        Ok(mut p) => {
                            p.index = 2;
                            WireMessage::Proof(p)
                        }
                        Err(e) => error_response(&e),
                    };
                }
                match self.proof_at(j, n) {
                    Ok(mut p) => {
                        p.index = *index;
                        WireMessage::Proof(p)
                    }
                    Err(e) => error_response(&e),
                }
            }
            WireMessage::GetTx { .. } => match self.serve(request) {
                WireMessage::TxProof { mut proof, tx_offset } => {
                    proof.index = if proof.index < n { proof.index + 1 } else { proof.index - 1 };
                    if proof.index == 0 {
                        proof.index = 2;
                    }
                    WireMessage::TxProof { proof, tx_offset }
                }
                other => other,
            },
            _ => self.serve(request),
        }
    }
}

fn error_response(e: &Error) -> WireMessage {
    match e {
        Error::IndexOutOfRange { .. } => WireMessage::error(ERR_INDEX_OUT_OF_RANGE, e.to_string()),
        Error::NotFound => WireMessage::error(ERR_TX_NOT_FOUND, e.to_string()),
        _ => WireMessage::error(ERR_INTERNAL, e.to_string()),
    }
}

fn fabricated_tx(txid: &Hash32) -> Transaction {
    let mut tx = Transaction::new(b"forged".to_vec(), [0xAA; 32], 0);
    tx.txid = *txid;
    tx
}

fn request_rng(seed: u64, request: &WireMessage) -> ChaCha20Rng {
    let mut h = Sha256::new();
    h.update(seed.to_be_bytes());
    h.update(request.to_frame());
    ChaCha20Rng::from_seed(h.finalize().into())
}

/// How a node answers requests. Everything but `Honest` is adversarial.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "kebab-case")]
pub enum Strategy {
    Honest,
    /// Serves the chain as it stood `lag` blocks ago.
    StaleSummary { lag: u64 },
    /// Tampers the served block and recomputes `p1`, leaving `p2` as is.
    ForgedBlock,
    /// Replaces `p2` with a value derived from `seed` and the request.
    RandomProof { seed: u64 },
    /// Serves a neighbouring block's genuine proof under the requested index.
    WrongPosition,
}

impl Strategy {
    pub fn is_honest(&self) -> bool {
        matches!(self, Strategy::Honest)
    }
}
