//! Constant-storage client: chain identification and transaction checks.
//!
//! The client holds the public parameters, one trusted [`Summary`] and its own
//! freshness counter. Everything else is fetched from full nodes and checked
//! against the summary.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::accumulator::{verify, MembershipProof, Summary, Verdict};
use crate::chain::{write_atomic, Block, Hash32, Transaction};
use crate::codec::{DecodeError, Reader, Writer};
use crate::node::{Peer, TransportError, WireMessage};
use crate::params::PublicParams;

pub const CLIENT_MAGIC: &[u8; 7] = b"EPBCCLI";
pub const CLIENT_VERSION: u8 = 1;
pub const DEFAULT_SAMPLE: usize = 5;
pub const DEFAULT_SPOT_CHECKS: usize = 3;
pub const DEFAULT_CONFIRMATION_DEPTH: u64 = 6;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("no summary held by a strict majority of {sampled} sampled peers")]
    NoMajority { sampled: usize, reports: Vec<PeerReport> },
    #[error("cannot sample {sample} of {peers} peers")]
    SampleTooLarge { sample: usize, peers: usize },
    #[error("position {position} beyond trusted height {height}")]
    PositionBeyondSummary { position: u64, height: u64 },
    #[error("freshness counter exhausted")]
    CounterOverflow,
    #[error("network: {0}")]
    Network(#[from] TransportError),
    #[error(transparent)]
    Core(#[from] crate::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClientConfig {
    /// Peers sampled during identification.
    pub sample: usize,
    /// Random blocks checked per candidate summary.
    pub spot_checks: usize,
    pub confirmation_depth: u64,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            sample: DEFAULT_SAMPLE,
            spot_checks: DEFAULT_SPOT_CHECKS,
            confirmation_depth: DEFAULT_CONFIRMATION_DEPTH,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PeerOutcome {
    /// Summary passed every spot check.
    Passed(Summary),
    /// Summary value or height was malformed.
    BadSummary,
    /// A spot-check proof for this index failed.
    FailedSpotCheck(u64),
    Unreachable(String),
    /// Peer answered with the wrong message type or an error frame.
    ProtocolError(String),
}

impl fmt::Display for PeerOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PeerOutcome::Passed(s) => write!(f, "passed height {}", s.height()),
            PeerOutcome::BadSummary => f.write_str("bad summary"),
            PeerOutcome::FailedSpotCheck(i) => write!(f, "failed spot check at {i}"),
            PeerOutcome::Unreachable(e) => write!(f, "unreachable: {e}"),
            PeerOutcome::ProtocolError(e) => write!(f, "protocol error: {e}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeerReport {
    pub peer: String,
    pub outcome: PeerOutcome,
}

#[derive(Debug, Clone)]
pub struct Identification {
    pub summary: Summary,
    /// Number of sampled peers that passed with the adopted summary.
    pub votes: usize,
    pub reports: Vec<PeerReport>,
}

/// Samples `config.sample` peers, spot-checks each claimed summary and returns
/// the one held by a strict majority of the sample.
pub fn identify_chain<P: Peer, R: Rng + ?Sized>(
    params: &PublicParams,
    peers: &[P],
    config: &ClientConfig,
    rng: &mut R,
) -> Result<Identification, ClientError> {
    if config.sample == 0 || config.sample > peers.len() {
        return Err(ClientError::SampleTooLarge {
            sample: config.sample,
            peers: peers.len(),
        });
    }
    let chosen = sample(rng, peers.len(), config.sample).into_vec();
    let mut reports = Vec::with_capacity(chosen.len());
    for i in chosen {
        let peer = &peers[i];
        let outcome = check_peer(params, peer, config.spot_checks, rng);
        reports.push(PeerReport {
            peer: peer.label(),
            outcome,
        });
    }

    let mut tally: Vec<(Summary, usize)> = Vec::new();
    for r in &reports {
        if let PeerOutcome::Passed(s) = &r.outcome {
            match tally.iter_mut().find(|(t, _)| t == s) {
                Some((_, count)) => *count += 1,
                None => tally.push((s.clone(), 1)),
            }
        }
    }
    let winner = tally.into_iter().find(|(_, count)| 2 * count > config.sample);
    match winner {
        Some((summary, votes)) => Ok(Identification {
            summary,
            votes,
            reports,
        }),
        None => Err(ClientError::NoMajority {
            sampled: config.sample,
            reports,
        }),
    }
}

fn check_peer<P: Peer + ?Sized, R: Rng + ?Sized>(params: &PublicParams, peer: &P, k: usize, rng: &mut R) -> PeerOutcome {
    let summary = match peer.request(&WireMessage::GetSummary) {
        Ok(WireMessage::Summary { value, height }) => match Summary::new(value, height, params) {
            Ok(s) => s,
            Err(_) => return PeerOutcome::BadSummary,
        },
        Ok(other) => return PeerOutcome::ProtocolError(describe(&other)),
        Err(e) => return PeerOutcome::Unreachable(e.to_string()),
    };
    let height = summary.height();
    if height == 0 {
        return PeerOutcome::Passed(summary);
    }
    let indices: Vec<u64> = if height <= k as u64 {
        (1..=height).collect()
    } else {
        let len = usize::try_from(height).unwrap_or(usize::MAX);
        sample(rng, len, k).into_iter().map(|i| i as u64 + 1).collect()
    };
    for index in indices {
        match peer.request(&WireMessage::GetProof { index }) {
            Ok(WireMessage::Proof(p)) => {
                if p.index != index || !verify(&p.block, index, &p.proof, &summary, params).is_accept() {
                    return PeerOutcome::FailedSpotCheck(index);
                }
            }
            Ok(_) => return PeerOutcome::FailedSpotCheck(index),
            Err(e) => return PeerOutcome::Unreachable(e.to_string()),
        }
    }
    PeerOutcome::Passed(summary)
}

fn describe(msg: &WireMessage) -> String {
    match msg {
        WireMessage::Error { code, message } => format!("error {code}: {message}"),
        other => format!("unexpected message type {:#04x}", other.type_byte()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InvalidReason {
    NotFound,
    ProofRejected,
    BeyondSummary,
    MalformedBlock,
    TxNotInBlock,
    UnexpectedResponse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum TxStatus {
    Confirmed { position: u64, depth: u64 },
    Unconfirmed { position: u64, depth: u64 },
    Invalid { reason: InvalidReason },
}

impl TxStatus {
    pub fn is_confirmed(&self) -> bool {
        matches!(self, TxStatus::Confirmed { .. })
    }

    fn invalid(reason: InvalidReason) -> Self {
        TxStatus::Invalid { reason }
    }
}

/// Everything a light client persists, plus its confirmation depth.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientState {
    params: PublicParams,
    summary: Summary,
    counter: u64,
    pub confirmation_depth: u64,
}

impl ClientState {
    /// Fresh client trusting only the empty chain.
    pub fn new(params: PublicParams) -> Self {
        let summary = Summary::empty(&params);
        Self {
            params,
            summary,
            counter: 0,
            confirmation_depth: DEFAULT_CONFIRMATION_DEPTH,
        }
    }

    pub fn params(&self) -> &PublicParams {
        &self.params
    }

    pub fn summary(&self) -> &Summary {
        &self.summary
    }

    pub fn height(&self) -> u64 {
        self.summary.height()
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn set_summary(&mut self, summary: Summary) {
        self.summary = summary;
    }

    /// Runs [`identify_chain`] and adopts the winning summary.
    pub fn identify<P: Peer, R: Rng + ?Sized>(
        &mut self,
        peers: &[P],
        config: &ClientConfig,
        rng: &mut R,
    ) -> Result<Identification, ClientError> {
        let id = identify_chain(&self.params, peers, config, rng)?;
        self.summary = id.summary.clone();
        Ok(id)
    }

    pub fn verify_block(&self, block_bytes: &[u8], position: u64, proof: &MembershipProof) -> Result<Verdict, ClientError> {
        if position > self.height() {
            return Err(ClientError::PositionBeyondSummary {
                position,
                height: self.height(),
            });
        }
        Ok(verify(block_bytes, position, proof, &self.summary, &self.params))
    }

    /// Fetches a transaction proof from `peer` and classifies it against the
    /// trusted summary. Transport failures are errors, never `Invalid`.
    pub fn verify_transaction<P: Peer + ?Sized>(&self, peer: &P, txid: &Hash32) -> Result<TxStatus, ClientError> {
        let (proof, tx_offset) = match peer.request(&WireMessage::GetTx { txid: *txid })? {
            WireMessage::TxProof { proof, tx_offset } => (proof, tx_offset),
            WireMessage::Error { code: 3, .. } => return Ok(TxStatus::invalid(InvalidReason::NotFound)),
            _ => return Ok(TxStatus::invalid(InvalidReason::UnexpectedResponse)),
        };
        let position = proof.index;
        let verdict = match self.verify_block(&proof.block, position, &proof.proof) {
            Ok(v) => v,
            Err(ClientError::PositionBeyondSummary { .. }) => return Ok(TxStatus::invalid(InvalidReason::BeyondSummary)),
            Err(e) => return Err(e),
        };
        if !verdict.is_accept() {
            return Ok(TxStatus::invalid(InvalidReason::ProofRejected));
        }
        let block = match Block::canonical_decode(&proof.block) {
            Ok(b) => b,
            Err(_) => return Ok(TxStatus::invalid(InvalidReason::MalformedBlock)),
        };
        match block.transactions.get(tx_offset as usize) {
            Some(tx) if &tx.txid == txid && tx.txid_is_consistent() => {}
            _ => return Ok(TxStatus::invalid(InvalidReason::TxNotInBlock)),
        }
        let depth = self.height() - position;
        Ok(if depth >= self.confirmation_depth {
            TxStatus::Confirmed { position, depth }
        } else {
            TxStatus::Unconfirmed { position, depth }
        })
    }

    /// Builds a transaction carrying the current counter, then advances it.
    pub fn next_outgoing_tx(&mut self, payload: Vec<u8>, sender_id: Hash32) -> Result<Transaction, ClientError> {
        let counter = self.counter;
        self.counter = counter.checked_add(1).ok_or(ClientError::CounterOverflow)?;
        Ok(Transaction::new(payload, sender_id, counter))
    }

    /// Magic, version, params fingerprint, summary padded to the modulus
    /// width, height and counter. Size depends only on the modulus.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.raw(CLIENT_MAGIC)
            .u8(CLIENT_VERSION)
            .raw(&self.params.fingerprint())
            .biguint_fixed(self.summary.value(), self.params.modulus_bytes())
            .u64(self.summary.height())
            .u64(self.counter);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8], params: PublicParams) -> Result<Self, ClientError> {
        let mut r = Reader::new(bytes);
        let magic = r.take(CLIENT_MAGIC.len()).map_err(crate::Error::from)?;
        if magic != CLIENT_MAGIC {
            return Err(crate::Error::from(DecodeError::BadMagic).into());
        }
        let version = r.u8().map_err(crate::Error::from)?;
        if version != CLIENT_VERSION {
            return Err(crate::Error::from(DecodeError::UnsupportedVersion(version)).into());
        }
        let fingerprint: [u8; 32] = r.array().map_err(crate::Error::from)?;
        if fingerprint != params.fingerprint() {
            return Err(crate::Error::ParamsMismatch.into());
        }
        let value = r.biguint_fixed(params.modulus_bytes()).map_err(crate::Error::from)?;
        let height = r.u64().map_err(crate::Error::from)?;
        let counter = r.u64().map_err(crate::Error::from)?;
        r.finish().map_err(crate::Error::from)?;
        let summary = Summary::new(value, height, &params)?;
        Ok(Self {
            params,
            summary,
            counter,
            confirmation_depth: DEFAULT_CONFIRMATION_DEPTH,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ClientError> {
        Ok(write_atomic(path, &self.to_bytes())?)
    }

    pub fn load(path: &Path, params: PublicParams) -> Result<Self, ClientError> {
        let bytes = fs::read(path).map_err(crate::Error::from)?;
        Self::from_bytes(&bytes, params)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Freshness {
    Fresh,
    /// Counter not above the last one seen from this sender.
    Replayed { last_seen: u64 },
}

/// Recipient-side replay detection: remembers the highest counter per sender.
#[derive(Debug, Clone, Default)]
pub struct FreshnessTracker {
    last: HashMap<Hash32, u64>,
}

impl FreshnessTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn observe(&mut self, tx: &Transaction) -> Freshness {
        match self.last.get(&tx.sender_id) {
            Some(&last) if tx.freshness_counter <= last => Freshness::Replayed { last_seen: last },
            _ => {
                self.last.insert(tx.sender_id, tx.freshness_counter);
                Freshness::Fresh
            }
        }
    }
}
