//! Deterministic network scenarios, the benchmark suite and storage reports.
//!
//! Scenarios are declared in TOML:
//!
//! ```toml
//! seed = 7
//! chain_length = 32
//! difficulty = 4        # optional, default 4
//! modulus_bits = 256    # optional, default 256
//! branching = 2         # optional, default 2
//! latency_ms = 0        # optional per-request delay on in-process peers
//!
//! [client]              # optional
//! sample = 5
//! spot_checks = 3
//! confirmation_depth = 6
//!
//! [[peers]]
//! strategy = "honest"
//!
//! [[peers]]
//! strategy = "stale-summary"
//! lag = 3
//! ```
//!
//! Strategies: `honest`, `stale-summary` (with `lag`), `forged-block`,
//! `random-proof` (with `seed`), `wrong-position`.

use std::io;
use std::sync::{Arc, RwLock};
use std::time::{Duration, Instant};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::accumulator::{summary_append, verify, Summary};
use crate::chain::{Block, ChainStore, Transaction};
use crate::lightclient::{ClientConfig, ClientError, ClientState, Freshness, FreshnessTracker, TxStatus};
use crate::metrics::{measure, OpCounts};
use crate::node::{LocalPeer, Peer, ProverState, ServingNode, Strategy};
use crate::params::{dev_setup, PublicParams};
use crate::prooftree::{prove_fast, ProductTree, TreeConfig};
use crate::Error;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error(transparent)]
    Client(#[from] ClientError),
}

fn default_difficulty() -> u8 {
    4
}

fn default_modulus_bits() -> u64 {
    256
}

fn default_branching() -> u32 {
    2
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub chain_length: u64,
    #[serde(default = "default_difficulty")]
    pub difficulty: u8,
    #[serde(default = "default_modulus_bits")]
    pub modulus_bits: u64,
    #[serde(default = "default_branching")]
    pub branching: u32,
    #[serde(default)]
    pub latency_ms: u64,
    #[serde(default)]
    pub client: ClientConfig,
    pub peers: Vec<Strategy>,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Adoption {
    /// The honest head summary.
    Honest,
    /// A genuine summary of a shorter prefix of the honest chain.
    Stale,
    /// Anything not on the honest chain.
    Forged,
    NoMajority,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeerRecord {
    pub peer: String,
    pub strategy: Strategy,
    pub outcome: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxCheck {
    pub peer: String,
    /// `deep`, `head` or `absent`.
    pub probe: String,
    pub status: TxStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioOutcome {
    pub seed: u64,
    pub chain_length: u64,
    pub honest_summary: String,
    pub adopted: Adoption,
    pub adopted_height: Option<u64>,
    pub votes: usize,
    pub sampled: Vec<PeerRecord>,
    pub tx_checks: Vec<TxCheck>,
    /// A transaction absent from the honest chain was reported confirmed.
    pub false_confirmation: bool,
    pub replay_detected: bool,
}

impl ScenarioOutcome {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("outcome serializes")
    }
}

/// Genesis plus `n - 1` mined blocks, each with one transfer transaction.
pub fn build_chain<R: RngCore>(params: &PublicParams, n: u64, difficulty: u8, rng: &mut R) -> Result<ChainStore, Error> {
    let mut store = ChainStore::new(params.clone());
    if n == 0 {
        return Ok(store);
    }
    store.append_with_summary(Block::genesis(params, difficulty)?)?;
    let mut sender = [0u8; 32];
    rng.fill_bytes(&mut sender);
    for k in 1..n {
        let mut payload = vec![0u8; 16];
        rng.fill_bytes(&mut payload);
        let tx = Transaction::new(payload, sender, k - 1);
        store.mine_and_append(vec![tx], difficulty)?;
    }
    Ok(store)
}

fn classify(adopted: &Summary, chain: &ChainStore) -> Adoption {
    let h = adopted.height();
    if h > chain.height() || chain.summary_at(h).as_ref() != Some(adopted) {
        Adoption::Forged
    } else if h == chain.height() {
        Adoption::Honest
    } else {
        Adoption::Stale
    }
}

/// Builds the honest chain, serves it through every peer's strategy, runs
/// identification and transaction checks, and records what the client did.
pub fn run_scenario(scenario: &Scenario) -> Result<ScenarioOutcome, HarnessError> {
    let mut rng = ChaCha20Rng::seed_from_u64(scenario.seed);
    let (params, _) = dev_setup(scenario.modulus_bits, &mut rng)?;
    let chain = build_chain(&params, scenario.chain_length, scenario.difficulty, &mut rng)?;
    let config = TreeConfig::new(scenario.branching, crate::prooftree::DEFAULT_HEIGHT)?;
    let state = Arc::new(RwLock::new(ProverState::from_chain(chain.clone(), config)?));

    let peers: Vec<LocalPeer> = scenario
        .peers
        .iter()
        .enumerate()
        .map(|(i, strategy)| {
            let peer = LocalPeer::new(ServingNode::new(state.clone(), strategy.clone()), format!("peer{i}"));
            match scenario.latency_ms {
                0 => peer,
                ms => peer.with_latency(Duration::from_millis(ms)),
            }
        })
        .collect();
    let strategy_of = |label: &str| -> Strategy {
        let i: usize = label.trim_start_matches("peer").parse().expect("own label");
        scenario.peers[i].clone()
    };

    let mut client = ClientState::new(params.clone());
    client.confirmation_depth = scenario.client.confirmation_depth;
    let (adopted, adopted_height, votes, reports) = match client.identify(&peers, &scenario.client, &mut rng) {
        Ok(id) => (classify(&id.summary, &chain), Some(id.summary.height()), id.votes, id.reports),
        Err(ClientError::NoMajority { reports, .. }) => (Adoption::NoMajority, None, 0, reports),
        Err(e) => return Err(e.into()),
    };
    let sampled = reports
        .iter()
        .map(|r| PeerRecord {
            peer: r.peer.clone(),
            strategy: strategy_of(&r.peer),
            outcome: r.outcome.to_string(),
        })
        .collect();

    let n = chain.height();
    let mut probes = Vec::new();
    if n > 0 {
        let deep = n.saturating_sub(scenario.client.confirmation_depth + 1).max(1);
        probes.push(("deep", chain.block(deep).expect("in range").transactions[0].txid));
        probes.push(("head", chain.block(n).expect("in range").transactions[0].txid));
    }
    let mut absent_payload = [0u8; 16];
    rng.fill_bytes(&mut absent_payload);
    probes.push(("absent", Transaction::new(absent_payload.to_vec(), [0xEE; 32], 0).txid));

    let mut tx_checks = Vec::new();
    let mut false_confirmation = false;
    for peer in &peers {
        for (probe, txid) in &probes {
            let status = client.verify_transaction(peer, txid)?;
            if *probe == "absent" && status.is_confirmed() {
                false_confirmation = true;
            }
            tx_checks.push(TxCheck {
                peer: peer.label(),
                probe: (*probe).to_string(),
                status,
            });
        }
    }

    // Recipient-side replay check over the client's own outgoing transactions.
    let mut tracker = FreshnessTracker::new();
    let sender = [0xC1; 32];
    let first = client.next_outgoing_tx(b"payment 1".to_vec(), sender).expect("fresh counter");
    let second = client.next_outgoing_tx(b"payment 2".to_vec(), sender).expect("fresh counter");
    tracker.observe(&first);
    tracker.observe(&second);
    let replay_detected = matches!(tracker.observe(&first), Freshness::Replayed { .. });

    Ok(ScenarioOutcome {
        seed: scenario.seed,
        chain_length: n,
        honest_summary: hex::encode(chain.summary().value().to_bytes_be()),
        adopted,
        adopted_height,
        votes,
        sampled,
        tx_checks,
        false_confirmation,
        replay_detected,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepTally {
    pub runs: u64,
    pub honest: u64,
    pub stale: u64,
    pub forged: u64,
    pub no_majority: u64,
    pub false_confirmations: u64,
}

impl SweepTally {
    pub fn record(&mut self, outcome: &ScenarioOutcome) {
        self.runs += 1;
        match outcome.adopted {
            Adoption::Honest => self.honest += 1,
            Adoption::Stale => self.stale += 1,
            Adoption::Forged => self.forged += 1,
            Adoption::NoMajority => self.no_majority += 1,
        }
        if outcome.false_confirmation {
            self.false_confirmations += 1;
        }
    }
}

/// Runs `base` once per seed.
pub fn sweep(base: &Scenario, seeds: impl IntoIterator<Item = u64>) -> Result<SweepTally, HarnessError> {
    let mut tally = SweepTally::default();
    for seed in seeds {
        tally.record(&run_scenario(&base.with_seed(seed))?);
    }
    Ok(tally)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchConfig {
    pub n_values: Vec<u64>,
    pub m_values: Vec<u32>,
    pub reps: u32,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            n_values: vec![64, 256, 1024, 4096],
            m_values: vec![2, 4],
            reps: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n: u64,
    /// Branching factor; 0 for operations that do not use the tree.
    pub m: u32,
    pub operation: String,
    pub position: u64,
    pub reps: u32,
    pub mean_ns: u128,
    pub hashes: u64,
    pub multiplications: u64,
    pub modexps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub modulus_bits: u64,
    pub rows: Vec<BenchRow>,
    /// Every verify row counted exactly one modular exponentiation.
    pub verify_single_modexp: bool,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        to_csv(&self.rows)
    }

    pub fn rows_for<'a>(&'a self, operation: &'a str) -> impl Iterator<Item = &'a BenchRow> + 'a {
        self.rows.iter().filter(move |r| r.operation == operation)
    }
}

fn to_csv<T: Serialize>(rows: &[T]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("rows serialize");
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8 csv")
}

/// Mean wall-clock time over `reps` runs and the op counts of one run.
pub fn time_op<T>(reps: u32, mut f: impl FnMut() -> T) -> (Duration, OpCounts) {
    let reps = reps.max(1);
    let (_, counts) = measure(&mut f);
    let start = Instant::now();
    for _ in 0..reps {
        std::hint::black_box(f());
    }
    (start.elapsed() / reps, counts)
}

fn bench_positions(n: u64) -> Vec<u64> {
    let mut p = vec![1, n.div_ceil(2), n];
    p.dedup();
    p
}

/// Times summary_append, prove_naive, prove_fast and verify over each `n`.
pub fn bench_suite(params: &PublicParams, config: &BenchConfig) -> Result<BenchReport, Error> {
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut rows = Vec::new();
    let mut verify_single_modexp = true;
    let reps = config.reps;
    let max_n = config.n_values.iter().copied().max().unwrap_or(0);
    // Every n is a prefix of one chain; positions past n are ignored.
    let full = build_chain(params, max_n, 1, &mut rng)?;
    for &n in &config.n_values {
        if n == 0 {
            continue;
        }
        let mut store = ChainStore::new(params.clone());
        for pos in 1..=n {
            let mut block = full.block(pos).expect("prefix").clone();
            block.summary_sidecar = None;
            store.append_with_summary(block)?;
        }
        let row = |operation: &str, m: u32, position: u64, (mean, c): (Duration, OpCounts)| BenchRow {
            n,
            m,
            operation: operation.to_string(),
            position,
            reps,
            mean_ns: mean.as_nanos(),
            hashes: c.hashes,
            multiplications: c.multiplications,
            modexps: c.modexps,
        };

        let prev = store.summary_at(n - 1).expect("prefix");
        let e = store.exponent(n).expect("head").clone();
        rows.push(row("summary_append", 0, n, time_op(reps, || summary_append(&prev, &e, params))));

        for &i in &bench_positions(n) {
            rows.push(row("prove_naive", 0, i, time_op(reps, || store.prove_naive(i).expect("in range"))));
        }
        for &m in &config.m_values {
            let tree = ProductTree::for_chain(TreeConfig::new(m, crate::prooftree::DEFAULT_HEIGHT)?, &store)?;
            for &i in &bench_positions(n) {
                rows.push(row(
                    "prove_fast",
                    m,
                    i,
                    time_op(reps, || prove_fast(&store, &tree, i).expect("in range")),
                ));
            }
        }

        let i = n.div_ceil(2);
        let tree = ProductTree::for_chain(TreeConfig::default(), &store)?;
        let proof = prove_fast(&store, &tree, i)?;
        let summary = store.summary();
        let block = store.encoding(i).expect("in range");
        let r = row("verify", 0, i, time_op(reps, || verify(block, i, &proof, &summary, params)));
        verify_single_modexp &= r.modexps == 1;
        rows.push(r);
    }
    Ok(BenchReport {
        modulus_bits: params.modulus_bits(),
        rows,
        verify_single_modexp,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageRow {
    pub n: u64,
    pub m: u32,
    pub client_bytes: usize,
    /// Bytes of node values held by the product tree.
    pub tree_bytes: u64,
    /// `(log_m n + 1) * n * l / 8` with `l` the exponent width.
    pub formula_bytes: u64,
    pub tree_file_bytes: usize,
    pub chain_bytes: usize,
}

pub fn formula_tree_bytes(n: u64, m: u32, exponent_bits: u32) -> u64 {
    if n == 0 {
        return 0;
    }
    let levels = (n as f64).ln() / f64::from(m).ln() + 1.0;
    (levels * n as f64 * f64::from(exponent_bits) / 8.0).round() as u64
}

/// Client, tree and chain sizes for chains of each length in `n_values`.
pub fn storage_report(params: &PublicParams, n_values: &[u64], m: u32, seed: u64) -> Result<Vec<StorageRow>, Error> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let max_n = n_values.iter().copied().max().unwrap_or(0);
    let full = build_chain(params, max_n, 1, &mut rng)?;
    let config = TreeConfig::new(m, crate::prooftree::DEFAULT_HEIGHT)?;
    let mut rows = Vec::new();
    for &n in n_values {
        let mut store = ChainStore::new(params.clone());
        for pos in 1..=n {
            let mut block = full.block(pos).expect("prefix").clone();
            block.summary_sidecar = None;
            store.append_with_summary(block)?;
        }
        let tree = ProductTree::for_chain(config, &store)?;
        let mut client = ClientState::new(params.clone());
        client.set_summary(store.summary());
        rows.push(StorageRow {
            n,
            m,
            client_bytes: client.to_bytes().len(),
            tree_bytes: tree.stored_bits().div_ceil(8),
            formula_bytes: formula_tree_bytes(n, m, params.exponent_bits()),
            tree_file_bytes: tree.to_bytes().len(),
            chain_bytes: store.to_bytes().len(),
        });
    }
    Ok(rows)
}

pub fn storage_csv(rows: &[StorageRow]) -> String {
    to_csv(rows)
}

/// Writes a CSV table to any sink.
pub fn write_table(out: &mut impl io::Write, csv: &str) -> io::Result<()> {
    out.write_all(csv.as_bytes())
}

/// Randomly mixes strategies into a roster of `honest + byzantine` peers.
pub fn mixed_roster<R: Rng + ?Sized>(honest: usize, byzantine: &[Strategy], count: usize, rng: &mut R) -> Vec<Strategy> {
    let mut roster = vec![Strategy::Honest; honest];
    for _ in 0..count {
        roster.push(byzantine[rng.gen_range(0..byzantine.len())].clone());
    }
    // Fisher-Yates so byzantine peers are not always last.
    for i in (1..roster.len()).rev() {
        let j = rng.gen_range(0..=i);
        roster.swap(i, j);
    }
    roster
}
