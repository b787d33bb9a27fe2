//! `epbc`: parameter setup, mining, proving, serving and light-client commands.
//!
//! Exit codes: 0 success, 1 protocol rejection or runtime failure, 2 usage error.

mod bundle;

use std::fs;
use std::io::{self, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::rngs::OsRng;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use epbc_core::ceremony::{run_ceremony, CeremonyConfig};
use epbc_core::chain::{ChainStore, Transaction, DEFAULT_DIFFICULTY};
use epbc_core::harness::{bench_suite, run_scenario, storage_csv, storage_report, BenchConfig, Scenario};
use epbc_core::lightclient::{ClientConfig, ClientError, ClientState, TxStatus};
use epbc_core::node::{serve_tcp, ProverState, ServingNode, Strategy, TcpPeer};
use epbc_core::prooftree::{prove_fast, DEFAULT_HEIGHT};
use epbc_core::{dev_setup, Block, PublicParams, TreeConfig, Verdict};

use bundle::ProofBundle;

#[derive(Parser, Debug)]
#[command(name = "epbc", version, about = "Accumulator summaries and membership proofs for a proof-of-work chain")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Single-party parameter setup (development only; the factors are discarded).
    Setup {
        /// Output parameters file.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1024)]
        bits: u64,
        /// Deterministic RNG seed; OS entropy when omitted.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Multi-party modulus generation with a distributed biprimality test.
    Ceremony {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        parties: usize,
        #[arg(long, default_value_t = 1024)]
        bits: u64,
        /// Where to write the public transcript.
        #[arg(long)]
        transcript: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Mines blocks onto a chain file, creating it with a genesis block if absent.
    Mine {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        chain: PathBuf,
        /// Number of blocks to add (the genesis block counts).
        #[arg(long)]
        count: u64,
        #[arg(long, default_value_t = DEFAULT_DIFFICULTY)]
        difficulty: u8,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Writes a membership proof for one block.
    Prove {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        chain: PathBuf,
        /// 1-based block position.
        #[arg(long)]
        index: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        branching: u32,
    },
    /// Checks a proof file against a trusted summary (client state or chain head).
    Verify {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        proof: PathBuf,
        /// Light-client state holding the trusted summary.
        #[arg(long, conflicts_with = "chain", required_unless_present = "chain")]
        state: Option<PathBuf>,
        /// Chain file whose head summary is trusted.
        #[arg(long)]
        chain: Option<PathBuf>,
    },
    /// Serves a chain over TCP.
    Serve {
        #[arg(long)]
        chain: PathBuf,
        #[arg(long)]
        params: PathBuf,
        /// Address to bind; port 0 picks a free port.
        #[arg(long, default_value = "127.0.0.1:7878")]
        listen: String,
        #[arg(long, default_value_t = 2)]
        branching: u32,
        /// Serving behaviour; anything but `honest` is for testing clients.
        #[arg(long, value_enum, default_value_t = StrategyArg::Honest)]
        strategy: StrategyArg,
        /// Blocks withheld by the stale-summary strategy.
        #[arg(long, default_value_t = 1)]
        lag: u64,
    },
    /// Light-client commands.
    Client {
        #[command(subcommand)]
        command: ClientCommand,
    },
    /// Runs the benchmark suite and writes CSV tables.
    Bench {
        /// Parameters to benchmark with; a seeded 1024-bit dev setup when omitted.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = [64u64, 256, 1024, 4096])]
        n: Vec<u64>,
        #[arg(long, value_delimiter = ',', default_values_t = [2u32, 4])]
        m: Vec<u32>,
        #[arg(long, default_value_t = 10)]
        reps: u32,
        /// Timing table; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write a storage table here.
        #[arg(long)]
        storage: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Runs a scenario file and prints its outcome as JSON.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Subcommand, Debug)]
enum ClientCommand {
    /// Samples peers, spot-checks their summaries and adopts the majority one.
    Identify {
        #[command(flatten)]
        common: ClientArgs,
        /// Comma-separated peer addresses.
        #[arg(long, value_delimiter = ',', required = true)]
        peers: Vec<String>,
        #[arg(long, default_value_t = epbc_core::lightclient::DEFAULT_SAMPLE)]
        sample: usize,
        #[arg(long, default_value_t = epbc_core::lightclient::DEFAULT_SPOT_CHECKS)]
        spot_checks: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Asks a peer for a transaction proof and checks it against the trusted summary.
    VerifyTx {
        #[command(flatten)]
        common: ClientArgs,
        #[arg(long)]
        peer: String,
        /// Transaction id, 64 hex characters.
        #[arg(long)]
        txid: String,
        #[arg(long, default_value_t = epbc_core::lightclient::DEFAULT_CONFIRMATION_DEPTH)]
        depth: u64,
    },
}

#[derive(Args, Debug)]
struct ClientArgs {
    #[arg(long)]
    params: PathBuf,
    /// Client state file; created on first identify.
    #[arg(long)]
    state: PathBuf,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum StrategyArg {
    Honest,
    StaleSummary,
    ForgedBlock,
    RandomProof,
    WrongPosition,
}

enum Failure {
    /// Bad arguments or missing inputs; nothing was touched.
    Usage(String),
    /// The protocol said no, or a runtime step failed.
    Rejected(String),
}

type CmdResult = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn rejected(msg: impl Into<String>) -> Failure {
    Failure::Rejected(msg.into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Rejected(msg)) => {
            eprintln!("rejected: {msg}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(command: Command) -> CmdResult {
    match command {
        Command::Setup { out, bits, seed } => setup(&out, bits, seed),
        Command::Ceremony {
            out,
            parties,
            bits,
            transcript,
            seed,
        } => ceremony(&out, parties, bits, transcript.as_deref(), seed),
        Command::Mine {
            params,
            chain,
            count,
            difficulty,
            seed,
        } => mine(&params, &chain, count, difficulty, seed),
        Command::Prove {
            params,
            chain,
            index,
            out,
            branching,
        } => prove(&params, &chain, index, &out, branching),
        Command::Verify {
            params,
            proof,
            state,
            chain,
        } => verify_cmd(&params, &proof, state.as_deref(), chain.as_deref()),
        Command::Serve {
            chain,
            params,
            listen,
            branching,
            strategy,
            lag,
        } => serve(&chain, &params, &listen, branching, strategy, lag),
        Command::Client { command } => client(command),
        Command::Bench {
            params,
            n,
            m,
            reps,
            out,
            storage,
            seed,
        } => bench(params.as_deref(), n, m, reps, out.as_deref(), storage.as_deref(), seed),
        Command::Simulate { scenario, seed } => simulate(&scenario, seed),
    }
}

fn rng_for(seed: Option<u64>) -> ChaCha20Rng {
    match seed {
        Some(s) => ChaCha20Rng::seed_from_u64(s),
        None => ChaCha20Rng::from_rng(OsRng).expect("OS entropy"),
    }
}

fn require_file(path: &Path, what: &str) -> CmdResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("{what} file {} does not exist", path.display())))
    }
}

fn require_parent(path: &Path) -> CmdResult {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => {
            Err(usage(format!("directory {} does not exist", p.display())))
        }
        _ => Ok(()),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> CmdResult {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)
        .and_then(|()| fs::rename(&tmp, path))
        .map_err(|e| rejected(format!("writing {}: {e}", path.display())))
}

fn load_params(path: &Path) -> Result<PublicParams, Failure> {
    require_file(path, "params")?;
    let bytes = fs::read(path).map_err(|e| rejected(format!("reading {}: {e}", path.display())))?;
    PublicParams::from_bytes(&bytes).map_err(|e| rejected(format!("params {}: {e}", path.display())))
}

fn load_chain(path: &Path, params: &PublicParams) -> Result<ChainStore, Failure> {
    require_file(path, "chain")?;
    ChainStore::load(path, params.clone()).map_err(|e| rejected(format!("chain {}: {e}", path.display())))
}

fn tree_config(branching: u32) -> Result<TreeConfig, Failure> {
    TreeConfig::new(branching, DEFAULT_HEIGHT).map_err(|e| usage(e.to_string()))
}

fn setup(out: &Path, bits: u64, seed: Option<u64>) -> CmdResult {
    require_parent(out)?;
    if bits < 16 || bits % 2 != 0 {
        return Err(usage("--bits must be even and at least 16"));
    }
    let (params, _trapdoor) = dev_setup(bits, &mut rng_for(seed)).map_err(|e| rejected(e.to_string()))?;
    write_file(out, &params.to_bytes())?;
    println!("wrote {}-bit parameters to {}", params.modulus_bits(), out.display());
    println!("fingerprint {}", hex::encode(params.fingerprint()));
    Ok(())
}

fn ceremony(out: &Path, parties: usize, bits: u64, transcript: Option<&Path>, seed: Option<u64>) -> CmdResult {
    require_parent(out)?;
    if let Some(t) = transcript {
        require_parent(t)?;
    }
    let config = CeremonyConfig::new(parties, bits);
    let (params, record) = run_ceremony(&config, &mut rng_for(seed)).map_err(|e| match e {
        epbc_core::Error::InvalidParams(msg) => usage(msg),
        other => rejected(other.to_string()),
    })?;
    write_file(out, &params.to_bytes())?;
    if let Some(t) = transcript {
        write_file(t, &record.to_bytes())?;
    }
    println!(
        "accepted {}-bit modulus after {} candidates, {} test rounds",
        params.modulus_bits(),
        record.attempts,
        record.round_count()
    );
    println!("fingerprint {}", hex::encode(params.fingerprint()));
    Ok(())
}

fn mine(params_path: &Path, chain_path: &Path, count: u64, difficulty: u8, seed: Option<u64>) -> CmdResult {
    let params = load_params(params_path)?;
    require_parent(chain_path)?;
    if difficulty > epbc_core::chain::MAX_DIFFICULTY {
        return Err(usage(format!("--difficulty above {}", epbc_core::chain::MAX_DIFFICULTY)));
    }
    let mut store = if chain_path.exists() {
        load_chain(chain_path, &params)?
    } else {
        ChainStore::new(params.clone())
    };
    let mut rng = rng_for(seed);
    let mut sender = [0u8; 32];
    rng.fill_bytes(&mut sender);
    for _ in 0..count {
        if store.is_empty() {
            let genesis = Block::genesis(&params, difficulty).map_err(|e| rejected(e.to_string()))?;
            store.append_with_summary(genesis).map_err(|e| rejected(e.to_string()))?;
            continue;
        }
        let mut payload = vec![0u8; 32];
        rng.fill_bytes(&mut payload);
        let tx = Transaction::new(payload, sender, store.height());
        let txid = tx.txid;
        store.mine_and_append(vec![tx], difficulty).map_err(|e| rejected(e.to_string()))?;
        println!("{} {}", store.height(), hex::encode(txid));
    }
    store.save(chain_path).map_err(|e| rejected(e.to_string()))?;
    let summary = store.summary();
    println!("height {}", summary.height());
    println!("summary {}", hex::encode(summary.value().to_bytes_be()));
    Ok(())
}

fn prove(params_path: &Path, chain_path: &Path, index: u64, out: &Path, branching: u32) -> CmdResult {
    let params = load_params(params_path)?;
    let config = tree_config(branching)?;
    require_parent(out)?;
    let store = load_chain(chain_path, &params)?;
    if index == 0 || index > store.height() {
        return Err(usage(format!("--index must be in 1..={}", store.height())));
    }
    let state = ProverState::from_chain(store, config).map_err(|e| rejected(e.to_string()))?;
    let proof = prove_fast(state.chain(), state.tree(), index).map_err(|e| rejected(e.to_string()))?;
    let bundle = ProofBundle {
        block: state.chain().encoding(index).expect("checked range").to_vec(),
        position: index,
        proof,
    };
    write_file(out, &bundle.to_bytes())?;
    println!("wrote proof for block {index} of {}", state.height());
    Ok(())
}

fn verify_cmd(params_path: &Path, proof_path: &Path, state: Option<&Path>, chain: Option<&Path>) -> CmdResult {
    let params = load_params(params_path)?;
    require_file(proof_path, "proof")?;
    let client = match (state, chain) {
        (Some(s), _) => {
            require_file(s, "state")?;
            ClientState::load(s, params.clone()).map_err(|e| rejected(e.to_string()))?
        }
        (None, Some(c)) => {
            let store = load_chain(c, &params)?;
            let mut client = ClientState::new(params.clone());
            client.set_summary(store.summary());
            client
        }
        (None, None) => return Err(usage("one of --state or --chain is required")),
    };
    let bytes = fs::read(proof_path).map_err(|e| rejected(e.to_string()))?;
    let bundle = ProofBundle::from_bytes(&bytes).map_err(|e| rejected(format!("malformed proof file: {e}")))?;
    match client.verify_block(&bundle.block, bundle.position, &bundle.proof) {
        Ok(Verdict::Accept) => {
            println!("accept: block {} under summary of height {}", bundle.position, client.height());
            Ok(())
        }
        Ok(Verdict::Reject) => Err(rejected(format!("proof for block {} does not verify", bundle.position))),
        Err(e) => Err(rejected(e.to_string())),
    }
}

fn serve(chain_path: &Path, params_path: &Path, listen: &str, branching: u32, strategy: StrategyArg, lag: u64) -> CmdResult {
    let params = load_params(params_path)?;
    let config = tree_config(branching)?;
    let store = load_chain(chain_path, &params)?;
    let state = ProverState::from_chain(store, config).map_err(|e| rejected(e.to_string()))?;
    let strategy = match strategy {
        StrategyArg::Honest => Strategy::Honest,
        StrategyArg::StaleSummary => Strategy::StaleSummary { lag },
        StrategyArg::ForgedBlock => Strategy::ForgedBlock,
        StrategyArg::RandomProof => Strategy::RandomProof { seed: 0 },
        StrategyArg::WrongPosition => Strategy::WrongPosition,
    };
    let listener = TcpListener::bind(listen).map_err(|e| usage(format!("cannot listen on {listen}: {e}")))?;
    let addr = listener.local_addr().map_err(|e| rejected(e.to_string()))?;
    println!("listening on {addr} height {}", state.height());
    let _ = io::stdout().flush();
    let node = ServingNode::new(std::sync::Arc::new(std::sync::RwLock::new(state)), strategy);
    serve_tcp(listener, node).map_err(|e| rejected(e.to_string()))
}

fn client(command: ClientCommand) -> CmdResult {
    match command {
        ClientCommand::Identify {
            common,
            peers,
            sample,
            spot_checks,
            seed,
        } => {
            let params = load_params(&common.params)?;
            require_parent(&common.state)?;
            let mut client = if common.state.exists() {
                ClientState::load(&common.state, params.clone()).map_err(|e| rejected(e.to_string()))?
            } else {
                ClientState::new(params)
            };
            let config = ClientConfig {
                sample,
                spot_checks,
                ..ClientConfig::default()
            };
            let peers: Vec<TcpPeer> = peers.into_iter().map(TcpPeer::new).collect();
            match client.identify(&peers, &config, &mut rng_for(seed)) {
                Ok(id) => {
                    for r in &id.reports {
                        println!("{}: {}", r.peer, r.outcome);
                    }
                    client.save(&common.state).map_err(|e| rejected(e.to_string()))?;
                    println!("adopted height {} with {} of {} votes", id.summary.height(), id.votes, sample);
                    println!("summary {}", hex::encode(id.summary.value().to_bytes_be()));
                    Ok(())
                }
                Err(ClientError::SampleTooLarge { sample, peers }) => {
                    Err(usage(format!("--sample {sample} exceeds the {peers} peers given")))
                }
                Err(ClientError::NoMajority { reports, .. }) => {
                    for r in &reports {
                        println!("{}: {}", r.peer, r.outcome);
                    }
                    Err(rejected("no summary held by a strict majority; state unchanged"))
                }
                Err(e) => Err(rejected(e.to_string())),
            }
        }
        ClientCommand::VerifyTx {
            common,
            peer,
            txid,
            depth,
        } => {
            let params = load_params(&common.params)?;
            require_file(&common.state, "state")?;
            let txid: [u8; 32] = hex::decode(&txid)
                .ok()
                .and_then(|v| v.try_into().ok())
                .ok_or_else(|| usage("--txid must be 64 hex characters"))?;
            let mut client = ClientState::load(&common.state, params).map_err(|e| rejected(e.to_string()))?;
            client.confirmation_depth = depth;
            match client.verify_transaction(&TcpPeer::new(peer), &txid) {
                Ok(TxStatus::Confirmed { position, depth }) => {
                    println!("confirmed in block {position} at depth {depth}");
                    Ok(())
                }
                Ok(TxStatus::Unconfirmed { position, depth }) => Err(rejected(format!(
                    "unconfirmed: block {position} has depth {depth}, need {}",
                    client.confirmation_depth
                ))),
                Ok(TxStatus::Invalid { reason }) => Err(rejected(format!("invalid: {reason:?}"))),
                Err(ClientError::Network(e)) => Err(rejected(format!("network error: {e}"))),
                Err(e) => Err(rejected(e.to_string())),
            }
        }
    }
}

fn bench(
    params_path: Option<&Path>,
    n_values: Vec<u64>,
    m_values: Vec<u32>,
    reps: u32,
    out: Option<&Path>,
    storage: Option<&Path>,
    seed: u64,
) -> CmdResult {
    if n_values.is_empty() || n_values.contains(&0) {
        return Err(usage("--n values must be positive"));
    }
    for &m in &m_values {
        tree_config(m)?;
    }
    if reps == 0 {
        return Err(usage("--reps must be positive"));
    }
    for p in [out, storage].into_iter().flatten() {
        require_parent(p)?;
    }
    let params = match params_path {
        Some(p) => load_params(p)?,
        None => {
            dev_setup(1024, &mut ChaCha20Rng::seed_from_u64(seed))
                .map_err(|e| rejected(e.to_string()))?
                .0
        }
    };
    let config = BenchConfig {
        n_values: n_values.clone(),
        m_values: m_values.clone(),
        reps,
        seed,
    };
    let report = bench_suite(&params, &config).map_err(|e| rejected(e.to_string()))?;
    let csv = report.to_csv();
    match out {
        Some(p) => write_file(p, csv.as_bytes())?,
        None => print!("{csv}"),
    }
    if let Some(p) = storage {
        let rows = storage_report(&params, &n_values, m_values[0], seed).map_err(|e| rejected(e.to_string()))?;
        write_file(p, storage_csv(&rows).as_bytes())?;
    }
    if !report.verify_single_modexp {
        return Err(rejected("verify used more than one modular exponentiation"));
    }
    Ok(())
}

fn simulate(path: &Path, seed: Option<u64>) -> CmdResult {
    require_file(path, "scenario")?;
    let text = fs::read_to_string(path).map_err(|e| rejected(e.to_string()))?;
    let mut scenario = Scenario::from_toml(&text).map_err(|e| usage(format!("scenario {}: {e}", path.display())))?;
    if let Some(s) = seed {
        scenario.seed = s;
    }
    let outcome = run_scenario(&scenario).map_err(|e| match e {
        epbc_core::harness::HarnessError::Client(ClientError::SampleTooLarge { .. }) => {
            usage("client sample exceeds the peer roster")
        }
        other => rejected(other.to_string()),
    })?;
    println!("{}", outcome.to_json());
    if outcome.false_confirmation || outcome.adopted == epbc_core::harness::Adoption::Forged {
        return Err(rejected("client accepted forged data"));
    }
    Ok(())
}
