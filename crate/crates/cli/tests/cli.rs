use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use tempfile::TempDir;

fn epbc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_epbc"))
        .args(args)
        .output()
        .expect("run epbc")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn setup(&self, bits: &str) -> PathBuf {
        let p = self.path("params.bin");
        let out = epbc(&["setup", "--out", s(&p), "--bits", bits, "--seed", "1"]);
        assert_eq!(code(&out), 0, "{out:?}");
        p
    }

    /// Mines `count` blocks and returns the chain path plus `(position, txid)` lines.
    fn mine(&self, params: &Path, count: &str) -> (PathBuf, Vec<(u64, String)>) {
        let c = self.path("chain.bin");
        let out = epbc(&[
            "mine", "--params", s(params), "--chain", s(&c), "--count", count, "--difficulty", "2", "--seed", "2",
        ]);
        assert_eq!(code(&out), 0, "{out:?}");
        let txs = stdout(&out)
            .lines()
            .filter_map(|l| {
                let (pos, txid) = l.split_once(' ')?;
                Some((pos.parse().ok()?, txid.to_string()))
            })
            .collect();
        (c, txs)
    }
}

#[test]
fn setup_prove_verify_pipeline() {
    let ws = Workspace::new();
    let params = ws.setup("1024");
    let (chain, txs) = ws.mine(&params, "64");
    assert_eq!(txs.len(), 63);
    let proof = ws.path("proof.bin");
    let out = epbc(&["prove", "--params", s(&params), "--chain", s(&chain), "--index", "10", "--out", s(&proof)]);
    assert_eq!(code(&out), 0, "{out:?}");
    let out = epbc(&["verify", "--params", s(&params), "--chain", s(&chain), "--proof", s(&proof)]);
    assert_eq!(code(&out), 0, "{out:?}");
    assert!(stdout(&out).starts_with("accept"));

    let mut bytes = fs::read(&proof).unwrap();
    let tampered = ws.path("tampered.bin");
    bytes[30] ^= 0x01;
    fs::write(&tampered, &bytes).unwrap();
    let out = epbc(&["verify", "--params", s(&params), "--chain", s(&chain), "--proof", s(&tampered)]);
    assert_eq!(code(&out), 1);

    let truncated = ws.path("truncated.bin");
    fs::write(&truncated, &bytes[..bytes.len() / 2]).unwrap();
    let out = epbc(&["verify", "--params", s(&params), "--chain", s(&chain), "--proof", s(&truncated)]);
    assert_eq!(code(&out), 1);
}

#[test]
fn prove_and_verify_usage_errors() {
    let ws = Workspace::new();
    let params = ws.setup("256");
    let (chain, _) = ws.mine(&params, "5");
    let proof = ws.path("p.bin");
    for index in ["0", "6"] {
        let out = epbc(&["prove", "--params", s(&params), "--chain", s(&chain), "--index", index, "--out", s(&proof)]);
        assert_eq!(code(&out), 2, "index {index}");
    }
    assert!(!proof.exists());
    let out = epbc(&["prove", "--params", s(&params), "--chain", s(&ws.path("missing")), "--index", "1", "--out", s(&proof)]);
    assert_eq!(code(&out), 2);
    let out = epbc(&["verify", "--params", s(&params), "--proof", s(&proof)]);
    assert_eq!(code(&out), 2);
    let out = epbc(&["prove", "--params", s(&params), "--chain", s(&chain), "--index", "3", "--out", s(&proof), "--branching", "1"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn mine_leaves_files_alone_on_failure() {
    let ws = Workspace::new();
    let params = ws.setup("256");
    let (chain, _) = ws.mine(&params, "3");
    let before = fs::read(&chain).unwrap();
    let out = epbc(&["mine", "--params", s(&params), "--chain", s(&chain), "--count", "2", "--difficulty", "30"]);
    assert_eq!(code(&out), 2);
    assert_eq!(fs::read(&chain).unwrap(), before);

    let mut corrupt = before.clone();
    let last = corrupt.len() - 1;
    corrupt[last] ^= 1;
    fs::write(&chain, &corrupt).unwrap();
    let out = epbc(&["mine", "--params", s(&params), "--chain", s(&chain), "--count", "1"]);
    assert_eq!(code(&out), 1);
    assert_eq!(fs::read(&chain).unwrap(), corrupt);

    fs::write(&chain, &before).unwrap();
    let out = epbc(&["mine", "--params", s(&params), "--chain", s(&chain), "--count", "2", "--difficulty", "2"]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("height 5"));
}

#[test]
fn setup_rejects_odd_bits() {
    let ws = Workspace::new();
    let p = ws.path("p.bin");
    assert_eq!(code(&epbc(&["setup", "--out", s(&p), "--bits", "63"])), 2);
    assert!(!p.exists());
    assert_eq!(code(&epbc(&["setup", "--out", s(&ws.path("no/such/dir/p.bin"))])), 2);
}

#[test]
fn ceremony_is_reproducible() {
    let ws = Workspace::new();
    let run = |tag: &str| {
        let p = ws.path(&format!("p{tag}.bin"));
        let t = ws.path(&format!("t{tag}.bin"));
        let out = epbc(&[
            "ceremony", "--out", s(&p), "--bits", "64", "--parties", "3", "--seed", "5", "--transcript", s(&t),
        ]);
        assert_eq!(code(&out), 0, "{out:?}");
        (fs::read(p).unwrap(), fs::read(t).unwrap())
    };
    let a = run("a");
    let b = run("b");
    assert_eq!(a, b);
    assert!(a.1.starts_with(b"EPBCCER"));
    let out = epbc(&["ceremony", "--out", s(&ws.path("x.bin")), "--bits", "64", "--parties", "1"]);
    assert_eq!(code(&out), 2);
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn spawn_server(params: &Path, chain: &Path, extra: &[&str]) -> (Server, String) {
    let mut child = Command::new(env!("CARGO_BIN_EXE_epbc"))
        .args(["serve", "--params", s(params), "--chain", s(chain), "--listen", "127.0.0.1:0"])
        .args(extra)
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line
        .strip_prefix("listening on ")
        .and_then(|rest| rest.split_whitespace().next())
        .unwrap_or_else(|| panic!("unexpected serve output {line:?}"))
        .to_string();
    (Server(child), addr)
}

#[test]
fn serve_identify_and_verify_tx_over_tcp() {
    let ws = Workspace::new();
    let params = ws.setup("512");
    let (chain, txs) = ws.mine(&params, "20");
    let (_honest, a) = spawn_server(&params, &chain, &[]);
    let (_forger, b) = spawn_server(&params, &chain, &["--strategy", "forged-block"]);
    let state = ws.path("client.bin");

    let out = epbc(&[
        "client", "identify", "--params", s(&params), "--state", s(&state), "--peers", &format!("{a},{a},{b}"),
        "--sample", "3", "--seed", "4",
    ]);
    assert_eq!(code(&out), 0, "{out:?}");
    assert!(stdout(&out).contains("adopted height 20 with 2 of 3 votes"));
    assert!(stdout(&out).contains("failed spot check"));

    let txid_at = |pos: u64| txs.iter().find(|(p, _)| *p == pos).unwrap().1.clone();
    let verify_tx = |txid: &str| {
        epbc(&[
            "client", "verify-tx", "--params", s(&params), "--state", s(&state), "--peer", &a, "--txid", txid,
        ])
    };
    let out = verify_tx(&txid_at(14));
    assert_eq!(code(&out), 0, "{out:?}");
    assert!(stdout(&out).contains("depth 6"));
    assert_eq!(code(&verify_tx(&txid_at(20))), 1);
    assert_eq!(code(&verify_tx(&"00".repeat(32))), 1);
    assert_eq!(code(&verify_tx("xyz")), 2);

    let saved = fs::read(&state).unwrap();
    let out = epbc(&[
        "client", "identify", "--params", s(&params), "--state", s(&state), "--peers", &format!("{b},{b},{a}"),
        "--sample", "3", "--seed", "4",
    ]);
    assert_eq!(code(&out), 1);
    assert_eq!(fs::read(&state).unwrap(), saved);
}

#[test]
fn verify_against_client_state() {
    let ws = Workspace::new();
    let params = ws.setup("256");
    let (chain, _) = ws.mine(&params, "8");
    let (_server, addr) = spawn_server(&params, &chain, &[]);
    let state = ws.path("client.bin");
    let out = epbc(&[
        "client", "identify", "--params", s(&params), "--state", s(&state), "--peers", &addr, "--sample", "1",
    ]);
    assert_eq!(code(&out), 0, "{out:?}");
    let proof = ws.path("p.bin");
    assert_eq!(
        code(&epbc(&["prove", "--params", s(&params), "--chain", s(&chain), "--index", "8", "--out", s(&proof)])),
        0
    );
    let out = epbc(&["verify", "--params", s(&params), "--state", s(&state), "--proof", s(&proof)]);
    assert_eq!(code(&out), 0, "{out:?}");
}

#[test]
fn client_needs_reachable_peers() {
    let ws = Workspace::new();
    let params = ws.setup("256");
    let state = ws.path("client.bin");
    let out = epbc(&[
        "client", "identify", "--params", s(&params), "--state", s(&state), "--peers", "127.0.0.1:1", "--sample", "1",
    ]);
    assert_eq!(code(&out), 1);
    assert!(!state.exists());
    let out = epbc(&[
        "client", "identify", "--params", s(&params), "--state", s(&state), "--peers", "127.0.0.1:1", "--sample", "2",
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn bench_writes_tables() {
    let ws = Workspace::new();
    let params = ws.setup("256");
    let csv = ws.path("bench.csv");
    let storage = ws.path("storage.csv");
    let out = epbc(&[
        "bench", "--params", s(&params), "--n", "4,16", "--m", "2", "--reps", "2", "--out", s(&csv), "--storage",
        s(&storage),
    ]);
    assert_eq!(code(&out), 0, "{out:?}");
    let table = fs::read_to_string(&csv).unwrap();
    assert!(table.starts_with("n,m,operation,position,reps,mean_ns,hashes,multiplications,modexps\n"));
    assert!(table.lines().any(|l| l.starts_with("16,0,verify,8,2,")));
    let storage = fs::read_to_string(&storage).unwrap();
    assert_eq!(storage.lines().count(), 3);
    assert_eq!(code(&epbc(&["bench", "--n", "0"])), 2);
}

#[test]
fn simulate_prints_outcome() {
    let ws = Workspace::new();
    let scenario = ws.path("s.toml");
    fs::write(
        &scenario,
        r#"
seed = 11
chain_length = 12
difficulty = 2

[[peers]]
strategy = "honest"

[[peers]]
strategy = "honest"

[[peers]]
strategy = "wrong-position"

[[peers]]
strategy = "honest"

[[peers]]
strategy = "random-proof"
seed = 3
"#,
    )
    .unwrap();
    let out = epbc(&["simulate", "--scenario", s(&scenario)]);
    assert_eq!(code(&out), 0, "{out:?}");
    let json = stdout(&out);
    assert!(json.contains(r#""adopted": "honest""#), "{json}");
    assert_eq!(stdout(&epbc(&["simulate", "--scenario", s(&scenario)])), json);

    fs::write(&scenario, "seed = \"x\"").unwrap();
    assert_eq!(code(&epbc(&["simulate", "--scenario", s(&scenario)])), 2);
    assert_eq!(code(&epbc(&["simulate", "--scenario", s(&ws.path("none.toml"))])), 2);
}

#[test]
fn usage_contract() {
    assert_eq!(code(&epbc(&[])), 2);
    assert_eq!(code(&epbc(&["frobnicate"])), 2);
    let help = epbc(&["--help"]);
    assert_eq!(code(&help), 0);
    for sub in ["setup", "ceremony", "mine", "prove", "verify", "serve", "client", "bench", "simulate"] {
        assert!(stdout(&help).contains(sub), "{sub} missing from help");
    }
}
