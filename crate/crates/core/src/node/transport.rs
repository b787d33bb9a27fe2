//! Byte-stream transports for the wire protocol: in-process and TCP.

use std::io::{self, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::{Arc, RwLock};
use std::thread;
use std::time::Duration;

use thiserror::Error;

use super::wire::{FrameDecoder, FrameError, WireMessage, ERR_UNKNOWN_TYPE};
use super::{ProverState, Strategy};
use crate::codec::DecodeError;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("peer unreachable: {0}")]
    Unreachable(String),
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("connection closed mid-response")]
    Closed,
    #[error("bad frame: {0:?}")]
    Frame(FrameError),
    #[error("malformed response: {0}")]
    Malformed(#[from] DecodeError),
}

/// Something a client can send requests to.
pub trait Peer {
    fn request(&self, msg: &WireMessage) -> Result<WireMessage, TransportError>;

    fn label(&self) -> String;
}

impl<P: Peer + ?Sized> Peer for Box<P> {
    fn request(&self, msg: &WireMessage) -> Result<WireMessage, TransportError> {
        (**self).request(msg)
    }

    fn label(&self) -> String {
        (**self).label()
    }
}

impl<P: Peer + ?Sized> Peer for Arc<P> {
    fn request(&self, msg: &WireMessage) -> Result<WireMessage, TransportError> {
        (**self).request(msg)
    }

    fn label(&self) -> String {
        (**self).label()
    }
}

/// Shared prover state plus the strategy used to answer requests.
///
/// Handlers take the read lock; [`ServingNode::ingest`] takes the write lock,
/// so no handler sees a half-appended block.
#[derive(Debug, Clone)]
pub struct ServingNode {
    state: Arc<RwLock<ProverState>>,
    strategy: Strategy,
}

impl ServingNode {
    pub fn new(state: Arc<RwLock<ProverState>>, strategy: Strategy) -> Self {
        Self { state, strategy }
    }

    pub fn honest(state: ProverState) -> Self {
        Self::new(Arc::new(RwLock::new(state)), Strategy::Honest)
    }

    pub fn strategy(&self) -> &Strategy {
        &self.strategy
    }

    pub fn state(&self) -> &Arc<RwLock<ProverState>> {
        &self.state
    }

    pub fn ingest(&self, block: crate::chain::Block) -> Result<(), crate::Error> {
        self.state.write().expect("state lock poisoned").ingest_block(block)
    }

    /// Decodes one frame body and answers it.
    pub fn handle_frame(&self, type_byte: u8, payload: &[u8]) -> WireMessage {
        match WireMessage::decode(type_byte, payload) {
            Ok(msg) if msg.is_request() => self.handle(&msg),
            Ok(_) => WireMessage::error(ERR_UNKNOWN_TYPE, "not a request"),
            Err(e) => WireMessage::error(ERR_UNKNOWN_TYPE, format!("malformed request: {e}")),
        }
    }

    pub fn handle(&self, msg: &WireMessage) -> WireMessage {
        let state = self.state.read().expect("state lock poisoned");
        state.serve_with(&self.strategy, msg)
    }

    /// Feeds raw bytes through a decoder and returns the response frames.
    /// The second value is false once the stream must be closed.
    pub fn handle_bytes(&self, decoder: &mut FrameDecoder, bytes: &[u8]) -> (Vec<u8>, bool) {
        decoder.push(bytes);
        let mut out = Vec::new();
        while let Some(frame) = decoder.next_frame() {
            match frame {
                Ok((t, payload)) => out.extend(self.handle_frame(t, &payload).to_frame()),
                Err(FrameError::Empty) => {
                    out.extend(WireMessage::error(ERR_UNKNOWN_TYPE, "empty frame").to_frame());
                }
                Err(FrameError::Oversized(len)) => {
                    out.extend(WireMessage::error(ERR_UNKNOWN_TYPE, format!("frame of {len} bytes too large")).to_frame());
                    return (out, false);
                }
            }
        }
        (out, true)
    }
}

/// In-process peer. Requests and responses still go through the frame codec.
#[derive(Debug, Clone)]
pub struct LocalPeer {
    node: ServingNode,
    name: String,
    latency: Option<Duration>,
}

impl LocalPeer {
    pub fn new(node: ServingNode, name: impl Into<String>) -> Self {
        Self {
            node,
            name: name.into(),
            latency: None,
        }
    }

    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = Some(latency);
        self
    }

    pub fn node(&self) -> &ServingNode {
        &self.node
    }
}

impl Peer for LocalPeer {
    fn request(&self, msg: &WireMessage) -> Result<WireMessage, TransportError> {
        if let Some(d) = self.latency {
            thread::sleep(d);
        }
        let mut server_side = FrameDecoder::new();
        let (response, _) = self.node.handle_bytes(&mut server_side, &msg.to_frame());
        read_one(&response)
    }

    fn label(&self) -> String {
        self.name.clone()
    }
}

fn read_one(bytes: &[u8]) -> Result<WireMessage, TransportError> {
    let mut dec = FrameDecoder::new();
    dec.push(bytes);
    match dec.next_frame() {
        Some(Ok((t, payload))) => Ok(WireMessage::decode(t, &payload)?),
        Some(Err(e)) => Err(TransportError::Frame(e)),
        None => Err(TransportError::Closed),
    }
}

/// TCP peer; opens one connection per request.
#[derive(Debug, Clone)]
pub struct TcpPeer {
    addr: String,
    timeout: Duration,
}

impl TcpPeer {
    pub fn new(addr: impl Into<String>) -> Self {
        Self {
            addr: addr.into(),
            timeout: Duration::from_secs(10),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    fn connect(&self) -> Result<TcpStream, TransportError> {
        let addrs = self
            .addr
            .to_socket_addrs()
            .map_err(|e| TransportError::Unreachable(format!("{}: {e}", self.addr)))?;
        let mut last = None;
        for a in addrs {
            match TcpStream::connect_timeout(&a, self.timeout) {
                Ok(s) => return Ok(s),
                Err(e) => last = Some(e),
            }
        }
        Err(TransportError::Unreachable(match last {
            Some(e) => format!("{}: {e}", self.addr),
            None => format!("{}: no addresses", self.addr),
        }))
    }
}

impl Peer for TcpPeer {
    fn request(&self, msg: &WireMessage) -> Result<WireMessage, TransportError> {
        let mut stream = self.connect()?;
        stream.set_read_timeout(Some(self.timeout))?;
        stream.set_write_timeout(Some(self.timeout))?;
        stream.write_all(&msg.to_frame())?;
        let mut dec = FrameDecoder::new();
        let mut buf = [0u8; 8192];
        loop {
            if let Some(frame) = dec.next_frame() {
                let (t, payload) = frame.map_err(TransportError::Frame)?;
                return Ok(WireMessage::decode(t, &payload)?);
            }
            let read = stream.read(&mut buf)?;
            if read == 0 {
                return Err(TransportError::Closed);
            }
            dec.push(&buf[..read]);
        }
    }

    fn label(&self) -> String {
        self.addr.clone()
    }
}

fn handle_connection(node: &ServingNode, mut stream: TcpStream) -> io::Result<()> {
    let mut dec = FrameDecoder::new();
    let mut buf = [0u8; 8192];
    loop {
        let read = stream.read(&mut buf)?;
        if read == 0 {
            return Ok(());
        }
        let (out, keep_open) = node.handle_bytes(&mut dec, &buf[..read]);
        stream.write_all(&out)?;
        if !keep_open {
            return Ok(());
        }
    }
}

/// Accepts connections forever, one thread per connection.
pub fn serve_tcp(listener: TcpListener, node: ServingNode) -> io::Result<()> {
    for stream in listener.incoming() {
        let stream = match stream {
            Ok(s) => s,
            Err(_) => continue,
        };
        let node = node.clone();
        thread::spawn(move || {
            let _ = handle_connection(&node, stream);
        });
    }
    Ok(())
}
