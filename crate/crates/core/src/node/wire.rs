//! Length-prefixed request/response framing.
//!
//! A frame is a 4-byte big-endian length covering the type byte and payload,
//! then the type byte, then the payload.

use num_bigint::BigUint;

use crate::accumulator::{BlockExponent, MembershipProof};
use crate::codec::{DecodeError, Reader, Writer};

pub const MAX_FRAME: usize = 16 * 1024 * 1024;

pub const GET_SUMMARY: u8 = 0x01;
pub const GET_PROOF: u8 = 0x02;
pub const GET_TX: u8 = 0x03;
pub const SUMMARY: u8 = 0x81;
pub const PROOF: u8 = 0x82;
pub const TX_PROOF: u8 = 0x83;
pub const ERROR: u8 = 0xFF;

pub const ERR_UNKNOWN_TYPE: u16 = 1;
pub const ERR_INDEX_OUT_OF_RANGE: u16 = 2;
pub const ERR_TX_NOT_FOUND: u16 = 3;
pub const ERR_INTERNAL: u16 = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProofPayload {
    pub block: Vec<u8>,
    pub index: u64,
    pub proof: MembershipProof,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WireMessage {
    GetSummary,
    GetProof { index: u64 },
    GetTx { txid: [u8; 32] },
    Summary { value: BigUint, height: u64 },
    Proof(ProofPayload),
    TxProof { proof: ProofPayload, tx_offset: u32 },
    Error { code: u16, message: String },
}

impl WireMessage {
    pub fn error(code: u16, message: impl Into<String>) -> Self {
        WireMessage::Error {
            code,
            message: message.into(),
        }
    }

    pub fn type_byte(&self) -> u8 {
        match self {
            WireMessage::GetSummary => GET_SUMMARY,
            WireMessage::GetProof { .. } => GET_PROOF,
            WireMessage::GetTx { .. } => GET_TX,
            WireMessage::Summary { .. } => SUMMARY,
            WireMessage::Proof(_) => PROOF,
            WireMessage::TxProof { .. } => TX_PROOF,
            WireMessage::Error { .. } => ERROR,
        }
    }

    pub fn is_request(&self) -> bool {
        self.type_byte() & 0x80 == 0
    }

    /// Response type paired with a request type.
    pub fn response_type(request_type: u8) -> Option<u8> {
        match request_type {
            GET_SUMMARY => Some(SUMMARY),
            GET_PROOF => Some(PROOF),
            GET_TX => Some(TX_PROOF),
            _ => None,
        }
    }

    pub fn encode_payload(&self) -> Vec<u8> {
        let mut w = Writer::new();
        match self {
            WireMessage::GetSummary => {}
            WireMessage::GetProof { index } => {
                w.u64(*index);
            }
            WireMessage::GetTx { txid } => {
                w.raw(txid);
            }
            WireMessage::Summary { value, height } => {
                w.biguint(value).u64(*height);
            }
            WireMessage::Proof(p) => encode_proof(&mut w, p),
            WireMessage::TxProof { proof, tx_offset } => {
                encode_proof(&mut w, proof);
                w.u32(*tx_offset);
            }
            WireMessage::Error { code, message } => {
                w.u16(*code).raw(message.as_bytes());
            }
        }
        w.finish()
    }

    pub fn to_frame(&self) -> Vec<u8> {
        let payload = self.encode_payload();
        let mut w = Writer::new();
        w.u32((payload.len() + 1) as u32).u8(self.type_byte()).raw(&payload);
        w.finish()
    }

    pub fn decode(type_byte: u8, payload: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(payload);
        let msg = match type_byte {
            GET_SUMMARY => WireMessage::GetSummary,
            GET_PROOF => WireMessage::GetProof { index: r.u64()? },
            GET_TX => WireMessage::GetTx { txid: r.array()? },
            SUMMARY => WireMessage::Summary {
                value: r.biguint()?,
                height: r.u64()?,
            },
            PROOF => WireMessage::Proof(decode_proof(&mut r)?),
            TX_PROOF => WireMessage::TxProof {
                proof: decode_proof(&mut r)?,
                tx_offset: r.u32()?,
            },
            ERROR => {
                let code = r.u16()?;
                let message = String::from_utf8_lossy(r.rest()).into_owned();
                WireMessage::Error { code, message }
            }
            _ => return Err(DecodeError::Invalid("unknown message type")),
        };
        r.finish()?;
        Ok(msg)
    }
}

fn encode_proof(w: &mut Writer, p: &ProofPayload) {
    w.bytes(&p.block)
        .u64(p.index)
        .biguint(p.proof.p1.value())
        .biguint(&p.proof.p2);
}

fn decode_proof(r: &mut Reader<'_>) -> Result<ProofPayload, DecodeError> {
    let block = r.bytes()?.to_vec();
    let index = r.u64()?;
    let p1 = BlockExponent::new(r.biguint()?).map_err(|_| DecodeError::Invalid("zero exponent"))?;
    let p2 = r.biguint()?;
    Ok(ProofPayload {
        block,
        index,
        proof: MembershipProof { p1, p2 },
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FrameError {
    /// Declared length is zero; the 4-byte prefix was consumed.
    Empty,
    /// Declared length exceeds [`MAX_FRAME`]; the stream cannot be resynchronized.
    Oversized(usize),
}

/// Incremental frame splitter over a byte stream.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    /// Next complete `(type, payload)` frame, if one is buffered.
    pub fn next_frame(&mut self) -> Option<Result<(u8, Vec<u8>), FrameError>> {
        if self.buf.len() < 4 {
            return None;
        }
        let len = u32::from_be_bytes(self.buf[..4].try_into().expect("4 bytes")) as usize;
        if len == 0 {
            self.buf.drain(..4);
            return Some(Err(FrameError::Empty));
        }
        if len > MAX_FRAME {
            self.buf.clear();
            return Some(Err(FrameError::Oversized(len)));
        }
        if self.buf.len() < 4 + len {
            return None;
        }
        let frame: Vec<u8> = self.buf.drain(..4 + len).collect();
        Some(Ok((frame[4], frame[5..].to_vec())))
    }
}
