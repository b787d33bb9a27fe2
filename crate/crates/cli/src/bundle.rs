//! Proof file written by `prove` and read by `verify`.

use epbc_core::codec::{DecodeError, Reader, Writer};
use epbc_core::{BlockExponent, MembershipProof};

pub const PROOF_MAGIC: &[u8; 7] = b"EPBCPRF";
pub const PROOF_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProofBundle {
    pub block: Vec<u8>,
    pub position: u64,
    pub proof: MembershipProof,
}

impl ProofBundle {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.raw(PROOF_MAGIC)
            .u8(PROOF_VERSION)
            .bytes(&self.block)
            .u64(self.position)
            .biguint(self.proof.p1.value())
            .biguint(&self.proof.p2);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        if r.take(PROOF_MAGIC.len())? != PROOF_MAGIC {
            return Err(DecodeError::BadMagic);
        }
        let version = r.u8()?;
        if version != PROOF_VERSION {
            return Err(DecodeError::UnsupportedVersion(version));
        }
        let block = r.bytes()?.to_vec();
        let position = r.u64()?;
        let p1 = BlockExponent::new(r.biguint()?).map_err(|_| DecodeError::Invalid("zero exponent"))?;
        let p2 = r.biguint()?;
        r.finish()?;
        Ok(Self {
            block,
            position,
            proof: MembershipProof { p1, p2 },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigUint;

    #[test]
    fn round_trip() {
        let b = ProofBundle {
            block: vec![1, 2, 3],
            position: 4,
            proof: MembershipProof {
                p1: BlockExponent::new(BigUint::from(5u8)).unwrap(),
                p2: BigUint::from(6u8),
            },
        };
        let bytes = b.to_bytes();
        assert_eq!(&bytes[..8], b"EPBCPRF\x01");
        assert_eq!(ProofBundle::from_bytes(&bytes).unwrap(), b);
        assert!(ProofBundle::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
