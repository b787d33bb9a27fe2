//! Summary recurrence, membership proofs and their verification.
//!
//! Block `i` (1-based) contributes the exponent `e_i = H(blk_i || i)` and the
//! summary after `n` blocks is `S_n = g^(e_1 * ... * e_n) mod N`. A proof for
//! block `i` is the pair `(e_i, g^(prod_{k != i} e_k) mod N)`, which a client
//! checks with one hash and one modular exponentiation.

use std::fmt;

use num_bigint::BigUint;
use num_traits::{One, Zero};
use sha2::{Digest, Sha256};

use crate::codec::{Reader, Writer};
use crate::metrics;
use crate::params::{HashId, PublicParams};
use crate::Error;

/// Positioned block hash, used as an accumulator exponent.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockExponent(BigUint);

impl BlockExponent {
    pub fn new(value: BigUint) -> Result<Self, Error> {
        if value.is_zero() {
            return Err(Error::ZeroExponent);
        }
        Ok(Self(value))
    }

    pub fn value(&self) -> &BigUint {
        &self.0
    }

    pub fn into_inner(self) -> BigUint {
        self.0
    }
}

impl fmt::Debug for BlockExponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BlockExponent({:x})", self.0)
    }
}

/// Accumulator state over the first `height` blocks.
///
/// The empty chain is represented by `height = 0` and `value = g`, so the
/// first append computes `g^e_1` through the ordinary recurrence.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Summary {
    value: BigUint,
    height: u64,
}

impl fmt::Debug for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Summary(height={}, value={:x})", self.height, self.value)
    }
}

impl Summary {
    pub fn empty(params: &PublicParams) -> Self {
        Self {
            value: params.generator().clone(),
            height: 0,
        }
    }

    pub fn new(value: BigUint, height: u64, params: &PublicParams) -> Result<Self, Error> {
        if value.is_zero() || &value >= params.modulus() {
            return Err(Error::InvalidSummary("value outside (0, N)"));
        }
        if height == 0 && &value != params.generator() {
            return Err(Error::InvalidSummary("empty summary must equal g"));
        }
        Ok(Self { value, height })
    }

    pub fn value(&self) -> &BigUint {
        &self.value
    }

    pub fn height(&self) -> u64 {
        self.height
    }

    /// Sidecar record: minimal value then height.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.biguint(&self.value).u64(self.height);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8], params: &PublicParams) -> Result<Self, Error> {
        let mut r = Reader::new(bytes);
        let value = r.biguint()?;
        let height = r.u64()?;
        r.finish()?;
        Self::new(value, height, params)
    }
}

/// `(p1, p2)`: the claimed block exponent and its cofactor witness.
#[derive(Clone, PartialEq, Eq)]
pub struct MembershipProof {
    pub p1: BlockExponent,
    pub p2: BigUint,
}

impl fmt::Debug for MembershipProof {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MembershipProof")
            .field("p1", &self.p1)
            .field("p2", &format_args!("{:x}", self.p2))
            .finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    Reject,
}

impl Verdict {
    pub fn is_accept(self) -> bool {
        self == Verdict::Accept
    }
}

pub(crate) fn modexp(base: &BigUint, exponent: &BigUint, modulus: &BigUint) -> BigUint {
    metrics::record_modexp();
    base.modpow(exponent, modulus)
}

pub(crate) fn mul_assign(acc: &mut BigUint, factor: &BigUint) {
    metrics::record_multiplication();
    *acc *= factor;
}

/// `H(block_bytes || position)` with the position as 8 big-endian bytes.
pub fn hash_to_exponent(block_bytes: &[u8], position: u64, hash_id: HashId) -> Result<BlockExponent, Error> {
    if position == 0 {
        return Err(Error::IndexOutOfRange { index: 0, len: 0 });
    }
    metrics::record_hash();
    let digest = match hash_id {
        HashId::Sha256 => {
            let mut h = Sha256::new();
            h.update(block_bytes);
            h.update(position.to_be_bytes());
            h.finalize()
        }
    };
    BlockExponent::new(BigUint::from_bytes_be(&digest))
}

pub fn summary_append(prev: &Summary, exponent: &BlockExponent, params: &PublicParams) -> Summary {
    Summary {
        value: modexp(&prev.value, exponent.value(), params.modulus()),
        height: prev.height + 1,
    }
}

/// Folds a sequence of exponents into a summary, starting from the empty chain.
pub fn summarize<'a>(exponents: impl IntoIterator<Item = &'a BlockExponent>, params: &PublicParams) -> Summary {
    exponents
        .into_iter()
        .fold(Summary::empty(params), |s, e| summary_append(&s, e, params))
}

/// Proof for block `index` by direct product of every other exponent.
///
/// `committed` holds the exponents already folded into the summary for the
/// blocks before `index`; at least `index - 1` entries are required and only
/// those are read. The target block and every later block are re-hashed from
/// `blocks`, so the work is `n + 1 - index` hashes, `n - 1` multiplications and
/// one modular exponentiation.
pub fn prove_naive<B: AsRef<[u8]>>(
    blocks: &[B],
    committed: &[BlockExponent],
    index: u64,
    params: &PublicParams,
) -> Result<MembershipProof, Error> {
    let n = blocks.len() as u64;
    if index == 0 || index > n {
        return Err(Error::IndexOutOfRange { index, len: n });
    }
    let before = (index - 1) as usize;
    if committed.len() < before {
        return Err(Error::IndexOutOfRange {
            index,
            len: committed.len() as u64,
        });
    }
    let target = hash_to_exponent(blocks[before].as_ref(), index, params.hash_id())?;
    let mut product = BigUint::one();
    for e in &committed[..before] {
        mul_assign(&mut product, e.value());
    }
    for (offset, block) in blocks[before + 1..].iter().enumerate() {
        let position = index + 1 + offset as u64;
        let e = hash_to_exponent(block.as_ref(), position, params.hash_id())?;
        mul_assign(&mut product, e.value());
    }
    let p2 = modexp(params.generator(), &product, params.modulus());
    Ok(MembershipProof { p1: target, p2 })
}

/// Witness `g^(prod_{k != index} e_k) mod N` from known exponents.
pub fn witness_from_exponents(
    exponents: &[BlockExponent],
    index: u64,
    params: &PublicParams,
) -> Result<BigUint, Error> {
    let n = exponents.len() as u64;
    if index == 0 || index > n {
        return Err(Error::IndexOutOfRange { index, len: n });
    }
    let mut product = BigUint::one();
    for (k, e) in (1u64..).zip(exponents) {
        if k != index {
            mul_assign(&mut product, e.value());
        }
    }
    Ok(modexp(params.generator(), &product, params.modulus()))
}

/// [`prove_naive`] with no cached exponents: every block is hashed.
pub fn prove_naive_from_blocks<B: AsRef<[u8]>>(
    blocks: &[B],
    index: u64,
    params: &PublicParams,
) -> Result<MembershipProof, Error> {
    let n = blocks.len() as u64;
    if index == 0 || index > n {
        return Err(Error::IndexOutOfRange { index, len: n });
    }
    let committed = blocks[..(index - 1) as usize]
        .iter()
        .zip(1u64..)
        .map(|(b, k)| hash_to_exponent(b.as_ref(), k, params.hash_id()))
        .collect::<Result<Vec<_>, _>>()?;
    prove_naive(blocks, &committed, index, params)
}

/// One hash and one modular exponentiation, independent of the summary height.
pub fn verify(
    block_bytes: &[u8],
    position: u64,
    proof: &MembershipProof,
    summary: &Summary,
    params: &PublicParams,
) -> Verdict {
    if position == 0 || position > summary.height {
        return Verdict::Reject;
    }
    if proof.p2.is_zero() || &proof.p2 >= params.modulus() {
        return Verdict::Reject;
    }
    let expected = match hash_to_exponent(block_bytes, position, params.hash_id()) {
        Ok(e) => e,
        Err(_) => return Verdict::Reject,
    };
    if expected != proof.p1 {
        return Verdict::Reject;
    }
    if &modexp(&proof.p2, proof.p1.value(), params.modulus()) == summary.value() {
        Verdict::Accept
    } else {
        Verdict::Reject
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::dev_setup;
    use rand::{Rng, RngCore, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn toy() -> PublicParams {
        PublicParams::new(BigUint::from(253u32), BigUint::from(4u8), HashId::Sha256).unwrap()
    }

    fn exp(v: u32) -> BlockExponent {
        BlockExponent::new(BigUint::from(v)).unwrap()
    }

    // Square-and-multiply over u64, independent of BigUint::modpow.
    fn pow_mod_u64(mut base: u64, mut e: u64, m: u64) -> u64 {
        let mut acc = 1u64;
        base %= m;
        while e > 0 {
            if e & 1 == 1 {
                acc = acc * base % m;
            }
            base = base * base % m;
            e >>= 1;
        }
        acc
    }

    #[test]
    fn exponent_definition() {
        let block = b"genesis block bytes";
        let e = hash_to_exponent(block, 1, HashId::Sha256).unwrap();
        let mut pre = block.to_vec();
        pre.extend_from_slice(&[0, 0, 0, 0, 0, 0, 0, 1]);
        let digest = Sha256::digest(&pre);
        assert_eq!(e.value(), &BigUint::from_bytes_be(&digest));
        assert!(e.value().bits() <= 256);
    }

    #[test]
    fn position_changes_exponent() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for _ in 0..100 {
            let mut block = vec![0u8; rng.gen_range(1..200)];
            rng.fill_bytes(&mut block);
            let a = hash_to_exponent(&block, 1, HashId::Sha256).unwrap();
            let b = hash_to_exponent(&block, 2, HashId::Sha256).unwrap();
            assert_ne!(a, b);
        }
    }

    #[test]
    fn position_zero_rejected() {
        assert!(hash_to_exponent(b"x", 0, HashId::Sha256).is_err());
    }

    #[test]
    fn zero_exponent_rejected() {
        assert!(matches!(BlockExponent::new(BigUint::zero()), Err(Error::ZeroExponent)));
    }

    #[test]
    fn toy_recurrence() {
        let params = toy();
        let s1 = summary_append(&Summary::empty(&params), &exp(7), &params);
        assert_eq!(s1.value(), &BigUint::from(pow_mod_u64(4, 7, 253)));
        assert_eq!(s1.height(), 1);
        let s2 = summary_append(&s1, &exp(13), &params);
        assert_eq!(s2.value(), &BigUint::from(pow_mod_u64(pow_mod_u64(4, 7, 253), 13, 253)));
        assert_eq!(s2.value(), &BigUint::from(pow_mod_u64(4, 91, 253)));
        assert_eq!(s2.height(), 2);
    }

    #[test]
    fn identity_exponent() {
        let params = toy();
        let s1 = summary_append(&Summary::empty(&params), &exp(7), &params);
        let s2 = summary_append(&s1, &exp(1), &params);
        assert_eq!(s2.value(), s1.value());
        assert_eq!(s2.height(), 2);
    }

    #[test]
    fn naive_proof_on_toy_exponents() {
        let params = toy();
        let committed = [exp(7), exp(13)];
        // Single block: empty product.
        let blocks = [b"only".to_vec()];
        let proof = prove_naive(&blocks, &[], 1, &params).unwrap();
        assert_eq!(&proof.p2, params.generator());

        assert_eq!(
            witness_from_exponents(&committed, 1, &params).unwrap(),
            BigUint::from(pow_mod_u64(4, 13, 253))
        );
        assert_eq!(
            witness_from_exponents(&committed, 2, &params).unwrap(),
            BigUint::from(pow_mod_u64(4, 7, 253))
        );

        // Block 2 is the head, so its proof folds only the cached e_1 = 7.
        let blocks = [b"a".to_vec(), b"b".to_vec()];
        let proof = prove_naive(&blocks, &committed, 2, &params).unwrap();
        assert_eq!(proof.p2, BigUint::from(pow_mod_u64(4, 7, 253)));
    }

    #[test]
    fn naive_proof_skips_target_exponent() {
        // Oracle: g^(prod of others) with all exponents computed up front.
        let (params, _) = dev_setup(128, &mut ChaCha20Rng::seed_from_u64(5)).unwrap();
        let blocks: Vec<Vec<u8>> = (0..6u8).map(|i| vec![i; 10]).collect();
        let all: Vec<BlockExponent> = blocks
            .iter()
            .zip(1u64..)
            .map(|(b, k)| hash_to_exponent(b, k, HashId::Sha256).unwrap())
            .collect();
        for index in 1..=6u64 {
            let proof = prove_naive_from_blocks(&blocks, index, &params).unwrap();
            let mut product = BigUint::one();
            for (k, e) in all.iter().enumerate() {
                if k as u64 + 1 != index {
                    product *= e.value();
                }
            }
            assert_eq!(proof.p2, params.generator().modpow(&product, params.modulus()));
            assert_eq!(proof.p1, all[index as usize - 1]);
        }
    }

    #[test]
    fn naive_out_of_range() {
        let params = toy();
        let blocks = [b"a".to_vec()];
        assert!(matches!(
            prove_naive_from_blocks(&blocks, 0, &params),
            Err(Error::IndexOutOfRange { .. })
        ));
        assert!(matches!(
            prove_naive_from_blocks(&blocks, 2, &params),
            Err(Error::IndexOutOfRange { .. })
        ));
        let blocks = [b"a".to_vec(), b"b".to_vec()];
        assert!(prove_naive(&blocks, &[], 2, &params).is_err());
    }

    #[test]
    fn verify_rejects_out_of_range_witness() {
        let params = toy();
        let block = b"blk";
        let e = hash_to_exponent(block, 1, HashId::Sha256).unwrap();
        let summary = summary_append(&Summary::empty(&params), &e, &params);
        let good = MembershipProof {
            p1: e.clone(),
            p2: params.generator().clone(),
        };
        assert_eq!(verify(block, 1, &good, &summary, &params), Verdict::Accept);
        let zero = MembershipProof {
            p1: e.clone(),
            p2: BigUint::zero(),
        };
        assert_eq!(verify(block, 1, &zero, &summary, &params), Verdict::Reject);
        // p2 + N is congruent but not reduced.
        let wide = MembershipProof {
            p1: e,
            p2: params.generator() + params.modulus(),
        };
        assert_eq!(verify(block, 1, &wide, &summary, &params), Verdict::Reject);
        assert_eq!(verify(block, 2, &good, &summary, &params), Verdict::Reject);
        assert_eq!(verify(block, 0, &good, &summary, &params), Verdict::Reject);
    }

    #[test]
    fn sidecar_round_trip() {
        let params = toy();
        let s = summary_append(&Summary::empty(&params), &exp(7), &params);
        assert_eq!(Summary::from_bytes(&s.to_bytes(), &params).unwrap(), s);
        assert!(Summary::new(BigUint::from(300u32), 1, &params).is_err());
        assert!(Summary::new(BigUint::from(5u32), 0, &params).is_err());
    }
}
