//! Minimal proof-of-work chain that the accumulator summarizes.
//!
//! Blocks carry the summary `S_i` as a sidecar next to the block body. The
//! sidecar never enters the canonical encoding: it depends on the block's own
//! exponent, so hashing it would be circular.

use std::collections::HashMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::accumulator::{self, hash_to_exponent, summary_append, BlockExponent, MembershipProof, Summary};
use crate::codec::{DecodeError, Reader, Writer};
use crate::params::PublicParams;
use crate::Error;

pub type Hash32 = [u8; 32];

pub const CHAIN_MAGIC: &[u8; 7] = b"EPBCCHN";
pub const CHAIN_VERSION: u8 = 1;
pub const BLOCK_VERSION: u32 = 1;
pub const DEFAULT_DIFFICULTY: u8 = 8;
pub const MAX_DIFFICULTY: u8 = 24;
pub const HEADER_LEN: usize = 4 + 32 + 32 + 8 + 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub payload: Vec<u8>,
    pub sender_id: Hash32,
    pub freshness_counter: u64,
    pub txid: Hash32,
}

impl Transaction {
    pub fn new(payload: Vec<u8>, sender_id: Hash32, freshness_counter: u64) -> Self {
        let txid = Self::compute_txid(&payload, &sender_id, freshness_counter);
        Self {
            payload,
            sender_id,
            freshness_counter,
            txid,
        }
    }

    pub fn compute_txid(payload: &[u8], sender_id: &Hash32, freshness_counter: u64) -> Hash32 {
        let mut w = Writer::new();
        w.bytes(payload).raw(sender_id).u64(freshness_counter);
        Sha256::digest(w.finish()).into()
    }

    pub fn txid_is_consistent(&self) -> bool {
        self.txid == Self::compute_txid(&self.payload, &self.sender_id, self.freshness_counter)
    }

    fn encode_into(&self, w: &mut Writer) {
        w.bytes(&self.payload)
            .raw(&self.sender_id)
            .u64(self.freshness_counter)
            .raw(&self.txid);
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let payload = r.bytes()?.to_vec();
        let sender_id = r.array()?;
        let freshness_counter = r.u64()?;
        let txid = r.array()?;
        let tx = Self {
            payload,
            sender_id,
            freshness_counter,
            txid,
        };
        if !tx.txid_is_consistent() {
            return Err(DecodeError::Invalid("txid does not match transaction fields"));
        }
        Ok(tx)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockHeader {
    pub version: u32,
    pub prev_hash: Hash32,
    pub tx_root: Hash32,
    pub nonce: u64,
    pub difficulty_bits: u8,
}

impl BlockHeader {
    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[..4].copy_from_slice(&self.version.to_be_bytes());
        out[4..36].copy_from_slice(&self.prev_hash);
        out[36..68].copy_from_slice(&self.tx_root);
        out[68..76].copy_from_slice(&self.nonce.to_be_bytes());
        out[76] = self.difficulty_bits;
        out
    }

    pub fn hash(&self) -> Hash32 {
        Sha256::digest(self.to_bytes()).into()
    }

    pub fn meets_difficulty(&self) -> bool {
        leading_zero_bits(&self.hash()) >= u32::from(self.difficulty_bits)
    }
}

pub fn leading_zero_bits(hash: &[u8]) -> u32 {
    let mut bits = 0;
    for byte in hash {
        if *byte == 0 {
            bits += 8;
        } else {
            return bits + byte.leading_zeros();
        }
    }
    bits
}

/// Flat hash over the concatenated canonical transactions.
pub fn tx_root(transactions: &[Transaction]) -> Hash32 {
    let mut w = Writer::new();
    for tx in transactions {
        tx.encode_into(&mut w);
    }
    Sha256::digest(w.finish()).into()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub header: BlockHeader,
    pub transactions: Vec<Transaction>,
    /// Summary after this block; stored alongside, never hashed.
    pub summary_sidecar: Option<Summary>,
}

impl Block {
    pub fn hash(&self) -> Hash32 {
        self.header.hash()
    }

    /// Header, then a 4-byte transaction count and the transactions.
    pub fn canonical_encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.raw(&self.header.to_bytes());
        w.u32(u32::try_from(self.transactions.len()).expect("too many transactions"));
        for tx in &self.transactions {
            tx.encode_into(&mut w);
        }
        w.finish()
    }

    pub fn canonical_decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let header = BlockHeader {
            version: r.u32()?,
            prev_hash: r.array()?,
            tx_root: r.array()?,
            nonce: r.u64()?,
            difficulty_bits: r.u8()?,
        };
        let count = r.u32()? as usize;
        // Each transaction takes at least 76 bytes; bound the allocation.
        let mut transactions = Vec::with_capacity(count.min(r.remaining() / 76));
        for _ in 0..count {
            transactions.push(Transaction::decode_from(&mut r)?);
        }
        r.finish()?;
        Ok(Self {
            header,
            transactions,
            summary_sidecar: None,
        })
    }

    pub fn find_tx(&self, txid: &Hash32) -> Option<usize> {
        self.transactions.iter().position(|tx| &tx.txid == txid)
    }

    /// Genesis block carrying the serialized parameters as its only payload.
    pub fn genesis(params: &PublicParams, difficulty_bits: u8) -> Result<Self, Error> {
        let tx = Transaction::new(params.to_bytes(), [0u8; 32], 0);
        mine_block(None, vec![tx], difficulty_bits)
    }
}

/// Searches nonces from zero until the header meets `difficulty_bits`.
pub fn mine_block(parent: Option<&Block>, transactions: Vec<Transaction>, difficulty_bits: u8) -> Result<Block, Error> {
    if difficulty_bits > MAX_DIFFICULTY {
        return Err(Error::DifficultyTooHigh(difficulty_bits));
    }
    let mut header = BlockHeader {
        version: BLOCK_VERSION,
        prev_hash: parent.map(Block::hash).unwrap_or([0u8; 32]),
        tx_root: tx_root(&transactions),
        nonce: 0,
        difficulty_bits,
    };
    while !header.meets_difficulty() {
        header.nonce += 1;
    }
    Ok(Block {
        header,
        transactions,
        summary_sidecar: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TxLocation {
    pub position: u64,
    pub offset: u32,
}

/// Append-only chain with cached encodings, exponents and sidecars.
///
/// Positions are 1-based; the genesis block is position 1.
#[derive(Debug, Clone)]
pub struct ChainStore {
    params: PublicParams,
    blocks: Vec<Block>,
    encodings: Vec<Vec<u8>>,
    exponents: Vec<BlockExponent>,
    tx_index: HashMap<Hash32, TxLocation>,
}

impl ChainStore {
    pub fn new(params: PublicParams) -> Self {
        Self {
            params,
            blocks: Vec::new(),
            encodings: Vec::new(),
            exponents: Vec::new(),
            tx_index: HashMap::new(),
        }
    }

    pub fn params(&self) -> &PublicParams {
        &self.params
    }

    pub fn height(&self) -> u64 {
        self.blocks.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn head(&self) -> Option<&Block> {
        self.blocks.last()
    }

    pub fn head_hash(&self) -> Option<Hash32> {
        self.head().map(Block::hash)
    }

    pub fn block(&self, position: u64) -> Option<&Block> {
        self.blocks.get(position.checked_sub(1)? as usize)
    }

    pub fn encoding(&self, position: u64) -> Option<&[u8]> {
        self.encodings.get(position.checked_sub(1)? as usize).map(Vec::as_slice)
    }

    pub fn encodings(&self) -> &[Vec<u8>] {
        &self.encodings
    }

    pub fn exponent(&self, position: u64) -> Option<&BlockExponent> {
        self.exponents.get(position.checked_sub(1)? as usize)
    }

    pub fn exponents(&self) -> &[BlockExponent] {
        &self.exponents
    }

    /// `S_position`; position 0 is the empty-chain sentinel.
    pub fn summary_at(&self, position: u64) -> Option<Summary> {
        if position == 0 {
            return Some(Summary::empty(&self.params));
        }
        self.block(position)?.summary_sidecar.clone()
    }

    pub fn summary(&self) -> Summary {
        self.summary_at(self.height()).expect("head has a sidecar")
    }

    fn check_extends_head(&self, block: &Block) -> Result<(), Error> {
        let expected_prev = self.head_hash().unwrap_or([0u8; 32]);
        if block.header.prev_hash != expected_prev {
            return Err(Error::InvalidLink);
        }
        if block.header.difficulty_bits > MAX_DIFFICULTY || !block.header.meets_difficulty() {
            return Err(Error::InvalidPoW);
        }
        if block.header.tx_root != tx_root(&block.transactions) {
            return Err(Error::InvalidTxRoot);
        }
        Ok(())
    }

    /// Exponent and sidecar the block would receive as the next position,
    /// without mutating the store.
    pub fn prepare_append(&self, block: &Block) -> Result<(Vec<u8>, BlockExponent, Summary), Error> {
        self.check_extends_head(block)?;
        let encoding = block.canonical_encode();
        let position = self.height() + 1;
        let exponent = hash_to_exponent(&encoding, position, self.params.hash_id())?;
        let sidecar = summary_append(&self.summary_at(self.height()).expect("prefix"), &exponent, &self.params);
        Ok((encoding, exponent, sidecar))
    }

    pub(crate) fn commit_append(&mut self, mut block: Block, encoding: Vec<u8>, exponent: BlockExponent, sidecar: Summary) {
        let position = self.height() + 1;
        for (offset, tx) in block.transactions.iter().enumerate() {
            self.tx_index.entry(tx.txid).or_insert(TxLocation {
                position,
                offset: offset as u32,
            });
        }
        block.summary_sidecar = Some(sidecar);
        self.blocks.push(block);
        self.encodings.push(encoding);
        self.exponents.push(exponent);
    }

    /// Validates the block against the head and stores it with its sidecar.
    pub fn append_with_summary(&mut self, block: Block) -> Result<&Block, Error> {
        let (encoding, exponent, sidecar) = self.prepare_append(&block)?;
        self.commit_append(block, encoding, exponent, sidecar);
        Ok(self.head().expect("just appended"))
    }

    /// Mines a block on top of the head and appends it.
    pub fn mine_and_append(&mut self, transactions: Vec<Transaction>, difficulty_bits: u8) -> Result<&Block, Error> {
        let block = mine_block(self.head(), transactions, difficulty_bits)?;
        self.append_with_summary(block)
    }

    pub fn find_tx(&self, txid: &Hash32) -> Result<(&Block, TxLocation), Error> {
        let loc = self.tx_index.get(txid).ok_or(Error::NotFound)?;
        Ok((self.block(loc.position).expect("indexed"), *loc))
    }

    pub fn prove_naive(&self, index: u64) -> Result<MembershipProof, Error> {
        accumulator::prove_naive(&self.encodings, &self.exponents, index, &self.params)
    }

    /// Full pass over links, PoW, transaction roots and sidecars.
    pub fn validate(&self) -> Result<(), Error> {
        let mut replay = ChainStore::new(self.params.clone());
        for (block, position) in self.blocks.iter().zip(1u64..) {
            let mut bare = block.clone();
            let stored = bare.summary_sidecar.take();
            replay.append_with_summary(bare)?;
            if stored != replay.head().and_then(|b| b.summary_sidecar.clone()) {
                return Err(Error::InvalidSidecar(position));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.raw(CHAIN_MAGIC).u8(CHAIN_VERSION);
        for (block, encoding) in self.blocks.iter().zip(&self.encodings) {
            let sidecar = block.summary_sidecar.as_ref().expect("stored blocks carry sidecars");
            w.bytes(encoding).bytes(&sidecar.to_bytes());
        }
        w.finish()
    }

    /// Parses a chain file, re-validating every block and sidecar.
    pub fn from_bytes(bytes: &[u8], params: PublicParams) -> Result<Self, Error> {
        let mut r = Reader::new(bytes);
        if r.take(CHAIN_MAGIC.len())? != CHAIN_MAGIC {
            return Err(DecodeError::BadMagic.into());
        }
        let version = r.u8()?;
        if version != CHAIN_VERSION {
            return Err(DecodeError::UnsupportedVersion(version).into());
        }
        let mut store = ChainStore::new(params);
        while r.remaining() > 0 {
            let block = Block::canonical_decode(r.bytes()?)?;
            let sidecar = Summary::from_bytes(r.bytes()?, &store.params)?;
            let position = store.height() + 1;
            let (encoding, exponent, expected) = store.prepare_append(&block)?;
            if expected != sidecar {
                return Err(Error::InvalidSidecar(position));
            }
            store.commit_append(block, encoding, exponent, expected);
        }
        Ok(store)
    }

    /// Writes to a temporary sibling and renames it over `path`.
    pub fn save(&self, path: &Path) -> Result<(), Error> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path, params: PublicParams) -> Result<Self, Error> {
        Self::from_bytes(&fs::read(path)?, params)
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Error> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{dev_setup, HashId};
    use num_bigint::BigUint;
    use num_traits::One;
    use proptest::prelude::*;
    use rand::{Rng, RngCore, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn params() -> PublicParams {
        dev_setup(256, &mut ChaCha20Rng::seed_from_u64(42)).unwrap().0
    }

    fn random_tx(rng: &mut impl RngCore) -> Transaction {
        let mut payload = vec![0u8; 24];
        rng.fill_bytes(&mut payload);
        let mut sender = [0u8; 32];
        rng.fill_bytes(&mut sender);
        Transaction::new(payload, sender, rng.next_u64())
    }

    fn build(n: usize, seed: u64) -> ChainStore {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let params = params();
        let mut store = ChainStore::new(params.clone());
        store.append_with_summary(Block::genesis(&params, 4).unwrap()).unwrap();
        for _ in 1..n {
            let txs = (0..rng.gen_range(0..4)).map(|_| random_tx(&mut rng)).collect();
            store.mine_and_append(txs, 4).unwrap();
        }
        store
    }

    #[test]
    fn empty_block_encoding_layout() {
        let block = mine_block(None, vec![], 0).unwrap();
        let enc = block.canonical_encode();
        assert_eq!(enc.len(), HEADER_LEN + 4);
        assert_eq!(&enc[HEADER_LEN..], &[0, 0, 0, 0]);
        assert_eq!(block.header.nonce, 0);
    }

    #[test]
    fn sidecar_is_not_encoded() {
        let params = params();
        let mut a = mine_block(None, vec![], 0).unwrap();
        let b = a.clone();
        a.summary_sidecar = Some(Summary::empty(&params));
        assert_eq!(a.canonical_encode(), b.canonical_encode());
    }

    #[test]
    fn decode_rejects_garbage() {
        let block = mine_block(None, vec![Transaction::new(b"p".to_vec(), [1; 32], 0)], 0).unwrap();
        let enc = block.canonical_encode();
        assert!(Block::canonical_decode(&enc[..enc.len() - 1]).is_err());
        let mut extra = enc.clone();
        extra.push(0);
        assert!(Block::canonical_decode(&extra).is_err());
        let mut bad_txid = enc.clone();
        let last = bad_txid.len() - 1;
        bad_txid[last] ^= 1;
        assert!(Block::canonical_decode(&bad_txid).is_err());
        // Absurd transaction count with no bytes behind it.
        let mut huge = enc[..HEADER_LEN].to_vec();
        huge.extend_from_slice(&u32::MAX.to_be_bytes());
        assert!(Block::canonical_decode(&huge).is_err());
    }

    #[test]
    fn mined_block_links_to_parent() {
        let parent = mine_block(None, vec![], 4).unwrap();
        let child = mine_block(Some(&parent), vec![], 4).unwrap();
        assert_eq!(child.header.prev_hash, parent.hash());
        assert!(child.header.meets_difficulty());
        assert!(leading_zero_bits(&child.hash()) >= 4);
    }

    #[test]
    fn difficulty_cap() {
        assert!(matches!(mine_block(None, vec![], 25), Err(Error::DifficultyTooHigh(25))));
    }

    #[test]
    fn difficulty_eight_takes_about_256_attempts() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let mut total = 0u64;
        let mut parent: Option<Block> = None;
        for _ in 0..100 {
            let block = mine_block(parent.as_ref(), vec![random_tx(&mut rng)], 8).unwrap();
            total += block.header.nonce + 1;
            parent = Some(block);
        }
        let mean = total as f64 / 100.0;
        assert!((256.0 / 3.0..=256.0 * 3.0).contains(&mean), "mean attempts {mean}");
    }

    #[test]
    fn genesis_append_uses_generator() {
        let params = params();
        let mut store = ChainStore::new(params.clone());
        let genesis = Block::genesis(&params, 0).unwrap();
        let e = hash_to_exponent(&genesis.canonical_encode(), 1, HashId::Sha256).unwrap();
        store.append_with_summary(genesis).unwrap();
        assert_eq!(store.height(), 1);
        assert_eq!(
            store.summary().value(),
            &params.generator().modpow(e.value(), params.modulus())
        );
    }

    #[test]
    fn ten_blocks_match_product_oracle() {
        let store = build(10, 1);
        let params = store.params().clone();
        let mut product = BigUint::one();
        for (enc, k) in store.encodings().iter().zip(1u64..) {
            let mut pre = enc.clone();
            pre.extend_from_slice(&k.to_be_bytes());
            product *= BigUint::from_bytes_be(&Sha256::digest(&pre));
        }
        assert_eq!(
            store.summary().value(),
            &params.generator().modpow(&product, params.modulus())
        );
        assert_eq!(store.summary().height(), 10);
    }

    #[test]
    fn wrong_prev_hash_is_invalid_link() {
        let mut store = build(3, 2);
        let orphan = mine_block(store.block(1), vec![], 4).unwrap();
        assert!(matches!(store.append_with_summary(orphan), Err(Error::InvalidLink)));
        assert_eq!(store.height(), 3);
    }

    #[test]
    fn bad_pow_and_tx_root_rejected() {
        let mut store = build(2, 3);
        let mut block = mine_block(store.head(), vec![], 12).unwrap();
        block.header.nonce += 1;
        while block.header.meets_difficulty() {
            block.header.nonce += 1;
        }
        assert!(matches!(store.append_with_summary(block), Err(Error::InvalidPoW)));

        let mut block = mine_block(store.head(), vec![], 0).unwrap();
        block.transactions.push(Transaction::new(b"x".to_vec(), [0; 32], 1));
        assert!(matches!(store.append_with_summary(block), Err(Error::InvalidTxRoot)));
    }

    #[test]
    fn swapped_positions_change_summary() {
        let params = params();
        let a = mine_block(None, vec![Transaction::new(b"a".to_vec(), [0; 32], 0)], 0).unwrap();
        let b = mine_block(None, vec![Transaction::new(b"b".to_vec(), [0; 32], 0)], 0).unwrap();
        let (ea, eb) = (a.canonical_encode(), b.canonical_encode());
        let h = |bytes: &[u8], k| hash_to_exponent(bytes, k, HashId::Sha256).unwrap();
        let ab = accumulator::summarize([&h(&ea, 1), &h(&eb, 2)], &params);
        let ba = accumulator::summarize([&h(&eb, 1), &h(&ea, 2)], &params);
        assert_ne!(ab, ba);
    }

    #[test]
    fn find_tx_matches_linear_scan() {
        let store = build(100, 4);
        let mut rng = ChaCha20Rng::seed_from_u64(99);
        let all: Vec<(Hash32, u64)> = (1..=store.height())
            .flat_map(|p| store.block(p).unwrap().transactions.iter().map(move |t| (t.txid, p)))
            .collect();
        for (txid, _) in all.iter().take(50) {
            let expected = (1..=store.height())
                .find(|p| store.block(*p).unwrap().find_tx(txid).is_some())
                .unwrap();
            let (block, loc) = store.find_tx(txid).unwrap();
            assert_eq!(loc.position, expected);
            assert_eq!(&block.transactions[loc.offset as usize].txid, txid);
        }
        let mut random = [0u8; 32];
        rng.fill_bytes(&mut random);
        assert!(matches!(store.find_tx(&random), Err(Error::NotFound)));
    }

    #[test]
    fn persistence_round_trip() {
        let store = build(20, 5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("chain.bin");
        store.save(&path).unwrap();
        let reopened = ChainStore::load(&path, store.params().clone()).unwrap();
        assert_eq!(reopened.to_bytes(), store.to_bytes());
        assert_eq!(reopened.summary(), store.summary());
        reopened.validate().unwrap();
        assert_eq!(&fs::read(&path).unwrap()[..7], CHAIN_MAGIC);
    }

    #[test]
    fn tampered_sidecar_detected_on_load() {
        let store = build(4, 6);
        let mut copy = store.clone();
        let s = copy.blocks[2].summary_sidecar.clone().unwrap();
        copy.blocks[2].summary_sidecar = Some(summary_append(&s, &copy.exponents[0], store.params()));
        assert!(matches!(copy.validate(), Err(Error::InvalidSidecar(3))));
        assert!(matches!(
            ChainStore::from_bytes(&copy.to_bytes(), store.params().clone()),
            Err(Error::InvalidSidecar(3))
        ));
    }

    #[test]
    fn incremental_sidecars_equal_recomputation() {
        let store = build(30, 7);
        let params = store.params();
        for p in 1..=store.height() {
            let recomputed = accumulator::summarize(&store.exponents()[..p as usize], params);
            assert_eq!(store.summary_at(p).unwrap(), recomputed);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn canonical_round_trip(
            seed in any::<u64>(),
            txs in proptest::collection::vec((proptest::collection::vec(any::<u8>(), 0..64), any::<[u8; 32]>(), any::<u64>()), 0..6),
            nonce in any::<u64>(),
            difficulty in 0u8..=24,
        ) {
            let mut prev = [0u8; 32];
            ChaCha20Rng::seed_from_u64(seed).fill(&mut prev);
            let transactions: Vec<_> = txs.into_iter().map(|(p, s, c)| Transaction::new(p, s, c)).collect();
            let block = Block {
                header: BlockHeader { version: 1, prev_hash: prev, tx_root: tx_root(&transactions), nonce, difficulty_bits: difficulty },
                transactions,
                summary_sidecar: None,
            };
            let enc = block.canonical_encode();
            prop_assert_eq!(Block::canonical_decode(&enc).unwrap(), block);
        }
    }
}
