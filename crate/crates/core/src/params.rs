//! Public parameters: modulus, generator and hash convention.

use std::fmt;

use num_bigint::{BigUint, RandBigInt};
use num_integer::Integer;
use num_prime::nt_funcs::is_prime;
use num_traits::One;
use rand::{CryptoRng, Rng, RngCore};
use sha2::{Digest, Sha256};

use crate::codec::{DecodeError, Reader, Writer};
use crate::Error;

pub const PARAMS_MAGIC: &[u8; 4] = b"EPBC";
pub const PARAMS_VERSION: u8 = 1;
const MIN_BITS: u64 = 16;
const MAX_PRIME_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum HashId {
    Sha256 = 1,
}

impl HashId {
    pub fn exponent_bits(self) -> u32 {
        match self {
            HashId::Sha256 => 256,
        }
    }

    fn from_u8(v: u8) -> Result<Self, DecodeError> {
        match v {
            1 => Ok(HashId::Sha256),
            _ => Err(DecodeError::Invalid("unknown hash id")),
        }
    }
}

/// Modulus `N`, generator `g` and the hash used to derive block exponents.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct PublicParams {
    modulus: BigUint,
    generator: BigUint,
    hash_id: HashId,
}

impl fmt::Debug for PublicParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PublicParams")
            .field("modulus_bits", &self.modulus.bits())
            .field("hash_id", &self.hash_id)
            .finish_non_exhaustive()
    }
}

impl PublicParams {
    /// Validates `1 < g < N`, `gcd(g, N) = 1` and that `N` is odd.
    pub fn new(modulus: BigUint, generator: BigUint, hash_id: HashId) -> Result<Self, Error> {
        if modulus < BigUint::from(5u8) || modulus.is_even() {
            return Err(Error::InvalidParams("modulus must be odd and greater than 3"));
        }
        if generator <= BigUint::one() || generator >= modulus {
            return Err(Error::InvalidParams("generator out of range"));
        }
        if !generator.gcd(&modulus).is_one() {
            return Err(Error::InvalidParams("generator not a unit"));
        }
        Ok(Self {
            modulus,
            generator,
            hash_id,
        })
    }

    pub fn modulus(&self) -> &BigUint {
        &self.modulus
    }

    pub fn generator(&self) -> &BigUint {
        &self.generator
    }

    pub fn hash_id(&self) -> HashId {
        self.hash_id
    }

    pub fn exponent_bits(&self) -> u32 {
        self.hash_id.exponent_bits()
    }

    pub fn modulus_bits(&self) -> u64 {
        self.modulus.bits()
    }

    /// Byte width of `N`; summaries are padded to this in fixed-size records.
    pub fn modulus_bytes(&self) -> usize {
        self.modulus.bits().div_ceil(8) as usize
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.raw(PARAMS_MAGIC)
            .u8(PARAMS_VERSION)
            .u8(self.hash_id as u8)
            .biguint(&self.modulus)
            .biguint(&self.generator);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, Error> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != PARAMS_MAGIC {
            return Err(DecodeError::BadMagic.into());
        }
        let version = r.u8()?;
        if version != PARAMS_VERSION {
            return Err(DecodeError::UnsupportedVersion(version).into());
        }
        let hash_id = HashId::from_u8(r.u8()?)?;
        let modulus = r.biguint()?;
        let generator = r.biguint()?;
        r.finish()?;
        Self::new(modulus, generator, hash_id)
    }

    /// SHA-256 of the serialized parameters; light-client state files refer
    /// to their parameters by this digest.
    pub fn fingerprint(&self) -> [u8; 32] {
        Sha256::digest(self.to_bytes()).into()
    }
}

/// Factors of a single-party modulus. Only tests and the dev setup path ever
/// hold one; production parameters come from the ceremony.
#[derive(Clone)]
pub struct Trapdoor {
    pub p: BigUint,
    pub q: BigUint,
}

impl fmt::Debug for Trapdoor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Trapdoor(..)")
    }
}

impl Trapdoor {
    pub fn phi(&self) -> BigUint {
        (&self.p - 1u8) * (&self.q - 1u8)
    }
}

/// Samples `g = r^2 mod N` with `gcd(r, N) = 1` and `g != 1`.
pub fn sample_generator<R: RngCore + ?Sized>(modulus: &BigUint, rng: &mut R) -> BigUint {
    let two = BigUint::from(2u8);
    loop {
        let r = rng.gen_biguint_range(&two, modulus);
        if !r.gcd(modulus).is_one() {
            continue;
        }
        let g = r.modpow(&two, modulus);
        if g > BigUint::one() {
            return g;
        }
    }
}

pub(crate) fn random_prime<R: Rng + ?Sized>(bits: u64, rng: &mut R) -> Result<BigUint, Error> {
    for _ in 0..MAX_PRIME_ATTEMPTS {
        let mut candidate = rng.gen_biguint(bits);
        candidate.set_bit(bits - 1, true);
        candidate.set_bit(0, true);
        if is_prime(&candidate, None).probably() {
            return Ok(candidate);
        }
    }
    Err(Error::PrimalityFailure)
}

/// Single-party setup: `N = p * q` for two random `bits/2`-bit primes.
///
/// Returns the factors alongside the parameters so tests can compute `phi(N)`;
/// callers that publish parameters must drop the [`Trapdoor`].
pub fn dev_setup<R: Rng + CryptoRng>(bits: u64, rng: &mut R) -> Result<(PublicParams, Trapdoor), Error> {
    if bits < MIN_BITS || bits % 2 != 0 {
        return Err(Error::InvalidParams("bit length must be even and at least 16"));
    }
    let half = bits / 2;
    for _ in 0..MAX_PRIME_ATTEMPTS {
        let p = random_prime(half, rng)?;
        let q = random_prime(half, rng)?;
        if p == q {
            continue;
        }
        let modulus = &p * &q;
        if modulus.bits() != bits {
            continue;
        }
        let generator = sample_generator(&modulus, rng);
        let params = PublicParams::new(modulus, generator, HashId::Sha256)?;
        return Ok((params, Trapdoor { p, q }));
    }
    Err(Error::PrimalityFailure)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn toy_setup_is_reproducible() {
        let a = dev_setup(16, &mut ChaCha20Rng::seed_from_u64(7)).unwrap().0;
        let b = dev_setup(16, &mut ChaCha20Rng::seed_from_u64(7)).unwrap().0;
        assert_eq!(a, b);
        assert_eq!(a.modulus_bits(), 16);
    }

    #[test]
    fn production_size_modulus() {
        let (params, trapdoor) = dev_setup(1024, &mut ChaCha20Rng::seed_from_u64(1)).unwrap();
        assert_eq!(params.modulus_bits(), 1024);
        assert_eq!(&trapdoor.p * &trapdoor.q, *params.modulus());
        assert!(params.generator().gcd(params.modulus()).is_one());
        assert_eq!(params.exponent_bits(), 256);
    }

    #[test]
    fn generator_is_quadratic_residue_unit() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (params, t) = dev_setup(64, &mut rng).unwrap();
            let g = params.generator();
            assert!(g.gcd(params.modulus()).is_one());
            // Euler's criterion modulo each factor.
            for f in [&t.p, &t.q] {
                let e = (f - 1u8) >> 1;
                assert!(g.modpow(&e, f).is_one());
            }
        }
    }

    #[test]
    fn rejects_bad_generators() {
        let n = BigUint::from(253u32);
        assert!(PublicParams::new(n.clone(), BigUint::from(1u8), HashId::Sha256).is_err());
        assert!(PublicParams::new(n.clone(), BigUint::from(253u32), HashId::Sha256).is_err());
        assert!(PublicParams::new(n.clone(), BigUint::from(22u32), HashId::Sha256).is_err());
        assert!(PublicParams::new(BigUint::from(254u32), BigUint::from(3u8), HashId::Sha256).is_err());
    }

    #[test]
    fn file_layout() {
        let params = PublicParams::new(BigUint::from(0xC1_0001u32), BigUint::from(4u8), HashId::Sha256).unwrap();
        let bytes = params.to_bytes();
        assert_eq!(
            bytes,
            [b'E', b'P', b'B', b'C', 1, 1, 0, 0, 0, 3, 0xC1, 0x00, 0x01, 0, 0, 0, 1, 4]
        );
        assert_eq!(PublicParams::from_bytes(&bytes).unwrap(), params);
    }

    #[test]
    fn round_trip_and_corruption() {
        let (params, _) = dev_setup(256, &mut ChaCha20Rng::seed_from_u64(9)).unwrap();
        let bytes = params.to_bytes();
        assert_eq!(PublicParams::from_bytes(&bytes).unwrap(), params);
        assert_eq!(PublicParams::from_bytes(&bytes).unwrap().to_bytes(), bytes);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(PublicParams::from_bytes(&bad).is_err());
        let mut trailing = bytes;
        trailing.push(0);
        assert!(PublicParams::from_bytes(&trailing).is_err());
    }
}
