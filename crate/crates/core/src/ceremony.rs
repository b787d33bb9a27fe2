//! Multi-party generation of the modulus.
//!
//! Each party holds additive shares `p_i, q_i`; the candidate modulus is
//! `N = (sum p_i) * (sum q_i)` and nobody learns either factor. A candidate is
//! kept only if it survives trial division and repeated rounds of the
//! distributed check `prod_i x^(p_i + q_i) = x^(N + 1) (mod N)`, which holds for
//! every unit `x` when both sums are prime because `N + 1 - P - Q = phi(N)`.
//!
//! The share product is simulated honest-but-curious: cross terms
//! `p_i * q_j` are split into random additive pieces by a simulated two-party
//! multiplication, each party publishes its local sum under a zero-sum mask,
//! and a coordinator adds the published values.

use std::fmt;

use num_bigint::{BigInt, BigUint, RandBigInt, Sign};
use num_integer::Integer;
use num_prime::nt_funcs::is_prime;
use num_traits::{One, ToPrimitive, Zero};
use rand::{CryptoRng, Rng};

use crate::accumulator::modexp;
use crate::codec::{DecodeError, Reader, Writer};
use crate::params::{sample_generator, HashId, PublicParams};
use crate::Error;

pub const TRANSCRIPT_MAGIC: &[u8; 7] = b"EPBCCER";
pub const TRANSCRIPT_VERSION: u8 = 1;
pub const DEFAULT_TEST_ROUNDS: u32 = 40;
pub const DEFAULT_TRIAL_BOUND: u32 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CeremonyConfig {
    pub parties: usize,
    pub bits: u64,
    pub test_rounds: u32,
    pub trial_division_bound: u32,
    pub max_attempts: u64,
}

impl CeremonyConfig {
    pub fn new(parties: usize, bits: u64) -> Self {
        Self {
            parties,
            bits,
            test_rounds: DEFAULT_TEST_ROUNDS,
            trial_division_bound: DEFAULT_TRIAL_BOUND,
            max_attempts: 1_000_000,
        }
    }

    fn validate(&self) -> Result<(), Error> {
        if self.parties < 2 {
            return Err(Error::InvalidParams("ceremony needs at least two parties"));
        }
        if self.bits < 16 || self.bits % 2 != 0 {
            return Err(Error::InvalidParams("bit length must be even and at least 16"));
        }
        let (lo, hi) = self.share_range();
        if hi <= lo || &hi - &lo < BigUint::from(16u8) {
            return Err(Error::InvalidParams("too many parties for this bit length"));
        }
        Ok(())
    }

    /// Public interval `[lo, hi)` each share is drawn from. With `h = bits/2`
    /// and `k` parties, `k * lo` is just above `2^(h - 1/2)` and `k * hi` just
    /// below `2^h`, so each sum has `h` bits and their product has `bits` bits.
    pub fn share_range(&self) -> (BigUint, BigUint) {
        let h = self.bits / 2;
        let k = self.parties.max(1) as u64;
        // Slack for forcing the two low bits of every share.
        let slack = BigUint::from(4u8);
        let floor_sum = (BigUint::one() << (2 * h - 1)).sqrt() + 1u8;
        let lo = floor_sum.div_ceil(&BigUint::from(k)) + &slack;
        let hi = (BigUint::one() << h) / k;
        let hi = if hi > slack { hi - slack } else { BigUint::zero() };
        (lo, hi)
    }
}

/// One party's private additive shares.
#[derive(Clone)]
pub struct PartyShare {
    party_id: u32,
    p_share: BigUint,
    q_share: BigUint,
}

impl fmt::Debug for PartyShare {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PartyShare")
            .field("party_id", &self.party_id)
            .finish_non_exhaustive()
    }
}

impl PartyShare {
    pub fn new(party_id: u32, p_share: BigUint, q_share: BigUint) -> Self {
        Self {
            party_id,
            p_share,
            q_share,
        }
    }

    pub fn party_id(&self) -> u32 {
        self.party_id
    }

    /// The only value a party releases during a test round.
    pub fn exponentiate(&self, x: &BigUint, modulus: &BigUint) -> BigUint {
        modexp(x, &(&self.p_share + &self.q_share), modulus)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BiprimalityRound {
    pub x: BigUint,
    pub party_values: Vec<BigUint>,
}

impl BiprimalityRound {
    pub fn holds(&self, modulus: &BigUint) -> bool {
        let lhs = self
            .party_values
            .iter()
            .fold(BigUint::one(), |acc, v| acc * v % modulus);
        lhs == self.x.modpow(&(modulus + 1u8), modulus)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    SmallFactor(u32),
    NonUnitWitness,
    FailedRound(u32),
}

/// Public record of the accepted (or last rejected) candidate. Never holds
/// raw shares.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CeremonyTranscript {
    pub candidate_n: BigUint,
    pub rounds: Vec<BiprimalityRound>,
    pub accepted: bool,
    pub attempts: u64,
}

impl CeremonyTranscript {
    pub fn round_count(&self) -> usize {
        self.rounds.len()
    }

    /// Re-checks every recorded round; an accepted transcript must replay.
    pub fn replay(&self) -> bool {
        let checked = if self.accepted {
            &self.rounds[..]
        } else {
            // A rejected candidate may end on its failing round.
            &self.rounds[..self.rounds.len().saturating_sub(1)]
        };
        checked.iter().all(|r| r.holds(&self.candidate_n))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.raw(TRANSCRIPT_MAGIC)
            .u8(TRANSCRIPT_VERSION)
            .u64(self.attempts)
            .u8(u8::from(self.accepted))
            .biguint(&self.candidate_n)
            .u32(self.rounds.len() as u32);
        for round in &self.rounds {
            w.biguint(&round.x).u32(round.party_values.len() as u32);
            for v in &round.party_values {
                w.biguint(v);
            }
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, Error> {
        let mut r = Reader::new(bytes);
        if r.take(TRANSCRIPT_MAGIC.len())? != TRANSCRIPT_MAGIC {
            return Err(DecodeError::BadMagic.into());
        }
        let version = r.u8()?;
        if version != TRANSCRIPT_VERSION {
            return Err(DecodeError::UnsupportedVersion(version).into());
        }
        let attempts = r.u64()?;
        let accepted = match r.u8()? {
            0 => false,
            1 => true,
            _ => return Err(DecodeError::Invalid("accepted flag").into()),
        };
        let candidate_n = r.biguint()?;
        let count = r.u32()?;
        let mut rounds = Vec::new();
        for _ in 0..count {
            let x = r.biguint()?;
            let parties = r.u32()?;
            let party_values = (0..parties).map(|_| r.biguint()).collect::<Result<_, _>>()?;
            rounds.push(BiprimalityRound { x, party_values });
        }
        r.finish()?;
        Ok(Self {
            candidate_n,
            rounds,
            accepted,
            attempts,
        })
    }
}

/// Primes below `bound`, grouped so each group's product fits in a `u64`.
struct SmallPrimes {
    groups: Vec<(u64, Vec<u32>)>,
}

impl SmallPrimes {
    fn below(bound: u32) -> Self {
        let bound = bound as usize;
        let mut composite = vec![false; bound.max(2)];
        let mut primes = Vec::new();
        for i in 2..bound {
            if !composite[i] {
                primes.push(i as u32);
                let mut j = i * i;
                while j < bound {
                    composite[j] = true;
                    j += i;
                }
            }
        }
        let mut groups = Vec::new();
        let mut product = 1u64;
        let mut members = Vec::new();
        for p in primes {
            match product.checked_mul(u64::from(p)) {
                Some(next) => {
                    product = next;
                    members.push(p);
                }
                None => {
                    groups.push((product, std::mem::take(&mut members)));
                    product = u64::from(p);
                    members.push(p);
                }
            }
        }
        if !members.is_empty() {
            groups.push((product, members));
        }
        Self { groups }
    }

    /// Smallest listed prime dividing `n`, ignoring `n` itself.
    fn smallest_factor(&self, n: &BigUint) -> Option<u32> {
        for (product, members) in &self.groups {
            let rem = (n % *product).to_u64().expect("remainder below u64 modulus");
            for p in members {
                if rem % u64::from(*p) == 0 && *n != BigUint::from(*p) {
                    return Some(*p);
                }
            }
        }
        None
    }
}

/// One test round: `Err(NonUnitWitness)` if `x` shares a factor with `N`.
pub fn biprimality_round(parties: &[PartyShare], modulus: &BigUint, x: &BigUint) -> Result<(bool, BiprimalityRound), Error> {
    if x.is_zero() || !x.gcd(modulus).is_one() {
        return Err(Error::NonUnitWitness);
    }
    let party_values: Vec<BigUint> = parties.iter().map(|p| p.exponentiate(x, modulus)).collect();
    let round = BiprimalityRound {
        x: x.clone(),
        party_values,
    };
    Ok((round.holds(modulus), round))
}

fn random_share<R: Rng + ?Sized>(lo: &BigUint, hi: &BigUint, residue: u8, rng: &mut R) -> BigUint {
    let mut v = rng.gen_biguint_range(lo, hi);
    // Fix the low two bits so the sums land on 3 mod 4.
    v.set_bit(0, residue & 1 == 1);
    v.set_bit(1, residue & 2 == 2);
    v
}

/// Fresh random shares: party 0 holds values congruent to 3 mod 4 and every
/// other party 0 mod 4, so both sums are odd.
pub fn sample_parties<R: Rng + ?Sized>(config: &CeremonyConfig, rng: &mut R) -> Vec<PartyShare> {
    let (lo, hi) = config.share_range();
    (0..config.parties)
        .map(|i| {
            let residue = if i == 0 { 3 } else { 0 };
            PartyShare::new(
                i as u32,
                random_share(&lo, &hi, residue, rng),
                random_share(&lo, &hi, residue, rng),
            )
        })
        .collect()
}

/// Splits known totals into random positive shares; used to plant candidates.
pub fn split_into_shares<R: Rng + ?Sized>(p_total: &BigUint, q_total: &BigUint, parties: usize, rng: &mut R) -> Vec<PartyShare> {
    assert!(parties >= 1);
    let split = |total: &BigUint, rng: &mut R| -> Vec<BigUint> {
        let mut remaining = total.clone();
        let mut out = Vec::with_capacity(parties);
        for _ in 1..parties {
            let bound = &remaining / (parties as u32 * 2);
            let piece = if bound.is_zero() { BigUint::zero() } else { rng.gen_biguint_below(&bound) };
            remaining -= &piece;
            out.push(piece);
        }
        out.push(remaining);
        out
    };
    let ps = split(p_total, rng);
    let qs = split(q_total, rng);
    ps.into_iter()
        .zip(qs)
        .enumerate()
        .map(|(i, (p, q))| PartyShare::new(i as u32, p, q))
        .collect()
}

/// Joint modulus from masked additive shares of `sum_i sum_j p_i q_j`.
pub fn joint_modulus<R: Rng + ?Sized>(parties: &[PartyShare], rng: &mut R) -> BigUint {
    let l = parties.len();
    let bound = parties
        .iter()
        .map(|p| p.p_share.bits() + p.q_share.bits())
        .max()
        .unwrap_or(0)
        + 64;
    let mut local: Vec<BigInt> = parties
        .iter()
        .map(|p| BigInt::from(&p.p_share * &p.q_share))
        .collect();
    // Simulated two-party product: i learns a random piece, j learns the rest.
    for i in 0..l {
        for j in 0..l {
            if i == j {
                continue;
            }
            let cross = BigInt::from(&parties[i].p_share * &parties[j].q_share);
            let piece = BigInt::from_biguint(Sign::Plus, rng.gen_biguint(bound));
            local[j] += &cross - &piece;
            local[i] += piece;
        }
    }
    let mut masks: Vec<BigInt> = (1..l)
        .map(|_| BigInt::from_biguint(Sign::Plus, rng.gen_biguint(bound)))
        .collect();
    let last = -masks.iter().sum::<BigInt>();
    masks.push(last);
    let published: Vec<BigInt> = local.into_iter().zip(masks).map(|(v, m)| v + m).collect();
    published
        .into_iter()
        .sum::<BigInt>()
        .to_biguint()
        .expect("share products are non-negative")
}

/// Runs trial division and `rounds` biprimality tests on one candidate.
pub fn evaluate_candidate<R: Rng + ?Sized>(
    parties: &[PartyShare],
    modulus: &BigUint,
    rounds: u32,
    trial_bound: u32,
    rng: &mut R,
) -> (CeremonyTranscript, Option<Rejection>) {
    evaluate_with(parties, modulus, rounds, &SmallPrimes::below(trial_bound), rng)
}

fn evaluate_with<R: Rng + ?Sized>(
    parties: &[PartyShare],
    modulus: &BigUint,
    rounds: u32,
    small: &SmallPrimes,
    rng: &mut R,
) -> (CeremonyTranscript, Option<Rejection>) {
    let mut transcript = CeremonyTranscript {
        candidate_n: modulus.clone(),
        rounds: Vec::new(),
        accepted: false,
        attempts: 1,
    };
    if let Some(p) = small.smallest_factor(modulus) {
        return (transcript, Some(Rejection::SmallFactor(p)));
    }
    let two = BigUint::from(2u8);
    for round in 0..rounds {
        let x = rng.gen_biguint_range(&two, modulus);
        match biprimality_round(parties, modulus, &x) {
            Ok((passed, record)) => {
                transcript.rounds.push(record);
                if !passed {
                    return (transcript, Some(Rejection::FailedRound(round)));
                }
            }
            Err(_) => return (transcript, Some(Rejection::NonUnitWitness)),
        }
    }
    transcript.accepted = true;
    (transcript, None)
}

fn sums(parties: &[PartyShare]) -> (BigUint, BigUint) {
    parties.iter().fold((BigUint::zero(), BigUint::zero()), |(p, q), s| {
        (p + &s.p_share, q + &s.q_share)
    })
}

/// Generates candidates until one passes every check and returns public
/// parameters with `g = r^2 mod N`.
pub fn run_ceremony<R: Rng + CryptoRng>(config: &CeremonyConfig, rng: &mut R) -> Result<(PublicParams, CeremonyTranscript), Error> {
    config.validate()?;
    let small = SmallPrimes::below(config.trial_division_bound);
    for attempt in 1..=config.max_attempts {
        let parties = sample_parties(config, rng);
        let modulus = joint_modulus(&parties, rng);
        if modulus.bits() != config.bits {
            continue;
        }
        let (mut transcript, rejection) = evaluate_with(&parties, &modulus, config.test_rounds, &small, rng);
        if rejection.is_some() {
            continue;
        }
        let (p, q) = sums(&parties);
        if !(is_prime(&p, None).probably() && is_prime(&q, None).probably()) {
            continue;
        }
        transcript.attempts = attempt;
        let generator = sample_generator(&modulus, rng);
        let params = PublicParams::new(modulus, generator, HashId::Sha256)?;
        return Ok((params, transcript));
    }
    Err(Error::ExhaustedAttempts(config.max_attempts))
}
