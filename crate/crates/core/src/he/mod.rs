//! BFV somewhat-homomorphic encryption restricted to the operations
//! needed for encrypted-feature, plaintext-model scoring: encryption,
//! decryption, ciphertext addition, plaintext addition and plaintext
//! multiplication, plus invariant-noise measurement and a binary integer
//! encoder.

mod encoding;
pub mod sampling;
mod serialize;

use std::fmt;
use std::sync::Arc;

use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::{ToPrimitive, Zero};
use rand::rngs::StdRng;
use rand::{CryptoRng, SeedableRng};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ring::{
    default_modulus_bits, default_moduli, pointwise_mul_assign, LazyAccumulator, RingError,
    RingParams, RingPoly,
};

pub use encoding::{decode_int, encode_int, MAX_ENCODE_BITS};
pub use serialize::{read_header, ObjectHeader, ObjectTag, FORMAT_VERSION, MAGIC};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HeError {
    #[error(transparent)]
    Ring(#[from] RingError),
    #[error("plaintext modulus {0} must satisfy 2 <= t < min(q, 2^62)")]
    InvalidPlainModulus(u64),
    #[error("objects were created under different parameter sets ({0} vs {1})")]
    ParamsMismatch(String, String),
    #[error("plaintext coefficient {value} is not below t = {t}")]
    MessageOutOfRange { value: u64, t: u64 },
    #[error("multiplication by the zero plaintext is rejected")]
    ZeroPlaintext,
    #[error("noise budget exhausted: decryption would be corrupted")]
    NoiseExhausted,
    #[error("integer {0} does not fit the encoder's range")]
    EncodeOverflow(i128),
    #[error("decoded value overflows 128 bits")]
    DecodeOverflow,
    #[error("entropy source failure: {0}")]
    Entropy(String),
    #[error("malformed serialized object: {0}")]
    Malformed(String),
}

/// Ring, plaintext modulus t and derived scaling constants.
pub struct EncryptionParams {
    ring: Arc<RingParams>,
    plain_modulus: u64,
    delta: BigUint,
    // delta mod q_i
    delta_residues: Vec<u64>,
    // q mod t, the part of q that delta * t misses
    q_mod_t: u64,
    half_q: BigUint,
    id: String,
}

impl fmt::Debug for EncryptionParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EncryptionParams")
            .field("id", &self.id)
            .field("degree", &self.ring.degree())
            .field("moduli", &self.ring.moduli())
            .field("plain_modulus", &self.plain_modulus)
            .finish()
    }
}

impl PartialEq for EncryptionParams {
    fn eq(&self, other: &Self) -> bool {
        self.plain_modulus == other.plain_modulus && *self.ring == *other.ring
    }
}

impl Eq for EncryptionParams {}

impl EncryptionParams {
    pub fn new(ring: Arc<RingParams>, plain_modulus: u64) -> Result<Arc<Self>, HeError> {
        let q = ring.q();
        if plain_modulus < 2
            || plain_modulus >= (1u64 << 62)
            || BigUint::from(plain_modulus) >= *q
        {
            return Err(HeError::InvalidPlainModulus(plain_modulus));
        }
        let (delta, rem) = q.div_rem(&BigUint::from(plain_modulus));
        let delta_residues = ring
            .moduli()
            .iter()
            .map(|&m| (&delta % m).to_u64().expect("residue fits u64"))
            .collect();
        let id = param_set_id(&ring, plain_modulus);
        Ok(Arc::new(Self {
            half_q: q >> 1,
            ring,
            plain_modulus,
            delta,
            delta_residues,
            q_mod_t: rem.to_u64().expect("remainder below t"),
            id,
        }))
    }

    /// Parameters with the default coefficient modulus for `degree`.
    pub fn with_defaults(degree: usize, plain_modulus: u64) -> Result<Arc<Self>, HeError> {
        Self::new(RingParams::with_default_moduli(degree)?, plain_modulus)
    }

    pub fn ring(&self) -> &Arc<RingParams> {
        &self.ring
    }

    pub fn degree(&self) -> usize {
        self.ring.degree()
    }

    pub fn plain_modulus(&self) -> u64 {
        self.plain_modulus
    }

    /// floor(q / t).
    pub fn delta(&self) -> &BigUint {
        &self.delta
    }

    pub fn param_set_id(&self) -> &str {
        &self.id
    }

    fn ensure_same(&self, other: &Self) -> Result<(), HeError> {
        if std::ptr::eq(self, other) || self == other {
            Ok(())
        } else {
            Err(HeError::ParamsMismatch(self.id.clone(), other.id.clone()))
        }
    }

    /// Adds round(q * m / t) to `target`, coefficient-wise, for m in [0, t).
    ///
    /// round(q m / t) = delta * m + round((q mod t) * m / t), so the
    /// plaintext enters with at most half a unit of rounding error.
    fn add_scaled_message(&self, target: &mut RingPoly, message: &[u64]) {
        let n = self.degree();
        let t = self.plain_modulus as u128;
        let corrections: Vec<u64> = message
            .iter()
            .map(|&m| ((self.q_mod_t as u128 * m as u128 + t / 2) / t) as u64)
            .collect();
        let ring = self.ring.clone();
        let raw = target.raw_mut();
        for i in 0..ring.modulus_count() {
            let md = ring.modulus(i);
            let d = self.delta_residues[i];
            let d_shoup = md.shoup(d);
            for ((c, &m), &corr) in raw[i * n..(i + 1) * n]
                .iter_mut()
                .zip(message)
                .zip(&corrections)
            {
                if m == 0 {
                    continue;
                }
                let scaled = md.add(md.mul_shoup(md.reduce(m), d, d_shoup), md.reduce(corr));
                *c = md.add(*c, scaled);
            }
        }
    }
}

/// Stable identifier: `bfv-n<n>-t<t>` for the default modulus chain, with a
/// short digest of the moduli appended otherwise.
pub fn param_set_id(ring: &RingParams, plain_modulus: u64) -> String {
    let n = ring.degree();
    let moduli = ring.moduli();
    let is_default = default_modulus_bits(n)
        .and_then(|bits| default_moduli(n, bits).ok())
        .is_some_and(|d| d == moduli);
    if is_default {
        format!("bfv-n{n}-t{plain_modulus}")
    } else {
        let mut h = Sha256::new();
        for q in &moduli {
            h.update(q.to_le_bytes());
        }
        let digest = h.finalize();
        let tag: String = digest[..4].iter().map(|b| format!("{b:02x}")).collect();
        format!("bfv-n{n}-t{plain_modulus}-q{tag}")
    }
}

/// Polynomial over Z_t.
#[derive(Clone, PartialEq, Eq)]
pub struct PlainPoly {
    params: Arc<EncryptionParams>,
    coeffs: Vec<u64>,
}

impl fmt::Debug for PlainPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let last = self.coeffs.iter().rposition(|&c| c != 0).map_or(0, |i| i + 1);
        f.debug_struct("PlainPoly")
            .field("params", &self.params.id)
            .field("coeffs", &&self.coeffs[..last.min(32)])
            .finish()
    }
}

impl PlainPoly {
    pub fn zero(params: &Arc<EncryptionParams>) -> Self {
        Self {
            params: params.clone(),
            coeffs: vec![0; params.degree()],
        }
    }

    /// Coefficients must be below t; shorter inputs are zero-padded.
    pub fn new(params: &Arc<EncryptionParams>, coeffs: &[u64]) -> Result<Self, HeError> {
        let n = params.degree();
        if coeffs.len() > n {
            return Err(RingError::LengthMismatch {
                expected: n,
                actual: coeffs.len(),
            }
            .into());
        }
        let t = params.plain_modulus;
        if let Some(&bad) = coeffs.iter().find(|&&c| c >= t) {
            return Err(HeError::MessageOutOfRange { value: bad, t });
        }
        let mut full = coeffs.to_vec();
        full.resize(n, 0);
        Ok(Self {
            params: params.clone(),
            coeffs: full,
        })
    }

    pub fn params(&self) -> &Arc<EncryptionParams> {
        &self.params
    }

    pub fn coeffs(&self) -> &[u64] {
        &self.coeffs
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0)
    }

    /// Coefficients in the signed range (-t/2, t/2].
    pub fn centered(&self) -> impl Iterator<Item = i64> + '_ {
        let t = self.params.plain_modulus;
        self.coeffs
            .iter()
            .map(move |&c| if c > t / 2 { c as i64 - t as i64 } else { c as i64 })
    }

    /// Coefficient-wise sum modulo t.
    pub fn add(&self, other: &Self) -> Result<Self, HeError> {
        self.params.ensure_same(&other.params)?;
        let t = self.params.plain_modulus;
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(&a, &b)| ((a as u128 + b as u128) % t as u128) as u64)
            .collect();
        Ok(Self {
            params: self.params.clone(),
            coeffs,
        })
    }

    /// Negacyclic product over Z_t (schoolbook; plaintexts here are sparse).
    pub fn mul(&self, other: &Self) -> Result<Self, HeError> {
        self.params.ensure_same(&other.params)?;
        let n = self.coeffs.len();
        let t = self.params.plain_modulus as i128;
        let mut acc = vec![0i128; n];
        let a: Vec<i64> = self.centered().collect();
        let b: Vec<i64> = other.centered().collect();
        for (i, &x) in a.iter().enumerate().filter(|(_, &x)| x != 0) {
            for (j, &y) in b.iter().enumerate().filter(|(_, &y)| y != 0) {
                let prod = (x as i128 * y as i128) % t;
                if i + j < n {
                    acc[i + j] = (acc[i + j] + prod) % t;
                } else {
                    acc[i + j - n] = (acc[i + j - n] - prod) % t;
                }
            }
        }
        let coeffs = acc.into_iter().map(|c| c.rem_euclid(t) as u64).collect();
        Ok(Self {
            params: self.params.clone(),
            coeffs,
        })
    }
}

/// Invariant-noise headroom of a ciphertext, in bits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NoiseBudget {
    pub bits: u32,
    pub exhausted: bool,
}

impl NoiseBudget {
    fn from_bits(bits: u32) -> Self {
        Self {
            bits,
            exhausted: bits == 0,
        }
    }
}

/// Ternary secret key, client-held only.
#[derive(Clone)]
pub struct SecretKey {
    params: Arc<EncryptionParams>,
    s: RingPoly,
    s_ntt: Vec<u64>,
}

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SecretKey")
            .field("params", &self.params.id)
            .finish_non_exhaustive()
    }
}

impl PartialEq for SecretKey {
    fn eq(&self, other: &Self) -> bool {
        *self.params == *other.params && self.s == other.s
    }
}

/// Public key (p0, p1) = (-(a s + e), a).
#[derive(Clone)]
pub struct PublicKey {
    params: Arc<EncryptionParams>,
    p0: RingPoly,
    p1: RingPoly,
    p0_ntt: Vec<u64>,
    p1_ntt: Vec<u64>,
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PublicKey")
            .field("params", &self.params.id)
            .finish_non_exhaustive()
    }
}

impl PartialEq for PublicKey {
    fn eq(&self, other: &Self) -> bool {
        *self.params == *other.params && self.p0 == other.p0 && self.p1 == other.p1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KeyPair {
    pub secret: SecretKey,
    pub public: PublicKey,
}

impl KeyPair {
    pub fn generate<R: CryptoRng + ?Sized>(params: &Arc<EncryptionParams>, rng: &mut R) -> Self {
        let ring = params.ring();
        let n = ring.degree();
        let s = RingPoly::from_signed(ring, &sampling::ternary(n, rng)).expect("degree matches");
        let a = RingPoly::from_residues(ring, sampling::uniform_residues(n, &ring.moduli(), rng))
            .expect("residues reduced");
        let e = RingPoly::from_signed(ring, &sampling::gaussian(n, rng)).expect("degree matches");
        let p0 = a.mul(&s).and_then(|as_| as_.add(&e)).expect("same ring").neg();
        let secret = SecretKey::from_poly(params, s);
        let public = PublicKey::from_polys(params, p0, a);
        Self { secret, public }
    }

    /// Key generation seeded from the operating system's entropy source.
    pub fn generate_secure(params: &Arc<EncryptionParams>) -> Result<Self, HeError> {
        let mut rng = StdRng::try_from_os_rng().map_err(|e| HeError::Entropy(e.to_string()))?;
        Ok(Self::generate(params, &mut rng))
    }
}

impl SecretKey {
    fn from_poly(params: &Arc<EncryptionParams>, s: RingPoly) -> Self {
        let s_ntt = s.to_ntt();
        Self {
            params: params.clone(),
            s,
            s_ntt,
        }
    }

    pub fn params(&self) -> &Arc<EncryptionParams> {
        &self.params
    }

    pub fn poly(&self) -> &RingPoly {
        &self.s
    }

    /// [c0 + c1 s]_q
    fn phase(&self, ct: &Ciphertext) -> Result<RingPoly, HeError> {
        self.params.ensure_same(&ct.params)?;
        let mut c1s = ct.c1.to_ntt();
        pointwise_mul_assign(self.params.ring(), &mut c1s, &self.s_ntt);
        let c1s = RingPoly::from_ntt(self.params.ring(), c1s);
        Ok(ct.c0.add(&c1s)?)
    }

    /// Rounds t * phase / q and measures the noise in one pass.
    fn decrypt_with_budget(&self, ct: &Ciphertext) -> Result<(PlainPoly, NoiseBudget), HeError> {
        let phase = self.phase(ct)?;
        let params = &self.params;
        let ring = params.ring();
        let n = ring.degree();
        let t = params.plain_modulus;
        let mut coeffs = Vec::with_capacity(n);

        let bits = if ring.modulus_count() == 1 {
            let md = ring.modulus(0);
            let q = md.value();
            let t128 = t as u128;
            let mut max_noise = 0u64;
            for &w in phase.residues(0) {
                let (quot, r) = md.div_rem_u128(t128 * w as u128);
                // round(t w / q) = floor(t w / q) + [r >= q - floor(q / 2)],
                // which lies in [0, t] since w < q.
                let rounded = (quot as u64) + u64::from(r >= q - q / 2);
                coeffs.push(if rounded == t { 0 } else { rounded });
                max_noise = max_noise.max(r.min(q - r));
            }
            budget_bits_u128(q as u128, max_noise as u128)
        } else {
            let q = ring.q();
            let t_big = BigUint::from(t);
            let mut max_noise = BigUint::zero();
            for j in 0..n {
                let tw = phase.coefficient(j) * &t_big;
                let m = ((&tw + &params.half_q) / q) % &t_big;
                coeffs.push(m.to_u64().expect("below t"));
                let r = &tw % q;
                let neg = q - &r;
                let mag = if r < neg { r } else { neg };
                if mag > max_noise {
                    max_noise = mag;
                }
            }
            budget_bits_big(q, &max_noise)
        };
        let plain = PlainPoly {
            params: params.clone(),
            coeffs,
        };
        Ok((plain, NoiseBudget::from_bits(bits)))
    }

    /// Decrypts, refusing ciphertexts whose noise budget is exhausted.
    pub fn decrypt(&self, ct: &Ciphertext) -> Result<PlainPoly, HeError> {
        let (plain, budget) = self.decrypt_with_budget(ct)?;
        if budget.exhausted {
            return Err(HeError::NoiseExhausted);
        }
        Ok(plain)
    }

    /// Decrypts without the noise check. The result is meaningless once
    /// the budget is exhausted; used to demonstrate the corruption.
    pub fn decrypt_ignoring_noise(&self, ct: &Ciphertext) -> Result<PlainPoly, HeError> {
        Ok(self.decrypt_with_budget(ct)?.0)
    }

    /// floor(log2(q / (2 ||[t (c0 + c1 s)]_q||_inf))), clamped at zero.
    pub fn noise_budget(&self, ct: &Ciphertext) -> Result<NoiseBudget, HeError> {
        Ok(self.decrypt_with_budget(ct)?.1)
    }
}

fn budget_bits_u128(q: u128, noise: u128) -> u32 {
    let denom = 2 * noise.max(1);
    if denom > q {
        return 0;
    }
    let mut b = (128 - q.leading_zeros()) - (128 - denom.leading_zeros());
    if denom << b > q {
        b -= 1;
    }
    b
}

fn budget_bits_big(q: &BigUint, noise: &BigUint) -> u32 {
    let denom = if noise.is_zero() {
        BigUint::from(2u8)
    } else {
        noise << 1
    };
    if &denom > q {
        return 0;
    }
    let mut b = (q.bits() - denom.bits()) as u32;
    if (&denom << b) > *q {
        b -= 1;
    }
    b
}

impl PublicKey {
    fn from_polys(params: &Arc<EncryptionParams>, p0: RingPoly, p1: RingPoly) -> Self {
        let p0_ntt = p0.to_ntt();
        let p1_ntt = p1.to_ntt();
        Self {
            params: params.clone(),
            p0,
            p1,
            p0_ntt,
            p1_ntt,
        }
    }

    pub fn params(&self) -> &Arc<EncryptionParams> {
        &self.params
    }

    pub fn polys(&self) -> (&RingPoly, &RingPoly) {
        (&self.p0, &self.p1)
    }

    /// c = (p0 u + e1 + round(q m / t), p1 u + e2) with ternary u.
    pub fn encrypt<R: CryptoRng + ?Sized>(
        &self,
        m: &PlainPoly,
        rng: &mut R,
    ) -> Result<Ciphertext, HeError> {
        self.params.ensure_same(&m.params)?;
        let ring = self.params.ring();
        let n = ring.degree();
        let u = RingPoly::from_signed(ring, &sampling::ternary(n, rng))?.to_ntt();
        let e1 = sampling::gaussian(n, rng);
        let e2 = sampling::gaussian(n, rng);

        let mut c0 = u.clone();
        pointwise_mul_assign(ring, &mut c0, &self.p0_ntt);
        let mut c0 = RingPoly::from_ntt(ring, c0);
        let mut c1 = u;
        pointwise_mul_assign(ring, &mut c1, &self.p1_ntt);
        let mut c1 = RingPoly::from_ntt(ring, c1);

        add_small_assign(&mut c0, &e1);
        add_small_assign(&mut c1, &e2);
        self.params.add_scaled_message(&mut c0, &m.coeffs);
        Ok(Ciphertext {
            params: self.params.clone(),
            c0,
            c1,
        })
    }
}

fn add_small_assign(target: &mut RingPoly, small: &[i64]) {
    let ring = target.ring().clone();
    let n = ring.degree();
    let raw = target.raw_mut();
    for i in 0..ring.modulus_count() {
        let m = ring.modulus(i);
        for (c, &e) in raw[i * n..(i + 1) * n].iter_mut().zip(small) {
            *c = m.add(*c, m.reduce_i64(e));
        }
    }
}

/// Pair (c0, c1) of ring polynomials under one parameter set.
#[derive(Clone, PartialEq)]
pub struct Ciphertext {
    params: Arc<EncryptionParams>,
    c0: RingPoly,
    c1: RingPoly,
}

impl fmt::Debug for Ciphertext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Ciphertext")
            .field("params", &self.params.id)
            .finish_non_exhaustive()
    }
}

/// Plaintexts with at most this many nonzero coefficients are multiplied
/// by shifted accumulation instead of the NTT.
const SPARSE_MUL_LIMIT: usize = 48;

impl Ciphertext {
    pub fn params(&self) -> &Arc<EncryptionParams> {
        &self.params
    }

    pub fn params_id(&self) -> &str {
        &self.params.id
    }

    pub fn components(&self) -> (&RingPoly, &RingPoly) {
        (&self.c0, &self.c1)
    }

    /// Homomorphic addition: decrypts to (m_a + m_b) mod t.
    pub fn add(&self, other: &Ciphertext) -> Result<Ciphertext, HeError> {
        self.params.ensure_same(&other.params)?;
        Ok(Ciphertext {
            params: self.params.clone(),
            c0: self.c0.add(&other.c0)?,
            c1: self.c1.add(&other.c1)?,
        })
    }

    pub fn add_assign(&mut self, other: &Ciphertext) -> Result<(), HeError> {
        self.params.ensure_same(&other.params)?;
        self.c0.add_assign(&other.c0)?;
        self.c1.add_assign(&other.c1)?;
        Ok(())
    }

    /// Adds a plaintext: decrypts to (m_ct + m) mod t.
    pub fn add_plain(&self, m: &PlainPoly) -> Result<Ciphertext, HeError> {
        self.params.ensure_same(&m.params)?;
        let mut c0 = self.c0.clone();
        self.params.add_scaled_message(&mut c0, &m.coeffs);
        Ok(Ciphertext {
            params: self.params.clone(),
            c0,
            c1: self.c1.clone(),
        })
    }

    /// Multiplies by a plaintext lifted to its centred representative.
    pub fn mul_plain(&self, m: &PlainPoly) -> Result<Ciphertext, HeError> {
        self.params.ensure_same(&m.params)?;
        if m.is_zero() {
            return Err(HeError::ZeroPlaintext);
        }
        let nonzero: Vec<(usize, i64)> = m
            .centered()
            .enumerate()
            .filter(|&(_, c)| c != 0)
            .collect();
        if nonzero.len() <= SPARSE_MUL_LIMIT {
            let mut acc = ProductAccumulator::new(&self.params);
            acc.add_product_terms(self, &nonzero);
            Ok(acc.finish())
        } else {
            Ok(self.mul_plain_ntt(m))
        }
    }

    /// Transform-domain route for dense plaintexts; also the reference the
    /// sparse route is checked against.
    pub fn mul_plain_ntt(&self, m: &PlainPoly) -> Ciphertext {
        let ring = self.params.ring();
        let centered: Vec<i64> = m.centered().collect();
        let lifted = RingPoly::from_signed(ring, &centered)
            .expect("degree matches")
            .to_ntt();
        let mut c0 = self.c0.to_ntt();
        pointwise_mul_assign(ring, &mut c0, &lifted);
        let mut c1 = self.c1.to_ntt();
        pointwise_mul_assign(ring, &mut c1, &lifted);
        Ciphertext {
            params: self.params.clone(),
            c0: RingPoly::from_ntt(ring, c0),
            c1: RingPoly::from_ntt(ring, c1),
        }
    }
}

/// Accumulates sums of ciphertext-times-sparse-plaintext products with
/// deferred modular reduction. The result equals the sum of the
/// corresponding `mul_plain` outputs exactly.
pub(crate) struct ProductAccumulator {
    params: Arc<EncryptionParams>,
    c0: LazyAccumulator,
    c1: LazyAccumulator,
}

impl ProductAccumulator {
    pub fn new(params: &Arc<EncryptionParams>) -> Self {
        Self {
            params: params.clone(),
            c0: LazyAccumulator::new(params.ring()),
            c1: LazyAccumulator::new(params.ring()),
        }
    }

    /// Adds `ct * sum_k value_k x^k` given the centred nonzero terms.
    pub fn add_product_terms(&mut self, ct: &Ciphertext, terms: &[(usize, i64)]) {
        debug_assert!(*self.params == *ct.params);
        let ring = self.params.ring();
        for &(k, v) in terms {
            match v {
                1 | -1 => {
                    self.c0.add_shifted(&ct.c0, k, v < 0);
                    self.c1.add_shifted(&ct.c1, k, v < 0);
                }
                _ => {
                    let scale: Vec<u64> = (0..ring.modulus_count())
                        .map(|i| ring.modulus(i).reduce_i64(v))
                        .collect();
                    self.c0.add_scaled_shifted(&ct.c0, k, &scale);
                    self.c1.add_scaled_shifted(&ct.c1, k, &scale);
                }
            }
        }
    }

    pub fn finish(self) -> Ciphertext {
        Ciphertext {
            params: self.params,
            c0: self.c0.finish(),
            c1: self.c1.finish(),
        }
    }
}
