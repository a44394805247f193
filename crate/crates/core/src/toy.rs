//! Symmetric integer scheme over bits: c = p q + 2 r + m.
//!
//! Teaching oracle only. Sums and products of ciphertexts decrypt to XOR
//! and AND of the plaintext bits while the accumulated noise |2r + m|
//! stays below p / 2. Each ciphertext carries a bound on that noise.

use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_traits::One;
use rand::Rng;
use thiserror::Error;

pub const DEFAULT_KEY_BITS: u32 = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ToyError {
    #[error("key must be an odd integer >= 3")]
    InvalidKey,
    #[error("message must be a single bit, got {0}")]
    NotABit(u8),
    #[error("noise bound {bound} is not below p/2 for this key")]
    NoiseOverflow { bound: BigUint },
    #[error("bit lengths must be positive")]
    InvalidBits,
}

/// The shared secret: an odd integer p.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ToyKey {
    p: BigUint,
}

impl ToyKey {
    pub fn new(p: BigUint) -> Result<Self, ToyError> {
        if p < BigUint::from(3u8) || p.is_even() {
            return Err(ToyError::InvalidKey);
        }
        Ok(Self { p })
    }

    /// Random odd key of exactly `bits` bits.
    pub fn generate<R: Rng + ?Sized>(bits: u32, rng: &mut R) -> Result<Self, ToyError> {
        if bits < 2 {
            return Err(ToyError::InvalidBits);
        }
        let mut p = random_below_pow2(bits, rng);
        p.set_bit(bits as u64 - 1, true);
        p.set_bit(0, true);
        Self::new(p)
    }

    pub fn p(&self) -> &BigUint {
        &self.p
    }

    fn half(&self) -> BigUint {
        &self.p >> 1
    }

    /// True while a ciphertext with this noise bound still decrypts.
    pub fn admits(&self, noise_bound: &BigUint) -> bool {
        // noise < p/2  <=>  2 noise < p (p odd)
        (noise_bound << 1) < self.p
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ToyCiphertext {
    pub c: BigInt,
    /// Upper bound on |2r + m|, the distance of c from a multiple of p.
    pub noise_bound: BigUint,
}

fn random_below_pow2<R: Rng + ?Sized>(bits: u32, rng: &mut R) -> BigUint {
    let words = bits.div_ceil(32) as usize;
    let mut digits: Vec<u32> = (0..words).map(|_| rng.random()).collect();
    let spare = words as u32 * 32 - bits;
    if spare > 0 {
        if let Some(top) = digits.last_mut() {
            *top >>= spare;
        }
    }
    BigUint::from_slice(&digits)
}

/// Encrypts with caller-chosen q and r. No bound check: ciphertexts built
/// this way may already be undecryptable, which `toy_decrypt` reports.
pub fn encrypt_with(m: u8, q: &BigInt, r: &BigInt, key: &ToyKey) -> Result<ToyCiphertext, ToyError> {
    if m > 1 {
        return Err(ToyError::NotABit(m));
    }
    let p = BigInt::from(key.p.clone());
    let noise = BigInt::from(2) * r + BigInt::from(m);
    Ok(ToyCiphertext {
        c: p * q + &noise,
        noise_bound: noise.magnitude().clone(),
    })
}

/// c = p q + 2 r + m with q uniform in [0, 2^q_bits) and r uniform in
/// [-2^r_bits, 2^r_bits].
pub fn toy_encrypt<R: Rng + ?Sized>(
    m: u8,
    key: &ToyKey,
    q_bits: u32,
    r_bits: u32,
    rng: &mut R,
) -> Result<ToyCiphertext, ToyError> {
    if m > 1 {
        return Err(ToyError::NotABit(m));
    }
    if q_bits == 0 {
        return Err(ToyError::InvalidBits);
    }
    let r_max = BigUint::one() << r_bits;
    let bound: BigUint = (&r_max << 1u32) + 1u32;
    if !key.admits(&bound) {
        return Err(ToyError::NoiseOverflow { bound });
    }
    let q = BigInt::from(random_below_pow2(q_bits, rng));
    // r in [-r_max, r_max]: draw from [0, 2 r_max] and recentre.
    let span = random_below_pow2(r_bits + 2, rng) % ((&r_max << 1u32) + 1u32);
    let r = BigInt::from(span) - BigInt::from(r_max);
    let mut ct = encrypt_with(m, &q, &r, key)?;
    ct.noise_bound = bound;
    Ok(ct)
}

/// ((c mod p) taken in (-p/2, p/2]) mod 2.
pub fn toy_decrypt(ct: &ToyCiphertext, key: &ToyKey) -> Result<u8, ToyError> {
    if !key.admits(&ct.noise_bound) {
        return Err(ToyError::NoiseOverflow {
            bound: ct.noise_bound.clone(),
        });
    }
    Ok(centered_residue(&ct.c, key).is_odd() as u8)
}

fn centered_residue(c: &BigInt, key: &ToyKey) -> BigInt {
    let p = BigInt::from(key.p.clone());
    let r = c.mod_floor(&p);
    if r.magnitude() > &key.half() {
        r - p
    } else {
        r
    }
}

/// Sum of ciphertexts: decrypts to m1 XOR m2.
pub fn toy_add(a: &ToyCiphertext, b: &ToyCiphertext) -> ToyCiphertext {
    ToyCiphertext {
        c: &a.c + &b.c,
        noise_bound: &a.noise_bound + &b.noise_bound,
    }
}

/// Product of ciphertexts: decrypts to m1 AND m2.
pub fn toy_mul(a: &ToyCiphertext, b: &ToyCiphertext) -> ToyCiphertext {
    ToyCiphertext {
        c: &a.c * &b.c,
        noise_bound: &a.noise_bound * &b.noise_bound,
    }
}

/// The measured noise 2r + m of a ciphertext, for demonstrations.
pub fn toy_noise(ct: &ToyCiphertext, key: &ToyKey) -> BigInt {
    centered_residue(&ct.c, key)
}

/// Plain-text walkthrough of encryption, addition and multiplication,
/// as printed by the `toy-demo` command.
pub fn walkthrough() -> String {
    let key = ToyKey::new(BigUint::from(10007u32)).expect("odd key");
    let mut out = String::new();
    let mut line = |s: String| {
        out.push_str(&s);
        out.push('\n');
    };
    line(format!("key p = {}", key.p()));
    let c1 = encrypt_with(1, &BigInt::from(12), &BigInt::from(3), &key).expect("bit");
    line(format!("encrypt m=1 with q=12, r=3: c = p*q + 2r + m = {}", c1.c));
    let residue = c1.c.mod_floor(&BigInt::from(10007));
    line(format!(
        "decrypt: c mod p = {residue}, then mod 2 = {}",
        toy_decrypt(&c1, &key).expect("small noise")
    ));
    let c2 = encrypt_with(1, &BigInt::from(9), &BigInt::from(-2), &key).expect("bit");
    line(format!("encrypt m=1 with q=9, r=-2: c = {}", c2.c));
    let sum = toy_add(&c1, &c2);
    line(format!(
        "c1 + c2 = {} -> noise {} -> decrypts to {} (1 XOR 1)",
        sum.c,
        toy_noise(&sum, &key),
        toy_decrypt(&sum, &key).expect("small noise")
    ));
    let prod = toy_mul(&c1, &c2);
    line(format!(
        "c1 * c2 = {} -> noise {} -> decrypts to {} (1 AND 1)",
        prod.c,
        toy_noise(&prod, &key),
        toy_decrypt(&prod, &key).expect("small noise")
    ));
    line("truth tables (x, y, x+y, x*y):".to_string());
    for x in 0..=1u8 {
        for y in 0..=1u8 {
            let a = encrypt_with(x, &BigInt::from(5), &BigInt::from(1), &key).expect("bit");
            let b = encrypt_with(y, &BigInt::from(7), &BigInt::from(-1), &key).expect("bit");
            line(format!(
                "  {x} {y} -> {} {}",
                toy_decrypt(&toy_add(&a, &b), &key).expect("small noise"),
                toy_decrypt(&toy_mul(&a, &b), &key).expect("small noise")
            ));
        }
    }
    let big = encrypt_with(1, &BigInt::from(1), &BigInt::from(2600), &key).expect("bit");
    line(format!(
        "r = 2600 gives noise {} >= p/2: {}",
        big.noise_bound,
        toy_decrypt(&big, &key).unwrap_err()
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use num_traits::Zero;
    use rand_chacha::ChaCha8Rng;

    fn key() -> ToyKey {
        ToyKey::new(BigUint::from(10007u32)).unwrap()
    }

    #[test]
    fn worked_example() {
        let ct = encrypt_with(1, &BigInt::from(12), &BigInt::from(3), &key()).unwrap();
        assert_eq!(ct.c, BigInt::from(120091));
        assert_eq!(toy_decrypt(&ct, &key()).unwrap(), 1);
    }

    #[test]
    fn pure_multiple_of_p_is_zero() {
        let ct = encrypt_with(0, &BigInt::from(1), &BigInt::zero(), &key()).unwrap();
        assert_eq!(ct.c, BigInt::from(10007));
        assert_eq!(toy_decrypt(&ct, &key()).unwrap(), 0);
    }

    #[test]
    fn key_validation() {
        assert_eq!(ToyKey::new(BigUint::from(10u8)), Err(ToyError::InvalidKey));
        assert_eq!(ToyKey::new(BigUint::from(1u8)), Err(ToyError::InvalidKey));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let k = ToyKey::generate(64, &mut rng).unwrap();
        assert_eq!(k.p().bits(), 64);
        assert!(k.p().is_odd());
    }

    #[test]
    fn random_roundtrips() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let k = ToyKey::generate(DEFAULT_KEY_BITS, &mut rng).unwrap();
        for _ in 0..1000 {
            let m = rng.random_range(0..=1u8);
            let ct = toy_encrypt(m, &k, 128, 16, &mut rng).unwrap();
            assert_eq!(toy_decrypt(&ct, &k).unwrap(), m);
            assert!(toy_noise(&ct, &k).magnitude() <= &ct.noise_bound);
        }
    }

    #[test]
    fn oversized_noise_is_flagged() {
        let k = key();
        // r >= p/4 pushes 2r + m past p/2.
        let ct = encrypt_with(1, &BigInt::from(3), &BigInt::from(2502), &k).unwrap();
        assert!(matches!(
            toy_decrypt(&ct, &k),
            Err(ToyError::NoiseOverflow { .. })
        ));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(matches!(
            toy_encrypt(1, &k, 32, 12, &mut rng),
            Err(ToyError::NoiseOverflow { .. })
        ));
        assert_eq!(toy_encrypt(2, &k, 32, 2, &mut rng), Err(ToyError::NotABit(2)));
    }

    #[test]
    fn add_identity_and_mul_annihilator() {
        let k = key();
        let a = encrypt_with(1, &BigInt::from(40), &BigInt::from(-5), &k).unwrap();
        let zero = encrypt_with(0, &BigInt::zero(), &BigInt::zero(), &k).unwrap();
        assert_eq!(toy_decrypt(&toy_add(&a, &zero), &k).unwrap(), 1);
        let prod = toy_mul(&a, &zero);
        assert!(prod.c.is_zero());
        assert_eq!(toy_decrypt(&prod, &k).unwrap(), 0);
    }

    #[test]
    fn one_plus_one_is_zero_and_one_times_one_is_one() {
        let k = key();
        let a = encrypt_with(1, &BigInt::from(12), &BigInt::from(3), &k).unwrap();
        let b = encrypt_with(1, &BigInt::from(7), &BigInt::from(2), &k).unwrap();
        assert_eq!(toy_decrypt(&toy_add(&a, &b), &k).unwrap(), 0);
        assert_eq!(toy_decrypt(&toy_mul(&a, &b), &k).unwrap(), 1);
    }

    #[test]
    fn noise_bounds_compose() {
        let k = key();
        let a = encrypt_with(1, &BigInt::from(2), &BigInt::from(-3), &k).unwrap();
        let b = encrypt_with(0, &BigInt::from(5), &BigInt::from(4), &k).unwrap();
        assert_eq!(a.noise_bound, BigUint::from(5u8));
        assert_eq!(b.noise_bound, BigUint::from(8u8));
        assert_eq!(toy_add(&a, &b).noise_bound, BigUint::from(13u8));
        assert_eq!(toy_mul(&a, &b).noise_bound, BigUint::from(40u8));
        assert_eq!(toy_noise(&toy_mul(&a, &b), &k), BigInt::from(-40));
    }
}
