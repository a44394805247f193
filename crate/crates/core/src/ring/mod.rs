//! Exact arithmetic in Z_q[x]/(x^n + 1) with q a product of word-sized
//! NTT-friendly primes, stored in residue-number-system form.

mod modulus;
mod ntt;

use std::fmt;
use std::sync::Arc;

use num_bigint::BigUint;
use num_traits::{One, Zero};
use thiserror::Error;

pub use modulus::{is_prime, ntt_prime, Modulus, MAX_MODULUS_BITS};
pub use ntt::NttTable;

pub const MIN_DEGREE: usize = 1024;
pub const MAX_DEGREE: usize = 16384;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RingError {
    #[error("ring degree {0} must be a power of two in [{MIN_DEGREE}, {MAX_DEGREE}]")]
    InvalidDegree(usize),
    #[error("modulus {0} is not an NTT-friendly prime below 2^{MAX_MODULUS_BITS} for degree {1}")]
    InvalidModulus(u64, usize),
    #[error("modulus {0} appears more than once")]
    DuplicateModulus(u64),
    #[error("at least one modulus is required")]
    NoModuli,
    #[error("no default coefficient modulus for degree {0}")]
    NoDefaultModulus(usize),
    #[error("polynomials belong to different rings")]
    ParamsMismatch,
    #[error("expected {expected} coefficients, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("residue {value} is not reduced modulo {modulus}")]
    UnreducedResidue { value: u64, modulus: u64 },
}

/// Default coefficient-modulus prime sizes per ring degree. Totals are
/// 27, 54, 109, 218 and 438 bits, the usual 128-bit security choices.
pub fn default_modulus_bits(degree: usize) -> Option<&'static [u32]> {
    match degree {
        1024 => Some(&[27]),
        2048 => Some(&[54]),
        4096 => Some(&[36, 36, 37]),
        8192 => Some(&[43, 43, 44, 44, 44]),
        16384 => Some(&[48, 48, 48, 49, 49, 49, 49, 49, 49]),
        _ => None,
    }
}

/// Ring degree, modulus chain and the per-modulus transform tables.
pub struct RingParams {
    degree: usize,
    moduli: Vec<Modulus>,
    ntt: Vec<NttTable>,
    q: BigUint,
    // (q / q_i, (q / q_i)^-1 mod q_i) for CRT reconstruction.
    crt: Vec<(BigUint, u64)>,
}

impl fmt::Debug for RingParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RingParams")
            .field("degree", &self.degree)
            .field("moduli", &self.moduli())
            .finish()
    }
}

impl PartialEq for RingParams {
    fn eq(&self, other: &Self) -> bool {
        self.degree == other.degree && self.moduli == other.moduli
    }
}

impl Eq for RingParams {}

impl RingParams {
    /// Production constructor: `degree` must lie in [1024, 16384].
    pub fn new(degree: usize, moduli: &[u64]) -> Result<Arc<Self>, RingError> {
        if !degree.is_power_of_two() || !(MIN_DEGREE..=MAX_DEGREE).contains(&degree) {
            return Err(RingError::InvalidDegree(degree));
        }
        Self::build(degree, moduli)
    }

    /// Accepts any power-of-two degree >= 2. Small rings carry no security
    /// and exist for tests and worked examples.
    pub fn new_toy(degree: usize, moduli: &[u64]) -> Result<Arc<Self>, RingError> {
        if !degree.is_power_of_two() || degree < 2 || degree > MAX_DEGREE {
            return Err(RingError::InvalidDegree(degree));
        }
        Self::build(degree, moduli)
    }

    /// Ring with the default modulus chain for `degree`.
    pub fn with_default_moduli(degree: usize) -> Result<Arc<Self>, RingError> {
        let bits = default_modulus_bits(degree).ok_or(RingError::NoDefaultModulus(degree))?;
        let moduli = default_moduli(degree, bits)?;
        Self::new(degree, &moduli)
    }

    fn build(degree: usize, moduli: &[u64]) -> Result<Arc<Self>, RingError> {
        if moduli.is_empty() {
            return Err(RingError::NoModuli);
        }
        let mut checked = Vec::with_capacity(moduli.len());
        let mut tables = Vec::with_capacity(moduli.len());
        for (i, &q) in moduli.iter().enumerate() {
            if moduli[..i].contains(&q) {
                return Err(RingError::DuplicateModulus(q));
            }
            if q >= (1u64 << MAX_MODULUS_BITS) || !is_prime(q) || q % (2 * degree as u64) != 1 {
                return Err(RingError::InvalidModulus(q, degree));
            }
            let m = Modulus::new(q);
            let table = NttTable::new(m, degree).ok_or(RingError::InvalidModulus(q, degree))?;
            checked.push(m);
            tables.push(table);
        }
        let q: BigUint = moduli.iter().fold(BigUint::one(), |acc, &m| acc * m);
        let crt = checked
            .iter()
            .map(|m| {
                let q_hat = &q / m.value();
                let q_hat_mod = (&q_hat % m.value()).iter_u64_digits().next().unwrap_or(0);
                let inv = m.inv(q_hat_mod).expect("moduli are distinct primes");
                (q_hat, inv)
            })
            .collect();
        Ok(Arc::new(Self {
            degree,
            moduli: checked,
            ntt: tables,
            q,
            crt,
        }))
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn moduli(&self) -> Vec<u64> {
        self.moduli.iter().map(Modulus::value).collect()
    }

    pub fn modulus(&self, i: usize) -> &Modulus {
        &self.moduli[i]
    }

    pub fn modulus_count(&self) -> usize {
        self.moduli.len()
    }

    pub fn total_q_bits(&self) -> u32 {
        self.moduli.iter().map(Modulus::bits).sum()
    }

    /// Full coefficient modulus q = product of the chain.
    pub fn q(&self) -> &BigUint {
        &self.q
    }

    /// CRT reconstruction of one coefficient into [0, q).
    pub fn compose(&self, residues: impl Iterator<Item = u64>) -> BigUint {
        let mut acc = BigUint::zero();
        for ((m, (q_hat, q_hat_inv)), r) in self.moduli.iter().zip(&self.crt).zip(residues) {
            let scaled = m.mul(r, *q_hat_inv);
            acc += q_hat * scaled;
        }
        acc % &self.q
    }
}

/// Default chain: for each requested size, the largest unused prime of
/// that size congruent to 1 mod 2n.
pub fn default_moduli(degree: usize, bits: &[u32]) -> Result<Vec<u64>, RingError> {
    let mut out: Vec<u64> = Vec::with_capacity(bits.len());
    for &b in bits {
        let q = ntt_prime(b, degree, &out).ok_or(RingError::NoDefaultModulus(degree))?;
        out.push(q);
    }
    Ok(out)
}

/// Element of Z_q[x]/(x^n + 1). Residues are stored modulus-major: the
/// n residues for modulus i occupy `coeffs[i*n..(i+1)*n]`.
#[derive(Clone)]
pub struct RingPoly {
    ring: Arc<RingParams>,
    coeffs: Vec<u64>,
}

impl fmt::Debug for RingPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.ring.degree;
        let shown = n.min(8);
        f.debug_struct("RingPoly")
            .field("degree", &n)
            .field("moduli", &self.ring.moduli())
            .field("head", &&self.coeffs[..shown])
            .finish()
    }
}

impl PartialEq for RingPoly {
    fn eq(&self, other: &Self) -> bool {
        self.ring == other.ring && self.coeffs == other.coeffs
    }
}

impl Eq for RingPoly {}

impl RingPoly {
    pub fn zero(ring: &Arc<RingParams>) -> Self {
        Self {
            ring: ring.clone(),
            coeffs: vec![0; ring.degree * ring.moduli.len()],
        }
    }

    /// Builds from residue-major data, checking that every residue is reduced.
    pub fn from_residues(ring: &Arc<RingParams>, coeffs: Vec<u64>) -> Result<Self, RingError> {
        let expected = ring.degree * ring.moduli.len();
        if coeffs.len() != expected {
            return Err(RingError::LengthMismatch {
                expected,
                actual: coeffs.len(),
            });
        }
        for (chunk, m) in coeffs.chunks_exact(ring.degree).zip(&ring.moduli) {
            if let Some(&bad) = chunk.iter().find(|&&c| c >= m.value()) {
                return Err(RingError::UnreducedResidue {
                    value: bad,
                    modulus: m.value(),
                });
            }
        }
        Ok(Self {
            ring: ring.clone(),
            coeffs,
        })
    }

    /// Lifts small signed integer coefficients into every residue.
    pub fn from_signed(ring: &Arc<RingParams>, values: &[i64]) -> Result<Self, RingError> {
        let n = ring.degree;
        if values.len() != n {
            return Err(RingError::LengthMismatch {
                expected: n,
                actual: values.len(),
            });
        }
        let mut coeffs = Vec::with_capacity(n * ring.moduli.len());
        for m in &ring.moduli {
            coeffs.extend(values.iter().map(|&v| m.reduce_i64(v)));
        }
        Ok(Self {
            ring: ring.clone(),
            coeffs,
        })
    }

    /// `value * x^k` with `value` given as a signed integer.
    pub fn monomial(ring: &Arc<RingParams>, k: usize, value: i64) -> Self {
        let mut p = Self::zero(ring);
        let n = ring.degree;
        // x^k with k >= n folds to -x^(k - n).
        let (pos, sign) = ((k % (2 * n)) % n, if (k / n) % 2 == 0 { 1 } else { -1 });
        for (i, m) in ring.moduli.iter().enumerate() {
            p.coeffs[i * n + pos] = m.reduce_i64(value * sign);
        }
        p
    }

    pub fn ring(&self) -> &Arc<RingParams> {
        &self.ring
    }

    pub fn degree(&self) -> usize {
        self.ring.degree
    }

    pub fn residues(&self, modulus_index: usize) -> &[u64] {
        let n = self.ring.degree;
        &self.coeffs[modulus_index * n..(modulus_index + 1) * n]
    }

    pub fn raw(&self) -> &[u64] {
        &self.coeffs
    }

    pub(crate) fn raw_mut(&mut self) -> &mut [u64] {
        &mut self.coeffs
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0)
    }

    /// Coefficient `j` reconstructed into [0, q).
    pub fn coefficient(&self, j: usize) -> BigUint {
        let n = self.ring.degree;
        self.ring
            .compose((0..self.ring.moduli.len()).map(|i| self.coeffs[i * n + j]))
    }

    fn check(&self, other: &Self) -> Result<(), RingError> {
        if Arc::ptr_eq(&self.ring, &other.ring) || *self.ring == *other.ring {
            Ok(())
        } else {
            Err(RingError::ParamsMismatch)
        }
    }

    fn zip_with(&self, other: &Self, f: impl Fn(&Modulus, u64, u64) -> u64) -> Result<Self, RingError> {
        self.check(other)?;
        let n = self.ring.degree;
        let mut coeffs = Vec::with_capacity(self.coeffs.len());
        for (i, m) in self.ring.moduli.iter().enumerate() {
            let range = i * n..(i + 1) * n;
            coeffs.extend(
                self.coeffs[range.clone()]
                    .iter()
                    .zip(&other.coeffs[range])
                    .map(|(&a, &b)| f(m, a, b)),
            );
        }
        Ok(Self {
            ring: self.ring.clone(),
            coeffs,
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self, RingError> {
        self.zip_with(other, |m, a, b| m.add(a, b))
    }

    pub fn sub(&self, other: &Self) -> Result<Self, RingError> {
        self.zip_with(other, |m, a, b| m.sub(a, b))
    }

    pub fn neg(&self) -> Self {
        let n = self.ring.degree;
        let mut out = self.clone();
        for (i, m) in self.ring.moduli.iter().enumerate() {
            for c in &mut out.coeffs[i * n..(i + 1) * n] {
                *c = m.neg(*c);
            }
        }
        out
    }

    pub(crate) fn add_assign(&mut self, other: &Self) -> Result<(), RingError> {
        self.check(other)?;
        let n = self.ring.degree;
        for (i, m) in self.ring.moduli.iter().enumerate() {
            let range = i * n..(i + 1) * n;
            for (a, &b) in self.coeffs[range.clone()].iter_mut().zip(&other.coeffs[range]) {
                *a = m.add(*a, b);
            }
        }
        Ok(())
    }

    /// Negacyclic product via the NTT.
    pub fn mul(&self, other: &Self) -> Result<Self, RingError> {
        self.check(other)?;
        let mut a = self.to_ntt();
        let b = other.to_ntt();
        pointwise_mul_assign(&self.ring, &mut a, &b);
        Ok(Self::from_ntt(&self.ring, a))
    }

    /// Quadratic-time negacyclic convolution. Reference path for `mul`.
    pub fn mul_schoolbook(&self, other: &Self) -> Result<Self, RingError> {
        self.check(other)?;
        let n = self.ring.degree;
        let mut coeffs = vec![0u64; self.coeffs.len()];
        for (r, m) in self.ring.moduli.iter().enumerate() {
            let a = &self.coeffs[r * n..(r + 1) * n];
            let b = &other.coeffs[r * n..(r + 1) * n];
            let out = &mut coeffs[r * n..(r + 1) * n];
            for (i, &ai) in a.iter().enumerate() {
                if ai == 0 {
                    continue;
                }
                for (j, &bj) in b.iter().enumerate() {
                    let prod = m.mul(ai, bj);
                    let k = i + j;
                    if k < n {
                        out[k] = m.add(out[k], prod);
                    } else {
                        out[k - n] = m.sub(out[k - n], prod);
                    }
                }
            }
        }
        Ok(Self {
            ring: self.ring.clone(),
            coeffs,
        })
    }

    /// Multiplies every residue vector by an integer scalar given per modulus.
    pub fn mul_scalar(&self, scalar: &BigUint) -> Self {
        let n = self.ring.degree;
        let mut out = self.clone();
        for (i, m) in self.ring.moduli.iter().enumerate() {
            let s = (scalar % m.value()).iter_u64_digits().next().unwrap_or(0);
            let s_shoup = m.shoup(s);
            for c in &mut out.coeffs[i * n..(i + 1) * n] {
                *c = m.mul_shoup(*c, s, s_shoup);
            }
        }
        out
    }

    pub(crate) fn to_ntt(&self) -> Vec<u64> {
        let n = self.ring.degree;
        let mut data = self.coeffs.clone();
        for (i, chunk) in data.chunks_exact_mut(n).enumerate() {
            self.ring.ntt[i].forward(chunk);
        }
        data
    }

    pub(crate) fn from_ntt(ring: &Arc<RingParams>, mut data: Vec<u64>) -> Self {
        let n = ring.degree;
        for (i, chunk) in data.chunks_exact_mut(n).enumerate() {
            ring.ntt[i].inverse(chunk);
        }
        Self {
            ring: ring.clone(),
            coeffs: data,
        }
    }
}

pub(crate) fn pointwise_mul_assign(ring: &RingParams, a: &mut [u64], b: &[u64]) {
    let n = ring.degree;
    for (i, m) in ring.moduli.iter().enumerate() {
        let range = i * n..(i + 1) * n;
        for (x, &y) in a[range.clone()].iter_mut().zip(&b[range]) {
            *x = m.mul(*x, y);
        }
    }
}

/// Accumulates `±x^k * src` into lazily reduced residues.
///
/// Each call adds exactly one value below `q_i` to every coefficient, so a
/// 64-bit accumulator absorbs `floor(2^64 / q_i) - 1` calls before it must
/// be folded back into [0, q_i).
pub(crate) struct LazyAccumulator {
    ring: Arc<RingParams>,
    acc: Vec<u64>,
    pending: usize,
    capacity: usize,
}

impl LazyAccumulator {
    pub fn new(ring: &Arc<RingParams>) -> Self {
        let max_q = ring.moduli.iter().map(Modulus::value).max().unwrap_or(2);
        let capacity = ((u64::MAX / max_q) - 1) as usize;
        Self {
            ring: ring.clone(),
            acc: vec![0; ring.degree * ring.moduli.len()],
            pending: 0,
            capacity,
        }
    }

    fn fold(&mut self) {
        let n = self.ring.degree;
        for (i, m) in self.ring.moduli.iter().enumerate() {
            let q = m.value();
            for c in &mut self.acc[i * n..(i + 1) * n] {
                *c %= q;
            }
        }
        self.pending = 0;
    }

    /// Adds `sign * x^shift * src` where `sign` is +1 or -1 and `shift < n`.
    pub fn add_shifted(&mut self, src: &RingPoly, shift: usize, negate: bool) {
        if self.pending >= self.capacity {
            self.fold();
        }
        let n = self.ring.degree;
        debug_assert!(shift < n);
        let split = n - shift;
        for (i, m) in self.ring.moduli.iter().enumerate() {
            let q = m.value();
            let a = &src.coeffs[i * n..(i + 1) * n];
            let acc = &mut self.acc[i * n..(i + 1) * n];
            let (acc_wrap, acc_main) = acc.split_at_mut(shift);
            let (a_main, a_wrap) = a.split_at(split);
            if negate {
                for (d, &s) in acc_main.iter_mut().zip(a_main) {
                    *d += q - s;
                }
                for (d, &s) in acc_wrap.iter_mut().zip(a_wrap) {
                    *d += s;
                }
            } else {
                for (d, &s) in acc_main.iter_mut().zip(a_main) {
                    *d += s;
                }
                for (d, &s) in acc_wrap.iter_mut().zip(a_wrap) {
                    *d += q - s;
                }
            }
        }
        self.pending += 1;
    }

    /// Adds `scale * x^shift * src` for a general residue scale per modulus.
    pub fn add_scaled_shifted(&mut self, src: &RingPoly, shift: usize, scale: &[u64]) {
        if self.pending >= self.capacity {
            self.fold();
        }
        let n = self.ring.degree;
        let split = n - shift;
        for (i, m) in self.ring.moduli.iter().enumerate() {
            let q = m.value();
            let (w, w_shoup) = (scale[i], m.shoup(scale[i]));
            let a = &src.coeffs[i * n..(i + 1) * n];
            let acc = &mut self.acc[i * n..(i + 1) * n];
            let (acc_wrap, acc_main) = acc.split_at_mut(shift);
            let (a_main, a_wrap) = a.split_at(split);
            for (d, &s) in acc_main.iter_mut().zip(a_main) {
                *d += m.mul_shoup(s, w, w_shoup);
            }
            for (d, &s) in acc_wrap.iter_mut().zip(a_wrap) {
                *d += q - m.mul_shoup(s, w, w_shoup);
            }
        }
        self.pending += 1;
    }

    pub fn finish(mut self) -> RingPoly {
        self.fold();
        RingPoly {
            ring: self.ring,
            coeffs: self.acc,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigInt;
    use num_integer::Integer;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_ring(n: usize, moduli: &[u64]) -> Arc<RingParams> {
        RingParams::new_toy(n, moduli).unwrap()
    }

    fn random_poly(ring: &Arc<RingParams>, rng: &mut impl Rng) -> RingPoly {
        let n = ring.degree();
        let mut coeffs = Vec::new();
        for q in ring.moduli() {
            coeffs.extend((0..n).map(|_| rng.random_range(0..q)));
        }
        RingPoly::from_residues(ring, coeffs).unwrap()
    }

    // Independent oracle: coefficients as big integers modulo the full q,
    // schoolbook negacyclic convolution over Z, reduced at the end.
    fn big_coeffs(p: &RingPoly) -> Vec<BigInt> {
        (0..p.degree()).map(|j| BigInt::from(p.coefficient(j))).collect()
    }

    fn big_negacyclic(a: &[BigInt], b: &[BigInt], q: &BigInt) -> Vec<BigInt> {
        let n = a.len();
        let mut out = vec![BigInt::from(0); n];
        for i in 0..n {
            for j in 0..n {
                let prod = &a[i] * &b[j];
                if i + j < n {
                    out[i + j] += prod;
                } else {
                    out[i + j - n] -= prod;
                }
            }
        }
        out.into_iter().map(|c| c.mod_floor(q)).collect()
    }

    #[test]
    fn production_degree_range_enforced() {
        assert_eq!(
            RingParams::new(512, &[12289]).unwrap_err(),
            RingError::InvalidDegree(512)
        );
        assert!(matches!(
            RingParams::new(1024, &[17]),
            Err(RingError::InvalidModulus(17, 1024))
        ));
        let ring = RingParams::with_default_moduli(1024).unwrap();
        assert_eq!(ring.total_q_bits(), 27);
        for (n, bits) in [(2048, 54), (4096, 109), (8192, 218)] {
            let ring = RingParams::with_default_moduli(n).unwrap();
            assert_eq!(ring.total_q_bits(), bits);
        }
    }

    #[test]
    fn duplicate_moduli_rejected() {
        assert_eq!(
            RingParams::new_toy(4, &[17, 17]).unwrap_err(),
            RingError::DuplicateModulus(17)
        );
    }

    #[test]
    fn additive_identity_and_wraparound() {
        let ring = RingParams::with_default_moduli(1024).unwrap();
        let q = ring.moduli()[0];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_poly(&ring, &mut rng);
        assert_eq!(a.add(&RingPoly::zero(&ring)).unwrap(), a);

        let top = RingPoly::monomial(&ring, 0, (q - 1) as i64);
        let one = RingPoly::monomial(&ring, 0, 1);
        let sum = top.add(&one).unwrap();
        assert_eq!(sum.residues(0)[0], 0);
    }

    #[test]
    fn add_matches_big_integer_oracle() {
        let ring = toy_ring(8, &[17, 97, 113]);
        let q = BigInt::from(ring.q().clone());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let a = random_poly(&ring, &mut rng);
            let b = random_poly(&ring, &mut rng);
            let expected: Vec<BigInt> = big_coeffs(&a)
                .iter()
                .zip(big_coeffs(&b))
                .map(|(x, y)| (x + y).mod_floor(&q))
                .collect();
            assert_eq!(big_coeffs(&a.add(&b).unwrap()), expected);
        }
    }

    #[test]
    fn hand_negacyclic_fold() {
        let ring = toy_ring(4, &[17]);
        let x3 = RingPoly::monomial(&ring, 3, 1);
        let x1 = RingPoly::monomial(&ring, 1, 1);
        let prod = x3.mul_schoolbook(&x1).unwrap();
        assert_eq!(prod.residues(0), &[16, 0, 0, 0]);
        assert_eq!(x3.mul(&x1).unwrap(), prod);
    }

    #[test]
    fn multiplicative_identity() {
        let ring = RingParams::with_default_moduli(2048).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_poly(&ring, &mut rng);
        let one = RingPoly::monomial(&ring, 0, 1);
        assert_eq!(a.mul(&one).unwrap(), a);
    }

    #[test]
    fn ntt_equals_schoolbook_small_rings() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for ring in [toy_ring(8, &[17, 97]), toy_ring(16, &[97, 193]), toy_ring(32, &[193])] {
            for _ in 0..1000 {
                let a = random_poly(&ring, &mut rng);
                let b = random_poly(&ring, &mut rng);
                assert_eq!(a.mul(&b).unwrap(), a.mul_schoolbook(&b).unwrap());
            }
        }
    }

    #[test]
    fn ntt_equals_schoolbook_default_rings() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in [1024, 2048, 4096] {
            let ring = RingParams::with_default_moduli(n).unwrap();
            for _ in 0..2 {
                let a = random_poly(&ring, &mut rng);
                let b = random_poly(&ring, &mut rng);
                assert_eq!(a.mul(&b).unwrap(), a.mul_schoolbook(&b).unwrap());
            }
        }
    }

    #[test]
    fn schoolbook_matches_big_integer_convolution() {
        let ring = toy_ring(8, &[17, 97]);
        let q = BigInt::from(ring.q().clone());
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let a = random_poly(&ring, &mut rng);
            let b = random_poly(&ring, &mut rng);
            let expected = big_negacyclic(&big_coeffs(&a), &big_coeffs(&b), &q);
            assert_eq!(big_coeffs(&a.mul_schoolbook(&b).unwrap()), expected);
        }
    }

    #[test]
    fn negacyclic_identity_all_shifts() {
        let ring = toy_ring(16, &[97, 193]);
        for k in 1..16 {
            let p = RingPoly::monomial(&ring, k, 1)
                .mul(&RingPoly::monomial(&ring, 16 - k, 1))
                .unwrap();
            assert_eq!(p, RingPoly::monomial(&ring, 0, -1));
        }
    }

    #[test]
    fn mismatched_rings_rejected() {
        let a = RingPoly::zero(&toy_ring(8, &[17]));
        let b = RingPoly::zero(&toy_ring(8, &[97]));
        assert_eq!(a.add(&b).unwrap_err(), RingError::ParamsMismatch);
        assert_eq!(a.mul(&b).unwrap_err(), RingError::ParamsMismatch);
        assert_eq!(a.mul_schoolbook(&b).unwrap_err(), RingError::ParamsMismatch);
    }

    #[test]
    fn lazy_accumulator_matches_monomial_products() {
        let ring = toy_ring(16, &[97, 193]);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut acc = LazyAccumulator::new(&ring);
        let mut expected = RingPoly::zero(&ring);
        for _ in 0..500 {
            let src = random_poly(&ring, &mut rng);
            let shift = rng.random_range(0..16);
            let negate = rng.random_bool(0.5);
            acc.add_shifted(&src, shift, negate);
            let mono = RingPoly::monomial(&ring, shift, if negate { -1 } else { 1 });
            expected = expected.add(&src.mul_schoolbook(&mono).unwrap()).unwrap();
        }
        assert_eq!(acc.finish(), expected);
    }
}
