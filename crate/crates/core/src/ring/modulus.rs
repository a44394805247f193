//! Word-sized prime moduli: Barrett and Shoup multiplication, primality
//! testing and NTT-friendly prime search.

/// Largest supported modulus bit length. Keeps lazy sums and Shoup
/// products inside 64-bit words.
pub const MAX_MODULUS_BITS: u32 = 62;

/// A prime modulus with precomputed Barrett constants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Modulus {
    value: u64,
    // floor(2^128 / value), split into 64-bit halves.
    barrett_hi: u64,
    barrett_lo: u64,
}

impl Modulus {
    /// Panics if `value < 2` or `value >= 2^62`.
    pub fn new(value: u64) -> Self {
        assert!(value >= 2, "modulus must be at least 2");
        assert!(
            value < (1u64 << MAX_MODULUS_BITS),
            "modulus must be below 2^{MAX_MODULUS_BITS}"
        );
        // floor((2^128 - 1) / q) equals floor(2^128 / q) unless q divides
        // 2^128, which only happens for powers of two.
        let mut ratio = u128::MAX / value as u128;
        if value.is_power_of_two() {
            ratio += 1;
        }
        Self {
            value,
            barrett_hi: (ratio >> 64) as u64,
            barrett_lo: ratio as u64,
        }
    }

    #[inline]
    pub fn value(&self) -> u64 {
        self.value
    }

    pub fn bits(&self) -> u32 {
        64 - self.value.leading_zeros()
    }

    /// Reduces any `x < 2^128`.
    #[inline]
    pub fn reduce_u128(&self, x: u128) -> u64 {
        self.div_rem_u128(x).1
    }

    /// Floor quotient and remainder of `x` by the modulus, without a
    /// hardware 128-bit division.
    #[inline]
    pub fn div_rem_u128(&self, x: u128) -> (u128, u64) {
        let x_lo = x as u64 as u128;
        let x_hi = x >> 64;
        let r_lo = self.barrett_lo as u128;
        let r_hi = self.barrett_hi as u128;

        let lo_lo = (x_lo * r_lo) >> 64;
        let lo_hi = x_lo * r_hi;
        let hi_lo = x_hi * r_lo;
        let hi_hi = x_hi * r_hi;
        let mid = lo_lo + (lo_hi as u64 as u128) + (hi_lo as u64 as u128);
        let mut quotient = hi_hi + (lo_hi >> 64) + (hi_lo >> 64) + (mid >> 64);

        let q = self.value as u128;
        let mut r = x.wrapping_sub(quotient.wrapping_mul(q));
        while r >= q {
            r -= q;
            quotient += 1;
        }
        (quotient, r as u64)
    }

    #[inline]
    pub fn reduce(&self, x: u64) -> u64 {
        if x < self.value {
            x
        } else {
            x % self.value
        }
    }

    /// Maps a signed integer into `[0, value)`.
    #[inline]
    pub fn reduce_i64(&self, x: i64) -> u64 {
        if x >= 0 {
            self.reduce(x as u64)
        } else {
            self.neg(self.reduce(x.unsigned_abs()))
        }
    }

    #[inline]
    pub fn add(&self, a: u64, b: u64) -> u64 {
        debug_assert!(a < self.value && b < self.value);
        let s = a + b;
        if s >= self.value {
            s - self.value
        } else {
            s
        }
    }

    #[inline]
    pub fn sub(&self, a: u64, b: u64) -> u64 {
        debug_assert!(a < self.value && b < self.value);
        if a >= b {
            a - b
        } else {
            a + self.value - b
        }
    }

    #[inline]
    pub fn neg(&self, a: u64) -> u64 {
        debug_assert!(a < self.value);
        if a == 0 {
            0
        } else {
            self.value - a
        }
    }

    #[inline]
    pub fn mul(&self, a: u64, b: u64) -> u64 {
        self.reduce_u128(a as u128 * b as u128)
    }

    /// Shoup companion of a fixed multiplicand: floor(w * 2^64 / q).
    #[inline]
    pub fn shoup(&self, w: u64) -> u64 {
        debug_assert!(w < self.value);
        (((w as u128) << 64) / self.value as u128) as u64
    }

    #[inline]
    pub fn mul_shoup(&self, a: u64, w: u64, w_shoup: u64) -> u64 {
        let hi = ((a as u128 * w_shoup as u128) >> 64) as u64;
        let r = a.wrapping_mul(w).wrapping_sub(hi.wrapping_mul(self.value));
        if r >= self.value {
            r - self.value
        } else {
            r
        }
    }

    pub fn pow(&self, mut base: u64, mut exp: u64) -> u64 {
        base = self.reduce(base);
        let mut acc = 1 % self.value;
        while exp > 0 {
            if exp & 1 == 1 {
                acc = self.mul(acc, base);
            }
            base = self.mul(base, base);
            exp >>= 1;
        }
        acc
    }

    /// Inverse modulo a prime modulus via Fermat. `None` for zero.
    pub fn inv(&self, a: u64) -> Option<u64> {
        let a = self.reduce(a);
        if a == 0 {
            return None;
        }
        Some(self.pow(a, self.value - 2))
    }
}

fn mul_mod_u64(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

fn pow_mod_u64(mut base: u64, mut exp: u64, m: u64) -> u64 {
    let mut acc = 1 % m;
    base %= m;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul_mod_u64(acc, base, m);
        }
        base = mul_mod_u64(base, base, m);
        exp >>= 1;
    }
    acc
}

/// Deterministic Miller-Rabin, exact for every 64-bit input.
pub fn is_prime(n: u64) -> bool {
    const BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    if n < 2 {
        return false;
    }
    for &p in &BASES {
        if n % p == 0 {
            return n == p;
        }
    }
    let s = (n - 1).trailing_zeros();
    let d = (n - 1) >> s;
    'witness: for &a in &BASES {
        let mut x = pow_mod_u64(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul_mod_u64(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Largest prime with exactly `bits` bits that is congruent to 1 modulo
/// `2 * degree` and not contained in `exclude`.
pub fn ntt_prime(bits: u32, degree: usize, exclude: &[u64]) -> Option<u64> {
    if !(2..=MAX_MODULUS_BITS).contains(&bits) {
        return None;
    }
    let step = 2 * degree as u64;
    let upper = 1u64 << bits;
    let lower = 1u64 << (bits - 1);
    let mut candidate = ((upper - 1) / step) * step + 1;
    if candidate >= upper {
        candidate -= step;
    }
    while candidate > lower {
        if is_prime(candidate) && !exclude.contains(&candidate) {
            return Some(candidate);
        }
        candidate = candidate.checked_sub(step)?;
    }
    None
}

/// Primitive `2 * degree`-th root of unity modulo a prime `q ≡ 1 (mod 2n)`.
pub fn primitive_root_2n(modulus: &Modulus, degree: usize) -> Option<u64> {
    let q = modulus.value();
    let order = 2 * degree as u64;
    if (q - 1) % order != 0 {
        return None;
    }
    let cofactor = (q - 1) / order;
    // g^cofactor has order exactly 2n iff its n-th power is -1.
    for g in 2..q.min(10_000) {
        let psi = modulus.pow(g, cofactor);
        if modulus.pow(psi, degree as u64) == q - 1 {
            return Some(psi);
        }
    }
    None
}
