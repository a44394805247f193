//! Binary integer encoder: bit i of |v| becomes coefficient i, with the
//! sign carried by every set coefficient (t - 1 stands for -1).

use std::sync::Arc;

use super::{EncryptionParams, HeError, PlainPoly};

/// Inputs must satisfy |v| < 2^MAX_ENCODE_BITS.
pub const MAX_ENCODE_BITS: u32 = 62;

pub fn encode_int(value: i64, params: &Arc<EncryptionParams>) -> Result<PlainPoly, HeError> {
    let magnitude = value.unsigned_abs();
    if magnitude >= 1u64 << MAX_ENCODE_BITS {
        return Err(HeError::EncodeOverflow(value as i128));
    }
    let bits = (64 - magnitude.leading_zeros()) as usize;
    let t = params.plain_modulus();
    if bits > params.degree() || (value < 0 && t < 3) {
        return Err(HeError::EncodeOverflow(value as i128));
    }
    let set = if value < 0 { t - 1 } else { 1 };
    let coeffs: Vec<u64> = (0..bits)
        .map(|i| if (magnitude >> i) & 1 == 1 { set } else { 0 })
        .collect();
    PlainPoly::new(params, &coeffs)
}

/// Evaluates the signed-coefficient polynomial at x = 2.
///
/// Correct only while no coefficient has wrapped past t/2; see the
/// decode-safety analysis in the scoring module.
pub fn decode_int(m: &PlainPoly) -> Result<i128, HeError> {
    let mut acc: i128 = 0;
    for (i, c) in m.centered().enumerate() {
        if c == 0 {
            continue;
        }
        let term = if i >= 127 {
            return Err(HeError::DecodeOverflow);
        } else {
            (c as i128)
                .checked_mul(1i128 << i)
                .ok_or(HeError::DecodeOverflow)?
        };
        acc = acc.checked_add(term).ok_or(HeError::DecodeOverflow)?;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params() -> Arc<EncryptionParams> {
        EncryptionParams::with_defaults(1024, 1024).unwrap()
    }

    #[test]
    fn zero_encodes_to_zero_polynomial() {
        assert!(encode_int(0, &params()).unwrap().is_zero());
    }

    #[test]
    fn five_is_one_zero_one() {
        let p = encode_int(5, &params()).unwrap();
        assert_eq!(&p.coeffs()[..4], &[1, 0, 1, 0]);
        assert_eq!(decode_int(&p).unwrap(), 5);
    }

    #[test]
    fn negative_three_uses_t_minus_one() {
        let p = encode_int(-3, &params()).unwrap();
        assert_eq!(&p.coeffs()[..3], &[1023, 1023, 0]);
        assert_eq!(decode_int(&p).unwrap(), -3);
    }

    #[test]
    fn roundtrip_random_values() {
        let params = params();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10_000 {
            let v = rng.random_range(-1_000_000_000i64..=1_000_000_000);
            assert_eq!(decode_int(&encode_int(v, &params).unwrap()).unwrap(), v as i128);
        }
    }

    #[test]
    fn carries_live_in_coefficients() {
        let params = params();
        let sum = encode_int(3, &params)
            .unwrap()
            .add(&encode_int(4, &params).unwrap())
            .unwrap();
        assert_eq!(decode_int(&sum).unwrap(), 7);
        let prod = encode_int(6, &params)
            .unwrap()
            .mul(&encode_int(7, &params).unwrap())
            .unwrap();
        assert_eq!(decode_int(&prod).unwrap(), 42);
    }

    #[test]
    fn overflow_rejected() {
        let params = params();
        assert!(matches!(
            encode_int(1 << 62, &params),
            Err(HeError::EncodeOverflow(_))
        ));
        assert!(encode_int((1 << 62) - 1, &params).is_ok());
        assert!(encode_int(-((1 << 62) - 1), &params).is_ok());
    }

    #[test]
    fn decode_overflow_detected() {
        let params = params();
        let mut coeffs = vec![0u64; 200];
        coeffs[150] = 1;
        let p = PlainPoly::new(&params, &coeffs).unwrap();
        assert_eq!(decode_int(&p).unwrap_err(), HeError::DecodeOverflow);
    }
}
