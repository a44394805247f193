//! Fixed-point conversion: reals are scaled by 10^d and rounded half away
//! from zero. Products of two scaled values carry scale 10^(2d), which is
//! also the scale biases are quantized at.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MIN_PRECISION: u32 = 1;
pub const MAX_PRECISION: u32 = 9;

/// Scaled magnitudes must stay below 2^62.
pub const MAX_QUANTIZED_BITS: u32 = 62;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantError {
    #[error("precision d = {0} outside 1..=9")]
    InvalidPrecision(u32),
    #[error("{value} * 10^{exponent} does not fit below 2^62")]
    Overflow { value: f64, exponent: u32 },
    #[error("non-finite input {0}")]
    NonFinite(f64),
    #[error("score lists differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("sample {index} has {left} vs {right} classes")]
    ClassCountMismatch {
        index: usize,
        left: usize,
        right: usize,
    },
    #[error("no samples to compare")]
    Empty,
}

/// Number of decimal places kept.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct Precision(u32);

impl Precision {
    pub fn new(d: u32) -> Result<Self, QuantError> {
        if (MIN_PRECISION..=MAX_PRECISION).contains(&d) {
            Ok(Self(d))
        } else {
            Err(QuantError::InvalidPrecision(d))
        }
    }

    pub fn d(self) -> u32 {
        self.0
    }

    /// 10^d
    pub fn feature_scale(self) -> i64 {
        10i64.pow(self.0)
    }

    /// 10^(2d)
    pub fn score_scale(self) -> i128 {
        10i128.pow(2 * self.0)
    }

    pub fn all() -> impl Iterator<Item = Precision> {
        (MIN_PRECISION..=MAX_PRECISION).map(Precision)
    }
}

impl TryFrom<u32> for Precision {
    type Error = QuantError;
    fn try_from(d: u32) -> Result<Self, QuantError> {
        Self::new(d)
    }
}

impl From<Precision> for u32 {
    fn from(p: Precision) -> u32 {
        p.0
    }
}

/// round(x * 10^exponent), halves away from zero.
pub fn quantize_at(x: f64, exponent: u32) -> Result<i64, QuantError> {
    if !x.is_finite() {
        return Err(QuantError::NonFinite(x));
    }
    let scaled = (x * 10f64.powi(exponent as i32)).round();
    if scaled.abs() >= (1u64 << MAX_QUANTIZED_BITS) as f64 {
        return Err(QuantError::Overflow { value: x, exponent });
    }
    Ok(scaled as i64)
}

/// Feature or weight at scale 10^d.
pub fn quantize(x: f64, d: Precision) -> Result<i64, QuantError> {
    quantize_at(x, d.0)
}

/// Bias at scale 10^(2d), matching the scale of weight-feature products.
pub fn quantize_bias(x: f64, d: Precision) -> Result<i64, QuantError> {
    quantize_at(x, 2 * d.0)
}

/// s_q / 10^(2d)
pub fn dequantize_score(s_q: i128, d: Precision) -> f64 {
    s_q as f64 / 10f64.powi(2 * d.0 as i32)
}

/// Worst-case |dequantized - float| for one class score with p features,
/// weights bounded by `w_max` and features by `x_max`:
/// (p + 1) (w_max + x_max + 10^-d) 10^-d.
pub fn score_error_bound(p: usize, w_max: f64, x_max: f64, d: Precision) -> f64 {
    let ulp = 10f64.powi(-(d.0 as i32));
    (p as f64 + 1.0) * (w_max + x_max + ulp) * ulp
}

/// Class indices ordered from highest to lowest score; equal scores keep
/// the lower index first.
pub fn ranking<T: PartialOrd>(scores: &[T]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx
}

/// Index of the highest score, lowest index on ties.
pub fn argmax<T: PartialOrd>(scores: &[T]) -> Option<usize> {
    ranking(scores).first().copied()
}

/// Percentage of samples whose full class orderings coincide.
pub fn rank_agreement<A, B, SA, SB>(a: &[SA], b: &[SB]) -> Result<f64, QuantError>
where
    A: PartialOrd,
    B: PartialOrd,
    SA: AsRef<[A]>,
    SB: AsRef<[B]>,
{
    if a.len() != b.len() {
        return Err(QuantError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(QuantError::Empty);
    }
    let mut agree = 0usize;
    for (index, (x, y)) in a.iter().zip(b).enumerate() {
        let (x, y) = (x.as_ref(), y.as_ref());
        if x.len() != y.len() {
            return Err(QuantError::ClassCountMismatch {
                index,
                left: x.len(),
                right: y.len(),
            });
        }
        if ranking(x) == ranking(y) {
            agree += 1;
        }
    }
    Ok(100.0 * agree as f64 / a.len() as f64)
}
