//! Server-side encrypted scoring: s_c = b_c + sum_j w_cj x_j with
//! encrypted x and plaintext integer weights, optional blinding by a
//! shared random factor, and the plaintext-overflow analysis that decides
//! whether a (model, parameters, feature bound) triple decodes exactly.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::he::{
    decode_int, encode_int, Ciphertext, EncryptionParams, HeError, KeyPair, PlainPoly,
    ProductAccumulator, PublicKey, SecretKey,
};
use crate::model::QuantizedModel;

/// Default upper end of the blinding factor range [2, 2^16].
pub const DEFAULT_RHO_MAX: u64 = 1 << 16;
/// A dry run must leave at least this many bits of noise budget.
pub const NOISE_MARGIN_BITS: u32 = 3;

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error(transparent)]
    He(#[from] HeError),
    #[error("sample {sample_id}: expected {expected} feature ciphertexts, got {actual}")]
    DimensionMismatch {
        sample_id: String,
        expected: usize,
        actual: usize,
    },
    #[error("ciphertext parameters {found} differ from the scorer's {expected}")]
    ParamsMismatch { expected: String, found: String },
    #[error("configuration cannot be decoded exactly: {0:?}")]
    Unsafe(Box<SafetyReport>),
    #[error("blinding factor must be positive")]
    ZeroRho,
    #[error("blinding factor {rho} exceeds the checked maximum {max}")]
    RhoTooLarge { rho: u64, max: u64 },
    #[error("score vector is already blinded")]
    AlreadyBlinded,
}

/// One ciphertext per quantized, encoded feature.
#[derive(Clone, Debug)]
pub struct EncryptedSample {
    pub sample_id: String,
    pub feature_cts: Vec<Ciphertext>,
}

#[derive(Clone, Debug)]
pub struct EncryptedScoreVector {
    pub sample_id: String,
    pub score_cts: Vec<Ciphertext>,
    pub blinded: bool,
}

/// Outcome of the decode-safety analysis.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SafetyReport {
    /// Upper bound on any signed plaintext coefficient of any class score.
    pub max_coeff_bound: u128,
    /// Smallest plaintext modulus with max_coeff_bound < t / 2.
    pub t_required: u128,
    pub plain_modulus: u64,
    pub safe: bool,
    pub noise_ok: bool,
    /// Budget left after the dry run.
    pub dry_run_budget_bits: u32,
    pub worst_class: usize,
    pub feature_bound: u64,
    pub rho_max: u64,
}

impl SafetyReport {
    pub fn acceptable(&self) -> bool {
        self.safe && self.noise_ok
    }
}

/// Bit length; bits(0) = 0.
pub fn bits(v: u64) -> u32 {
    64 - v.leading_zeros()
}

/// Per-class coefficient bounds before blinding:
/// sum_j min(bits|w_cj|, bits(feature_bound)) + bits|b_c|.
///
/// Encoded values have at most bits(v) nonzero coefficients, all of one
/// sign and magnitude 1, so every coefficient of a product is at most
/// min(bits(w), bits(x)), also after negacyclic folding. Multiplying by
/// an encoded rho scales the bound by at most bits(rho).
pub fn class_coefficient_bounds(model: &QuantizedModel, feature_bound: u64) -> Vec<u128> {
    let fb = bits(feature_bound);
    model
        .weights
        .iter()
        .zip(&model.biases)
        .map(|(row, &b)| {
            row.iter()
                .map(|w| u128::from(bits(w.unsigned_abs()).min(fb)))
                .sum::<u128>()
                + u128::from(bits(b.unsigned_abs()))
        })
        .collect()
}

/// Bound on every plaintext coefficient of a (possibly blinded) score and
/// the class attaining it. `rho_max` = 1 means no blinding.
pub fn coefficient_bound(model: &QuantizedModel, feature_bound: u64, rho_max: u64) -> (u128, usize) {
    let per_class = class_coefficient_bounds(model, feature_bound);
    let (worst, &bound) = per_class
        .iter()
        .enumerate()
        .max_by_key(|&(i, b)| (*b, std::cmp::Reverse(i)))
        .unwrap_or((0, &0));
    (bound * u128::from(bits(rho_max.max(1))), worst)
}

/// Checks that scores decode without coefficient wraparound and that a
/// worst-case dry run on a throwaway key keeps a noise margin.
pub fn check_decode_safety(
    model: &QuantizedModel,
    feature_bound: u64,
    params: &Arc<EncryptionParams>,
    rho_max: u64,
) -> SafetyReport {
    let (max_coeff_bound, worst_class) = coefficient_bound(model, feature_bound, rho_max);
    let t = params.plain_modulus();
    let t_required = 2 * max_coeff_bound + 1;
    let safe = max_coeff_bound.saturating_mul(2) < u128::from(t);
    let dry_run_budget_bits = dry_run_budget(model, feature_bound, params, rho_max).unwrap_or(0);
    SafetyReport {
        max_coeff_bound,
        t_required,
        plain_modulus: t,
        safe,
        noise_ok: dry_run_budget_bits >= NOISE_MARGIN_BITS,
        dry_run_budget_bits,
        worst_class,
        feature_bound,
        rho_max,
    }
}

fn popcount_l1(v: i64) -> u32 {
    v.unsigned_abs().count_ones()
}

/// Scores one synthetic sample at the noise-heaviest class under a
/// throwaway key and returns the remaining budget.
fn dry_run_budget(
    model: &QuantizedModel,
    feature_bound: u64,
    params: &Arc<EncryptionParams>,
    rho_max: u64,
) -> Result<u32, HeError> {
    let heavy = model
        .weights
        .iter()
        .enumerate()
        .max_by_key(|(i, row)| (row.iter().map(|&w| popcount_l1(w)).sum::<u32>(), std::cmp::Reverse(*i)))
        .map_or(0, |(i, _)| i);
    // The key is discarded after the run; a fixed seed keeps the report
    // reproducible.
    let mut rng = ChaCha20Rng::seed_from_u64(0x6472_7972_756e);
    let keys = KeyPair::generate(params, &mut rng);
    let x = encode_int(feature_bound.min(i64::MAX as u64) as i64, params)?;
    let mut acc = ProductAccumulator::new(params);
    for &w in &model.weights[heavy] {
        if w == 0 {
            continue;
        }
        let ct = keys.public.encrypt(&x, &mut rng)?;
        acc.add_product_terms(&ct, &centered_terms(&encode_int(w, params)?));
    }
    let mut ct = acc.finish().add_plain(&encode_int(model.biases[heavy], params)?)?;
    let rho_bits = bits(rho_max.max(1));
    if rho_max > 1 {
        // All-ones rho of the maximal length: the heaviest multiplier.
        let ones = (1u64 << rho_bits) - 1;
        ct = ct.mul_plain(&encode_int(ones as i64, params)?)?;
    }
    Ok(keys.secret.noise_budget(&ct)?.bits)
}

fn centered_terms(p: &PlainPoly) -> Vec<(usize, i64)> {
    p.centered()
        .enumerate()
        .filter(|&(_, c)| c != 0)
        .collect()
}

/// Decode-safety settings a scorer is checked against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoringPolicy {
    /// Largest |x_q| a client may send.
    pub feature_bound: u64,
    /// Largest blinding factor; 1 disables blinding.
    pub rho_max: u64,
}

/// A quantized model bound to one parameter set, verified safe.
pub struct EncryptedScorer {
    params: Arc<EncryptionParams>,
    model: QuantizedModel,
    // Per class, per feature: centred nonzero coefficients of encode(w).
    terms: Vec<Vec<Vec<(usize, i64)>>>,
    biases: Vec<PlainPoly>,
    policy: ScoringPolicy,
    report: SafetyReport,
}

impl std::fmt::Debug for EncryptedScorer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EncryptedScorer")
            .field("model_id", &self.model.model_id)
            .field("params", &self.params.param_set_id())
            .field("report", &self.report)
            .finish_non_exhaustive()
    }
}

impl EncryptedScorer {
    /// Runs the safety analysis once and refuses unsafe configurations.
    pub fn new(
        model: QuantizedModel,
        params: &Arc<EncryptionParams>,
        policy: ScoringPolicy,
    ) -> Result<Self, ScoringError> {
        let report = check_decode_safety(&model, policy.feature_bound, params, policy.rho_max);
        if !report.acceptable() {
            return Err(ScoringError::Unsafe(Box::new(report)));
        }
        Self::build(model, params, policy, report)
    }

    #[cfg(test)]
    pub(crate) fn new_unchecked(
        model: QuantizedModel,
        params: &Arc<EncryptionParams>,
        policy: ScoringPolicy,
    ) -> Result<Self, ScoringError> {
        let report = check_decode_safety(&model, policy.feature_bound, params, policy.rho_max);
        Self::build(model, params, policy, report)
    }

    fn build(
        model: QuantizedModel,
        params: &Arc<EncryptionParams>,
        policy: ScoringPolicy,
        report: SafetyReport,
    ) -> Result<Self, ScoringError> {
        let terms = model
            .weights
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&w| Ok(centered_terms(&encode_int(w, params)?)))
                    .collect::<Result<Vec<_>, HeError>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        let biases = model
            .biases
            .iter()
            .map(|&b| encode_int(b, params))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            params: params.clone(),
            model,
            terms,
            biases,
            policy,
            report,
        })
    }

    pub fn params(&self) -> &Arc<EncryptionParams> {
        &self.params
    }

    pub fn model(&self) -> &QuantizedModel {
        &self.model
    }

    pub fn policy(&self) -> ScoringPolicy {
        self.policy
    }

    pub fn report(&self) -> &SafetyReport {
        &self.report
    }

    /// Unblinded class scores. Zero weights contribute no term.
    pub fn score(&self, sample: &EncryptedSample) -> Result<EncryptedScoreVector, ScoringError> {
        let p = self.model.num_features();
        if sample.feature_cts.len() != p {
            return Err(ScoringError::DimensionMismatch {
                sample_id: sample.sample_id.clone(),
                expected: p,
                actual: sample.feature_cts.len(),
            });
        }
        for ct in &sample.feature_cts {
            if **ct.params() != *self.params {
                return Err(ScoringError::ParamsMismatch {
                    expected: self.params.param_set_id().to_string(),
                    found: ct.params_id().to_string(),
                });
            }
        }
        let score_cts = self
            .terms
            .iter()
            .zip(&self.biases)
            .map(|(class_terms, bias)| {
                let mut acc = ProductAccumulator::new(&self.params);
                for (ct, terms) in sample.feature_cts.iter().zip(class_terms) {
                    if !terms.is_empty() {
                        acc.add_product_terms(ct, terms);
                    }
                }
                acc.finish().add_plain(bias)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(EncryptedScoreVector {
            sample_id: sample.sample_id.clone(),
            score_cts,
            blinded: false,
        })
    }

    /// Multiplies every score by encode(rho); rho must lie in the range
    /// the safety analysis covered.
    pub fn blind_scores(
        &self,
        scores: &EncryptedScoreVector,
        rho: u64,
    ) -> Result<EncryptedScoreVector, ScoringError> {
        if rho == 0 {
            return Err(ScoringError::ZeroRho);
        }
        if rho > self.policy.rho_max {
            return Err(ScoringError::RhoTooLarge {
                rho,
                max: self.policy.rho_max,
            });
        }
        if scores.blinded {
            return Err(ScoringError::AlreadyBlinded);
        }
        let factor = encode_int(rho as i64, &self.params)?;
        let score_cts = scores
            .score_cts
            .iter()
            .map(|ct| ct.mul_plain(&factor))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(EncryptedScoreVector {
            sample_id: scores.sample_id.clone(),
            score_cts,
            blinded: true,
        })
    }

    /// Uniform rho in [2, rho_max].
    pub fn draw_rho<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        rng.random_range(2..=self.policy.rho_max.max(2))
    }

    pub fn blinding_available(&self) -> bool {
        self.policy.rho_max >= 2
    }
}

/// Client side: decrypt and decode each class score.
pub fn decrypt_scores(
    sk: &SecretKey,
    scores: &EncryptedScoreVector,
) -> Result<Vec<i128>, HeError> {
    scores
        .score_cts
        .iter()
        .map(|ct| decode_int(&sk.decrypt(ct)?))
        .collect()
}

/// Client side: encode and encrypt quantized features.
pub fn encrypt_sample<R: rand::CryptoRng + ?Sized>(
    public: &PublicKey,
    sample_id: &str,
    x_q: &[i64],
    rng: &mut R,
) -> Result<EncryptedSample, HeError> {
    let params = public.params();
    let feature_cts = x_q
        .iter()
        .map(|&x| public.encrypt(&encode_int(x, params)?, rng))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EncryptedSample {
        sample_id: sample_id.to_string(),
        feature_cts,
    })
}
