//! Linear multiclass model, plaintext scoring oracle, calibration and
//! thresholding.

mod file;
mod quantized;
mod synthetic;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quantizer::{argmax, Precision, QuantError};

pub use file::{
    dataset_checksum, model_checksum, read_features, read_labels, write_features, write_labels,
    FeatureTable, ModelFile, MODEL_FILE_VERSION,
};
pub use quantized::QuantizedModel;
pub use synthetic::{
    generate_synthetic, generate_synthetic_with, Dataset, SyntheticConfig, FEATURE_RANGE,
    SHIFT_RANGE, SCALE_RANGE, WEIGHT_RANGE,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("expected {expected} values, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("scores are blinded; probabilities would be miscalibrated")]
    BlindedScores,
    #[error("threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),
    #[error("{0}")]
    Quant(#[from] QuantError),
    #[error("checksum mismatch: file says {stored}, content hashes to {computed}")]
    Checksum { stored: String, computed: String },
    #[error("unsupported model file version {0}")]
    Version(u32),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("table: {0}")]
    Table(String),
}

/// Per-feature affine map x -> (x - shift) / scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preprocess {
    pub shifts: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Preprocess {
    pub fn new(shifts: Vec<f64>, scales: Vec<f64>) -> Result<Self, ModelError> {
        let pre = Self { shifts, scales };
        pre.validate()?;
        Ok(pre)
    }

    pub fn identity(p: usize) -> Self {
        Self {
            shifts: vec![0.0; p],
            scales: vec![1.0; p],
        }
    }

    /// Standardization statistics (mean, population standard deviation)
    /// of the given rows. Constant columns get scale 1.
    pub fn standardize_from<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, ModelError> {
        let first = rows
            .first()
            .ok_or_else(|| ModelError::Invalid("no rows to standardize".into()))?;
        let p = first.as_ref().len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; p];
        for r in rows {
            let r = r.as_ref();
            check_len(p, r.len())?;
            for (m, &x) in mean.iter_mut().zip(r) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; p];
        for r in rows {
            for ((v, &x), &m) in var.iter_mut().zip(r.as_ref()).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let scales = var
            .into_iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Self::new(mean, scales)
    }

    pub fn len(&self) -> usize {
        self.shifts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shifts.is_empty()
    }

    fn validate(&self) -> Result<(), ModelError> {
        check_len(self.shifts.len(), self.scales.len())?;
        if let Some(s) = self
            .scales
            .iter()
            .find(|s| **s == 0.0 || !s.is_finite())
        {
            return Err(ModelError::Invalid(format!("preprocess scale {s}")));
        }
        if self.shifts.iter().any(|s| !s.is_finite()) {
            return Err(ModelError::Invalid("non-finite preprocess shift".into()));
        }
        Ok(())
    }

    pub fn apply(&self, raw: &[f64]) -> Result<Vec<f64>, ModelError> {
        check_len(self.len(), raw.len())?;
        Ok(raw
            .iter()
            .zip(&self.shifts)
            .zip(&self.scales)
            .map(|((&x, &shift), &scale)| (x - shift) / scale)
            .collect())
    }
}

fn check_len(expected: usize, actual: usize) -> Result<(), ModelError> {
    if expected == actual {
        Ok(())
    } else {
        Err(ModelError::DimensionMismatch { expected, actual })
    }
}

/// s_c = b_c + w_c . x for C classes over p features.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    pub model_id: String,
    pub class_labels: Vec<String>,
    /// C rows of p weights.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
    pub preprocess: Preprocess,
    pub d: Precision,
    pub blinding_enabled: bool,
}

impl LinearModel {
    pub fn new(
        model_id: impl Into<String>,
        class_labels: Vec<String>,
        weights: Vec<Vec<f64>>,
        biases: Vec<f64>,
        preprocess: Preprocess,
        d: Precision,
        blinding_enabled: bool,
    ) -> Result<Self, ModelError> {
        let model = Self {
            model_id: model_id.into(),
            class_labels,
            weights,
            biases,
            preprocess,
            d,
            blinding_enabled,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let c = self.class_labels.len();
        if c < 2 {
            return Err(ModelError::Invalid(format!("need at least 2 classes, got {c}")));
        }
        check_len(c, self.weights.len())?;
        check_len(c, self.biases.len())?;
        let p = self.weights[0].len();
        if p == 0 {
            return Err(ModelError::Invalid("need at least one feature".into()));
        }
        for row in &self.weights {
            check_len(p, row.len())?;
        }
        check_len(p, self.preprocess.len())?;
        self.preprocess.validate()?;
        let finite = self
            .weights
            .iter()
            .flatten()
            .chain(&self.biases)
            .all(|w| w.is_finite());
        if !finite {
            return Err(ModelError::Invalid("non-finite weight or bias".into()));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.class_labels.len()
    }

    pub fn num_features(&self) -> usize {
        self.weights[0].len()
    }

    pub fn max_abs_weight(&self) -> f64 {
        self.weights
            .iter()
            .flatten()
            .fold(0.0, |m, w| m.max(w.abs()))
    }
}

/// Class scores for one sample, possibly multiplied by a blinding factor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub sample_id: String,
    pub scores: Vec<f64>,
    pub blinded: bool,
}

impl AsRef<[f64]> for ScoreVector {
    fn as_ref(&self) -> &[f64] {
        &self.scores
    }
}

/// Decision thresholds. `Binary(tau)` calls class 1 the positive class;
/// `PerClass` picks argmax of p_c - tau_c.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Thresholds {
    Binary(f64),
    PerClass(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub sample_id: String,
    pub probabilities: Option<Vec<f64>>,
    pub predicted_index: usize,
    pub predicted_label: String,
    pub threshold_used: Option<Thresholds>,
}

pub fn apply_preprocess(model: &LinearModel, raw_x: &[f64]) -> Result<Vec<f64>, ModelError> {
    model.preprocess.apply(raw_x)
}

/// Plaintext scores of an already preprocessed feature vector.
pub fn score_plain(
    model: &LinearModel,
    sample_id: &str,
    x: &[f64],
) -> Result<ScoreVector, ModelError> {
    check_len(model.num_features(), x.len())?;
    let scores = model
        .weights
        .iter()
        .zip(&model.biases)
        .map(|(w, b)| b + w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>())
        .collect();
    Ok(ScoreVector {
        sample_id: sample_id.to_string(),
        scores,
        blinded: false,
    })
}

/// Numerically stabilized softmax over all C scores.
pub fn softmax(scores: &ScoreVector) -> Result<Vec<f64>, ModelError> {
    if scores.blinded {
        return Err(ModelError::BlindedScores);
    }
    Ok(softmax_values(&scores.scores))
}

pub(crate) fn softmax_values(s: &[f64]) -> Vec<f64> {
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = s.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Zero-based class index. Without thresholds: argmax, lowest index on
/// ties.
pub fn classify(probabilities: &[f64], thresholds: Option<&Thresholds>) -> Result<usize, ModelError> {
    if probabilities.is_empty() {
        return Err(ModelError::Invalid("no probabilities".into()));
    }
    match thresholds {
        None => Ok(argmax(probabilities).expect("non-empty")),
        Some(Thresholds::Binary(tau)) => {
            check_threshold(*tau)?;
            check_len(2, probabilities.len())?;
            Ok(usize::from(probabilities[1] >= *tau))
        }
        Some(Thresholds::PerClass(taus)) => {
            check_len(probabilities.len(), taus.len())?;
            for &tau in taus {
                check_threshold(tau)?;
            }
            let margins: Vec<f64> = probabilities.iter().zip(taus).map(|(p, t)| p - t).collect();
            Ok(argmax(&margins).expect("non-empty"))
        }
    }
}

fn check_threshold(tau: f64) -> Result<(), ModelError> {
    if (0.0..=1.0).contains(&tau) {
        Ok(())
    } else {
        Err(ModelError::InvalidThreshold(tau))
    }
}

/// Turns a score vector into a prediction. Blinded scores can only be
/// ranked: the label is their argmax and no probabilities are attached.
pub fn predict(
    model: &LinearModel,
    scores: &ScoreVector,
    want_probabilities: bool,
    thresholds: Option<&Thresholds>,
) -> Result<Prediction, ModelError> {
    predict_with_labels(&model.class_labels, scores, want_probabilities, thresholds)
}

/// Client-side variant: only the class labels are needed, not the weights.
pub fn predict_with_labels(
    class_labels: &[String],
    scores: &ScoreVector,
    want_probabilities: bool,
    thresholds: Option<&Thresholds>,
) -> Result<Prediction, ModelError> {
    check_len(class_labels.len(), scores.scores.len())?;
    if scores.scores.is_empty() {
        return Err(ModelError::Invalid("empty score vector".into()));
    }
    let (probabilities, index) = if want_probabilities || thresholds.is_some() {
        let probs = softmax(scores)?;
        let index = classify(&probs, thresholds)?;
        (Some(probs), index)
    } else {
        (None, argmax(&scores.scores).expect("nonempty"))
    };
    Ok(Prediction {
        sample_id: scores.sample_id.clone(),
        probabilities,
        predicted_index: index,
        predicted_label: class_labels[index].clone(),
        threshold_used: thresholds.cloned(),
    })
}
