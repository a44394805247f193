use super::{check_len, LinearModel, ModelError};
use crate::quantizer::{quantize, quantize_bias, Precision};

/// Integer model: weights at scale 10^d, biases at 10^(2d).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantizedModel {
    pub model_id: String,
    pub d: Precision,
    pub weights: Vec<Vec<i64>>,
    pub biases: Vec<i64>,
}

impl QuantizedModel {
    pub fn from_model(model: &LinearModel) -> Result<Self, ModelError> {
        Self::at_precision(model, model.d)
    }

    /// Quantizes at a precision other than the model's own.
    pub fn at_precision(model: &LinearModel, d: Precision) -> Result<Self, ModelError> {
        let weights = model
            .weights
            .iter()
            .map(|row| row.iter().map(|&w| quantize(w, d)).collect())
            .collect::<Result<Vec<Vec<i64>>, _>>()?;
        let biases = model
            .biases
            .iter()
            .map(|&b| quantize_bias(b, d))
            .collect::<Result<Vec<i64>, _>>()?;
        Ok(Self {
            model_id: model.model_id.clone(),
            d,
            weights,
            biases,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.weights.len()
    }

    pub fn num_features(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    /// Preprocessed features at scale 10^d.
    pub fn quantize_features(&self, x: &[f64]) -> Result<Vec<i64>, ModelError> {
        check_len(self.num_features(), x.len())?;
        Ok(x.iter()
            .map(|&v| quantize(v, self.d))
            .collect::<Result<Vec<_>, _>>()?)
    }

    /// Integer oracle: b_q + sum_j w_qj x_qj per class, at scale 10^(2d).
    pub fn score_int(&self, x_q: &[i64]) -> Result<Vec<i128>, ModelError> {
        check_len(self.num_features(), x_q.len())?;
        Ok(self
            .weights
            .iter()
            .zip(&self.biases)
            .map(|(w, &b)| {
                b as i128
                    + w.iter()
                        .zip(x_q)
                        .map(|(&w, &x)| w as i128 * x as i128)
                        .sum::<i128>()
            })
            .collect())
    }

    pub fn max_abs_weight(&self) -> u64 {
        self.weights
            .iter()
            .flatten()
            .map(|w| w.unsigned_abs())
            .max()
            .unwrap_or(0)
    }
}
