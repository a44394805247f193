//! Seeded synthetic models and datasets.
//!
//! Weights and biases are uniform in [-1, 1]. Each feature has a shift
//! uniform in [-5, 5] and a scale uniform in [0.5, 2]; raw values are
//! shift + scale * z with z uniform in [-10, 10], so preprocessed features
//! lie in [-10, 10]. Labels are the model's argmax, optionally replaced by
//! a uniformly random class with probability `label_noise`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::{score_plain, FeatureTable, LinearModel, ModelError, Preprocess};
use crate::quantizer::{argmax, Precision};

pub const WEIGHT_RANGE: f64 = 1.0;
pub const FEATURE_RANGE: f64 = 10.0;
pub const SHIFT_RANGE: f64 = 5.0;
pub const SCALE_RANGE: (f64, f64) = (0.5, 2.0);

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub features: usize,
    pub samples: usize,
    pub seed: u64,
    pub label_noise: f64,
    pub d: Precision,
    pub blinding_enabled: bool,
}

impl SyntheticConfig {
    pub fn new(classes: usize, features: usize, samples: usize, seed: u64) -> Self {
        Self {
            classes,
            features,
            samples,
            seed,
            label_noise: 0.0,
            d: Precision::new(4).expect("valid"),
            blinding_enabled: false,
        }
    }
}

/// Raw (not preprocessed) features with ground-truth labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub table: FeatureTable,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn checksum(&self) -> String {
        super::dataset_checksum(&self.table, &self.labels)
    }
}

pub fn generate_synthetic(
    classes: usize,
    features: usize,
    samples: usize,
    seed: u64,
) -> Result<(Dataset, LinearModel), ModelError> {
    generate_synthetic_with(&SyntheticConfig::new(classes, features, samples, seed))
}

pub fn generate_synthetic_with(cfg: &SyntheticConfig) -> Result<(Dataset, LinearModel), ModelError> {
    if cfg.classes < 2 || cfg.features < 1 {
        return Err(ModelError::Invalid(format!(
            "need C >= 2 and p >= 1, got C={} p={}",
            cfg.classes, cfg.features
        )));
    }
    if !(0.0..=1.0).contains(&cfg.label_noise) {
        return Err(ModelError::Invalid(format!(
            "label noise {} outside [0, 1]",
            cfg.label_noise
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    // Separate stream so the noise rate does not change the features.
    let mut noise_rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    noise_rng.set_stream(1);
    let (c, p) = (cfg.classes, cfg.features);

    let weights: Vec<Vec<f64>> = (0..c)
        .map(|_| {
            (0..p)
                .map(|_| rng.random_range(-WEIGHT_RANGE..=WEIGHT_RANGE))
                .collect()
        })
        .collect();
    let biases: Vec<f64> = (0..c)
        .map(|_| rng.random_range(-WEIGHT_RANGE..=WEIGHT_RANGE))
        .collect();
    let shifts: Vec<f64> = (0..p)
        .map(|_| rng.random_range(-SHIFT_RANGE..=SHIFT_RANGE))
        .collect();
    let scales: Vec<f64> = (0..p)
        .map(|_| rng.random_range(SCALE_RANGE.0..=SCALE_RANGE.1))
        .collect();
    let model = LinearModel::new(
        format!("synthetic-c{c}-p{p}-s{}", cfg.seed),
        (0..c).map(|k| format!("class_{k:02}")).collect(),
        weights,
        biases,
        Preprocess::new(shifts, scales)?,
        cfg.d,
        cfg.blinding_enabled,
    )?;

    let width = cfg.samples.max(1).to_string().len().max(5);
    let mut table = FeatureTable {
        sample_ids: Vec::with_capacity(cfg.samples),
        rows: Vec::with_capacity(cfg.samples),
    };
    let mut labels = Vec::with_capacity(cfg.samples);
    for i in 0..cfg.samples {
        let raw: Vec<f64> = model
            .preprocess
            .shifts
            .iter()
            .zip(&model.preprocess.scales)
            .map(|(&shift, &scale)| {
                shift + scale * rng.random_range(-FEATURE_RANGE..=FEATURE_RANGE)
            })
            .collect();
        let id = format!("s{i:0width$}");
        let x = model.preprocess.apply(&raw)?;
        let mut label = argmax(&score_plain(&model, &id, &x)?.scores).expect("C >= 2");
        if cfg.label_noise > 0.0 && noise_rng.random_bool(cfg.label_noise) {
            label = noise_rng.random_range(0..c);
        }
        table.sample_ids.push(id);
        table.rows.push(raw);
        labels.push(label);
    }
    Ok((Dataset { table, labels }, model))
}
