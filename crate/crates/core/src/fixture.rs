//! The checked-in synthetic model (C = 22, p = 500, d = 4) and its
//! 2000-sample dataset, regenerated from the seed and pinned by checksum.

use crate::model::{generate_synthetic, Dataset, LinearModel, ModelError};

pub const FIXTURE_SEED: u64 = 5599;
pub const FIXTURE_CLASSES: usize = 22;
pub const FIXTURE_FEATURES: usize = 500;
pub const FIXTURE_SAMPLES: usize = 2000;
pub const FIXTURE_MODEL_ID: &str = "fixture-c22-p500";

pub const FIXTURE_MODEL_JSON: &str = include_str!("../fixtures/fixture_model.json");
pub const FIXTURE_MODEL_CHECKSUM: &str =
    "dde77035a5d70eb9522e11c1e27fc0369a9905c50b7229d472fe97c6c4b9a390";
pub const FIXTURE_DATASET_CHECKSUM: &str =
    "7f3e0aeb363755c17547da25b4a8a598709767639e511528369595eaed557062";

pub fn fixture_model() -> LinearModel {
    LinearModel::from_json(FIXTURE_MODEL_JSON).expect("checked-in fixture model is valid")
}

/// Regenerates the dataset and checks it against the pinned checksum.
pub fn fixture_dataset() -> Result<Dataset, ModelError> {
    let (data, _) = generate_synthetic(
        FIXTURE_CLASSES,
        FIXTURE_FEATURES,
        FIXTURE_SAMPLES,
        FIXTURE_SEED,
    )?;
    let sum = data.checksum();
    if sum != FIXTURE_DATASET_CHECKSUM {
        return Err(ModelError::Checksum {
            stored: FIXTURE_DATASET_CHECKSUM.into(),
            computed: sum,
        });
    }
    Ok(data)
}
