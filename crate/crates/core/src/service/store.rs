//! Model directory with a manifest.
//!
//! ```text
//! models/
//!   manifest.json    {"models": [{"model_id", "file", "checksum"}]}
//!   <model_id>.json
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ServiceError;
use crate::model::LinearModel;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Manifest {
    pub models: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub model_id: String,
    pub file: String,
    pub checksum: String,
}

#[derive(Clone, Debug, Default)]
pub struct ModelStore {
    models: BTreeMap<String, LinearModel>,
}

impl ModelStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, model: LinearModel) {
        self.models.insert(model.model_id.clone(), model);
    }

    pub fn get(&self, model_id: &str) -> Option<&LinearModel> {
        self.models.get(model_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &LinearModel> {
        self.models.values()
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    /// Loads every model listed in the manifest and checks each file's
    /// checksum against the manifest entry.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, ServiceError> {
        let dir = dir.as_ref();
        let manifest = read_manifest(dir)?;
        let mut store = Self::new();
        for entry in manifest.models {
            let model = LinearModel::load(dir.join(&entry.file))?;
            if model.model_id != entry.model_id {
                return Err(ServiceError::Store(format!(
                    "{} holds model {:?}, manifest says {:?}",
                    entry.file, model.model_id, entry.model_id
                )));
            }
            let sum = model.checksum();
            if sum != entry.checksum {
                return Err(ServiceError::Store(format!(
                    "{}: checksum {sum} does not match manifest {}",
                    entry.file, entry.checksum
                )));
            }
            store.insert(model);
        }
        Ok(store)
    }
}

fn read_manifest(dir: &Path) -> Result<Manifest, ServiceError> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Ok(Manifest::default());
    }
    let text = fs::read_to_string(&path)?;
    serde_json::from_str(&text)
        .map_err(|e| ServiceError::Store(format!("{}: {e}", path.display())))
}

fn file_name_for(model_id: &str) -> String {
    let safe: String = model_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{safe}.json")
}

/// Writes the model file and adds or replaces its manifest entry.
pub fn deploy(dir: impl AsRef<Path>, model: &LinearModel) -> Result<PathBuf, ServiceError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut manifest = read_manifest(dir)?;
    let file = file_name_for(&model.model_id);
    let path = dir.join(&file);
    model.save(&path)?;
    manifest.models.retain(|e| e.model_id != model.model_id);
    manifest.models.push(ManifestEntry {
        model_id: model.model_id.clone(),
        file,
        checksum: model.checksum(),
    });
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(dir.join(MANIFEST_FILE), text + "\n")?;
    Ok(path)
}
