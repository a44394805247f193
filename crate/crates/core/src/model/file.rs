//! Model file (JSON) and feature table (CSV) formats.
//!
//! The model checksum is SHA-256 over a binary canonical form, so that
//! writers in other languages agree on it regardless of how they print
//! floating-point numbers:
//!
//! ```text
//! "MLEMODEL" | version u32 | model_id | C u32 | C labels | p u32 | d u32
//! | blinding u8 | p shifts | p scales | C biases | C*p weights (class-major)
//! ```
//!
//! Integers are little-endian, strings are a u32 byte length followed by
//! UTF-8, reals are IEEE-754 f64 bit patterns, little-endian.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{LinearModel, ModelError, Preprocess};
use crate::quantizer::Precision;

pub const MODEL_FILE_VERSION: u32 = 1;

/// On-disk layout. Fields are declared in alphabetical order so the
/// serialized keys come out sorted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub biases: Vec<f64>,
    pub blinding_enabled: bool,
    pub checksum: String,
    pub class_labels: Vec<String>,
    pub d: u32,
    pub model_id: String,
    pub p: usize,
    pub preprocess: Preprocess,
    pub version: u32,
    pub weights: Vec<Vec<f64>>,
}

struct Canonical {
    buf: Vec<u8>,
}

impl Canonical {
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }

    fn reals(&mut self, xs: &[f64]) {
        for x in xs {
            self.buf.extend_from_slice(&x.to_bits().to_le_bytes());
        }
    }

    fn digest(self) -> String {
        hex::encode(Sha256::digest(&self.buf))
    }
}

pub fn model_checksum(model: &LinearModel) -> String {
    let mut c = Canonical {
        buf: b"MLEMODEL".to_vec(),
    };
    c.u32(MODEL_FILE_VERSION);
    c.str(&model.model_id);
    c.u32(model.class_labels.len() as u32);
    for label in &model.class_labels {
        c.str(label);
    }
    c.u32(model.num_features() as u32);
    c.u32(model.d.d());
    c.buf.push(model.blinding_enabled as u8);
    c.reals(&model.preprocess.shifts);
    c.reals(&model.preprocess.scales);
    c.reals(&model.biases);
    for row in &model.weights {
        c.reals(row);
    }
    c.digest()
}

/// SHA-256 over "MLEDATA1" | n u32 | p u32 | per sample: id, p reals,
/// label u32.
pub fn dataset_checksum(table: &FeatureTable, labels: &[usize]) -> String {
    let mut c = Canonical {
        buf: b"MLEDATA1".to_vec(),
    };
    c.u32(table.rows.len() as u32);
    c.u32(table.num_features() as u32);
    for ((id, row), &label) in table.sample_ids.iter().zip(&table.rows).zip(labels) {
        c.str(id);
        c.reals(row);
        c.u32(label as u32);
    }
    c.digest()
}

impl ModelFile {
    pub fn from_model(model: &LinearModel) -> Self {
        Self {
            biases: model.biases.clone(),
            blinding_enabled: model.blinding_enabled,
            checksum: model_checksum(model),
            class_labels: model.class_labels.clone(),
            d: model.d.d(),
            model_id: model.model_id.clone(),
            p: model.num_features(),
            preprocess: model.preprocess.clone(),
            version: MODEL_FILE_VERSION,
            weights: model.weights.clone(),
        }
    }

    /// Validates version, shape and checksum.
    pub fn into_model(self) -> Result<LinearModel, ModelError> {
        if self.version != MODEL_FILE_VERSION {
            return Err(ModelError::Version(self.version));
        }
        let model = LinearModel::new(
            self.model_id,
            self.class_labels,
            self.weights,
            self.biases,
            self.preprocess,
            Precision::new(self.d)?,
            self.blinding_enabled,
        )?;
        if model.num_features() != self.p {
            return Err(ModelError::DimensionMismatch {
                expected: self.p,
                actual: model.num_features(),
            });
        }
        let computed = model_checksum(&model);
        if computed != self.checksum {
            return Err(ModelError::Checksum {
                stored: self.checksum,
                computed,
            });
        }
        Ok(model)
    }
}

impl LinearModel {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&ModelFile::from_model(self))
            .expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        serde_json::from_str::<ModelFile>(text)?.into_model()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn checksum(&self) -> String {
        model_checksum(self)
    }
}

/// Rows of `sample_id, f1..fp`.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct FeatureTable {
    pub sample_ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl FeatureTable {
    pub fn num_features(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

pub fn read_features<R: Read>(reader: R) -> Result<FeatureTable, ModelError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let width = rdr.headers()?.len();
    if width < 2 {
        return Err(ModelError::Table(
            "header must name sample_id and at least one feature".into(),
        ));
    }
    let mut table = FeatureTable {
        sample_ids: Vec::new(),
        rows: Vec::new(),
    };
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        let mut fields = record.iter();
        let id = fields.next().unwrap_or_default().to_string();
        let row = fields
            .map(|f| {
                f.trim().parse::<f64>().map_err(|e| {
                    ModelError::Table(format!("row {}: bad value {f:?}: {e}", line + 1))
                })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        table.sample_ids.push(id);
        table.rows.push(row);
    }
    Ok(table)
}

pub fn write_features<W: Write>(writer: W, table: &FeatureTable) -> Result<(), ModelError> {
    let mut wtr = csv::Writer::from_writer(writer);
    let p = table.num_features();
    let mut header = vec!["sample_id".to_string()];
    header.extend((1..=p).map(|j| format!("f{j}")));
    wtr.write_record(&header)?;
    for (id, row) in table.sample_ids.iter().zip(&table.rows) {
        let mut rec = vec![id.clone()];
        // `{}` on f64 prints the shortest representation that parses back
        // to the same value.
        rec.extend(row.iter().map(|x| format!("{x}")));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Labels as `sample_id,label` rows, label being a zero-based class index.
pub fn write_labels<W: Write>(
    writer: W,
    sample_ids: &[String],
    labels: &[usize],
) -> Result<(), ModelError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["sample_id", "label"])?;
    for (id, label) in sample_ids.iter().zip(labels) {
        wtr.write_record([id.as_str(), &label.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_labels<R: Read>(reader: R) -> Result<Vec<(String, usize)>, ModelError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let label = record
            .get(1)
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| ModelError::Table(format!("bad label row {record:?}")))?;
        out.push((record.get(0).unwrap_or_default().to_string(), label));
    }
    Ok(out)
}
