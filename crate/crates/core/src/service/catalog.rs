//! Parameter sets a server advertises.

use std::sync::Arc;

use super::protocol::ParamSetDescriptor;
use crate::he::{EncryptionParams, HeError};

/// The best-timing row of the parameter table (n = 2048, t = 1024).
pub const DEFAULT_PARAM_SET: &str = "bfv-n2048-t1024";
/// Large enough t for the 22-class, 500-feature fixture at d = 4 with
/// blinding up to 2^16.
pub const FIXTURE_PARAM_SET: &str = "bfv-n2048-t262144";

const CATALOG: &[(usize, u64, &str)] = &[
    (2048, 1024, "fastest row; small t, fits narrow models only"),
    (2048, 1 << 18, "default for the 22-class fixture at d = 4"),
    (4096, 1 << 18, "more noise headroom, about 3x the per-op cost of n = 2048"),
    (8192, 1 << 18, "largest set; slowest"),
];

#[derive(Clone, Debug)]
pub struct ParamCatalog {
    entries: Vec<(Arc<EncryptionParams>, String)>,
}

impl ParamCatalog {
    pub fn standard() -> Result<Self, HeError> {
        let entries = CATALOG
            .iter()
            .map(|&(n, t, note)| Ok((EncryptionParams::with_defaults(n, t)?, note.to_string())))
            .collect::<Result<Vec<_>, HeError>>()?;
        Ok(Self { entries })
    }

    pub fn from_params(params: Vec<(Arc<EncryptionParams>, String)>) -> Self {
        Self { entries: params }
    }

    pub fn get(&self, id: &str) -> Option<&Arc<EncryptionParams>> {
        self.entries
            .iter()
            .find(|(p, _)| p.param_set_id() == id)
            .map(|(p, _)| p)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<EncryptionParams>> {
        self.entries.iter().map(|(p, _)| p)
    }

    pub fn descriptors(&self) -> Vec<ParamSetDescriptor> {
        self.entries
            .iter()
            .map(|(p, note)| describe(p, note))
            .collect()
    }
}

pub fn describe(params: &EncryptionParams, note: &str) -> ParamSetDescriptor {
    ParamSetDescriptor {
        param_set_id: params.param_set_id().to_string(),
        n: params.degree(),
        t: params.plain_modulus(),
        total_q_bits: params.ring().q().bits(),
        note: note.to_string(),
    }
}

/// Parameters for a catalog id, for clients that have not queried a server.
pub fn standard_params(id: &str) -> Option<Arc<EncryptionParams>> {
    ParamCatalog::standard().ok()?.get(id).cloned()
}
