//! Client/server protocol for encrypted scoring.
//!
//! The server holds models and parameter sets, never key material. The
//! client keeps the secret key, sends feature ciphertexts and decrypts
//! the returned score ciphertexts.

pub mod catalog;
pub mod client;
pub mod protocol;
pub mod server;
pub mod store;

use thiserror::Error;

pub use catalog::{standard_params, ParamCatalog, DEFAULT_PARAM_SET, FIXTURE_PARAM_SET};
pub use client::{
    decrypt_response, encrypt_query, predictions, Client, DecodedScores, QueryFile, QuerySample,
    SERVER_ENV,
};
pub use protocol::*;
pub use server::{
    bind_address_from_env, Server, ServerConfig, ServerHandle, ServerState, BIND_ENV,
    DEFAULT_BATCH_LIMIT, DEFAULT_BIND,
};
pub use store::{deploy, Manifest, ManifestEntry, ModelStore, MANIFEST_FILE};

use crate::he::HeError;
use crate::model::ModelError;
use crate::quantizer::QuantError;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Frame(#[from] FrameError),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("server error {0}")]
    Remote(ErrorBody),
    #[error(transparent)]
    He(#[from] HeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Quant(#[from] QuantError),
    #[error("model store: {0}")]
    Store(String),
    #[error("integrity probe failed for sample {sample_id} ({detail}); wrong secret key or corrupted response")]
    ProbeMismatch { sample_id: String, detail: String },
    #[error("sample {sample_id}: feature {index} = {value} quantizes beyond the server's bound {bound}")]
    FeatureOutOfRange {
        sample_id: String,
        index: usize,
        value: f64,
        bound: u64,
    },
    #[error("{0}")]
    Client(String),
}
