//! Framed wire protocol.
//!
//! ```text
//! length u32be | type u8 | payload
//! ```
//!
//! `length` counts the type byte and the payload. Payloads are JSON with
//! binary fields (serialized ciphertexts) base64 encoded. Requests and
//! responses share the type byte; 0x7F marks an error response.

use std::io::{self, Read, Write};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::model::Preprocess;
use crate::quantizer::Precision;
use crate::scoring::SafetyReport;

pub const MSG_PARAMS: u8 = 0x01;
pub const MSG_MODEL_INFO: u8 = 0x02;
pub const MSG_PREDICT: u8 = 0x03;
pub const MSG_ERROR: u8 = 0x7F;

/// Default cap on a single frame (type byte plus payload).
pub const DEFAULT_MAX_FRAME: u32 = 1 << 30;

#[derive(Debug, thiserror::Error)]
pub enum FrameError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("frame of {len} bytes exceeds the {max} byte limit")]
    TooLarge { len: u32, max: u32 },
    #[error("empty frame")]
    Empty,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub kind: u8,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(5 + self.payload.len());
        out.extend_from_slice(&(self.payload.len() as u32 + 1).to_be_bytes());
        out.push(self.kind);
        out.extend_from_slice(&self.payload);
        out
    }
}

pub fn write_frame<W: Write>(w: &mut W, frame: &Frame) -> io::Result<()> {
    w.write_all(&(frame.payload.len() as u32 + 1).to_be_bytes())?;
    w.write_all(&[frame.kind])?;
    w.write_all(&frame.payload)?;
    w.flush()
}

/// Reads one frame. The length is checked before any payload is read.
pub fn read_frame<R: Read>(r: &mut R, max: u32) -> Result<Frame, FrameError> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_be_bytes(len);
    if len == 0 {
        return Err(FrameError::Empty);
    }
    if len > max {
        return Err(FrameError::TooLarge { len, max });
    }
    let mut kind = [0u8; 1];
    r.read_exact(&mut kind)?;
    let mut payload = vec![0u8; len as usize - 1];
    r.read_exact(&mut payload)?;
    Ok(Frame {
        kind: kind[0],
        payload,
    })
}

/// Bytes carried as a base64 string.
#[derive(Clone, PartialEq, Eq, Default)]
pub struct Blob(pub Vec<u8>);

impl std::fmt::Debug for Blob {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Blob({} bytes)", self.0.len())
    }
}

impl Serialize for Blob {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(&self.0))
    }
}

impl<'de> Deserialize<'de> for Blob {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = <std::borrow::Cow<'de, str>>::deserialize(d)?;
        STANDARD
            .decode(text.as_bytes())
            .map(Blob)
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamSetDescriptor {
    pub param_set_id: String,
    pub n: usize,
    pub t: u64,
    pub total_q_bits: u64,
    pub note: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ParamsQuery {}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsResponse {
    pub param_sets: Vec<ParamSetDescriptor>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelInfoRequest {
    pub model_id: String,
}

/// Whether a model can be served under one parameter set.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamSupport {
    pub param_set_id: String,
    pub available: bool,
    pub blinding_available: bool,
    pub t_required: u128,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelInfo {
    pub model_id: String,
    pub checksum: String,
    pub class_labels: Vec<String>,
    pub num_classes: usize,
    pub num_features: usize,
    pub d: Precision,
    pub preprocess: Preprocess,
    pub blinding_enabled: bool,
    /// Largest |x_q| the server's safety analysis covers.
    pub feature_bound: u64,
    pub param_sets: Vec<ParamSupport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub biases: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireSample {
    pub sample_id: String,
    pub features: Vec<Blob>,
    /// Extra ciphertext echoed back untouched; lets the client detect a
    /// wrong key or a corrupted response.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<Blob>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictRequest {
    pub model_id: String,
    pub param_set_id: String,
    pub want_blinding: bool,
    pub samples: Vec<WireSample>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireScores {
    pub sample_id: String,
    pub scores: Vec<Blob>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<Blob>,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictResponse {
    pub model_id: String,
    pub param_set_id: String,
    pub blinded: bool,
    pub samples: Vec<WireScores>,
    pub total_seconds: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadRequest,
    NotFound,
    Unprocessable,
    PayloadTooLarge,
    UnsafeConfiguration,
    Internal,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorBody {
    pub code: ErrorCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub safety_report: Option<SafetyReport>,
}

impl ErrorBody {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            sample_index: None,
            safety_report: None,
        }
    }

    pub fn at_sample(mut self, index: usize) -> Self {
        self.sample_index = Some(index);
        self
    }
}

impl std::fmt::Display for ErrorBody {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let code = serde_json::to_value(self.code).expect("enum serializes");
        write!(f, "{}: {}", code.as_str().unwrap_or("error"), self.message)?;
        if let Some(i) = self.sample_index {
            write!(f, " (sample {i})")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Request {
    Params(ParamsQuery),
    ModelInfo(ModelInfoRequest),
    Predict(PredictRequest),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Response {
    Params(ParamsResponse),
    ModelInfo(ModelInfo),
    Predict(PredictResponse),
    Error(ErrorBody),
}

fn to_frame<T: Serialize>(kind: u8, body: &T) -> Frame {
    Frame {
        kind,
        payload: serde_json::to_vec(body).expect("protocol types serialize"),
    }
}

fn parse<T: DeserializeOwned>(payload: &[u8]) -> Result<T, ErrorBody> {
    serde_json::from_slice(payload)
        .map_err(|e| ErrorBody::new(ErrorCode::BadRequest, format!("malformed payload: {e}")))
}

impl Request {
    pub fn kind(&self) -> u8 {
        match self {
            Self::Params(_) => MSG_PARAMS,
            Self::ModelInfo(_) => MSG_MODEL_INFO,
            Self::Predict(_) => MSG_PREDICT,
        }
    }

    pub fn to_frame(&self) -> Frame {
        match self {
            Self::Params(b) => to_frame(MSG_PARAMS, b),
            Self::ModelInfo(b) => to_frame(MSG_MODEL_INFO, b),
            Self::Predict(b) => to_frame(MSG_PREDICT, b),
        }
    }

    /// Errors come back as the body the server should send.
    pub fn from_frame(frame: &Frame) -> Result<Self, ErrorBody> {
        match frame.kind {
            MSG_PARAMS => parse(&frame.payload).map(Self::Params),
            MSG_MODEL_INFO => parse(&frame.payload).map(Self::ModelInfo),
            MSG_PREDICT => parse(&frame.payload).map(Self::Predict),
            other => Err(ErrorBody::new(
                ErrorCode::BadRequest,
                format!("unknown message type {other:#04x}"),
            )),
        }
    }
}

impl Response {
    pub fn to_frame(&self) -> Frame {
        match self {
            Self::Params(b) => to_frame(MSG_PARAMS, b),
            Self::ModelInfo(b) => to_frame(MSG_MODEL_INFO, b),
            Self::Predict(b) => to_frame(MSG_PREDICT, b),
            Self::Error(b) => to_frame(MSG_ERROR, b),
        }
    }

    pub fn from_frame(frame: &Frame) -> Result<Self, String> {
        let fail = |e: ErrorBody| e.message;
        match frame.kind {
            MSG_PARAMS => parse(&frame.payload).map(Self::Params).map_err(fail),
            MSG_MODEL_INFO => parse(&frame.payload).map(Self::ModelInfo).map_err(fail),
            MSG_PREDICT => parse(&frame.payload).map(Self::Predict).map_err(fail),
            MSG_ERROR => parse(&frame.payload).map(Self::Error).map_err(fail),
            other => Err(format!("unknown message type {other:#04x}")),
        }
    }
}
