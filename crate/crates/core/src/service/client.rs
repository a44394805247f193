//! Client side: transport, query files, and decryption of responses.

use std::io::{BufReader, BufWriter};
use std::net::TcpStream;
use std::time::Duration;

use rand::{CryptoRng, Rng};
use serde::{Deserialize, Serialize};

use super::protocol::*;
use super::ServiceError;
use crate::he::{decode_int, encode_int, Ciphertext, EncryptionParams, PublicKey, SecretKey};
use crate::model::{predict_with_labels, FeatureTable, Prediction, ScoreVector, Thresholds};
use crate::quantizer::{dequantize_score, quantize};

pub const SERVER_ENV: &str = "MLE_SERVER";
pub const QUERY_FILE_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Client {
    addr: String,
    timeout: Option<Duration>,
    max_frame: u32,
}

impl Client {
    pub fn new(addr: impl Into<String>) -> Self {
        Self {
            addr: addr.into(),
            timeout: Some(Duration::from_secs(600)),
            max_frame: u32::MAX,
        }
    }

    /// Address from `MLE_SERVER`, else the server's default bind address.
    pub fn from_env() -> Self {
        Self::new(
            std::env::var(SERVER_ENV).unwrap_or_else(|_| super::server::DEFAULT_BIND.to_string()),
        )
    }

    pub fn addr(&self) -> &str {
        &self.addr
    }

    /// Sends raw bytes and reads one response frame.
    pub fn exchange_raw(&self, bytes: &[u8]) -> Result<Frame, ServiceError> {
        let stream = TcpStream::connect(&self.addr)?;
        stream.set_read_timeout(self.timeout)?;
        stream.set_write_timeout(self.timeout)?;
        let mut writer = BufWriter::new(stream.try_clone()?);
        std::io::Write::write_all(&mut writer, bytes)?;
        std::io::Write::flush(&mut writer)?;
        drop(writer);
        let mut reader = BufReader::new(stream);
        Ok(read_frame(&mut reader, self.max_frame)?)
    }

    pub fn call(&self, request: &Request) -> Result<Response, ServiceError> {
        let frame = self.exchange_raw(&request.to_frame().to_bytes())?;
        match Response::from_frame(&frame).map_err(ServiceError::Protocol)? {
            Response::Error(body) => Err(ServiceError::Remote(body)),
            r if frame.kind == request.kind() => Ok(r),
            _ => Err(ServiceError::Protocol(format!(
                "response type {:#04x} does not answer request type {:#04x}",
                frame.kind,
                request.kind()
            ))),
        }
    }

    pub fn params(&self) -> Result<Vec<ParamSetDescriptor>, ServiceError> {
        match self.call(&Request::Params(ParamsQuery {}))? {
            Response::Params(r) => Ok(r.param_sets),
            _ => unreachable!("type checked in call"),
        }
    }

    pub fn model_info(&self, model_id: &str) -> Result<ModelInfo, ServiceError> {
        let req = Request::ModelInfo(ModelInfoRequest {
            model_id: model_id.to_string(),
        });
        match self.call(&req)? {
            Response::ModelInfo(r) => Ok(r),
            _ => unreachable!("type checked in call"),
        }
    }

    pub fn predict(&self, request: PredictRequest) -> Result<PredictResponse, ServiceError> {
        match self.call(&Request::Predict(request))? {
            Response::Predict(r) => Ok(r),
            _ => unreachable!("type checked in call"),
        }
    }

    /// Sends the query in batches of at most `batch` samples and joins the
    /// responses in order.
    pub fn predict_query(&self, query: &QueryFile, batch: usize) -> Result<PredictResponse, ServiceError> {
        let mut out = PredictResponse {
            model_id: query.model.model_id.clone(),
            param_set_id: query.param_set_id.clone(),
            blinded: query.model.blinding_enabled || query.want_blinding,
            samples: Vec::with_capacity(query.samples.len()),
            total_seconds: 0.0,
        };
        for (k, chunk) in query.samples.chunks(batch.max(1)).enumerate() {
            let resp = self.predict(query.request_for(chunk))?;
            if k == 0 {
                out.blinded = resp.blinded;
            } else if resp.blinded != out.blinded {
                return Err(ServiceError::Protocol("blinded flag changed between batches".into()));
            }
            out.total_seconds += resp.total_seconds;
            out.samples.extend(resp.samples);
        }
        Ok(out)
    }
}

/// Client-local record of an encrypted query. The probe values stay here;
/// only the ciphertexts go to the server.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryFile {
    pub version: u32,
    pub model: ModelInfo,
    pub param_set_id: String,
    pub want_blinding: bool,
    pub samples: Vec<QuerySample>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuerySample {
    pub sample_id: String,
    pub features: Vec<Blob>,
    pub probe: Blob,
    pub probe_value: i64,
}

impl QueryFile {
    pub fn request(&self) -> PredictRequest {
        self.request_for(&self.samples)
    }

    fn request_for(&self, samples: &[QuerySample]) -> PredictRequest {
        PredictRequest {
            model_id: self.model.model_id.clone(),
            param_set_id: self.param_set_id.clone(),
            want_blinding: self.want_blinding,
            samples: samples
                .iter()
                .map(|s| WireSample {
                    sample_id: s.sample_id.clone(),
                    features: s.features.clone(),
                    probe: Some(s.probe.clone()),
                })
                .collect(),
        }
    }
}

const PROBE_RANGE: i64 = 1 << 30;

/// Preprocesses, quantizes and encrypts every row of `table`.
pub fn encrypt_query<R: CryptoRng + ?Sized>(
    info: &ModelInfo,
    public: &PublicKey,
    table: &FeatureTable,
    want_blinding: bool,
    rng: &mut R,
) -> Result<QueryFile, ServiceError> {
    let params = public.params();
    let id = params.param_set_id();
    let support = info
        .param_sets
        .iter()
        .find(|s| s.param_set_id == id)
        .ok_or_else(|| ServiceError::Client(format!("server does not offer {id} for {}", info.model_id)))?;
    if !support.available {
        return Err(ServiceError::Client(format!(
            "model {} cannot be decoded exactly under {id}; it needs t >= {}",
            info.model_id, support.t_required
        )));
    }
    if (want_blinding || info.blinding_enabled) && !support.blinding_available {
        return Err(ServiceError::Client(format!(
            "blinding is not available for {} under {id}",
            info.model_id
        )));
    }
    if !table.is_empty() && table.num_features() != info.num_features {
        return Err(ServiceError::Client(format!(
            "feature table has {} columns, model expects {}",
            table.num_features(),
            info.num_features
        )));
    }
    let mut samples = Vec::with_capacity(table.len());
    for (sample_id, raw) in table.sample_ids.iter().zip(&table.rows) {
        let x = info.preprocess.apply(raw)?;
        let mut features = Vec::with_capacity(x.len());
        for (j, &v) in x.iter().enumerate() {
            let q = quantize(v, info.d)?;
            if q.unsigned_abs() > info.feature_bound {
                return Err(ServiceError::FeatureOutOfRange {
                    sample_id: sample_id.clone(),
                    index: j,
                    value: v,
                    bound: info.feature_bound,
                });
            }
            features.push(Blob(public.encrypt(&encode_int(q, params)?, rng)?.to_bytes()));
        }
        let probe_value = rng.random_range(-PROBE_RANGE..=PROBE_RANGE);
        let probe = Blob(public.encrypt(&encode_int(probe_value, params)?, rng)?.to_bytes());
        samples.push(QuerySample {
            sample_id: sample_id.clone(),
            features,
            probe,
            probe_value,
        });
    }
    Ok(QueryFile {
        version: QUERY_FILE_VERSION,
        model: info.clone(),
        param_set_id: id.to_string(),
        want_blinding,
        samples,
    })
}

/// Decrypted integer class scores for one sample.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecodedScores {
    pub sample_id: String,
    pub scores: Vec<i128>,
    pub blinded: bool,
}

fn decrypt_blob(sk: &SecretKey, params: &std::sync::Arc<EncryptionParams>, blob: &Blob) -> Result<i128, ServiceError> {
    let ct = Ciphertext::from_bytes(&blob.0, params)?;
    Ok(decode_int(&sk.decrypt(&ct)?)?)
}

/// Checks each sample's probe, then decrypts its scores.
pub fn decrypt_response(
    sk: &SecretKey,
    query: &QueryFile,
    response: &PredictResponse,
) -> Result<Vec<DecodedScores>, ServiceError> {
    let params = sk.params();
    if params.param_set_id() != response.param_set_id || query.param_set_id != response.param_set_id {
        return Err(ServiceError::Client(format!(
            "key is for {}, response for {}",
            params.param_set_id(),
            response.param_set_id
        )));
    }
    if response.samples.len() != query.samples.len() {
        return Err(ServiceError::Client(format!(
            "response has {} samples, query has {}",
            response.samples.len(),
            query.samples.len()
        )));
    }
    let c = query.model.num_classes;
    let mut out = Vec::with_capacity(query.samples.len());
    for (q, r) in query.samples.iter().zip(&response.samples) {
        if q.sample_id != r.sample_id {
            return Err(ServiceError::Client(format!(
                "response sample {:?} does not match query sample {:?}",
                r.sample_id, q.sample_id
            )));
        }
        let probe = r.probe.as_ref().ok_or_else(|| ServiceError::ProbeMismatch {
            sample_id: q.sample_id.clone(),
            detail: "probe missing from response".into(),
        })?;
        match decrypt_blob(sk, params, probe) {
            Ok(v) if v == i128::from(q.probe_value) => {}
            Ok(_) => {
                return Err(ServiceError::ProbeMismatch {
                    sample_id: q.sample_id.clone(),
                    detail: "probe decrypted to a different value".into(),
                })
            }
            Err(e) => {
                return Err(ServiceError::ProbeMismatch {
                    sample_id: q.sample_id.clone(),
                    detail: e.to_string(),
                })
            }
        }
        if r.scores.len() != c {
            return Err(ServiceError::Client(format!(
                "sample {:?}: {} score ciphertexts for {c} classes",
                r.sample_id,
                r.scores.len()
            )));
        }
        let scores = r
            .scores
            .iter()
            .map(|b| decrypt_blob(sk, params, b))
            .collect::<Result<Vec<_>, _>>()?;
        out.push(DecodedScores {
            sample_id: r.sample_id.clone(),
            scores,
            blinded: response.blinded,
        });
    }
    Ok(out)
}

/// Dequantizes, optionally calibrates, and thresholds decoded scores.
pub fn predictions(
    info: &ModelInfo,
    decoded: &[DecodedScores],
    want_probabilities: bool,
    thresholds: Option<&Thresholds>,
) -> Result<Vec<Prediction>, ServiceError> {
    decoded
        .iter()
        .map(|s| {
            let sv = ScoreVector {
                sample_id: s.sample_id.clone(),
                scores: s.scores.iter().map(|&v| dequantize_score(v, info.d)).collect(),
                blinded: s.blinded,
            };
            Ok(predict_with_labels(&info.class_labels, &sv, want_probabilities, thresholds)?)
        })
        .collect()
}
