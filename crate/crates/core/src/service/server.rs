//! Prediction server: one thread and one request per connection.

use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use super::catalog::ParamCatalog;
use super::protocol::*;
use super::store::ModelStore;
use super::ServiceError;
use crate::he::{Ciphertext, EncryptionParams};
use crate::model::{LinearModel, QuantizedModel, FEATURE_RANGE};
use crate::quantizer::quantize_at;
use crate::scoring::{
    EncryptedSample, EncryptedScorer, SafetyReport, ScoringError, ScoringPolicy, DEFAULT_RHO_MAX,
};

pub const DEFAULT_BIND: &str = "127.0.0.1:7341";
pub const BIND_ENV: &str = "MLE_BIND";
pub const DEFAULT_BATCH_LIMIT: usize = 64;

#[derive(Clone, Debug)]
pub struct ServerConfig {
    pub batch_limit: usize,
    pub max_frame: u32,
    /// Leave weights and biases out of model-info responses.
    pub weight_privacy: bool,
    /// Largest |x| after preprocessing that clients may send, in real units.
    pub feature_bound: f64,
    pub rho_max: u64,
    pub io_timeout: Option<Duration>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            batch_limit: DEFAULT_BATCH_LIMIT,
            max_frame: DEFAULT_MAX_FRAME,
            weight_privacy: true,
            feature_bound: FEATURE_RANGE,
            rho_max: DEFAULT_RHO_MAX,
            io_timeout: Some(Duration::from_secs(300)),
        }
    }
}

/// Bind address from `MLE_BIND`, else the default.
pub fn bind_address_from_env() -> String {
    std::env::var(BIND_ENV).unwrap_or_else(|_| DEFAULT_BIND.to_string())
}

#[derive(Debug, Default)]
pub struct Metrics {
    pub requests: AtomicU64,
    pub errors: AtomicU64,
    pub samples_scored: AtomicU64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MetricsSnapshot {
    pub requests: u64,
    pub errors: u64,
    pub samples_scored: u64,
}

enum Support {
    Ready(EncryptedScorer),
    Refused(Box<SafetyReport>),
    Failed(String),
}

struct Deployed {
    model: LinearModel,
    feature_bound: u64,
    by_params: BTreeMap<String, Support>,
}

/// Immutable after construction except for the metrics counters.
pub struct ServerState {
    config: ServerConfig,
    catalog: ParamCatalog,
    models: BTreeMap<String, Deployed>,
    metrics: Metrics,
}

impl ServerState {
    /// Quantizes every model and runs the safety analysis against every
    /// parameter set. Unsafe pairs are kept so requests can be refused
    /// with the report attached.
    pub fn new(
        store: &ModelStore,
        catalog: ParamCatalog,
        config: ServerConfig,
    ) -> Result<Self, ServiceError> {
        let mut models = BTreeMap::new();
        for model in store.iter() {
            let q = QuantizedModel::from_model(model)?;
            let feature_bound = quantize_at(config.feature_bound, model.d.d())?.unsigned_abs();
            let mut by_params = BTreeMap::new();
            for params in catalog.iter() {
                by_params.insert(
                    params.param_set_id().to_string(),
                    build_support(&q, params, feature_bound, config.rho_max),
                );
            }
            models.insert(
                model.model_id.clone(),
                Deployed {
                    model: model.clone(),
                    feature_bound,
                    by_params,
                },
            );
        }
        Ok(Self {
            config,
            catalog,
            models,
            metrics: Metrics::default(),
        })
    }

    pub fn model_ids(&self) -> impl Iterator<Item = &str> {
        self.models.keys().map(String::as_str)
    }

    pub fn metrics(&self) -> MetricsSnapshot {
        MetricsSnapshot {
            requests: self.metrics.requests.load(Ordering::Relaxed),
            errors: self.metrics.errors.load(Ordering::Relaxed),
            samples_scored: self.metrics.samples_scored.load(Ordering::Relaxed),
        }
    }

    pub fn handle(&self, request: Request) -> Response {
        self.metrics.requests.fetch_add(1, Ordering::Relaxed);
        let out = match request {
            Request::Params(_) => Ok(Response::Params(ParamsResponse {
                param_sets: self.catalog.descriptors(),
            })),
            Request::ModelInfo(req) => self.model_info(&req.model_id).map(Response::ModelInfo),
            Request::Predict(req) => self.predict(&req).map(Response::Predict),
        };
        out.unwrap_or_else(|e| {
            self.metrics.errors.fetch_add(1, Ordering::Relaxed);
            Response::Error(e)
        })
    }

    fn deployed(&self, model_id: &str) -> Result<&Deployed, ErrorBody> {
        self.models.get(model_id).ok_or_else(|| {
            ErrorBody::new(ErrorCode::NotFound, format!("unknown model {model_id:?}"))
        })
    }

    fn model_info(&self, model_id: &str) -> Result<ModelInfo, ErrorBody> {
        let dep = self.deployed(model_id)?;
        let m = &dep.model;
        let param_sets = dep
            .by_params
            .iter()
            .map(|(id, s)| match s {
                Support::Ready(scorer) => ParamSupport {
                    param_set_id: id.clone(),
                    available: true,
                    blinding_available: scorer.blinding_available(),
                    t_required: scorer.report().t_required,
                },
                Support::Refused(report) => ParamSupport {
                    param_set_id: id.clone(),
                    available: false,
                    blinding_available: false,
                    t_required: report.t_required,
                },
                Support::Failed(_) => ParamSupport {
                    param_set_id: id.clone(),
                    available: false,
                    blinding_available: false,
                    t_required: 0,
                },
            })
            .collect();
        let private = self.config.weight_privacy;
        Ok(ModelInfo {
            model_id: m.model_id.clone(),
            checksum: m.checksum(),
            class_labels: m.class_labels.clone(),
            num_classes: m.num_classes(),
            num_features: m.num_features(),
            d: m.d,
            preprocess: m.preprocess.clone(),
            blinding_enabled: m.blinding_enabled,
            feature_bound: dep.feature_bound,
            param_sets,
            weights: (!private).then(|| m.weights.clone()),
            biases: (!private).then(|| m.biases.clone()),
        })
    }

    fn predict(&self, req: &PredictRequest) -> Result<PredictResponse, ErrorBody> {
        let started = Instant::now();
        if req.samples.len() > self.config.batch_limit {
            return Err(ErrorBody::new(
                ErrorCode::PayloadTooLarge,
                format!(
                    "batch of {} samples exceeds the limit of {}",
                    req.samples.len(),
                    self.config.batch_limit
                ),
            ));
        }
        let dep = self.deployed(&req.model_id)?;
        let params = self.catalog.get(&req.param_set_id).ok_or_else(|| {
            ErrorBody::new(
                ErrorCode::NotFound,
                format!("unknown parameter set {:?}", req.param_set_id),
            )
        })?;
        let scorer = match dep.by_params.get(&req.param_set_id) {
            Some(Support::Ready(s)) => s,
            Some(Support::Refused(report)) => {
                let mut e = ErrorBody::new(
                    ErrorCode::UnsafeConfiguration,
                    format!(
                        "model {} cannot be decoded exactly under {}: t = {} but t >= {} is required",
                        req.model_id, req.param_set_id, report.plain_modulus, report.t_required
                    ),
                );
                e.safety_report = Some((**report).clone());
                return Err(e);
            }
            Some(Support::Failed(reason)) => {
                return Err(ErrorBody::new(
                    ErrorCode::UnsafeConfiguration,
                    format!("model {} cannot be served under {}: {reason}", req.model_id, req.param_set_id),
                ));
            }
            None => {
                return Err(ErrorBody::new(ErrorCode::Internal, "missing scorer"));
            }
        };
        let blind = dep.model.blinding_enabled || req.want_blinding;
        if blind && !scorer.blinding_available() {
            let mut e = ErrorBody::new(
                ErrorCode::UnsafeConfiguration,
                format!(
                    "blinding is not safe for model {} under {}",
                    req.model_id, req.param_set_id
                ),
            );
            e.safety_report = Some(scorer.report().clone());
            return Err(e);
        }
        let p = dep.model.num_features();
        if let Some(i) = req.samples.iter().position(|s| s.features.len() != p) {
            return Err(ErrorBody::new(
                ErrorCode::Unprocessable,
                format!(
                    "sample {:?} has {} feature ciphertexts, model expects {p}",
                    req.samples[i].sample_id,
                    req.samples[i].features.len()
                ),
            )
            .at_sample(i));
        }

        let mut rng = rand::rng();
        let mut samples = Vec::with_capacity(req.samples.len());
        for (i, wire) in req.samples.iter().enumerate() {
            let t0 = Instant::now();
            let feature_cts = wire
                .features
                .iter()
                .map(|b| decode_ct(b, params, i))
                .collect::<Result<Vec<_>, _>>()?;
            if let Some(probe) = &wire.probe {
                decode_ct(probe, params, i)?;
            }
            let sample = EncryptedSample {
                sample_id: wire.sample_id.clone(),
                feature_cts,
            };
            let mut scores = scorer.score(&sample).map_err(|e| scoring_error(e, i))?;
            if blind {
                let rho = scorer.draw_rho(&mut rng);
                scores = scorer
                    .blind_scores(&scores, rho)
                    .map_err(|e| scoring_error(e, i))?;
            }
            self.metrics.samples_scored.fetch_add(1, Ordering::Relaxed);
            samples.push(WireScores {
                sample_id: wire.sample_id.clone(),
                scores: scores.score_cts.iter().map(|c| Blob(c.to_bytes())).collect(),
                probe: wire.probe.clone(),
                seconds: t0.elapsed().as_secs_f64(),
            });
        }
        Ok(PredictResponse {
            model_id: req.model_id.clone(),
            param_set_id: req.param_set_id.clone(),
            blinded: blind,
            samples,
            total_seconds: started.elapsed().as_secs_f64(),
        })
    }
}

/// Tries the configured blinding range first, then no blinding.
fn build_support(
    q: &QuantizedModel,
    params: &Arc<EncryptionParams>,
    feature_bound: u64,
    rho_max: u64,
) -> Support {
    let tries: &[u64] = if rho_max > 1 { &[rho_max, 1] } else { &[1] };
    let mut last = None;
    for &rho_max in tries {
        let policy = ScoringPolicy {
            feature_bound,
            rho_max,
        };
        match EncryptedScorer::new(q.clone(), params, policy) {
            Ok(s) => return Support::Ready(s),
            Err(ScoringError::Unsafe(report)) => last = Some(report),
            Err(e) => return Support::Failed(e.to_string()),
        }
    }
    Support::Refused(last.expect("at least one attempt"))
}

fn decode_ct(blob: &Blob, params: &Arc<EncryptionParams>, index: usize) -> Result<Ciphertext, ErrorBody> {
    Ciphertext::from_bytes(&blob.0, params).map_err(|e| {
        ErrorBody::new(ErrorCode::BadRequest, format!("bad ciphertext: {e}")).at_sample(index)
    })
}

fn scoring_error(e: ScoringError, index: usize) -> ErrorBody {
    let code = match e {
        ScoringError::DimensionMismatch { .. } => ErrorCode::Unprocessable,
        ScoringError::ParamsMismatch { .. } | ScoringError::He(_) => ErrorCode::BadRequest,
        _ => ErrorCode::Internal,
    };
    ErrorBody::new(code, e.to_string()).at_sample(index)
}

/// Serves one request on an accepted connection.
pub fn serve_connection(state: &ServerState, stream: TcpStream) -> Result<(), ServiceError> {
    stream.set_read_timeout(state.config.io_timeout)?;
    stream.set_write_timeout(state.config.io_timeout)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    let response = match read_frame(&mut reader, state.config.max_frame) {
        Ok(frame) => match Request::from_frame(&frame) {
            Ok(req) => state.handle(req),
            Err(body) => {
                state.metrics.requests.fetch_add(1, Ordering::Relaxed);
                state.metrics.errors.fetch_add(1, Ordering::Relaxed);
                Response::Error(body)
            }
        },
        Err(FrameError::Io(e)) => return Err(e.into()),
        Err(e) => {
            state.metrics.requests.fetch_add(1, Ordering::Relaxed);
            state.metrics.errors.fetch_add(1, Ordering::Relaxed);
            let code = match e {
                FrameError::TooLarge { .. } => ErrorCode::PayloadTooLarge,
                _ => ErrorCode::BadRequest,
            };
            Response::Error(ErrorBody::new(code, e.to_string()))
        }
    };
    write_frame(&mut writer, &response.to_frame())?;
    Ok(())
}

pub struct Server {
    listener: TcpListener,
    state: Arc<ServerState>,
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs, state: ServerState) -> Result<Self, ServiceError> {
        Ok(Self {
            listener: TcpListener::bind(addr)?,
            state: Arc::new(state),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener has an address")
    }

    pub fn state(&self) -> &Arc<ServerState> {
        &self.state
    }

    /// Accepts connections until the process exits.
    pub fn run(self) -> Result<(), ServiceError> {
        self.accept_loop(&AtomicBool::new(false))
    }

    fn accept_loop(&self, stop: &AtomicBool) -> Result<(), ServiceError> {
        for stream in self.listener.incoming() {
            if stop.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = stream else { continue };
            let state = self.state.clone();
            std::thread::spawn(move || {
                let _ = serve_connection(&state, stream);
            });
        }
        Ok(())
    }

    /// Runs the accept loop on a background thread.
    pub fn spawn(self) -> ServerHandle {
        let addr = self.local_addr();
        let state = self.state.clone();
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let join = std::thread::spawn(move || {
            let _ = self.accept_loop(&flag);
        });
        ServerHandle {
            addr,
            state,
            stop,
            join: Some(join),
        }
    }
}

pub struct ServerHandle {
    addr: SocketAddr,
    state: Arc<ServerState>,
    stop: Arc<AtomicBool>,
    join: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn metrics(&self) -> MetricsSnapshot {
        self.state.metrics()
    }

    pub fn shutdown(mut self) {
        self.stop_and_join();
    }

    fn stop_and_join(&mut self) {
        if let Some(join) = self.join.take() {
            self.stop.store(true, Ordering::SeqCst);
            // Wake the blocking accept.
            let _ = TcpStream::connect(self.addr);
            let _ = join.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop_and_join();
    }
}
