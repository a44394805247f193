//! Python module `mle`: parameters, keys, ciphertext arithmetic, models,
//! and a client for the scoring server.

use std::sync::{Arc, Mutex};

use mle_core::fixture::{fixture_dataset, fixture_model, FIXTURE_MODEL_ID};
use mle_core::he::{self, EncryptionParams};
use mle_core::model::{self, FeatureTable, LinearModel, QuantizedModel, FEATURE_RANGE};
use mle_core::quantizer::{self, Precision};
use mle_core::scoring::{self, DEFAULT_RHO_MAX};
use mle_core::service::{self as svc, ModelStore, ParamCatalog, ServerConfig, ServerHandle, ServerState};
use mle_core::toy;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyAny, PyDict, PyList};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn json_to_py<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(runtime_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pyclass(frozen, skip_from_py_object, module = "mle")]
#[derive(Clone)]
struct Params(Arc<EncryptionParams>);

#[pymethods]
impl Params {
    #[new]
    fn new(n: usize, t: u64) -> PyResult<Self> {
        EncryptionParams::with_defaults(n, t).map(Self).map_err(value_err)
    }

    #[staticmethod]
    fn standard(param_set_id: &str) -> PyResult<Self> {
        svc::standard_params(param_set_id)
            .map(Self)
            .ok_or_else(|| PyValueError::new_err(format!("unknown parameter set {param_set_id}")))
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.degree()
    }

    #[getter]
    fn t(&self) -> u64 {
        self.0.plain_modulus()
    }

    #[getter]
    fn param_set_id(&self) -> String {
        self.0.param_set_id().to_string()
    }

    fn to_bytes(&self) -> Vec<u8> {
        self.0.to_bytes()
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        EncryptionParams::from_bytes(data).map(Self).map_err(value_err)
    }

    fn __repr__(&self) -> String {
        format!("Params('{}')", self.0.param_set_id())
    }
}

#[pyclass(frozen, module = "mle")]
struct Ciphertext(he::Ciphertext);

#[pymethods]
impl Ciphertext {
    fn __add__(&self, other: &Ciphertext) -> PyResult<Ciphertext> {
        self.0.add(&other.0).map(Ciphertext).map_err(value_err)
    }

    fn add_plain(&self, m: i64) -> PyResult<Ciphertext> {
        let pt = he::encode_int(m, self.0.params()).map_err(value_err)?;
        self.0.add_plain(&pt).map(Ciphertext).map_err(value_err)
    }

    fn mul_plain(&self, m: i64) -> PyResult<Ciphertext> {
        let pt = he::encode_int(m, self.0.params()).map_err(value_err)?;
        self.0.mul_plain(&pt).map(Ciphertext).map_err(value_err)
    }

    fn to_bytes(&self) -> Vec<u8> {
        self.0.to_bytes()
    }

    #[staticmethod]
    fn from_bytes(data: &[u8], params: &Params) -> PyResult<Self> {
        he::Ciphertext::from_bytes(data, &params.0).map(Self).map_err(value_err)
    }
}

#[pyclass(frozen, skip_from_py_object, module = "mle")]
#[derive(Clone)]
struct PublicKey(he::PublicKey);

#[pymethods]
impl PublicKey {
    fn encrypt(&self, m: i64) -> PyResult<Ciphertext> {
        let pt = he::encode_int(m, self.0.params()).map_err(value_err)?;
        self.0.encrypt(&pt, &mut rand::rng()).map(Ciphertext).map_err(runtime_err)
    }

    #[getter]
    fn params(&self) -> Params {
        Params(self.0.params().clone())
    }

    fn to_bytes(&self) -> Vec<u8> {
        self.0.to_bytes()
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        he::PublicKey::from_bytes_self_described(data).map(Self).map_err(value_err)
    }
}

#[pyclass(frozen, skip_from_py_object, module = "mle")]
#[derive(Clone)]
struct SecretKey(he::SecretKey);

#[pymethods]
impl SecretKey {
    fn decrypt(&self, ct: &Ciphertext) -> PyResult<i128> {
        let pt = self.0.decrypt(&ct.0).map_err(value_err)?;
        he::decode_int(&pt).map_err(value_err)
    }

    fn noise_budget(&self, ct: &Ciphertext) -> PyResult<u32> {
        self.0.noise_budget(&ct.0).map(|b| b.bits).map_err(value_err)
    }

    fn to_bytes(&self) -> Vec<u8> {
        self.0.to_bytes()
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        he::SecretKey::from_bytes_self_described(data).map(Self).map_err(value_err)
    }
}

/// Generates a key pair from the OS entropy source, or from `seed` for tests.
#[pyfunction]
#[pyo3(signature = (params, seed=None))]
fn keygen(params: &Params, seed: Option<u64>) -> PyResult<(PublicKey, SecretKey)> {
    let keys = match seed {
        Some(s) => he::KeyPair::generate(&params.0, &mut ChaCha20Rng::seed_from_u64(s)),
        None => he::KeyPair::generate_secure(&params.0).map_err(runtime_err)?,
    };
    Ok((PublicKey(keys.public), SecretKey(keys.secret)))
}

#[pyclass(frozen, skip_from_py_object, module = "mle")]
#[derive(Clone)]
struct Model(LinearModel);

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        LinearModel::load(path).map(Self).map_err(value_err)
    }

    #[staticmethod]
    fn fixture() -> Self {
        Self(fixture_model())
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        LinearModel::from_json(text).map(Self).map_err(value_err)
    }

    fn to_json(&self) -> String {
        self.0.to_json()
    }

    #[getter]
    fn model_id(&self) -> String {
        self.0.model_id.clone()
    }

    #[getter]
    fn class_labels(&self) -> Vec<String> {
        self.0.class_labels.clone()
    }

    #[getter]
    fn num_features(&self) -> usize {
        self.0.num_features()
    }

    #[getter]
    fn precision(&self) -> u32 {
        self.0.d.d()
    }

    fn checksum(&self) -> String {
        self.0.checksum()
    }

    /// Float scores of a raw (not yet preprocessed) feature vector.
    fn score(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        let x = self.0.preprocess.apply(&x).map_err(value_err)?;
        model::score_plain(&self.0, "", &x).map(|s| s.scores).map_err(value_err)
    }

    /// Exact integer scores at the model's precision.
    fn score_int(&self, x: Vec<f64>) -> PyResult<Vec<i128>> {
        let q = QuantizedModel::from_model(&self.0).map_err(value_err)?;
        let x = self.0.preprocess.apply(&x).map_err(value_err)?;
        q.score_int(&q.quantize_features(&x).map_err(value_err)?).map_err(value_err)
    }

    /// Decode-safety report for serving this model under `params`.
    #[pyo3(signature = (params, rho_max=DEFAULT_RHO_MAX))]
    fn safety<'py>(&self, py: Python<'py>, params: &Params, rho_max: u64) -> PyResult<Bound<'py, PyAny>> {
        let q = QuantizedModel::from_model(&self.0).map_err(value_err)?;
        let fb = quantizer::quantize_at(FEATURE_RANGE, self.0.d.d()).map_err(value_err)?.unsigned_abs();
        let report = scoring::check_decode_safety(&q, fb, &params.0, rho_max);
        json_to_py(py, &report)
    }
}

/// A scoring server running on a background thread.
#[pyclass(module = "mle")]
struct Server(Mutex<Option<ServerHandle>>);

#[pymethods]
impl Server {
    #[new]
    #[pyo3(signature = (models_dir=None, bind="127.0.0.1:0"))]
    fn new(models_dir: Option<&str>, bind: &str) -> PyResult<Self> {
        let store = match models_dir {
            Some(dir) => ModelStore::open(dir).map_err(value_err)?,
            None => {
                let mut s = ModelStore::new();
                s.insert(fixture_model());
                s
            }
        };
        let catalog = ParamCatalog::standard().map_err(runtime_err)?;
        let state = ServerState::new(&store, catalog, ServerConfig::default()).map_err(runtime_err)?;
        let server = svc::Server::bind(bind, state).map_err(runtime_err)?;
        Ok(Self(Mutex::new(Some(server.spawn()))))
    }

    #[getter]
    fn address(&self) -> PyResult<String> {
        let guard = self.0.lock().map_err(runtime_err)?;
        guard
            .as_ref()
            .map(|h| h.addr().to_string())
            .ok_or_else(|| PyRuntimeError::new_err("server stopped"))
    }

    fn shutdown(&self) -> PyResult<()> {
        if let Some(h) = self.0.lock().map_err(runtime_err)?.take() {
            h.shutdown();
        }
        Ok(())
    }
}

#[pyclass(frozen, module = "mle")]
struct Client(svc::Client);

#[pymethods]
impl Client {
    /// Connects to `address`, or to $MLE_SERVER when omitted.
    #[new]
    #[pyo3(signature = (address=None))]
    fn new(address: Option<String>) -> Self {
        Self(match address {
            Some(a) => svc::Client::new(a),
            None => svc::Client::from_env(),
        })
    }

    fn params<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json_to_py(py, &self.0.params().map_err(runtime_err)?)
    }

    fn model_info<'py>(&self, py: Python<'py>, model_id: &str) -> PyResult<Bound<'py, PyAny>> {
        json_to_py(py, &self.0.model_info(model_id).map_err(runtime_err)?)
    }

    /// Encrypts `rows`, scores them remotely and decrypts locally. Returns
    /// one dict per row with integer scores and the predicted label.
    #[pyo3(signature = (model_id, public_key, secret_key, rows, blind=false, batch=8))]
    fn classify<'py>(
        &self,
        py: Python<'py>,
        model_id: &str,
        public_key: &PublicKey,
        secret_key: &SecretKey,
        rows: Vec<Vec<f64>>,
        blind: bool,
        batch: usize,
    ) -> PyResult<Bound<'py, PyAny>> {
        let info = self.0.model_info(model_id).map_err(runtime_err)?;
        let table = FeatureTable {
            sample_ids: (0..rows.len()).map(|i| i.to_string()).collect(),
            rows,
        };
        let query = svc::encrypt_query(&info, &public_key.0, &table, blind, &mut rand::rng()).map_err(value_err)?;
        let resp = py
            .detach(|| self.0.predict_query(&query, batch))
            .map_err(runtime_err)?;
        let decoded = svc::decrypt_response(&secret_key.0, &query, &resp).map_err(runtime_err)?;
        let preds = svc::predictions(&info, &decoded, false, None).map_err(runtime_err)?;
        let list = PyList::empty(py);
        for (d, p) in decoded.iter().zip(&preds) {
            let row = PyDict::new(py);
            row.set_item("scores", d.scores.clone())?;
            row.set_item("blinded", d.blinded)?;
            row.set_item("predicted_index", p.predicted_index)?;
            row.set_item("predicted_label", &p.predicted_label)?;
            list.append(row)?;
        }
        Ok(list.into_any())
    }
}

/// The first `count` rows of the fixture dataset as (sample_id, features, label).
#[pyfunction]
fn fixture_samples(count: usize) -> PyResult<Vec<(String, Vec<f64>, usize)>> {
    let data = fixture_dataset().map_err(runtime_err)?;
    Ok(data
        .table
        .sample_ids
        .into_iter()
        .zip(data.table.rows)
        .zip(data.labels)
        .take(count)
        .map(|((id, row), label)| (id, row, label))
        .collect())
}

#[pyfunction]
fn quantize(x: f64, d: u32) -> PyResult<i64> {
    quantizer::quantize(x, Precision::new(d).map_err(value_err)?).map_err(value_err)
}

#[pyfunction]
fn dequantize_score(s: i128, d: u32) -> PyResult<f64> {
    Ok(quantizer::dequantize_score(s, Precision::new(d).map_err(value_err)?))
}

#[pyfunction]
fn toy_walkthrough() -> String {
    toy::walkthrough()
}

#[pymodule]
fn mle(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Params>()?;
    m.add_class::<Ciphertext>()?;
    m.add_class::<PublicKey>()?;
    m.add_class::<SecretKey>()?;
    m.add_class::<Model>()?;
    m.add_class::<Server>()?;
    m.add_class::<Client>()?;
    m.add_function(wrap_pyfunction!(keygen, m)?)?;
    m.add_function(wrap_pyfunction!(fixture_samples, m)?)?;
    m.add_function(wrap_pyfunction!(quantize, m)?)?;
    m.add_function(wrap_pyfunction!(dequantize_score, m)?)?;
    m.add_function(wrap_pyfunction!(toy_walkthrough, m)?)?;
    m.add("FIXTURE_MODEL_ID", FIXTURE_MODEL_ID)?;
    m.add("FIXTURE_PARAM_SET", svc::FIXTURE_PARAM_SET)?;
    Ok(())
}
