//! Micro-benchmarks, the batch timing model T = N C ((p+1)(E+M+A)+D),
//! and the parameter and precision sweeps.

use std::fmt::Write as _;
use std::ops::{Add, Mul};
use std::sync::Arc;
use std::time::Instant;

use num_traits::One;
use rand::{CryptoRng, Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use thiserror::Error;

use crate::he::{decode_int, encode_int, Ciphertext, EncryptionParams, HeError, KeyPair, PlainPoly};
use crate::model::{apply_preprocess, score_plain, Dataset, LinearModel, ModelError, QuantizedModel};
use crate::quantizer::{argmax, ranking, Precision};

pub const MIN_REPS: usize = 30;
/// Operand magnitudes of the 22-class fixture at d = 4.
pub const BENCH_FEATURE_BOUND: i64 = 100_000;
pub const BENCH_WEIGHT_BOUND: i64 = 10_000;
const WARMUP: usize = 3;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("need at least {min} repetitions, got {reps}")]
    TooFewReps { reps: usize, min: usize },
    #[error(transparent)]
    He(#[from] HeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0}")]
    Invalid(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OpStat {
    /// Seconds.
    pub mean: f64,
    pub std_dev: f64,
    pub samples: usize,
}

impl OpStat {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len().max(1) as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std_dev: var.sqrt(),
            samples: xs.len(),
        }
    }
}

/// Mean encryption (E), plaintext multiplication (M), ciphertext addition
/// (A) and decryption (D) times.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OpTimings {
    pub param_set_id: String,
    pub encrypt: OpStat,
    pub mul_plain: OpStat,
    pub add: OpStat,
    pub decrypt: OpStat,
}

impl OpTimings {
    pub fn e(&self) -> f64 {
        self.encrypt.mean
    }
    pub fn m(&self) -> f64 {
        self.mul_plain.mean
    }
    pub fn a(&self) -> f64 {
        self.add.mean
    }
    pub fn d(&self) -> f64 {
        self.decrypt.mean
    }
}

fn nonzero<R: Rng + ?Sized>(rng: &mut R, bound: i64) -> i64 {
    loop {
        let v = rng.random_range(-bound..=bound);
        if v != 0 {
            return v;
        }
    }
}

fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

/// Times each primitive `reps` times on fixture-sized operands after a
/// short warm-up. Decryption includes decoding.
pub fn micro_bench<R: CryptoRng + ?Sized>(
    params: &Arc<EncryptionParams>,
    reps: usize,
    rng: &mut R,
) -> Result<OpTimings, BenchError> {
    if reps < MIN_REPS {
        return Err(BenchError::TooFewReps { reps, min: MIN_REPS });
    }
    let keys = KeyPair::generate(params, rng);
    let mut samples = [vec![], vec![], vec![], vec![]];
    let mut acc = keys
        .public
        .encrypt(&encode_int(nonzero(rng, BENCH_FEATURE_BOUND), params)?, rng)?;
    for i in 0..WARMUP + reps {
        let x = encode_int(nonzero(rng, BENCH_FEATURE_BOUND), params)?;
        let w = encode_int(nonzero(rng, BENCH_WEIGHT_BOUND), params)?;

        let t = Instant::now();
        let ct = keys.public.encrypt(&x, rng)?;
        let e = secs(t);
        let t = Instant::now();
        let prod = ct.mul_plain(&w)?;
        let m = secs(t);
        let t = Instant::now();
        acc.add_assign(&prod)?;
        let a = secs(t);
        let t = Instant::now();
        std::hint::black_box(decode_int(&keys.secret.decrypt(&prod)?)?);
        let d = secs(t);
        if i >= WARMUP {
            for (s, v) in samples.iter_mut().zip([e, m, a, d]) {
                s.push(v);
            }
        }
    }
    std::hint::black_box(&acc);
    Ok(OpTimings {
        param_set_id: params.param_set_id().to_string(),
        encrypt: OpStat::from_samples(&samples[0]),
        mul_plain: OpStat::from_samples(&samples[1]),
        add: OpStat::from_samples(&samples[2]),
        decrypt: OpStat::from_samples(&samples[3]),
    })
}

/// N C ((p+1)(E+M+A) + D) over any numeric type.
pub fn timing_model<T>(e: T, m: T, a: T, d: T, n: T, c: T, p: T) -> T
where
    T: Copy + Add<Output = T> + Mul<Output = T> + One,
{
    n * c * ((p + T::one()) * (e + m + a) + d)
}

/// Predicted seconds for N samples, C classes and p features.
pub fn predict_total_time(t: &OpTimings, n: usize, c: usize, p: usize) -> f64 {
    timing_model(t.e(), t.m(), t.a(), t.d(), n as f64, c as f64, p as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BatchRun {
    pub samples: usize,
    pub classes: usize,
    pub features: usize,
    /// Wall time of the homomorphic operations, encoding excluded.
    pub seconds: f64,
    /// Class scores that decoded to something other than the integer oracle.
    pub mismatches: usize,
}

/// Runs the operation sequence the timing model counts: for every sample
/// and class, p+1 encryptions (the features and a constant 1 for the bias),
/// p+1 plaintext multiplications and additions, and one decryption.
/// Zero weights skip their multiplication and addition.
pub fn formula_batch<R: CryptoRng + ?Sized>(
    params: &Arc<EncryptionParams>,
    model: &QuantizedModel,
    samples: &[Vec<i64>],
    rng: &mut R,
) -> Result<BatchRun, BenchError> {
    let keys = KeyPair::generate(params, rng);
    let p = model.num_features();
    let weights: Vec<Vec<Option<PlainPoly>>> = model
        .weights
        .iter()
        .zip(&model.biases)
        .map(|(row, &b)| {
            row.iter()
                .chain(std::iter::once(&b))
                .map(|&w| (w != 0).then(|| encode_int(w, params)).transpose())
                .collect()
        })
        .collect::<Result<_, _>>()?;
    let mut seconds = 0.0;
    let mut mismatches = 0;
    for x in samples {
        if x.len() != p {
            return Err(BenchError::Invalid(format!("sample has {} features, model {p}", x.len())));
        }
        let encoded = x
            .iter()
            .chain(std::iter::once(&1))
            .map(|&v| encode_int(v, params))
            .collect::<Result<Vec<_>, _>>()?;
        let expected = model.score_int(x)?;
        let t = Instant::now();
        let mut got = Vec::with_capacity(model.num_classes());
        for class_w in &weights {
            let mut acc: Option<Ciphertext> = None;
            for (xj, wj) in encoded.iter().zip(class_w) {
                let ct = keys.public.encrypt(xj, rng)?;
                let Some(wj) = wj else { continue };
                let prod = ct.mul_plain(wj)?;
                match &mut acc {
                    Some(a) => a.add_assign(&prod)?,
                    None => acc = Some(prod),
                }
            }
            got.push(match acc {
                Some(a) => decode_int(&keys.secret.decrypt(&a)?)?,
                None => 0,
            });
        }
        seconds += secs(t);
        mismatches += got.iter().zip(&expected).filter(|(a, b)| a != b).count();
    }
    Ok(BatchRun {
        samples: samples.len(),
        classes: model.num_classes(),
        features: p,
        seconds,
        mismatches,
    })
}

/// A formula batch split into chunks, each preceded by its own
/// micro-benchmark, so slow drift in machine speed hits both sides.
#[derive(Clone, Debug, Serialize)]
pub struct TimingCheck {
    pub timings: Vec<OpTimings>,
    pub runs: Vec<BatchRun>,
    /// Sum over chunks of the model evaluated at that chunk's timings.
    pub predicted: f64,
    pub measured: f64,
}

impl TimingCheck {
    pub fn ratio(&self) -> f64 {
        self.measured / self.predicted
    }

    pub fn mismatches(&self) -> usize {
        self.runs.iter().map(|r| r.mismatches).sum()
    }

    pub fn samples(&self) -> usize {
        self.runs.iter().map(|r| r.samples).sum()
    }

    /// Chunk-averaged (E, M, A, D).
    pub fn mean_ops(&self) -> [f64; 4] {
        let k = self.timings.len().max(1) as f64;
        let mut out = [0.0; 4];
        for t in &self.timings {
            for (o, v) in out.iter_mut().zip([t.e(), t.m(), t.a(), t.d()]) {
                *o += v / k;
            }
        }
        out
    }
}

pub fn timing_check<R: CryptoRng + ?Sized>(
    params: &Arc<EncryptionParams>,
    model: &QuantizedModel,
    samples: &[Vec<i64>],
    chunks: usize,
    reps: usize,
    rng: &mut R,
) -> Result<TimingCheck, BenchError> {
    if samples.is_empty() || chunks == 0 {
        return Err(BenchError::Invalid("need at least one sample and one chunk".into()));
    }
    let size = samples.len().div_ceil(chunks);
    let mut out = TimingCheck {
        timings: vec![],
        runs: vec![],
        predicted: 0.0,
        measured: 0.0,
    };
    for chunk in samples.chunks(size) {
        let t = micro_bench(params, reps, rng)?;
        let run = formula_batch(params, model, chunk, rng)?;
        out.predicted += predict_total_time(&t, run.samples, run.classes, run.features);
        out.measured += run.seconds;
        out.timings.push(t);
        out.runs.push(run);
    }
    Ok(out)
}

/// Reference (n, t) rows for the parameter sweep, in order.
pub const SWEEP_ROWS: [(usize, u64); 8] = [
    (8192, 2048),
    (2048, 1024),
    (1024, 512),
    (1024, 1024),
    (2048, 1024),
    (2048, 512),
    (2048, 1499),
    (2048, 786433),
];

/// One class score over `features` fresh ciphertexts: each multiplied by a
/// nonzero plaintext weight, all summed, plus a plaintext bias. Without
/// `multiply` the chain is additions only.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Workload {
    pub features: usize,
    pub multiply: bool,
    pub feature_bound: i64,
    pub weight_bound: i64,
    pub seed: u64,
}

impl Workload {
    /// A 5599-feature scoring chain.
    pub fn scoring(seed: u64) -> Self {
        Self {
            features: 5599,
            multiply: true,
            feature_bound: BENCH_FEATURE_BOUND,
            weight_bound: BENCH_WEIGHT_BOUND,
            seed,
        }
    }

    /// A single ciphertext addition.
    pub fn trivial(seed: u64) -> Self {
        Self {
            features: 2,
            multiply: false,
            feature_bound: BENCH_FEATURE_BOUND,
            weight_bound: BENCH_WEIGHT_BOUND,
            seed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum RowStatus {
    Ok,
    NoiseExhausted,
}

impl RowStatus {
    pub fn label(self) -> &'static str {
        match self {
            Self::Ok => "OK",
            Self::NoiseExhausted => "NOISE-EXHAUSTED",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub index: usize,
    pub n: usize,
    pub t: u64,
    pub status: RowStatus,
    /// Workload wall time.
    pub seconds: f64,
    pub budget_bits: u32,
    pub timings: OpTimings,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepReport {
    pub workload: Workload,
    pub rows: Vec<SweepRow>,
}

fn run_workload(params: &Arc<EncryptionParams>, w: &Workload) -> Result<(f64, u32), BenchError> {
    let mut rng = ChaCha20Rng::seed_from_u64(w.seed);
    let keys = KeyPair::generate(params, &mut rng);
    let bias = encode_int(nonzero(&mut rng, w.weight_bound), params)?;
    let start = Instant::now();
    let mut acc: Option<Ciphertext> = None;
    for _ in 0..w.features {
        let x = encode_int(nonzero(&mut rng, w.feature_bound), params)?;
        let mut ct = keys.public.encrypt(&x, &mut rng)?;
        if w.multiply {
            ct = ct.mul_plain(&encode_int(nonzero(&mut rng, w.weight_bound), params)?)?;
        }
        match &mut acc {
            Some(a) => a.add_assign(&ct)?,
            None => acc = Some(ct),
        }
    }
    let acc = match acc {
        Some(a) if w.multiply => a.add_plain(&bias)?,
        Some(a) => a,
        None => return Err(BenchError::Invalid("workload needs at least one feature".into())),
    };
    let seconds = secs(start);
    Ok((seconds, keys.secret.noise_budget(&acc)?.bits))
}

/// Runs the workload and the micro-benchmarks under each (n, t). A row is
/// NOISE-EXHAUSTED when the workload's result has no budget left.
pub fn param_sweep(rows: &[(usize, u64)], workload: &Workload, reps: usize) -> Result<SweepReport, BenchError> {
    let mut out = Vec::with_capacity(rows.len());
    for (i, &(n, t)) in rows.iter().enumerate() {
        let params = EncryptionParams::with_defaults(n, t)?;
        let mut rng = ChaCha20Rng::seed_from_u64(workload.seed ^ (i as u64 + 1));
        let timings = micro_bench(&params, reps, &mut rng)?;
        let (seconds, budget_bits) = run_workload(&params, workload)?;
        out.push(SweepRow {
            index: i + 1,
            n,
            t,
            status: if budget_bits == 0 {
                RowStatus::NoiseExhausted
            } else {
                RowStatus::Ok
            },
            seconds,
            budget_bits,
            timings,
        });
    }
    Ok(SweepReport {
        workload: *workload,
        rows: out,
    })
}

const SWEEP_HEADER: [&str; 10] = [
    "#",
    "polyModulusDegree",
    "PlainModulus",
    "Time in Sec.",
    "status",
    "budget_bits",
    "E_us",
    "M_us",
    "A_us",
    "D_us",
];

impl SweepReport {
    fn cells(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                let us = |s: f64| format!("{:.2}", s * 1e6);
                vec![
                    r.index.to_string(),
                    r.n.to_string(),
                    r.t.to_string(),
                    match r.status {
                        RowStatus::Ok => format!("{:.3}", r.seconds),
                        RowStatus::NoiseExhausted => "NA".into(),
                    },
                    r.status.label().into(),
                    r.budget_bits.to_string(),
                    us(r.timings.e()),
                    us(r.timings.m()),
                    us(r.timings.a()),
                    us(r.timings.d()),
                ]
            })
            .collect()
    }

    pub fn to_table(&self) -> String {
        let header: Vec<String> = SWEEP_HEADER.iter().map(|s| s.to_string()).collect();
        render_table(&header, &self.cells())
    }

    pub fn to_csv(&self) -> Result<String, BenchError> {
        to_csv(&SWEEP_HEADER, &self.cells())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PrecisionRow {
    pub d: Precision,
    /// Percent of samples whose quantized argmax equals the label.
    pub accuracy: f64,
    /// Percent of samples whose full quantized ranking equals the float
    /// ranking.
    pub agreement: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PrecisionReport {
    pub rows: Vec<PrecisionRow>,
}

/// Scores every sample in floating point and at each precision.
pub fn precision_sweep(
    model: &LinearModel,
    data: &Dataset,
    ds: &[Precision],
) -> Result<PrecisionReport, BenchError> {
    if data.table.is_empty() {
        return Err(BenchError::Invalid("empty dataset".into()));
    }
    let xs = data
        .table
        .rows
        .iter()
        .map(|r| apply_preprocess(model, r))
        .collect::<Result<Vec<_>, _>>()?;
    let float_ranks = xs
        .iter()
        .map(|x| Ok(ranking(&score_plain(model, "", x)?.scores)))
        .collect::<Result<Vec<_>, ModelError>>()?;
    let n = xs.len() as f64;
    let mut rows = Vec::with_capacity(ds.len());
    for &d in ds {
        let q = QuantizedModel::at_precision(model, d)?;
        let mut correct = 0usize;
        let mut agree = 0usize;
        for ((x, label), fr) in xs.iter().zip(&data.labels).zip(&float_ranks) {
            let s = q.score_int(&q.quantize_features(x)?)?;
            correct += usize::from(argmax(&s) == Some(*label));
            agree += usize::from(ranking(&s) == *fr);
        }
        rows.push(PrecisionRow {
            d,
            accuracy: 100.0 * correct as f64 / n,
            agreement: 100.0 * agree as f64 / n,
        });
    }
    Ok(PrecisionReport { rows })
}

pub const PRECISION_ROW_LABELS: [&str; 3] = ["Precision", "Accuracy (%)", "agreeing ranks (%)"];

impl PrecisionReport {
    fn grid(&self) -> (Vec<String>, Vec<Vec<String>>) {
        let mut header = vec![PRECISION_ROW_LABELS[0].to_string()];
        header.extend(self.rows.iter().map(|r| format!("10^{}", r.d.d())));
        let mut acc = vec![PRECISION_ROW_LABELS[1].to_string()];
        acc.extend(self.rows.iter().map(|r| format!("{:.2}", r.accuracy)));
        let mut agree = vec![PRECISION_ROW_LABELS[2].to_string()];
        agree.extend(self.rows.iter().map(|r| format!("{:.2}", r.agreement)));
        (header, vec![acc, agree])
    }

    pub fn to_table(&self) -> String {
        let (header, body) = self.grid();
        render_table(&header, &body)
    }

    pub fn to_csv(&self) -> Result<String, BenchError> {
        let (header, body) = self.grid();
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        to_csv(&header, &body)
    }
}

fn render_table(header: &[String], body: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(String::len).collect();
    for row in body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &[String]| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut out, header);
    let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    for row in body {
        line(&mut out, row);
    }
    out
}

fn to_csv(header: &[&str], body: &[Vec<String>]) -> Result<String, BenchError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in body {
        w.write_record(row)?;
    }
    let bytes = w.into_inner().map_err(|e| BenchError::Invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv of utf-8 cells"))
}
