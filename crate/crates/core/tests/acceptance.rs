//! Release acceptance checks. Runs as a plain binary and prints one
//! PASS/FAIL line per criterion; exits nonzero if any fails.

mod common;

use std::time::{Duration, Instant};

use mle_core::bench::{
    param_sweep, precision_sweep, timing_check, RowStatus, Workload, PRECISION_ROW_LABELS,
    SWEEP_ROWS,
};
use mle_core::fixture::{fixture_dataset, fixture_model, FIXTURE_MODEL_ID};
use mle_core::he::{
    decode_int, encode_int, Ciphertext, EncryptionParams, KeyPair, PlainPoly, PublicKey, SecretKey,
};
use mle_core::model::{score_plain, Dataset, FeatureTable, LinearModel, QuantizedModel, FEATURE_RANGE};
use mle_core::quantizer::{
    argmax, dequantize_score, quantize_at, ranking, score_error_bound, Precision,
};
use mle_core::scoring::{check_decode_safety, DEFAULT_RHO_MAX};
use mle_core::service::*;
use mle_core::toy::{toy_add, toy_decrypt, toy_encrypt, toy_mul, toy_noise, ToyCiphertext, ToyError, ToyKey};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use common::{find_secret_bytes, CaptureProxy};

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(cond: bool, what: impl Into<String>, failures: &mut Vec<String>) {
    if !cond {
        failures.push(what.into());
    }
}

fn outcome(failures: Vec<String>, summary: String) -> Outcome {
    if failures.is_empty() {
        Outcome {
            pass: true,
            detail: summary,
        }
    } else {
        Outcome {
            pass: false,
            detail: format!("{summary}; failures: {}", failures.join("; ")),
        }
    }
}

fn homomorphic_correctness() -> Outcome {
    let start = Instant::now();
    let catalog = ParamCatalog::standard().unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let mut failures = Vec::new();
    let mut per_set = Vec::new();
    for params in catalog.iter() {
        let keys = KeyPair::generate(params, &mut rng);
        let mut ok = 0;
        for _ in 0..1000 {
            let a: i64 = rng.random_range(-(1 << 30)..=1 << 30);
            let mut b: i64 = rng.random_range(-(1 << 30)..=1 << 30);
            if b == 0 {
                b = 1;
            }
            let ca = keys.public.encrypt(&encode_int(a, params).unwrap(), &mut rng).unwrap();
            let cb = keys.public.encrypt(&encode_int(b, params).unwrap(), &mut rng).unwrap();
            let sum = decode_int(&keys.secret.decrypt(&ca.add(&cb).unwrap()).unwrap()).unwrap();
            let prod = ca.mul_plain(&encode_int(b, params).unwrap()).unwrap();
            let prod = decode_int(&keys.secret.decrypt(&prod).unwrap()).unwrap();
            if sum == a as i128 + b as i128 && prod == a as i128 * b as i128 {
                ok += 1;
            }
        }
        check(ok == 1000, format!("{}: {ok}/1000", params.param_set_id()), &mut failures);
        per_set.push(format!("{} {ok}/1000", params.param_set_id()));
    }
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(120), format!("took {elapsed:?}"), &mut failures);
    outcome(failures, format!("{} in {:.1}s", per_set.join(", "), elapsed.as_secs_f64()))
}

/// Smallest power-of-two t at n = 2048 for which the fixture decodes
/// exactly with blinding up to 2^16.
fn choose_fixture_t(model: &LinearModel) -> (u64, u64) {
    let q = QuantizedModel::from_model(model).unwrap();
    let fb = quantize_at(FEATURE_RANGE, model.d.d()).unwrap().unsigned_abs();
    for bits in 10..=40 {
        let params = EncryptionParams::with_defaults(2048, 1 << bits).unwrap();
        if check_decode_safety(&q, fb, &params, DEFAULT_RHO_MAX).acceptable() {
            return (1 << bits, fb);
        }
    }
    panic!("no safe plaintext modulus at n = 2048");
}

struct PipelineRun {
    samples: usize,
    exact: usize,
    classes: usize,
    bound: f64,
    max_error: f64,
    bound_violations: usize,
    margin_samples: usize,
    margin_mismatches: usize,
    blind_pairs: usize,
    blind_identical: usize,
    rho_out_of_range: usize,
    t: u64,
    seconds: f64,
}

fn subset(data: &Dataset, range: std::ops::Range<usize>) -> FeatureTable {
    FeatureTable {
        sample_ids: data.table.sample_ids[range.clone()].to_vec(),
        rows: data.table.rows[range].to_vec(),
    }
}

fn end_to_end_pipeline() -> PipelineRun {
    let start = Instant::now();
    let model = fixture_model();
    let data = fixture_dataset().unwrap();
    let (t, _) = choose_fixture_t(&model);
    let mut store = ModelStore::new();
    store.insert(model.clone());
    let state = ServerState::new(&store, ParamCatalog::standard().unwrap(), ServerConfig::default()).unwrap();
    let server = Server::bind("127.0.0.1:0", state).unwrap().spawn();
    let client = Client::new(server.addr().to_string());
    let info = client.model_info(FIXTURE_MODEL_ID).unwrap();
    let params = EncryptionParams::with_defaults(2048, t).unwrap();
    assert!(client.params().unwrap().iter().any(|d| d.param_set_id == params.param_set_id()));
    let keys = KeyPair::generate_secure(&params).unwrap();
    let mut rng = rand::rng();

    let q = QuantizedModel::from_model(&model).unwrap();
    let p = model.num_features();
    let bound = score_error_bound(p, model.max_abs_weight(), FEATURE_RANGE, model.d);
    let mut run = PipelineRun {
        samples: 0,
        exact: 0,
        classes: 0,
        bound,
        max_error: 0.0,
        bound_violations: 0,
        margin_samples: 0,
        margin_mismatches: 0,
        blind_pairs: 0,
        blind_identical: 0,
        rho_out_of_range: 0,
        t,
        seconds: 0.0,
    };
    let n = 1000;
    let batch = 8;
    for lo in (0..n).step_by(batch) {
        let hi = (lo + batch).min(n);
        let table = subset(&data, lo..hi);
        let query = encrypt_query(&info, &keys.public, &table, false, &mut rng).unwrap();
        let plain = client.predict(query.request()).unwrap();
        assert!(!plain.blinded);
        let decoded = decrypt_response(&keys.secret, &query, &plain).unwrap();
        let mut blinded_query = query;
        blinded_query.want_blinding = true;
        let blinded = client.predict(blinded_query.request()).unwrap();
        assert!(blinded.blinded);
        let decoded_b = decrypt_response(&keys.secret, &blinded_query, &blinded).unwrap();

        for (k, row) in table.rows.iter().enumerate() {
            let x = model.preprocess.apply(row).unwrap();
            let oracle = q.score_int(&q.quantize_features(&x).unwrap()).unwrap();
            let float = score_plain(&model, "", &x).unwrap().scores;
            let got = &decoded[k].scores;
            run.samples += 1;
            run.classes += got.len();
            run.exact += got.iter().zip(&oracle).filter(|(a, b)| a == b).count();
            for (g, f) in got.iter().zip(&float) {
                let err = (dequantize_score(*g, model.d) - f).abs();
                run.max_error = run.max_error.max(err);
                run.bound_violations += usize::from(err > bound);
            }
            let order = ranking(&float);
            if float[order[0]] - float[order[1]] > 2.0 * bound {
                run.margin_samples += 1;
                run.margin_mismatches += usize::from(argmax(got) != argmax(&float));
            }

            let got_b = &decoded_b[k].scores;
            run.blind_pairs += 1;
            run.blind_identical += usize::from(ranking(got_b) == ranking(got));
            let nz = got.iter().position(|&v| v != 0).unwrap();
            let rho = got_b[nz] / got[nz];
            let consistent = got.iter().zip(got_b).all(|(a, b)| *a * rho == *b);
            if !consistent || !(2..=DEFAULT_RHO_MAX as i128).contains(&rho) {
                run.rho_out_of_range += 1;
            }
        }
    }
    server.shutdown();
    run.seconds = start.elapsed().as_secs_f64();
    run
}

fn oracle_equivalence(run: &PipelineRun) -> Outcome {
    let mut failures = Vec::new();
    check(run.samples == 1000, format!("{} samples", run.samples), &mut failures);
    check(run.exact == run.classes, format!("{}/{} scores exact", run.exact, run.classes), &mut failures);
    check(run.bound_violations == 0, format!("{} scores beyond the bound", run.bound_violations), &mut failures);
    check(run.margin_mismatches == 0, format!("{} argmax mismatches", run.margin_mismatches), &mut failures);
    check(run.margin_samples > 0, "no sample had a margin above 2x bound", &mut failures);
    outcome(
        failures,
        format!(
            "t = {} chosen by the safety check; {}/{} class scores equal the integer oracle; max |error| {:.3e} <= bound {:.3e}; argmax agrees on {}/{} wide-margin samples; {:.0}s incl. blinded pairs",
            run.t,
            run.exact,
            run.classes,
            run.max_error,
            run.bound,
            run.margin_samples - run.margin_mismatches,
            run.margin_samples,
            run.seconds
        ),
    )
}

fn blinding_invariance(run: &PipelineRun) -> Outcome {
    let mut failures = Vec::new();
    check(run.blind_pairs == 1000, format!("{} pairs", run.blind_pairs), &mut failures);
    check(run.blind_identical == run.blind_pairs, format!("{}/{} rankings identical", run.blind_identical, run.blind_pairs), &mut failures);
    check(run.rho_out_of_range == 0, format!("{} pairs not a common factor in [2, 2^16]", run.rho_out_of_range), &mut failures);
    outcome(
        failures,
        format!(
            "{}/{} paired queries have identical full rankings; every blinded vector is a common multiple rho in [2, 2^16]",
            run.blind_identical, run.blind_pairs
        ),
    )
}

fn noise_exhaustion() -> Outcome {
    let report = param_sweep(&SWEEP_ROWS, &Workload::scoring(4), 100).unwrap();
    print!("{}", report.to_table());
    let mut failures = Vec::new();
    for r in &report.rows {
        let want = if r.n == 1024 {
            RowStatus::NoiseExhausted
        } else {
            RowStatus::Ok
        };
        check(r.status == want, format!("row {} ({}, {}) is {}", r.index, r.n, r.t, r.status.label()), &mut failures);
    }
    let big: Vec<_> = report.rows.iter().filter(|r| r.n == 8192).collect();
    let small: Vec<_> = report.rows.iter().filter(|r| r.n == 2048).collect();
    for b in &big {
        for s in &small {
            let pairs = [
                ("E", b.timings.e(), s.timings.e()),
                ("M", b.timings.m(), s.timings.m()),
                ("A", b.timings.a(), s.timings.a()),
                ("D", b.timings.d(), s.timings.d()),
            ];
            for (name, x, y) in pairs {
                check(x > y, format!("{name}: n=8192 {x:.2e}s not above row {} {y:.2e}s", s.index), &mut failures);
            }
        }
    }
    outcome(
        failures,
        format!(
            "workload of {} mul_plain+add steps: both n=1024 rows NOISE-EXHAUSTED, {} n=2048/8192 rows complete, n=8192 E/M/A/D above every n=2048 row",
            report.workload.features,
            small.len() + big.len()
        ),
    )
}

fn precision_shape() -> Outcome {
    let model = fixture_model();
    let data = fixture_dataset().unwrap();
    let ds: Vec<Precision> = Precision::all().collect();
    let report = precision_sweep(&model, &data, &ds).unwrap();
    print!("{}", report.to_table());
    let csv = report.to_csv().unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    let mut failures = Vec::new();
    let header = std::iter::once("Precision".to_string())
        .chain((1..=9).map(|d| format!("10^{d}")))
        .collect::<Vec<_>>()
        .join(",");
    check(lines.len() == 3, format!("{} csv lines", lines.len()), &mut failures);
    check(lines[0] == header, format!("header {:?}", lines[0]), &mut failures);
    check(lines[1].starts_with(&format!("{},", PRECISION_ROW_LABELS[1])), "accuracy row label", &mut failures);
    check(lines[2].starts_with(&format!("{},", PRECISION_ROW_LABELS[2])), "agreement row label", &mut failures);
    check(lines[1..].iter().all(|l| l.split(',').count() == 10), "row widths", &mut failures);
    let first = &report.rows[0];
    let last = &report.rows[8];
    check(last.agreement == 100.0, format!("agreement at d=9 is {}", last.agreement), &mut failures);
    check(first.agreement <= last.agreement, "agreement at d=1 above d=9", &mut failures);
    outcome(
        failures,
        format!(
            "columns 10^1..10^9 with accuracy and agreeing-ranks rows; agreement {:.2}% at d=1, {:.2}% at d=9",
            first.agreement, last.agreement
        ),
    )
}

fn timing_model() -> Outcome {
    let start = Instant::now();
    let model = fixture_model();
    let data = fixture_dataset().unwrap();
    let (t, _) = choose_fixture_t(&model);
    let params = EncryptionParams::with_defaults(2048, t).unwrap();
    let q = QuantizedModel::from_model(&model).unwrap();
    let n = 50;
    let xs: Vec<Vec<i64>> = data.table.rows[..n]
        .iter()
        .map(|r| q.quantize_features(&model.preprocess.apply(r).unwrap()).unwrap())
        .collect();
    let mut rng = ChaCha20Rng::seed_from_u64(6);
    // Ten chunks of five samples, each next to its own micro-benchmark.
    let run = timing_check(&params, &q, &xs, 10, 300, &mut rng).unwrap();
    let ratio = run.ratio();
    let [e, m, a, d] = run.mean_ops();
    let total = start.elapsed();
    let mut failures = Vec::new();
    check(run.samples() == n, format!("{} samples timed", run.samples()), &mut failures);
    check((0.75..=1.25).contains(&ratio), format!("measured/predicted = {ratio:.3}"), &mut failures);
    check(run.mismatches() == 0, format!("{} batch scores decoded wrongly", run.mismatches()), &mut failures);
    check(total < Duration::from_secs(30 * 60), format!("took {total:?}"), &mut failures);
    outcome(
        failures,
        format!(
            "E={:.1}us M={:.1}us A={:.2}us D={:.1}us; N=50 C=22 p=500 predicted {:.1}s, measured {:.1}s (ratio {:.3}); {:.0}s total",
            e * 1e6,
            m * 1e6,
            a * 1e6,
            d * 1e6,
            run.predicted,
            run.measured,
            ratio,
            total.as_secs_f64()
        ),
    )
}

enum Circuit {
    Input(usize),
    Add(Box<Circuit>, Box<Circuit>),
    Mul(Box<Circuit>, Box<Circuit>),
}

impl Circuit {
    fn random<R: Rng>(depth: u32, inputs: usize, rng: &mut R) -> Self {
        if depth == 0 || rng.random_bool(0.25) {
            return Circuit::Input(rng.random_range(0..inputs));
        }
        let l = Box::new(Self::random(depth - 1, inputs, rng));
        let r = Box::new(Self::random(depth - 1, inputs, rng));
        if rng.random_bool(0.5) {
            Circuit::Add(l, r)
        } else {
            Circuit::Mul(l, r)
        }
    }

    fn plain(&self, bits: &[u8]) -> u8 {
        match self {
            Circuit::Input(i) => bits[*i],
            Circuit::Add(a, b) => a.plain(bits) ^ b.plain(bits),
            Circuit::Mul(a, b) => a.plain(bits) & b.plain(bits),
        }
    }

    fn eval(&self, cts: &[ToyCiphertext]) -> ToyCiphertext {
        match self {
            Circuit::Input(i) => cts[*i].clone(),
            Circuit::Add(a, b) => toy_add(&a.eval(cts), &b.eval(cts)),
            Circuit::Mul(a, b) => toy_mul(&a.eval(cts), &b.eval(cts)),
        }
    }
}

fn toy_truth_tables() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let key = ToyKey::generate(64, &mut rng).unwrap();
    let mut failures = Vec::new();
    for a in 0..=1u8 {
        for b in 0..=1u8 {
            for _ in 0..100 {
                let ca = toy_encrypt(a, &key, 128, 8, &mut rng).unwrap();
                let cb = toy_encrypt(b, &key, 128, 8, &mut rng).unwrap();
                let xor = toy_decrypt(&toy_add(&ca, &cb), &key).unwrap();
                let and = toy_decrypt(&toy_mul(&ca, &cb), &key).unwrap();
                check(xor == a ^ b, format!("{a} xor {b} = {xor}"), &mut failures);
                check(and == a & b, format!("{a} and {b} = {and}"), &mut failures);
            }
        }
    }
    let (mut admitted, mut correct, mut flagged) = (0, 0, 0);
    for _ in 0..10_000 {
        let bits: Vec<u8> = (0..4).map(|_| rng.random_range(0..=1)).collect();
        let cts: Vec<_> = bits
            .iter()
            .map(|&m| toy_encrypt(m, &key, 128, 8, &mut rng).unwrap())
            .collect();
        let circuit = Circuit::random(3, 4, &mut rng);
        let out = circuit.eval(&cts);
        if key.admits(&out.noise_bound) {
            admitted += 1;
            let noise = toy_noise(&out, &key);
            check(noise.magnitude() <= &out.noise_bound, "measured noise above tracked bound", &mut failures);
            if toy_decrypt(&out, &key) == Ok(circuit.plain(&bits)) {
                correct += 1;
            }
        } else {
            flagged += usize::from(matches!(toy_decrypt(&out, &key), Err(ToyError::NoiseOverflow { .. })));
            check(toy_decrypt(&out, &key).is_err(), "over-noise circuit decrypted silently", &mut failures);
        }
    }
    check(correct == admitted, format!("{correct}/{admitted} admitted circuits correct"), &mut failures);
    check(admitted >= 5000, format!("only {admitted} circuits within the noise bound"), &mut failures);
    outcome(
        failures,
        format!(
            "XOR/AND tables exact over 400 encryptions; {correct}/{admitted} depth<=3 circuits with noise < p/2 correct; {flagged} over-noise circuits flagged"
        ),
    )
}

fn object_roundtrips(failures: &mut Vec<String>) -> usize {
    let params = EncryptionParams::with_defaults(2048, 1 << 18).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    let keys = KeyPair::generate(&params, &mut rng);
    let pt = encode_int(-123_456, &params).unwrap();
    let ct = keys.public.encrypt(&pt, &mut rng).unwrap();
    let mut count = 0;
    let mut same = |name: &str, a: Vec<u8>, b: Vec<u8>| {
        count += 1;
        check(a == b, format!("{name} roundtrip differs"), failures);
    };
    let b = params.to_bytes();
    same("params", EncryptionParams::from_bytes(&b).unwrap().to_bytes(), b);
    let b = pt.to_bytes();
    same("plaintext", PlainPoly::from_bytes(&b, &params).unwrap().to_bytes(), b);
    let b = ct.to_bytes();
    same("ciphertext", Ciphertext::from_bytes(&b, &params).unwrap().to_bytes(), b);
    let b = keys.public.to_bytes();
    same("public key", PublicKey::from_bytes_self_described(&b).unwrap().to_bytes(), b);
    let b = keys.secret.to_bytes();
    same("secret key", SecretKey::from_bytes_self_described(&b).unwrap().to_bytes(), b);
    let m = fixture_model();
    let text = m.to_json();
    same("model file", LinearModel::from_json(&text).unwrap().to_json().into_bytes(), text.into_bytes());
    count
}

fn expect_code(r: Result<impl std::fmt::Debug, ServiceError>, code: ErrorCode, what: &str, failures: &mut Vec<String>) -> Option<ErrorBody> {
    match r {
        Err(ServiceError::Remote(e)) if e.code == code => Some(e),
        other => {
            failures.push(format!("{what}: expected {code:?}, got {other:?}"));
            None
        }
    }
}

fn protocol_and_isolation() -> Outcome {
    let mut failures = Vec::new();
    let objects = object_roundtrips(&mut failures);

    let model = fixture_model();
    let data = fixture_dataset().unwrap();
    let mut store = ModelStore::new();
    store.insert(model.clone());
    let catalog = ParamCatalog::from_params(vec![
        (EncryptionParams::with_defaults(2048, 1024).unwrap(), "default".into()),
        (EncryptionParams::with_defaults(2048, 1 << 18).unwrap(), "fixture".into()),
    ]);
    let state = ServerState::new(&store, catalog, ServerConfig::default()).unwrap();
    let server = Server::bind("127.0.0.1:0", state).unwrap().spawn();
    let proxy = CaptureProxy::start(server.addr());
    let client = Client::new(proxy.addr.to_string());

    let params = EncryptionParams::with_defaults(2048, 1 << 18).unwrap();
    let keys = KeyPair::generate_secure(&params).unwrap();
    let mut rng = rand::rng();
    let sets = client.params().unwrap();
    let info = client.model_info(FIXTURE_MODEL_ID).unwrap();
    check(info.weights.is_none(), "weights exposed by model-info", &mut failures);
    let query = encrypt_query(&info, &keys.public, &subset(&data, 0..2), false, &mut rng).unwrap();
    let resp = client.predict(query.request()).unwrap();
    let mut bq = query.clone();
    bq.want_blinding = true;
    let resp_b = client.predict(bq.request()).unwrap();
    decrypt_response(&keys.secret, &query, &resp).unwrap();
    decrypt_response(&keys.secret, &bq, &resp_b).unwrap();

    // Negative paths, all through the capturing proxy.
    expect_code(client.model_info("missing"), ErrorCode::NotFound, "unknown model", &mut failures);
    let mut r = query.request();
    r.param_set_id = "bfv-n2048-t3".into();
    expect_code(client.predict(r), ErrorCode::NotFound, "unknown parameter set", &mut failures);
    let mut r = query.request();
    r.samples[1].features.pop();
    if let Some(e) = expect_code(client.predict(r), ErrorCode::Unprocessable, "p-1 ciphertexts", &mut failures) {
        check(e.sample_index == Some(1), format!("sample index {:?}", e.sample_index), &mut failures);
    }
    let mut r = query.request();
    r.samples = vec![WireSample { sample_id: "x".into(), features: vec![], probe: None }; DEFAULT_BATCH_LIMIT + 1];
    expect_code(client.predict(r), ErrorCode::PayloadTooLarge, "oversized batch", &mut failures);
    let mut r = query.request();
    r.samples[0].features[3] = Blob(vec![1, 2, 3]);
    expect_code(client.predict(r), ErrorCode::BadRequest, "malformed ciphertext", &mut failures);
    let mut r = query.request();
    r.param_set_id = DEFAULT_PARAM_SET.into();
    expect_code(client.predict(r), ErrorCode::UnsafeConfiguration, "unsafe parameter set", &mut failures);
    let mut r = query.request();
    r.samples.clear();
    match client.predict(r) {
        Ok(resp) => check(resp.samples.is_empty(), "empty batch returned samples", &mut failures),
        Err(e) => failures.push(format!("empty batch: {e}")),
    }
    let raw_cases: [(&[u8], ErrorCode); 3] = [
        (&[0, 0, 0, 3, 0x09, b'{', b'}'], ErrorCode::BadRequest),
        (&[0, 0, 0, 4, MSG_PREDICT, b'{', b'x', b'}'], ErrorCode::BadRequest),
        (&[0xff, 0xff, 0xff, 0xff, MSG_PREDICT], ErrorCode::PayloadTooLarge),
    ];
    for (bytes, code) in raw_cases {
        match client.exchange_raw(bytes).map(|f| Response::from_frame(&f)) {
            Ok(Ok(Response::Error(e))) => check(e.code == code, format!("raw frame: {:?} vs {code:?}", e.code), &mut failures),
            other => failures.push(format!("raw frame: {other:?}")),
        }
    }
    std::thread::sleep(Duration::from_millis(300));
    let streams = proxy.captured.lock().unwrap().clone();
    let leaked = find_secret_bytes(&keys.secret, &streams);
    check(leaked.is_none(), format!("secret key bytes on the wire: {leaked:?}"), &mut failures);

    // Every frame seen on the wire roundtrips bit-identically.
    let mut frames = Vec::new();
    for s in &streams {
        let mut rest = &s[..];
        while let Ok(f) = read_frame(&mut rest, u32::MAX) {
            frames.push(f);
        }
    }
    let kinds: std::collections::BTreeSet<u8> = frames.iter().map(|f| f.kind).collect();
    check(
        kinds == [MSG_PARAMS, MSG_MODEL_INFO, MSG_PREDICT, MSG_ERROR, 0x09].into_iter().collect(),
        format!("frame kinds seen {kinds:?}"),
        &mut failures,
    );
    let mut roundtripped = 0;
    for (i, s) in streams.iter().enumerate() {
        let mut rest = &s[..];
        while let Ok(f) = read_frame(&mut rest, u32::MAX) {
            let bytes = f.to_bytes();
            // Even streams are client to server.
            let again = if i % 2 == 0 {
                Request::from_frame(&f).map(|r| r.to_frame().to_bytes()).ok()
            } else {
                Response::from_frame(&f).map(|r| r.to_frame().to_bytes()).ok()
            };
            if let Some(again) = again {
                roundtripped += 1;
                check(again == bytes, format!("frame {:#04x} not bit-identical", f.kind), &mut failures);
            }
        }
    }
    let qtext = serde_json::to_string(&query).unwrap();
    let qback: QueryFile = serde_json::from_str(&qtext).unwrap();
    check(serde_json::to_string(&qback).unwrap() == qtext, "query file roundtrip", &mut failures);
    server.shutdown();
    outcome(
        failures,
        format!(
            "{objects} object types and {roundtripped} captured frames roundtrip bit-identically; {} bytes captured over {} connections with no secret-key bytes; {} parameter sets advertised; malformed requests answered with structured errors",
            streams.iter().map(Vec::len).sum::<usize>(),
            streams.len() / 2,
            sets.len()
        ),
    )
}

fn main() {
    let started = Instant::now();
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut report = |n: u32, name: &'static str, o: Outcome| {
        println!(
            "criterion {n} ({name}): {} | {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        results.push((n, name, o));
    };
    report(1, "homomorphic correctness", homomorphic_correctness());
    let run = end_to_end_pipeline();
    report(2, "end-to-end oracle equivalence", oracle_equivalence(&run));
    report(3, "blinding invariance", blinding_invariance(&run));
    report(4, "noise exhaustion", noise_exhaustion());
    report(5, "precision sweep shape", precision_shape());
    report(6, "timing model", timing_model());
    report(7, "toy truth tables", toy_truth_tables());
    report(8, "protocol and key isolation", protocol_and_isolation());

    println!();
    println!("acceptance summary ({:.0}s):", started.elapsed().as_secs_f64());
    for (n, name, o) in &results {
        println!("  {} criterion {n}: {name}", if o.pass { "PASS" } else { "FAIL" });
    }
    if results.iter().any(|(_, _, o)| !o.pass) {
        std::process::exit(1);
    }
}
