use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mle_core::bench::{
    micro_bench, param_sweep, precision_sweep, timing_check, Workload, SWEEP_ROWS,
};
use mle_core::fixture::{fixture_dataset, fixture_model};
use mle_core::he::{EncryptionParams, KeyPair, PublicKey, SecretKey};
use mle_core::model::{
    generate_synthetic_with, read_features, read_labels, write_features, write_labels, Dataset,
    LinearModel, Prediction, QuantizedModel, SyntheticConfig, Thresholds,
};
use mle_core::quantizer::Precision;
use mle_core::service::*;
use mle_core::toy;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

#[derive(Parser)]
#[command(name = "mle", version, about = "Encrypted linear-model inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a key pair; the secret key file is created with mode 0600.
    Keygen(KeygenArgs),
    /// Encrypt a feature CSV into a query file for one model.
    Encrypt(EncryptArgs),
    /// Send a query file to the server and store the encrypted scores.
    Predict(PredictArgs),
    /// Decrypt a response and write predictions as CSV.
    Decrypt(DecryptArgs),
    /// Run the scoring server.
    Serve(ServeArgs),
    /// Micro-benchmarks and sweeps.
    Bench(BenchArgs),
    /// Walk through the integer toy scheme.
    ToyDemo,
    /// List the parameter sets a server offers.
    Params(ServerArg),
    /// Write a synthetic model with matching features and labels.
    Synth(SynthArgs),
    /// Add a model file to a model directory and its manifest.
    Deploy(DeployArgs),
}

#[derive(Args)]
struct ServerArg {
    /// Server address; defaults to $MLE_SERVER, then 127.0.0.1:7341.
    #[arg(long)]
    server: Option<String>,
}

impl ServerArg {
    fn client(&self) -> Client {
        match &self.server {
            Some(a) => Client::new(a.clone()),
            None => Client::from_env(),
        }
    }
}

#[derive(Args)]
struct KeygenArgs {
    /// Parameter set id, e.g. bfv-n2048-t262144.
    #[arg(long, default_value = FIXTURE_PARAM_SET)]
    params: String,
    /// Directory for secret.key and public.key.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Deterministic keys for tests. Never use for real data.
    #[arg(long, hide = true)]
    insecure_seed: Option<u64>,
}

#[derive(Args)]
struct EncryptArgs {
    #[arg(long)]
    model: String,
    #[arg(long)]
    public_key: PathBuf,
    /// CSV with a sample_id column followed by raw feature values.
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Ask the server to blind the scores by a random positive factor.
    #[arg(long)]
    blind: bool,
    #[command(flatten)]
    server: ServerArg,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    query: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Samples per request.
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[command(flatten)]
    server: ServerArg,
}

#[derive(Args)]
struct DecryptArgs {
    #[arg(long)]
    secret_key: PathBuf,
    #[arg(long)]
    query: PathBuf,
    #[arg(long)]
    response: PathBuf,
    /// Output CSV; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Add softmax probabilities (refused for blinded scores).
    #[arg(long)]
    probabilities: bool,
    /// Binary decision threshold on class 1.
    #[arg(long, conflicts_with = "class_thresholds")]
    threshold: Option<f64>,
    /// Comma-separated per-class thresholds.
    #[arg(long, value_delimiter = ',')]
    class_thresholds: Option<Vec<f64>>,
}

#[derive(Args)]
struct ServeArgs {
    /// Model directory with a manifest; the built-in fixture model if omitted.
    #[arg(long)]
    models: Option<PathBuf>,
    /// Overrides $MLE_BIND.
    #[arg(long)]
    bind: Option<String>,
    #[arg(long, default_value_t = DEFAULT_BATCH_LIMIT)]
    batch_limit: usize,
    /// Publish plaintext weights in model-info responses.
    #[arg(long)]
    expose_weights: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[command(subcommand)]
    which: BenchCommand,
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Run the scoring workload over the eight reference parameter rows.
    Sweep {
        #[arg(long, default_value_t = 100)]
        reps: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Accuracy and rank agreement at each precision 10^1..10^9.
    Precision {
        /// Model file; the fixture model if omitted.
        #[arg(long, requires_all = ["features", "labels"])]
        model: Option<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Per-operation times and a measured batch against the timing model.
    Timing {
        #[arg(long, default_value = FIXTURE_PARAM_SET)]
        params: String,
        #[arg(long, default_value_t = 300)]
        reps: usize,
        /// Fixture samples in the measured batch; 0 skips the batch.
        #[arg(long, default_value_t = 50)]
        samples: usize,
        /// The batch is timed in this many chunks, each with its own micro-benchmark.
        #[arg(long, default_value_t = 10)]
        chunks: usize,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    classes: usize,
    #[arg(long)]
    features: usize,
    #[arg(long)]
    samples: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    precision: u32,
    #[arg(long)]
    blinding: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DeployArgs {
    #[arg(long)]
    models: PathBuf,
    #[arg(long)]
    model: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Keygen(a) => keygen(a),
        Command::Encrypt(a) => encrypt(a),
        Command::Predict(a) => predict(a),
        Command::Decrypt(a) => decrypt(a),
        Command::Serve(a) => serve(a),
        Command::Bench(a) => bench(a.which),
        Command::ToyDemo => {
            print!("{}", toy::walkthrough());
            Ok(())
        }
        Command::Params(a) => {
            for d in a.client().params()? {
                println!("{}\tn={}\tt={}\tlog2 q={}\t{}", d.param_set_id, d.n, d.t, d.total_q_bits, d.note);
            }
            Ok(())
        }
        Command::Synth(a) => synth(a),
        Command::Deploy(a) => {
            let model = LinearModel::load(&a.model)?;
            let path = deploy(&a.models, &model)?;
            println!("deployed {} to {}", model.model_id, path.display());
            Ok(())
        }
    }
}

fn write_secret(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut opts = OpenOptions::new();
    opts.write(true).create(true).truncate(true);
    #[cfg(unix)]
    {
        use std::os::unix::fs::{OpenOptionsExt, PermissionsExt};
        opts.mode(0o600);
        // An existing file keeps its old mode unless reset.
        if path.exists() {
            fs::set_permissions(path, fs::Permissions::from_mode(0o600))?;
        }
    }
    let mut f = opts.open(path).with_context(|| format!("creating {}", path.display()))?;
    f.write_all(bytes)?;
    f.sync_all()?;
    Ok(())
}

fn keygen(a: KeygenArgs) -> Result<()> {
    let params = standard_params(&a.params).with_context(|| {
        let known: Vec<_> = ParamCatalog::standard()
            .map(|c| c.iter().map(|p| p.param_set_id().to_string()).collect())
            .unwrap_or_default();
        format!("unknown parameter set {}; known: {}", a.params, known.join(", "))
    })?;
    let keys = match a.insecure_seed {
        Some(seed) => {
            eprintln!("warning: seeded key generation is for tests only");
            KeyPair::generate(&params, &mut ChaCha20Rng::seed_from_u64(seed))
        }
        None => KeyPair::generate_secure(&params)?,
    };
    fs::create_dir_all(&a.out)?;
    let sk = a.out.join("secret.key");
    let pk = a.out.join("public.key");
    write_secret(&sk, &keys.secret.to_bytes())?;
    fs::write(&pk, keys.public.to_bytes())?;
    println!("{} keys: {} (secret), {}", params.param_set_id(), sk.display(), pk.display());
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(BufReader::new(f)).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer(&mut w, value)?;
    w.flush()?;
    Ok(())
}

fn encrypt(a: EncryptArgs) -> Result<()> {
    let pk = PublicKey::from_bytes_self_described(&fs::read(&a.public_key)?)?;
    let table = read_features(File::open(&a.features).with_context(|| format!("opening {}", a.features.display()))?)?;
    let info = a.server.client().model_info(&a.model)?;
    let query = encrypt_query(&info, &pk, &table, a.blind, &mut rand::rng())?;
    write_json(&a.out, &query)?;
    println!("encrypted {} samples under {} to {}", query.samples.len(), query.param_set_id, a.out.display());
    Ok(())
}

fn predict(a: PredictArgs) -> Result<()> {
    let query: QueryFile = read_json(&a.query)?;
    let start = Instant::now();
    let resp = a.server.client().predict_query(&query, a.batch)?;
    write_json(&a.out, &resp)?;
    println!(
        "scored {} samples in {:.2}s (server {:.2}s){}",
        resp.samples.len(),
        start.elapsed().as_secs_f64(),
        resp.total_seconds,
        if resp.blinded { ", blinded" } else { "" }
    );
    Ok(())
}

fn decrypt(a: DecryptArgs) -> Result<()> {
    let sk = SecretKey::from_bytes_self_described(&fs::read(&a.secret_key)?)?;
    let query: QueryFile = read_json(&a.query)?;
    let resp: PredictResponse = read_json(&a.response)?;
    let decoded = decrypt_response(&sk, &query, &resp)?;
    let thresholds = match (a.threshold, a.class_thresholds) {
        (Some(t), _) => Some(Thresholds::Binary(t)),
        (None, Some(v)) => Some(Thresholds::PerClass(v)),
        (None, None) => None,
    };
    let preds = predictions(&query.model, &decoded, a.probabilities, thresholds.as_ref())?;
    match &a.out {
        Some(path) => write_predictions(File::create(path)?, &query.model, &decoded, &preds)?,
        None => write_predictions(std::io::stdout().lock(), &query.model, &decoded, &preds)?,
    }
    Ok(())
}

fn write_predictions<W: Write>(
    w: W,
    info: &ModelInfo,
    decoded: &[DecodedScores],
    preds: &[Prediction],
) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let with_probs = preds.first().is_some_and(|p| p.probabilities.is_some());
    let mut header = vec!["sample_id".to_string(), "predicted_index".into(), "predicted_label".into()];
    header.extend(info.class_labels.iter().map(|l| format!("score_{l}")));
    if with_probs {
        header.extend(info.class_labels.iter().map(|l| format!("p_{l}")));
    }
    out.write_record(&header)?;
    for (p, s) in preds.iter().zip(decoded) {
        let mut rec = vec![p.sample_id.clone(), p.predicted_index.to_string(), p.predicted_label.clone()];
        rec.extend(s.scores.iter().map(|v| v.to_string()));
        if let Some(probs) = &p.probabilities {
            rec.extend(probs.iter().map(|v| v.to_string()));
        }
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let store = match &a.models {
        Some(dir) => ModelStore::open(dir)?,
        None => {
            let mut s = ModelStore::new();
            s.insert(fixture_model());
            s
        }
    };
    if store.is_empty() {
        bail!("no models to serve");
    }
    let config = ServerConfig {
        batch_limit: a.batch_limit,
        weight_privacy: !a.expose_weights,
        ..ServerConfig::default()
    };
    let state = ServerState::new(&store, ParamCatalog::standard()?, config)?;
    let bind = a.bind.unwrap_or_else(bind_address_from_env);
    let server = Server::bind(&bind, state)?;
    for id in server.state().model_ids() {
        eprintln!("serving model {id}");
    }
    // Tests and scripts read the bound address from this line.
    println!("listening on {}", server.local_addr());
    std::io::stdout().flush()?;
    server.run()?;
    Ok(())
}

fn bench(which: BenchCommand) -> Result<()> {
    match which {
        BenchCommand::Sweep { reps, seed, csv } => {
            let report = param_sweep(&SWEEP_ROWS, &Workload::scoring(seed), reps)?;
            print!("{}", report.to_table());
            if let Some(path) = csv {
                fs::write(path, report.to_csv()?)?;
            }
        }
        BenchCommand::Precision { model, features, labels, csv } => {
            let (model, data) = match (model, features, labels) {
                (Some(m), Some(f), Some(l)) => {
                    let model = LinearModel::load(m)?;
                    let table = read_features(File::open(f)?)?;
                    let labels = read_labels(File::open(l)?)?;
                    if labels.iter().map(|(id, _)| id).ne(table.sample_ids.iter()) {
                        bail!("label file sample ids do not match the feature file");
                    }
                    let labels = labels.into_iter().map(|(_, l)| l).collect();
                    (model, Dataset { table, labels })
                }
                _ => (fixture_model(), fixture_dataset()?),
            };
            let report = precision_sweep(&model, &data, &Precision::all().collect::<Vec<_>>())?;
            print!("{}", report.to_table());
            if let Some(path) = csv {
                fs::write(path, report.to_csv()?)?;
            }
        }
        BenchCommand::Timing { params, reps, samples, chunks } => {
            let params: std::sync::Arc<EncryptionParams> =
                standard_params(&params).with_context(|| format!("unknown parameter set {params}"))?;
            let mut rng = rand::rng();
            if samples == 0 {
                let t = micro_bench(&params, reps, &mut rng)?;
                println!(
                    "{}: E={:.1}us M={:.1}us A={:.2}us D={:.1}us ({reps} reps)",
                    t.param_set_id,
                    t.e() * 1e6,
                    t.m() * 1e6,
                    t.a() * 1e6,
                    t.d() * 1e6
                );
                return Ok(());
            }
            let model = fixture_model();
            let data = fixture_dataset()?;
            let q = QuantizedModel::from_model(&model)?;
            let xs = data.table.rows[..samples.min(data.table.len())]
                .iter()
                .map(|r| Ok(q.quantize_features(&model.preprocess.apply(r)?)?))
                .collect::<Result<Vec<_>>>()?;
            let check = timing_check(&params, &q, &xs, chunks, reps, &mut rng)?;
            let [e, m, a, d] = check.mean_ops();
            println!(
                "{}: E={:.1}us M={:.1}us A={:.2}us D={:.1}us ({reps} reps per chunk)",
                params.param_set_id(),
                e * 1e6,
                m * 1e6,
                a * 1e6,
                d * 1e6
            );
            println!(
                "batch N={} C={} p={}: predicted {:.2}s, measured {:.2}s, ratio {:.3}, {} wrong scores",
                check.samples(),
                model.num_classes(),
                model.num_features(),
                check.predicted,
                check.measured,
                check.ratio(),
                check.mismatches()
            );
        }
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg = SyntheticConfig::new(a.classes, a.features, a.samples, a.seed);
    cfg.d = Precision::new(a.precision)?;
    cfg.blinding_enabled = a.blinding;
    let (data, model) = generate_synthetic_with(&cfg)?;
    fs::create_dir_all(&a.out)?;
    model.save(a.out.join("model.json"))?;
    write_features(File::create(a.out.join("features.csv"))?, &data.table)?;
    write_labels(File::create(a.out.join("labels.csv"))?, &data.table.sample_ids, &data.labels)?;
    println!("wrote {} ({} classes, {} features, {} samples) to {}", model.model_id, a.classes, a.features, a.samples, a.out.display());
    Ok(())
}
