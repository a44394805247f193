use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};

const BIN: &str = env!("CARGO_BIN_EXE_mle");

fn mle(args: &[&str], server: Option<&str>) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args);
    if let Some(addr) = server {
        cmd.env("MLE_SERVER", addr);
    }
    cmd.output().unwrap()
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

struct Serve {
    child: Child,
    addr: String,
}

impl Drop for Serve {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn serve(models: &Path) -> Serve {
    let mut child = Command::new(BIN)
        .args(["serve", "--models", models.to_str().unwrap()])
        .env("MLE_BIND", "127.0.0.1:0")
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on ").expect("listening line").to_string();
    Serve { child, addr }
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn full_round_trip_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    let models = d.join("models");
    ok(mle(&["synth", "--classes", "3", "--features", "6", "--samples", "5", "--seed", "9", "--out", p(&data)], None));
    ok(mle(&["deploy", "--models", p(&models), "--model", p(&data.join("model.json"))], None));
    let server = serve(&models);
    let addr = Some(server.addr.as_str());

    let listed = ok(mle(&["params"], addr));
    assert!(listed.contains("bfv-n2048-t262144"));

    let keys = d.join("keys");
    ok(mle(&["keygen", "--params", "bfv-n2048-t262144", "--out", p(&keys)], None));
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        let mode = std::fs::metadata(keys.join("secret.key")).unwrap().permissions().mode();
        assert_eq!(mode & 0o777, 0o600);
    }

    let model: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(data.join("model.json")).unwrap()).unwrap();
    let id = model["model_id"].as_str().unwrap();
    let query = d.join("query.json");
    let resp = d.join("resp.json");
    let preds = d.join("preds.csv");
    ok(mle(
        &["encrypt", "--model", id, "--public-key", p(&keys.join("public.key")), "--features", p(&data.join("features.csv")), "--out", p(&query)],
        addr,
    ));
    // The query file keeps probe values locally; the secret key never enters it.
    let q: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&query).unwrap()).unwrap();
    assert_eq!(q["samples"].as_array().unwrap().len(), 5);

    ok(mle(&["predict", "--query", p(&query), "--out", p(&resp), "--batch", "2"], addr));
    ok(mle(
        &["decrypt", "--secret-key", p(&keys.join("secret.key")), "--query", p(&query), "--response", p(&resp), "--probabilities", "--out", p(&preds)],
        None,
    ));
    let text = std::fs::read_to_string(&preds).unwrap();
    let labels = std::fs::read_to_string(data.join("labels.csv")).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("sample_id,predicted_index,predicted_label,score_"));
    assert_eq!(header.split(',').count(), 3 + 3 + 3);
    for (row, want) in lines.zip(labels.lines().skip(1)) {
        let got: Vec<&str> = row.split(',').collect();
        let want: Vec<&str> = want.split(',').collect();
        assert_eq!(got[0], want[0]);
        assert_eq!(got[1], want[1]);
    }

    // A different key cannot decrypt, and the tool says so.
    let other = d.join("other");
    ok(mle(&["keygen", "--params", "bfv-n2048-t262144", "--out", p(&other), "--insecure-seed", "3"], None));
    let out = mle(
        &["decrypt", "--secret-key", p(&other.join("secret.key")), "--query", p(&query), "--response", p(&resp)],
        None,
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("probe"));

    // Unknown models come back as structured errors.
    let out = mle(
        &["encrypt", "--model", "nope", "--public-key", p(&keys.join("public.key")), "--features", p(&data.join("features.csv")), "--out", p(&query)],
        addr,
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("not_found"));
}

#[test]
fn blinded_scores_refuse_probabilities() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    let models = d.join("models");
    ok(mle(&["synth", "--classes", "4", "--features", "3", "--samples", "3", "--seed", "2", "--blinding", "--out", p(&data)], None));
    ok(mle(&["deploy", "--models", p(&models), "--model", p(&data.join("model.json"))], None));
    let server = serve(&models);
    let addr = Some(server.addr.as_str());
    let keys = d.join("keys");
    ok(mle(&["keygen", "--out", p(&keys), "--insecure-seed", "1"], None));
    let model: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(data.join("model.json")).unwrap()).unwrap();
    let id = model["model_id"].as_str().unwrap();
    let query = d.join("q.json");
    let resp = d.join("r.json");
    ok(mle(
        &["encrypt", "--model", id, "--public-key", p(&keys.join("public.key")), "--features", p(&data.join("features.csv")), "--out", p(&query)],
        addr,
    ));
    ok(mle(&["predict", "--query", p(&query), "--out", p(&resp)], addr));
    let sk = keys.join("secret.key");
    let out = mle(&["decrypt", "--secret-key", p(&sk), "--query", p(&query), "--response", p(&resp), "--probabilities"], None);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("blinded"));
    let text = ok(mle(&["decrypt", "--secret-key", p(&sk), "--query", p(&query), "--response", p(&resp)], None));
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn toy_demo_and_help() {
    let text = ok(mle(&["toy-demo"], None));
    assert!(text.contains("1 XOR 1"));
    assert!(text.contains("1 AND 1"));
    let help = ok(mle(&["--help"], None));
    for cmd in ["keygen", "encrypt", "predict", "decrypt", "serve", "bench", "toy-demo"] {
        assert!(help.contains(cmd), "{cmd} missing from help");
    }
    let out = mle(&["keygen", "--params", "bfv-n3-t2"], None);
    assert!(!out.status.success());
}

#[test]
fn precision_bench_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("precision.csv");
    let table = ok(mle(&["bench", "precision", "--csv", p(&csv)], None));
    assert!(table.contains("agreeing ranks (%)"));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("Precision,10^1,"));
}
