mod common;

use std::path::Path;
use std::process::{Command, Output};

fn penhwr(dir: &Path, args: &[&str]) -> Output {
    Command::new(common::bin())
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = penhwr(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn synth_counts_samples() {
    let t = tempfile::tempdir().unwrap();
    let stdout = ok(
        t.path(),
        &["synth", "--writers", "38", "--reps", "6", "--case", "upper", "--seed", "7", "--out", "s"],
    );
    assert!(stdout.contains("5928 samples"), "{stdout}");
    let sessions = std::fs::read_to_string(t.path().join("s/sessions.csv")).unwrap();
    assert_eq!(sessions.lines().count(), 39);
}

#[test]
fn missing_out_is_a_usage_error() {
    let t = tempfile::tempdir().unwrap();
    let out = penhwr(t.path(), &["synth", "--writers", "2"]);
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("--out") && err.contains("Usage"), "{err}");
    assert_eq!(code(&penhwr(t.path(), &["prep", "--out", "x"])), 2);
    assert_eq!(code(&penhwr(t.path(), &["train", "--bogus"])), 2);
}

#[test]
fn config_file_values_and_unknown_keys() {
    let t = tempfile::tempdir().unwrap();
    std::fs::write(t.path().join("synth.toml"), "writers = 2\nreps = 1\nout = \"from-file\"\n").unwrap();
    let stdout = ok(t.path(), &["synth", "--config", "synth.toml", "--reps", "2"]);
    assert!(stdout.contains("104 samples"), "{stdout}");
    let run = std::fs::read_to_string(t.path().join("from-file/run_config.json")).unwrap();
    assert!(run.contains("\"reps\": 2"));
    std::fs::write(t.path().join("bad.toml"), "writerz = 2\n").unwrap();
    let out = penhwr(t.path(), &["synth", "--config", "bad.toml", "--out", "x"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("writerz"));
    assert_eq!(code(&penhwr(t.path(), &["synth", "--config", "missing.toml", "--out", "x"])), 2);
}

#[test]
fn empty_dataset_is_a_runtime_error() {
    let t = tempfile::tempdir().unwrap();
    std::fs::create_dir(t.path().join("empty")).unwrap();
    let out = penhwr(t.path(), &["train", "--data", "empty", "--out", "m.ckpt"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("dataset is empty"));
    let out = penhwr(t.path(), &["prep", "--in", "empty", "--out", "p"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn prep_echoes_force_threshold_and_is_idempotent() {
    let t = tempfile::tempdir().unwrap();
    ok(t.path(), &["synth", "--writers", "3", "--reps", "1", "--out", "s"]);
    let stdout = ok(t.path(), &["prep", "--in", "s", "--out", "p", "--force-threshold", "0.2"]);
    assert!(stdout.contains("accepted 78 of 78"), "{stdout}");
    let manifest = std::fs::read_to_string(t.path().join("p/manifest.csv")).unwrap();
    assert!(manifest.contains("force_threshold=0.2"), "{manifest}");
    let first = std::fs::read(t.path().join("p/dataset.bin")).unwrap();
    ok(t.path(), &["prep", "--in", "s", "--out", "p", "--force-threshold", "0.2"]);
    assert_eq!(std::fs::read(t.path().join("p/dataset.bin")).unwrap(), first);
    assert_eq!(std::fs::read_to_string(t.path().join("p/manifest.csv")).unwrap(), manifest);
    assert_eq!(code(&penhwr(t.path(), &["prep", "--in", "s", "--out", "q", "--min-len", "0"])), 2);
    assert_eq!(code(&penhwr(t.path(), &["prep", "--in", "s", "--out", "q", "--normalization", "dataset"])), 2);
}

#[test]
fn train_defaults_and_identical_checkpoints() {
    let t = tempfile::tempdir().unwrap();
    ok(t.path(), &["synth", "--writers", "1", "--reps", "2", "--out", "s"]);
    ok(t.path(), &["prep", "--in", "s", "--out", "p"]);
    ok(t.path(), &["train", "--data", "p", "--out", "a.ckpt", "--seed", "1"]);
    let a = std::fs::read(t.path().join("a.ckpt")).unwrap();
    let nl = a.iter().position(|&b| b == b'\n').unwrap();
    let header: serde_json::Value = serde_json::from_slice(&a[..nl]).unwrap();
    assert_eq!(header["train_config"]["epochs"], 50);
    assert_eq!(header["train_config"]["learning_rate"], 0.001);
    assert_eq!(header["case"], "upper");
    let history = std::fs::read_to_string(t.path().join("a.ckpt.history.csv")).unwrap();
    assert_eq!(history.lines().filter(|l| !l.starts_with('#')).count(), 51);

    ok(t.path(), &["train", "--data", "p", "--out", "a.ckpt", "--seed", "1"]);
    assert_eq!(std::fs::read(t.path().join("a.ckpt")).unwrap(), a);

    let stdout = ok(t.path(), &["predict", "--model", "a.ckpt", "--data", "p", "--out", "pred.csv"]);
    assert!(stdout.contains("52 predictions"), "{stdout}");
    let stdout = ok(t.path(), &["predict", "--model", "a.ckpt", "--sample", "p/samples/w000-0000.csv"]);
    assert!(stdout.lines().any(|l| l.starts_with("w000-0000,,")), "{stdout}");
    assert_eq!(code(&penhwr(t.path(), &["predict", "--model", "a.ckpt"])), 2);
}

#[test]
fn ingest_writes_raw_samples_that_predict_accepts() {
    let t = tempfile::tempdir().unwrap();
    ok(t.path(), &["synth", "--writers", "2", "--reps", "1", "--case", "both", "--out", "s"]);
    let stdout = ok(t.path(), &["ingest", "--in", "s", "--out", "i"]);
    assert!(stdout.contains("104 samples"), "{stdout}");
    let stdout = ok(
        t.path(),
        &["ingest", "--stream", "s/w001.stream.csv", "--labels", "s/w001.labels.csv", "--out", "one"],
    );
    assert!(stdout.contains("52 samples"), "{stdout}");
    assert!(t.path().join("one/samples/w001-0051.csv").exists());
    let raw = std::fs::read_to_string(t.path().join("i/samples/w001-0000.csv")).unwrap();
    assert!(raw.starts_with("t_ms,afx,"));

    ok(t.path(), &["prep", "--in", "s", "--out", "p"]);
    let out = penhwr(t.path(), &["train", "--data", "p", "--out", "m.ckpt", "--epochs", "1"]);
    assert_eq!(code(&out), 2, "mixed cases need --case");
    ok(t.path(), &["train", "--data", "p", "--case", "lower", "--out", "m.ckpt", "--epochs", "1"]);
    let stdout = ok(t.path(), &["predict", "--model", "m.ckpt", "--raw", "i/samples/w001-0030.csv"]);
    let row = stdout.lines().last().unwrap();
    let predicted = row.split(',').nth(2).unwrap();
    assert!(predicted.chars().all(|c| c.is_ascii_lowercase()), "{row}");
}

#[test]
fn ingest_rejects_bad_streams_unless_lenient() {
    let t = tempfile::tempdir().unwrap();
    let header = "t_ms,afx,afy,afz,arx,ary,arz,gx,gy,gz,mx,my,mz,force\n";
    let rows = "0,0,0,1,0,0,1,0,0,0,0,0,0,0.5\n10,0,0,1,0,0,1,0,0,0,0,0,0,6.0\n";
    std::fs::write(t.path().join("x.stream.csv"), format!("{header}{rows}")).unwrap();
    std::fs::write(t.path().join("x.labels.csv"), "label,t_start_ms,t_end_ms\nA,0,20\n").unwrap();
    let args = ["ingest", "--stream", "x.stream.csv", "--labels", "x.labels.csv", "--out", "o"];
    let out = penhwr(t.path(), &args);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("force"));
    let mut lenient = args.to_vec();
    lenient.push("--lenient");
    let stdout = ok(t.path(), &lenient);
    assert!(stdout.contains("1 frames clamped"), "{stdout}");
}

#[test]
fn eval_writes_reports_for_both_protocols() {
    let t = tempfile::tempdir().unwrap();
    ok(t.path(), &["synth", "--writers", "5", "--reps", "1", "--out", "s"]);
    ok(t.path(), &["prep", "--in", "s", "--out", "p"]);
    for protocol in ["writer-independent", "writer-dependent"] {
        let stdout = ok(
            t.path(),
            &["eval", "--data", "p", "--protocol", protocol, "--epochs", "1", "--out", protocol],
        );
        assert!(stdout.contains(&format!("{protocol} upper")), "{stdout}");
        let report = t.path().join(protocol).join("upper/report.json");
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
        assert_eq!(v["protocol"], protocol);
        assert_eq!(v["runs"].as_array().unwrap().len(), 5);
        assert_eq!(v["run_config"]["options"]["protocol"], protocol);
    }
    let out = penhwr(t.path(), &["eval", "--data", "p", "--protocol", "leave-one-out", "--out", "x"]);
    assert_eq!(code(&out), 2);
    let out = penhwr(t.path(), &["eval", "--data", "p", "--test-fraction", "3/2", "--out", "x"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn gradcheck_exit_codes_and_repeatability() {
    let t = tempfile::tempdir().unwrap();
    let args = ["gradcheck", "--seed", "3", "--max-coords", "16"];
    let a = ok(t.path(), &args);
    let b = ok(t.path(), &args);
    assert!(a.contains("PASS"));
    let last = |s: &str| s.lines().last().unwrap().to_string();
    assert_eq!(last(&a), last(&b));
    let mut bad = args.to_vec();
    bad.push("--corrupt-gradient");
    let out = penhwr(t.path(), &bad);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}
