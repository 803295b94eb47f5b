use std::path::Path;
use std::process::{Command, Output};

use nfcbms_core::ecc::{KeyFile, Signature};
use nfcbms_core::ntag::TagFile;

fn nfcbms(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nfcbms"))
        .args(args)
        .env_remove("NFCBMS_CONFIG")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn provision_produces_verifiable_deterministic_tag_file() {
    let dir = tempfile::tempdir().unwrap();
    let key = dir.path().join("key.json");
    let o = nfcbms(&["keygen", "--out", p(&key), "--seed", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let uid = "044e544147000001";
    let a = nfcbms(&["provision", "--key", p(&key), "--uid", uid]);
    let b = nfcbms(&["provision", "--key", p(&key), "--uid", uid]);
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);

    let tag: TagFile = serde_json::from_slice(&a.stdout).unwrap();
    let vk = KeyFile::load(&key).unwrap().verifying_key().unwrap();
    let sig = Signature::from_bytes(&hex::decode(&tag.signature).unwrap()).unwrap();
    assert!(vk.verify(&tag.uid.0, &sig));
}

#[test]
fn provision_rejects_zero_and_public_only_keys() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.json");
    nfcbms(&[
        "keygen",
        "--out",
        p(&good),
        "--public-out",
        p(&dir.path().join("pub.json")),
        "--seed",
        "1",
    ]);
    let public = KeyFile::load(&good).unwrap().public;

    let zero = dir.path().join("zero.json");
    std::fs::write(
        &zero,
        format!(
            r#"{{"private": "{}", "public": "{public}"}}"#,
            "00".repeat(16)
        ),
    )
    .unwrap();
    let o = nfcbms(&["provision", "--key", p(&zero), "--uid", "0102030405060708"]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));

    let o = nfcbms(&[
        "provision",
        "--key",
        p(&dir.path().join("pub.json")),
        "--uid",
        "0102030405060708",
    ]);
    assert_eq!(code(&o), 4);

    let garbage = dir.path().join("garbage.json");
    std::fs::write(&garbage, "not json").unwrap();
    let o = nfcbms(&[
        "provision",
        "--key",
        p(&garbage),
        "--uid",
        "0102030405060708",
    ]);
    assert_eq!(code(&o), 4);

    let o = nfcbms(&[
        "provision",
        "--key",
        p(&dir.path().join("missing.json")),
        "--uid",
        "0102030405060708",
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn simulate_zero_iterations_reports_init_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = nfcbms(&["simulate", "--iterations", "0", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("summary.json")).unwrap()).unwrap();
    let c = &summary["ccbs"][0];
    assert_eq!(c["iterations_completed"], 0);
    assert_eq!(c["records"], 0);
    assert_eq!(c["init_ms"].as_f64().unwrap(), 534.2);
    assert_eq!(c["auth"], "accepted");
}

#[test]
fn simulate_totals_follow_mode() {
    let dir = tempfile::tempdir().unwrap();
    let secure = dir.path().join("secure");
    let o = nfcbms(&["simulate", "--out", p(&secure)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s: serde_json::Value =
        serde_json::from_slice(&std::fs::read(secure.join("summary.json")).unwrap()).unwrap();
    let cycles = s["ccbs"][0]["cycles_total_ms"].as_f64().unwrap();
    assert!((cycles - 11_640.0).abs() / 11_640.0 < 0.03, "{cycles}");

    let ro = dir.path().join("ro");
    let o = nfcbms(&["simulate", "--mode", "readout-only", "--out", p(&ro)]);
    assert_eq!(code(&o), 0);
    let s: serde_json::Value =
        serde_json::from_slice(&std::fs::read(ro.join("summary.json")).unwrap()).unwrap();
    let total = s["ccbs"][0]["readout_total_ms"].as_f64().unwrap();
    assert!((total - 2_960.0).abs() / 2_960.0 < 0.05, "{total}");
    assert_eq!(s["ccbs"][0]["records"], 0);
    assert!(!ro.join("ccb-0/samples.log").exists());
}

#[test]
fn config_errors_carry_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{\n  \"iterations\": 5,\n  \"bogus\": 1\n}\n").unwrap();
    let o = nfcbms(&[
        "simulate",
        "--config",
        p(&cfg),
        "--out",
        p(&dir.path().join("o")),
    ]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains(":3:"), "{}", stderr(&o));

    std::fs::write(&cfg, r#"{"latency": {"authentication": -1.0}}"#).unwrap();
    let o = nfcbms(&[
        "simulate",
        "--config",
        p(&cfg),
        "--out",
        p(&dir.path().join("o")),
    ]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));

    let o = Command::new(env!("CARGO_BIN_EXE_nfcbms"))
        .args(["simulate", "--out", p(&dir.path().join("o"))])
        .env("NFCBMS_CONFIG", &cfg)
        .output()
        .unwrap();
    assert_eq!(code(&o), 3);
}

#[test]
fn log_verify_and_decrypt() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = nfcbms(&["simulate", "--iterations", "12", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let log = out.join("ccb-0/samples.log");
    let keys = out.join("session_keys.json");

    let o = nfcbms(&["log", "verify", p(&log), "--keys", p(&keys)]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains("12 records, 12 verified, 0 gaps"));

    let csv = dir.path().join("samples.csv");
    let o = nfcbms(&[
        "log",
        "decrypt",
        p(&log),
        "--keys",
        p(&keys),
        "--out",
        p(&csv),
    ]);
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 13);

    let mut raw = std::fs::read(&log).unwrap();
    raw[12 + 216 * 5 + 100] ^= 0x01;
    let tampered = dir.path().join("tampered.log");
    std::fs::write(&tampered, &raw).unwrap();
    let o = nfcbms(&["log", "verify", p(&tampered), "--keys", p(&keys)]);
    assert_eq!(code(&o), 1);
    assert!(
        stdout(&o).contains("record 5: integrity failure"),
        "{}",
        stdout(&o)
    );

    let wrong = dir.path().join("wrong.json");
    nfcbms(&[
        "keygen",
        "--kind",
        "session",
        "--out",
        p(&wrong),
        "--seed",
        "77",
    ]);
    let o = nfcbms(&["log", "verify", p(&log), "--keys", p(&wrong)]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("12 records, 0 verified"));

    let o = nfcbms(&[
        "log",
        "verify",
        p(&dir.path().join("nope.log")),
        "--keys",
        p(&keys),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn threat_runs_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("matrix.csv");
    let o = nfcbms(&["threat", "--all", "--report", p(&report)]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains("5/5 matched"));
    assert_eq!(std::fs::read_to_string(&report).unwrap().lines().count(), 6);

    let o = nfcbms(&["threat", "--id", "T5"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("1/1 matched"));

    let o = nfcbms(&["threat", "--all", "--disable", "C5"]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("4/5 matched"));

    assert_eq!(code(&nfcbms(&["threat", "--id", "T9"])), 64);
    assert_eq!(code(&nfcbms(&["threat"])), 64);
    assert_eq!(code(&nfcbms(&["frobnicate"])), 64);
}

#[test]
fn report_tables_prints_every_row() {
    let o = nfcbms(&["report", "tables"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("100 secure cycles"));
    assert!(text.contains("10000 readouts"));
    assert!(
        !text.lines().any(|l| l.trim_end().ends_with(" no")),
        "{text}"
    );

    let o = nfcbms(&["report", "tables", "--json"]);
    let rows: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(rows.as_array().unwrap().iter().all(|r| r["within"] == true));
}
