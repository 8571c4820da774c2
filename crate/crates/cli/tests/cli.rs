use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use m2lads_core::export::{lm_file_name, read_learner_matrix_csv};
use m2lads_core::store::{FileStore, SessionStore};

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/session_ok/manifest.json")
}

fn m2lads(store: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_m2lads"))
        .args(args)
        .env("M2LADS_STORE_ROOT", store)
        .env("M2LADS_FAKE_NOW", "1700000000000")
        .env_remove("RUST_LOG")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn ingest_prints_session_id() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    let out = m2lads(&store, &["ingest", fixture().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(stdout(&out).trim(), "session-ok");
    assert!(store.join("sessions/session-ok/record.json").is_file());

    // duplicate ingest is a data error
    let out = m2lads(&store, &["ingest", fixture().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr(&out).lines().count(), 1, "{}", stderr(&out));
}

#[test]
fn ingest_missing_manifest_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = m2lads(dir.path(), &["ingest", "missing.json"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert_eq!(err.lines().count(), 1);
    assert!(err.contains("missing.json"), "{err}");
}

#[test]
fn invalid_inputs_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{not json").unwrap();
    let out = m2lads(dir.path(), &["ingest", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));

    let mut manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(fixture()).unwrap()).unwrap();
    manifest["eeg_csv_path"] = "does-not-exist.csv".into();
    let base = fixture().parent().unwrap().to_path_buf();
    for key in [
        "learner_profile_path",
        "edx_log_path",
        "logge_csv_path",
        "pretest_answers_path",
        "pretest_key_path",
        "boundary_config_path",
    ] {
        let p = base.join(manifest[key].as_str().unwrap());
        manifest[key] = p.to_str().unwrap().into();
    }
    let m = dir.path().join("m.json");
    std::fs::write(&m, serde_json::to_vec(&manifest).unwrap()).unwrap();
    let out = m2lads(dir.path(), &["validate", m.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));

    let out = m2lads(dir.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    let out = m2lads(dir.path(), &["export", "x", "--format", "xml"]);
    assert_eq!(out.status.code(), Some(1));
    let out = m2lads(dir.path(), &["ingest", fixture().to_str().unwrap(), "--grid-ms", "0"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn validate_does_not_touch_store() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    let out = m2lads(&store, &["validate", fixture().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).starts_with("ok: session-ok"));
    assert!(!store.exists());
}

#[test]
fn export_csv_round_trips_learner_matrices() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    assert_eq!(
        m2lads(&store, &["ingest", fixture().to_str().unwrap()]).status.code(),
        Some(0)
    );
    let out_dir = dir.path().join("csv");
    let out = m2lads(
        &store,
        &[
            "export",
            "session-ok",
            "--format",
            "csv",
            "--out",
            out_dir.to_str().unwrap(),
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    let record = FileStore::open_existing(&store)
        .unwrap()
        .get_session("session-ok")
        .unwrap();
    for (kind, lm) in &record.learner_matrices {
        let file = std::fs::File::open(out_dir.join(lm_file_name(*kind))).unwrap();
        let back = read_learner_matrix_csv(file, *kind, record.window).unwrap();
        assert_eq!(&back, lm, "{kind}");
    }
    for name in ["correlations.csv", "performance.csv", "summaries.csv"] {
        assert!(out_dir.join(name).is_file());
    }

    let json_dir = dir.path().join("json");
    let out = m2lads(
        &store,
        &[
            "export",
            "session-ok",
            "--format",
            "json",
            "--out",
            json_dir.to_str().unwrap(),
        ],
    );
    assert_eq!(out.status.code(), Some(0));
    let analytics: serde_json::Value =
        serde_json::from_slice(&std::fs::read(json_dir.join("analytics.json")).unwrap()).unwrap();
    assert_eq!(analytics["session_id"], "session-ok");

    let out = m2lads(
        &store,
        &["export", "nope", "--format", "csv", "--out", json_dir.to_str().unwrap()],
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn export_without_store_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = m2lads(&dir.path().join("absent"), &["export", "x", "--format", "csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn ingest_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(
        m2lads(&a, &["ingest", fixture().to_str().unwrap()]).status.code(),
        Some(0)
    );
    assert_eq!(
        m2lads(&b, &["ingest", fixture().to_str().unwrap()]).status.code(),
        Some(0)
    );
    let ra = std::fs::read(a.join("sessions/session-ok/record.json")).unwrap();
    let rb = std::fs::read(b.join("sessions/session-ok/record.json")).unwrap();
    assert_eq!(ra, rb);
}

#[test]
fn window_override_changes_record() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let f = fixture();
    assert_eq!(m2lads(&a, &["ingest", f.to_str().unwrap()]).status.code(), Some(0));
    assert_eq!(
        m2lads(&b, &["ingest", f.to_str().unwrap(), "--window-ms", "5000"])
            .status
            .code(),
        Some(0)
    );
    let ra = FileStore::open_existing(&a).unwrap().get_session("session-ok").unwrap();
    let rb = FileStore::open_existing(&b).unwrap().get_session("session-ok").unwrap();
    let kind = m2lads_core::SignalKind::HeartRate;
    assert_eq!(
        ra.learner_matrices[&kind].rows.len(),
        rb.learner_matrices[&kind].rows.len()
    );
    assert_ne!(ra.learner_matrices[&kind], rb.learner_matrices[&kind]);
}
