use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use chrono::Duration;
use serde_json::Value;
use wifiproof_core::simulator::{scenarios, GroundTruth};
use wifiproof_core::store::COLUMNS;
use wifiproof_core::{LocationClaim, NetworkId, ObservationStore, StableMap, TimeWindow};

fn wifiproof(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wifiproof")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const ROW: &str = "dev1,2020-01-10,10:00:00,Alvalade,38.75,-9.14,80,5,cafe,aa:bb:cc:00:00:01,[ESS],2412,-60,0,0,0";

#[test]
fn ingest_without_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    let pattern = dir.path().join("*.csv");
    let o = wifiproof(&["ingest", "--store", s(&store), s(&pattern)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no input"), "{}", stderr(&o));
}

#[test]
fn ingest_reports_reasons_per_file() {
    let dir = tempfile::tempdir().unwrap();
    let header = COLUMNS.join(",");
    std::fs::write(dir.path().join("a.csv"), format!("{header}\n{ROW}\n")).unwrap();
    let bad_level = ROW.replace(",-60,", ",7,");
    let bad_bssid = ROW.replace("aa:bb:cc:00:00:01", "zz");
    std::fs::write(dir.path().join("b.csv"), format!("{header}\n{ROW}\n{bad_level}\n{bad_bssid}\n")).unwrap();
    let store = dir.path().join("store");
    let o = wifiproof(&["ingest", "--store", s(&store), &format!("{}/*.csv", s(dir.path()))]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("a.csv: accepted 1 rejected 0\n"), "{out}");
    assert!(out.contains("b.csv: accepted 1 rejected 2 ("), "{out}");
    assert!(out.contains("OutOfRangeField(level)=1"), "{out}");
    assert!(out.contains("total: accepted 2 rejected 2"), "{out}");
    assert_eq!(ObservationStore::open(&store).unwrap().len(), 2);
}

#[test]
fn ingest_missing_column_fails() {
    let dir = tempfile::tempdir().unwrap();
    let header: Vec<&str> = COLUMNS.iter().copied().filter(|c| *c != "BSSID").collect();
    let f = dir.path().join("x.csv");
    std::fs::write(&f, format!("{}\n", header.join(","))).unwrap();
    let o = wifiproof(&["ingest", "--store", s(&dir.path().join("store")), s(&f)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("BSSID"), "{}", stdout(&o));
}

#[test]
fn compute_stable_on_empty_epoch_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("a.csv");
    std::fs::write(&f, format!("{}\n{ROW}\n", COLUMNS.join(","))).unwrap();
    let store = dir.path().join("store");
    assert!(wifiproof(&["ingest", "--store", s(&store), s(&f)]).status.success());
    let o = wifiproof(&[
        "compute-stable",
        "--store",
        s(&store),
        "--from",
        "2021-01-01",
        "--to",
        "2021-01-02",
        "--out",
        s(&dir.path().join("fp.json")),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn simulate_ingest_intersection_recovers_planted_sets() {
    for seed in [3, 17, 40] {
        let dir = tempfile::tempdir().unwrap();
        let scene = dir.path().join("scene.json");
        std::fs::write(&scene, serde_json::to_string(&scenarios::round_trip(seed)).unwrap()).unwrap();
        let csv = dir.path().join("scans.csv");
        let truth = dir.path().join("truth.json");
        let o = wifiproof(&["simulate", "--scene", s(&scene), "--out", s(&csv), "--truth", s(&truth)]);
        assert!(o.status.success(), "{}", stderr(&o));

        let store = dir.path().join("store");
        let o = wifiproof(&["ingest", "--store", s(&store), s(&csv)]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).contains("rejected 0"));

        let fp = dir.path().join("fp.json");
        let o = wifiproof(&["compute-stable", "--store", s(&store), "--strategy", "intersection", "--lax", "--out", s(&fp)]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).starts_with("Location"));

        let truth: GroundTruth = serde_json::from_str(&std::fs::read_to_string(&truth).unwrap()).unwrap();
        let map = StableMap::from_json(&std::fs::read_to_string(&fp).unwrap()).unwrap();
        let got: BTreeMap<_, _> = map.iter().map(|(l, s)| (l.clone(), s.clone())).collect();
        assert_eq!(got, truth.stable, "seed {seed}");
    }
}

#[test]
fn verify_claim_prints_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let tb = scenarios::time_bound(8, Duration::minutes(10));
    let scene = dir.path().join("scene.json");
    std::fs::write(&scene, serde_json::to_string(&tb.config).unwrap()).unwrap();
    let csv = dir.path().join("scans.csv");
    assert!(wifiproof(&["simulate", "--scene", s(&scene), "--out", s(&csv)]).status.success());
    let store = dir.path().join("store");
    assert!(wifiproof(&["ingest", "--store", s(&store), s(&csv)]).status.success());
    let fp = dir.path().join("fp.json");
    let o = wifiproof(&["compute-stable", "--store", s(&store), "--strategy", "intersection", "--out", s(&fp)]);
    assert!(o.status.success(), "{}", stderr(&o));

    let loaded = ObservationStore::open(&store).unwrap();
    let near = TimeWindow::around(tb.claim_time, Duration::minutes(1));
    let evidence: Vec<NetworkId> = loaded
        .at_location(&tb.claim_loc, Some(&near))
        .filter(|o| o.device == tb.prover)
        .map(|o| o.transmitter.clone())
        .collect();
    let claim = LocationClaim::new(tb.prover, tb.claim_loc, tb.claim_time, evidence, tb.claim_time).unwrap();
    let claim_file = dir.path().join("claim.json");
    std::fs::write(&claim_file, serde_json::to_string(&claim).unwrap()).unwrap();

    let issued = (tb.claim_time + Duration::days(2)).to_rfc3339();
    let args = ["verify-claim", "--store", s(&store), "--fingerprint", s(&fp), "--claim", s(&claim_file), "--issued-at", &issued];
    let o = wifiproof(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let cert: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(cert["proof"], true);
    assert_eq!(cert["proof_delta_seconds"], 600);
    assert_eq!(cert["reason"], Value::Null);
    // Deterministic for a fixed issue time.
    assert_eq!(stdout(&wifiproof(&args)), stdout(&o));
}

#[test]
fn simulate_writes_csv_to_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene.json");
    std::fs::write(&scene, serde_json::to_string(&scenarios::round_trip(5)).unwrap()).unwrap();
    let o = wifiproof(&["simulate", "--scene", s(&scene)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(out.lines().next().unwrap(), COLUMNS.join(","));
    assert_eq!(stdout(&wifiproof(&["simulate", "--scene", s(&scene)])), out);
}

#[test]
fn bad_scene_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = scenarios::round_trip(1);
    cfg.locations[0].detection_probability = 0.0;
    let scene = dir.path().join("scene.json");
    std::fs::write(&scene, serde_json::to_string(&cfg).unwrap()).unwrap();
    let o = wifiproof(&["simulate", "--scene", s(&scene)]);
    assert_eq!(o.status.code(), Some(1));
}
