mod common;

use chrono::Duration;
use serde_json::{json, Value};
use wifiproof::service::AppState;
use wifiproof_core::netsets::{compute_stable_intersection, IntersectionConfig};
use wifiproof_core::verifier::issue_certificate;
use wifiproof_core::{LocationCertificate, ObservationStore, StableMap, TimeWindow, VerifierConfig};

use common::{fixed_clock, scenario, spawn};

fn client() -> reqwest::Client {
    reqwest::Client::new()
}

async fn post(base: &str, path: &str, body: impl serde::Serialize) -> (u16, Value) {
    let r = client().post(format!("{base}{path}")).json(&body).send().await.unwrap();
    (r.status().as_u16(), r.json().await.unwrap_or(Value::Null))
}

async fn post_raw(base: &str, path: &str, body: &'static str) -> (u16, Value) {
    let r = client()
        .post(format!("{base}{path}"))
        .header("content-type", "application/json")
        .body(body)
        .send()
        .await
        .unwrap();
    (r.status().as_u16(), r.json().await.unwrap_or(Value::Null))
}

fn state_at(now: chrono::DateTime<chrono::Utc>) -> AppState {
    AppState::new(ObservationStore::new(), None, VerifierConfig::default()).with_clock(fixed_clock(now))
}

#[tokio::test]
async fn health_and_empty_batch() {
    let srv = spawn(state_at(chrono::Utc::now())).await;
    let r: Value = client().get(format!("{}/health", srv.base)).send().await.unwrap().json().await.unwrap();
    assert_eq!(r["status"], "ok");
    let (code, body) = post(&srv.base, "/observations", json!([])).await;
    assert_eq!(code, 200);
    assert_eq!(body["accepted"], 0);
    assert_eq!(body["rejected"], 0);
}

#[tokio::test]
async fn malformed_payloads_are_400_with_reason() {
    let srv = spawn(state_at(chrono::Utc::now())).await;
    let (code, body) = post_raw(&srv.base, "/observations", "{not json").await;
    assert_eq!(code, 400);
    assert_eq!(body["error"], "MalformedPayload");
    let (code, body) = post_raw(&srv.base, "/claims", r#"{"device":"d"}"#).await;
    assert_eq!(code, 400);
    assert_eq!(body["error"], "MalformedPayload");
}

#[tokio::test]
async fn invalid_rows_are_counted_not_stored() {
    let srv = spawn(state_at(chrono::Utc::now())).await;
    let sc = scenario(1, Duration::minutes(10));
    let mut rows = vec![sc.rows[0].clone(), sc.rows[1].clone()];
    rows[1].level = Some(5);
    let (code, body) = post(&srv.base, "/observations", &rows).await;
    assert_eq!(code, 200);
    assert_eq!(body["accepted"], 1);
    assert_eq!(body["reasons"]["OutOfRangeField(level)"], 1);
}

#[tokio::test]
async fn claim_in_open_period_is_409() {
    let sc = scenario(2, Duration::minutes(10));
    let srv = spawn(state_at(sc.claim.time + Duration::hours(1))).await;
    let (code, body) = post(&srv.base, "/claims", &sc.claim).await;
    assert_eq!(code, 409);
    assert_eq!(body["error"], "PeriodOpen");
}

#[tokio::test]
async fn claim_without_fingerprint_is_503() {
    let sc = scenario(2, Duration::minutes(10));
    let srv = spawn(state_at(sc.claim.time + Duration::days(2))).await;
    let (code, body) = post(&srv.base, "/claims", &sc.claim).await;
    assert_eq!(code, 503);
    assert_eq!(body["error"], "NoFingerprint");
    let r = client().get(format!("{}/fingerprint", srv.base)).send().await.unwrap();
    assert_eq!(r.status().as_u16(), 404);
}

#[tokio::test]
async fn full_flow_matches_library_and_mismatch_is_200() {
    let sc = scenario(3, Duration::minutes(15));
    let now = sc.claim.time + Duration::days(2);
    let srv = spawn(state_at(now)).await;

    let (code, body) = post(&srv.base, "/observations", &sc.rows).await;
    assert_eq!(code, 200);
    assert_eq!(body["accepted"], sc.rows.len());
    let (code, fp) = post(&srv.base, "/fingerprint/compute", json!({"strategy": {"kind": "device_intersection"}})).await;
    assert_eq!(code, 200, "{fp}");

    let (code, cert) = post(&srv.base, "/claims", &sc.claim).await;
    assert_eq!(code, 200, "{cert}");
    assert_eq!(cert["proof"], true);
    assert_eq!(cert["proof_delta_seconds"], 15 * 60);

    // Same answer as the library on the same snapshot.
    let mut store = ObservationStore::new();
    store.append_batch(sc.rows.clone()).unwrap();
    let (a, b) = store.time_range().unwrap();
    let map = compute_stable_intersection(&store, &TimeWindow::epoch(a, b).unwrap(), IntersectionConfig::default()).unwrap();
    assert_eq!(serde_json::to_value(&map).unwrap(), fp);
    let lib = issue_certificate(&store, &sc.claim, &VerifierConfig::default(), &map, now).unwrap();
    assert_eq!(serde_json::to_value(&lib).unwrap(), cert);

    // Evidence from elsewhere: 200 with proof=false.
    let mut wrong = sc.claim.clone();
    wrong.evidence.clear();
    let (code, cert) = post(&srv.base, "/claims", &wrong).await;
    assert_eq!(code, 200);
    assert_eq!(cert["proof"], false);
    assert_eq!(cert["reason"], "LOCATION_MISMATCH");

    let mut unknown = sc.claim.clone();
    unknown.loc = "Nowhere".into();
    let (code, body) = post(&srv.base, "/claims", &unknown).await;
    assert_eq!(code, 404);
    assert_eq!(body["error"], "UnknownLocation");

    let got: StableMap = client().get(format!("{}/fingerprint", srv.base)).send().await.unwrap().json().await.unwrap();
    assert_eq!(got, map);
}

#[tokio::test]
async fn concurrent_claims_get_identical_certificates() {
    let sc = scenario(4, Duration::minutes(5));
    let srv = spawn(state_at(sc.claim.time + Duration::days(2))).await;
    post(&srv.base, "/observations", &sc.rows).await;
    post(&srv.base, "/fingerprint/compute", json!({"strategy": {"kind": "device_intersection"}})).await;
    let calls = (0..16).map(|_| {
        let (base, claim) = (srv.base.clone(), sc.claim.clone());
        async move { post(&base, "/claims", &claim).await }
    });
    let results = futures_join(calls).await;
    let first: LocationCertificate = serde_json::from_value(results[0].1.clone()).unwrap();
    for (code, body) in &results {
        assert_eq!(*code, 200);
        let c: LocationCertificate = serde_json::from_value(body.clone()).unwrap();
        assert_eq!(c, first);
    }
}

async fn futures_join<F: std::future::Future<Output = (u16, Value)> + Send + 'static>(
    futs: impl Iterator<Item = F>,
) -> Vec<(u16, Value)> {
    let handles: Vec<_> = futs.map(tokio::spawn).collect();
    let mut out = Vec::new();
    for h in handles {
        out.push(h.await.unwrap());
    }
    out
}

#[tokio::test]
async fn put_fingerprint_validates_and_persists() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fp.json");
    let state = state_at(chrono::Utc::now()).with_fingerprint_path(path.clone());
    let srv = spawn(state).await;
    let r = client()
        .put(format!("{}/fingerprint", srv.base))
        .header("content-type", "application/json")
        .body(r#"{"strategy":{"kind":"device_intersection"},"epoch":{"start":"2021-01-01T00:00:00Z","end":"2021-01-02T00:00:00Z","kind":"EPOCH"},"locations":{"A":["02:00:00:00:00:01"],"B":["02:00:00:00:00:01"]}}"#)
        .send()
        .await
        .unwrap();
    assert_eq!(r.status().as_u16(), 400);
    let good = r#"{"strategy":{"kind":"device_intersection"},"epoch":{"start":"2021-01-01T00:00:00Z","end":"2021-01-02T00:00:00Z","kind":"EPOCH"},"locations":{"A":["02:00:00:00:00:01"]}}"#;
    let r = client()
        .put(format!("{}/fingerprint", srv.base))
        .header("content-type", "application/json")
        .body(good)
        .send()
        .await
        .unwrap();
    assert_eq!(r.status().as_u16(), 200);
    let saved = StableMap::from_json(&std::fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(saved.len(), 1);
}
