//! One PASS/FAIL/SKIP line per acceptance criterion. Exits nonzero on any FAIL.
//!
//! Dataset criteria (1-5) run only when `LXSPOTS_DIR` points at the published
//! scan files; the remaining criteria need nothing external.

mod common;

use std::time::{Duration as StdDuration, Instant};

use chrono::Duration;
use serde_json::{json, Value};
use wifiproof::lxspots;
use wifiproof_core::netsets::{compute_stable_intersection, IntersectionConfig};
use wifiproof_core::simulator::{generate_scene, scenarios, simulate_scans};
use wifiproof_core::store::DEFAULT_TIMEZONE;
use wifiproof_core::verifier::{issue_certificate, time_bound_proof};
use wifiproof_core::{LocationClaim, NetworkId, ObservationStore, RawObservation, TimeWindow, VerifierConfig};
use wifiproof_oracle::{check, gen::random_case};

const ORACLE_CASES: u64 = 500;
const ROUND_TRIP_SCENES: u64 = 100;
const TIME_BOUND_SCENES: u64 = 100;
const TIME_BOUND_MIN_RATE: f64 = 0.95;
const HALF_WIDTHS_MIN: [i64; 4] = [5, 10, 15, 30];
const INVARIANT_CASES: u64 = 500;
const DATASET_TOTALS_BUDGET: StdDuration = StdDuration::from_secs(10);
const SERVICE_BUDGET: StdDuration = StdDuration::from_secs(5);

enum Verdict {
    Pass,
    Fail,
    Skip,
}

struct Report {
    failed: usize,
}

impl Report {
    fn line(&mut self, v: Verdict, name: &str, detail: impl std::fmt::Display) {
        let tag = match v {
            Verdict::Pass => "PASS",
            Verdict::Fail => {
                self.failed += 1;
                "FAIL"
            }
            Verdict::Skip => "SKIP",
        };
        println!("{tag} {name}: {detail}");
    }

    fn check(&mut self, pass: bool, name: &str, detail: impl std::fmt::Display) {
        self.line(if pass { Verdict::Pass } else { Verdict::Fail }, name, detail);
    }
}

fn dataset(r: &mut Report) {
    let names = [
        "1 dataset totals (exact)",
        "2 stable-set sizes",
        "3 stable identification",
        "4a volatile aggregate %",
        "4b location table cells",
        "5 device table rows",
    ];
    let Some(dir) = std::env::var_os("LXSPOTS_DIR") else {
        for n in names {
            r.line(Verdict::Skip, n, "LXSPOTS_DIR not set");
        }
        return;
    };
    let dir = std::path::PathBuf::from(dir);
    let t0 = Instant::now();
    let loaded = lxspots::load_dir(&dir, DEFAULT_TIMEZONE)
        .and_then(|(store, _)| Ok((lxspots::training_window(&store, DEFAULT_TIMEZONE)?, store)));
    let (training, store) = match loaded {
        Ok(v) => v,
        Err(e) => {
            for n in names {
                r.line(Verdict::Fail, n, format!("{e:#}"));
            }
            return;
        }
    };
    let totals = lxspots::check_totals(&store, &training);
    let elapsed = t0.elapsed();
    r.check(
        totals.pass && elapsed < DATASET_TOTALS_BUDGET,
        &totals.name,
        format!("{} in {:.2}s", totals.detail, elapsed.as_secs_f64()),
    );
    match lxspots::run_all(&dir, DEFAULT_TIMEZONE) {
        Ok(lines) => {
            for l in lines.into_iter().skip(1) {
                r.check(l.pass, &l.name, &l.detail);
            }
        }
        Err(e) => {
            for n in &names[1..] {
                r.line(Verdict::Fail, n, format!("{e:#}"));
            }
        }
    }
}

fn oracle_equivalence(r: &mut Report) {
    let mut checks = 0;
    let mut first_err = None;
    let mut bad = 0;
    for seed in 0..ORACLE_CASES {
        match check::equivalence(&random_case(seed)) {
            Ok(n) => checks += n,
            Err(e) => {
                bad += 1;
                first_err.get_or_insert(e);
            }
        }
    }
    r.check(
        bad == 0,
        "6a oracle equivalence",
        format!(
            "{} cases, {checks} comparisons, {bad} disagreements{}",
            ORACLE_CASES,
            first_err.map_or(String::new(), |e| format!(" (first: {e})"))
        ),
    );
}

fn load(obs: Vec<wifiproof_core::Observation>) -> ObservationStore {
    let mut store = ObservationStore::new();
    store.append_batch(obs.into_iter().map(RawObservation::from)).unwrap();
    store
}

fn round_trip(r: &mut Report) {
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    let mut errors = 0;
    for seed in 0..ROUND_TRIP_SCENES {
        let scene = generate_scene(scenarios::round_trip(seed)).unwrap();
        assert!(scene.config.locations.iter().all(|l| l.detection_probability == 1.0));
        let store = load(simulate_scans(&scene));
        let lax = IntersectionConfig {
            strict_stable_asserts: false,
        };
        let Ok(map) = compute_stable_intersection(&store, &scene.config.horizon, lax) else {
            errors += 1;
            continue;
        };
        for (loc, planted) in &scene.ground_truth.stable {
            let got = map.get(loc).cloned().unwrap_or_default();
            tp += got.intersection(planted).count();
            fp += got.difference(planted).count();
            fneg += planted.difference(&got).count();
        }
    }
    let precision = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fneg == 0 { 1.0 } else { tp as f64 / (tp + fneg) as f64 };
    r.check(
        errors == 0 && precision == 1.0 && recall == 1.0,
        "6b simulator round-trip",
        format!("{ROUND_TRIP_SCENES} scenes, precision {precision:.4}, recall {recall:.4}, errors {errors}"),
    );
}

fn claim_for(store: &ObservationStore, tb: &scenarios::TimeBoundScene) -> LocationClaim {
    let near = TimeWindow::around(tb.claim_time, Duration::minutes(1));
    let evidence: Vec<NetworkId> = store
        .at_location(&tb.claim_loc, Some(&near))
        .filter(|o| o.device == tb.prover)
        .map(|o| o.transmitter.clone())
        .collect();
    LocationClaim::new(tb.prover.clone(), tb.claim_loc.clone(), tb.claim_time, evidence, tb.claim_time).unwrap()
}

fn time_bound_recovery(r: &mut Report) {
    let config = VerifierConfig::default();
    for w in HALF_WIDTHS_MIN {
        let half = Duration::minutes(w);
        let want = *config.deltas.iter().filter(|d| **d >= half).min().unwrap();
        let mut hits = 0;
        let mut misses = Vec::new();
        for seed in 0..TIME_BOUND_SCENES {
            let tb = scenarios::time_bound(seed, half);
            let scene = generate_scene(tb.config.clone()).unwrap();
            let store = load(simulate_scans(&scene));
            let map = compute_stable_intersection(&store, &scene.config.horizon, IntersectionConfig::default()).unwrap();
            let claim = claim_for(&store, &tb);
            let proof = time_bound_proof(&store, &claim, &config, &map).unwrap();
            if proof.proof && proof.proof_delta == want {
                hits += 1;
            } else {
                misses.push((seed, proof.proof_delta.num_minutes()));
            }
        }
        let rate = hits as f64 / TIME_BOUND_SCENES as f64;
        r.check(
            rate >= TIME_BOUND_MIN_RATE,
            &format!("6c time-bound recovery w={w}min (≥{:.0}%)", 100.0 * TIME_BOUND_MIN_RATE),
            format!(
                "{hits}/{TIME_BOUND_SCENES} at {} min; misses (seed, delta min) {misses:?}",
                want.num_minutes()
            ),
        );
    }
}

fn invariant_battery(r: &mut Report) {
    let mut checks = 0;
    let mut first_err = None;
    for seed in 0..INVARIANT_CASES {
        match check::invariants(&random_case(seed)) {
            Ok(n) => checks += n,
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    // Certificates from the planted scenes as well.
    let config = VerifierConfig::default();
    for seed in 0..20 {
        let tb = scenarios::time_bound(seed, Duration::minutes(10));
        let scene = generate_scene(tb.config.clone()).unwrap();
        let store = load(simulate_scans(&scene));
        let map = compute_stable_intersection(&store, &scene.config.horizon, IntersectionConfig::default()).unwrap();
        let claim = claim_for(&store, &tb);
        let cert = issue_certificate(&store, &claim, &config, &map, tb.claim_time + Duration::days(2)).unwrap();
        match cert.check_invariants() {
            Ok(()) => checks += 1,
            Err(e) => {
                first_err.get_or_insert(format!("scene {seed}: {e}"));
            }
        }
    }
    r.check(
        first_err.is_none(),
        "6d invariant battery",
        format!(
            "{checks} assertions{}",
            first_err.map_or(String::new(), |e| format!(", first violation: {e}"))
        ),
    );
}

async fn service_flow() -> Result<(Value, StdDuration), String> {
    let t0 = Instant::now();
    let sc = common::scenario(11, Duration::minutes(15));
    let state = wifiproof::service::AppState::new(ObservationStore::new(), None, VerifierConfig::default())
        .with_clock(common::fixed_clock(sc.claim.time + Duration::days(2)));
    let srv = common::spawn(state).await;
    let http = reqwest::Client::new();
    let send = |path: &str, body: Value| {
        let req = http.post(format!("{}{path}", srv.base)).json(&body);
        async move {
            let resp = req.send().await.map_err(|e| e.to_string())?;
            let code = resp.status().as_u16();
            let v: Value = resp.json().await.map_err(|e| e.to_string())?;
            if code == 200 {
                Ok(v)
            } else {
                Err(format!("HTTP {code}: {v}"))
            }
        }
    };
    send("/observations", serde_json::to_value(&sc.rows).unwrap()).await?;
    send("/fingerprint/compute", json!({"strategy": {"kind": "device_intersection"}})).await?;
    let cert = send("/claims", serde_json::to_value(&sc.claim).unwrap()).await?;
    Ok((cert, t0.elapsed()))
}

fn service(r: &mut Report) {
    let rt = tokio::runtime::Runtime::new().unwrap();
    let name = "7 end-to-end service";
    match rt.block_on(service_flow()) {
        Ok((cert, elapsed)) => {
            let pass = cert["proof"] == true && cert["proof_delta_seconds"] == 900 && elapsed < SERVICE_BUDGET;
            r.check(
                pass,
                name,
                format!(
                    "proof={} proof_delta_seconds={} (want 900) in {:.2}s (budget {}s)",
                    cert["proof"],
                    cert["proof_delta_seconds"],
                    elapsed.as_secs_f64(),
                    SERVICE_BUDGET.as_secs()
                ),
            );
        }
        Err(e) => r.line(Verdict::Fail, name, e),
    }
}

fn main() {
    let mut r = Report { failed: 0 };
    dataset(&mut r);
    oracle_equivalence(&mut r);
    round_trip(&mut r);
    time_bound_recovery(&mut r);
    invariant_battery(&mut r);
    service(&mut r);
    if r.failed > 0 {
        println!("{} criteria failed", r.failed);
        std::process::exit(1);
    }
}
