#![allow(dead_code)]

use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use tokio::sync::oneshot;
use wifiproof::service::{serve, AppState};
use wifiproof_core::simulator::{generate_scene, scenarios, simulate_scans};
use wifiproof_core::{LocationClaim, NetworkId, Observation, RawObservation, TimeWindow};

pub struct Server {
    pub base: String,
    stop: Option<oneshot::Sender<()>>,
}

impl Drop for Server {
    fn drop(&mut self) {
        if let Some(s) = self.stop.take() {
            let _ = s.send(());
        }
    }
}

pub async fn spawn(state: AppState) -> Server {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = oneshot::channel();
    tokio::spawn(serve(listener, Arc::new(state), async {
        let _ = rx.await;
    }));
    Server {
        base: format!("http://{addr}"),
        stop: Some(tx),
    }
}

pub fn fixed_clock(t: DateTime<Utc>) -> wifiproof::service::Clock {
    Arc::new(move || t)
}

/// A simulated time-bound scene plus the claim its prover would submit.
pub struct Scenario {
    pub rows: Vec<RawObservation>,
    pub claim: LocationClaim,
    pub half_width: Duration,
}

pub fn scenario(seed: u64, half_width: Duration) -> Scenario {
    let tb = scenarios::time_bound(seed, half_width);
    let scene = generate_scene(tb.config.clone()).unwrap();
    let obs: Vec<Observation> = simulate_scans(&scene);
    let near = TimeWindow::around(tb.claim_time, Duration::minutes(1));
    let evidence: Vec<NetworkId> = obs
        .iter()
        .filter(|o| o.device == tb.prover && o.location == tb.claim_loc && near.contains(o.obs_time))
        .map(|o| o.transmitter.clone())
        .collect();
    let claim = LocationClaim::new(tb.prover, tb.claim_loc, tb.claim_time, evidence, tb.claim_time).unwrap();
    Scenario {
        rows: obs.into_iter().map(RawObservation::from).collect(),
        claim,
        half_width,
    }
}
