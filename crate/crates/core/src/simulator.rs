//! Synthetic scan scenes with planted ground truth.
//!
//! A scene places stable access points at locations, transient hotspots with
//! explicit visibility windows, and devices that dwell at a location while
//! scanning at a fixed interval. Everything random comes from a ChaCha8
//! stream seeded by `SceneConfig::seed`, so a config always yields the same
//! observations.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use chrono::Duration;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::duration;
use crate::model::{
    validate_observation, Bssid, ChannelWidth, DeviceId, LocationId, NetworkId, Observation, ObservationId,
    RawObservation, SignalType, TimeWindow,
};

pub const SCAN_FREQUENCY_MHZ: i64 = 2412;
pub const LEVEL_RANGE_DBM: std::ops::RangeInclusive<i64> = -90..=-30;

/// Stream used for per-scan draws, kept apart from the identity stream so
/// adding a transient does not reshuffle detections.
const SCAN_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimulatorError {
    #[error("invalid scene config: {0}")]
    ConfigInvalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneLocation {
    pub id: LocationId,
    pub stable_ap_count: usize,
    /// Per-scan chance that each stable AP shows up.
    pub detection_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransientSpec {
    /// Generated when absent.
    #[serde(default)]
    pub bssid: Option<Bssid>,
    #[serde(default)]
    pub ssid: String,
    pub loc: LocationId,
    pub visibility: TimeWindow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Itinerary {
    pub device: DeviceId,
    pub loc: LocationId,
    pub dwell: TimeWindow,
    #[serde(with = "duration::iso")]
    pub scan_interval: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub seed: u64,
    pub horizon: TimeWindow,
    pub locations: Vec<SceneLocation>,
    #[serde(default)]
    pub transients: Vec<TransientSpec>,
    pub itineraries: Vec<Itinerary>,
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SimulatorError> {
        let bad = |m: String| Err(SimulatorError::ConfigInvalid(m));
        let mut ids = BTreeSet::new();
        for l in &self.locations {
            if l.id.as_str().is_empty() {
                return bad("empty location id".into());
            }
            if !ids.insert(&l.id) {
                return bad(format!("duplicate location `{}`", l.id));
            }
            if !(l.detection_probability > 0.0 && l.detection_probability <= 1.0) {
                return bad(format!("detection_probability at `{}` outside (0, 1]", l.id));
            }
        }
        let mut given = HashSet::new();
        for t in &self.transients {
            if !ids.contains(&t.loc) {
                return bad(format!("transient at undeclared location `{}`", t.loc));
            }
            if !self.horizon.contains_window(&t.visibility) {
                return bad(format!("transient visibility at `{}` leaves the horizon", t.loc));
            }
            if let Some(b) = t.bssid {
                if !given.insert(b) {
                    return bad(format!("transient bssid {b} listed twice"));
                }
            }
        }
        let mut by_device: BTreeMap<&DeviceId, Vec<&TimeWindow>> = BTreeMap::new();
        for it in &self.itineraries {
            if it.device.as_str().is_empty() {
                return bad("empty device id".into());
            }
            if !ids.contains(&it.loc) {
                return bad(format!("itinerary at undeclared location `{}`", it.loc));
            }
            if it.scan_interval < Duration::seconds(1) {
                return bad(format!("scan_interval for `{}` below one second", it.device));
            }
            if !self.horizon.contains_window(&it.dwell) {
                return bad(format!("dwell of `{}` leaves the horizon", it.device));
            }
            let prior = by_device.entry(&it.device).or_default();
            if prior.iter().any(|w| w.overlaps(&it.dwell)) {
                return bad(format!("overlapping dwells for `{}`", it.device));
            }
            prior.push(&it.dwell);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Planted stable APs; locations with none are absent.
    pub stable: BTreeMap<LocationId, BTreeSet<NetworkId>>,
    pub transient_visibility: BTreeMap<NetworkId, TimeWindow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedTransient {
    pub network: NetworkId,
    pub loc: LocationId,
    pub visibility: TimeWindow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub config: SceneConfig,
    pub ground_truth: GroundTruth,
    /// Stable APs per location with their SSIDs, in generation order.
    pub access_points: BTreeMap<LocationId, Vec<NetworkId>>,
    pub transients: Vec<PlantedTransient>,
}

/// Random locally administered unicast MAC.
fn random_bssid(rng: &mut ChaCha8Rng) -> Bssid {
    let mut b: [u8; 6] = rng.random();
    b[0] = (b[0] & 0xfc) | 0x02;
    Bssid::from_bytes(b)
}

pub fn generate_scene(config: SceneConfig) -> Result<Scene, SimulatorError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut used: HashSet<Bssid> = config.transients.iter().filter_map(|t| t.bssid).collect();
    let mut fresh = |rng: &mut ChaCha8Rng| loop {
        let b = random_bssid(rng);
        if used.insert(b) {
            break b;
        }
    };

    let mut access_points = BTreeMap::new();
    let mut truth = GroundTruth::default();
    for l in &config.locations {
        let aps: Vec<NetworkId> = (0..l.stable_ap_count)
            .map(|i| NetworkId::new(fresh(&mut rng), format!("{}-ap{i}", l.id)))
            .collect();
        if !aps.is_empty() {
            truth.stable.insert(l.id.clone(), aps.iter().cloned().collect());
        }
        access_points.insert(l.id.clone(), aps);
    }

    let transients: Vec<PlantedTransient> = config
        .transients
        .iter()
        .map(|t| {
            let bssid = t.bssid.unwrap_or_else(|| fresh(&mut rng));
            PlantedTransient {
                network: NetworkId::new(bssid, t.ssid.clone()),
                loc: t.loc.clone(),
                visibility: t.visibility,
            }
        })
        .collect();
    for t in &transients {
        truth.transient_visibility.insert(t.network.clone(), t.visibility);
    }

    Ok(Scene {
        config,
        ground_truth: truth,
        access_points,
        transients,
    })
}

/// Scan rows for every itinerary, ordered by time then device, with ids from 1.
pub fn simulate_scans(scene: &Scene) -> Vec<Observation> {
    let mut rng = ChaCha8Rng::seed_from_u64(scene.config.seed);
    rng.set_stream(SCAN_STREAM);
    let probability: BTreeMap<&LocationId, f64> = scene
        .config
        .locations
        .iter()
        .map(|l| (&l.id, l.detection_probability))
        .collect();

    let mut rows = Vec::new();
    for it in &scene.config.itineraries {
        let p = probability[&it.loc];
        let aps = &scene.access_points[&it.loc];
        let mut t = it.dwell.start();
        while t <= it.dwell.end() {
            for ap in aps {
                if p >= 1.0 || rng.random_bool(p) {
                    rows.push(scan_row(&mut rng, it, t, ap));
                }
            }
            for tr in scene.transients.iter().filter(|tr| tr.loc == it.loc) {
                if tr.visibility.contains(t) {
                    rows.push(scan_row(&mut rng, it, t, &tr.network));
                }
            }
            t += it.scan_interval;
        }
    }
    rows.sort_by(|a, b| (a.obs_time, &a.device).cmp(&(b.obs_time, &b.device)));

    rows.into_iter()
        .enumerate()
        .map(|(i, mut raw)| {
            raw.id = Some(ObservationId(i as u64 + 1));
            validate_observation(raw).expect("simulated rows are valid")
        })
        .collect()
}

fn scan_row(
    rng: &mut ChaCha8Rng,
    it: &Itinerary,
    t: chrono::DateTime<chrono::Utc>,
    net: &NetworkId,
) -> RawObservation {
    RawObservation {
        id: None,
        obs_time: t,
        location: it.loc.to_string(),
        device: it.device.to_string(),
        signal_type: SignalType::Wifi,
        bssid: net.bssid.to_string(),
        ssid: net.ssid.clone(),
        capabilities: "[ESS]".into(),
        frequency: SCAN_FREQUENCY_MHZ,
        level: Some(rng.random_range(LEVEL_RANGE_DBM)),
        centerfreq0: 0,
        centerfreq1: 0,
        channel_width: ChannelWidth::Mhz20,
        position: None,
    }
}

/// Parameterised scenes shared by tests, benches and the acceptance suite.
pub mod scenarios {
    use super::*;
    use chrono::{DateTime, Utc};

    pub fn base_time() -> DateTime<Utc> {
        "2021-03-01T00:00:00Z".parse().expect("literal")
    }

    fn span(start: DateTime<Utc>, end: DateTime<Utc>) -> TimeWindow {
        TimeWindow::span(start, end).expect("ordered")
    }

    /// Several locations, each visited by 2–4 devices with detection
    /// probability 1. Transients are only visible while the first device is
    /// alone, so every device-intersection equals the planted stable set.
    pub fn round_trip(seed: u64) -> SceneConfig {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0001);
        let base = base_time();
        let n_locations = rng.random_range(2..=5);
        let mut locations = Vec::new();
        let mut transients = Vec::new();
        let mut itineraries = Vec::new();
        for j in 0..n_locations {
            let id = LocationId::new(format!("loc{j}"));
            let day = base + Duration::days(j as i64);
            let stable_ap_count = rng.random_range(0..=30);
            locations.push(SceneLocation {
                id: id.clone(),
                stable_ap_count,
                detection_probability: 1.0,
            });
            let devices = rng.random_range(2..=4);
            for d in 0..devices {
                let start = if d == 0 { day } else { day + Duration::hours(1) };
                let end = day + Duration::hours(2) + Duration::minutes(rng.random_range(0..60));
                itineraries.push(Itinerary {
                    device: DeviceId::new(format!("dev{j}-{d}")),
                    loc: id.clone(),
                    dwell: span(start, end),
                    scan_interval: Duration::seconds(rng.random_range(30..=300)),
                });
            }
            // Without stable APs the other devices record nothing, which would
            // leave the first device's transients as the whole intersection.
            let n_transients = if stable_ap_count == 0 { 0 } else { rng.random_range(0..=3) };
            for _ in 0..n_transients {
                let from = day + Duration::minutes(rng.random_range(0..30));
                transients.push(TransientSpec {
                    bssid: None,
                    ssid: String::new(),
                    loc: id.clone(),
                    visibility: span(from, from + Duration::minutes(rng.random_range(1..=29))),
                });
            }
        }
        SceneConfig {
            seed,
            horizon: TimeWindow::epoch(base, base + Duration::days(7)).expect("ordered"),
            locations,
            transients,
            itineraries,
        }
    }

    /// A scene whose claim should certify at the smallest delta ≥ `half_width`.
    pub struct TimeBoundScene {
        pub config: SceneConfig,
        pub claim_time: DateTime<Utc>,
        pub claim_loc: LocationId,
        pub prover: DeviceId,
        pub half_width: Duration,
    }

    /// Hotspot visible over `claim_time ± half_width` at location `L`.
    /// Witness `W1` leaves at exactly `claim_time - half_width`, witness `W2`
    /// arrives at exactly `claim_time + half_width`, both scanning on a grid
    /// that lands on those instants. A background device visits `L` on another
    /// day so the hotspot is not part of the intersection fingerprint, and a
    /// second location `M` gives the estimator something to reject.
    pub fn time_bound(seed: u64, half_width: Duration) -> TimeBoundScene {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0002);
        let base = base_time();
        let claim_time = base + Duration::days(1) + Duration::hours(12);
        let loc = LocationId::new("L");
        let other = LocationId::new("M");
        let interval = Duration::seconds(30 * rng.random_range(1..=4));
        let steps = rng.random_range(60..=180);

        let w1_end = claim_time - half_width;
        let w2_start = claim_time + half_width;
        let itineraries = vec![
            Itinerary {
                device: "W1".into(),
                loc: loc.clone(),
                dwell: span(w1_end - interval * steps, w1_end),
                scan_interval: interval,
            },
            Itinerary {
                device: "W2".into(),
                loc: loc.clone(),
                dwell: span(w2_start, w2_start + interval * steps),
                scan_interval: interval,
            },
            Itinerary {
                device: "P".into(),
                loc: loc.clone(),
                dwell: span(claim_time - Duration::minutes(2), claim_time + Duration::minutes(2)),
                scan_interval: Duration::seconds(20),
            },
            Itinerary {
                device: "B".into(),
                loc: loc.clone(),
                dwell: span(base + Duration::hours(9), base + Duration::hours(11)),
                scan_interval: Duration::seconds(60),
            },
            Itinerary {
                device: "B".into(),
                loc: other.clone(),
                dwell: span(base + Duration::hours(13), base + Duration::hours(15)),
                scan_interval: Duration::seconds(60),
            },
            Itinerary {
                device: "C".into(),
                loc: other.clone(),
                dwell: span(base + Duration::hours(14), base + Duration::hours(16)),
                scan_interval: Duration::seconds(90),
            },
        ];
        let config = SceneConfig {
            seed,
            horizon: TimeWindow::epoch(base, base + Duration::days(3)).expect("ordered"),
            locations: vec![
                SceneLocation {
                    id: loc.clone(),
                    stable_ap_count: rng.random_range(5..=20),
                    detection_probability: rng.random_range(0.85..=1.0),
                },
                SceneLocation {
                    id: other,
                    stable_ap_count: rng.random_range(5..=20),
                    detection_probability: rng.random_range(0.85..=1.0),
                },
            ],
            transients: vec![TransientSpec {
                bssid: None,
                ssid: "hotspot".into(),
                loc: loc.clone(),
                visibility: span(claim_time - half_width, claim_time + half_width),
            }],
            itineraries,
        };
        TimeBoundScene {
            config,
            claim_time,
            claim_loc: loc,
            prover: "P".into(),
            half_width,
        }
    }
}
