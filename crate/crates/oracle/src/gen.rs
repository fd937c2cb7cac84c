//! Seeded random observation sets small enough for the nested-loop oracles.

use chrono::{DateTime, Duration, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wifiproof_core::{Bssid, ChannelWidth, DeviceId, LocationId, NetworkId, RawObservation, SignalType};

pub const MAX_OBSERVATIONS: usize = 200;

#[derive(Debug, Clone)]
pub struct Case {
    pub seed: u64,
    pub base: DateTime<Utc>,
    pub horizon: Duration,
    pub locations: Vec<LocationId>,
    pub devices: Vec<DeviceId>,
    pub networks: Vec<NetworkId>,
    pub raws: Vec<RawObservation>,
}

pub fn raw(time: DateTime<Utc>, loc: &LocationId, dev: &DeviceId, net: &NetworkId) -> RawObservation {
    RawObservation {
        id: None,
        obs_time: time,
        location: loc.to_string(),
        device: dev.to_string(),
        signal_type: SignalType::Wifi,
        bssid: net.bssid.to_string(),
        ssid: net.ssid.clone(),
        capabilities: String::new(),
        frequency: 2437,
        level: Some(-60),
        centerfreq0: 0,
        centerfreq1: 0,
        channel_width: ChannelWidth::Mhz20,
        position: None,
    }
}

/// Up to 200 rows over a few hours. Each location prefers its own slice of
/// the network pool so fingerprints are non-trivial, but any network can
/// turn up anywhere.
pub fn random_case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: DateTime<Utc> = "2020-06-01T08:00:00Z".parse().expect("literal");
    let horizon = Duration::hours(4);
    let locations: Vec<LocationId> = (0..rng.random_range(1..=4)).map(|i| LocationId::new(format!("L{i}"))).collect();
    let devices: Vec<DeviceId> = (0..rng.random_range(2..=5)).map(|i| DeviceId::new(format!("D{i}"))).collect();
    let networks: Vec<NetworkId> = (0..rng.random_range(4..=24u8))
        .map(|i| NetworkId::new(Bssid::from_bytes([0x02, 0, 0, 0, i / 7, i]), format!("net{i}")))
        .collect();
    let n = rng.random_range(0..=MAX_OBSERVATIONS);
    let slice = networks.len().div_ceil(locations.len());
    let raws = (0..n)
        .map(|_| {
            let li = rng.random_range(0..locations.len());
            let net = if rng.random_bool(0.7) {
                let lo = (li * slice).min(networks.len() - 1);
                let hi = ((li + 1) * slice).min(networks.len());
                &networks[rng.random_range(lo..hi.max(lo + 1))]
            } else {
                &networks[rng.random_range(0..networks.len())]
            };
            let dev = &devices[rng.random_range(0..devices.len())];
            let t = base + Duration::seconds(rng.random_range(0..=horizon.num_seconds()));
            raw(t, &locations[li], dev, net)
        })
        .collect();
    Case {
        seed,
        base,
        horizon,
        locations,
        devices,
        networks,
        raws,
    }
}
