//! Reference implementations that trade speed for obviousness.
//!
//! Every function scans the full observation slice with nested loops and no
//! indexes, so it can be checked by reading. The engine's indexed versions in
//! `wifiproof-core` are tested against these.

pub mod check;
pub mod gen;

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Duration, Utc};
use wifiproof_core::{DeviceId, LocationId, NetworkId, Observation};

pub type Fingerprint = BTreeMap<LocationId, BTreeSet<NetworkId>>;

/// Closed-interval membership.
pub fn within(t: DateTime<Utc>, start: DateTime<Utc>, end: DateTime<Utc>) -> bool {
    start <= t && t <= end
}

fn in_window(
    obs: &[Observation],
    start: DateTime<Utc>,
    end: DateTime<Utc>,
) -> impl Iterator<Item = &Observation> {
    obs.iter().filter(move |o| within(o.obs_time, start, end))
}

/// Smallest k with k ≥ fraction·n (up to float noise), at least 1, at most n.
pub fn cut(n: usize, fraction: f64) -> usize {
    if n == 0 {
        return 0;
    }
    let target = fraction * n as f64;
    let mut k = 1;
    while k < n && (k as f64) < target - 1e-9 {
        k += 1;
    }
    k
}

/// For each location seen in the window: networks that every device present there saw.
pub fn stable_intersection(obs: &[Observation], start: DateTime<Utc>, end: DateTime<Utc>) -> Fingerprint {
    let mut out = Fingerprint::new();
    let locs: BTreeSet<&LocationId> = in_window(obs, start, end).map(|o| &o.location).collect();
    for loc in locs {
        let here: Vec<&Observation> = in_window(obs, start, end).filter(|o| &o.location == loc).collect();
        let devices: BTreeSet<&DeviceId> = here.iter().map(|o| &o.device).collect();
        let nets: BTreeSet<&NetworkId> = here.iter().map(|o| &o.transmitter).collect();
        let mut keep = BTreeSet::new();
        for n in nets {
            let everyone = devices
                .iter()
                .all(|d| here.iter().any(|o| &o.device == *d && &o.transmitter == n));
            if everyone {
                keep.insert(n.clone());
            }
        }
        out.insert(loc.clone(), keep);
    }
    out
}

fn counts_at(
    obs: &[Observation],
    loc: &LocationId,
    device: Option<&DeviceId>,
    start: DateTime<Utc>,
    end: DateTime<Utc>,
) -> Vec<(NetworkId, usize)> {
    let rows: Vec<&Observation> = in_window(obs, start, end)
        .filter(|o| &o.location == loc && device.is_none_or(|d| &o.device == d))
        .collect();
    let mut nets: Vec<NetworkId> = rows.iter().map(|o| o.transmitter.clone()).collect();
    nets.sort();
    nets.dedup();
    nets.into_iter()
        .map(|n| {
            let c = rows.iter().filter(|o| o.transmitter == n).count();
            (n, c)
        })
        .collect()
}

/// Top-fraction fingerprint plus the networks dropped for appearing at two locations.
pub fn stable_top_fraction(
    obs: &[Observation],
    start: DateTime<Utc>,
    end: DateTime<Utc>,
    fraction: f64,
) -> (Fingerprint, BTreeSet<NetworkId>) {
    let locs: BTreeSet<&LocationId> = in_window(obs, start, end).map(|o| &o.location).collect();
    let mut picked = Fingerprint::new();
    for loc in locs {
        let counts = counts_at(obs, loc, None, start, end);
        let k = cut(counts.len(), fraction);
        let mut sorted: Vec<usize> = counts.iter().map(|(_, c)| *c).collect();
        sorted.sort_by(|a, b| b.cmp(a));
        // Everything at least as frequent as the k-th most frequent.
        let boundary = sorted[k - 1];
        let set = counts.into_iter().filter(|(_, c)| *c >= boundary).map(|(n, _)| n).collect();
        picked.insert(loc.clone(), set);
    }
    let mut dropped = BTreeSet::new();
    for (a, sa) in &picked {
        for (b, sb) in &picked {
            if a != b {
                for n in sa {
                    if sb.contains(n) {
                        dropped.insert(n.clone());
                    }
                }
            }
        }
    }
    let map = picked
        .into_iter()
        .map(|(l, s)| (l, s.into_iter().filter(|n| !dropped.contains(n)).collect::<BTreeSet<_>>()))
        .filter(|(_, s)| !s.is_empty())
        .collect();
    (map, dropped)
}

/// Least frequent networks of one device; ties broken by ascending BSSID.
pub fn bottom_fraction(
    obs: &[Observation],
    loc: &LocationId,
    device: &DeviceId,
    start: DateTime<Utc>,
    end: DateTime<Utc>,
    fraction: f64,
    stable: &Fingerprint,
) -> Option<BTreeSet<NetworkId>> {
    let mut counts = counts_at(obs, loc, Some(device), start, end);
    if counts.is_empty() {
        return None;
    }
    let k = cut(counts.len(), fraction);
    // Insertion sort by (count, bssid).
    for i in 1..counts.len() {
        let mut j = i;
        while j > 0 && (counts[j].1, &counts[j].0) < (counts[j - 1].1, &counts[j - 1].0) {
            counts.swap(j, j - 1);
            j -= 1;
        }
    }
    let empty = BTreeSet::new();
    let st = stable.get(loc).unwrap_or(&empty);
    Some(
        counts
            .into_iter()
            .take(k)
            .map(|(n, _)| n)
            .filter(|n| !st.contains(n))
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VolatileOutcome {
    Ids { ids: BTreeSet<NetworkId>, witnesses: BTreeSet<DeviceId> },
    TooFewWitnesses(usize),
}

/// Intersection of what every non-claimant device saw at `loc` within the span, minus stable.
pub fn volatile_ids(
    obs: &[Observation],
    claimant: &DeviceId,
    loc: &LocationId,
    start: DateTime<Utc>,
    end: DateTime<Utc>,
    threshold: usize,
    stable: &Fingerprint,
) -> VolatileOutcome {
    let rows: Vec<&Observation> = in_window(obs, start, end)
        .filter(|o| &o.location == loc && &o.device != claimant)
        .collect();
    let witnesses: BTreeSet<DeviceId> = rows.iter().map(|o| o.device.clone()).collect();
    if witnesses.len() < threshold {
        return VolatileOutcome::TooFewWitnesses(witnesses.len());
    }
    let empty = BTreeSet::new();
    let st = stable.get(loc).unwrap_or(&empty);
    let mut ids = BTreeSet::new();
    for o in &rows {
        let n = &o.transmitter;
        let shared = witnesses
            .iter()
            .all(|w| rows.iter().any(|r| &r.device == w && &r.transmitter == n));
        if shared && !st.contains(n) {
            ids.insert(n.clone());
        }
    }
    VolatileOutcome::Ids { ids, witnesses }
}

/// Locations (ascending) whose stable set has at least `required(len)` members in the evidence.
pub fn qualifying_locations(
    evidence: &BTreeSet<NetworkId>,
    stable: &Fingerprint,
    required: impl Fn(usize) -> usize,
) -> Vec<LocationId> {
    let mut out = Vec::new();
    for (loc, set) in stable {
        let mut hits = 0;
        for n in set {
            if evidence.contains(n) {
                hits += 1;
            }
        }
        if hits >= required(set.len()).max(1) {
            out.push(loc.clone());
        }
    }
    out
}

/// The delta ladder exactly as specified: returns (proof, proof_delta).
#[allow(clippy::too_many_arguments)]
pub fn time_bound(
    obs: &[Observation],
    claimant: &DeviceId,
    loc: &LocationId,
    time: DateTime<Utc>,
    evidence: &BTreeSet<NetworkId>,
    deltas: &[Duration],
    threshold: usize,
    stable: &Fingerprint,
) -> (bool, Duration) {
    let mut proof_delta = Duration::zero();
    for &d in deltas {
        match volatile_ids(obs, claimant, loc, time - d, time + d, threshold, stable) {
            VolatileOutcome::TooFewWitnesses(_) => break,
            VolatileOutcome::Ids { ids, .. } => {
                if ids.iter().any(|n| evidence.contains(n)) {
                    proof_delta = d;
                } else {
                    break;
                }
            }
        }
    }
    (proof_delta > Duration::zero(), proof_delta)
}

/// Share of the stable set present in the probe.
pub fn match_rate(stable: &BTreeSet<NetworkId>, probe: &BTreeSet<NetworkId>) -> f64 {
    let hits = stable.iter().filter(|n| probe.contains(n)).count();
    hits as f64 / stable.len() as f64
}

/// One prover/witness pair at one sub-interval length, scored from scratch.
///
/// The session at `loc` opens at its first sighting inside `[window_start,
/// window_end]` and runs `session` (end exclusive). It is cut into pieces of
/// `interval`; the pair succeeds when, in some piece (only the first when
/// `first_only`), the prover's least frequent networks share a member with
/// either the witness's least frequent networks (`symmetric`) or anything the
/// witness saw, stable networks excluded on both sides.
#[allow(clippy::too_many_arguments)]
pub fn volatile_pair_matches(
    obs: &[Observation],
    loc: &LocationId,
    prover: &DeviceId,
    witness: &DeviceId,
    window: (DateTime<Utc>, DateTime<Utc>),
    session: Duration,
    interval: Duration,
    fraction: f64,
    stable: &Fingerprint,
    first_only: bool,
    symmetric: bool,
) -> bool {
    let Some(open) = in_window(obs, window.0, window.1)
        .filter(|o| &o.location == loc)
        .map(|o| o.obs_time)
        .min()
    else {
        return false;
    };
    let close = open + session;
    let tick = Duration::milliseconds(1);
    let empty = BTreeSet::new();
    let st = stable.get(loc).unwrap_or(&empty);
    let mut piece = open;
    while piece < close {
        let last = (piece + interval).min(close) - tick;
        let last = last.min(window.1);
        let p = bottom_fraction(obs, loc, prover, piece, last, fraction, stable).unwrap_or_default();
        let w = if symmetric {
            bottom_fraction(obs, loc, witness, piece, last, fraction, stable).unwrap_or_default()
        } else {
            counts_at(obs, loc, Some(witness), piece, last)
                .into_iter()
                .map(|(n, _)| n)
                .filter(|n| !st.contains(n))
                .collect()
        };
        if p.iter().any(|n| w.contains(n)) {
            return true;
        }
        if first_only {
            return false;
        }
        piece += interval;
    }
    false
}
