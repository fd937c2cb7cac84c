//! Stable (location fingerprint) and volatile (time fingerprint) network sets.
//!
//! Two stable-set strategies are provided: the intersection of every
//! device's distinct transmitters at a location, and the most frequently
//! scanned fraction of transmitters. Volatile sets likewise come in two
//! flavours: the runtime witness intersection used to verify claims, and the
//! per-device least-frequent fraction used by the assessment harness.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DeviceId, LocationClaim, LocationId, ModelError, NetworkId, TimeWindow, WindowKind};
use crate::par;
use crate::store::{distinct_transmitters, occurrence_counts, ObservationStore};

/// Guards `ceil(fraction * n)` against products like `0.1 * 30 = 3.0000000000000004`.
const CUT_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetsetError {
    #[error("no observations in the requested window")]
    NoObservations,
    #[error("stable set for `{0}` is empty")]
    EmptyStableSet(LocationId),
    #[error("networks are stable at more than one location: {0:?}")]
    NonDisjointStableSets(Vec<NetworkId>),
    #[error("fraction {0} is outside (0, 1]")]
    InvalidFraction(f64),
    #[error("witness threshold must be at least 1")]
    InvalidThreshold,
    #[error("unknown location `{0}`")]
    UnknownLocation(LocationId),
    #[error("{found} witnesses found, {required} required")]
    InsufficientWitnesses { found: usize, required: usize },
    #[error(transparent)]
    Window(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StableStrategy {
    DeviceIntersection,
    TopFraction { fraction: f64 },
}

/// Per-location fingerprint computed over one epoch.
///
/// Serializes to a deterministic JSON document (locations and BSSIDs sorted)
/// that doubles as the verifier's fingerprint file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StableMap {
    pub strategy: StableStrategy,
    pub epoch: TimeWindow,
    locations: BTreeMap<LocationId, BTreeSet<NetworkId>>,
    /// Networks selected at more than one location and therefore removed
    /// from all of them (top-fraction strategy only).
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub dropped: BTreeSet<NetworkId>,
}

impl StableMap {
    pub fn new(
        strategy: StableStrategy,
        epoch: TimeWindow,
        locations: BTreeMap<LocationId, BTreeSet<NetworkId>>,
    ) -> Self {
        Self {
            strategy,
            epoch,
            locations,
            dropped: BTreeSet::new(),
        }
    }

    pub fn get(&self, loc: &LocationId) -> Option<&BTreeSet<NetworkId>> {
        self.locations.get(loc)
    }

    pub fn contains_location(&self, loc: &LocationId) -> bool {
        self.locations.contains_key(loc)
    }

    /// Locations in ascending id order with their stable sets.
    pub fn iter(&self) -> impl Iterator<Item = (&LocationId, &BTreeSet<NetworkId>)> {
        self.locations.iter()
    }

    pub fn locations(&self) -> impl Iterator<Item = &LocationId> {
        self.locations.keys()
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stable map serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Non-empty per location, pairwise disjoint across locations.
    pub fn check_invariants(&self) -> Result<(), NetsetError> {
        if let Some((loc, _)) = self.locations.iter().find(|(_, s)| s.is_empty()) {
            return Err(NetsetError::EmptyStableSet(loc.clone()));
        }
        let shared = shared_members(&self.locations);
        if !shared.is_empty() {
            return Err(NetsetError::NonDisjointStableSets(shared.into_iter().collect()));
        }
        Ok(())
    }
}

/// Networks that occur in the sets of two or more locations.
fn shared_members(sets: &BTreeMap<LocationId, BTreeSet<NetworkId>>) -> BTreeSet<NetworkId> {
    let mut seen = BTreeSet::new();
    let mut shared = BTreeSet::new();
    for set in sets.values() {
        for n in set {
            if !seen.insert(n.clone()) {
                shared.insert(n.clone());
            }
        }
    }
    shared
}

fn intersect_all<'a>(mut sets: impl Iterator<Item = &'a BTreeSet<NetworkId>>) -> BTreeSet<NetworkId> {
    let Some(first) = sets.next() else {
        return BTreeSet::new();
    };
    let mut acc = first.clone();
    for s in sets {
        acc.retain(|n| s.contains(n));
        if acc.is_empty() {
            break;
        }
    }
    acc
}

/// Size of a fraction cut over `n` items: `ceil(fraction * n)`, at least one
/// when `n > 0`.
pub fn fraction_cut(n: usize, fraction: f64) -> usize {
    if n == 0 {
        return 0;
    }
    let k = (fraction * n as f64 - CUT_EPSILON).ceil();
    (k.max(1.0) as usize).min(n)
}

fn check_fraction(fraction: f64) -> Result<(), NetsetError> {
    if fraction > 0.0 && fraction <= 1.0 {
        Ok(())
    } else {
        Err(NetsetError::InvalidFraction(fraction))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IntersectionConfig {
    /// Reject empty per-location sets and networks stable at two locations.
    pub strict_stable_asserts: bool,
}

impl Default for IntersectionConfig {
    fn default() -> Self {
        Self {
            strict_stable_asserts: true,
        }
    }
}

/// Per location, the networks every observing device saw during the epoch.
pub fn compute_stable_intersection(
    store: &ObservationStore,
    epoch: &TimeWindow,
    config: IntersectionConfig,
) -> Result<StableMap, NetsetError> {
    let epoch = epoch.with_kind(WindowKind::Epoch);
    let active = store.locations_active_in(&epoch);
    if active.is_empty() {
        return Err(NetsetError::NoObservations);
    }

    let sets = par::map(&active, |loc| {
        let mut per_device: BTreeMap<&DeviceId, BTreeSet<NetworkId>> = BTreeMap::new();
        for o in store.at_location(loc, Some(&epoch)) {
            per_device
                .entry(&o.device)
                .or_default()
                .insert(o.transmitter.clone());
        }
        (loc.clone(), intersect_all(per_device.values()))
    });
    let map = StableMap::new(
        StableStrategy::DeviceIntersection,
        epoch,
        sets.into_iter().collect(),
    );
    if config.strict_stable_asserts {
        map.check_invariants()?;
    }
    Ok(map)
}

/// Orders networks by `count` (descending when `top`), ties by ascending BSSID.
fn ranked(counts: BTreeMap<NetworkId, usize>, top: bool) -> Vec<(NetworkId, usize)> {
    let mut v: Vec<_> = counts.into_iter().collect();
    // BTreeMap iteration is already BSSID-ascending; a stable sort keeps that as tie-break.
    if top {
        v.sort_by_key(|e| std::cmp::Reverse(e.1));
    } else {
        v.sort_by_key(|e| e.1);
    }
    v
}

/// Top `fraction` of networks by scan count at one location, extended through
/// any tie straddling the cut.
pub fn top_fraction_of(counts: BTreeMap<NetworkId, usize>, fraction: f64) -> BTreeSet<NetworkId> {
    let ranked = ranked(counts, true);
    let mut k = fraction_cut(ranked.len(), fraction);
    if k == 0 {
        return BTreeSet::new();
    }
    let boundary = ranked[k - 1].1;
    while k < ranked.len() && ranked[k].1 == boundary {
        k += 1;
    }
    ranked.into_iter().take(k).map(|(n, _)| n).collect()
}

/// Per location, the most frequently scanned `fraction` of networks across all
/// devices during the epoch. Networks picked at more than one location are
/// dropped from all of them and listed in [`StableMap::dropped`]; a location
/// left with nothing is omitted.
pub fn compute_stable_top_fraction(
    store: &ObservationStore,
    epoch: &TimeWindow,
    fraction: f64,
) -> Result<StableMap, NetsetError> {
    check_fraction(fraction)?;
    let epoch = epoch.with_kind(WindowKind::Epoch);
    let active = store.locations_active_in(&epoch);
    if active.is_empty() {
        return Err(NetsetError::NoObservations);
    }

    let sets: BTreeMap<_, _> = par::map(&active, |loc| {
        let counts = occurrence_counts(store.at_location(loc, Some(&epoch)));
        (loc.clone(), top_fraction_of(counts, fraction))
    })
    .into_iter()
    .collect();

    let dropped = shared_members(&sets);
    let locations = sets
        .into_iter()
        .filter_map(|(loc, mut set)| {
            set.retain(|n| !dropped.contains(n));
            (!set.is_empty()).then_some((loc, set))
        })
        .collect();
    Ok(StableMap {
        strategy: StableStrategy::TopFraction { fraction },
        epoch,
        locations,
        dropped,
    })
}

/// Share of `loc`'s stable set present in `probe`.
pub fn stable_match_rate(
    stable: &StableMap,
    loc: &LocationId,
    probe: &BTreeSet<NetworkId>,
) -> Result<f64, NetsetError> {
    let set = stable
        .get(loc)
        .ok_or_else(|| NetsetError::UnknownLocation(loc.clone()))?;
    if set.is_empty() {
        return Err(NetsetError::EmptyStableSet(loc.clone()));
    }
    let hits = set.iter().filter(|n| probe.contains(n)).count();
    Ok(hits as f64 / set.len() as f64)
}

/// Networks every witness saw at the claimed location during a span, minus the
/// location's stable set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolatileSet {
    pub loc: LocationId,
    pub span: TimeWindow,
    pub ids: BTreeSet<NetworkId>,
    pub witness_devices: BTreeSet<DeviceId>,
}

/// Witness intersection for a claim. Witnesses are every device other than
/// the claimant with at least one observation at `claim.loc` within `span`.
pub fn compute_volatile_ids(
    store: &ObservationStore,
    claim: &LocationClaim,
    span: &TimeWindow,
    witness_threshold: usize,
    stable: &StableMap,
) -> Result<VolatileSet, NetsetError> {
    span.expect_kind(WindowKind::Span)?;
    if witness_threshold == 0 {
        return Err(NetsetError::InvalidThreshold);
    }
    if !store.has_location(&claim.loc) {
        return Err(NetsetError::UnknownLocation(claim.loc.clone()));
    }

    let mut per_witness: BTreeMap<DeviceId, BTreeSet<NetworkId>> = BTreeMap::new();
    for o in store.at_location(&claim.loc, Some(span)) {
        if o.device != claim.claimant {
            per_witness
                .entry(o.device.clone())
                .or_default()
                .insert(o.transmitter.clone());
        }
    }
    if per_witness.len() < witness_threshold {
        return Err(NetsetError::InsufficientWitnesses {
            found: per_witness.len(),
            required: witness_threshold,
        });
    }

    let mut ids = intersect_all(per_witness.values());
    if let Some(stable_here) = stable.get(&claim.loc) {
        ids.retain(|n| !stable_here.contains(n));
    }
    Ok(VolatileSet {
        loc: claim.loc.clone(),
        span: *span,
        ids,
        witness_devices: per_witness.into_keys().collect(),
    })
}

/// Least frequently scanned `fraction` of one device's networks at `loc`
/// during `window`, minus the location's stable set.
pub fn compute_volatile_bottom_fraction(
    store: &ObservationStore,
    loc: &LocationId,
    window: &TimeWindow,
    device: &DeviceId,
    fraction: f64,
    stable: &StableMap,
) -> Result<BTreeSet<NetworkId>, NetsetError> {
    check_fraction(fraction)?;
    let counts = occurrence_counts(
        store
            .at_location(loc, Some(window))
            .filter(|o| &o.device == device),
    );
    if counts.is_empty() {
        return Err(NetsetError::NoObservations);
    }
    let mut set = bottom_fraction_of(counts, fraction);
    if let Some(stable_here) = stable.get(loc) {
        set.retain(|n| !stable_here.contains(n));
    }
    Ok(set)
}

/// Least frequently scanned `fraction` of networks; the cut is exact, ties at
/// the boundary are broken by ascending BSSID.
pub fn bottom_fraction_of(counts: BTreeMap<NetworkId, usize>, fraction: f64) -> BTreeSet<NetworkId> {
    let ranked = ranked(counts, false);
    let k = fraction_cut(ranked.len(), fraction);
    ranked.into_iter().take(k).map(|(n, _)| n).collect()
}

/// Distinct networks one device saw at a location in a window.
pub fn device_transmitters(
    store: &ObservationStore,
    loc: &LocationId,
    window: &TimeWindow,
    device: &DeviceId,
) -> BTreeSet<NetworkId> {
    distinct_transmitters(
        store
            .at_location(loc, Some(window))
            .filter(|o| &o.device == device),
    )
}
