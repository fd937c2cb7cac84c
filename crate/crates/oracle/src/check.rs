//! Engine-versus-oracle comparisons and invariant assertions over one random case.
//! Each function returns the number of checks performed or a description of
//! the first disagreement.

use std::collections::BTreeSet;

use chrono::{DateTime, Duration, Utc};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wifiproof_core::netsets::{
    self, compute_stable_intersection, compute_stable_top_fraction, compute_volatile_bottom_fraction,
    compute_volatile_ids, stable_match_rate, IntersectionConfig, NetsetError, StableStrategy,
};
use wifiproof_core::verifier::{self, estimate_location, issue_certificate, time_bound_proof, StepOutcome};
use wifiproof_core::{
    CertificateReason, LocationClaim, LocationThreshold, NetworkId, ObsFilter, Observation, ObservationStore,
    StableMap, TimeWindow, VerifierConfig,
};

use crate::gen::Case;
use crate::{Fingerprint, VolatileOutcome};

const QUERIES_PER_CASE: usize = 6;
const LADDER: [i64; 8] = [120, 60, 30, 15, 10, 5, 1, 0];

struct Ctx<'a> {
    case: &'a Case,
    store: ObservationStore,
    rng: ChaCha8Rng,
}

impl<'a> Ctx<'a> {
    fn new(case: &'a Case, salt: u64) -> Result<Self, String> {
        let mut store = ObservationStore::new();
        store
            .append_batch(case.raws.clone())
            .map_err(|e| format!("append failed: {e}"))?;
        Ok(Self {
            case,
            store,
            rng: ChaCha8Rng::seed_from_u64(case.seed ^ salt),
        })
    }

    fn obs(&self) -> &[Observation] {
        self.store.observations()
    }

    fn instant(&mut self) -> DateTime<Utc> {
        let slack = 600;
        let secs = self.rng.random_range(-slack..=self.case.horizon.num_seconds() + slack);
        self.case.base + Duration::seconds(secs)
    }

    fn window(&mut self) -> (DateTime<Utc>, DateTime<Utc>) {
        let a = self.instant();
        let len = self.rng.random_range(0..=self.case.horizon.num_seconds());
        (a, a + Duration::seconds(len))
    }

    fn fraction(&mut self) -> f64 {
        *[0.05, 0.1, 0.25, 1.0 / 3.0, 0.5, 1.0]
            .choose(&mut self.rng)
            .expect("non-empty")
    }

    fn subset(&mut self) -> BTreeSet<NetworkId> {
        let p = self.rng.random_range(0.0..=1.0);
        self.case
            .networks
            .iter()
            .filter(|_| self.rng.random_bool(p))
            .cloned()
            .collect()
    }

    fn threshold(&mut self) -> LocationThreshold {
        if self.rng.random_bool(0.5) {
            LocationThreshold::Absolute(self.rng.random_range(1..=4))
        } else {
            LocationThreshold::Fraction(self.fraction())
        }
    }

    fn config(&mut self) -> VerifierConfig {
        let mut deltas: Vec<Duration> = LADDER
            .iter()
            .filter(|_| self.rng.random_bool(0.7))
            .map(|&m| Duration::minutes(m))
            .collect();
        if deltas.is_empty() {
            deltas.push(Duration::minutes(30));
        }
        VerifierConfig {
            deltas,
            location_threshold: self.threshold(),
            witness_threshold: self.rng.random_range(1..=3),
            ..VerifierConfig::default()
        }
    }

    /// Full-horizon intersection fingerprint from the oracle, as an engine map.
    fn fingerprint(&self) -> (Fingerprint, StableMap) {
        let (s, e) = (self.case.base - Duration::days(1), self.case.base + Duration::days(1));
        let fp = crate::stable_intersection(self.obs(), s, e);
        let map = StableMap::new(
            StableStrategy::DeviceIntersection,
            TimeWindow::epoch(s, e).expect("ordered"),
            fp.clone(),
        );
        (fp, map)
    }

    fn claim(&mut self) -> LocationClaim {
        let dev = self.case.devices.choose(&mut self.rng).expect("devices").clone();
        let loc = self.case.locations.choose(&mut self.rng).expect("locations").clone();
        let t = self.instant();
        let evidence = self.subset();
        LocationClaim::new(dev, loc, t, evidence, t).expect("time ≤ submitted_at")
    }
}

fn map_of(m: &StableMap) -> Fingerprint {
    m.iter().map(|(l, s)| (l.clone(), s.clone())).collect()
}

fn disagree<T: std::fmt::Debug, U: std::fmt::Debug>(seed: u64, what: &str, engine: T, oracle: U) -> String {
    format!("seed {seed}: {what}: engine {engine:?} vs oracle {oracle:?}")
}

/// Every netsets and verifier operation against its reference.
pub fn equivalence(case: &Case) -> Result<usize, String> {
    let mut c = Ctx::new(case, 0x0eac_1e01)?;
    let seed = case.seed;
    let mut checks = 0;

    for _ in 0..QUERIES_PER_CASE {
        // Selection.
        let (s, e) = c.window();
        let mut filter = ObsFilter::new().window(TimeWindow::period(s, e).expect("ordered"));
        if c.rng.random_bool(0.5) {
            filter = filter.location(c.case.locations.choose(&mut c.rng).expect("loc").clone());
        }
        if c.rng.random_bool(0.5) {
            filter = filter.device(c.case.devices.choose(&mut c.rng).expect("dev").clone());
        }
        let mut want: Vec<&Observation> = c
            .obs()
            .iter()
            .filter(|o| {
                crate::within(o.obs_time, s, e)
                    && filter.location.as_ref().is_none_or(|l| *l == o.location)
                    && filter.device.as_ref().is_none_or(|d| *d == o.device)
            })
            .collect();
        want.sort_by(|a, b| {
            (&a.location, a.obs_time, &a.device, &a.transmitter, a.id)
                .cmp(&(&b.location, b.obs_time, &b.device, &b.transmitter, b.id))
        });
        let want: Vec<_> = want.iter().map(|o| o.id).collect();
        match c.store.query(&filter) {
            Ok(got) => {
                let got: Vec<_> = got.iter().map(|o| o.id).collect();
                if got != want {
                    return Err(disagree(seed, "query", got, want));
                }
            }
            // Filters naming an entity the store never saw are rejected outright.
            Err(_) => {
                let known_loc = filter.location.as_ref().is_none_or(|l| c.store.has_location(l));
                let known_dev = filter.device.as_ref().is_none_or(|d| c.store.has_device(d));
                if known_loc && known_dev {
                    return Err(format!("seed {seed}: query rejected a valid filter"));
                }
            }
        }
        checks += 1;

        // Stable sets, both strategies.
        let (s, e) = c.window();
        let epoch = TimeWindow::epoch(s, e).expect("ordered");
        let want = crate::stable_intersection(c.obs(), s, e);
        let lax = IntersectionConfig {
            strict_stable_asserts: false,
        };
        match compute_stable_intersection(&c.store, &epoch, lax) {
            Ok(m) if map_of(&m) == want => {}
            Err(NetsetError::NoObservations) if want.is_empty() => {}
            other => return Err(disagree(seed, "intersection", other.map(|m| map_of(&m)), want)),
        }
        let strict_ok = !want.is_empty()
            && want.values().all(|s| !s.is_empty())
            && want.values().map(BTreeSet::len).sum::<usize>()
                == want.values().flatten().collect::<BTreeSet<_>>().len();
        let strict = compute_stable_intersection(&c.store, &epoch, IntersectionConfig::default());
        if strict.is_ok() != strict_ok {
            return Err(disagree(seed, "strict intersection accepts", strict.is_ok(), strict_ok));
        }
        checks += 2;

        let f = c.fraction();
        let (want, want_dropped) = crate::stable_top_fraction(c.obs(), s, e, f);
        match compute_stable_top_fraction(&c.store, &epoch, f) {
            Ok(m) if map_of(&m) == want && m.dropped == want_dropped => {}
            Err(NetsetError::NoObservations) if c.obs().iter().all(|o| !crate::within(o.obs_time, s, e)) => {}
            other => return Err(disagree(seed, "top fraction", other.map(|m| (map_of(&m), m.dropped)), (want, want_dropped))),
        }
        checks += 1;

        // Volatile sets.
        let (fp, stable) = c.fingerprint();
        let claim = c.claim();
        let delta = Duration::minutes(c.rng.random_range(0..=90));
        let span = TimeWindow::around(claim.time, delta);
        let k = c.rng.random_range(1..=3);
        let engine = compute_volatile_ids(&c.store, &claim, &span, k, &stable);
        let oracle = crate::volatile_ids(c.obs(), &claim.claimant, &claim.loc, span.start(), span.end(), k, &fp);
        match (&engine, &oracle) {
            (Ok(v), VolatileOutcome::Ids { ids, witnesses }) if &v.ids == ids && &v.witness_devices == witnesses => {}
            (Err(NetsetError::InsufficientWitnesses { found, .. }), VolatileOutcome::TooFewWitnesses(n)) if found == n => {}
            (Err(NetsetError::UnknownLocation(_)), _) if !c.store.has_location(&claim.loc) => {}
            _ => return Err(disagree(seed, "volatile ids", engine, oracle)),
        }
        checks += 1;

        let (s, e) = c.window();
        let window = TimeWindow::period(s, e).expect("ordered");
        let dev = c.case.devices.choose(&mut c.rng).expect("dev").clone();
        let loc = c.case.locations.choose(&mut c.rng).expect("loc").clone();
        let f = c.fraction();
        let engine = compute_volatile_bottom_fraction(&c.store, &loc, &window, &dev, f, &stable);
        let oracle = crate::bottom_fraction(c.obs(), &loc, &dev, s, e, f, &fp);
        match (&engine, &oracle) {
            (Ok(a), Some(b)) if a == b => {}
            (Err(NetsetError::NoObservations), None) => {}
            _ => return Err(disagree(seed, "bottom fraction", engine, oracle)),
        }
        checks += 1;

        // Location estimation and match rate.
        let evidence = c.subset();
        let th = c.threshold();
        let got = estimate_location(&evidence, &stable, th);
        let want = crate::qualifying_locations(&evidence, &fp, |n| match th {
            LocationThreshold::Absolute(k) => k,
            LocationThreshold::Fraction(f) => crate::cut(n, f),
        });
        if got.qualifying != want || got.location.as_ref() != want.first() {
            return Err(disagree(seed, "estimate", got, want));
        }
        checks += 1;

        for (loc, set) in &fp {
            let probe = c.subset();
            match stable_match_rate(&stable, loc, &probe) {
                Ok(r) if !set.is_empty() && r == crate::match_rate(set, &probe) => {}
                Err(NetsetError::EmptyStableSet(_)) if set.is_empty() => {}
                other => return Err(disagree(seed, "match rate", other, set.len())),
            }
            checks += 1;
        }

        // Time-bound proof and certificate.
        let cfg = c.config();
        let claim = c.claim();
        let oracle = crate::time_bound(
            c.obs(),
            &claim.claimant,
            &claim.loc,
            claim.time,
            &claim.evidence,
            &cfg.deltas,
            cfg.witness_threshold,
            &fp,
        );
        match time_bound_proof(&c.store, &claim, &cfg, &stable) {
            Ok(tb) if (tb.proof, tb.proof_delta) == oracle => {}
            Err(verifier::VerifyError::UnknownLocation(_)) if !fp.contains_key(&claim.loc) => {}
            other => return Err(disagree(seed, "time bound", other.map(|t| (t.proof, t.proof_delta)), oracle)),
        }
        checks += 1;

        let qualifying = crate::qualifying_locations(&claim.evidence, &fp, |n| match cfg.location_threshold {
            LocationThreshold::Absolute(k) => k,
            LocationThreshold::Fraction(f) => crate::cut(n, f),
        });
        let want = if qualifying.first() == Some(&claim.loc) {
            (oracle.0, oracle.1, (!oracle.0).then_some(CertificateReason::NoCorroboration))
        } else {
            (false, Duration::zero(), Some(CertificateReason::LocationMismatch))
        };
        match issue_certificate(&c.store, &claim, &cfg, &stable, claim.time) {
            Ok(cert) if (cert.proof, cert.proof_delta, cert.reason) == want => {}
            Err(verifier::VerifyError::UnknownLocation(_)) if !fp.contains_key(&claim.loc) => {}
            other => return Err(disagree(seed, "certificate", other.map(|c| (c.proof, c.proof_delta, c.reason)), want)),
        }
        checks += 1;
    }
    Ok(checks)
}

/// Always-on assertions: fingerprint disjointness, volatile ∩ stable = ∅,
/// proof_delta drawn from the ladder, zero width never proves, span arithmetic.
pub fn invariants(case: &Case) -> Result<usize, String> {
    let mut c = Ctx::new(case, 0x1a7a_0002)?;
    let seed = case.seed;
    let fail = |what: String| Err(format!("seed {seed}: {what}"));
    let mut checks = 0;

    for _ in 0..QUERIES_PER_CASE {
        let (s, e) = c.window();
        let epoch = TimeWindow::epoch(s, e).expect("ordered");
        let f = c.fraction();
        if let Ok(m) = compute_stable_top_fraction(&c.store, &epoch, f) {
            if let Err(err) = m.check_invariants() {
                return fail(format!("top-fraction map: {err}"));
            }
            if m.iter().any(|(_, set)| !set.is_disjoint(&m.dropped)) {
                return fail("dropped network still in a fingerprint".into());
            }
            checks += 1;
        }
        if let Ok(m) = compute_stable_intersection(&c.store, &epoch, IntersectionConfig::default()) {
            if let Err(err) = m.check_invariants() {
                return fail(format!("strict intersection map: {err}"));
            }
            checks += 1;
        }

        let (_, stable) = c.fingerprint();
        let claim = c.claim();
        let span = TimeWindow::around(claim.time, Duration::minutes(c.rng.random_range(0..=120)));
        if let Ok(v) = netsets::compute_volatile_ids(&c.store, &claim, &span, 1, &stable) {
            if let Some(st) = stable.get(&claim.loc) {
                if !v.ids.is_disjoint(st) {
                    return fail("volatile set overlaps the fingerprint".into());
                }
            }
            if v.witness_devices.contains(&claim.claimant) {
                return fail("claimant counted as its own witness".into());
            }
            checks += 1;
        }

        let cfg = c.config();
        if let Ok(tb) = time_bound_proof(&c.store, &claim, &cfg, &stable) {
            if !tb.proof_delta.is_zero() && !cfg.deltas.contains(&tb.proof_delta) {
                return fail(format!("proof_delta {} not in the ladder", tb.proof_delta));
            }
            if tb.proof != (tb.proof_delta > Duration::zero()) {
                return fail("proof flag disagrees with proof_delta".into());
            }
            let corroborated = tb
                .steps
                .iter()
                .take_while(|s| s.outcome == StepOutcome::Corroborated)
                .count();
            if corroborated + 1 < tb.steps.len() {
                return fail("walk continued past a failed rung".into());
            }
            checks += 1;
        }
        if let Ok(cert) = issue_certificate(&c.store, &claim, &cfg, &stable, claim.time) {
            if let Err(err) = cert.check_invariants() {
                return fail(format!("certificate: {err}"));
            }
            if cert.span != TimeWindow::around(cert.claim.time, cert.proof_delta) {
                return fail("certificate span is not time ± proof_delta".into());
            }
            if cert.proof && cert.witness_count < cfg.witness_threshold {
                return fail("proof with fewer witnesses than required".into());
            }
            if cert.proof_delta.is_zero() && cert.proof {
                return fail("zero-width certificate proves".into());
            }
            checks += 1;
        }
    }
    Ok(checks)
}
