//! Claim verification: estimate the prover's location from its evidence,
//! then search the delta ladder for the tightest span in which witnesses
//! corroborate a volatile network the prover also reported.

use std::collections::BTreeSet;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::duration;
use crate::model::{
    CertificateReason, LocationCertificate, LocationClaim, LocationId, NetworkId, TimeWindow,
};
use crate::netsets::{compute_volatile_ids, fraction_cut, NetsetError, StableMap};
use crate::par;
use crate::store::ObservationStore;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VerifyError {
    #[error("invalid verifier config: {0}")]
    ConfigInvalid(String),
    #[error("location `{0}` has no fingerprint")]
    UnknownLocation(LocationId),
    #[error(transparent)]
    Netset(#[from] NetsetError),
}

/// How many stable networks the prover's evidence must contain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocationThreshold {
    Absolute(usize),
    /// Share of the location's stable set, rounded up.
    Fraction(f64),
}

impl LocationThreshold {
    /// Required hit count against a stable set of `stable_len` networks; never below 1.
    pub fn resolve(&self, stable_len: usize) -> usize {
        match *self {
            Self::Absolute(n) => n.max(1),
            Self::Fraction(f) => fraction_cut(stable_len, f).max(1),
        }
    }
}

/// Missing fields take their [`Default`] values when deserializing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifierConfig {
    /// Candidate half-widths, strictly descending.
    #[serde(with = "duration::iso_vec")]
    pub deltas: Vec<Duration>,
    pub location_threshold: LocationThreshold,
    pub witness_threshold: usize,
    #[serde(with = "duration::iso")]
    pub epoch: Duration,
    #[serde(with = "duration::iso")]
    pub period: Duration,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        Self {
            deltas: [120, 60, 30, 15, 10, 5, 1, 0]
                .into_iter()
                .map(Duration::minutes)
                .collect(),
            location_threshold: LocationThreshold::Fraction(0.5),
            witness_threshold: 2,
            epoch: Duration::days(7),
            period: Duration::days(1),
        }
    }
}

impl VerifierConfig {
    pub fn validate(&self) -> Result<(), VerifyError> {
        let bad = |m: String| Err(VerifyError::ConfigInvalid(m));
        if self.deltas.is_empty() {
            return bad("delta list is empty".into());
        }
        if self.deltas.iter().any(|d| *d < Duration::zero()) {
            return bad("deltas must be non-negative".into());
        }
        if self.deltas.windows(2).any(|w| w[0] <= w[1]) {
            return bad("deltas must be strictly descending".into());
        }
        if self.deltas[0] > self.period {
            return bad(format!(
                "largest delta {} exceeds the period {}",
                duration::format(self.deltas[0]),
                duration::format(self.period)
            ));
        }
        if self.epoch <= self.period {
            return bad("epoch must be longer than the period".into());
        }
        if self.witness_threshold == 0 {
            return bad("witness_threshold must be at least 1".into());
        }
        match self.location_threshold {
            LocationThreshold::Absolute(0) => bad("absolute location threshold must be ≥ 1".into()),
            LocationThreshold::Fraction(f) if !(f > 0.0 && f <= 1.0) => {
                bad(format!("location threshold fraction {f} outside (0, 1]"))
            }
            _ => Ok(()),
        }
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LocationEstimate {
    /// First qualifying location in ascending id order.
    pub location: Option<LocationId>,
    /// Every qualifying location, ascending.
    pub qualifying: Vec<LocationId>,
}

/// First location (ascending id) whose stable set shares at least the
/// resolved threshold of networks with the prover's observations.
pub fn estimate_location(
    prover_obs: &BTreeSet<NetworkId>,
    stable: &StableMap,
    threshold: LocationThreshold,
) -> LocationEstimate {
    let qualifying: Vec<LocationId> = stable
        .iter()
        .filter(|(_, set)| {
            let hits = set.iter().filter(|n| prover_obs.contains(n)).count();
            hits >= threshold.resolve(set.len())
        })
        .map(|(loc, _)| loc.clone())
        .collect();
    LocationEstimate {
        location: qualifying.first().cloned(),
        qualifying,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StepOutcome {
    Corroborated,
    /// Witnesses present but no shared volatile network in the evidence.
    Empty,
    InsufficientWitnesses,
}

/// One visited rung of the delta ladder.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaStep {
    #[serde(with = "duration::seconds")]
    pub delta: Duration,
    pub witnesses: usize,
    pub proof_set: BTreeSet<NetworkId>,
    pub outcome: StepOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeBoundProof {
    pub proof: bool,
    #[serde(with = "duration::seconds")]
    pub proof_delta: Duration,
    /// Visited deltas in order; the walk stops at the first non-corroborated one.
    pub steps: Vec<DeltaStep>,
}

impl TimeBoundProof {
    /// Witness count at the rung that set `proof_delta`, or at the first rung.
    pub fn witness_count(&self) -> usize {
        self.steps
            .iter()
            .rev()
            .find(|s| s.outcome == StepOutcome::Corroborated)
            .or(self.steps.first())
            .map_or(0, |s| s.witnesses)
    }
}

/// Walks `config.deltas` from widest to narrowest. Each corroborated rung
/// records its delta; the first rung without a shared volatile network (or
/// without enough witnesses) ends the walk. The proof holds iff the recorded
/// delta is positive, so a corroborated zero-width rung voids the proof.
pub fn time_bound_proof(
    store: &ObservationStore,
    claim: &LocationClaim,
    config: &VerifierConfig,
    stable: &StableMap,
) -> Result<TimeBoundProof, VerifyError> {
    config.validate()?;
    if !stable.contains_location(&claim.loc) {
        return Err(VerifyError::UnknownLocation(claim.loc.clone()));
    }

    let mut proof_delta = Duration::zero();
    let mut steps = Vec::new();
    for &delta in &config.deltas {
        let span = TimeWindow::around(claim.time, delta);
        let step = match compute_volatile_ids(store, claim, &span, config.witness_threshold, stable) {
            Ok(volatile) => {
                let proof_set: BTreeSet<NetworkId> =
                    volatile.ids.intersection(&claim.evidence).cloned().collect();
                DeltaStep {
                    delta,
                    witnesses: volatile.witness_devices.len(),
                    outcome: if proof_set.is_empty() {
                        StepOutcome::Empty
                    } else {
                        StepOutcome::Corroborated
                    },
                    proof_set,
                }
            }
            Err(NetsetError::InsufficientWitnesses { found, .. }) => DeltaStep {
                delta,
                witnesses: found,
                proof_set: BTreeSet::new(),
                outcome: StepOutcome::InsufficientWitnesses,
            },
            Err(NetsetError::UnknownLocation(loc)) => return Err(VerifyError::UnknownLocation(loc)),
            Err(e) => return Err(e.into()),
        };
        let corroborated = step.outcome == StepOutcome::Corroborated;
        steps.push(step);
        if !corroborated {
            break;
        }
        if delta.is_zero() {
            tracing::info!(
                device = %claim.claimant,
                loc = %claim.loc,
                time = %claim.time,
                "zero-width span corroborated; proof_delta falls to 0"
            );
        }
        proof_delta = delta;
    }

    Ok(TimeBoundProof {
        proof: proof_delta > Duration::zero(),
        proof_delta,
        steps,
    })
}

/// Location estimate followed by the time-bound search, packaged as a certificate.
pub fn issue_certificate(
    store: &ObservationStore,
    claim: &LocationClaim,
    config: &VerifierConfig,
    stable: &StableMap,
    issued_at: DateTime<Utc>,
) -> Result<LocationCertificate, VerifyError> {
    config.validate()?;
    if !stable.contains_location(&claim.loc) {
        return Err(VerifyError::UnknownLocation(claim.loc.clone()));
    }
    let estimate = estimate_location(&claim.evidence, stable, config.location_threshold);
    let base = LocationCertificate {
        claim: claim.clone(),
        proof: false,
        proof_delta: Duration::zero(),
        span: TimeWindow::around(claim.time, Duration::zero()),
        witness_count: 0,
        issued_at,
        engine_config_digest: config.digest(),
        reason: Some(CertificateReason::LocationMismatch),
        qualifying_locations: estimate.qualifying.clone(),
    };
    if estimate.location.as_ref() != Some(&claim.loc) {
        return Ok(base);
    }

    let tb = time_bound_proof(store, claim, config, stable)?;
    Ok(LocationCertificate {
        proof: tb.proof,
        proof_delta: tb.proof_delta,
        span: TimeWindow::around(claim.time, tb.proof_delta),
        witness_count: tb.witness_count(),
        reason: (!tb.proof).then_some(CertificateReason::NoCorroboration),
        ..base
    })
}

/// Verifies many claims against one store snapshot, in parallel when enabled.
/// Output order matches input order.
pub fn verify_batch(
    store: &ObservationStore,
    claims: &[LocationClaim],
    config: &VerifierConfig,
    stable: &StableMap,
    issued_at: DateTime<Utc>,
) -> Vec<Result<LocationCertificate, VerifyError>> {
    par::map(claims, |c| issue_certificate(store, c, config, stable, issued_at))
}

/// The period containing `t`, with periods aligned to 1970-01-01T00:00:00Z.
pub fn period_containing(t: DateTime<Utc>, period: Duration) -> TimeWindow {
    let len = period.num_seconds().max(1);
    let start_secs = t.timestamp().div_euclid(len) * len;
    let start = DateTime::from_timestamp(start_secs, 0).expect("in range");
    TimeWindow::period(start, start + Duration::seconds(len - 1)).expect("ordered")
}

/// Claims become verifiable once the period containing them has ended.
pub fn claim_admissible(claim_time: DateTime<Utc>, now: DateTime<Utc>, period: Duration) -> bool {
    now > period_containing(claim_time, period).end()
}
