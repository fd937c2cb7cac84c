//! Domain types shared by every module: observations, identities, time
//! windows, claims and certificates.

use std::collections::BTreeSet;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use chrono::{DateTime, Duration, SubsecRound, TimeZone, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Observations earlier than this are rejected as clock garbage.
pub fn earliest_valid_time() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2000, 1, 1, 0, 0, 0).unwrap()
}

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_string())
            }
        }
    };
}

string_id!(
    /// Point of interest key, e.g. `Alvalade`.
    LocationId
);
string_id!(DeviceId);
string_id!(UserId);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObservationId(pub u64);

impl fmt::Display for ObservationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// 48-bit access point MAC address. Ordering matches the lowercase hex text.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Bssid([u8; 6]);

impl Bssid {
    pub const fn from_bytes(bytes: [u8; 6]) -> Self {
        Self(bytes)
    }

    pub fn octets(&self) -> [u8; 6] {
        self.0
    }
}

impl FromStr for Bssid {
    type Err = ValidationError;

    /// Accepts `:` or `-` separated octets in either case.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let malformed = || ValidationError::MalformedBssid(s.to_string());
        let trimmed = s.trim();
        let mut out = [0u8; 6];
        let mut parts = trimmed.split([':', '-']);
        for slot in out.iter_mut() {
            let part = parts.next().ok_or_else(malformed)?;
            if part.len() != 2 || !part.bytes().all(|b| b.is_ascii_hexdigit()) {
                return Err(malformed());
            }
            *slot = u8::from_str_radix(part, 16).map_err(|_| malformed())?;
        }
        if parts.next().is_some() {
            return Err(malformed());
        }
        Ok(Self(out))
    }
}

impl fmt::Display for Bssid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c, d, e, g] = self.0;
        write!(f, "{a:02x}:{b:02x}:{c:02x}:{d:02x}:{e:02x}:{g:02x}")
    }
}

impl fmt::Debug for Bssid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Bssid({self})")
    }
}

impl Serialize for Bssid {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Bssid {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// A transmitter as seen in a scan. Identity is the BSSID; the SSID rides
/// along as metadata and is ignored by `Eq`, `Ord` and `Hash`.
///
/// On the wire a `NetworkId` is just its BSSID string.
#[derive(Clone)]
pub struct NetworkId {
    pub bssid: Bssid,
    pub ssid: String,
}

impl NetworkId {
    pub fn new(bssid: Bssid, ssid: impl Into<String>) -> Self {
        Self {
            bssid,
            ssid: ssid.into(),
        }
    }

    pub fn parse(bssid: &str) -> Result<Self, ValidationError> {
        Ok(Self::new(bssid.parse()?, ""))
    }
}

impl PartialEq for NetworkId {
    fn eq(&self, other: &Self) -> bool {
        self.bssid == other.bssid
    }
}

impl Eq for NetworkId {}

impl Hash for NetworkId {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.bssid.hash(state);
    }
}

impl PartialOrd for NetworkId {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for NetworkId {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.bssid.cmp(&other.bssid)
    }
}

impl fmt::Debug for NetworkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.ssid.is_empty() {
            write!(f, "{}", self.bssid)
        } else {
            write!(f, "{} ({:?})", self.bssid, self.ssid)
        }
    }
}

impl fmt::Display for NetworkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.bssid, f)
    }
}

impl From<Bssid> for NetworkId {
    fn from(bssid: Bssid) -> Self {
        Self::new(bssid, "")
    }
}

impl Serialize for NetworkId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.bssid.serialize(s)
    }
}

impl<'de> Deserialize<'de> for NetworkId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(Bssid::deserialize(d)?.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SignalType {
    #[default]
    Wifi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ChannelWidth {
    #[default]
    #[serde(rename = "20")]
    Mhz20,
    #[serde(rename = "40")]
    Mhz40,
    #[serde(rename = "80")]
    Mhz80,
    #[serde(rename = "80+80")]
    Mhz80Plus80,
    #[serde(rename = "160")]
    Mhz160,
}

impl ChannelWidth {
    /// Android `ScanResult.CHANNEL_WIDTH_*` codes as written by the scanner app.
    pub fn from_code(code: i64) -> Option<Self> {
        match code {
            0 => Some(Self::Mhz20),
            1 => Some(Self::Mhz40),
            2 => Some(Self::Mhz80),
            3 => Some(Self::Mhz160),
            4 => Some(Self::Mhz80Plus80),
            _ => None,
        }
    }

    pub fn code(self) -> i64 {
        match self {
            Self::Mhz20 => 0,
            Self::Mhz40 => 1,
            Self::Mhz80 => 2,
            Self::Mhz160 => 3,
            Self::Mhz80Plus80 => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RadioMeta {
    pub capabilities: String,
    /// Primary channel frequency, MHz.
    pub frequency: u32,
    /// RSSI in dBm.
    pub level: Option<i32>,
    pub centerfreq0: u32,
    pub centerfreq1: u32,
    pub channel_width: ChannelWidth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoFix {
    pub latitude: f64,
    pub longitude: f64,
    /// Metres above the WGS 84 ellipsoid.
    pub altitude: f64,
    /// Radial horizontal accuracy, metres.
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub id: LocationId,
    pub name: String,
    pub coordinates: Option<GeoFix>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Device {
    pub id: DeviceId,
    pub name: String,
    pub user: UserId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct User {
    pub id: UserId,
    pub name: String,
}

/// One Wi-Fi scan row. Only [`validate_observation`] builds these from
/// untrusted input, so every field is in range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "RawObservation", try_from = "RawObservation")]
pub struct Observation {
    pub id: ObservationId,
    pub obs_time: DateTime<Utc>,
    pub location: LocationId,
    pub device: DeviceId,
    pub signal_type: SignalType,
    pub transmitter: NetworkId,
    pub radio: RadioMeta,
    pub position: Option<GeoFix>,
}

/// Unvalidated observation record. This is also the JSON shape used by the
/// append-only log and by `POST /observations`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawObservation {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<ObservationId>,
    pub obs_time: DateTime<Utc>,
    pub location: String,
    pub device: String,
    #[serde(default)]
    pub signal_type: SignalType,
    pub bssid: String,
    #[serde(default)]
    pub ssid: String,
    #[serde(default)]
    pub capabilities: String,
    pub frequency: i64,
    #[serde(default)]
    pub level: Option<i64>,
    #[serde(default)]
    pub centerfreq0: i64,
    #[serde(default)]
    pub centerfreq1: i64,
    #[serde(default)]
    pub channel_width: ChannelWidth,
    #[serde(default)]
    pub position: Option<GeoFix>,
}

impl From<Observation> for RawObservation {
    fn from(o: Observation) -> Self {
        Self {
            id: Some(o.id),
            obs_time: o.obs_time,
            location: o.location.0,
            device: o.device.0,
            signal_type: o.signal_type,
            bssid: o.transmitter.bssid.to_string(),
            ssid: o.transmitter.ssid,
            capabilities: o.radio.capabilities,
            frequency: i64::from(o.radio.frequency),
            level: o.radio.level.map(i64::from),
            centerfreq0: i64::from(o.radio.centerfreq0),
            centerfreq1: i64::from(o.radio.centerfreq1),
            channel_width: o.radio.channel_width,
            position: o.position,
        }
    }
}

impl TryFrom<RawObservation> for Observation {
    type Error = ValidationError;

    fn try_from(raw: RawObservation) -> Result<Self, Self::Error> {
        validate_observation(raw)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValidationError {
    #[error("malformed BSSID `{0}`")]
    MalformedBssid(String),
    #[error("field `{0}` out of range")]
    OutOfRangeField(&'static str),
    #[error("missing field `{0}`")]
    MissingField(&'static str),
    #[error("field `{0}` is not a valid value")]
    MalformedField(&'static str),
    #[error("invalid timestamp: {0}")]
    InvalidTimestamp(String),
}

impl ValidationError {
    /// Short stable key used to bucket rejects in ingest reports.
    pub fn reason_key(&self) -> String {
        match self {
            Self::MalformedBssid(_) => "MalformedBssid".into(),
            Self::OutOfRangeField(f) => format!("OutOfRangeField({f})"),
            Self::MissingField(f) => format!("MissingField({f})"),
            Self::MalformedField(f) => format!("MalformedField({f})"),
            Self::InvalidTimestamp(_) => "InvalidTimestamp".into(),
        }
    }
}

fn check_range<T: PartialOrd>(
    value: T,
    lo: T,
    hi: T,
    field: &'static str,
) -> Result<T, ValidationError> {
    if value >= lo && value <= hi {
        Ok(value)
    } else {
        Err(ValidationError::OutOfRangeField(field))
    }
}

/// Normalizes a raw record: lowercase BSSID, UTC time truncated to whole
/// seconds, every radio and GPS field range-checked.
pub fn validate_observation(raw: RawObservation) -> Result<Observation, ValidationError> {
    if raw.bssid.trim().is_empty() {
        return Err(ValidationError::MissingField("BSSID"));
    }
    let bssid: Bssid = raw.bssid.parse()?;
    if raw.location.trim().is_empty() {
        return Err(ValidationError::MissingField("location"));
    }
    if raw.device.trim().is_empty() {
        return Err(ValidationError::MissingField("device"));
    }
    let obs_time = raw.obs_time.trunc_subsecs(0);
    if obs_time < earliest_valid_time() {
        return Err(ValidationError::InvalidTimestamp(format!(
            "{obs_time} precedes 2000-01-01T00:00:00Z"
        )));
    }

    let frequency = check_range(raw.frequency, 2400, 6000, "frequency")? as u32;
    let level = raw
        .level
        .map(|l| check_range(l, -120, 0, "level").map(|l| l as i32))
        .transpose()?;
    let centerfreq0 = check_range(raw.centerfreq0, 0, 7200, "centerfreq0")? as u32;
    let centerfreq1 = check_range(raw.centerfreq1, 0, 7200, "centerfreq1")? as u32;

    if let Some(fix) = &raw.position {
        check_range(fix.latitude, -90.0, 90.0, "latitude")?;
        check_range(fix.longitude, -180.0, 180.0, "longitude")?;
        if !fix.altitude.is_finite() {
            return Err(ValidationError::OutOfRangeField("altitude"));
        }
        if !(fix.accuracy >= 0.0 && fix.accuracy.is_finite()) {
            return Err(ValidationError::OutOfRangeField("accuracy"));
        }
    }

    Ok(Observation {
        id: raw.id.unwrap_or_default(),
        obs_time,
        location: LocationId(raw.location.trim().to_string()),
        device: DeviceId(raw.device.trim().to_string()),
        signal_type: raw.signal_type,
        transmitter: NetworkId::new(bssid, raw.ssid),
        radio: RadioMeta {
            capabilities: raw.capabilities,
            frequency,
            level,
            centerfreq0,
            centerfreq1,
            channel_width: raw.channel_width,
        },
        position: raw.position,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("window ends ({end}) before it starts ({start})")]
    InvertedWindow {
        start: DateTime<Utc>,
        end: DateTime<Utc>,
    },
    #[error("expected a {expected:?} window, got {found:?}")]
    KindMismatch {
        expected: WindowKind,
        found: WindowKind,
    },
    #[error("claim time {time} is after its submission time {submitted_at}")]
    ClaimFromFuture {
        time: DateTime<Utc>,
        submitted_at: DateTime<Utc>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum WindowKind {
    Epoch,
    Period,
    Span,
}

/// Closed interval `[start, end]`; both ends are members.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "WindowRepr")]
pub struct TimeWindow {
    start: DateTime<Utc>,
    end: DateTime<Utc>,
    kind: WindowKind,
}

#[derive(Deserialize)]
struct WindowRepr {
    start: DateTime<Utc>,
    end: DateTime<Utc>,
    kind: WindowKind,
}

impl TryFrom<WindowRepr> for TimeWindow {
    type Error = ModelError;

    fn try_from(r: WindowRepr) -> Result<Self, Self::Error> {
        TimeWindow::new(r.start, r.end, r.kind)
    }
}

impl TimeWindow {
    pub fn new(
        start: DateTime<Utc>,
        end: DateTime<Utc>,
        kind: WindowKind,
    ) -> Result<Self, ModelError> {
        if start > end {
            return Err(ModelError::InvertedWindow { start, end });
        }
        Ok(Self { start, end, kind })
    }

    pub fn epoch(start: DateTime<Utc>, end: DateTime<Utc>) -> Result<Self, ModelError> {
        Self::new(start, end, WindowKind::Epoch)
    }

    pub fn period(start: DateTime<Utc>, end: DateTime<Utc>) -> Result<Self, ModelError> {
        Self::new(start, end, WindowKind::Period)
    }

    pub fn span(start: DateTime<Utc>, end: DateTime<Utc>) -> Result<Self, ModelError> {
        Self::new(start, end, WindowKind::Span)
    }

    /// `[center - delta, center + delta]` as a span. Negative deltas clamp to zero.
    pub fn around(center: DateTime<Utc>, delta: Duration) -> Self {
        let delta = delta.max(Duration::zero());
        Self {
            start: center - delta,
            end: center + delta,
            kind: WindowKind::Span,
        }
    }

    pub fn start(&self) -> DateTime<Utc> {
        self.start
    }

    pub fn end(&self) -> DateTime<Utc> {
        self.end
    }

    pub fn kind(&self) -> WindowKind {
        self.kind
    }

    pub fn with_kind(self, kind: WindowKind) -> Self {
        Self { kind, ..self }
    }

    pub fn duration(&self) -> Duration {
        self.end - self.start
    }

    pub fn contains(&self, t: DateTime<Utc>) -> bool {
        self.start <= t && t <= self.end
    }

    pub fn contains_window(&self, other: &TimeWindow) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn overlaps(&self, other: &TimeWindow) -> bool {
        self.start <= other.end && other.start <= self.end
    }

    pub fn expect_kind(&self, expected: WindowKind) -> Result<(), ModelError> {
        if self.kind == expected {
            Ok(())
        } else {
            Err(ModelError::KindMismatch {
                expected,
                found: self.kind,
            })
        }
    }
}

/// `epoch > period > span` by duration, strictly.
pub fn window_hierarchy_ok(
    epoch: &TimeWindow,
    period: &TimeWindow,
    span: &TimeWindow,
) -> Result<bool, ModelError> {
    epoch.expect_kind(WindowKind::Epoch)?;
    period.expect_kind(WindowKind::Period)?;
    span.expect_kind(WindowKind::Span)?;
    Ok(epoch.duration() > period.duration() && period.duration() > span.duration())
}

/// A prover's assertion: "`claimant` was at `loc` at `time`, and saw these networks".
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ClaimRepr")]
pub struct LocationClaim {
    #[serde(rename = "device")]
    pub claimant: DeviceId,
    pub loc: LocationId,
    pub time: DateTime<Utc>,
    pub evidence: BTreeSet<NetworkId>,
    pub submitted_at: DateTime<Utc>,
}

#[derive(Deserialize)]
struct ClaimRepr {
    device: DeviceId,
    loc: LocationId,
    time: DateTime<Utc>,
    #[serde(default)]
    evidence: Vec<NetworkId>,
    #[serde(default)]
    submitted_at: Option<DateTime<Utc>>,
}

impl TryFrom<ClaimRepr> for LocationClaim {
    type Error = ModelError;

    fn try_from(r: ClaimRepr) -> Result<Self, Self::Error> {
        let submitted_at = r.submitted_at.unwrap_or(r.time);
        LocationClaim::new(r.device, r.loc, r.time, r.evidence, submitted_at)
    }
}

impl LocationClaim {
    pub fn new(
        claimant: DeviceId,
        loc: LocationId,
        time: DateTime<Utc>,
        evidence: impl IntoIterator<Item = NetworkId>,
        submitted_at: DateTime<Utc>,
    ) -> Result<Self, ModelError> {
        let time = time.trunc_subsecs(0);
        if time > submitted_at {
            return Err(ModelError::ClaimFromFuture { time, submitted_at });
        }
        Ok(Self {
            claimant,
            loc,
            time,
            evidence: evidence.into_iter().collect(),
            submitted_at,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CertificateReason {
    /// Evidence pointed at a different location (or none).
    LocationMismatch,
    /// No delta produced a corroborated span.
    NoCorroboration,
}

/// The verifier's answer to a [`LocationClaim`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "CertificateWire", try_from = "CertificateWire")]
pub struct LocationCertificate {
    pub claim: LocationClaim,
    pub proof: bool,
    pub proof_delta: Duration,
    pub span: TimeWindow,
    pub witness_count: usize,
    pub issued_at: DateTime<Utc>,
    pub engine_config_digest: String,
    /// Set whenever `proof` is false.
    pub reason: Option<CertificateReason>,
    /// Every location whose fingerprint the evidence satisfied, ascending.
    pub qualifying_locations: Vec<LocationId>,
}

impl LocationCertificate {
    /// Certificate-level invariants; returns a description of the first violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.proof_delta < Duration::zero() {
            return Err(format!("negative proof_delta {}", self.proof_delta));
        }
        if self.proof {
            if self.proof_delta <= Duration::zero() {
                return Err("proof=true with zero proof_delta".into());
            }
            let expected = TimeWindow::around(self.claim.time, self.proof_delta);
            if self.span.start() != expected.start() || self.span.end() != expected.end() {
                return Err(format!(
                    "span [{}, {}] is not claim.time ± {}s",
                    self.span.start(),
                    self.span.end(),
                    self.proof_delta.num_seconds()
                ));
            }
        } else if self.reason.is_none() {
            return Err("proof=false without a reason".into());
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct SpanWire {
    start: DateTime<Utc>,
    end: DateTime<Utc>,
}

#[derive(Serialize, Deserialize)]
struct CertificateWire {
    claim: LocationClaim,
    proof: bool,
    proof_delta_seconds: i64,
    span: SpanWire,
    witness_count: usize,
    issued_at: DateTime<Utc>,
    engine_config_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reason: Option<CertificateReason>,
    #[serde(default)]
    qualifying_locations: Vec<LocationId>,
}

impl From<LocationCertificate> for CertificateWire {
    fn from(c: LocationCertificate) -> Self {
        Self {
            claim: c.claim,
            proof: c.proof,
            proof_delta_seconds: c.proof_delta.num_seconds(),
            span: SpanWire {
                start: c.span.start(),
                end: c.span.end(),
            },
            witness_count: c.witness_count,
            issued_at: c.issued_at,
            engine_config_digest: c.engine_config_digest,
            reason: c.reason,
            qualifying_locations: c.qualifying_locations,
        }
    }
}

impl TryFrom<CertificateWire> for LocationCertificate {
    type Error = ModelError;

    fn try_from(w: CertificateWire) -> Result<Self, Self::Error> {
        Ok(Self {
            claim: w.claim,
            proof: w.proof,
            proof_delta: Duration::seconds(w.proof_delta_seconds),
            span: TimeWindow::span(w.span.start, w.span.end)?,
            witness_count: w.witness_count,
            issued_at: w.issued_at,
            engine_config_digest: w.engine_config_digest,
            reason: w.reason,
            qualifying_locations: w.qualifying_locations,
        })
    }
}
