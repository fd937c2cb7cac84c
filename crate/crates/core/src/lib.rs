//! Location proofs from scavenged Wi-Fi access-point observations.
//!
//! Devices upload scan traces into an [`ObservationStore`]. Long-lived
//! ("stable") access points fingerprint each location; short-lived
//! ("volatile") ones seen by co-located witnesses pin down *when* a prover
//! was there. The [`verifier`] turns a [`LocationClaim`] into a
//! [`LocationCertificate`] carrying the smallest supportable time span.
//!
//! Per-location and per-claim work runs on rayon when the `parallel` feature
//! is enabled (the default) and falls back to plain iterators otherwise; see
//! [`par`].

pub mod assessment;
pub mod duration;
pub mod model;
pub mod netsets;
pub mod par;
pub mod simulator;
pub mod store;
pub mod verifier;

pub use model::{
    validate_observation, window_hierarchy_ok, Bssid, CertificateReason, ChannelWidth, Device, DeviceId, GeoFix,
    Location, LocationCertificate, LocationClaim, LocationId, NetworkId, Observation,
    ObservationId, RadioMeta, RawObservation, SignalType, TimeWindow, User, UserId,
    ValidationError, WindowKind,
};
pub use netsets::{StableMap, StableStrategy, VolatileSet};
pub use store::{IngestReport, ObsFilter, ObservationStore};
pub use verifier::{LocationThreshold, VerifierConfig, VerifyError};
