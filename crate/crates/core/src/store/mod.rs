//! Append-only observation store with a small relational vocabulary:
//! selection ([`ObservationStore::query`]), projection
//! ([`distinct_transmitters`]) and ordering (every query result is sorted by
//! location, time, device, BSSID).
//!
//! On disk a store is a directory holding `observations.log` (one canonical
//! JSON record per line, append-only) and `registry.json` (locations, devices,
//! users). The in-memory index is rebuilt on open.

mod csv_io;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    validate_observation, Device, DeviceId, Location, LocationId, NetworkId, Observation,
    ObservationId, RawObservation, TimeWindow, User, UserId, ValidationError,
};

pub use csv_io::{sniff_delimiter, write_csv, CsvOptions, COLUMNS, DEFAULT_TIMEZONE};

pub const LOG_FILE: &str = "observations.log";
pub const REGISTRY_FILE: &str = "registry.json";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("CSV header lacks required column `{0}`")]
    MissingColumn(String),
    #[error("source is empty")]
    EmptySource,
    #[error("filter sets no field")]
    EmptyFilter,
    #[error("unknown location `{0}`")]
    UnknownLocation(LocationId),
    #[error("unknown device `{0}`")]
    UnknownDevice(DeviceId),
    #[error("{path}:{line}: corrupt log record: {message}")]
    CorruptLog {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Outcome of an ingest: every input row is either accepted or rejected.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub accepted: usize,
    pub rejected: usize,
    /// Reject reason key to count.
    pub reasons: BTreeMap<String, usize>,
}

impl IngestReport {
    fn reject(&mut self, err: &ValidationError) {
        self.rejected += 1;
        *self.reasons.entry(err.reason_key()).or_default() += 1;
    }

    pub fn merge(&mut self, other: &IngestReport) {
        self.accepted += other.accepted;
        self.rejected += other.rejected;
        for (k, v) in &other.reasons {
            *self.reasons.entry(k.clone()).or_default() += v;
        }
    }
}

/// Selection predicate. Every set field must match.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObsFilter {
    pub time_window: Option<TimeWindow>,
    pub location: Option<LocationId>,
    pub device: Option<DeviceId>,
}

impl ObsFilter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn window(mut self, w: TimeWindow) -> Self {
        self.time_window = Some(w);
        self
    }

    pub fn location(mut self, loc: impl Into<LocationId>) -> Self {
        self.location = Some(loc.into());
        self
    }

    pub fn device(mut self, dev: impl Into<DeviceId>) -> Self {
        self.device = Some(dev.into());
        self
    }

    pub fn is_empty(&self) -> bool {
        self.time_window.is_none() && self.location.is_none() && self.device.is_none()
    }

    fn matches(&self, o: &Observation) -> bool {
        self.time_window.is_none_or(|w| w.contains(o.obs_time))
            && self.location.as_ref().is_none_or(|l| *l == o.location)
            && self.device.as_ref().is_none_or(|d| *d == o.device)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct Registry {
    locations: BTreeMap<LocationId, Location>,
    devices: BTreeMap<DeviceId, Device>,
    users: BTreeMap<UserId, User>,
}

#[derive(Debug)]
struct Persistence {
    dir: PathBuf,
    log: BufWriter<File>,
}

/// The observation relation plus the location, device and user registries.
#[derive(Debug, Default)]
pub struct ObservationStore {
    observations: Vec<Observation>,
    registry: Registry,
    /// Per location, indices into `observations` sorted by (time, device, bssid, id).
    by_location: BTreeMap<LocationId, Vec<usize>>,
    persistence: Option<Persistence>,
}

impl ObservationStore {
    /// Empty in-memory store.
    pub fn new() -> Self {
        Self::default()
    }

    /// Opens (creating if needed) a store directory and replays its log.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;

        let registry_path = dir.join(REGISTRY_FILE);
        let registry: Registry = if registry_path.exists() {
            serde_json::from_slice(&fs::read(&registry_path)?)?
        } else {
            Registry::default()
        };

        let log_path = dir.join(LOG_FILE);
        let mut observations = Vec::new();
        if log_path.exists() {
            let reader = BufReader::new(File::open(&log_path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let obs: Observation =
                    serde_json::from_str(&line).map_err(|e| StoreError::CorruptLog {
                        path: log_path.clone(),
                        line: i + 1,
                        message: e.to_string(),
                    })?;
                observations.push(obs);
            }
        }

        let log = BufWriter::new(OpenOptions::new().create(true).append(true).open(&log_path)?);
        let mut store = Self {
            observations,
            registry,
            by_location: BTreeMap::new(),
            persistence: Some(Persistence { dir, log }),
        };
        for (i, o) in store.observations.iter().enumerate() {
            store.by_location.entry(o.location.clone()).or_default().push(i);
        }
        let locs: Vec<_> = store.by_location.keys().cloned().collect();
        store.resort(locs);
        Ok(store)
    }

    pub fn directory(&self) -> Option<&Path> {
        self.persistence.as_ref().map(|p| p.dir.as_path())
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// All observations in insertion order.
    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn locations(&self) -> impl Iterator<Item = &Location> {
        self.registry.locations.values()
    }

    pub fn devices(&self) -> impl Iterator<Item = &Device> {
        self.registry.devices.values()
    }

    pub fn users(&self) -> impl Iterator<Item = &User> {
        self.registry.users.values()
    }

    pub fn location(&self, id: &LocationId) -> Option<&Location> {
        self.registry.locations.get(id)
    }

    pub fn device(&self, id: &DeviceId) -> Option<&Device> {
        self.registry.devices.get(id)
    }

    pub fn has_location(&self, id: &LocationId) -> bool {
        self.registry.locations.contains_key(id)
    }

    pub fn has_device(&self, id: &DeviceId) -> bool {
        self.registry.devices.contains_key(id)
    }

    /// Registers or replaces a location.
    pub fn register_location(&mut self, location: Location) -> Result<(), StoreError> {
        self.registry.locations.insert(location.id.clone(), location);
        self.save_registry()
    }

    pub fn register_user(&mut self, user: User) -> Result<(), StoreError> {
        self.registry.users.insert(user.id.clone(), user);
        self.save_registry()
    }

    /// Registers or replaces a device, registering its user if unknown.
    pub fn register_device(&mut self, device: Device) -> Result<(), StoreError> {
        if !self.registry.users.contains_key(&device.user) {
            let user = User {
                id: device.user.clone(),
                name: device.user.0.clone(),
            };
            self.registry.users.insert(user.id.clone(), user);
        }
        self.registry.devices.insert(device.id.clone(), device);
        self.save_registry()
    }

    /// Earliest and latest observation times.
    pub fn time_range(&self) -> Option<(DateTime<Utc>, DateTime<Utc>)> {
        let min = self.observations.iter().map(|o| o.obs_time).min()?;
        let max = self.observations.iter().map(|o| o.obs_time).max()?;
        Some((min, max))
    }

    /// Validates and appends a batch. Unknown locations and devices are
    /// registered on the fly; invalid records are counted, not stored.
    pub fn append_batch(
        &mut self,
        records: impl IntoIterator<Item = RawObservation>,
    ) -> Result<IngestReport, StoreError> {
        let mut report = IngestReport::default();
        let mut valid = Vec::new();
        for raw in records {
            match validate_observation(raw) {
                Ok(o) => valid.push(o),
                Err(e) => report.reject(&e),
            }
        }
        report.accepted = valid.len();
        self.append_validated(valid)?;
        Ok(report)
    }

    fn append_validated(&mut self, batch: Vec<Observation>) -> Result<(), StoreError> {
        if batch.is_empty() {
            return Ok(());
        }
        let mut registry_changed = false;
        for o in &batch {
            if !self.registry.locations.contains_key(&o.location) {
                self.registry.locations.insert(
                    o.location.clone(),
                    Location {
                        id: o.location.clone(),
                        name: o.location.0.clone(),
                        coordinates: o.position,
                    },
                );
                registry_changed = true;
            }
            if !self.registry.devices.contains_key(&o.device) {
                let user = UserId(format!("user-{}", o.device));
                self.registry.users.entry(user.clone()).or_insert_with(|| User {
                    id: user.clone(),
                    name: user.0.clone(),
                });
                self.registry.devices.insert(
                    o.device.clone(),
                    Device {
                        id: o.device.clone(),
                        name: o.device.0.clone(),
                        user,
                    },
                );
                registry_changed = true;
            }
        }
        if registry_changed {
            self.save_registry()?;
        }

        let mut touched = BTreeSet::new();
        for mut o in batch {
            let idx = self.observations.len();
            o.id = ObservationId(idx as u64 + 1);
            if let Some(p) = &mut self.persistence {
                serde_json::to_writer(&mut p.log, &o)?;
                p.log.write_all(b"\n")?;
            }
            self.by_location.entry(o.location.clone()).or_default().push(idx);
            touched.insert(o.location.clone());
            self.observations.push(o);
        }
        if let Some(p) = &mut self.persistence {
            p.log.flush()?;
        }
        self.resort(touched);
        Ok(())
    }

    fn resort(&mut self, locations: impl IntoIterator<Item = LocationId>) {
        let obs = &self.observations;
        for loc in locations {
            if let Some(idx) = self.by_location.get_mut(&loc) {
                idx.sort_by(|&a, &b| {
                    let (x, y) = (&obs[a], &obs[b]);
                    (x.obs_time, &x.device, x.transmitter.bssid, x.id)
                        .cmp(&(y.obs_time, &y.device, y.transmitter.bssid, y.id))
                });
            }
        }
    }

    fn save_registry(&self) -> Result<(), StoreError> {
        if let Some(p) = &self.persistence {
            let tmp = p.dir.join(format!("{REGISTRY_FILE}.tmp"));
            fs::write(&tmp, serde_json::to_vec_pretty(&self.registry)?)?;
            fs::rename(&tmp, p.dir.join(REGISTRY_FILE))?;
        }
        Ok(())
    }

    /// Reads a scan CSV (comma, semicolon or tab separated; sniffed from the
    /// header) and appends every valid row.
    pub fn ingest_csv<R: Read>(
        &mut self,
        mut source: R,
        opts: &CsvOptions,
    ) -> Result<IngestReport, StoreError> {
        let mut bytes = Vec::new();
        source.read_to_end(&mut bytes)?;
        let first_line = bytes.split(|&b| b == b'\n').next().unwrap_or_default();
        let first_line = String::from_utf8_lossy(first_line);
        if first_line.trim().is_empty() {
            return Err(StoreError::EmptySource);
        }

        let mut reader = csv::ReaderBuilder::new()
            .delimiter(sniff_delimiter(&first_line))
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(bytes.as_slice());
        let header = csv_io::HeaderMap::new(reader.headers()?, opts)?;

        let mut report = IngestReport::default();
        let mut valid = Vec::new();
        for row in reader.records() {
            let row = row?;
            if row.iter().all(|f| f.is_empty()) {
                continue;
            }
            match csv_io::row_to_raw(&header, &row, opts).and_then(validate_observation) {
                Ok(o) => valid.push(o),
                Err(e) => report.reject(&e),
            }
        }
        report.accepted = valid.len();
        self.append_validated(valid)?;
        Ok(report)
    }

    /// Selection with deterministic ordering by (location, time, device, bssid).
    pub fn query(&self, filter: &ObsFilter) -> Result<Vec<&Observation>, StoreError> {
        if filter.is_empty() {
            return Err(StoreError::EmptyFilter);
        }
        if let Some(loc) = &filter.location {
            if !self.has_location(loc) {
                return Err(StoreError::UnknownLocation(loc.clone()));
            }
        }
        if let Some(dev) = &filter.device {
            if !self.has_device(dev) {
                return Err(StoreError::UnknownDevice(dev.clone()));
            }
        }
        let locs: Vec<&LocationId> = match &filter.location {
            Some(l) => vec![l],
            None => self.by_location.keys().collect(),
        };
        Ok(locs
            .into_iter()
            .flat_map(|loc| self.at_location(loc, filter.time_window.as_ref()))
            .filter(|o| filter.matches(o))
            .collect())
    }

    /// Observations at `loc`, optionally bounded to `window`, in index order.
    /// Unknown locations yield nothing.
    pub fn at_location<'a>(
        &'a self,
        loc: &LocationId,
        window: Option<&TimeWindow>,
    ) -> impl Iterator<Item = &'a Observation> + 'a {
        let idx: &[usize] = self.by_location.get(loc).map(Vec::as_slice).unwrap_or(&[]);
        let obs = &self.observations;
        let (lo, hi) = match window {
            Some(w) => (
                idx.partition_point(|&i| obs[i].obs_time < w.start()),
                idx.partition_point(|&i| obs[i].obs_time <= w.end()),
            ),
            None => (0, idx.len()),
        };
        idx[lo..hi.max(lo)].iter().map(move |&i| &obs[i])
    }

    /// Locations with at least one observation inside `window`, ascending.
    pub fn locations_active_in(&self, window: &TimeWindow) -> Vec<LocationId> {
        self.by_location
            .keys()
            .filter(|loc| self.at_location(loc, Some(window)).next().is_some())
            .cloned()
            .collect()
    }

    /// Devices with at least one observation at `loc` inside `window`.
    pub fn devices_at(&self, loc: &LocationId, window: &TimeWindow) -> BTreeSet<DeviceId> {
        self.at_location(loc, Some(window))
            .map(|o| o.device.clone())
            .collect()
    }
}

/// Projection onto the transmitter column, duplicates removed.
pub fn distinct_transmitters<'a>(
    obs: impl IntoIterator<Item = &'a Observation>,
) -> BTreeSet<NetworkId> {
    obs.into_iter().map(|o| o.transmitter.clone()).collect()
}

/// Number of scan rows per transmitter.
pub fn occurrence_counts<'a>(
    obs: impl IntoIterator<Item = &'a Observation>,
) -> BTreeMap<NetworkId, usize> {
    let mut counts = BTreeMap::new();
    for o in obs {
        *counts.entry(o.transmitter.clone()).or_insert(0) += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ChannelWidth, SignalType, WindowKind};

    fn t(s: &str) -> DateTime<Utc> {
        s.parse().unwrap()
    }

    fn raw(loc: &str, dev: &str, time: &str, bssid: &str) -> RawObservation {
        RawObservation {
            id: None,
            obs_time: t(time),
            location: loc.into(),
            device: dev.into(),
            signal_type: SignalType::Wifi,
            bssid: bssid.into(),
            ssid: String::new(),
            capabilities: String::new(),
            frequency: 2412,
            level: Some(-60),
            centerfreq0: 0,
            centerfreq1: 0,
            channel_width: ChannelWidth::Mhz20,
            position: None,
        }
    }

    const HEADER: &str = "device_id,date,time,ref_name,latitude,longitude,altitude,accuracy,SSID,BSSID,capabilities,frequency,level,centerfreq0,centerfreq1,channelwidth\n";

    #[test]
    fn header_only_file_is_an_empty_ingest() {
        let mut s = ObservationStore::new();
        let r = s.ingest_csv(HEADER.as_bytes(), &CsvOptions::default()).unwrap();
        assert_eq!(r, IngestReport::default());
    }

    #[test]
    fn positive_level_row_is_rejected_with_reason() {
        let mut s = ObservationStore::new();
        let csv = format!("{HEADER}A,2019-07-19,10:00:00,Alvalade,38.75,-9.14,100,5,x,AA:BB:CC:DD:EE:FF,[ESS],2412,5,0,0,0\n");
        let r = s.ingest_csv(csv.as_bytes(), &CsvOptions::default()).unwrap();
        assert_eq!((r.accepted, r.rejected), (0, 1));
        assert_eq!(r.reasons.get("OutOfRangeField(level)"), Some(&1));
    }

    #[test]
    fn full_row_populates_every_field() {
        let mut s = ObservationStore::new();
        let csv = format!(
            "{HEADER}B,2019-07-29,15:04:05,Jeronimos,38.6975,-9.2060,12.5,8.0,MEO-WiFi,AA:BB:CC:DD:EE:FF,[WPA2-PSK-CCMP][ESS],5180,-67,5190,0,1\n"
        );
        let r = s.ingest_csv(csv.as_bytes(), &CsvOptions::default()).unwrap();
        assert_eq!(r.accepted, 1);
        let o = &s.observations()[0];
        assert_eq!(o.device.as_str(), "B");
        assert_eq!(o.obs_time, t("2019-07-29T14:04:05Z"));
        assert_eq!(o.location.as_str(), "Jeronimos");
        let p = o.position.unwrap();
        assert_eq!((p.latitude, p.longitude, p.altitude, p.accuracy), (38.6975, -9.2060, 12.5, 8.0));
        assert_eq!(o.transmitter.ssid, "MEO-WiFi");
        assert_eq!(o.transmitter.bssid.to_string(), "aa:bb:cc:dd:ee:ff");
        assert_eq!(o.radio.capabilities, "[WPA2-PSK-CCMP][ESS]");
        assert_eq!(o.radio.frequency, 5180);
        assert_eq!(o.radio.level, Some(-67));
        assert_eq!(o.radio.centerfreq0, 5190);
        assert_eq!(o.radio.centerfreq1, 0);
        assert_eq!(o.radio.channel_width, ChannelWidth::Mhz40);
        assert!(s.has_location(&"Jeronimos".into()));
        assert!(s.has_device(&"B".into()));
    }

    #[test]
    fn semicolon_file_with_shuffled_columns_and_missing_gps() {
        let csv = "BSSID;ref_name;device_id;date;time;latitude;longitude;altitude;accuracy;SSID;capabilities;frequency;level;centerfreq0;centerfreq1;channelwidth\n\
                   00:11:22:33:44:55;Se;C;2019-08-01;09:00:00;;;;;net;;2462;-80;0;0;0\n\
                   ;Se;C;2019-08-01;09:00:00;;;;;net;;2462;-80;0;0;0\n";
        let mut s = ObservationStore::new();
        let r = s.ingest_csv(csv.as_bytes(), &CsvOptions::default()).unwrap();
        assert_eq!((r.accepted, r.rejected), (1, 1));
        assert_eq!(r.reasons.get("MissingField(BSSID)"), Some(&1));
        assert!(s.observations()[0].position.is_none());
    }

    #[test]
    fn missing_column_and_empty_source() {
        let mut s = ObservationStore::new();
        let csv = HEADER.replace(",channelwidth", "");
        assert!(matches!(
            s.ingest_csv(csv.as_bytes(), &CsvOptions::default()),
            Err(StoreError::MissingColumn(c)) if c == "channelwidth"
        ));
        assert!(matches!(
            s.ingest_csv(&b""[..], &CsvOptions::default()),
            Err(StoreError::EmptySource)
        ));
    }

    #[test]
    fn device_hint_fills_missing_device_column() {
        let header = HEADER.replacen("device_id,", "", 1);
        let csv = format!("{header}2019-07-19,10:00:00,Se,,,,,x,AA:BB:CC:DD:EE:FF,,2412,-50,0,0,0\n");
        let mut s = ObservationStore::new();
        let opts = CsvOptions {
            device_hint: Some("Z".into()),
            ..CsvOptions::default()
        };
        let r = s.ingest_csv(csv.as_bytes(), &opts).unwrap();
        assert_eq!(r.accepted, 1);
        assert_eq!(s.observations()[0].device.as_str(), "Z");
    }

    #[test]
    fn query_selects_by_location_and_day() {
        let mut s = ObservationStore::new();
        s.append_batch(vec![
            raw("Alvalade", "A", "2019-07-19T10:00:00Z", "00:00:00:00:00:01"),
            raw("Alvalade", "B", "2019-07-19T10:05:00Z", "00:00:00:00:00:02"),
            raw("Alvalade", "A", "2019-07-19T10:01:00Z", "00:00:00:00:00:03"),
            raw("Alvalade", "A", "2019-07-26T10:00:00Z", "00:00:00:00:00:01"),
            raw("Alvalade", "B", "2019-07-26T10:00:00Z", "00:00:00:00:00:01"),
            raw("Se", "A", "2019-07-19T11:00:00Z", "00:00:00:00:00:09"),
        ])
        .unwrap();
        let day1 = TimeWindow::new(t("2019-07-19T00:00:00Z"), t("2019-07-19T23:59:59Z"), WindowKind::Period).unwrap();
        let got = s.query(&ObsFilter::new().location("Alvalade").window(day1)).unwrap();
        assert_eq!(got.len(), 3);
        let times: Vec<_> = got.iter().map(|o| o.obs_time).collect();
        assert!(times.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn point_window_includes_the_observation() {
        let mut s = ObservationStore::new();
        s.append_batch(vec![raw("Se", "A", "2019-07-19T10:00:00Z", "00:00:00:00:00:01")]).unwrap();
        let at = t("2019-07-19T10:00:00Z");
        let w = TimeWindow::span(at, at).unwrap();
        assert_eq!(s.query(&ObsFilter::new().window(w)).unwrap().len(), 1);
    }

    #[test]
    fn query_errors() {
        let mut s = ObservationStore::new();
        s.append_batch(vec![raw("Se", "A", "2019-07-19T10:00:00Z", "00:00:00:00:00:01")]).unwrap();
        assert!(matches!(s.query(&ObsFilter::new()), Err(StoreError::EmptyFilter)));
        assert!(matches!(s.query(&ObsFilter::new().location("Nowhere")), Err(StoreError::UnknownLocation(_))));
        assert!(matches!(s.query(&ObsFilter::new().device("Q")), Err(StoreError::UnknownDevice(_))));
    }

    #[test]
    fn projection_and_counting() {
        assert!(distinct_transmitters(std::iter::empty()).is_empty());
        assert!(occurrence_counts(std::iter::empty()).is_empty());
        let mut s = ObservationStore::new();
        s.append_batch(vec![
            raw("Se", "A", "2019-07-19T10:00:00Z", "00:00:00:00:00:0a"),
            raw("Se", "A", "2019-07-19T10:01:00Z", "00:00:00:00:00:0a"),
            raw("Se", "A", "2019-07-19T10:01:00Z", "00:00:00:00:00:0b"),
        ])
        .unwrap();
        let d = distinct_transmitters(s.observations());
        assert_eq!(d.len(), 2);
        let c = occurrence_counts(s.observations());
        let a = NetworkId::parse("00:00:00:00:00:0a").unwrap();
        let b = NetworkId::parse("00:00:00:00:00:0b").unwrap();
        assert_eq!(c.get(&a), Some(&2));
        assert_eq!(c.get(&b), Some(&1));
    }

    #[test]
    fn duplicate_rows_are_kept() {
        let mut s = ObservationStore::new();
        let r = raw("Se", "A", "2019-07-19T10:00:00Z", "00:00:00:00:00:0a");
        s.append_batch(vec![r.clone(), r]).unwrap();
        assert_eq!(s.len(), 2);
        assert_ne!(s.observations()[0].id, s.observations()[1].id);
    }

    #[test]
    fn persisted_store_reopens_identically() {
        let dir = tempfile::tempdir().unwrap();
        let filter = ObsFilter::new().location("Se");
        let before: Vec<Observation> = {
            let mut s = ObservationStore::open(dir.path()).unwrap();
            s.append_batch(vec![
                raw("Se", "A", "2019-07-19T10:00:00Z", "00:00:00:00:00:0a"),
                raw("Se", "B", "2019-07-19T09:00:00Z", "00:00:00:00:00:0b"),
            ])
            .unwrap();
            s.query(&filter).unwrap().into_iter().cloned().collect()
        };
        let mut s = ObservationStore::open(dir.path()).unwrap();
        let after: Vec<Observation> = s.query(&filter).unwrap().into_iter().cloned().collect();
        assert_eq!(before, after);
        assert!(dir.path().join(LOG_FILE).exists());
        assert!(dir.path().join(REGISTRY_FILE).exists());

        s.append_batch(vec![raw("Se", "A", "2019-07-19T11:00:00Z", "00:00:00:00:00:0c")]).unwrap();
        drop(s);
        let s = ObservationStore::open(dir.path()).unwrap();
        assert_eq!(s.len(), 3);
        let ids: BTreeSet<_> = s.observations().iter().map(|o| o.id).collect();
        assert_eq!(ids.len(), 3);
    }

    #[test]
    fn csv_round_trip_through_writer() {
        let mut s = ObservationStore::new();
        s.append_batch(vec![
            raw("Se", "A", "2019-07-19T10:00:00Z", "00:00:00:00:00:0a"),
            raw("Gulbenkian", "B", "2020-01-19T10:00:00Z", "00:00:00:00:00:0b"),
        ])
        .unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, s.observations(), DEFAULT_TIMEZONE).unwrap();
        let mut s2 = ObservationStore::new();
        let r = s2.ingest_csv(buf.as_slice(), &CsvOptions::default()).unwrap();
        assert_eq!(r.accepted, 2);
        let strip = |o: &Observation| (o.obs_time, o.location.clone(), o.device.clone(), o.transmitter.bssid);
        let a: Vec<_> = s.observations().iter().map(strip).collect();
        let b: Vec<_> = s2.observations().iter().map(strip).collect();
        assert_eq!(a, b);
    }
}
