//! Evaluation harness: how well a trained fingerprint is recognised later,
//! and how often device pairs share a least-frequent network inside short
//! sub-intervals of a session.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use chrono::Duration;
use serde::Serialize;
use thiserror::Error;

use crate::model::{DeviceId, LocationId, NetworkId, Observation, TimeWindow};
use crate::netsets::{bottom_fraction_of, stable_match_rate, NetsetError, StableMap};
use crate::par;
use crate::store::{distinct_transmitters, occurrence_counts, ObservationStore};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AssessError {
    #[error("no observations in the evaluation window")]
    NoObservations,
    #[error("location `{loc}` has {found} device(s) in its session, at least 2 needed")]
    InsufficientDevices { loc: LocationId, found: usize },
    #[error("subdivision lengths must be positive")]
    InvalidSubdivision,
    #[error(transparent)]
    Netset(#[from] NetsetError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StableRate {
    pub loc: LocationId,
    pub device: DeviceId,
    pub rate: f64,
    /// Distinct networks the device saw at the location in the test window.
    pub probe_size: usize,
}

/// Match rate of each device's test-window sightings against the trained
/// fingerprint, for every fingerprinted location the device visited.
pub fn eval_stable_identification(
    store: &ObservationStore,
    stable: &StableMap,
    test_window: &TimeWindow,
) -> Result<Vec<StableRate>, AssessError> {
    let mut out = Vec::new();
    for (loc, set) in stable.iter() {
        if set.is_empty() {
            continue;
        }
        let mut per_device: BTreeMap<&DeviceId, Vec<&Observation>> = BTreeMap::new();
        for o in store.at_location(loc, Some(test_window)) {
            per_device.entry(&o.device).or_default().push(o);
        }
        for (dev, obs) in per_device {
            let probe = distinct_transmitters(obs);
            out.push(StableRate {
                loc: loc.clone(),
                device: dev.clone(),
                rate: stable_match_rate(stable, loc, &probe)?,
                probe_size: probe.len(),
            });
        }
    }
    if out.is_empty() {
        return Err(AssessError::NoObservations);
    }
    Ok(out)
}

/// Device-averaged rate per location.
pub fn mean_rate_by_location(rates: &[StableRate]) -> BTreeMap<LocationId, f64> {
    let mut acc: BTreeMap<LocationId, (f64, usize)> = BTreeMap::new();
    for r in rates {
        let e = acc.entry(r.loc.clone()).or_default();
        e.0 += r.rate;
        e.1 += 1;
    }
    acc.into_iter().map(|(l, (s, n))| (l, s / n as f64)).collect()
}

/// Which sub-intervals count towards a pair's success.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scoring {
    /// Any sub-interval with a shared network.
    #[default]
    Any,
    /// Only the first sub-interval of the session.
    First,
}

/// What is compared between prover and witness in a sub-interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PairRule {
    /// Prover's volatile set against the witness's volatile set.
    #[default]
    Symmetric,
    /// Prover's volatile set against everything non-stable the witness saw.
    ProverVolatile,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolatileEvalOptions {
    /// Session length from the first sighting at a location.
    pub session_length: Duration,
    pub scoring: Scoring,
    pub pair_rule: PairRule,
}

impl Default for VolatileEvalOptions {
    fn default() -> Self {
        Self {
            session_length: Duration::minutes(15),
            scoring: Scoring::Any,
            pair_rule: PairRule::Symmetric,
        }
    }
}

/// Outcome of one ordered (prover, witness) pair at one location and length.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairOutcome {
    pub loc: LocationId,
    pub prover: DeviceId,
    pub witness: DeviceId,
    pub interval_ms: i64,
    pub success: bool,
    /// First sub-interval with a shared network.
    pub bucket: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchRow {
    pub successes: Vec<usize>,
    /// Pairs this row was scored over.
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchTable {
    pub key: String,
    #[serde(serialize_with = "serialize_ms")]
    pub intervals: Vec<Duration>,
    /// Largest per-row pair count; every cell is at most this.
    pub pair_total: usize,
    pub rows: BTreeMap<String, MatchRow>,
}

fn serialize_ms<S: serde::Serializer>(v: &[Duration], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(|d| d.num_milliseconds()))
}

/// Minutes with trailing zeros removed: 15, 7.5, 3.75, 1.875.
pub fn minutes_label(d: Duration) -> String {
    let m = d.num_milliseconds() as f64 / 60_000.0;
    let s = format!("{m:.6}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

impl MatchTable {
    fn new(key: &str, intervals: &[Duration]) -> Self {
        Self {
            key: key.into(),
            intervals: intervals.to_vec(),
            pair_total: 0,
            rows: BTreeMap::new(),
        }
    }

    /// Success percentage per interval over all rows.
    pub fn aggregate_percentages(&self) -> Vec<f64> {
        let pairs: usize = self.rows.values().map(|r| r.pairs).sum();
        (0..self.intervals.len())
            .map(|i| {
                let hits: usize = self.rows.values().map(|r| r.successes[i]).sum();
                if pairs == 0 {
                    0.0
                } else {
                    100.0 * hits as f64 / pairs as f64
                }
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.key.clone();
        for d in &self.intervals {
            let _ = write!(out, ",{} min", minutes_label(*d));
        }
        out.push_str(",pairs\n");
        for (k, r) in &self.rows {
            out.push_str(k);
            for c in &r.successes {
                let _ = write!(out, ",{c}");
            }
            let _ = writeln!(out, ",{}", r.pairs);
        }
        out
    }

    pub fn to_text(&self) -> String {
        let headers: Vec<String> = self
            .intervals
            .iter()
            .map(|d| format!("{} min", minutes_label(*d)))
            .collect();
        let key_w = self
            .rows
            .keys()
            .map(|k| k.chars().count())
            .chain([self.key.len()])
            .max()
            .unwrap_or(0);
        let col_w = headers.iter().map(String::len).max().unwrap_or(0).max(4);
        let mut out = format!("{:<key_w$}", self.key);
        for h in &headers {
            let _ = write!(out, "  {h:>col_w$}");
        }
        out.push('\n');
        for (k, r) in &self.rows {
            let pad = key_w - k.chars().count();
            let _ = write!(out, "{k}{}", " ".repeat(pad));
            for c in &r.successes {
                let _ = write!(out, "  {c:>col_w$}");
            }
            out.push('\n');
        }
        let _ = write!(out, "{:<key_w$}", "%");
        for p in self.aggregate_percentages() {
            let _ = write!(out, "  {:>col_w$}", format!("{p:.0}"));
        }
        out.push('\n');
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VolatileEval {
    pub by_location: MatchTable,
    pub by_device: MatchTable,
    pub pairs: Vec<PairOutcome>,
    pub sessions: BTreeMap<LocationId, TimeWindow>,
}

/// A location's session: rows from its first sighting inside the window for
/// `session_length`, start inclusive, end exclusive.
struct Session<'a> {
    loc: LocationId,
    start: chrono::DateTime<chrono::Utc>,
    rows: Vec<&'a Observation>,
    devices: Vec<DeviceId>,
}

fn sessions<'a>(
    store: &'a ObservationStore,
    window: &TimeWindow,
    length: Duration,
) -> Result<Vec<Session<'a>>, AssessError> {
    let mut out = Vec::new();
    for loc in store.locations_active_in(window) {
        let mut rows = store.at_location(&loc, Some(window)).peekable();
        let Some(start) = rows.peek().map(|o| o.obs_time) else {
            continue;
        };
        let end = start + length;
        let rows: Vec<&Observation> = rows.take_while(|o| o.obs_time < end).collect();
        let devices: Vec<DeviceId> = rows
            .iter()
            .map(|o| o.device.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if devices.len() < 2 {
            return Err(AssessError::InsufficientDevices {
                loc,
                found: devices.len(),
            });
        }
        out.push(Session {
            loc,
            start,
            rows,
            devices,
        });
    }
    if out.is_empty() {
        return Err(AssessError::NoObservations);
    }
    Ok(out)
}

/// Per device, per sub-interval: (volatile set, all non-stable sightings).
type Buckets = BTreeMap<DeviceId, Vec<(BTreeSet<NetworkId>, BTreeSet<NetworkId>)>>;

fn bucket_sets(
    session: &Session<'_>,
    interval: Duration,
    n_buckets: usize,
    fraction: f64,
    stable_here: Option<&BTreeSet<NetworkId>>,
) -> Buckets {
    let ms = interval.num_milliseconds();
    let mut rows: BTreeMap<(&DeviceId, usize), Vec<&Observation>> = BTreeMap::new();
    for o in &session.rows {
        let b = ((o.obs_time - session.start).num_milliseconds() / ms) as usize;
        rows.entry((&o.device, b.min(n_buckets - 1))).or_default().push(o);
    }
    let not_stable = |n: &NetworkId| stable_here.is_none_or(|s| !s.contains(n));
    session
        .devices
        .iter()
        .map(|d| {
            let sets = (0..n_buckets)
                .map(|b| match rows.get(&(d, b)) {
                    None => Default::default(),
                    Some(obs) => {
                        let counts = occurrence_counts(obs.iter().copied());
                        let mut all: BTreeSet<NetworkId> = counts.keys().cloned().collect();
                        all.retain(not_stable);
                        let mut vol = bottom_fraction_of(counts, fraction);
                        vol.retain(not_stable);
                        (vol, all)
                    }
                })
                .collect();
            (d.clone(), sets)
        })
        .collect()
}

/// Splits each location's session into sub-intervals of every requested length
/// and scores every ordered (prover, witness) pair of devices present.
pub fn eval_volatile_matching(
    store: &ObservationStore,
    stable: &StableMap,
    session_window: &TimeWindow,
    subdivisions: &[Duration],
    fraction: f64,
    options: VolatileEvalOptions,
) -> Result<VolatileEval, AssessError> {
    if subdivisions.iter().any(|d| d.num_milliseconds() <= 0)
        || options.session_length.num_milliseconds() <= 0
    {
        return Err(AssessError::InvalidSubdivision);
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(NetsetError::InvalidFraction(fraction).into());
    }
    let sessions = sessions(store, session_window, options.session_length)?;

    let tasks: Vec<(usize, usize)> = (0..sessions.len())
        .flat_map(|s| (0..subdivisions.len()).map(move |i| (s, i)))
        .collect();
    let results: Vec<Vec<PairOutcome>> = par::map(&tasks, |&(s, i)| {
        let session = &sessions[s];
        let interval = subdivisions[i];
        let total = options.session_length.num_milliseconds();
        let ms = interval.num_milliseconds();
        let n_buckets = ((total + ms - 1) / ms).max(1) as usize;
        let sets = bucket_sets(session, interval, n_buckets, fraction, stable.get(&session.loc));
        let scored = match options.scoring {
            Scoring::Any => n_buckets,
            Scoring::First => 1,
        };
        let mut out = Vec::new();
        for p in &session.devices {
            for w in &session.devices {
                if p == w {
                    continue;
                }
                let bucket = (0..scored).find(|&b| {
                    let prover = &sets[p][b].0;
                    let witness = match options.pair_rule {
                        PairRule::Symmetric => &sets[w][b].0,
                        PairRule::ProverVolatile => &sets[w][b].1,
                    };
                    !prover.is_disjoint(witness)
                });
                out.push(PairOutcome {
                    loc: session.loc.clone(),
                    prover: p.clone(),
                    witness: w.clone(),
                    interval_ms: ms,
                    success: bucket.is_some(),
                    bucket,
                });
            }
        }
        out
    });
    let pairs: Vec<PairOutcome> = results.into_iter().flatten().collect();

    let mut by_location = MatchTable::new("location", subdivisions);
    let mut by_device = MatchTable::new("device", subdivisions);
    for s in &sessions {
        let n = s.devices.len();
        by_location.rows.insert(
            s.loc.to_string(),
            MatchRow {
                successes: vec![0; subdivisions.len()],
                pairs: n * (n - 1),
            },
        );
        for d in &s.devices {
            by_device
                .rows
                .entry(d.to_string())
                .or_insert_with(|| MatchRow {
                    successes: vec![0; subdivisions.len()],
                    pairs: 0,
                })
                .pairs += n - 1;
        }
    }
    for p in pairs.iter().filter(|p| p.success) {
        let i = subdivisions
            .iter()
            .position(|d| d.num_milliseconds() == p.interval_ms)
            .expect("interval from input");
        by_location.rows.get_mut(p.loc.as_str()).expect("row").successes[i] += 1;
        by_device.rows.get_mut(p.prover.as_str()).expect("row").successes[i] += 1;
    }
    for t in [&mut by_location, &mut by_device] {
        t.pair_total = t.rows.values().map(|r| r.pairs).max().unwrap_or(0);
    }

    Ok(VolatileEval {
        by_location,
        by_device,
        pairs,
        sessions: sessions
            .iter()
            .map(|s| {
                let end = s.start + options.session_length - Duration::milliseconds(1);
                (s.loc.clone(), TimeWindow::span(s.start, end).expect("ordered"))
            })
            .collect(),
    })
}

/// Published reference figures for the Lisbon dataset, in table order.
pub mod reference {
    /// Location names in table order.
    pub const LOCATIONS: [&str; 6] = ["Jerónimos", "Comércio", "Sé", "Oceanário", "Alvalade", "Gulbenkian"];
    pub const TRAINING_TOTALS: [usize; 6] = [677, 551, 363, 243, 163, 292];
    pub const STABLE_SIZES: [usize; 6] = [70, 58, 47, 25, 17, 30];
    pub const STABLE_SIZE_TOLERANCE: usize = 5;
    /// (location, rate) after six months.
    pub const STABLE_RATES: [(&str, f64); 3] = [("Alvalade", 0.98), ("Gulbenkian", 0.89), ("Jerónimos", 0.14)];
    pub const STABLE_RATE_TOLERANCE: f64 = 0.05;
    pub const TEST_DAY: &str = "2020-01-19";
    /// Sub-interval lengths in milliseconds: 15, 7.5, 3.75, 1.875 minutes.
    pub const INTERVALS_MS: [i64; 4] = [900_000, 450_000, 225_000, 112_500];
    pub const AGGREGATE_PERCENT: [f64; 4] = [97.0, 78.0, 53.0, 36.0];
    pub const AGGREGATE_TOLERANCE: f64 = 5.0;
    pub const LOCATION_TABLE: [[usize; 4]; 6] = [
        [6, 6, 5, 3],
        [5, 1, 0, 0],
        [6, 4, 2, 0],
        [6, 5, 0, 0],
        [6, 6, 6, 4],
        [6, 6, 6, 6],
    ];
    pub const LOCATION_CELLS_REQUIRED: usize = 20;
    pub const DEVICES: [&str; 3] = ["A", "B", "C"];
    pub const DEVICE_TABLE: [[usize; 4]; 3] = [[11, 10, 6, 4], [12, 10, 7, 5], [12, 8, 6, 4]];
    pub const CELL_TOLERANCE: usize = 1;

    /// ASCII-folded lowercase, for matching dataset spellings to table names.
    pub fn fold(name: &str) -> String {
        name.chars()
            .map(|c| match c {
                'á' | 'à' | 'â' | 'ã' | 'Á' => 'a',
                'é' | 'ê' | 'É' => 'e',
                'í' | 'Í' => 'i',
                'ó' | 'ô' | 'õ' | 'Ó' => 'o',
                'ú' | 'Ú' => 'u',
                'ç' | 'Ç' => 'c',
                c => c.to_ascii_lowercase(),
            })
            .filter(|c| c.is_ascii_alphanumeric())
            .collect()
    }

    /// Table position of a dataset location name.
    pub fn location_index(name: &str) -> Option<usize> {
        let f = fold(name);
        LOCATIONS.iter().position(|l| {
            let l = fold(l);
            f == l || (f.len() > 1 && (f.contains(&l) || l.contains(&f)))
        })
    }
}
