//! Reproduction checks against the published Lisbon scan dataset.
//!
//! The training subset is the first ten distinct local collection days.
//! Location names are matched to the reference tables by ASCII folding, and
//! devices are lettered A, B, C… in ascending id order.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::{Duration, NaiveDate};
use chrono_tz::Tz;
use wifiproof_core::assessment::{
    eval_stable_identification, eval_volatile_matching, mean_rate_by_location, reference, MatchTable,
    VolatileEval, VolatileEvalOptions,
};
use wifiproof_core::netsets::compute_stable_top_fraction;
use wifiproof_core::store::{distinct_transmitters, CsvOptions};
use wifiproof_core::{DeviceId, IngestReport, LocationId, ObservationStore, StableMap, TimeWindow};

use crate::timeparse::{day_bounds, local_date, parse_date};

pub const TRAINING_DAYS: usize = 10;
pub const STABLE_FRACTION: f64 = 0.10;
pub const VOLATILE_FRACTION: f64 = 0.10;

/// One line of a reproduction report.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckLine {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl std::fmt::Display for CheckLine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        write!(f, "{verdict} {}: {}", self.name, self.detail)
    }
}

/// Every `*.csv` below `dir`, sorted.
pub fn csv_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let pattern = dir.join("**").join("*.csv");
    let mut files: Vec<PathBuf> = glob::glob(&pattern.to_string_lossy())?.filter_map(Result::ok).collect();
    files.sort();
    Ok(files)
}

/// Ingests a CSV file, using its stem as the device id when the file has none.
pub fn ingest_file(store: &mut ObservationStore, path: &Path, tz: Tz) -> Result<IngestReport> {
    let opts = CsvOptions {
        device_hint: path.file_stem().map(|s| DeviceId::new(s.to_string_lossy())),
        timezone: tz,
    };
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    store
        .ingest_csv(std::io::BufReader::new(file), &opts)
        .with_context(|| format!("ingesting {}", path.display()))
}

pub fn load_dir(dir: &Path, tz: Tz) -> Result<(ObservationStore, IngestReport)> {
    let files = csv_files(dir)?;
    if files.is_empty() {
        bail!("no CSV files under {}", dir.display());
    }
    let mut store = ObservationStore::new();
    let mut total = IngestReport::default();
    for f in files {
        total.merge(&ingest_file(&mut store, &f, tz)?);
    }
    Ok((store, total))
}

/// Distinct local dates with at least one observation, ascending.
pub fn collection_days(store: &ObservationStore, tz: Tz) -> Vec<NaiveDate> {
    store
        .observations()
        .iter()
        .map(|o| local_date(o.obs_time, tz))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// From the start of the first collection day to the end of the tenth.
pub fn training_window(store: &ObservationStore, tz: Tz) -> Result<TimeWindow> {
    let days = collection_days(store, tz);
    let (Some(first), Some(last)) = (days.first(), days[..days.len().min(TRAINING_DAYS)].last()) else {
        bail!("store is empty");
    };
    let (start, _) = day_bounds(*first, tz)?;
    let (_, end) = day_bounds(*last, tz)?;
    Ok(TimeWindow::epoch(start, end)?)
}

/// Store locations keyed by reference table position.
pub fn reference_locations(store: &ObservationStore) -> BTreeMap<usize, LocationId> {
    store
        .locations()
        .filter_map(|l| reference::location_index(l.id.as_str()).map(|i| (i, l.id.clone())))
        .collect()
}

pub fn intervals() -> Vec<Duration> {
    reference::INTERVALS_MS.iter().map(|&ms| Duration::milliseconds(ms)).collect()
}

fn fmt_row<T: std::fmt::Display>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

/// Criterion: distinct transmitters per location over the training subset.
pub fn check_totals(store: &ObservationStore, training: &TimeWindow) -> CheckLine {
    let locs = reference_locations(store);
    let got: Vec<Option<usize>> = (0..reference::LOCATIONS.len())
        .map(|i| locs.get(&i).map(|l| distinct_transmitters(store.at_location(l, Some(training))).len()))
        .collect();
    let pass = got
        .iter()
        .zip(reference::TRAINING_TOTALS)
        .all(|(g, want)| *g == Some(want));
    CheckLine {
        name: "1 dataset totals (exact)".into(),
        pass,
        detail: format!("got {got:?}, want {:?}", reference::TRAINING_TOTALS),
    }
}

/// Criterion: top-fraction stable-set sizes within the pinned tolerance.
pub fn check_stable_sizes(store: &ObservationStore, stable: &StableMap) -> CheckLine {
    let locs = reference_locations(store);
    let got: Vec<usize> = (0..reference::LOCATIONS.len())
        .map(|i| locs.get(&i).and_then(|l| stable.get(l)).map_or(0, BTreeSet::len))
        .collect();
    let pass = got
        .iter()
        .zip(reference::STABLE_SIZES)
        .all(|(g, want)| g.abs_diff(want) <= reference::STABLE_SIZE_TOLERANCE);
    CheckLine {
        name: format!("2 stable-set sizes (±{})", reference::STABLE_SIZE_TOLERANCE),
        pass,
        detail: format!("got {got:?}, want {:?}", reference::STABLE_SIZES),
    }
}

/// Criterion: device-averaged identification rates on the test day.
pub fn check_stable_rates(store: &ObservationStore, stable: &StableMap, tz: Tz) -> Result<CheckLine> {
    let (s, e) = day_bounds(parse_date(reference::TEST_DAY)?, tz)?;
    let test = TimeWindow::period(s, e)?;
    let name = format!("3 stable identification (±{})", reference::STABLE_RATE_TOLERANCE);
    let rates = match eval_stable_identification(store, stable, &test) {
        Ok(r) => mean_rate_by_location(&r),
        Err(e) => {
            return Ok(CheckLine {
                name,
                pass: false,
                detail: format!("{e}"),
            })
        }
    };
    let by_name: BTreeMap<usize, f64> = rates
        .iter()
        .filter_map(|(l, r)| reference::location_index(l.as_str()).map(|i| (i, *r)))
        .collect();
    let mut pass = true;
    let mut parts = Vec::new();
    for (loc, want) in reference::STABLE_RATES {
        let i = reference::location_index(loc).expect("reference name");
        let got = by_name.get(&i).copied();
        pass &= got.is_some_and(|g| (g - want).abs() <= reference::STABLE_RATE_TOLERANCE);
        parts.push(format!("{loc} {} vs {want}", got.map_or("n/a".into(), |g| format!("{g:.3}"))));
    }
    Ok(CheckLine {
        name,
        pass,
        detail: parts.join("; "),
    })
}

pub fn volatile_eval(store: &ObservationStore, stable: &StableMap, training: &TimeWindow) -> Result<VolatileEval> {
    Ok(eval_volatile_matching(
        store,
        stable,
        training,
        &intervals(),
        VOLATILE_FRACTION,
        VolatileEvalOptions::default(),
    )?)
}

fn table_rows(table: &MatchTable, key: impl Fn(&str) -> Option<usize>) -> BTreeMap<usize, Vec<usize>> {
    table
        .rows
        .iter()
        .filter_map(|(k, r)| key(k).map(|i| (i, r.successes.clone())))
        .collect()
}

/// Criterion: aggregate percentages and per-cell agreement of the location table.
pub fn check_volatile_locations(ev: &VolatileEval) -> Vec<CheckLine> {
    let agg = ev.by_location.aggregate_percentages();
    let agg_pass = agg.len() == 4
        && agg
            .iter()
            .zip(reference::AGGREGATE_PERCENT)
            .all(|(g, w)| (g - w).abs() <= reference::AGGREGATE_TOLERANCE);
    let rows = table_rows(&ev.by_location, reference::location_index);
    let mut within = 0;
    for (i, want) in reference::LOCATION_TABLE.iter().enumerate() {
        if let Some(got) = rows.get(&i) {
            within += got
                .iter()
                .zip(want)
                .filter(|(g, w)| g.abs_diff(**w) <= reference::CELL_TOLERANCE)
                .count();
        }
    }
    let got_rows: Vec<String> = (0..6)
        .map(|i| rows.get(&i).map_or("-".into(), |r| fmt_row(r)))
        .collect();
    vec![
        CheckLine {
            name: format!("4a volatile aggregate % (±{})", reference::AGGREGATE_TOLERANCE),
            pass: agg_pass,
            detail: format!(
                "got [{}], want {:?}",
                agg.iter().map(|p| format!("{p:.1}")).collect::<Vec<_>>().join(", "),
                reference::AGGREGATE_PERCENT
            ),
        },
        CheckLine {
            name: format!(
                "4b location table cells within ±{} (need ≥{})",
                reference::CELL_TOLERANCE,
                reference::LOCATION_CELLS_REQUIRED
            ),
            pass: within >= reference::LOCATION_CELLS_REQUIRED,
            detail: format!("{within}/24; rows {}", got_rows.join(" | ")),
        },
    ]
}

/// Criterion: per-device table rows within ±1, devices lettered by ascending id.
pub fn check_volatile_devices(ev: &VolatileEval) -> CheckLine {
    let letters: BTreeMap<String, usize> = ev
        .by_device
        .rows
        .keys()
        .enumerate()
        .map(|(i, k)| (k.clone(), i))
        .collect();
    let rows = table_rows(&ev.by_device, |k| letters.get(k).copied());
    let mut pass = rows.len() == reference::DEVICES.len();
    let mut parts = Vec::new();
    for (i, want) in reference::DEVICE_TABLE.iter().enumerate() {
        let got = rows.get(&i);
        pass &= got.is_some_and(|g| {
            g.iter()
                .zip(want)
                .all(|(a, b)| a.abs_diff(*b) <= reference::CELL_TOLERANCE)
        });
        parts.push(format!(
            "{} [{}] vs [{}]",
            reference::DEVICES[i],
            got.map_or("-".into(), |g| fmt_row(g)),
            fmt_row(want)
        ));
    }
    CheckLine {
        name: format!("5 device table rows (±{} per cell)", reference::CELL_TOLERANCE),
        pass,
        detail: parts.join("; "),
    }
}

/// All dataset criteria in order.
pub fn run_all(dir: &Path, tz: Tz) -> Result<Vec<CheckLine>> {
    let (store, report) = load_dir(dir, tz)?;
    tracing::info!(accepted = report.accepted, rejected = report.rejected, "dataset ingested");
    let training = training_window(&store, tz)?;
    let mut lines = vec![check_totals(&store, &training)];
    let stable = compute_stable_top_fraction(&store, &training, STABLE_FRACTION)?;
    lines.push(check_stable_sizes(&store, &stable));
    lines.push(check_stable_rates(&store, &stable, tz)?);
    match volatile_eval(&store, &stable, &training) {
        Ok(ev) => {
            lines.extend(check_volatile_locations(&ev));
            lines.push(check_volatile_devices(&ev));
        }
        Err(e) => {
            for name in ["4 volatile tables", "5 device table"] {
                lines.push(CheckLine {
                    name: name.into(),
                    pass: false,
                    detail: format!("{e}"),
                });
            }
        }
    }
    Ok(lines)
}
