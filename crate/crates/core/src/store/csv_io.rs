//! The scan CSV format: one row per sighted access point, sixteen columns.
//!
//! Published files carry local (Europe/Lisbon) wall-clock `date` and `time`
//! columns; they are fused into a UTC timestamp on the way in and split back
//! out on the way out.

use std::collections::HashMap;
use std::io::Write;

use chrono::{DateTime, NaiveDate, NaiveDateTime, NaiveTime, TimeZone, Utc};
use chrono_tz::Tz;

use crate::model::{ChannelWidth, DeviceId, GeoFix, Observation, RawObservation, SignalType, ValidationError};

use super::StoreError;

/// Column names in canonical output order.
pub const COLUMNS: [&str; 16] = [
    "device_id",
    "date",
    "time",
    "ref_name",
    "latitude",
    "longitude",
    "altitude",
    "accuracy",
    "SSID",
    "BSSID",
    "capabilities",
    "frequency",
    "level",
    "centerfreq0",
    "centerfreq1",
    "channelwidth",
];

pub const DEFAULT_TIMEZONE: Tz = chrono_tz::Europe::Lisbon;

#[derive(Debug, Clone)]
pub struct CsvOptions {
    /// Used when the file has no `device_id` column or a row leaves it blank.
    pub device_hint: Option<DeviceId>,
    /// Zone of the `date`/`time` columns.
    pub timezone: Tz,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            device_hint: None,
            timezone: DEFAULT_TIMEZONE,
        }
    }
}

/// Picks whichever of `,` `;` `\t` occurs most in the header line.
pub fn sniff_delimiter(header_line: &str) -> u8 {
    (*b",;\t")
        .into_iter()
        .map(|d| (header_line.bytes().filter(|&b| b == d).count(), d))
        .max_by_key(|&(count, d)| (count, std::cmp::Reverse(d)))
        .filter(|&(count, _)| count > 0)
        .map(|(_, d)| d)
        .unwrap_or(b',')
}

/// Maps canonical column name to position in the file's header.
pub(super) struct HeaderMap {
    index: HashMap<&'static str, usize>,
}

impl HeaderMap {
    pub(super) fn new(header: &csv::StringRecord, opts: &CsvOptions) -> Result<Self, StoreError> {
        let mut index = HashMap::new();
        for (pos, name) in header.iter().enumerate() {
            let name = name.trim().trim_start_matches('\u{feff}');
            if let Some(col) = COLUMNS.iter().find(|c| c.eq_ignore_ascii_case(name)) {
                index.entry(*col).or_insert(pos);
            }
        }
        for col in COLUMNS {
            if col == "device_id" && opts.device_hint.is_some() {
                continue;
            }
            if !index.contains_key(col) {
                return Err(StoreError::MissingColumn(col.to_string()));
            }
        }
        Ok(Self { index })
    }

    fn get<'r>(&self, row: &'r csv::StringRecord, col: &str) -> &'r str {
        self.index
            .get(col)
            .and_then(|&i| row.get(i))
            .map(str::trim)
            .unwrap_or("")
    }
}

fn parse_int(text: &str, field: &'static str) -> Result<i64, ValidationError> {
    if let Ok(v) = text.parse::<i64>() {
        return Ok(v);
    }
    match text.parse::<f64>() {
        Ok(v) if v.is_finite() && v.fract() == 0.0 => Ok(v as i64),
        _ => Err(ValidationError::MalformedField(field)),
    }
}

fn parse_opt_int(text: &str, field: &'static str) -> Result<Option<i64>, ValidationError> {
    if text.is_empty() {
        Ok(None)
    } else {
        parse_int(text, field).map(Some)
    }
}

fn parse_opt_f64(text: &str, field: &'static str) -> Result<Option<f64>, ValidationError> {
    if text.is_empty() {
        return Ok(None);
    }
    text.parse::<f64>()
        .map(Some)
        .map_err(|_| ValidationError::MalformedField(field))
}

pub(super) fn local_to_utc(date: &str, time: &str, tz: Tz) -> Result<DateTime<Utc>, ValidationError> {
    let bad = || ValidationError::InvalidTimestamp(format!("{date} {time}"));
    let d = NaiveDate::parse_from_str(date, "%Y-%m-%d").map_err(|_| bad())?;
    let t = NaiveTime::parse_from_str(time, "%H:%M:%S%.f").map_err(|_| bad())?;
    // Ambiguous fall-back hour resolves to the earlier instant; spring-forward gap is invalid.
    tz.from_local_datetime(&NaiveDateTime::new(d, t))
        .earliest()
        .map(|dt| dt.with_timezone(&Utc))
        .ok_or_else(bad)
}

/// Turns one CSV row into an unvalidated record.
pub(super) fn row_to_raw(
    header: &HeaderMap,
    row: &csv::StringRecord,
    opts: &CsvOptions,
) -> Result<RawObservation, ValidationError> {
    let get = |c| header.get(row, c);

    let device = match (get("device_id"), &opts.device_hint) {
        ("", Some(hint)) => hint.0.clone(),
        ("", None) => return Err(ValidationError::MissingField("device_id")),
        (d, _) => d.to_string(),
    };
    if get("BSSID").is_empty() {
        return Err(ValidationError::MissingField("BSSID"));
    }
    let obs_time = local_to_utc(get("date"), get("time"), opts.timezone)?;

    let position = match (
        parse_opt_f64(get("latitude"), "latitude")?,
        parse_opt_f64(get("longitude"), "longitude")?,
    ) {
        (Some(latitude), Some(longitude)) => Some(GeoFix {
            latitude,
            longitude,
            altitude: parse_opt_f64(get("altitude"), "altitude")?.unwrap_or(0.0),
            accuracy: parse_opt_f64(get("accuracy"), "accuracy")?.unwrap_or(0.0),
        }),
        _ => None,
    };

    let channel_width = match parse_opt_int(get("channelwidth"), "channelwidth")? {
        None => ChannelWidth::default(),
        Some(code) => ChannelWidth::from_code(code)
            .ok_or(ValidationError::OutOfRangeField("channelwidth"))?,
    };

    Ok(RawObservation {
        id: None,
        obs_time,
        location: get("ref_name").to_string(),
        device,
        signal_type: SignalType::Wifi,
        bssid: get("BSSID").to_string(),
        ssid: get("SSID").to_string(),
        capabilities: get("capabilities").to_string(),
        frequency: parse_int(get("frequency"), "frequency")?,
        level: parse_opt_int(get("level"), "level")?,
        centerfreq0: parse_opt_int(get("centerfreq0"), "centerfreq0")?.unwrap_or(0),
        centerfreq1: parse_opt_int(get("centerfreq1"), "centerfreq1")?.unwrap_or(0),
        channel_width,
        position,
    })
}

/// Writes observations as comma-separated rows with the canonical header.
pub fn write_csv<'a, W: Write>(
    out: W,
    observations: impl IntoIterator<Item = &'a Observation>,
    timezone: Tz,
) -> Result<(), StoreError> {
    let mut w = csv::WriterBuilder::new().from_writer(out);
    w.write_record(COLUMNS)?;
    for o in observations {
        let local = o.obs_time.with_timezone(&timezone);
        let (lat, lon, alt, acc) = match &o.position {
            Some(p) => (
                p.latitude.to_string(),
                p.longitude.to_string(),
                p.altitude.to_string(),
                p.accuracy.to_string(),
            ),
            None => Default::default(),
        };
        w.write_record([
            o.device.as_str(),
            &local.format("%Y-%m-%d").to_string(),
            &local.format("%H:%M:%S").to_string(),
            o.location.as_str(),
            &lat,
            &lon,
            &alt,
            &acc,
            &o.transmitter.ssid,
            &o.transmitter.bssid.to_string(),
            &o.radio.capabilities,
            &o.radio.frequency.to_string(),
            &o.radio.level.map(|l| l.to_string()).unwrap_or_default(),
            &o.radio.centerfreq0.to_string(),
            &o.radio.centerfreq1.to_string(),
            &o.radio.channel_width.code().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
