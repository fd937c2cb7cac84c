//! Command-line date handling: bare dates name whole local days.

use anyhow::{anyhow, Context, Result};
use chrono::{DateTime, Duration, NaiveDate, TimeZone, Utc};
use chrono_tz::Tz;

/// First instant of a local calendar day.
pub fn day_start(date: NaiveDate, tz: Tz) -> Result<DateTime<Utc>> {
    let midnight = date.and_hms_opt(0, 0, 0).expect("valid");
    tz.from_local_datetime(&midnight)
        .earliest()
        .map(|t| t.with_timezone(&Utc))
        .ok_or_else(|| anyhow!("{date} has no local midnight in {tz}"))
}

/// `[00:00:00, 23:59:59]` of a local day, in UTC.
pub fn day_bounds(date: NaiveDate, tz: Tz) -> Result<(DateTime<Utc>, DateTime<Utc>)> {
    let next = date.succ_opt().ok_or_else(|| anyhow!("date out of range"))?;
    Ok((day_start(date, tz)?, day_start(next, tz)? - Duration::seconds(1)))
}

/// Local calendar day of an instant.
pub fn local_date(t: DateTime<Utc>, tz: Tz) -> NaiveDate {
    t.with_timezone(&tz).date_naive()
}

pub fn parse_date(text: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(text, "%Y-%m-%d").with_context(|| format!("bad date `{text}`, want YYYY-MM-DD"))
}

/// An RFC 3339 instant, or a date meaning the start (`end = false`) or the
/// last second (`end = true`) of that local day.
pub fn parse_bound(text: &str, tz: Tz, end: bool) -> Result<DateTime<Utc>> {
    if let Ok(t) = DateTime::parse_from_rfc3339(text) {
        return Ok(t.with_timezone(&Utc));
    }
    let (start, last) = day_bounds(parse_date(text)?, tz)?;
    Ok(if end { last } else { start })
}

pub fn parse_tz(text: &str) -> Result<Tz> {
    text.parse::<Tz>().map_err(|e| anyhow!("unknown time zone `{text}`: {e}"))
}
