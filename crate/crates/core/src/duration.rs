//! ISO-8601 durations for configuration files and CLI flags.

use chrono::Duration;
use serde::{Deserialize, Deserializer, Serializer};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DurationError {
    #[error("invalid ISO-8601 duration `{0}`")]
    Syntax(String),
    #[error("duration `{0}` uses calendar years or months, which have no fixed length")]
    Calendar(String),
}

/// Parses `PnWnDTnHnMn.nS` style durations. Years and months are rejected.
pub fn parse(text: &str) -> Result<Duration, DurationError> {
    let trimmed = text.trim();
    match iso8601::duration(trimmed).map_err(|_| DurationError::Syntax(text.to_string()))? {
        iso8601::Duration::Weeks(w) => Ok(Duration::weeks(i64::from(w))),
        iso8601::Duration::YMDHMS {
            year,
            month,
            day,
            hour,
            minute,
            second,
            millisecond,
        } => {
            if year != 0 || month != 0 {
                return Err(DurationError::Calendar(text.to_string()));
            }
            Ok(Duration::days(i64::from(day))
                + Duration::hours(i64::from(hour))
                + Duration::minutes(i64::from(minute))
                + Duration::seconds(i64::from(second))
                + Duration::milliseconds(i64::from(millisecond)))
        }
    }
}

/// Canonical rendering: `PnDTnHnMnS`, omitting zero components. Zero is `PT0S`.
pub fn format(d: Duration) -> String {
    let mut ms = d.num_milliseconds();
    let neg = ms < 0;
    ms = ms.abs();
    let days = ms / 86_400_000;
    ms %= 86_400_000;
    let hours = ms / 3_600_000;
    ms %= 3_600_000;
    let minutes = ms / 60_000;
    ms %= 60_000;
    let secs = ms / 1000;
    let millis = ms % 1000;

    let mut out = String::from(if neg { "-P" } else { "P" });
    if days > 0 {
        out.push_str(&format!("{days}D"));
    }
    if hours > 0 || minutes > 0 || secs > 0 || millis > 0 || days == 0 {
        out.push('T');
        if hours > 0 {
            out.push_str(&format!("{hours}H"));
        }
        if minutes > 0 {
            out.push_str(&format!("{minutes}M"));
        }
        if millis > 0 {
            out.push_str(&format!("{secs}.{millis:03}S"));
        } else if secs > 0 || (hours == 0 && minutes == 0) {
            out.push_str(&format!("{secs}S"));
        }
    }
    out
}

/// Serde adapter: ISO-8601 string on the wire.
pub mod iso {
    use super::*;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format(*d))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let text = String::deserialize(d)?;
        parse(&text).map_err(serde::de::Error::custom)
    }
}

/// Serde adapter for `Vec<Duration>` as ISO-8601 strings.
pub mod iso_vec {
    use super::*;
    use serde::ser::SerializeSeq;

    pub fn serialize<S: Serializer>(ds: &[Duration], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(ds.len()))?;
        for d in ds {
            seq.serialize_element(&format(*d))?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Duration>, D::Error> {
        let texts = Vec::<String>::deserialize(d)?;
        texts
            .iter()
            .map(|t| parse(t).map_err(serde::de::Error::custom))
            .collect()
    }
}

/// Serde adapter: whole seconds as an integer.
pub mod seconds {
    use super::*;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_i64(d.num_seconds())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::seconds(i64::deserialize(d)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_common_forms() {
        assert_eq!(parse("PT2H").unwrap(), Duration::minutes(120));
        assert_eq!(parse("PT7M30S").unwrap(), Duration::seconds(450));
        assert_eq!(parse("P7D").unwrap(), Duration::days(7));
        assert_eq!(parse("P1W").unwrap(), Duration::days(7));
        assert_eq!(parse("PT0S").unwrap(), Duration::zero());
        assert_eq!(parse("PT1M52.5S").unwrap(), Duration::milliseconds(112_500));
    }

    #[test]
    fn rejects_calendar_units_and_garbage() {
        assert!(matches!(parse("P1M"), Err(DurationError::Calendar(_))));
        assert!(matches!(parse("P1Y"), Err(DurationError::Calendar(_))));
        assert!(matches!(parse("15 minutes"), Err(DurationError::Syntax(_))));
    }

    #[test]
    fn format_round_trips() {
        for d in [
            Duration::zero(),
            Duration::seconds(1),
            Duration::minutes(15),
            Duration::milliseconds(112_500),
            Duration::hours(2),
            Duration::days(7),
            Duration::days(1) + Duration::minutes(3),
        ] {
            assert_eq!(parse(&format(d)).unwrap(), d, "{}", format(d));
        }
        assert_eq!(format(Duration::minutes(90)), "PT1H30M");
        assert_eq!(format(Duration::days(1)), "P1D");
    }
}
