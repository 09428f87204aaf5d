//! Millisecond-precision UTC instants and durations.
//!
//! Timestamps serialize as ISO-8601 with a `Z` suffix
//! (`2013-03-04T09:30:00.000Z`); durations serialize as decimal seconds with
//! at most three fractional digits so that parsing them back is exact.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, SecondsFormat, TimeZone, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Lower bound (inclusive) for any timestamp attached to an event: 2008-01-01.
pub const MIN_EVENT_MS: i64 = 1_199_145_600_000;
/// Upper bound (exclusive) for any timestamp attached to an event: 2100-01-01.
pub const MAX_EVENT_MS: i64 = 4_102_444_800_000;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TimeError {
    #[error("unparseable timestamp `{0}`")]
    Unparseable(String),
    #[error("unparseable duration `{0}`")]
    BadDuration(String),
}

/// A UTC instant stored as epoch milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Timestamp(i64);

impl Timestamp {
    pub const fn from_millis(ms: i64) -> Self {
        Timestamp(ms)
    }

    pub const fn millis(self) -> i64 {
        self.0
    }

    pub fn from_ymd_hms(y: i32, m: u32, d: u32, hh: u32, mm: u32, ss: u32) -> Self {
        let dt = Utc
            .with_ymd_and_hms(y, m, d, hh, mm, ss)
            .single()
            .expect("valid calendar date");
        Timestamp(dt.timestamp_millis())
    }

    /// True when the instant lies in the window accepted for event data.
    pub fn in_event_range(self) -> bool {
        (MIN_EVENT_MS..MAX_EVENT_MS).contains(&self.0)
    }

    pub fn plus(self, d: Duration) -> Self {
        Timestamp(self.0 + d.millis() as i64)
    }

    pub fn plus_millis(self, ms: i64) -> Self {
        Timestamp(self.0 + ms)
    }

    /// Non-negative difference `self - earlier`, saturating at zero.
    pub fn since(self, earlier: Timestamp) -> Duration {
        Duration((self.0 - earlier.0).max(0) as u64)
    }

    pub fn to_iso(self) -> String {
        match Utc.timestamp_millis_opt(self.0).single() {
            Some(dt) => dt.to_rfc3339_opts(SecondsFormat::Millis, true),
            None => format!("@{}ms", self.0),
        }
    }

    /// Accepts RFC-3339 (any offset), or a bare `YYYY-MM-DD` meaning midnight UTC.
    pub fn parse(s: &str) -> Result<Self, TimeError> {
        let t = s.trim();
        if let Ok(dt) = DateTime::parse_from_rfc3339(t) {
            return Ok(Timestamp(dt.with_timezone(&Utc).timestamp_millis()));
        }
        if let Ok(dt) = DateTime::parse_from_str(t, "%Y-%m-%dT%H:%M:%S%.f%:z") {
            return Ok(Timestamp(dt.with_timezone(&Utc).timestamp_millis()));
        }
        if let Ok(d) = NaiveDate::parse_from_str(t, "%Y-%m-%d") {
            let dt = d.and_hms_opt(0, 0, 0).expect("midnight").and_utc();
            return Ok(Timestamp(dt.timestamp_millis()));
        }
        Err(TimeError::Unparseable(s.to_string()))
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_iso())
    }
}

impl FromStr for Timestamp {
    type Err = TimeError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Timestamp::parse(s)
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_iso())
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Timestamp::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// A non-negative span in whole milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Duration(u64);

impl Duration {
    pub const ZERO: Duration = Duration(0);

    pub const fn from_millis(ms: u64) -> Self {
        Duration(ms)
    }

    pub const fn from_secs(s: u64) -> Self {
        Duration(s * 1000)
    }

    pub const fn millis(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    /// Parses `12`, `12.5`, `12.345`; more than three fractional digits is an error.
    pub fn parse_secs(s: &str) -> Result<Self, TimeError> {
        let bad = || TimeError::BadDuration(s.to_string());
        let t = s.trim();
        let (whole, frac) = match t.split_once('.') {
            Some((w, f)) => (w, f),
            None => (t, ""),
        };
        if whole.is_empty() || frac.len() > 3 || !frac.chars().all(|c| c.is_ascii_digit()) {
            return Err(bad());
        }
        let whole: u64 = whole.parse().map_err(|_| bad())?;
        let mut frac_ms = 0u64;
        for (i, c) in frac.chars().enumerate() {
            frac_ms += (c as u64 - '0' as u64) * 10u64.pow(2 - i as u32);
        }
        Ok(Duration(whole * 1000 + frac_ms))
    }

    pub fn to_secs_string(self) -> String {
        let whole = self.0 / 1000;
        let frac = self.0 % 1000;
        if frac == 0 {
            whole.to_string()
        } else {
            let s = format!("{whole}.{frac:03}");
            s.trim_end_matches('0').to_string()
        }
    }
}

impl Serialize for Duration {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_secs_string())
    }
}

impl<'de> Deserialize<'de> for Duration {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Duration::parse_secs(&s).map_err(serde::de::Error::custom)
    }
}
