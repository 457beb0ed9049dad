use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, Timelike, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::calendar::Calendar;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    Csv,
    Jsonl,
}

impl FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(InputFormat::Csv),
            "jsonl" => Ok(InputFormat::Jsonl),
            other => Err(Error::Config(format!("unknown input format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Option<Self> {
        let ok = lat.is_finite() && lon.is_finite() && (-90.0..=90.0).contains(&lat) && (-180.0..=180.0).contains(&lon);
        ok.then_some(GeoPoint { lat, lon })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Location {
    Country(String),
    Point(GeoPoint),
}

/// One timestamped, located observation of a user.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoEvent {
    pub user_id: String,
    pub timestamp: DateTime<Utc>,
    pub location: Location,
}

/// An event whose location has been resolved to a registry index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountryEvent {
    pub user_id: String,
    pub timestamp: DateTime<Utc>,
    pub country: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    BadFieldCount,
    BadUser,
    BadTimestamp,
    BadCountry,
    BadCoordinates,
    BadJson,
    MissingLocation,
    AmbiguousLocation,
    OutOfInterval,
    UnknownCountry,
}

/// Per-reason counts of rejected records.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectStats {
    pub accepted: usize,
    pub rejected: BTreeMap<RejectReason, usize>,
}

impl RejectStats {
    pub fn reject(&mut self, reason: RejectReason) {
        *self.rejected.entry(reason).or_default() += 1;
    }

    pub fn count(&self, reason: RejectReason) -> usize {
        self.rejected.get(&reason).copied().unwrap_or(0)
    }

    pub fn total_rejected(&self) -> usize {
        self.rejected.values().sum()
    }

    pub fn merge(&mut self, other: &RejectStats) {
        for (&reason, &n) in &other.rejected {
            *self.rejected.entry(reason).or_default() += n;
        }
    }
}

fn parse_user(raw: &str) -> std::result::Result<String, RejectReason> {
    let user = raw.trim();
    if user.is_empty() || user.contains([',', '\n', '\r']) {
        return Err(RejectReason::BadUser);
    }
    Ok(user.to_string())
}

fn parse_timestamp(raw: &str) -> std::result::Result<DateTime<Utc>, RejectReason> {
    let ts = DateTime::parse_from_rfc3339(raw.trim()).map_err(|_| RejectReason::BadTimestamp)?;
    // second precision
    ts.with_timezone(&Utc)
        .with_nanosecond(0)
        .ok_or(RejectReason::BadTimestamp)
}

fn parse_country(raw: &str) -> std::result::Result<Location, RejectReason> {
    let code = raw.trim();
    if code.is_empty() || !code.chars().all(|c| c.is_ascii_alphanumeric()) {
        return Err(RejectReason::BadCountry);
    }
    Ok(Location::Country(code.to_ascii_uppercase()))
}

fn point(lat: Option<f64>, lon: Option<f64>) -> std::result::Result<Location, RejectReason> {
    match (lat, lon) {
        (Some(lat), Some(lon)) => GeoPoint::new(lat, lon)
            .map(Location::Point)
            .ok_or(RejectReason::BadCoordinates),
        _ => Err(RejectReason::BadCoordinates),
    }
}

fn parse_csv_line(line: &str) -> std::result::Result<GeoEvent, RejectReason> {
    let fields: Vec<&str> = line.split(',').collect();
    let location = match fields.len() {
        3 => parse_country(fields[2])?,
        4 => point(fields[2].trim().parse().ok(), fields[3].trim().parse().ok())?,
        _ => return Err(RejectReason::BadFieldCount),
    };
    Ok(GeoEvent {
        user_id: parse_user(fields[0])?,
        timestamp: parse_timestamp(fields[1])?,
        location,
    })
}

fn parse_json_line(line: &str) -> std::result::Result<GeoEvent, RejectReason> {
    let value: Value = serde_json::from_str(line).map_err(|_| RejectReason::BadJson)?;
    let obj = value.as_object().ok_or(RejectReason::BadJson)?;
    let user_id = match obj.get("user_id") {
        Some(Value::String(s)) => parse_user(s)?,
        Some(Value::Number(n)) => parse_user(&n.to_string())?,
        _ => return Err(RejectReason::BadUser),
    };
    let timestamp = match obj.get("timestamp") {
        Some(Value::String(s)) => parse_timestamp(s)?,
        _ => return Err(RejectReason::BadTimestamp),
    };
    let has_country = obj.contains_key("country");
    let has_point = obj.contains_key("lat") || obj.contains_key("lon");
    let location = match (has_country, has_point) {
        (true, true) => return Err(RejectReason::AmbiguousLocation),
        (false, false) => return Err(RejectReason::MissingLocation),
        (true, false) => match &obj["country"] {
            Value::String(s) => parse_country(s)?,
            _ => return Err(RejectReason::BadCountry),
        },
        (false, true) => point(
            obj.get("lat").and_then(Value::as_f64),
            obj.get("lon").and_then(Value::as_f64),
        )?,
    };
    Ok(GeoEvent {
        user_id,
        timestamp,
        location,
    })
}

fn is_csv_header(line: &str) -> bool {
    line.split(',').next().map(str::trim) == Some("user_id")
}

/// Parse a line-delimited event stream.
///
/// Malformed lines are counted in the returned [`RejectStats`] and skipped;
/// accepted events keep input order. When `calendar` is given, events outside
/// the study interval are rejected as `out_of_interval`.
pub fn parse_events<R: BufRead>(
    reader: R,
    format: InputFormat,
    calendar: Option<&Calendar>,
) -> std::io::Result<(Vec<GeoEvent>, RejectStats)> {
    let mut events = Vec::new();
    let mut stats = RejectStats::default();
    let mut seen_content = false;
    for line in reader.lines() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let first = !seen_content;
        seen_content = true;
        if first && format == InputFormat::Csv && is_csv_header(line) {
            continue;
        }
        let parsed = match format {
            InputFormat::Csv => parse_csv_line(line),
            InputFormat::Jsonl => parse_json_line(line),
        };
        match parsed {
            Ok(ev) if calendar.is_some_and(|c| !c.contains(&ev.timestamp)) => stats.reject(RejectReason::OutOfInterval),
            Ok(ev) => {
                stats.accepted += 1;
                events.push(ev);
            }
            Err(reason) => stats.reject(reason),
        }
    }
    Ok((events, stats))
}

pub fn read_events(
    path: &Path,
    format: InputFormat,
    calendar: Option<&Calendar>,
) -> Result<(Vec<GeoEvent>, RejectStats)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_events(BufReader::new(file), format, calendar).map_err(|e| Error::io(path, e))
}

fn format_timestamp(ts: &DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// Serialize events in the given format. Floats use the shortest
/// representation that parses back to the same value.
pub fn write_events<W: Write>(mut out: W, events: &[GeoEvent], format: InputFormat) -> std::io::Result<()> {
    match format {
        InputFormat::Csv => {
            let any_point = events.iter().any(|e| matches!(e.location, Location::Point(_)));
            if any_point {
                writeln!(out, "user_id,timestamp,lat,lon")?;
            } else {
                writeln!(out, "user_id,timestamp,country")?;
            }
            for ev in events {
                let ts = format_timestamp(&ev.timestamp);
                match &ev.location {
                    Location::Country(c) => writeln!(out, "{},{},{}", ev.user_id, ts, c)?,
                    Location::Point(p) => writeln!(out, "{},{},{},{}", ev.user_id, ts, p.lat, p.lon)?,
                }
            }
        }
        InputFormat::Jsonl => {
            for ev in events {
                let mut obj = serde_json::Map::new();
                obj.insert("user_id".into(), Value::String(ev.user_id.clone()));
                obj.insert("timestamp".into(), Value::String(format_timestamp(&ev.timestamp)));
                match &ev.location {
                    Location::Country(c) => {
                        obj.insert("country".into(), Value::String(c.clone()));
                    }
                    Location::Point(p) => {
                        obj.insert("lat".into(), serde_json::json!(p.lat));
                        obj.insert("lon".into(), serde_json::json!(p.lon));
                    }
                }
                writeln!(out, "{}", Value::Object(obj))?;
            }
        }
    }
    Ok(())
}
