//! Monthly country of residence and window-based migration detection.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calendar::Calendar;
use crate::error::{Error, Result};
use crate::ingestion::{CountryEvent, CountryRegistry};

/// How the residence of a k-month window is decided.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowMode {
    /// All k months must share one country.
    #[default]
    Strict,
    /// Most frequent country, ties undefined; repeated detections of the same
    /// move within k months collapse to the earliest.
    Modal,
}

/// Per-user, month-indexed country of residence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResidenceSeries {
    pub user_id: String,
    /// Majority country of months with at least one event.
    pub observed: Vec<Option<usize>>,
    /// `observed` forward-filled; `None` only before the first observation.
    pub filled: Vec<Option<usize>>,
}

impl ResidenceSeries {
    /// Series known only through its filled view (e.g. read from a dump).
    pub fn from_filled(user_id: impl Into<String>, filled: Vec<Option<usize>>) -> Self {
        ResidenceSeries {
            user_id: user_id.into(),
            observed: filled.clone(),
            filled,
        }
    }

    pub fn months(&self) -> usize {
        self.filled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filled.iter().all(Option::is_none)
    }
}

/// A detected change of window residence.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MigrationEvent {
    pub user_id: String,
    pub month: usize,
    pub origin: usize,
    pub destination: usize,
}

#[derive(Default, Clone, Copy)]
struct MonthTally {
    count: usize,
    // (timestamp, input position) of the latest event
    latest: (i64, usize),
}

/// Residence series of one user. Events outside `calendar` are ignored.
///
/// A month's residence is its most frequent country. Ties go to the previous
/// month's residence when it is among the tied countries, otherwise to the
/// tied country of the latest event that month.
pub fn monthly_residence(user_id: &str, events: &[CountryEvent], calendar: &Calendar) -> ResidenceSeries {
    let m = calendar.months;
    let mut tallies: Vec<HashMap<usize, MonthTally>> = vec![HashMap::new(); m];
    for (pos, ev) in events.iter().enumerate() {
        let Some(month) = calendar.month_of(&ev.timestamp) else {
            continue;
        };
        let t = tallies[month].entry(ev.country).or_default();
        t.count += 1;
        t.latest = t.latest.max((ev.timestamp.timestamp(), pos));
    }

    let mut observed = vec![None; m];
    let mut filled = vec![None; m];
    let mut previous: Option<usize> = None;
    for month in 0..m {
        let tally = &tallies[month];
        if let Some(max) = tally.values().map(|t| t.count).max() {
            let tied = || tally.iter().filter(move |(_, t)| t.count == max);
            let winner = match previous {
                Some(p) if tally.get(&p).is_some_and(|t| t.count == max) => p,
                _ => tied().max_by_key(|(_, t)| t.latest).map(|(&c, _)| c).unwrap(),
            };
            observed[month] = Some(winner);
            previous = Some(winner);
        }
        filled[month] = previous;
    }
    ResidenceSeries {
        user_id: user_id.to_string(),
        observed,
        filled,
    }
}

/// Group events (sorted by user) and compute every user's series in parallel.
/// Output follows the input's user order.
pub fn residences_by_user(events: &[CountryEvent], calendar: &Calendar) -> Vec<ResidenceSeries> {
    let mut groups = Vec::new();
    let mut rest = events;
    while let Some(first) = rest.first() {
        let n = rest
            .iter()
            .position(|e| e.user_id != first.user_id)
            .unwrap_or(rest.len());
        let (user, tail) = rest.split_at(n);
        groups.push(user);
        rest = tail;
    }
    groups
        .par_iter()
        .map(|g| monthly_residence(&g[0].user_id, g, calendar))
        .collect()
}

fn window_residence(window: &[Option<usize>], mode: WindowMode) -> Option<usize> {
    let mut months = window.iter();
    let first = (*months.next()?)?;
    match mode {
        WindowMode::Strict => window.iter().all(|&c| c == Some(first)).then_some(first),
        WindowMode::Modal => {
            let mut counts: HashMap<usize, usize> = HashMap::new();
            for &c in window {
                *counts.entry(c?).or_default() += 1;
            }
            let max = *counts.values().max()?;
            let mut top = counts.iter().filter(|(_, &n)| n == max);
            let (&winner, _) = top.next()?;
            top.next().is_none().then_some(winner)
        }
    }
}

pub fn check_window(k: usize, months: usize) -> Result<()> {
    if k == 0 || 2 * k > months {
        return Err(Error::Config(format!(
            "window length k={k} must satisfy 1 <= k <= M/2 (M={months})"
        )));
    }
    Ok(())
}

/// Migrations of one user with window length `k`.
///
/// A migration is emitted at month `m` (for `k <= m <= M - k`) when the
/// window residences of months `[m-k, m)` and `[m, m+k)` are both defined and
/// differ.
pub fn detect_migrations(series: &ResidenceSeries, k: usize, mode: WindowMode) -> Result<Vec<MigrationEvent>> {
    let months = series.months();
    check_window(k, months)?;
    let mut out: Vec<MigrationEvent> = Vec::new();
    let mut last_seen: HashMap<(usize, usize), usize> = HashMap::new();
    for m in k..=months - k {
        let before = window_residence(&series.filled[m - k..m], mode);
        let after = window_residence(&series.filled[m..m + k], mode);
        let (Some(origin), Some(destination)) = (before, after) else {
            continue;
        };
        if origin == destination {
            continue;
        }
        if mode == WindowMode::Modal {
            let prev = last_seen.insert((origin, destination), m);
            if prev.is_some_and(|p| m - p < k) {
                continue;
            }
        }
        out.push(MigrationEvent {
            user_id: series.user_id.clone(),
            month: m,
            origin,
            destination,
        });
    }
    Ok(out)
}

pub fn detect_all(series: &[ResidenceSeries], k: usize, mode: WindowMode) -> Result<Vec<MigrationEvent>> {
    let per_user: Vec<Vec<MigrationEvent>> = series
        .par_iter()
        .map(|s| detect_migrations(s, k, mode))
        .collect::<Result<_>>()?;
    Ok(per_user.into_iter().flatten().collect())
}

/// `user_id,month_index,country` rows of the filled view.
pub fn write_residences<W: Write>(
    mut out: W,
    series: &[ResidenceSeries],
    registry: &CountryRegistry,
) -> std::io::Result<()> {
    writeln!(out, "user_id,month_index,country")?;
    for s in series {
        for (m, c) in s.filled.iter().enumerate() {
            if let Some(c) = c {
                writeln!(out, "{},{},{}", s.user_id, m, registry.code(*c))?;
            }
        }
    }
    Ok(())
}

fn data_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if n == 0 && line.starts_with("user_id") || line.trim().is_empty() {
            continue;
        }
        out.push((n + 1, line));
    }
    Ok(out)
}

fn lookup(registry: &CountryRegistry, code: &str, path: &Path, line: usize) -> Result<usize> {
    registry
        .index(code.trim())
        .ok_or_else(|| Error::parse(path, line, format!("unregistered country {code:?}")))
}

fn parse_month(raw: &str, months: usize, path: &Path, line: usize) -> Result<usize> {
    match raw.trim().parse::<usize>() {
        Ok(m) if m < months => Ok(m),
        _ => Err(Error::parse(
            path,
            line,
            format!("month index {raw:?} outside 0..{months}"),
        )),
    }
}

pub fn read_residences(path: &Path, registry: &CountryRegistry, months: usize) -> Result<Vec<ResidenceSeries>> {
    let mut out: Vec<ResidenceSeries> = Vec::new();
    for (line, text) in data_lines(path)? {
        let fields: Vec<&str> = text.split(',').collect();
        let [user, month, country] = fields.as_slice() else {
            return Err(Error::parse(path, line, "expected user_id,month_index,country"));
        };
        let month = parse_month(month, months, path, line)?;
        let country = lookup(registry, country, path, line)?;
        if out.last().is_none_or(|s| s.user_id != *user) {
            out.push(ResidenceSeries::from_filled(*user, vec![None; months]));
        }
        let s = out.last_mut().unwrap();
        s.filled[month] = Some(country);
        s.observed[month] = Some(country);
    }
    Ok(out)
}

/// `user_id,month_index,origin,destination` rows.
pub fn write_migrations<W: Write>(
    mut out: W,
    events: &[MigrationEvent],
    registry: &CountryRegistry,
) -> std::io::Result<()> {
    writeln!(out, "user_id,month_index,origin,destination")?;
    for e in events {
        writeln!(
            out,
            "{},{},{},{}",
            e.user_id,
            e.month,
            registry.code(e.origin),
            registry.code(e.destination)
        )?;
    }
    Ok(())
}

pub fn read_migrations(path: &Path, registry: &CountryRegistry, months: usize) -> Result<Vec<MigrationEvent>> {
    data_lines(path)?
        .into_iter()
        .map(|(line, text)| {
            let fields: Vec<&str> = text.split(',').collect();
            let [user, month, origin, destination] = fields.as_slice() else {
                return Err(Error::parse(
                    path,
                    line,
                    "expected user_id,month_index,origin,destination",
                ));
            };
            Ok(MigrationEvent {
                user_id: user.to_string(),
                month: parse_month(month, months, path, line)?,
                origin: lookup(registry, origin, path, line)?,
                destination: lookup(registry, destination, path, line)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{DateTime, Duration, Utc};
    use proptest::prelude::*;

    const FR: usize = 0;
    const ES: usize = 1;

    fn calendar(months: usize) -> Calendar {
        Calendar::new("2014-01".parse().unwrap(), months).unwrap()
    }

    fn event(month: usize, day: i64, country: usize) -> CountryEvent {
        let base: DateTime<Utc> = calendar(1).year_month(month).first_instant();
        CountryEvent {
            user_id: "u".into(),
            timestamp: base + Duration::days(day),
            country,
        }
    }

    fn filled(series: &[usize]) -> ResidenceSeries {
        ResidenceSeries::from_filled("u", series.iter().map(|&c| Some(c)).collect())
    }

    fn months_of(events: &[MigrationEvent]) -> Vec<(usize, usize, usize)> {
        events.iter().map(|e| (e.month, e.origin, e.destination)).collect()
    }

    #[test]
    fn majority_wins() {
        let mut evs: Vec<_> = (0..3).map(|d| event(0, d, FR)).collect();
        evs.extend((3..5).map(|d| event(0, d, ES)));
        let s = monthly_residence("u", &evs, &calendar(1));
        assert_eq!(s.filled, vec![Some(FR)]);
    }

    #[test]
    fn tie_prefers_previous_month() {
        // month 1 ties FR/ES and its latest event is FR
        let evs = vec![
            event(0, 0, ES),
            event(1, 0, FR),
            event(1, 1, ES),
            event(1, 2, ES),
            event(1, 3, FR),
        ];
        let s = monthly_residence("u", &evs, &calendar(2));
        assert_eq!(s.filled, vec![Some(ES), Some(ES)]);
    }

    #[test]
    fn tie_without_previous_uses_latest_event() {
        let evs = vec![event(0, 0, FR), event(0, 1, ES), event(0, 2, ES), event(0, 3, FR)];
        let s = monthly_residence("u", &evs, &calendar(1));
        assert_eq!(s.filled, vec![Some(FR)]);
    }

    #[test]
    fn forward_fill() {
        let evs = vec![event(0, 0, FR), event(3, 0, ES)];
        let s = monthly_residence("u", &evs, &calendar(5));
        assert_eq!(s.filled, vec![Some(FR), Some(FR), Some(FR), Some(ES), Some(ES)]);
        assert_eq!(s.observed, vec![Some(FR), None, None, Some(ES), None]);
    }

    #[test]
    fn leading_months_stay_undefined() {
        let s = monthly_residence("u", &[event(2, 0, FR)], &calendar(4));
        assert_eq!(s.filled, vec![None, None, Some(FR), Some(FR)]);
        let empty = monthly_residence("u", &[], &calendar(4));
        assert!(empty.is_empty());
    }

    #[test]
    fn detect_k1() {
        let ev = detect_migrations(&filled(&[FR, FR, ES, ES]), 1, WindowMode::Strict).unwrap();
        assert_eq!(months_of(&ev), vec![(2, FR, ES)]);
    }

    #[test]
    fn detect_k2() {
        let ev = detect_migrations(&filled(&[FR, FR, ES, ES]), 2, WindowMode::Strict).unwrap();
        assert_eq!(months_of(&ev), vec![(2, FR, ES)]);
    }

    #[test]
    fn detect_alternating_k2_none() {
        let ev = detect_migrations(&filled(&[FR, ES, FR, ES]), 2, WindowMode::Strict).unwrap();
        assert!(ev.is_empty());
    }

    #[test]
    fn undefined_months_never_anchor() {
        let s = ResidenceSeries::from_filled("u", vec![None, Some(ES), Some(ES), Some(ES)]);
        assert!(detect_migrations(&s, 1, WindowMode::Strict).unwrap().is_empty());
        assert!(detect_migrations(&s, 2, WindowMode::Modal).unwrap().is_empty());
    }

    #[test]
    fn k_out_of_range() {
        let s = filled(&[FR, FR, ES, ES]);
        assert!(matches!(
            detect_migrations(&s, 0, WindowMode::Strict),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            detect_migrations(&s, 3, WindowMode::Strict),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn modal_collapses_adjacent_detections() {
        let s = filled(&[FR, FR, FR, FR, ES, ES, ES, ES]);
        // modal k=3 sees the move at 3, 4 and 5
        let ev = detect_migrations(&s, 3, WindowMode::Modal).unwrap();
        assert_eq!(months_of(&ev), vec![(3, FR, ES)]);
        let strict = detect_migrations(&s, 3, WindowMode::Strict).unwrap();
        assert_eq!(months_of(&strict), vec![(4, FR, ES)]);
    }

    #[test]
    fn modal_tie_is_undefined() {
        assert_eq!(window_residence(&[Some(FR), Some(ES)], WindowMode::Modal), None);
        assert_eq!(
            window_residence(&[Some(FR), Some(ES), Some(FR)], WindowMode::Modal),
            Some(FR)
        );
    }

    #[test]
    fn dumps_round_trip() {
        let reg = CountryRegistry::new(["FR", "ES"]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let series = vec![
            ResidenceSeries::from_filled("a", vec![None, Some(FR), Some(ES)]),
            ResidenceSeries::from_filled("b", vec![Some(ES), Some(ES), Some(ES)]),
        ];
        let path = dir.path().join("res.csv");
        write_residences(File::create(&path).unwrap(), &series, &reg).unwrap();
        assert_eq!(read_residences(&path, &reg, 3).unwrap(), series);

        let migs = detect_all(&series, 1, WindowMode::Strict).unwrap();
        let path = dir.path().join("mig.csv");
        write_migrations(File::create(&path).unwrap(), &migs, &reg).unwrap();
        assert_eq!(read_migrations(&path, &reg, 3).unwrap(), migs);
        assert!(read_migrations(&path, &reg, 2).is_err());
    }

    fn arb_series(months: usize) -> impl Strategy<Value = Vec<usize>> {
        proptest::collection::vec(0usize..3, months)
    }

    proptest! {
        #[test]
        fn single_change_detected_once_for_every_k(change in 1usize..23, k in 1usize..=12) {
            let m = 24;
            let s: Vec<usize> = (0..m).map(|i| if i < change { FR } else { ES }).collect();
            let ev = detect_migrations(&filled(&s), k, WindowMode::Strict).unwrap();
            if change >= k && change <= m - k {
                prop_assert_eq!(months_of(&ev), vec![(change, FR, ES)]);
            } else {
                prop_assert!(ev.is_empty());
            }
        }

        #[test]
        fn constant_series_has_no_events(c in 0usize..3, k in 1usize..=12) {
            let s = filled(&[c; 24]);
            prop_assert!(detect_migrations(&s, k, WindowMode::Strict).unwrap().is_empty());
            prop_assert!(detect_migrations(&s, k, WindowMode::Modal).unwrap().is_empty());
        }

        #[test]
        fn strict_count_monotone_in_k(s in arb_series(24)) {
            let s = filled(&s);
            let counts: Vec<usize> = (1..=12)
                .map(|k| detect_migrations(&s, k, WindowMode::Strict).unwrap().len())
                .collect();
            for w in counts.windows(2) {
                prop_assert!(w[1] <= w[0], "{:?}", counts);
            }
        }

        #[test]
        fn events_have_distinct_endpoints_and_full_windows(s in arb_series(20), k in 1usize..=10) {
            for mode in [WindowMode::Strict, WindowMode::Modal] {
                for e in detect_migrations(&filled(&s), k, mode).unwrap() {
                    prop_assert_ne!(e.origin, e.destination);
                    prop_assert!(e.month >= k && e.month + k <= 20);
                }
            }
        }
    }
}
