use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::calendar::YearMonth;
use crate::ingestion::events::CountryEvent;

/// Per-user noise and bot thresholds. A zero threshold disables its rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterPolicy {
    pub max_events_per_day: u32,
    pub max_countries_per_day: u32,
    pub min_events_total: u32,
    pub min_active_months: u32,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        FilterPolicy {
            max_events_per_day: 100,
            max_countries_per_day: 3,
            min_events_total: 5,
            min_active_months: 2,
        }
    }
}

impl FilterPolicy {
    /// Keeps every user.
    pub fn permissive() -> Self {
        FilterPolicy {
            max_events_per_day: 0,
            max_countries_per_day: 0,
            min_events_total: 0,
            min_active_months: 0,
        }
    }

    /// First rule the user's events violate, in declaration order.
    fn violation(&self, events: &[CountryEvent]) -> Option<FilterRule> {
        let mut per_day: HashMap<NaiveDate, (u32, HashSet<usize>)> = HashMap::new();
        let mut months = BTreeSet::new();
        for ev in events {
            let day = per_day.entry(ev.timestamp.date_naive()).or_default();
            day.0 += 1;
            day.1.insert(ev.country);
            months.insert(YearMonth::of(&ev.timestamp));
        }
        if self.max_events_per_day > 0 && per_day.values().any(|d| d.0 > self.max_events_per_day) {
            return Some(FilterRule::MaxEventsPerDay);
        }
        if self.max_countries_per_day > 0 && per_day.values().any(|d| d.1.len() as u32 > self.max_countries_per_day) {
            return Some(FilterRule::MaxCountriesPerDay);
        }
        if (events.len() as u64) < self.min_events_total as u64 {
            return Some(FilterRule::MinEventsTotal);
        }
        if (months.len() as u64) < self.min_active_months as u64 {
            return Some(FilterRule::MinActiveMonths);
        }
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterRule {
    MaxEventsPerDay,
    MaxCountriesPerDay,
    MinEventsTotal,
    MinActiveMonths,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedUserStats {
    pub users_in: usize,
    pub users_kept: usize,
    /// Users dropped, attributed to the first rule they failed.
    pub dropped: BTreeMap<FilterRule, usize>,
}

impl DroppedUserStats {
    pub fn dropped_by(&self, rule: FilterRule) -> usize {
        self.dropped.get(&rule).copied().unwrap_or(0)
    }
}

/// Drop every user who fails any enabled rule of `policy`.
///
/// Output is sorted by `(user_id, timestamp)`, stable for equal keys.
pub fn filter_users(mut events: Vec<CountryEvent>, policy: &FilterPolicy) -> (Vec<CountryEvent>, DroppedUserStats) {
    events.sort_by(|a, b| a.user_id.cmp(&b.user_id).then(a.timestamp.cmp(&b.timestamp)));
    let mut stats = DroppedUserStats::default();
    let mut kept = Vec::with_capacity(events.len());
    let mut rest = events.as_slice();
    while let Some(first) = rest.first() {
        let n = rest
            .iter()
            .position(|e| e.user_id != first.user_id)
            .unwrap_or(rest.len());
        let (user, tail) = rest.split_at(n);
        stats.users_in += 1;
        match policy.violation(user) {
            Some(rule) => *stats.dropped.entry(rule).or_default() += 1,
            None => {
                stats.users_kept += 1;
                kept.extend_from_slice(user);
            }
        }
        rest = tail;
    }
    (kept, stats)
}
