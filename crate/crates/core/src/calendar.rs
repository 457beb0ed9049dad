//! Month arithmetic for the study interval.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Datelike, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct YearMonth {
    pub year: i32,
    /// 1..=12
    pub month: u32,
}

impl YearMonth {
    pub fn new(year: i32, month: u32) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::Config(format!("month {month} out of range 1..=12")));
        }
        Ok(YearMonth { year, month })
    }

    pub fn of(ts: &DateTime<Utc>) -> Self {
        YearMonth {
            year: ts.year(),
            month: ts.month(),
        }
    }

    /// Months elapsed since year 0, January.
    fn ordinal(self) -> i64 {
        self.year as i64 * 12 + (self.month as i64 - 1)
    }

    fn from_ordinal(ord: i64) -> Self {
        YearMonth {
            year: ord.div_euclid(12) as i32,
            month: ord.rem_euclid(12) as u32 + 1,
        }
    }

    pub fn plus(self, months: i64) -> Self {
        Self::from_ordinal(self.ordinal() + months)
    }

    pub fn months_since(self, earlier: YearMonth) -> i64 {
        self.ordinal() - earlier.ordinal()
    }

    pub fn first_instant(self) -> DateTime<Utc> {
        NaiveDate::from_ymd_opt(self.year, self.month, 1)
            .expect("valid year-month")
            .and_hms_opt(0, 0, 0)
            .expect("midnight")
            .and_utc()
    }

    pub fn days(self) -> u32 {
        let next = self.plus(1).first_instant();
        (next - self.first_instant()).num_days() as u32
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for YearMonth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("expected YYYY-MM, got {s:?}"));
        let (y, m) = s.trim().split_once('-').ok_or_else(bad)?;
        let year = y.parse().map_err(|_| bad())?;
        let month = m.parse().map_err(|_| bad())?;
        YearMonth::new(year, month)
    }
}

impl Serialize for YearMonth {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for YearMonth {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A study interval of `months` consecutive calendar months starting at `epoch`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Calendar {
    pub epoch: YearMonth,
    pub months: usize,
}

impl Calendar {
    pub fn new(epoch: YearMonth, months: usize) -> Result<Self> {
        if months == 0 {
            return Err(Error::Config("study interval must span at least one month".into()));
        }
        Ok(Calendar { epoch, months })
    }

    /// Month index of `ts`, or `None` if it falls outside the interval.
    pub fn month_of(&self, ts: &DateTime<Utc>) -> Option<usize> {
        let offset = YearMonth::of(ts).months_since(self.epoch);
        (0..self.months as i64).contains(&offset).then_some(offset as usize)
    }

    pub fn contains(&self, ts: &DateTime<Utc>) -> bool {
        self.month_of(ts).is_some()
    }

    pub fn year_month(&self, index: usize) -> YearMonth {
        self.epoch.plus(index as i64)
    }

    /// `YYYY-MM` label for a month index.
    pub fn label(&self, index: usize) -> String {
        self.year_month(index).to_string()
    }
}
