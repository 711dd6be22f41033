//! Hourly series, day/night partitions and the monthly aggregation shared by
//! every other stage.
//!
//! Generation series are kept non-positive once ingested (production is
//! negative), so that a weighted sum of exemplars with non-negative weights is
//! itself a valid generation estimate and `native = net - generation` holds
//! literally.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SeriesError {
    #[error("series `{0}` has no readings")]
    Empty(String),
    #[error("series `{id}` has a non-finite reading at hour index {index}")]
    NonFinite { id: String, index: usize },
    #[error("series `{id}` starts at {start}, which is not aligned to the hour")]
    Unaligned { id: String, start: NaiveDateTime },
    #[error("series `{id}` covers no complete calendar month")]
    NoCompleteMonths { id: String },
    #[error("no day/night partition is defined for {0}")]
    MissingPartition(YearMonth),
    #[error("diurnal hour set for {0} is empty")]
    EmptyDiurnal(String),
    #[error("hour of day {0} is out of range")]
    HourOutOfRange(u32),
    #[error("cannot derive partition; supply fixed windows ({0} has no exemplar generation)")]
    ZeroGeneration(YearMonth),
    #[error("threshold fraction {0} is not in (0, 1)")]
    BadThreshold(f64),
    #[error("expected a {expected} series, `{id}` is {actual}")]
    WrongRole { id: String, expected: Role, actual: Role },
    #[error("raw generation of `{id}` is negative ({value}) at hour index {index}; ambiguous sign convention")]
    NegativeGeneration { id: String, index: usize, value: f64 },
    #[error("series `{a}` and `{b}` do not share the same hourly horizon")]
    HorizonMismatch { a: String, b: String },
    #[error("no series supplied")]
    NoSeries,
    #[error("invalid month label `{0}`")]
    BadMonthLabel(String),
}

/// What a series measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Native,
    Net,
    Generation,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Native => "native",
            Role::Net => "net",
            Role::Generation => "generation",
        })
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "native" => Ok(Role::Native),
            "net" => Ok(Role::Net),
            "generation" | "gen" => Ok(Role::Generation),
            other => Err(format!("unknown role `{other}`")),
        }
    }
}

/// A calendar month, ordered chronologically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct YearMonth {
    pub year: i32,
    pub month: u32,
}

impl YearMonth {
    pub fn new(year: i32, month: u32) -> Self {
        assert!((1..=12).contains(&month), "month {month} out of range");
        Self { year, month }
    }

    pub fn of(ts: NaiveDateTime) -> Self {
        Self::new(ts.year(), ts.month())
    }

    pub fn first_hour(self) -> NaiveDateTime {
        NaiveDate::from_ymd_opt(self.year, self.month, 1)
            .expect("valid month")
            .and_hms_opt(0, 0, 0)
            .expect("midnight")
    }

    pub fn next(self) -> Self {
        if self.month == 12 {
            Self::new(self.year + 1, 1)
        } else {
            Self::new(self.year, self.month + 1)
        }
    }

    pub fn days(self) -> u32 {
        (self.next().first_hour() - self.first_hour()).num_days() as u32
    }

    pub fn hours(self) -> usize {
        self.days() as usize * 24
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl From<YearMonth> for String {
    fn from(ym: YearMonth) -> Self {
        ym.to_string()
    }
}

impl TryFrom<String> for YearMonth {
    type Error = SeriesError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl FromStr for YearMonth {
    type Err = SeriesError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || SeriesError::BadMonthLabel(s.to_string());
        let (y, m) = s.split_once('-').ok_or_else(bad)?;
        let year: i32 = y.parse().map_err(|_| bad())?;
        let month: u32 = m.parse().map_err(|_| bad())?;
        if !(1..=12).contains(&month) {
            return Err(bad());
        }
        Ok(Self { year, month })
    }
}

/// One customer's contiguous hourly energy readings (kWh per hour).
#[derive(Debug, Clone, PartialEq)]
pub struct HourlySeries {
    customer_id: String,
    start: NaiveDateTime,
    values: Vec<f64>,
    role: Role,
}

impl HourlySeries {
    pub fn new(
        customer_id: impl Into<String>,
        start: NaiveDateTime,
        values: Vec<f64>,
        role: Role,
    ) -> Result<Self, SeriesError> {
        let customer_id = customer_id.into();
        if values.is_empty() {
            return Err(SeriesError::Empty(customer_id));
        }
        if start.minute() != 0 || start.second() != 0 || start.nanosecond() != 0 {
            return Err(SeriesError::Unaligned {
                id: customer_id,
                start,
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(SeriesError::NonFinite {
                id: customer_id,
                index,
            });
        }
        Ok(Self {
            customer_id,
            start,
            values,
            role,
        })
    }

    pub fn customer_id(&self) -> &str {
        &self.customer_id
    }

    pub fn start(&self) -> NaiveDateTime {
        self.start
    }

    /// First hour after the last reading.
    pub fn end(&self) -> NaiveDateTime {
        self.timestamp(self.values.len())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn timestamp(&self, index: usize) -> NaiveDateTime {
        self.start + Duration::hours(index as i64)
    }

    pub fn iter(&self) -> impl Iterator<Item = (NaiveDateTime, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .map(move |(i, &v)| (self.timestamp(i), v))
    }

    /// A series on the same horizon with new readings and role.
    pub fn with_values(&self, values: Vec<f64>, role: Role) -> Result<Self, SeriesError> {
        if values.len() != self.values.len() {
            return Err(SeriesError::HorizonMismatch {
                a: self.customer_id.clone(),
                b: format!("{} (replacement values)", self.customer_id),
            });
        }
        Self::new(self.customer_id.clone(), self.start, values, role)
    }

    pub fn renamed(mut self, customer_id: impl Into<String>) -> Self {
        self.customer_id = customer_id.into();
        self
    }

    pub fn same_horizon(&self, other: &HourlySeries) -> bool {
        self.start == other.start && self.values.len() == other.values.len()
    }

    pub fn ensure_same_horizon(&self, other: &HourlySeries) -> Result<(), SeriesError> {
        if self.same_horizon(other) {
            Ok(())
        } else {
            Err(SeriesError::HorizonMismatch {
                a: self.customer_id.clone(),
                b: other.customer_id.clone(),
            })
        }
    }
}

/// Set of hours of the day, bit `h` standing for `h:00..h+1:00`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct HourMask(u32);

impl HourMask {
    pub const ALL: HourMask = HourMask((1 << 24) - 1);

    pub fn empty() -> Self {
        Self(0)
    }

    /// Hours `first..=last`. Wraps past midnight when `first > last`.
    pub fn range(first: u32, last: u32) -> Result<Self, SeriesError> {
        for h in [first, last] {
            if h >= 24 {
                return Err(SeriesError::HourOutOfRange(h));
            }
        }
        let mut mask = Self::empty();
        let mut h = first;
        loop {
            mask.0 |= 1 << h;
            if h == last {
                break;
            }
            h = (h + 1) % 24;
        }
        Ok(mask)
    }

    pub fn contains(self, hour: u32) -> bool {
        hour < 24 && self.0 & (1 << hour) != 0
    }

    pub fn insert(&mut self, hour: u32) {
        assert!(hour < 24);
        self.0 |= 1 << hour;
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn complement(self) -> Self {
        Self(!self.0 & Self::ALL.0)
    }

    pub fn hours(self) -> impl Iterator<Item = u32> {
        (0..24).filter(move |&h| self.contains(h))
    }
}

impl TryFrom<Vec<u32>> for HourMask {
    type Error = SeriesError;

    fn try_from(hours: Vec<u32>) -> Result<Self, Self::Error> {
        let mut mask = Self::empty();
        for h in hours {
            if h >= 24 {
                return Err(SeriesError::HourOutOfRange(h));
            }
            mask.insert(h);
        }
        Ok(mask)
    }
}

impl From<HourMask> for Vec<u32> {
    fn from(mask: HourMask) -> Self {
        mask.hours().collect()
    }
}

/// Assignment of every hour of every month to the diurnal set `I_d` or the
/// nocturnal set `I_n` (its complement).
///
/// Lookups try the exact month first and fall back to the calendar-month
/// windows, which is how fixed-window overrides are expressed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DayNightPartition {
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    months: BTreeMap<YearMonth, HourMask>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    calendar: Option<[HourMask; 12]>,
}

impl DayNightPartition {
    pub fn from_months(months: BTreeMap<YearMonth, HourMask>) -> Result<Self, SeriesError> {
        if let Some((ym, _)) = months.iter().find(|(_, m)| m.is_empty()) {
            return Err(SeriesError::EmptyDiurnal(ym.to_string()));
        }
        Ok(Self {
            months,
            calendar: None,
        })
    }

    /// Fixed windows per calendar month (January first), applied to every year.
    pub fn fixed(windows: [HourMask; 12]) -> Result<Self, SeriesError> {
        if let Some(i) = windows.iter().position(|m| m.is_empty()) {
            return Err(SeriesError::EmptyDiurnal(format!("calendar month {}", i + 1)));
        }
        Ok(Self {
            months: BTreeMap::new(),
            calendar: Some(windows),
        })
    }

    pub fn uniform(diurnal: HourMask) -> Result<Self, SeriesError> {
        Self::fixed([diurnal; 12])
    }

    pub fn diurnal(&self, month: YearMonth) -> Option<HourMask> {
        self.months
            .get(&month)
            .copied()
            .or_else(|| self.calendar.map(|c| c[month.month as usize - 1]))
    }

    pub fn is_diurnal(&self, ts: NaiveDateTime) -> Option<bool> {
        self.diurnal(YearMonth::of(ts)).map(|m| m.contains(ts.hour()))
    }

    pub fn months(&self) -> impl Iterator<Item = (YearMonth, HourMask)> + '_ {
        self.months.iter().map(|(k, v)| (*k, *v))
    }
}

/// Nocturnal and diurnal energy of one customer-month.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthlyPair {
    pub customer_id: String,
    pub month: YearMonth,
    /// 1-based position among the series' complete months.
    pub index: usize,
    pub nocturnal: f64,
    pub diurnal: f64,
}

impl MonthlyPair {
    pub fn point(&self) -> [f64; 2] {
        [self.nocturnal, self.diurnal]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonthlyAggregation {
    pub pairs: Vec<MonthlyPair>,
    /// Months touched by the series but not fully covered; excluded from `pairs`.
    pub partial: Vec<YearMonth>,
}

/// Sums a series over `I_n` and `I_d` for every complete calendar month.
pub fn aggregate_monthly(
    series: &HourlySeries,
    partition: &DayNightPartition,
) -> Result<MonthlyAggregation, SeriesError> {
    let first = YearMonth::of(series.start());
    let last = YearMonth::of(series.end() - Duration::hours(1));

    let mut pairs = Vec::new();
    let mut partial = Vec::new();
    let mut month = first;
    loop {
        let from = month.first_hour();
        let to = month.next().first_hour();
        if from < series.start() || to > series.end() {
            partial.push(month);
        } else {
            let mask = partition
                .diurnal(month)
                .ok_or(SeriesError::MissingPartition(month))?;
            let offset = (from - series.start()).num_hours() as usize;
            let mut nocturnal = 0.0;
            let mut diurnal = 0.0;
            for (i, v) in series.values()[offset..offset + month.hours()].iter().enumerate() {
                if mask.contains((i % 24) as u32) {
                    diurnal += v;
                } else {
                    nocturnal += v;
                }
            }
            pairs.push(MonthlyPair {
                customer_id: series.customer_id().to_string(),
                month,
                index: pairs.len() + 1,
                nocturnal,
                diurnal,
            });
        }
        if month == last {
            break;
        }
        month = month.next();
    }

    if pairs.is_empty() {
        return Err(SeriesError::NoCompleteMonths {
            id: series.customer_id().to_string(),
        });
    }
    Ok(MonthlyAggregation { pairs, partial })
}

/// Hour `h` of month `m` is diurnal iff the month-average magnitude of total
/// exemplar generation at `h` exceeds `threshold_fraction` times that month's
/// peak hourly average.
pub fn derive_partition(
    exemplars: &[HourlySeries],
    threshold_fraction: f64,
) -> Result<DayNightPartition, SeriesError> {
    if !(threshold_fraction > 0.0 && threshold_fraction < 1.0) {
        return Err(SeriesError::BadThreshold(threshold_fraction));
    }
    let (head, rest) = exemplars.split_first().ok_or(SeriesError::NoSeries)?;
    for other in rest {
        head.ensure_same_horizon(other)?;
    }

    let mut acc: BTreeMap<YearMonth, ([f64; 24], [u32; 24])> = BTreeMap::new();
    for i in 0..head.len() {
        let ts = head.timestamp(i);
        let total: f64 = exemplars.iter().map(|s| s.values()[i].abs()).sum();
        let (sums, counts) = acc.entry(YearMonth::of(ts)).or_insert(([0.0; 24], [0; 24]));
        let h = ts.hour() as usize;
        sums[h] += total;
        counts[h] += 1;
    }

    let mut months = BTreeMap::new();
    for (month, (sums, counts)) in acc {
        let mut avg = [0.0; 24];
        for h in 0..24 {
            if counts[h] > 0 {
                avg[h] = sums[h] / counts[h] as f64;
            }
        }
        let peak = avg.iter().copied().fold(0.0, f64::max);
        if peak <= 0.0 {
            return Err(SeriesError::ZeroGeneration(month));
        }
        let mut mask = HourMask::empty();
        for (h, &a) in avg.iter().enumerate() {
            if a > threshold_fraction * peak {
                mask.insert(h as u32);
            }
        }
        months.insert(month, mask);
    }
    DayNightPartition::from_months(months)
}

/// Converts raw meter-convention generation (production positive) into the
/// internal non-positive convention. Apply exactly once, at ingestion.
pub fn negate_generation(series: &HourlySeries) -> Result<HourlySeries, SeriesError> {
    if series.role() != Role::Generation {
        return Err(SeriesError::WrongRole {
            id: series.customer_id().to_string(),
            expected: Role::Generation,
            actual: series.role(),
        });
    }
    if let Some((index, &value)) = series.values().iter().enumerate().find(|(_, v)| **v < 0.0) {
        return Err(SeriesError::NegativeGeneration {
            id: series.customer_id().to_string(),
            index,
            value,
        });
    }
    let flipped = series.values().iter().map(|v| 0.0 - v).collect();
    series.with_values(flipped, Role::Generation)
}
