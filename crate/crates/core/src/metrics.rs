//! Error metrics, their population CDFs, and the nocturnal/diurnal
//! correlation diagnostic across timescales.
//!
//! MAPE is normalized by the mean absolute actual value over the qualifying
//! hours, not pointwise. For generation the qualifying hours are those with
//! non-zero actual generation; native-demand metrics reuse the same hours.

use std::io::Write;

use chrono::{NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::series::{aggregate_monthly, DayNightPartition, HourlySeries, Role, SeriesError, YearMonth};

/// Probabilities at which population CDF tables are sampled.
pub const CDF_PROBABILITIES: [f64; 5] = [0.2, 0.4, 0.6, 0.8, 1.0];

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error("undefined MAPE: actual values are all zero over the qualifying hours")]
    UndefinedMape,
    #[error("empty qualifying hour set")]
    EmptyQualifyingSet,
    #[error("length mismatch: {actual} actual vs {estimate} estimated values")]
    LengthMismatch { actual: usize, estimate: usize },
    #[error("qualifying hour {0} is out of range")]
    HourOutOfRange(usize),
    #[error("correlation diagnostics need at least 8 weeks of data, got {0} hours")]
    TooShort(usize),
    #[error("empirical CDF of an empty sample")]
    EmptySample,
    #[error("probability {0} is not in (0, 1]")]
    BadProbability(f64),
}

/// Hours with non-zero actual generation.
pub fn nonzero_hours(actual_generation: &[f64]) -> Vec<usize> {
    actual_generation
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(i, _)| i)
        .collect()
}

fn check(actual: &[f64], estimate: &[f64], hours: &[usize]) -> Result<(), MetricsError> {
    if actual.len() != estimate.len() {
        return Err(MetricsError::LengthMismatch {
            actual: actual.len(),
            estimate: estimate.len(),
        });
    }
    if hours.is_empty() {
        return Err(MetricsError::EmptyQualifyingSet);
    }
    match hours.iter().find(|&&h| h >= actual.len()) {
        Some(&h) => Err(MetricsError::HourOutOfRange(h)),
        None => Ok(()),
    }
}

/// `100 · Σ|Ô − O| / Σ|O|` over `hours`.
pub fn mape_over(actual: &[f64], estimate: &[f64], hours: &[usize]) -> Result<f64, MetricsError> {
    check(actual, estimate, hours)?;
    let (err, scale) = hours.iter().fold((0.0, 0.0), |(e, s), &h| {
        (e + (estimate[h] - actual[h]).abs(), s + actual[h].abs())
    });
    if scale == 0.0 {
        return Err(MetricsError::UndefinedMape);
    }
    Ok(100.0 * err / scale)
}

pub fn rmse_over(actual: &[f64], estimate: &[f64], hours: &[usize]) -> Result<f64, MetricsError> {
    check(actual, estimate, hours)?;
    let sq: f64 = hours.iter().map(|&h| (estimate[h] - actual[h]).powi(2)).sum();
    Ok((sq / hours.len() as f64).sqrt())
}

fn default_hours(actual: &HourlySeries) -> Vec<usize> {
    match actual.role() {
        Role::Generation => nonzero_hours(actual.values()),
        _ => (0..actual.len()).collect(),
    }
}

/// MAPE in percent; generation series qualify only their non-zero hours.
pub fn mape(actual: &HourlySeries, estimate: &HourlySeries) -> Result<f64, MetricsError> {
    actual.ensure_same_horizon(estimate)?;
    mape_over(actual.values(), estimate.values(), &default_hours(actual))
}

/// RMSE in kWh over the same hours as [`mape`].
pub fn rmse(actual: &HourlySeries, estimate: &HourlySeries) -> Result<f64, MetricsError> {
    actual.ensure_same_horizon(estimate)?;
    rmse_over(actual.values(), estimate.values(), &default_hours(actual))
}

/// Lower empirical quantile: the smallest `v` with `#{x ≤ v} / n ≥ p`.
pub fn empirical_cdf(values: &[f64], probabilities: &[f64]) -> Result<Vec<(f64, f64)>, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptySample);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    probabilities
        .iter()
        .map(|&p| {
            if !(p > 0.0 && p <= 1.0) {
                return Err(MetricsError::BadProbability(p));
            }
            let i = (0..n).find(|&i| (i + 1) as f64 / n as f64 >= p).unwrap_or(n - 1);
            Ok((p, sorted[i]))
        })
        .collect()
}

/// Pearson correlation; `None` when either side has zero variance or fewer than 2 points.
pub fn pearson(pairs: &[(f64, f64)]) -> Option<f64> {
    let flat = |f: fn(&(f64, f64)) -> f64| pairs.iter().all(|p| f(p) == f(&pairs[0]));
    if pairs.len() < 2 || flat(|p| p.0) || flat(|p| p.1) {
        return None;
    }
    let n = pairs.len() as f64;
    let (mx, my) = pairs.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x / n, b + y / n));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// How single diurnal hours are matched with nocturnal demand at the hourly timescale.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HourlyPairing {
    /// Each diurnal hour against the same day's nocturnal sum spread evenly over the diurnal hours.
    #[default]
    EvenSplit,
    /// The k-th diurnal hour of a day against the k-th nocturnal hour of that day (cyclically).
    Ordinal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimescaleCorrelation {
    pub hourly: Option<f64>,
    pub daily: Option<f64>,
    pub weekly: Option<f64>,
    pub monthly: Option<f64>,
}

/// Nocturnal/diurnal pairs at each timescale for one series.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TimescalePairs {
    pub hourly: Vec<(f64, f64)>,
    pub daily: Vec<(f64, f64)>,
    pub weekly: Vec<(f64, f64)>,
    pub monthly: Vec<(f64, f64)>,
}

impl TimescalePairs {
    pub fn extend(&mut self, other: TimescalePairs) {
        self.hourly.extend(other.hourly);
        self.daily.extend(other.daily);
        self.weekly.extend(other.weekly);
        self.monthly.extend(other.monthly);
    }

    pub fn correlation(&self) -> TimescaleCorrelation {
        TimescaleCorrelation {
            hourly: pearson(&self.hourly),
            daily: pearson(&self.daily),
            weekly: pearson(&self.weekly),
            monthly: pearson(&self.monthly),
        }
    }
}

const MIN_HOURS: usize = 8 * 7 * 24;

/// Splits `series` into nocturnal/diurnal sums per hour pairing, calendar day,
/// 7-day block from the first complete day, and complete calendar month.
pub fn timescale_pairs(
    series: &HourlySeries,
    partition: &DayNightPartition,
    pairing: HourlyPairing,
) -> Result<TimescalePairs, MetricsError> {
    if series.len() < MIN_HOURS {
        return Err(MetricsError::TooShort(series.len()));
    }
    let mut out = TimescalePairs::default();
    let values = series.values();
    let first_day = (24 - series.start().hour() as usize) % 24;
    let mut days = Vec::new();
    let mut at = first_day;
    while at + 24 <= values.len() {
        let date: NaiveDateTime = series.timestamp(at);
        let month = YearMonth::of(date);
        let mask = partition.diurnal(month).ok_or(SeriesError::MissingPartition(month))?;
        let day = &values[at..at + 24];
        let (mut night, mut light) = (Vec::new(), Vec::new());
        for (h, v) in day.iter().enumerate() {
            if mask.contains(h as u32) {
                light.push(*v);
            } else {
                night.push(*v);
            }
        }
        let n_sum: f64 = night.iter().sum();
        let d_sum: f64 = light.iter().sum();
        match pairing {
            HourlyPairing::EvenSplit => {
                let share = n_sum / light.len().max(1) as f64;
                out.hourly.extend(light.iter().map(|d| (share, *d)));
            }
            HourlyPairing::Ordinal if !night.is_empty() => {
                out.hourly
                    .extend(light.iter().enumerate().map(|(k, d)| (night[k % night.len()], *d)));
            }
            HourlyPairing::Ordinal => {}
        }
        days.push((n_sum, d_sum));
        at += 24;
    }
    out.daily = days.clone();
    out.weekly = days
        .chunks_exact(7)
        .map(|w| w.iter().fold((0.0, 0.0), |(a, b), (n, d)| (a + n, b + d)))
        .collect();
    out.monthly = aggregate_monthly(series, partition)?
        .pairs
        .iter()
        .map(|p| (p.nocturnal, p.diurnal))
        .collect();
    Ok(out)
}

/// Correlations for one series.
pub fn timescale_correlation(
    series: &HourlySeries,
    partition: &DayNightPartition,
    pairing: HourlyPairing,
) -> Result<TimescaleCorrelation, MetricsError> {
    Ok(timescale_pairs(series, partition, pairing)?.correlation())
}

/// Correlations over the pairs of every series pooled together.
pub fn pooled_timescale_correlation(
    series: &[HourlySeries],
    partition: &DayNightPartition,
    pairing: HourlyPairing,
) -> Result<TimescaleCorrelation, MetricsError> {
    let mut pooled = TimescalePairs::default();
    for s in series {
        pooled.extend(timescale_pairs(s, partition, pairing)?);
    }
    Ok(pooled.correlation())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CustomerMetrics {
    pub customer_id: String,
    pub generation_mape: f64,
    pub generation_rmse: f64,
    pub native_mape: f64,
    pub native_rmse: f64,
    pub qualifying_hours: usize,
}

/// Scores one customer; generation series must share a sign convention.
pub fn evaluate_customer(
    actual_generation: &HourlySeries,
    estimated_generation: &HourlySeries,
    actual_native: &HourlySeries,
    estimated_native: &HourlySeries,
) -> Result<CustomerMetrics, MetricsError> {
    actual_generation.ensure_same_horizon(estimated_generation)?;
    actual_generation.ensure_same_horizon(actual_native)?;
    actual_generation.ensure_same_horizon(estimated_native)?;
    let hours = nonzero_hours(actual_generation.values());
    let (ag, eg) = (actual_generation.values(), estimated_generation.values());
    let (an, en) = (actual_native.values(), estimated_native.values());
    Ok(CustomerMetrics {
        customer_id: estimated_generation.customer_id().to_string(),
        generation_mape: mape_over(ag, eg, &hours)?,
        generation_rmse: rmse_over(ag, eg, &hours)?,
        native_mape: mape_over(an, en, &hours)?,
        native_rmse: rmse_over(an, en, &hours)?,
        qualifying_hours: hours.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfRow {
    pub probability: f64,
    pub generation_mape: f64,
    pub native_mape: f64,
    pub generation_rmse: f64,
    pub native_rmse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationAverages {
    pub generation_mape: f64,
    pub native_mape: f64,
    pub generation_rmse: f64,
    pub native_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    /// Hours over which both generation and native metrics are computed.
    pub qualifying_set: String,
    pub customers: Vec<CustomerMetrics>,
    pub cdf: Vec<CdfRow>,
    pub averages: PopulationAverages,
}

impl ErrorReport {
    /// Rows are ordered by customer id.
    pub fn new(mut customers: Vec<CustomerMetrics>) -> Result<Self, MetricsError> {
        if customers.is_empty() {
            return Err(MetricsError::EmptySample);
        }
        customers.sort_by(|a, b| a.customer_id.cmp(&b.customer_id));
        let column = |f: fn(&CustomerMetrics) -> f64| -> Vec<f64> { customers.iter().map(f).collect() };
        let gm = column(|c| c.generation_mape);
        let nm = column(|c| c.native_mape);
        let gr = column(|c| c.generation_rmse);
        let nr = column(|c| c.native_rmse);
        let q = |v: &[f64]| empirical_cdf(v, &CDF_PROBABILITIES);
        let (gmq, nmq, grq, nrq) = (q(&gm)?, q(&nm)?, q(&gr)?, q(&nr)?);
        let cdf = (0..CDF_PROBABILITIES.len())
            .map(|i| CdfRow {
                probability: CDF_PROBABILITIES[i],
                generation_mape: gmq[i].1,
                native_mape: nmq[i].1,
                generation_rmse: grq[i].1,
                native_rmse: nrq[i].1,
            })
            .collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let averages = PopulationAverages {
            generation_mape: mean(&gm),
            native_mape: mean(&nm),
            generation_rmse: mean(&gr),
            native_rmse: mean(&nr),
        };
        Ok(Self {
            qualifying_set: "non-zero actual generation hours (shared by native-demand metrics)".into(),
            customers,
            cdf,
            averages,
        })
    }

    /// Median of per-customer generation and native MAPE (lower quantile).
    pub fn median_mape(&self) -> (f64, f64) {
        let g: Vec<f64> = self.customers.iter().map(|c| c.generation_mape).collect();
        let n: Vec<f64> = self.customers.iter().map(|c| c.native_mape).collect();
        let pick = |v: &[f64]| empirical_cdf(v, &[0.5]).map(|r| r[0].1).unwrap_or(f64::NAN);
        (pick(&g), pick(&n))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `customer_id,generation_mape,generation_rmse,native_mape,native_rmse`.
    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["customer_id", "generation_mape", "generation_rmse", "native_mape", "native_rmse"])?;
        for c in &self.customers {
            w.write_record([
                c.customer_id.clone(),
                c.generation_mape.to_string(),
                c.generation_rmse.to_string(),
                c.native_mape.to_string(),
                c.native_rmse.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::HourMask;
    use chrono::NaiveDate;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn start() -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2021, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap()
    }

    fn all(n: usize) -> Vec<usize> {
        (0..n).collect()
    }

    fn mape_loop(actual: &[f64], estimate: &[f64]) -> f64 {
        let n = actual.len() as f64;
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..actual.len() {
            num += (estimate[i] - actual[i]).abs();
            den += actual[i].abs();
        }
        100.0 / n * num / (den / n)
    }

    #[test]
    fn mape_hand_cases() {
        assert_eq!(mape_over(&[1.0, 1.0], &[1.0, 1.0], &all(2)).unwrap(), 0.0);
        assert!((mape_over(&[1.0, 1.0], &[1.1, 1.1], &all(2)).unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(mape_over(&[0.0, 0.0], &[1.0, 1.0], &all(2)), Err(MetricsError::UndefinedMape));
    }

    #[test]
    fn rmse_hand_cases() {
        assert_eq!(rmse_over(&[2.0, 3.0], &[2.0, 3.0], &all(2)).unwrap(), 0.0);
        let r = rmse_over(&[0.0, 0.0], &[3.0, 4.0], &all(2)).unwrap();
        assert!((r - (25.0f64 / 2.0).sqrt()).abs() < 1e-15);
        assert_eq!(rmse_over(&[1.0], &[1.0], &[]), Err(MetricsError::EmptyQualifyingSet));
    }

    #[test]
    fn mape_and_rmse_match_loop_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let n = rng.random_range(1..200);
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let e: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let m = mape_over(&a, &e, &all(n)).unwrap();
            let oracle = mape_loop(&a, &e);
            assert!((m - oracle).abs() <= 1e-12 * oracle.max(1.0));
            let mut sq = 0.0;
            for i in 0..n {
                sq += (a[i] - e[i]) * (a[i] - e[i]);
            }
            let r = rmse_over(&a, &e, &all(n)).unwrap();
            assert!((r - (sq / n as f64).sqrt()).abs() <= 1e-12 * r.max(1.0));
        }
    }

    #[test]
    fn generation_series_qualify_nonzero_hours_only() {
        let actual = HourlySeries::new("g", start(), vec![0.0, 2.0, 0.0, 2.0], Role::Generation).unwrap();
        let est = HourlySeries::new("g", start(), vec![5.0, 2.2, 5.0, 1.8], Role::Generation).unwrap();
        assert!((mape(&actual, &est).unwrap() - 10.0).abs() < 1e-12);
        assert!((rmse(&actual, &est).unwrap() - 0.2).abs() < 1e-12);
        let native = actual.with_values(actual.values().to_vec(), Role::Native).unwrap();
        let native_est = est.with_values(est.values().to_vec(), Role::Native).unwrap();
        assert!(mape(&native, &native_est).unwrap() > 100.0);
    }

    #[test]
    fn mape_is_not_symmetric() {
        let (a, e) = ([1.0, 2.0], [2.0, 4.0]);
        let h = all(2);
        assert_ne!(mape_over(&a, &e, &h).unwrap(), mape_over(&e, &a, &h).unwrap());
        assert_eq!(rmse_over(&a, &e, &h).unwrap(), rmse_over(&e, &a, &h).unwrap());
    }

    #[test]
    fn cdf_hand_cases() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        let t = empirical_cdf(&v, &[0.2, 1.0]).unwrap();
        assert_eq!(t, vec![(0.2, 2.0), (1.0, 10.0)]);
        assert_eq!(empirical_cdf(&v, &[0.0]), Err(MetricsError::BadProbability(0.0)));
        assert_eq!(empirical_cdf(&[], &[0.5]), Err(MetricsError::EmptySample));
    }

    #[test]
    fn cdf_matches_counting_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let n = rng.random_range(1..60);
            let v: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..20u32))).collect();
            let p: f64 = rng.random_range(0.01..=1.0);
            let got = empirical_cdf(&v, &[p]).unwrap()[0].1;
            // smallest observed value whose counted fraction reaches p
            let oracle = v
                .iter()
                .copied()
                .filter(|x| v.iter().filter(|y| *y <= x).count() as f64 / n as f64 >= p)
                .fold(f64::INFINITY, f64::min);
            assert_eq!(got, oracle, "{v:?} p={p}");
        }
    }

    fn daylight() -> DayNightPartition {
        DayNightPartition::uniform(HourMask::range(7, 18).unwrap()).unwrap()
    }

    #[test]
    fn identical_halves_correlate_perfectly() {
        // every day: same total at night and during the day, scaled per day
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut values = Vec::new();
        for _ in 0..365 {
            let level: f64 = rng.random_range(0.5..3.0);
            values.extend((0..24).map(|_| level));
        }
        let s = HourlySeries::new("c", start(), values, Role::Native).unwrap();
        let c = timescale_correlation(&s, &daylight(), HourlyPairing::EvenSplit).unwrap();
        for r in [c.hourly, c.daily, c.weekly, c.monthly] {
            assert!((r.unwrap() - 1.0).abs() < 1e-12, "{c:?}");
        }
    }

    #[test]
    fn white_noise_monthly_correlation_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let months: Vec<HourlySeries> = (0..20)
            .map(|k| {
                let v = (0..365 * 24)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect();
                HourlySeries::new(format!("c{k}"), start(), v, Role::Native).unwrap()
            })
            .collect();
        let c = pooled_timescale_correlation(&months, &daylight(), HourlyPairing::EvenSplit).unwrap();
        assert!(c.monthly.unwrap().abs() <= 0.2, "{c:?}");
    }

    #[test]
    fn short_or_flat_series() {
        let short = HourlySeries::new("c", start(), vec![1.0; 24 * 30], Role::Native).unwrap();
        assert!(matches!(
            timescale_correlation(&short, &daylight(), HourlyPairing::EvenSplit),
            Err(MetricsError::TooShort(_))
        ));
        let flat = HourlySeries::new("c", start(), vec![1.0; 24 * 90], Role::Native).unwrap();
        let c = timescale_correlation(&flat, &daylight(), HourlyPairing::Ordinal).unwrap();
        assert_eq!(c.hourly, None);
        assert_eq!(c.daily, None);
        assert_eq!(c.weekly, None);
    }

    #[test]
    fn report_tables_and_order() {
        let rows: Vec<CustomerMetrics> = (0..10)
            .rev()
            .map(|i| CustomerMetrics {
                customer_id: format!("c{i}"),
                generation_mape: f64::from(i + 1),
                generation_rmse: 0.1,
                native_mape: 2.0 * f64::from(i + 1),
                native_rmse: 0.2,
                qualifying_hours: 10,
            })
            .collect();
        let r = ErrorReport::new(rows).unwrap();
        assert_eq!(r.customers[0].customer_id, "c0");
        assert_eq!(r.cdf[0].generation_mape, 2.0);
        assert_eq!(r.cdf[4].native_mape, 20.0);
        assert!((r.averages.generation_mape - 5.5).abs() < 1e-12);
        assert_eq!(r.median_mape(), (5.0, 10.0));
        let back: ErrorReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 11);
        assert!(text.starts_with("customer_id,generation_mape"));
    }

    proptest! {
        #[test]
        fn metrics_ignore_hour_order(
            pairs in prop::collection::vec((0.1f64..10.0, -10.0f64..10.0), 1..50),
            seed in any::<u64>(),
        ) {
            let (a, e): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
            let mut idx: Vec<usize> = (0..a.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in (1..idx.len()).rev() {
                idx.swap(i, rng.random_range(0..=i));
            }
            let pa: Vec<f64> = idx.iter().map(|&i| a[i]).collect();
            let pe: Vec<f64> = idx.iter().map(|&i| e[i]).collect();
            let h = all(a.len());
            let m = mape_over(&a, &e, &h).unwrap();
            prop_assert!((m - mape_over(&pa, &pe, &h).unwrap()).abs() <= 1e-9 * m.max(1.0));
            let r = rmse_over(&a, &e, &h).unwrap();
            prop_assert!((r - rmse_over(&pa, &pe, &h).unwrap()).abs() <= 1e-12 * r.max(1.0));
            prop_assert!(m >= 0.0 && r >= 0.0);
        }

        #[test]
        fn cdf_is_monotone_and_tops_at_max(v in prop::collection::vec(-100.0f64..100.0, 1..80)) {
            let t = empirical_cdf(&v, &CDF_PROBABILITIES).unwrap();
            for w in t.windows(2) {
                prop_assert!(w[0].1 <= w[1].1);
            }
            prop_assert_eq!(t[4].1, v.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        }
    }
}
