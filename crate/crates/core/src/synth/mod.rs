//! Synthetic feeders with known ground truth.
//!
//! A scenario holds non-PV customers (native demand only), a few metered PV
//! arrays used as exemplars, and net-metered customers whose generation is a
//! known non-negative combination of the exemplars. All randomness derives
//! from one seed, so generation is reproducible and order-independent.

mod load;
mod solar;

use std::fs;
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::disagg::Orientation;
use crate::ingest::{write_series_file, IngestError};
use crate::rng::{label_tag, stream_seed};
use crate::series::{derive_partition, negate_generation, DayNightPartition, HourlySeries, Role, SeriesError, YearMonth};

pub use load::gen_native;
pub use solar::gen_solar;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scenario configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("{weights} weights for {exemplars} exemplars")]
    WeightCount { weights: usize, exemplars: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CustomerCounts {
    /// Customers without PV, used to fit the demand model.
    pub native: usize,
    /// Metered PV arrays.
    pub exemplars: usize,
    /// Net-metered customers with PV.
    pub net: usize,
    /// Net-metered customers that actually have no PV.
    pub net_without_pv: usize,
}

impl Default for CustomerCounts {
    fn default() -> Self {
        Self {
            native: 200,
            exemplars: 3,
            net: 60,
            net_without_pv: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoadConfig {
    /// Mean annual consumption of a typical customer (kWh).
    pub annual_kwh: f64,
    pub seasonal_amplitude: f64,
    /// Multiplies every within-customer random effect; 0 gives deterministic shapes.
    pub noise_level: f64,
    /// Log-normal spread of customer scale.
    pub heterogeneity: f64,
    /// Mean share of daily energy used outside daylight hours.
    pub night_share: f64,
}

impl Default for LoadConfig {
    fn default() -> Self {
        Self {
            annual_kwh: 9000.0,
            seasonal_amplitude: 0.25,
            noise_level: 1.0,
            heterogeneity: 0.35,
            night_share: 0.45,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolarConfig {
    /// Range of customer array capacities (kW).
    pub capacity_kw: [f64; 2],
    pub exemplar_capacity_kw: f64,
    /// Probabilities of east, south and west dominant orientation.
    pub orientation_mix: [f64; 3],
    /// Peak displacement of east/west arrays, in units of half the day length.
    pub skew: f64,
    /// Half the difference between the longest and shortest day (hours).
    pub day_length_amplitude_h: f64,
    /// Log-normal spread of the daily clearness factor.
    pub weather_volatility: f64,
    /// Seasonal morning/afternoon attenuation depth.
    pub am_pm_asymmetry: f64,
    /// How much flatter the seasonal yield of a south array is than an east/west one.
    pub seasonal_contrast: f64,
    /// Chance that a customer has a second, smaller array.
    pub secondary_array_probability: f64,
}

impl Default for SolarConfig {
    fn default() -> Self {
        Self {
            capacity_kw: [3.0, 7.0],
            exemplar_capacity_kw: 5.0,
            orientation_mix: [1.0 / 3.0; 3],
            skew: 0.35,
            day_length_amplitude_h: 3.0,
            weather_volatility: 0.3,
            am_pm_asymmetry: 0.5,
            seasonal_contrast: 0.2,
            secondary_array_probability: 0.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AnomalyModel {
    /// Recorded output drops to zero.
    Zero,
    /// Recorded output is multiplied by `factor` in [0, 1).
    Scale { factor: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnomalySpec {
    /// Anomalous hours per affected exemplar.
    pub count: usize,
    /// Affected exemplar indices; empty means all.
    pub exemplars: Vec<usize>,
    pub model: AnomalyModel,
}

impl Default for AnomalySpec {
    fn default() -> Self {
        Self {
            count: 0,
            exemplars: Vec::new(),
            model: AnomalyModel::Zero,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub seed: u64,
    /// First day of the horizon; must be the first of a month.
    pub start: NaiveDate,
    pub months: u32,
    pub counts: CustomerCounts,
    pub load: LoadConfig,
    pub solar: SolarConfig,
    pub anomaly: AnomalySpec,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 2021,
            start: NaiveDate::from_ymd_opt(2021, 1, 1).expect("valid date"),
            months: 12,
            counts: CustomerCounts::default(),
            load: LoadConfig::default(),
            solar: SolarConfig::default(),
            anomaly: AnomalySpec::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn start_time(&self) -> NaiveDateTime {
        self.start.and_hms_opt(0, 0, 0).expect("midnight")
    }

    pub fn month_list(&self) -> Vec<YearMonth> {
        let mut m = YearMonth::of(self.start_time());
        (0..self.months)
            .map(|_| {
                let here = m;
                m = m.next();
                here
            })
            .collect()
    }

    /// Day/night windows the load generator splits energy by.
    /// Diurnal windows of the clean exemplar profiles, as derived by the
    /// pipeline's default partition. Native demand splits its daily energy on
    /// these windows.
    pub fn daylight_partition(&self) -> DayNightPartition {
        let exemplars: Vec<HourlySeries> = (0..self.counts.exemplars.max(1))
            .map(|i| {
                negate_generation(&gen_solar(self, exemplar_orientation(i), self.solar.exemplar_capacity_kw))
                    .expect("solar output is non-negative")
            })
            .collect();
        derive_partition(&exemplars, DAYLIGHT_THRESHOLD).expect("every month has daylight")
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Config(m.to_string()));
        let mix = &self.solar.orientation_mix;
        let cap = &self.solar.capacity_kw;
        if self.months < 2 {
            return bad("horizon must cover at least 2 months");
        }
        if self.start.format("%d").to_string() != "01" {
            return bad("start must be the first day of a month");
        }
        if mix.iter().any(|p| !(*p >= 0.0)) || (mix.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("orientation mix must be probabilities summing to 1");
        }
        if !(cap[0] > 0.0 && cap[0] <= cap[1]) || !(self.solar.exemplar_capacity_kw > 0.0) {
            return bad("capacities must be positive with min <= max");
        }
        if !(self.load.annual_kwh > 0.0 && self.load.noise_level >= 0.0 && self.load.heterogeneity >= 0.0) {
            return bad("load scale must be positive and spreads non-negative");
        }
        if !(self.load.night_share > 0.0 && self.load.night_share < 1.0) {
            return bad("night share must be in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.solar.skew) || !(0.0..6.0).contains(&self.solar.day_length_amplitude_h) {
            return bad("skew must be in [0, 1) and day-length amplitude in [0, 6) h");
        }
        if !(0.0..1.0).contains(&self.solar.am_pm_asymmetry) || !(self.solar.weather_volatility >= 0.0) {
            return bad("am/pm asymmetry must be in [0, 1) and volatility non-negative");
        }
        if !(0.0..=0.25).contains(&self.solar.seasonal_contrast) {
            return bad("seasonal contrast must be in [0, 0.25]");
        }
        if !(0.0..=1.0).contains(&self.solar.secondary_array_probability) {
            return bad("secondary array probability must be in [0, 1]");
        }
        if let AnomalyModel::Scale { factor } = self.anomaly.model {
            if !(0.0..1.0).contains(&factor) {
                return bad("anomaly scale factor must be in [0, 1)");
            }
        }
        if let Some(i) = self.anomaly.exemplars.iter().find(|&&i| i >= self.counts.exemplars) {
            return Err(SynthError::Config(format!("anomaly exemplar {i} does not exist")));
        }
        if self.counts.exemplars == 0 && self.counts.net > 0 {
            return bad("customers with PV need at least one exemplar");
        }
        Ok(())
    }
}

/// Orientation of exemplar `index`: east, south, west, repeating.
pub fn exemplar_orientation(index: usize) -> Orientation {
    [Orientation::East, Orientation::South, Orientation::West][index % 3]
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyOutcome {
    pub series: HourlySeries,
    /// Hours whose recorded value changed.
    pub applied: Vec<usize>,
    /// Requested hours with no generation to disturb.
    pub skipped: Vec<usize>,
}

/// Corrupts the recorded output of a raw (non-negative) generation series.
pub fn inject_anomaly(exemplar: &HourlySeries, hours: &[usize], model: AnomalyModel) -> Result<AnomalyOutcome, SynthError> {
    let mut values = exemplar.values().to_vec();
    let (mut applied, mut skipped) = (Vec::new(), Vec::new());
    for &h in hours {
        if h >= values.len() {
            return Err(SynthError::Config(format!("anomaly hour {h} beyond horizon")));
        }
        if values[h] == 0.0 {
            log::warn!("anomaly at hour {h} of `{}` falls outside daylight; ignored", exemplar.customer_id());
            skipped.push(h);
            continue;
        }
        values[h] = match model {
            AnomalyModel::Zero => 0.0,
            AnomalyModel::Scale { factor } => values[h] * factor,
        };
        applied.push(h);
    }
    Ok(AnomalyOutcome {
        series: exemplar.with_values(values, exemplar.role())?,
        applied,
        skipped,
    })
}

/// `net = native − Σ_i ω_i · gen_i` with generation in raw (non-negative) form.
pub fn compose_net(
    native: &HourlySeries,
    weights: &[f64],
    exemplars: &[HourlySeries],
) -> Result<(HourlySeries, Vec<f64>), SynthError> {
    if weights.len() != exemplars.len() {
        return Err(SynthError::WeightCount {
            weights: weights.len(),
            exemplars: exemplars.len(),
        });
    }
    for e in exemplars {
        native.ensure_same_horizon(e)?;
    }
    let values = (0..native.len())
        .map(|t| {
            let generated: f64 = weights.iter().zip(exemplars).map(|(w, e)| w * e.values()[t]).sum();
            native.values()[t] - generated
        })
        .collect();
    Ok((native.with_values(values, Role::Net)?, weights.to_vec()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CustomerTruth {
    pub customer_id: String,
    pub weights: Vec<f64>,
    pub orientation: Option<Orientation>,
    pub capacity_kw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExemplarTruth {
    pub customer_id: String,
    pub orientation: Orientation,
    pub capacity_kw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyRecord {
    pub exemplar: String,
    pub hours: Vec<usize>,
    pub timestamps: Vec<NaiveDateTime>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub exemplars: Vec<ExemplarTruth>,
    pub customers: Vec<CustomerTruth>,
    pub anomalies: Vec<AnomalyRecord>,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    /// Native demand of customers without PV.
    pub native: Vec<HourlySeries>,
    /// Recorded exemplar output (raw, non-negative), anomalies included.
    pub exemplars: Vec<HourlySeries>,
    /// Exemplar output before anomalies.
    pub clean_exemplars: Vec<HourlySeries>,
    pub net: Vec<HourlySeries>,
    /// True generation of each net-metered customer (raw, non-negative).
    pub actual_generation: Vec<HourlySeries>,
    pub actual_native: Vec<HourlySeries>,
    pub truth: GroundTruth,
}

const NET_INDEX_OFFSET: u64 = 1 << 32;
/// Fraction of the monthly peak above which an hour counts as daylight.
const DAYLIGHT_THRESHOLD: f64 = 0.01;

fn customer_weights(config: &ScenarioConfig, orientations: &[Orientation], k: usize) -> (Vec<f64>, Orientation, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, label_tag("array"), k as u64));
    let solar = &config.solar;
    let prob = |o: Orientation| match o {
        Orientation::East => solar.orientation_mix[0],
        Orientation::South => solar.orientation_mix[1],
        Orientation::West => solar.orientation_mix[2],
        Orientation::Unknown => 0.0,
    };
    let total: f64 = orientations.iter().map(|o| prob(*o)).sum();
    let mut u = rng.random::<f64>() * total;
    let mut dominant = orientations.len() - 1;
    for (i, o) in orientations.iter().enumerate() {
        if u < prob(*o) {
            dominant = i;
            break;
        }
        u -= prob(*o);
    }
    let capacity = rng.random_range(solar.capacity_kw[0]..=solar.capacity_kw[1]);
    let mut weights = vec![0.0; orientations.len()];
    weights[dominant] = capacity / solar.exemplar_capacity_kw;
    let secondary = rng.random::<f64>() < solar.secondary_array_probability;
    if secondary && orientations.len() > 1 {
        let mut other = rng.random_range(0..orientations.len() - 1);
        if other >= dominant {
            other += 1;
        }
        weights[other] = weights[dominant] * rng.random_range(0.1..0.35);
    }
    let total_capacity = weights.iter().sum::<f64>() * solar.exemplar_capacity_kw;
    (weights, orientations[dominant], total_capacity)
}

fn anomaly_hours(config: &ScenarioConfig, clean: &HourlySeries, index: usize) -> Vec<usize> {
    let peak = clean.values().iter().copied().fold(0.0, f64::max);
    let candidates: Vec<usize> = (0..clean.len()).filter(|&t| clean.values()[t] >= 0.5 * peak).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, label_tag("anomaly"), index as u64));
    let count = config.anomaly.count.min(candidates.len());
    let mut hours: Vec<usize> = sample(&mut rng, candidates.len(), count).into_iter().map(|i| candidates[i]).collect();
    hours.sort_unstable();
    hours
}

/// Builds the full scenario described by `config`.
pub fn generate(config: &ScenarioConfig) -> Result<Scenario, SynthError> {
    config.validate()?;
    let counts = &config.counts;
    let daylight = config.daylight_partition();
    let native: Vec<HourlySeries> = (0..counts.native)
        .into_par_iter()
        .map(|k| load::native_with(config, &daylight, k as u64).renamed(format!("cp{k:04}")))
        .collect();

    let orientations: Vec<Orientation> = (0..counts.exemplars).map(exemplar_orientation).collect();
    let clean: Vec<HourlySeries> = orientations
        .iter()
        .enumerate()
        .map(|(i, o)| gen_solar(config, *o, config.solar.exemplar_capacity_kw).renamed(format!("cg{i:02}")))
        .collect();
    let mut exemplars = Vec::with_capacity(clean.len());
    let mut anomalies = Vec::new();
    for (i, series) in clean.iter().enumerate() {
        let affected = config.anomaly.count > 0 && (config.anomaly.exemplars.is_empty() || config.anomaly.exemplars.contains(&i));
        if !affected {
            exemplars.push(series.clone());
            continue;
        }
        let outcome = inject_anomaly(series, &anomaly_hours(config, series, i), config.anomaly.model)?;
        anomalies.push(AnomalyRecord {
            exemplar: series.customer_id().to_string(),
            timestamps: outcome.applied.iter().map(|&h| series.timestamp(h)).collect(),
            hours: outcome.applied,
        });
        exemplars.push(outcome.series);
    }

    let total = counts.net + counts.net_without_pv;
    let customers: Vec<(HourlySeries, HourlySeries, HourlySeries, CustomerTruth)> = (0..total)
        .into_par_iter()
        .map(|k| {
            let id = format!("cn{k:04}");
            let native = load::native_with(config, &daylight, NET_INDEX_OFFSET + k as u64).renamed(id.clone());
            let (weights, orientation, capacity_kw) = if k < counts.net {
                let (w, o, c) = customer_weights(config, &orientations, k);
                (w, Some(o), c)
            } else {
                (vec![0.0; clean.len()], None, 0.0)
            };
            let (net, weights) = compose_net(&native, &weights, &clean)?;
            let generation: Vec<f64> = net.values().iter().zip(native.values()).map(|(n, p)| p - n).collect();
            let generation = native.with_values(generation, Role::Generation)?;
            let truth = CustomerTruth {
                customer_id: id,
                weights,
                orientation,
                capacity_kw,
            };
            Ok((net, generation, native, truth))
        })
        .collect::<Result<_, SynthError>>()?;

    let mut scenario = Scenario {
        native,
        exemplars,
        clean_exemplars: clean,
        net: Vec::with_capacity(total),
        actual_generation: Vec::with_capacity(total),
        actual_native: Vec::with_capacity(total),
        truth: GroundTruth {
            seed: config.seed,
            exemplars: orientations
                .iter()
                .enumerate()
                .map(|(i, o)| ExemplarTruth {
                    customer_id: format!("cg{i:02}"),
                    orientation: *o,
                    capacity_kw: config.solar.exemplar_capacity_kw,
                })
                .collect(),
            customers: Vec::with_capacity(total),
            anomalies,
        },
    };
    for (net, generation, native, truth) in customers {
        scenario.net.push(net);
        scenario.actual_generation.push(generation);
        scenario.actual_native.push(native);
        scenario.truth.customers.push(truth);
    }
    Ok(scenario)
}

/// File names written by [`Scenario::write`].
pub mod files {
    pub const NATIVE: &str = "cp_native.csv";
    pub const EXEMPLARS: &str = "cg_exemplars.csv";
    pub const NET: &str = "cn_net.csv";
    pub const ACTUAL_GENERATION: &str = "cn_actual_generation.csv";
    pub const ACTUAL_NATIVE: &str = "cn_actual_native.csv";
    pub const GROUND_TRUTH: &str = "ground_truth.json";
}

impl Scenario {
    /// Writes every series as `customer_id,timestamp,kwh` CSV plus the ground truth JSON.
    pub fn write(&self, dir: &Path) -> Result<(), SynthError> {
        fs::create_dir_all(dir)?;
        write_series_file(&dir.join(files::NATIVE), &self.native, false)?;
        write_series_file(&dir.join(files::EXEMPLARS), &self.exemplars, false)?;
        write_series_file(&dir.join(files::NET), &self.net, false)?;
        write_series_file(&dir.join(files::ACTUAL_GENERATION), &self.actual_generation, false)?;
        write_series_file(&dir.join(files::ACTUAL_NATIVE), &self.actual_native, false)?;
        let truth = serde_json::to_string_pretty(&self.truth).expect("ground truth serializes");
        fs::write(dir.join(files::GROUND_TRUTH), truth + "\n")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests;
