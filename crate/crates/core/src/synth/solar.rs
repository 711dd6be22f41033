use std::f64::consts::PI;

use chrono::{Datelike, NaiveDate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{ScenarioConfig, SolarConfig};
use crate::disagg::Orientation;
use crate::rng::{label_tag, stream_seed};
use crate::series::{HourlySeries, Role, YearMonth};

const SOLAR_NOON: f64 = 12.0;
const SUBSAMPLES: usize = 6;
const KERNEL_POWER: f64 = 1.5;

/// Hours of daylight on day-of-year `doy` (1-based).
pub(crate) fn day_length(solar: &SolarConfig, doy: u32) -> f64 {
    12.0 + solar.day_length_amplitude_h * (2.0 * PI * (f64::from(doy) - 172.0) / 365.0).cos()
}

/// Seasonal yield factor; south arrays are flatter, east/west arrays more summer-peaked.
fn irradiance(solar: &SolarConfig, orientation: Orientation, doy: u32) -> f64 {
    let amplitude = match orientation {
        Orientation::South => 0.25 - solar.seasonal_contrast,
        Orientation::East | Orientation::West => 0.25 + solar.seasonal_contrast,
        Orientation::Unknown => 0.25,
    };
    1.0 - amplitude + amplitude * (2.0 * PI * (f64::from(doy) - 172.0) / 365.0).cos()
}

const FOG_PEAK_DOY: f64 = 320.0;
const STORM_PEAK_DOY: f64 = 190.0;

/// Seasonal weight in [0, 1], 1 on `peak` and 0 half a year away.
fn seasonal_weight(doy: u32, peak: f64) -> f64 {
    0.5 * (1.0 + (2.0 * PI * (f64::from(doy) - peak) / 365.0).cos())
}

fn efficiency(orientation: Orientation) -> f64 {
    match orientation {
        Orientation::South | Orientation::Unknown => 1.0,
        Orientation::East | Orientation::West => 0.85,
    }
}

fn skew(solar: &SolarConfig, orientation: Orientation) -> f64 {
    match orientation {
        Orientation::East => -solar.skew,
        Orientation::West => solar.skew,
        Orientation::South | Orientation::Unknown => 0.0,
    }
}

/// Normalized output at clock time `t` for a day of length `length`.
/// `s < 0` moves the peak before noon; the warp keeps both ends pinned.
pub(crate) fn kernel(t: f64, length: f64, s: f64) -> f64 {
    let x = (t - SOLAR_NOON) / (0.5 * length);
    if x.abs() >= 1.0 {
        return 0.0;
    }
    let warped = (x - s) / (1.0 - s * x);
    (0.5 * PI * warped).cos().max(0.0).powf(KERNEL_POWER)
}

/// Feeder-wide conditions for one day, shared by every array.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct DayWeather {
    pub clearness: f64,
    pub morning: f64,
    pub afternoon: f64,
}

pub(crate) fn weather(config: &ScenarioConfig, day_index: u64, doy: u32) -> DayWeather {
    let solar = &config.solar;
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, label_tag("weather"), day_index));
    let z: f64 = StandardNormal.sample(&mut rng);
    let v = solar.weather_volatility;
    let clearness = (v * z - 0.5 * v * v).exp().min(1.0 + 2.0 * v);
    let u: f64 = StandardNormal.sample(&mut rng);
    let jitter = (0.25 * u).exp();
    // late-autumn mornings lose output to fog, midsummer afternoons to convection
    let fog = seasonal_weight(doy, FOG_PEAK_DOY);
    let storms = seasonal_weight(doy, STORM_PEAK_DOY);
    let morning = (1.0 - solar.am_pm_asymmetry * fog * jitter).max(0.0);
    let afternoon = (1.0 - solar.am_pm_asymmetry * storms / jitter).max(0.0);
    DayWeather {
        clearness,
        morning,
        afternoon,
    }
}

fn attenuation(w: &DayWeather, t: f64) -> f64 {
    let blend = 1.0 / (1.0 + (-(t - SOLAR_NOON)).exp());
    w.morning + (w.afternoon - w.morning) * blend
}

pub(crate) fn scenario_days(config: &ScenarioConfig) -> Vec<NaiveDate> {
    let end = (0..config.months).fold(YearMonth::of(config.start_time()), |m, _| m.next());
    config
        .start
        .iter_days()
        .take_while(|d| YearMonth::new(d.year(), d.month()) < end)
        .collect()
}

/// Raw (non-negative) hourly output of one array over the scenario horizon.
pub fn gen_solar(config: &ScenarioConfig, orientation: Orientation, capacity_kw: f64) -> HourlySeries {
    let solar = &config.solar;
    let s = skew(solar, orientation);
    let peak = capacity_kw * efficiency(orientation);
    let days = scenario_days(config);
    let mut values = Vec::with_capacity(days.len() * 24);
    for (index, day) in days.iter().enumerate() {
        let doy = day.ordinal();
        let length = day_length(solar, doy);
        let w = weather(config, index as u64, doy);
        let scale = peak * irradiance(solar, orientation, doy) * w.clearness;
        for h in 0..24 {
            let mut acc = 0.0;
            for j in 0..SUBSAMPLES {
                let t = h as f64 + (j as f64 + 0.5) / SUBSAMPLES as f64;
                acc += kernel(t, length, s) * attenuation(&w, t);
            }
            values.push(scale * acc / SUBSAMPLES as f64);
        }
    }
    let id = format!("{}-{:.3}kw", serde_json::to_value(orientation).unwrap().as_str().unwrap(), capacity_kw);
    HourlySeries::new(id, config.start_time(), values, Role::Generation).expect("synthetic series is valid")
}
