use std::f64::consts::PI;

use chrono::Datelike;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::solar::scenario_days;
use super::ScenarioConfig;
use crate::rng::{label_tag, stream_seed};
use crate::series::{DayNightPartition, HourlySeries, Role, YearMonth};

/// Spread of each within-customer random effect at `noise_level = 1`.
const RATIO_SPREAD: f64 = 0.005;
const RATIO_JITTER: f64 = 0.003;
const DAY_SHARED: f64 = 0.12;
const DAY_SPLIT: f64 = 0.02;
const HOURLY: f64 = 0.35;

fn lognormal(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 1.0;
    }
    let z: f64 = StandardNormal.sample(rng);
    (sigma * z - 0.5 * sigma * sigma).exp()
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Shared seasonal base: heating and cooling peaks in mid-winter and mid-summer.
fn season(amplitude: f64, month: u32) -> f64 {
    1.0 + amplitude * (2.0 * PI * f64::from(month - 1) / 6.0).cos()
}

fn night_shape(hour: u32) -> f64 {
    let h = f64::from(hour);
    1.0 + 1.2 * (-((h - 20.0) / 2.0).powi(2)).exp() + 0.4 * (-((h - 6.5) / 1.0).powi(2)).exp()
}

fn day_shape(hour: u32) -> f64 {
    let h = f64::from(hour);
    1.0 + 0.5 * (-((h - 17.0) / 2.0).powi(2)).exp() + 0.3 * (-((h - 8.0) / 1.5).powi(2)).exp()
}

/// Hourly native demand (kWh, non-negative) for customer `index`.
///
/// The daily energy splits between night and daylight hours by a
/// customer-stable share, so monthly nocturnal and diurnal sums move together.
pub fn gen_native(config: &ScenarioConfig, index: u64) -> HourlySeries {
    native_with(config, &config.daylight_partition(), index)
}

pub(crate) fn native_with(config: &ScenarioConfig, daylight: &DayNightPartition, index: u64) -> HourlySeries {
    let load = &config.load;
    let noise = load.noise_level;
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, label_tag("native"), index));
    let scale = lognormal(&mut rng, load.heterogeneity);
    let share = (load.night_share + RATIO_SPREAD * noise * normal(&mut rng)).clamp(0.05, 0.95);
    let daily_base = load.annual_kwh / 365.0 * scale;

    let days = scenario_days(config);
    let mut values = Vec::with_capacity(days.len() * 24);
    let mut month = None;
    let mut month_share = share;
    let mut mask = daylight.diurnal(YearMonth::of(config.start_time())).expect("horizon month");
    for day in &days {
        let ym = YearMonth::new(day.year(), day.month());
        if month != Some(ym) {
            month = Some(ym);
            month_share = (share + RATIO_JITTER * noise * normal(&mut rng)).clamp(0.05, 0.95);
            mask = daylight.diurnal(ym).expect("horizon month");
        }
        let energy = daily_base * season(load.seasonal_amplitude, ym.month) * lognormal(&mut rng, DAY_SHARED * noise);
        let night_energy = energy * month_share * lognormal(&mut rng, DAY_SPLIT * noise);
        let day_energy = energy * (1.0 - month_share) * lognormal(&mut rng, DAY_SPLIT * noise);
        let weights: Vec<f64> = (0..24u32)
            .map(|h| {
                let shape = if mask.contains(h) { day_shape(h) } else { night_shape(h) };
                shape * lognormal(&mut rng, HOURLY * noise)
            })
            .collect();
        let (mut wd, mut wn) = (0.0, 0.0);
        for h in 0..24u32 {
            if mask.contains(h) {
                wd += weights[h as usize];
            } else {
                wn += weights[h as usize];
            }
        }
        for h in 0..24u32 {
            let w = weights[h as usize];
            values.push(if mask.contains(h) { day_energy * w / wd } else { night_energy * w / wn });
        }
    }
    HourlySeries::new(format!("native-{index}"), config.start_time(), values, Role::Native)
        .expect("synthetic series is valid")
}
