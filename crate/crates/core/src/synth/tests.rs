use super::*;
use crate::disagg::{reconstruct, DisaggProblem, ExemplarSet, MonthTerm};
use crate::gmm::{Component, GmmModel};
use crate::ingest::{read_series_file, GapPolicy};
use crate::metrics::{pooled_timescale_correlation, HourlyPairing};
use crate::series::{derive_partition, negate_generation};
use proptest::prelude::*;

fn small() -> ScenarioConfig {
    ScenarioConfig {
        months: 3,
        counts: CustomerCounts {
            native: 4,
            exemplars: 3,
            net: 3,
            net_without_pv: 1,
        },
        ..ScenarioConfig::default()
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn centroid_hour(series: &HourlySeries) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (t, v) in series.values().iter().enumerate() {
        num += (t % 24) as f64 * v;
        den += v;
    }
    num / den + 0.5
}

#[test]
fn noiseless_monthly_halves_are_perfectly_correlated() {
    let mut cfg = ScenarioConfig::default();
    cfg.load.noise_level = 0.0;
    let series: Vec<HourlySeries> = (0..20).map(|k| gen_native(&cfg, k)).collect();
    let c = pooled_timescale_correlation(&series, &cfg.daylight_partition(), HourlyPairing::EvenSplit).unwrap();
    assert!((c.monthly.unwrap() - 1.0).abs() < 1e-12, "{c:?}");
}

#[test]
fn default_population_correlation_rises_with_timescale() {
    let cfg = ScenarioConfig {
        months: 36,
        ..ScenarioConfig::default()
    };
    let series: Vec<HourlySeries> = (0..200).into_par_iter().map(|k| gen_native(&cfg, k)).collect();
    let c = pooled_timescale_correlation(&series, &cfg.daylight_partition(), HourlyPairing::EvenSplit).unwrap();
    eprintln!("{c:?}");
    let (h, d, w, m) = (c.hourly.unwrap(), c.daily.unwrap(), c.weekly.unwrap(), c.monthly.unwrap());
    assert!(m >= 0.85, "{c:?}");
    assert!(h <= m - 0.15, "{c:?}");
    assert!(h < d && d < w && w < m, "{c:?}");
}

#[test]
fn native_is_deterministic_and_non_negative() {
    let cfg = ScenarioConfig::default();
    let a = gen_native(&cfg, 7);
    let b = gen_native(&cfg, 7);
    assert_eq!(a, b);
    assert!(a.values().iter().all(|v| *v >= 0.0));
    assert_ne!(a, gen_native(&cfg, 8));
    assert_eq!(a.len(), 365 * 24);
}

#[test]
fn unskewed_south_profile_is_symmetric() {
    let mut cfg = ScenarioConfig::default();
    cfg.solar.skew = 0.0;
    cfg.solar.am_pm_asymmetry = 0.0;
    let s = gen_solar(&cfg, Orientation::South, 5.0);
    let mut worst: f64 = 0.0;
    for day in s.values().chunks(24) {
        for h in 0..12 {
            worst = worst.max((day[h] - day[23 - h]).abs());
        }
    }
    assert!(worst <= 1e-9, "{worst}");
}

#[test]
fn east_peaks_before_noon_and_west_after() {
    let cfg = ScenarioConfig::default();
    let east = centroid_hour(&gen_solar(&cfg, Orientation::East, 5.0));
    let south = centroid_hour(&gen_solar(&cfg, Orientation::South, 5.0));
    let west = centroid_hour(&gen_solar(&cfg, Orientation::West, 5.0));
    assert!(east < 12.0 && 12.0 < west, "{east} {south} {west}");
    assert!(east < south && south < west);
}

#[test]
fn capacities_scale_a_shared_profile() {
    let cfg = ScenarioConfig::default();
    let a = gen_solar(&cfg, Orientation::South, 3.0);
    let b = gen_solar(&cfg, Orientation::South, 6.5);
    assert!(cosine(a.values(), b.values()) >= 0.999);
    assert!(a.values().iter().all(|v| *v >= 0.0));
    // night hours are dark
    assert!(a.values().chunks(24).all(|d| d[0] == 0.0 && d[23] == 0.0));
}

#[test]
fn derived_windows_are_longer_in_summer() {
    let cfg = ScenarioConfig::default();
    let gens: Vec<HourlySeries> = [Orientation::East, Orientation::South, Orientation::West]
        .iter()
        .map(|o| negate_generation(&gen_solar(&cfg, *o, 5.0)).unwrap())
        .collect();
    let p = derive_partition(&gens, 0.01).unwrap();
    let june = p.diurnal(YearMonth::new(2021, 6)).unwrap().len();
    let december = p.diurnal(YearMonth::new(2021, 12)).unwrap().len();
    assert!(june > december, "{june} vs {december}");
}

#[test]
fn compose_net_identities() {
    let cfg = small();
    let native = gen_native(&cfg, 0);
    let ex: Vec<HourlySeries> = (0..3).map(|i| gen_solar(&cfg, exemplar_orientation(i), 5.0)).collect();
    let (net, w) = compose_net(&native, &[0.0; 3], &ex).unwrap();
    assert_eq!(net.values(), native.values());
    assert_eq!(w, vec![0.0; 3]);
    assert_eq!(net.role(), Role::Net);
    let (net, _) = compose_net(&native, &[0.0, 1.0, 0.0], &ex).unwrap();
    for t in 0..net.len() {
        let back = net.values()[t] + ex[1].values()[t];
        assert!((back - native.values()[t]).abs() <= 2.0 * f64::EPSILON * native.values()[t].max(ex[1].values()[t]));
    }
    assert!(matches!(compose_net(&native, &[1.0], &ex), Err(SynthError::WeightCount { .. })));
}

#[test]
fn anomaly_injection_changes_only_requested_hours() {
    let cfg = small();
    let s = gen_solar(&cfg, Orientation::South, 5.0);
    let same = inject_anomaly(&s, &[], AnomalyModel::Zero).unwrap();
    assert_eq!(same.series, s);
    let noon = 24 * 10 + 12;
    let one = inject_anomaly(&s, &[noon], AnomalyModel::Zero).unwrap();
    for t in 0..s.len() {
        let expected = if t == noon { 0.0 } else { s.values()[t] };
        assert_eq!(one.series.values()[t], expected);
    }
    let hours: Vec<usize> = (0..5).map(|d| 24 * (3 + 7 * d) + 11).collect();
    let k = inject_anomaly(&s, &hours, AnomalyModel::Scale { factor: 0.2 }).unwrap();
    let changed = (0..s.len()).filter(|&t| k.series.values()[t] != s.values()[t]).count();
    assert_eq!(changed, 5);
    let night = inject_anomaly(&s, &[24 * 4 + 1], AnomalyModel::Zero).unwrap();
    assert_eq!(night.series, s);
    assert_eq!(night.skipped, vec![24 * 4 + 1]);
}

#[test]
fn scenario_shape_and_truth() {
    let mut cfg = small();
    cfg.anomaly.count = 2;
    cfg.anomaly.exemplars = vec![1];
    let sc = generate(&cfg).unwrap();
    assert_eq!(sc.native.len(), 4);
    assert_eq!(sc.exemplars.len(), 3);
    assert_eq!(sc.net.len(), 4);
    assert_eq!(sc.truth.customers[3].weights, vec![0.0; 3]);
    assert_eq!(sc.net[3].values(), sc.actual_native[3].values());
    for c in &sc.truth.customers[..3] {
        let (dom, rest) = c.weights.iter().fold((0.0f64, 0.0), |(m, s), w| (m.max(*w), s + w));
        assert!(dom > rest - dom, "{c:?}");
    }
    assert_eq!(sc.truth.anomalies.len(), 1);
    assert_eq!(sc.truth.anomalies[0].hours.len(), 2);
    let diff = (0..sc.exemplars[1].len())
        .filter(|&t| sc.exemplars[1].values()[t] != sc.clean_exemplars[1].values()[t])
        .count();
    assert_eq!(diff, 2);
    assert_eq!(sc.exemplars[0], sc.clean_exemplars[0]);
    let again = generate(&cfg).unwrap();
    assert_eq!(again.net, sc.net);
    assert_eq!(again.truth, sc.truth);
}

#[test]
fn scenario_files_round_trip() {
    let sc = generate(&small()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    sc.write(dir.path()).unwrap();
    let net = read_series_file(&dir.path().join(files::NET), Some(Role::Net), GapPolicy::Reject).unwrap();
    assert_eq!(net.len(), sc.net.len());
    for (a, b) in net.iter().zip(&sc.net) {
        assert_eq!(&a.series, b);
    }
    let gens = read_series_file(&dir.path().join(files::EXEMPLARS), Some(Role::Generation), GapPolicy::Reject).unwrap();
    assert_eq!(gens[2].series, sc.exemplars[2]);
    let truth: GroundTruth =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(files::GROUND_TRUTH)).unwrap()).unwrap();
    assert_eq!(truth, sc.truth);
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = ScenarioConfig::default();
    cfg.months = 1;
    assert!(cfg.validate().is_err());
    let mut cfg = ScenarioConfig::default();
    cfg.solar.orientation_mix = [0.5, 0.5, 0.5];
    assert!(cfg.validate().is_err());
    let mut cfg = ScenarioConfig::default();
    cfg.start = NaiveDate::from_ymd_opt(2021, 1, 2).unwrap();
    assert!(cfg.validate().is_err());
    let mut cfg = ScenarioConfig::default();
    cfg.anomaly.exemplars = vec![3];
    assert!(cfg.validate().is_err());
    assert!(ScenarioConfig::default().validate().is_ok());
}

#[test]
fn config_json_round_trip_and_defaults() {
    let cfg = ScenarioConfig::default();
    let text = serde_json::to_string(&cfg).unwrap();
    assert_eq!(serde_json::from_str::<ScenarioConfig>(&text).unwrap(), cfg);
    let partial: ScenarioConfig = serde_json::from_str(r#"{"seed": 5, "load": {"noise_level": 0.5}}"#).unwrap();
    assert_eq!(partial.seed, 5);
    assert_eq!(partial.load.noise_level, 0.5);
    assert_eq!(partial.load.annual_kwh, LoadConfig::default().annual_kwh);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn true_weights_reconstruct_native_demand(w in prop::collection::vec(0.0f64..2.0, 3)) {
        let cfg = small();
        let native = gen_native(&cfg, 3);
        let raw: Vec<HourlySeries> = (0..3).map(|i| gen_solar(&cfg, exemplar_orientation(i), 5.0)).collect();
        let (net, truth) = compose_net(&native, &w, &raw).unwrap();
        let ex = ExemplarSet::unlabeled(raw.iter().map(|s| negate_generation(s).unwrap()).collect()).unwrap();
        let model = GmmModel::new(vec![Component::from_covariance(1.0, [0.0, 0.0], [[1.0, 0.0], [0.0, 1.0]])]).unwrap();
        let term = MonthTerm { nocturnal: 0.0, net_diurnal: 0.0, exemplar_diurnal: vec![0.0; 3] };
        let p = DisaggProblem::from_terms(net, vec![term.clone(), term], &ex, &model, 1.0).unwrap();
        let (_, estimate) = reconstruct(&p, &truth).unwrap();
        for (a, b) in estimate.values().iter().zip(native.values()) {
            prop_assert!((a - b).abs() <= 8.0 * f64::EPSILON * a.abs().max(b.abs()).max(1.0));
        }
    }
}

#[test]
fn south_yield_is_seasonally_flatter() {
    let cfg = ScenarioConfig::default();
    let ratio = |o: Orientation| {
        let s = gen_solar(&cfg, o, 5.0);
        let v = s.values();
        let month = |m: usize| -> f64 { v[m * 30 * 24..(m + 1) * 30 * 24].iter().sum() };
        month(11) / month(5)
    };
    let (east, south, west) = (ratio(Orientation::East), ratio(Orientation::South), ratio(Orientation::West));
    assert!(south > east && south > west, "{east} {south} {west}");
}

#[test]
fn native_windows_match_the_derived_partition() {
    let sc = generate(&small()).unwrap();
    let gens: Vec<HourlySeries> = sc.clean_exemplars.iter().map(|s| negate_generation(s).unwrap()).collect();
    assert_eq!(derive_partition(&gens, 0.01).unwrap(), small().daylight_partition());
}
