use btm_core::gmm::{fit_em, fit_select, points, EmOptions};
use btm_core::series::{aggregate_monthly, derive_partition, negate_generation, HourlySeries};
use btm_core::synth::{exemplar_orientation, gen_native, gen_solar, ScenarioConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Draw from N(mean, [[sn², ρ sn sd], [ρ sn sd, sd²]]) by Cholesky.
fn gaussian(rng: &mut ChaCha8Rng, mean: [f64; 2], sn: f64, sd: f64, rho: f64) -> [f64; 2] {
    let z1: f64 = rng.sample(StandardNormal);
    let z2: f64 = rng.sample(StandardNormal);
    [mean[0] + sn * z1, mean[1] + sd * (rho * z1 + (1.0 - rho * rho).sqrt() * z2)]
}

fn selection_rate(draw: impl Fn(&mut ChaCha8Rng) -> [f64; 2], expected: usize) -> usize {
    (0..50u64)
        .filter(|&seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let pts: Vec<[f64; 2]> = (0..600).map(|_| draw(&mut rng)).collect();
            let (model, _) = fit_select(&pts, &[1, 2, 3], 3, &EmOptions { seed, ..EmOptions::default() }).unwrap();
            model.len() == expected
        })
        .count()
}

#[test]
fn single_gaussian_selects_one_component() {
    let hits = selection_rate(|rng| gaussian(rng, [300.0, 360.0], 80.0, 95.0, 0.9), 1);
    assert!(hits >= 45, "{hits}/50");
}

#[test]
fn bimodal_mixture_selects_two_components() {
    let hits = selection_rate(
        |rng| {
            if rng.random::<f64>() < 0.4 {
                gaussian(rng, [0.0, 0.0], 1.0, 1.0, 0.3)
            } else {
                gaussian(rng, [8.0, 6.0], 1.2, 0.8, -0.2)
            }
        },
        2,
    );
    assert!(hits >= 45, "{hits}/50");
}

#[test]
fn fitted_demand_model_generalizes_to_held_out_customers() {
    let cfg = ScenarioConfig::default();
    let gens: Vec<HourlySeries> =
        (0..3).map(|i| negate_generation(&gen_solar(&cfg, exemplar_orientation(i), 5.0)).unwrap()).collect();
    let partition = derive_partition(&gens, 0.01).unwrap();
    let pairs_of = |range: std::ops::Range<u64>| -> Vec<[f64; 2]> {
        let pairs: Vec<_> = range
            .flat_map(|k| aggregate_monthly(&gen_native(&cfg, k), &partition).unwrap().pairs)
            .collect();
        points(&pairs)
    };
    let train = pairs_of(0..150);
    let held_out = pairs_of(10_000..10_050);
    let (model, _) = fit_select(&train, &(1..=8).collect::<Vec<_>>(), 3, &EmOptions::default()).unwrap();
    let a = model.mean_log_density(&train).unwrap();
    let b = model.mean_log_density(&held_out).unwrap();
    assert!((a - b).abs() <= 0.1 * a.abs(), "train {a} held-out {b}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn em_likelihood_never_decreases(seed in 0u64..10_000, s in 1usize..5, skew in 0.0f64..0.95) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<[f64; 2]> = (0..400)
            .map(|i| if i % 3 == 0 { gaussian(&mut rng, [5.0, 5.0], 2.0, 1.0, skew) } else { gaussian(&mut rng, [0.0, 0.0], 1.0, 3.0, -skew) })
            .collect();
        let (_, report) = fit_em(&pts, s, &EmOptions { seed, ..EmOptions::default() }).unwrap();
        for w in report.log_likelihood_trace.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-12 * w[0].abs(), "{} -> {}", w[0], w[1]);
        }
    }
}
