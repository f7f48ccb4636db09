mod common;

use biphoton::coincidence::{car_and_rate, histogram, CoincidenceHistogram};
use biphoton::spectrum::SampledSpectrum;
use biphoton::tagsim::{simulate, DetectorModel, RunConfig, TimeTagStream, Truth};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sweep_matches_brute_force(seed in any::<u64>(), n in 0usize..1500, b in 1u64..400, w in 1u64..40) {
        let s = common::random_stream(seed, n, 2_000_000, b);
        let h = histogram(&s, b, w * b + b / 3).unwrap();
        prop_assert_eq!(h.counts(), &common::brute_force_histogram(&s, b, w * b + b / 3)[..]);
    }

    #[test]
    fn translation_invariance(seed in any::<u64>(), n in 1usize..1500, shift in 0u64..1_000_000_000_000) {
        let s = common::random_stream(seed, n, 5_000_000, 50);
        let a = histogram(&s, 50, 20_000).unwrap();
        let b = histogram(&s.shifted(shift), 50, 20_000).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn channel_swap_mirrors_counts(seed in any::<u64>(), n in 1usize..1500, half in 0u64..200) {
        // odd widths keep every integer Δt off the bin edges
        let b = 2 * half + 1;
        let s = common::random_stream(seed, n, 5_000_000, b);
        let a = histogram(&s, b, 40 * b).unwrap();
        let mut swapped = s.channels_swapped();
        swapped.sort();
        let m = histogram(&swapped, b, 40 * b).unwrap();
        let reversed: Vec<u64> = a.counts().iter().rev().copied().collect();
        prop_assert_eq!(m.counts(), &reversed[..]);
        prop_assert_eq!(&a.mirrored(), &m);
    }
}

#[test]
fn sharded_sweep_matches_serial_definition() {
    // well over one shard of channel-0 events
    let s = common::random_stream(99, 400_000, 40_000_000_000, 50);
    let counts = s.channel_counts();
    assert!(counts[0] > 150_000, "{counts:?}");
    let h = histogram(&s, 50, 10_000).unwrap();
    assert_eq!(h.counts(), &common::windowed_histogram(&s, 50, 10_000)[..]);
}

#[test]
fn windowed_oracle_agrees_with_brute_force() {
    for seed in 0..5 {
        let s = common::random_stream(seed, 3000, 3_000_000, 50);
        assert_eq!(common::windowed_histogram(&s, 50, 5_000), common::brute_force_histogram(&s, 50, 5_000));
    }
}

#[test]
fn flat_histogram_gives_zero_rate() {
    let h = CoincidenceHistogram::from_parts(50, vec![40; 401], 10.0, [1000, 1000]).unwrap();
    let r = car_and_rate(&h, 500.0).unwrap();
    assert!(r.pair_rate_hz.abs() <= r.pair_rate_sigma_hz);
    assert!((r.car.value() - 1.0).abs() < 1e-12);
}

fn pair_run(seed: u64) -> (TimeTagStream, [DetectorModel; 2]) {
    let grid = SampledSpectrum::uniform_grid(900.0, 1200.0, 301);
    let n = grid.len();
    let mut cfg = RunConfig::new(60.0, 515.0, seed);
    cfg.pair_rate_anchor = 200.0;
    cfg.spdc_spectrum = Some(SampledSpectrum::new(grid, vec![1.0; n]).unwrap());
    cfg.record_truth = true;
    let mut dets = [DetectorModel::ideal("a"), DetectorModel::ideal("b")];
    dets[0].jitter_sigma_ps = 50.0;
    dets[1].jitter_sigma_ps = 80.0;
    for d in &mut dets {
        d.dark_rate_per_s = 20_000.0;
        d.efficiency_curve = vec![(800.0, 0.6), (1300.0, 0.6)];
    }
    (simulate(&cfg, &dets).unwrap(), dets)
}

#[test]
fn pair_rate_estimator_is_unbiased() {
    let mut z_sum = 0.0;
    let seeds = 50;
    for seed in 0..seeds {
        let (s, _) = pair_run(1000 + seed);
        let h = histogram(&s, 50, 50_000).unwrap();
        let r = car_and_rate(&h, 500.0).unwrap();
        // truth: detected pairs split across the two channels
        let truth = s
            .pair_records
            .iter()
            .filter(|p| p.detected[0] && p.detected[1] && p.channels[0] != p.channels[1])
            .count() as f64
            / s.duration_s;
        let z = (r.pair_rate_hz - truth) / r.pair_rate_sigma_hz;
        assert!(z.abs() < 3.0, "seed {seed}: estimate {} ± {} vs truth {truth}", r.pair_rate_hz, r.pair_rate_sigma_hz);
        z_sum += z;
        assert!(s.events.iter().any(|e| e.truth == Truth::Dark));
    }
    // the mean pull of an unbiased estimator is within a few σ/√n of zero
    let mean_z = z_sum / seeds as f64;
    assert!(mean_z.abs() < 3.0 / (seeds as f64).sqrt(), "{mean_z}");
}
