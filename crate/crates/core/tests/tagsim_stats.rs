mod common;

use std::collections::HashMap;

use biphoton::coincidence::histogram;
use biphoton::presets::PresetStore;
use biphoton::spectrum::SampledSpectrum;
use biphoton::tagsim::{
    simulate, simulate_thermal, DetectorModel, FiberArm, Fluorescence, RunConfig, ThermalConfig, Truth, CLOCK_ORIGIN_PS,
};

fn flat_spectrum(lo: f64, hi: f64) -> SampledSpectrum {
    let grid = SampledSpectrum::uniform_grid(lo, hi, 301);
    let n = grid.len();
    SampledSpectrum::new(grid, vec![1.0; n]).unwrap()
}

fn ideal_pair() -> [DetectorModel; 2] {
    [DetectorModel::ideal("a"), DetectorModel::ideal("b")]
}

/// Upper 95% point of χ² with `k` degrees of freedom (Wilson–Hilferty).
fn chi2_95(k: f64) -> f64 {
    let z = 1.644_853_626_951_472;
    k * (1.0 - 2.0 / (9.0 * k) + z * (2.0 / (9.0 * k)).sqrt()).powi(3)
}

#[test]
fn dark_counts_follow_poisson_statistics() {
    let mut dets = ideal_pair();
    for d in &mut dets {
        d.dark_rate_per_s = 1000.0;
    }
    let cfg = RunConfig::new(100.0, 515.0, 4);
    let s = simulate(&cfg, &dets).unwrap();
    for c in s.channel_counts() {
        let expected = 1e5f64;
        assert!((c as f64 - expected).abs() < 5.0 * expected.sqrt(), "{c}");
    }
    assert!(s.events.iter().all(|e| e.truth == Truth::Dark));
}

#[test]
fn ideal_pairs_split_evenly_and_coincide_exactly() {
    let mut cfg = RunConfig::new(10.0, 515.0, 8);
    cfg.pair_rate_anchor = 2000.0;
    cfg.spdc_spectrum = Some(flat_spectrum(900.0, 1200.0));
    cfg.record_truth = true;
    let s = simulate(&cfg, &ideal_pair()).unwrap();

    let mut by_pair: HashMap<u64, Vec<(u8, u64)>> = HashMap::new();
    for e in &s.events {
        assert_eq!(e.truth, Truth::Pair);
        by_pair.entry(e.pair_id).or_default().push((e.channel, e.timestamp_ps));
    }
    let n = s.pair_records.len() as f64;
    let mut cross = 0u64;
    for tags in by_pair.values() {
        assert_eq!(tags.len(), 2, "efficiency 1 detects both photons");
        if tags[0].0 != tags[1].0 {
            cross += 1;
            assert_eq!(tags[0].1, tags[1].1);
        }
    }
    let p = 0.5;
    let sigma = (n * p * (1.0 - p)).sqrt();
    assert!((cross as f64 - n * p).abs() < 5.0 * sigma, "{cross} of {n}");
}

#[test]
fn pair_only_histogram_has_no_background() {
    let mut dets = ideal_pair();
    dets[0].jitter_sigma_ps = 50.0;
    dets[1].jitter_sigma_ps = 80.0;
    let mut cfg = RunConfig::new(20.0, 515.0, 21);
    cfg.pair_rate_anchor = 50.0;
    cfg.spdc_spectrum = Some(flat_spectrum(900.0, 1200.0));
    cfg.fluorescence = Some(Fluorescence { spectrum: flat_spectrum(600.0, 900.0), rate_per_s: 20_000.0 });
    for d in &mut dets {
        d.dark_rate_per_s = 5000.0;
    }
    let s = simulate(&cfg, &dets).unwrap();

    let pairs = histogram(&s.filter_truth(&[Truth::Pair]), 50, 50_000).unwrap();
    let sigma = 50f64.hypot(80.0);
    let mut inside = 0;
    for (k, &c) in pairs.counts().iter().enumerate() {
        if pairs.bin_center_ps(k).abs() > 6.0 * sigma {
            assert_eq!(c, 0, "background at {} ps", pairs.bin_center_ps(k));
        } else {
            inside += c;
        }
    }
    assert!(inside > 100);

    // the uncorrelated part is flat
    let noise = s.filter_truth(&[Truth::Fluor, Truth::Dark]);
    let h = histogram(&noise, 10_000, 1_000_000).unwrap();
    let counts = h.counts();
    assert!(counts.len() >= 100);
    let mean = counts.iter().sum::<u64>() as f64 / counts.len() as f64;
    assert!(mean > 20.0, "{mean}");
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - mean).powi(2) / mean).sum();
    assert!(chi2 < chi2_95(counts.len() as f64 - 1.0), "χ² = {chi2}");
}

#[test]
fn fiber_delay_is_exact_per_pair() {
    let curve = PresetStore::builtin().fiber("dcf150").unwrap();
    let mut dets = ideal_pair();
    dets[0].jitter_sigma_ps = 50.0;
    dets[1].jitter_sigma_ps = 80.0;
    let mut cfg = RunConfig::new(2.0, 515.0, 33);
    cfg.pair_rate_anchor = 5000.0;
    cfg.spdc_spectrum = Some(flat_spectrum(850.0, 1350.0));
    cfg.fiber_arm = Some(FiberArm { calibration: curve.clone(), channel: 1 });
    cfg.record_truth = true;
    let s = simulate(&cfg, &dets).unwrap();

    let mut tags: HashMap<(u64, u8), u64> = HashMap::new();
    for e in s.events.iter().filter(|e| e.truth == Truth::Pair) {
        tags.insert((e.pair_id, e.channel), e.timestamp_ps);
    }
    let mut checked = 0;
    for r in &s.pair_records {
        if !(r.detected[0] && r.detected[1]) || r.channels[0] == r.channels[1] {
            continue;
        }
        let fiber = usize::from(r.channels[0] != 1);
        let direct = 1 - fiber;
        let lambda = r.wavelengths_nm[fiber];
        if !curve.contains(lambda) {
            continue;
        }
        let t_fiber = tags[&(r.pair_id, 1)];
        let t_direct = tags[&(r.pair_id, 0)];
        let expected_fiber = (CLOCK_ORIGIN_PS + r.emission_ps + curve.arrival_time_difference(lambda).unwrap()
            + r.jitter_ps[fiber])
            .round() as u64;
        let expected_direct = (CLOCK_ORIGIN_PS + r.emission_ps + r.jitter_ps[direct]).round() as u64;
        assert_eq!(t_fiber, expected_fiber, "{r:?}");
        assert_eq!(t_direct, expected_direct);
        let dt = t_fiber as f64 - t_direct as f64;
        let model = curve.arrival_time_difference(lambda).unwrap() + r.jitter_ps[fiber] - r.jitter_ps[direct];
        assert!((dt - model).abs() <= 1.0);
        checked += 1;
    }
    assert!(checked > 1000, "{checked}");
}

#[test]
fn expected_rates_match_simulation() {
    let store = PresetStore::builtin();
    let dets = [store.detector("snspd_vis").unwrap(), store.detector("snspd_ir").unwrap()];
    let mut cfg = RunConfig::new(20.0, 515.0, 5);
    cfg.pair_rate_anchor = 3000.0;
    cfg.spdc_spectrum = Some(flat_spectrum(850.0, 1350.0));
    let rates = cfg.expected_rates(&dets).unwrap();
    let s = simulate(&cfg, &dets).unwrap();
    for (c, expected) in s.channel_counts().iter().zip(rates.singles_per_s) {
        let e = expected * cfg.duration_s;
        assert!((*c as f64 - e).abs() < 5.0 * e.sqrt(), "{c} vs {e}");
    }
}

#[test]
fn thermal_rate_and_bunching() {
    let cfg = ThermalConfig::new(20.0, 1e4, 10_000.0, 3);
    let s = simulate_thermal(&cfg).unwrap();
    let n = s.len() as f64;
    // the intensity is correlated, so the count variance exceeds Poisson by
    // about 1 + 2·rate·τc
    let sigma = (2e5f64 * (1.0 + 2.0 * 1e4 * 1e-8)).sqrt();
    assert!((n - 2e5).abs() < 5.0 * sigma, "{n}");
    assert!(s.events.iter().all(|e| e.truth == Truth::Thermal));
}
