mod common;

use biphoton::fiber::{fit_calibration, CalibrationCurve, CalibrationPoint, FiberModel, FitMode};
use biphoton::presets::PresetStore;
use proptest::prelude::*;

fn curve_strategy() -> impl Strategy<Value = CalibrationCurve> {
    (10.0f64..2000.0, 1300.0f64..1700.0, 0.02f64..0.12, -5e4f64..5e4, 0.45f64..0.85, 0.1f64..0.95).prop_map(
        |(length, zdw, slope, offset, lo_frac, span_frac)| {
            let lo = zdw * lo_frac;
            let hi = lo + (zdw * 0.97 - lo) * span_frac;
            CalibrationCurve::new(FiberModel::new(length, zdw, slope).unwrap(), offset, (lo, hi)).unwrap()
        },
    )
}

proptest! {
    #[test]
    fn wavelength_round_trip(curve in curve_strategy(), u in 0.0f64..=1.0) {
        let (lo, hi) = curve.valid_window_nm;
        let l = lo + u * (hi - lo);
        let back = curve.wavelength_at(curve.arrival_time_difference(l).unwrap()).unwrap();
        prop_assert!((back - l).abs() < 1e-6, "{} -> {}", l, back);
    }

    #[test]
    fn delay_is_strictly_monotone(curve in curve_strategy()) {
        let (lo, hi) = curve.valid_window_nm;
        let dt: Vec<f64> = (0..1000)
            .map(|i| curve.arrival_time_difference(lo + (hi - lo) * i as f64 / 999.0).unwrap())
            .collect();
        prop_assert!(dt.windows(2).all(|w| w[1] < w[0]) || dt.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn jacobian_matches_central_difference(curve in curve_strategy(), u in 0.05f64..0.95) {
        let (lo, hi) = curve.valid_window_nm;
        let l = lo + u * (hi - lo);
        let h = 1e-3;
        let fd = (curve.delay_unchecked(l + h) - curve.delay_unchecked(l - h)) / (2.0 * h);
        let j = curve.jacobian_ps_per_nm(l);
        prop_assert!((j - fd).abs() <= 1e-6 * j.abs(), "{} vs {}", j, fd);
    }

    #[test]
    fn noiseless_points_are_fitted_exactly(curve in curve_strategy(), scale in 0.9f64..1.1) {
        let (lo, hi) = curve.valid_window_nm;
        let mut truth = curve.model.clone();
        truth.length_m *= scale;
        let points: Vec<CalibrationPoint> = (0..5)
            .map(|i| {
                let l = lo + (hi - lo) * i as f64 / 4.0;
                CalibrationPoint { cuton_nm: l, edge_dt_ps: 1234.5 + truth.relative_group_delay_ps(l) }
            })
            .collect();
        let fit = fit_calibration(&points, &curve.model, FitMode::OffsetAndLength, None).unwrap();
        prop_assert!((fit.length_scale - scale).abs() < 1e-9);
        prop_assert!((fit.curve.time_offset_ps - 1234.5).abs() < 1e-6 * (1.0 + truth.relative_group_delay_ps(lo)));
    }
}

#[test]
fn exact_offset_from_preset_model() {
    let curve = PresetStore::builtin().fiber("dcf150").unwrap();
    let points: Vec<CalibrationPoint> = [820.0, 950.0, 1080.0, 1210.0, 1340.0]
        .iter()
        .map(|&l| CalibrationPoint { cuton_nm: l, edge_dt_ps: 1234.5 + curve.model.relative_group_delay_ps(l) })
        .collect();
    let fit = fit_calibration(&points, &curve.model, FitMode::OffsetOnly, None).unwrap();
    assert!((fit.curve.time_offset_ps - 1234.5).abs() < 1e-6);
}

#[test]
fn noisy_fits_follow_least_squares_statistics() {
    let curve = PresetStore::builtin().fiber("dcf150").unwrap();
    let cutons = [820.0, 950.0, 1080.0, 1210.0, 1340.0];
    let sigma = 20.0;
    let e = common::fit_ensemble(&curve, &cutons, sigma, 1.0, FitMode::OffsetOnly, 1000, 17);
    let se = sigma / 5f64.sqrt();
    assert!(e.mean_offset_error_ps.abs() < 4.0 * se / 1000f64.sqrt(), "{e:?}");
    assert!((e.sd_offset_ps / se - 1.0).abs() < 0.1, "{e:?}");
    // 0.27% expected beyond 3σ/√n
    assert!(e.outside_3_sigma < 0.01, "{e:?}");

    let e = common::fit_ensemble(&curve, &cutons, sigma, 1.02, FitMode::OffsetAndLength, 1000, 18);
    assert!((e.mean_length_scale - 1.02).abs() < 0.001, "{e:?}");
    assert!((e.sd_length_scale / e.predicted_sd_length_scale - 1.0).abs() < 0.1, "{e:?}");
}

#[test]
fn simulated_cuton_edges_recover_the_curve() {
    use biphoton::coincidence::histogram;
    use biphoton::fiber::calibration_edge;
    use biphoton::spectrum::SampledSpectrum;
    use biphoton::tagsim::{simulate, FiberArm, Filter, RunConfig};

    let store = PresetStore::builtin();
    let truth = store.fiber("dcf150").unwrap();
    let dets = [store.detector("snspd_vis").unwrap(), store.detector("snspd_ir").unwrap()];
    let grid = SampledSpectrum::uniform_grid(800.0, 1400.0, 512);
    let flat = vec![1.0; grid.len()];
    let source = SampledSpectrum::new(grid, flat).unwrap();
    let mut points = Vec::new();
    for (i, cuton) in [850.0, 950.0, 1050.0, 1150.0, 1250.0].into_iter().enumerate() {
        let mut cfg = RunConfig::new(5.0, 515.0, 300 + i as u64);
        cfg.pair_rate_anchor = 2e4;
        cfg.spdc_spectrum = Some(source.clone());
        cfg.fiber_arm = Some(FiberArm { calibration: truth.clone(), channel: 1 });
        cfg.channel_filters[1].push(Filter::Longpass { cuton_nm: cuton });
        let h = histogram(&simulate(&cfg, &dets).unwrap(), 50, 20_000).unwrap();
        let edge = calibration_edge(&h, 200.0).unwrap();
        // jitter is ≈ 94 ps; the half-maximum of the blurred step sits on the edge
        let model = truth.arrival_time_difference(cuton).unwrap();
        assert!((edge - model).abs() < 50.0, "{cuton} nm: {edge} vs {model}");
        points.push(CalibrationPoint { cuton_nm: cuton, edge_dt_ps: edge });
    }
    let fit = fit_calibration(&points, &truth.model, FitMode::OffsetOnly, Some(truth.valid_window_nm)).unwrap();
    assert!((fit.curve.time_offset_ps - truth.time_offset_ps).abs() < 25.0, "{}", fit.curve.time_offset_ps);
}
