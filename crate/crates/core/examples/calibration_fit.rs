//! Fibre calibration from longpass cut-on edges: simulated histograms with
//! a longpass in the fibre arm, their edges, and the offset + length fit.
//!
//! cargo run --release --example calibration_fit

use biphoton::coincidence::histogram;
use biphoton::fiber::{calibration_edge, fit_calibration, CalibrationPoint, FitMode};
use biphoton::presets::PresetStore;
use biphoton::spectrum::SampledSpectrum;
use biphoton::tagsim::{simulate, FiberArm, Filter, RunConfig};

fn main() -> biphoton::Result<()> {
    let store = PresetStore::from_env();
    let truth = store.fiber("dcf150")?;
    let dets = [store.detector("snspd_vis")?, store.detector("snspd_ir")?];

    let grid = SampledSpectrum::uniform_grid(800.0, 1400.0, 512);
    let flat = vec![1.0; grid.len()];
    let source = SampledSpectrum::new(grid, flat)?;

    let mut points = Vec::new();
    for (i, cuton) in [850.0, 950.0, 1050.0, 1150.0, 1250.0].into_iter().enumerate() {
        let mut cfg = RunConfig::new(5.0, 515.0, 100 + i as u64);
        cfg.pair_rate_anchor = 2e4;
        cfg.spdc_spectrum = Some(source.clone());
        cfg.fiber_arm = Some(FiberArm { calibration: truth.clone(), channel: 1 });
        cfg.channel_filters[1].push(Filter::Longpass { cuton_nm: cuton });
        let h = histogram(&simulate(&cfg, &dets)?, 50, 20_000)?;
        let edge = calibration_edge(&h, 200.0)?;
        println!("cut-on {cuton:.0} nm: edge at {edge:.0} ps (model {:.0} ps)", truth.arrival_time_difference(cuton)?);
        points.push(CalibrationPoint { cuton_nm: cuton, edge_dt_ps: edge });
    }
    let fit = fit_calibration(&points, &truth.model, FitMode::OffsetAndLength, Some(truth.valid_window_nm))?;
    println!(
        "fit: offset {:.1} ps (true {:.1}), length scale {:.4}, residual rms {:.1} ps",
        fit.curve.time_offset_ps, truth.time_offset_ps, fit.length_scale, fit.residual_rms_ps
    );
    Ok(())
}
