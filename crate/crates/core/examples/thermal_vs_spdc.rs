//! g² discriminator: a thermal source bunches to CAR ≈ 2, photon pairs
//! give a CAR far above 2.
//!
//! cargo run --release --example thermal_vs_spdc

use biphoton::coincidence::{car_and_rate, histogram};
use biphoton::presets::PresetStore;
use biphoton::spectrum::SampledSpectrum;
use biphoton::tagsim::{simulate, simulate_thermal, RunConfig, ThermalConfig};

fn main() -> biphoton::Result<()> {
    let thermal = simulate_thermal(&ThermalConfig::new(100.0, 1e5, 10_000.0, 1))?;
    let h = histogram(&thermal, 1000, 1_000_000)?;
    let t = car_and_rate(&h, 0.0)?;
    println!("thermal, τc = 10 ns: CAR {:.2}", t.car.value());

    let store = PresetStore::from_env();
    let dets = [store.detector("snspd_vis")?, store.detector("snspd_ir")?];
    let grid = SampledSpectrum::uniform_grid(900.0, 1150.0, 256);
    let flat = vec![1.0; grid.len()];
    let mut cfg = RunConfig::new(10.0, 515.0, 2);
    cfg.pair_rate_anchor = 2e3;
    cfg.spdc_spectrum = Some(SampledSpectrum::new(grid, flat)?);
    let s = simulate(&cfg, &dets)?;
    let h = histogram(&s, 50, 50_000)?;
    let p = car_and_rate(&h, 500.0)?;
    println!(
        "pairs: CAR {:.0}, pair rate {:.1} ± {:.1} Hz",
        p.car.value(),
        p.pair_rate_hz,
        p.pair_rate_sigma_hz
    );
    Ok(())
}
