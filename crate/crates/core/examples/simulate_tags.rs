//! Time-tag Monte Carlo: pairs, fluorescence and dark counts on two
//! detectors behind a beam splitter, written as CSV.
//!
//! cargo run --release --example simulate_tags -- 2.0 > tags.csv

use biphoton::spectrum::SampledSpectrum;
use biphoton::tagsim::{simulate, write_csv, Fluorescence, RunConfig, Truth};
use biphoton::presets::PresetStore;

fn main() -> biphoton::Result<()> {
    let duration: f64 = std::env::args().nth(1).map_or(1.0, |s| s.parse().expect("duration in s"));
    let store = PresetStore::from_env();
    let dets = [store.detector("snspd_vis")?, store.detector("snspd_ir")?];

    let grid = SampledSpectrum::uniform_grid(900.0, 1150.0, 256);
    let flat = vec![1.0; grid.len()];
    let mut cfg = RunConfig::new(duration, 515.0, 7);
    cfg.pair_rate_anchor = 5e3;
    cfg.spdc_spectrum = Some(SampledSpectrum::new(grid, flat)?);
    let fgrid = SampledSpectrum::uniform_grid(650.0, 850.0, 64);
    let fl = vec![1.0; fgrid.len()];
    cfg.fluorescence = Some(Fluorescence {
        spectrum: SampledSpectrum::new(fgrid, fl)?,
        rate_per_s: 2e4,
    });

    let expected = cfg.expected_rates(&dets)?;
    let s = simulate(&cfg, &dets)?;
    let counts = s.channel_counts();
    eprintln!(
        "singles {:?} (expected {:.0?}), {} from pairs",
        counts,
        expected.singles_per_s.map(|r| r * duration),
        s.events.iter().filter(|e| e.truth == Truth::Pair).count()
    );
    print!("{}", write_csv(&s));
    Ok(())
}
