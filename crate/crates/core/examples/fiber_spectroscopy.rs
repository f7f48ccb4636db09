//! Full fibre-spectroscopy loop for a source preset:
//! SPDC spectrum → time tags → coincidence histogram → reconstructed spectrum.
//!
//! cargo run --release --example fiber_spectroscopy -- gap400 1e7

use std::time::Instant;

use biphoton::experiment::FiberExperiment;
use biphoton::presets::{PresetStore, SourceOverrides};
use biphoton::reconstruct::spectral_width;

fn main() -> biphoton::Result<()> {
    let mut args = std::env::args().skip(1);
    let preset = args.next().unwrap_or_else(|| "ln300".into());
    let pairs: f64 = args.next().map_or(1e6, |s| s.parse().expect("coincidence count"));

    let started = Instant::now();
    let store = PresetStore::from_env();
    let exp = FiberExperiment::from_preset(&store, &preset, &SourceOverrides::default(), 42, pairs)?;
    println!(
        "{preset}: {:.0} s of acquisition, {:.1} coincidences/s expected",
        exp.run.duration_s, exp.expected.true_coincidences_per_s
    );
    let h = exp.measure(|_| Ok(()))?;
    println!("histogram: {} coincidences in {} bins", h.total(), h.len());
    let rec = exp.reconstruct(&h)?;
    println!(
        "reconstruction: {} points, {} bins dropped",
        rec.spectrum.len(),
        rec.metadata.dropped_bins
    );
    for r in &rec.metadata.resolution {
        println!(
            "  at {:.0} nm: bin step {:.2} nm, jitter blur {:.2} nm",
            r.wavelength_nm,
            r.bin_step_nm,
            r.jitter_blur_nm.unwrap_or(0.0)
        );
    }
    println!("normalized L1 distance: {:.4}", exp.l1_distance(&rec)?);
    println!("width at 10% of max: {:.0} nm", spectral_width(&rec.spectrum, 0.1)?);
    println!("elapsed {:.1} s", started.elapsed().as_secs_f64());
    Ok(())
}
