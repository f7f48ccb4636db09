//! Signal spectral density of a source preset with and without the cavity
//! factors, plus the band-edge fluorescence at the same thickness.
//!
//! cargo run --example spdc_spectrum -- ln300 > spectrum.csv

use biphoton::presets::{PresetStore, SourceOverrides};
use biphoton::spdc::{fluorescence_density, spdc_spectral_density, EnhancementSide};

fn main() -> biphoton::Result<()> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "ln300".into());
    let store = PresetStore::from_env();
    let (lib, _) = store.materials()?;
    let (src, _) = store.source(&name)?;
    let cfg = src.spdc_config(&lib, &SourceOverrides::default())?;
    let cavity = spdc_spectral_density(&cfg)?;
    let mut bare_cfg = cfg.clone();
    bare_cfg.enhancement = EnhancementSide::None;
    let bare = spdc_spectral_density(&bare_cfg)?;
    let thickness = cfg.stack.nonlinear_layer().thickness_nm;

    eprintln!("{name}: {thickness} nm film, pump {} nm", cfg.pump_wavelength_nm);
    eprintln!("integral with cavity {:.4e}, without {:.4e}", cavity.integral(), bare.integral());
    if let Some(fl) = &src.fluorescence {
        let f = fluorescence_density(fl, cfg.spectral_window_nm, cfg.grid_points, thickness, cfg.pump_power_mw)?;
        eprintln!("fluorescence in the window: {:.3e} photons/s", f.integral());
    }
    println!("wavelength_nm,with_cavity,without_cavity");
    for ((l, a), b) in cavity.wavelengths().iter().zip(cavity.density()).zip(bare.density()) {
        println!("{l:.3},{a:.6e},{b:.6e}");
    }
    Ok(())
}
