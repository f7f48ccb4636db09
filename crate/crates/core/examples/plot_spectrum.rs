//! SVG figure of a preset's SPDC spectrum with and without the cavity.
//!
//! cargo run --example plot_spectrum -- gap400 > spectrum.svg

use biphoton::plot::{Plot, Series, SeriesStyle};
use biphoton::presets::{PresetStore, SourceOverrides};
use biphoton::spdc::{spdc_spectral_density, EnhancementSide};

fn main() -> biphoton::Result<()> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "gap400".into());
    let store = PresetStore::from_env();
    let (lib, _) = store.materials()?;
    let (src, _) = store.source(&name)?;
    let cfg = src.spdc_config(&lib, &SourceOverrides::default())?;
    let with = spdc_spectral_density(&cfg)?.normalized()?;
    let mut bare = cfg.clone();
    bare.enhancement = EnhancementSide::None;
    let without = spdc_spectral_density(&bare)?.normalized()?;

    let svg = Plot::new(format!("{name} signal spectrum"), "wavelength (nm)", "density (normalized)")
        .with(Series::new("with cavity", with.wavelengths().to_vec(), with.density().to_vec(), SeriesStyle::Line))
        .with(Series::new("bare film", without.wavelengths().to_vec(), without.density().to_vec(), SeriesStyle::Line))
        .to_svg()?;
    print!("{svg}");
    Ok(())
}
