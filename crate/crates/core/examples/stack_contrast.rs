//! Fabry-Perot response of a source preset's layer stack: reflectance,
//! transmittance and the field enhancement inside the nonlinear film.
//!
//! cargo run --example stack_contrast -- gap400

use biphoton::dispersion::conjugate_wavelength;
use biphoton::multilayer::{internal_intensity_factor, stack_response};
use biphoton::presets::PresetStore;

fn main() -> biphoton::Result<()> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "gap400".into());
    let store = PresetStore::from_env();
    let (lib, _) = store.materials()?;
    let (src, _) = store.source(&name)?;
    let stack = src.stack.build(&lib)?;
    let pump = src.source.pump_wavelength_nm;
    let nl = stack.nonlinear_layer_index();

    println!("wavelength_nm  R       T       F");
    let mut pair = Vec::new();
    for i in 0..=60 {
        let l = 900.0 + 10.0 * i as f64;
        let r = stack_response(&stack, l)?;
        let f = internal_intensity_factor(&stack, nl, l)?;
        println!("{l:>13.0}  {:.4}  {:.4}  {f:.4}", r.reflectance, r.transmittance);
        pair.push(f * internal_intensity_factor(&stack, nl, conjugate_wavelength(pump, l)?)?);
    }
    let max = pair.iter().cloned().fold(f64::MIN, f64::max);
    let min = pair.iter().cloned().fold(f64::MAX, f64::min);
    println!("pair enhancement F(λs)F(λi) max/min over 900–1500 nm: {:.2}", max / min);
    println!("pump enhancement F({pump} nm) = {:.3}", internal_intensity_factor(&stack, nl, pump)?);
    Ok(())
}
