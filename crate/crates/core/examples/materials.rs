//! Refractive indices of every material in the built-in library.
//!
//! cargo run --example materials -- 1030

use biphoton::presets::PresetStore;

fn main() -> biphoton::Result<()> {
    let lambda: f64 = std::env::args().nth(1).map_or(1030.0, |s| s.parse().expect("wavelength in nm"));
    let (lib, _) = PresetStore::from_env().materials()?;
    println!("{:<24} {:>10}  valid range (nm)", "material", format!("n({lambda})"));
    for m in lib.iter() {
        let (lo, hi) = m.valid_range_nm();
        match m.refractive_index(lambda) {
            Ok(n) => println!("{:<24} {n:>10.5}  {lo:.0}–{hi:.0}", m.name()),
            Err(_) => println!("{:<24} {:>10}  {lo:.0}–{hi:.0}", m.name(), "-"),
        }
    }
    Ok(())
}
