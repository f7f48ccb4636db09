//! Relative biphoton spectral density of a thin nonlinear film and the
//! incoherent fluorescence background.
//!
//! The pair density per unit signal wavelength is
//!
//! ```text
//! S(λs) = P · d_eff² · L² · sinc²(Δk·L/2) · ρ(λs, λi) · Fs(λs) · Fs(λi) · Fp(λp) · λs⁻²
//! ```
//!
//! with λi the energy-conjugate idler, Δk the collinear mismatch inside the
//! film, `F` the intra-film intensity factors from [`crate::multilayer`], and
//! `ρ = (λs³·λi³)⁻¹` the vacuum mode-density factor per unit frequency. The
//! trailing `λs⁻²` converts the per-frequency density to per-wavelength, so
//! `S(λs)·dλs = S(λi)·dλi` and the same function doubles as the single-photon
//! marginal spectrum. Absolute brightness is out of scope: `P`, `d_eff` and
//! `L` only set relative scale. `L` enters in µm.
//!
//! Fluorescence is incoherent, so its rate is linear in both thickness and
//! pump power, while the pair rate grows as `L²` for thin films. Below some
//! thickness the background therefore wins.

use serde::{Deserialize, Serialize};

use crate::dispersion::{conjugate_wavelength, phase_mismatch};
use crate::error::{Error, Result};
use crate::multilayer::{internal_intensity_factor_from, Incidence, LayerStack};
use crate::spectrum::SampledSpectrum;

/// Which Fabry-Perot factors multiply the spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnhancementSide {
    /// `F(λs)·F(λi)` only.
    Detection,
    /// `F(λp)` only.
    Pump,
    /// Both of the above.
    #[default]
    Both,
    /// No cavity factors at all.
    None,
}

impl EnhancementSide {
    fn detection(self) -> bool {
        matches!(self, Self::Detection | Self::Both)
    }

    fn pump(self) -> bool {
        matches!(self, Self::Pump | Self::Both)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpdcConfig {
    pub stack: LayerStack,
    pub pump_wavelength_nm: f64,
    pub pump_power_mw: f64,
    pub d_eff_pm_per_v: f64,
    pub spectral_window_nm: (f64, f64),
    pub grid_points: usize,
    pub enhancement: EnhancementSide,
    /// Side from which the detection-mode (and pump) buildup is probed.
    pub incidence: Incidence,
}

/// Effective window after clipping, plus any warnings raised doing it.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPlan {
    pub window_nm: (f64, f64),
    pub warnings: Vec<String>,
}

impl SpdcConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.spectral_window_nm;
        if !(self.pump_wavelength_nm.is_finite() && self.pump_wavelength_nm > 0.0) {
            return Err(Error::config("pump_wavelength_nm", "must be positive"));
        }
        if !(self.pump_power_mw.is_finite() && self.pump_power_mw > 0.0) {
            return Err(Error::config("pump_power_mw", "must be > 0"));
        }
        if !self.d_eff_pm_per_v.is_finite() {
            return Err(Error::config("d_eff_pm_per_v", "must be finite"));
        }
        if self.grid_points < 2 {
            return Err(Error::config("grid_points", "need at least 2 points"));
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::config("spectral_window_nm", format!("need min < max, got [{lo}, {hi}]")));
        }
        if lo <= self.pump_wavelength_nm {
            return Err(Error::config(
                "spectral_window_nm",
                format!("window start {lo} nm must exceed the pump wavelength {} nm", self.pump_wavelength_nm),
            ));
        }
        Ok(())
    }

    /// Checks the window against material ranges and clips it where only the
    /// conjugate (idler) leg leaves them.
    pub fn plan_window(&self) -> Result<WindowPlan> {
        self.validate()?;
        let (lo, hi) = self.spectral_window_nm;
        let (range_lo, range_hi) = self.stack.valid_range_nm();
        let lp = self.pump_wavelength_nm;
        if lp < range_lo || lp > range_hi {
            return Err(Error::config(
                "pump_wavelength_nm",
                format!("{lp} nm outside the stack's material range [{range_lo}, {range_hi}] nm"),
            ));
        }
        if lo < range_lo || hi > range_hi {
            return Err(Error::config(
                "spectral_window_nm",
                format!("[{lo}, {hi}] nm not inside the stack's material range [{range_lo}, {range_hi}] nm"),
            ));
        }
        // λi(λs) is decreasing: the idler exits the range above at small λs
        // and below at large λs.
        let mut clipped = (lo, hi);
        if range_hi.is_finite() && range_hi > lp {
            // λi <= range_hi  <=>  λs >= conj(range_hi)
            // nudged inward so the conjugate lands inside despite rounding
            let min_signal = conjugate_wavelength(lp, range_hi)? * (1.0 + 1e-12);
            clipped.0 = clipped.0.max(min_signal);
        }
        if range_lo > lp {
            let max_signal = conjugate_wavelength(lp, range_lo)? * (1.0 - 1e-12);
            clipped.1 = clipped.1.min(max_signal);
        }
        if clipped.0 >= clipped.1 {
            return Err(Error::config(
                "spectral_window_nm",
                format!("no signal wavelength in [{lo}, {hi}] nm has its idler inside [{range_lo}, {range_hi}] nm"),
            ));
        }
        let mut warnings = Vec::new();
        if clipped != (lo, hi) {
            warnings.push(format!(
                "spectral window clipped from [{lo}, {hi}] nm to [{}, {}] nm so that idlers stay inside the material range [{range_lo}, {range_hi}] nm",
                clipped.0, clipped.1
            ));
        }
        Ok(WindowPlan {
            window_nm: clipped,
            warnings,
        })
    }
}

/// sin(x)/x with the removable singularity filled in.
fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Per-frequency vacuum mode-density factor (λs³·λi³)⁻¹, wavelengths in µm.
pub fn vacuum_density_factor(signal_nm: f64, idler_nm: f64) -> f64 {
    let (s, i) = (signal_nm * 1e-3, idler_nm * 1e-3);
    1.0 / (s.powi(3) * i.powi(3))
}

/// Density at a single signal wavelength (no window checks beyond the
/// material ranges).
pub fn spdc_density_at(cfg: &SpdcConfig, signal_nm: f64) -> Result<f64> {
    let lp = cfg.pump_wavelength_nm;
    let idler_nm = conjugate_wavelength(lp, signal_nm)?;
    let film = cfg.stack.nonlinear_layer();
    let n_p = film.material.refractive_index(lp)?;
    let n_s = film.material.refractive_index(signal_nm)?;
    let n_i = film.material.refractive_index(idler_nm)?;
    let dk = phase_mismatch(lp, signal_nm, n_p, n_s, n_i)?;
    let length_nm = film.thickness_nm;
    let length_um = length_nm * 1e-3;
    let shape = sinc(dk * length_nm / 2.0).powi(2);

    let index = cfg.stack.nonlinear_layer_index();
    let side = cfg.incidence;
    let mut cavity = 1.0;
    if cfg.enhancement.detection() {
        cavity *= internal_intensity_factor_from(&cfg.stack, index, signal_nm, side)?;
        cavity *= internal_intensity_factor_from(&cfg.stack, index, idler_nm, side)?;
    }
    if cfg.enhancement.pump() {
        cavity *= internal_intensity_factor_from(&cfg.stack, index, lp, side)?;
    }
    let prefactor = cfg.pump_power_mw * cfg.d_eff_pm_per_v.powi(2) * length_um.powi(2);
    let per_wavelength = (signal_nm * 1e-3).powi(-2);
    Ok(prefactor * shape * cavity * vacuum_density_factor(signal_nm, idler_nm) * per_wavelength)
}

/// Relative pair density per unit signal wavelength on a uniform grid over
/// the (possibly clipped) spectral window.
pub fn spdc_spectral_density(cfg: &SpdcConfig) -> Result<SampledSpectrum> {
    let plan = cfg.plan_window()?;
    let grid = SampledSpectrum::uniform_grid(plan.window_nm.0, plan.window_nm.1, cfg.grid_points);
    let density = grid
        .iter()
        .map(|&l| spdc_density_at(cfg, l))
        .collect::<Result<Vec<_>>>()?;
    SampledSpectrum::new(grid, density)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FluorescenceShape {
    /// `width_nm` is the standard deviation.
    Gaussian,
    /// Top-hat of full width `width_nm`.
    Flat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluorescenceConfig {
    pub shape: FluorescenceShape,
    pub center_nm: f64,
    pub width_nm: f64,
    /// events/s per nm of spectrum, per mW of pump, per nm of film thickness
    pub rate_scale: f64,
}

impl FluorescenceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate_scale.is_finite() && self.rate_scale >= 0.0) {
            return Err(Error::config("fluorescence.rate_scale", "must be >= 0"));
        }
        if !(self.width_nm.is_finite() && self.width_nm > 0.0) {
            return Err(Error::config("fluorescence.width_nm", "must be > 0"));
        }
        if !self.center_nm.is_finite() {
            return Err(Error::config("fluorescence.center_nm", "must be finite"));
        }
        Ok(())
    }

    fn shape_at(&self, lambda_nm: f64) -> f64 {
        let x = lambda_nm - self.center_nm;
        match self.shape {
            FluorescenceShape::Gaussian => (-0.5 * (x / self.width_nm).powi(2)).exp(),
            FluorescenceShape::Flat => {
                if x.abs() <= 0.5 * self.width_nm {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Fluorescence density in events/s/nm on a uniform grid, linear in film
/// thickness `thickness_nm` and pump power.
pub fn fluorescence_density(
    fcfg: &FluorescenceConfig,
    window_nm: (f64, f64),
    grid_points: usize,
    thickness_nm: f64,
    pump_power_mw: f64,
) -> Result<SampledSpectrum> {
    fcfg.validate()?;
    if grid_points < 2 || !(window_nm.0 < window_nm.1) {
        return Err(Error::config("spectral_window_nm", "need min < max and >= 2 points"));
    }
    if !(thickness_nm >= 0.0 && pump_power_mw >= 0.0) {
        return Err(Error::config("fluorescence", "thickness and pump power must be >= 0"));
    }
    let scale = fcfg.rate_scale * thickness_nm * pump_power_mw;
    let grid = SampledSpectrum::uniform_grid(window_nm.0, window_nm.1, grid_points);
    let density = grid.iter().map(|&l| scale * fcfg.shape_at(l)).collect();
    SampledSpectrum::new(grid, density)
}
