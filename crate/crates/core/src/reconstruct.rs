//! Inversion of a fibre-spectroscopy coincidence histogram into a spectrum.
//!
//! Each bin with centre Δt inside the calibration image maps to
//! `λ = Δt⁻¹(centre)` and
//!
//! ```text
//! density(λ) = counts · |dΔt/dλ| / (bin_width · T)        [pairs/s/nm]
//! ```
//!
//! The bin covers `b / |dΔt/dλ|` nm, which is reported per point as the
//! wavelength step. Summing `density · step` therefore returns the
//! histogram's rate exactly. No jitter deconvolution is applied.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coincidence::CoincidenceHistogram;
use crate::dispersion::conjugate_wavelength;
use crate::error::{Error, Result};
use crate::fiber::CalibrationCurve;
use crate::spectrum::SampledSpectrum;
use crate::tagsim::DetectorModel;

/// Efficiency below which a bin cannot be corrected and is dropped.
const MIN_EFFICIENCY: f64 = 1e-6;

/// Divides each bin by `T_fibre(λ)·η_fibre(λ)·η_direct(λc)`, where λ is the
/// photon that crossed the fibre and `λc` its energy conjugate that went to
/// the other detector. The swapped assignment (λc through the fibre) lands
/// in the bin of λc, not λ, so it does not enter this bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyCorrection {
    pub fiber_detector: DetectorModel,
    pub direct_detector: DetectorModel,
    pub pump_wavelength_nm: f64,
}

impl EfficiencyCorrection {
    pub fn factor(&self, calib: &CalibrationCurve, lambda_nm: f64) -> Result<f64> {
        let conj = conjugate_wavelength(self.pump_wavelength_nm, lambda_nm)?;
        Ok(calib.model.transmission(lambda_nm)
            * self.fiber_detector.efficiency(lambda_nm)
            * self.direct_detector.efficiency(conj))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReconstructOptions {
    pub efficiency: Option<EfficiencyCorrection>,
    /// Skip the Jacobian: density stays per ps of Δt.
    #[serde(default)]
    pub raw_timeaxis: bool,
    /// Channel carrying the fibre arm. The histogram axis is `t₁ − t₀`, so a
    /// fibre on channel 0 shows up at negative delays and is mirrored.
    #[serde(default = "default_fiber_channel")]
    pub fiber_channel: u8,
    /// Combined timing jitter, used only for the resolution report.
    #[serde(default)]
    pub jitter_sigma_ps: Option<f64>,
}

fn default_fiber_channel() -> u8 {
    1
}

impl ReconstructOptions {
    pub fn new() -> Self {
        Self {
            fiber_channel: 1,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Resolution {
    pub wavelength_nm: f64,
    /// Wavelength span of one histogram bin.
    pub bin_step_nm: f64,
    /// Jitter σ expressed in wavelength, when the jitter is known.
    pub jitter_blur_nm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionMetadata {
    pub dropped_bins: usize,
    pub dropped_counts: u64,
    pub used_bins: usize,
    pub used_counts: u64,
    pub resolution: Vec<Resolution>,
    pub efficiency_correction: String,
    pub jacobian: String,
    pub fiber_channel: u8,
    pub valid_window_nm: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub spectrum: SampledSpectrum,
    /// Wavelength span of the histogram bin behind each spectrum point.
    pub step_nm: Vec<f64>,
    pub counts: Vec<u64>,
    pub metadata: ReconstructionMetadata,
}

impl Reconstruction {
    /// Σ density·step, i.e. the rate the spectrum accounts for.
    pub fn integral(&self) -> f64 {
        self.spectrum
            .density()
            .iter()
            .zip(&self.step_nm)
            .map(|(d, s)| d * s)
            .sum()
    }
}

fn resolution_at(calib: &CalibrationCurve, bin_ps: f64, jitter: Option<f64>, lambda: f64) -> Resolution {
    let j = calib.jacobian_ps_per_nm(lambda).abs();
    Resolution {
        wavelength_nm: lambda,
        bin_step_nm: bin_ps / j,
        jitter_blur_nm: jitter.map(|s| s / j),
    }
}

pub fn reconstruct_spectrum(
    h: &CoincidenceHistogram,
    calib: &CalibrationCurve,
    options: &ReconstructOptions,
) -> Result<Reconstruction> {
    calib.validate()?;
    if options.fiber_channel > 1 {
        return Err(Error::config("fiber_channel", "must be 0 or 1"));
    }
    if !(h.acquisition_time_s() > 0.0) {
        return Err(Error::config("acquisition_time", "histogram has no acquisition time"));
    }
    let mirrored;
    let h = if options.fiber_channel == 0 {
        mirrored = h.mirrored();
        &mirrored
    } else {
        h
    };
    let (t_lo, t_hi) = calib.time_image_ps();
    let b = h.bin_width_ps() as f64;
    let norm = b * h.acquisition_time_s();

    struct Point {
        lambda: f64,
        density: f64,
        step: f64,
        counts: u64,
    }
    let mapped: Vec<Result<Option<Point>>> = (0..h.len())
        .into_par_iter()
        .map(|k| {
            let c = h.bin_center_ps(k);
            if !(c >= t_lo && c <= t_hi) {
                return Ok(None);
            }
            let lambda = calib.wavelength_at(c)?;
            let jac = calib.jacobian_ps_per_nm(lambda).abs();
            let counts = h.counts()[k];
            let mut density = counts as f64 / norm;
            if !options.raw_timeaxis {
                density *= jac;
            }
            if let Some(eff) = &options.efficiency {
                let f = eff.factor(calib, lambda)?;
                if f < MIN_EFFICIENCY {
                    return Ok(None);
                }
                density /= f;
            }
            Ok(Some(Point {
                lambda,
                density,
                step: b / jac,
                counts,
            }))
        })
        .collect();

    let mut points = Vec::new();
    let mut dropped_bins = 0;
    let mut dropped_counts = 0;
    for (k, m) in mapped.into_iter().enumerate() {
        match m? {
            Some(p) => points.push(p),
            None => {
                dropped_bins += 1;
                dropped_counts += h.counts()[k];
            }
        }
    }
    if points.is_empty() {
        return Err(Error::Fit(format!(
            "no histogram bin centre lies in the calibration image [{t_lo}, {t_hi}] ps"
        )));
    }
    // larger delay means shorter wavelength below the ZDW
    points.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
    if points.windows(2).any(|w| !(w[1].lambda > w[0].lambda)) {
        return Err(Error::NonMonotone(
            "distinct bins map to the same wavelength; the arrival time difference must be one-to-one in wavelength".into(),
        ));
    }
    let (lo, hi) = calib.valid_window_nm;
    let resolution = [lo, 0.5 * (lo + hi), hi]
        .map(|l| resolution_at(calib, b, options.jitter_sigma_ps, l))
        .to_vec();
    let metadata = ReconstructionMetadata {
        dropped_bins,
        dropped_counts,
        used_bins: points.len(),
        used_counts: points.iter().map(|p| p.counts).sum(),
        resolution,
        efficiency_correction: if options.efficiency.is_some() { "fiber_times_direct" } else { "none" }.into(),
        jacobian: if options.raw_timeaxis { "raw_timeaxis" } else { "corrected" }.into(),
        fiber_channel: options.fiber_channel,
        valid_window_nm: calib.valid_window_nm,
    };
    let step_nm = points.iter().map(|p| p.step).collect();
    let counts = points.iter().map(|p| p.counts).collect();
    let spectrum = SampledSpectrum::new(
        points.iter().map(|p| p.lambda).collect(),
        points.iter().map(|p| p.density).collect(),
    )?;
    Ok(Reconstruction {
        spectrum,
        step_nm,
        counts,
        metadata,
    })
}

/// Outer extent of the grid points at or above `threshold · max`.
pub fn spectral_width(s: &SampledSpectrum, threshold: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::config("threshold", "must lie in [0, 1]"));
    }
    let max = s.max_density();
    if !(max > 0.0) {
        return Err(Error::EmptySpectrum);
    }
    let level = threshold * max;
    let w = s.wavelengths();
    let d = s.density();
    let first = d.iter().position(|&x| x >= level).expect("max qualifies");
    let last = d.iter().rposition(|&x| x >= level).expect("max qualifies");
    Ok(w[last] - w[first])
}

/// `∫|a/∫a − b/∫b| dλ` over `domain`, both spectra linearly interpolated on a
/// uniform grid of `points` samples. 0 for identical shapes, at most 2.
pub fn normalized_l1_distance(a: &SampledSpectrum, b: &SampledSpectrum, domain: (f64, f64), points: usize) -> Result<f64> {
    let (lo, hi) = domain;
    if !(lo < hi) || points < 2 {
        return Err(Error::config("domain", format!("empty comparison domain [{lo}, {hi}]")));
    }
    let grid = SampledSpectrum::uniform_grid(lo, hi, points);
    let sa = SampledSpectrum::new(grid.clone(), grid.iter().map(|&l| a.interpolate(l)).collect())?;
    let sb = SampledSpectrum::new(grid.clone(), grid.iter().map(|&l| b.interpolate(l)).collect())?;
    let (ia, ib) = (sa.integral(), sb.integral());
    if !(ia > 0.0 && ib > 0.0) {
        return Err(Error::EmptySpectrum);
    }
    let diff: Vec<f64> = sa
        .density()
        .iter()
        .zip(sb.density())
        .map(|(x, y)| (x / ia - y / ib).abs())
        .collect();
    Ok(SampledSpectrum::new(grid, diff)?.integral())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fiber::FiberModel;

    fn calib(offset: f64) -> CalibrationCurve {
        CalibrationCurve::new(FiberModel::new(150.0, 1500.0, 0.07).unwrap(), offset, (800.0, 1400.0)).unwrap()
    }

    #[test]
    fn spike_maps_to_its_wavelength() {
        let c = calib(0.0);
        let mut h = CoincidenceHistogram::zeros(50, 50_000, 1.0).unwrap();
        let dt = c.arrival_time_difference(1200.0).unwrap();
        let k = h.bin_of(dt.floor() as i128).unwrap();
        let mut counts = h.counts().to_vec();
        counts[k] = 1000;
        h = CoincidenceHistogram::from_parts(50, counts, 1.0, [0, 0]).unwrap();
        let r = reconstruct_spectrum(&h, &c, &ReconstructOptions::new()).unwrap();
        let nz: Vec<_> = r
            .spectrum
            .wavelengths()
            .iter()
            .zip(r.spectrum.density())
            .filter(|(_, &d)| d > 0.0)
            .collect();
        assert_eq!(nz.len(), 1);
        let step = resolution_at(&c, 50.0, None, 1200.0).bin_step_nm;
        assert!((nz[0].0 - 1200.0).abs() <= step, "{} vs step {step}", nz[0].0);
        assert!((r.integral() - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_inputs() {
        let h = CoincidenceHistogram::zeros(50, 50_000, 1.0).unwrap();
        let mut c = calib(0.0);
        c.valid_window_nm = (800.0, 1600.0);
        assert!(matches!(reconstruct_spectrum(&h, &c, &ReconstructOptions::new()), Err(Error::NonMonotone(_))));
        // image entirely outside the histogram range
        let far = calib(1e6);
        assert!(reconstruct_spectrum(&h, &far, &ReconstructOptions::new()).is_err());
    }

    #[test]
    fn width_examples() {
        let grid = SampledSpectrum::uniform_grid(800.0, 1700.0, 901);
        let rect: Vec<f64> = grid.iter().map(|&l| if (1000.0..=1500.0).contains(&l) { 1.0 } else { 0.0 }).collect();
        let s = SampledSpectrum::new(grid.clone(), rect).unwrap();
        for t in [0.01, 0.1, 0.5, 0.99] {
            assert_eq!(spectral_width(&s, t).unwrap(), 500.0);
        }
        let grid = SampledSpectrum::uniform_grid(700.0, 1700.0, 100_001);
        let g: Vec<f64> = grid.iter().map(|&l| (-0.5 * ((l - 1200.0) / 100.0f64).powi(2)).exp()).collect();
        let s = SampledSpectrum::new(grid.clone(), g).unwrap();
        let fwhm = 200.0 * (2.0 * 2f64.ln()).sqrt();
        assert!((spectral_width(&s, 0.5).unwrap() - fwhm).abs() < 0.02);
        let zero = SampledSpectrum::new(grid.clone(), vec![0.0; grid.len()]).unwrap();
        assert!(matches!(spectral_width(&zero, 0.1), Err(Error::EmptySpectrum)));
    }

    #[test]
    fn l1_distance_basics() {
        let grid = SampledSpectrum::uniform_grid(900.0, 1100.0, 201);
        let a = SampledSpectrum::new(grid.clone(), vec![1.0; 201]).unwrap();
        let b = a.scaled(7.0).unwrap();
        assert!(normalized_l1_distance(&a, &b, (900.0, 1100.0), 1000).unwrap() < 1e-12);
        let half: Vec<f64> = grid.iter().map(|&l| if l < 1000.0 { 1.0 } else { 0.0 }).collect();
        let c = SampledSpectrum::new(grid, half).unwrap();
        let d = normalized_l1_distance(&a, &c, (900.0, 1100.0), 20_001).unwrap();
        assert!((d - 1.0).abs() < 0.01, "{d}");
    }
}
