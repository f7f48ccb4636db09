//! Composed experiment recipes: the fibre-spectroscopy loop
//! (spectrum → tags → histogram → reconstruction) and the correlation
//! measurement (tags → histogram → CAR and pair rate).
//!
//! Long runs are streamed window by window: each simulation window is
//! histogrammed on its own and the histograms are summed, so memory stays
//! bounded by one batch of windows.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coincidence::{histogram, CoincidenceHistogram};
use crate::error::{Error, Result};
use crate::fiber::CalibrationCurve;
use crate::presets::{PresetStore, SourceOverrides, SourcePreset};
use crate::reconstruct::{normalized_l1_distance, reconstruct_spectrum, EfficiencyCorrection, Reconstruction, ReconstructOptions};
use crate::spdc::{fluorescence_density, spdc_spectral_density, FluorescenceConfig, FluorescenceShape, SpdcConfig};
use crate::spectrum::SampledSpectrum;
use crate::tagsim::{simulate_windows, DetectorModel, ExpectedRates, FiberArm, Fluorescence, RunConfig, TimeTagStream};

/// Grid samples used for the fluorescence spectrum.
const FLUORESCENCE_POINTS: usize = 1024;
/// Samples used for L1 comparisons.
const L1_POINTS: usize = 4096;

/// Fluorescence photons per second and their spectrum, for a given film
/// thickness and pump power. The grid spans ±6σ (Gaussian) or the top-hat,
/// cut at the pump wavelength.
pub fn fluorescence_source(
    fcfg: &FluorescenceConfig,
    pump_nm: f64,
    thickness_nm: f64,
    pump_power_mw: f64,
) -> Result<Option<Fluorescence>> {
    if fcfg.rate_scale == 0.0 {
        return Ok(None);
    }
    let half = match fcfg.shape {
        FluorescenceShape::Gaussian => 6.0 * fcfg.width_nm,
        FluorescenceShape::Flat => 0.5 * fcfg.width_nm,
    };
    let lo = (fcfg.center_nm - half).max(pump_nm + 1.0);
    let hi = fcfg.center_nm + half;
    if !(hi > lo) {
        return Ok(None);
    }
    let spectrum = fluorescence_density(fcfg, (lo, hi), FLUORESCENCE_POINTS, thickness_nm, pump_power_mw)?;
    let rate = spectrum.integral();
    Ok((rate > 0.0).then_some(Fluorescence {
        spectrum,
        rate_per_s: rate,
    }))
}

/// Sums per-window histograms. Windows are generated and histogrammed in
/// parallel batches; the result does not depend on the batch size.
pub fn stream_histogram<I>(
    windows: I,
    bin_width_ps: u64,
    window_ps: u64,
    mut on_window: impl FnMut(&TimeTagStream) -> Result<()>,
) -> Result<CoincidenceHistogram>
where
    I: Iterator<Item = TimeTagStream>,
{
    let mut total = CoincidenceHistogram::zeros(bin_width_ps, window_ps, 0.0)?;
    let batch = rayon::current_num_threads().max(1);
    let mut windows = windows.peekable();
    while windows.peek().is_some() {
        let chunk: Vec<TimeTagStream> = windows.by_ref().take(batch).collect();
        let hists: Vec<Result<CoincidenceHistogram>> = chunk
            .par_iter()
            .map(|w| histogram(w, bin_width_ps, window_ps))
            .collect();
        for (w, h) in chunk.iter().zip(hists) {
            on_window(w)?;
            total.merge(&h?)?;
        }
    }
    Ok(total)
}

/// Fully resolved fibre-spectroscopy measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiberExperiment {
    pub spectrum: SampledSpectrum,
    pub run: RunConfig,
    pub detectors: [DetectorModel; 2],
    pub calibration: CalibrationCurve,
    pub bin_width_ps: u64,
    pub window_ps: u64,
    pub expected: ExpectedRates,
    /// Expected cross-channel true coincidences over the whole run.
    pub expected_coincidences: f64,
}

impl FiberExperiment {
    /// Builds the experiment from a source preset. The run lasts as long as
    /// needed to expect `target_coincidences` true coincidences.
    pub fn from_preset(
        store: &PresetStore,
        source_name: &str,
        overrides: &SourceOverrides,
        seed: u64,
        target_coincidences: f64,
    ) -> Result<Self> {
        let (lib, _) = store.materials()?;
        let (src, _) = store.source(source_name)?;
        let cfg = src.spdc_config(&lib, overrides)?;
        let ex = &src.experiment;
        let detectors = [store.detector(&ex.detectors[0])?, store.detector(&ex.detectors[1])?];
        let calibration = store.fiber(&ex.fiber)?;
        let spectrum = spdc_spectral_density(&cfg)?;
        Self::new(&src, &cfg, spectrum, detectors, calibration, seed, target_coincidences)
    }

    pub fn new(
        src: &SourcePreset,
        cfg: &SpdcConfig,
        spectrum: SampledSpectrum,
        detectors: [DetectorModel; 2],
        calibration: CalibrationCurve,
        seed: u64,
        target_coincidences: f64,
    ) -> Result<Self> {
        if !(target_coincidences.is_finite() && target_coincidences > 0.0) {
            return Err(Error::config("pairs", "expected coincidences must be > 0"));
        }
        let ex = &src.experiment;
        let mut run = RunConfig::new(1.0, cfg.pump_wavelength_nm, seed);
        run.pair_rate_anchor = ex.pair_rate_anchor;
        run.spdc_spectrum = Some(spectrum.clone());
        run.splitter_ratio = ex.splitter_ratio;
        run.common_filters = ex.common_filters.clone();
        run.window_s = ex.window_s;
        run.fiber_arm = Some(FiberArm {
            calibration: calibration.clone(),
            channel: ex.fiber_channel,
        });
        if let Some(f) = &src.fluorescence {
            run.fluorescence =
                fluorescence_source(f, cfg.pump_wavelength_nm, cfg.stack.nonlinear_layer().thickness_nm, cfg.pump_power_mw)?;
        }
        let expected = run.expected_rates(&detectors)?;
        if !(expected.true_coincidences_per_s > 0.0) {
            return Err(Error::config("experiment", "configuration yields no coincidences"));
        }
        run.duration_s = target_coincidences / expected.true_coincidences_per_s;
        Ok(Self {
            spectrum,
            run,
            detectors,
            calibration,
            bin_width_ps: ex.bin_width_ps,
            window_ps: ex.window_ps,
            expected,
            expected_coincidences: target_coincidences,
        })
    }

    pub fn fiber_channel(&self) -> u8 {
        self.run.fiber_arm.as_ref().map_or(1, |a| a.channel)
    }

    /// Simulates and histograms the run. `on_window` sees every generated
    /// window (e.g. to write tags) in time order.
    pub fn measure(&self, on_window: impl FnMut(&TimeTagStream) -> Result<()>) -> Result<CoincidenceHistogram> {
        let windows = simulate_windows(&self.run, &self.detectors)?;
        stream_histogram(windows, self.bin_width_ps, self.window_ps, on_window)
    }

    pub fn reconstruct_options(&self) -> ReconstructOptions {
        let fc = usize::from(self.fiber_channel());
        let jitter = self.detectors[0].jitter_sigma_ps.hypot(self.detectors[1].jitter_sigma_ps);
        ReconstructOptions {
            efficiency: Some(EfficiencyCorrection {
                fiber_detector: self.detectors[fc].clone(),
                direct_detector: self.detectors[1 - fc].clone(),
                pump_wavelength_nm: self.run.pump_wavelength_nm,
            }),
            raw_timeaxis: false,
            fiber_channel: self.fiber_channel(),
            jitter_sigma_ps: Some(jitter),
        }
    }

    pub fn reconstruct(&self, h: &CoincidenceHistogram) -> Result<Reconstruction> {
        reconstruct_spectrum(h, &self.calibration, &self.reconstruct_options())
    }

    /// Comparison domain: calibration window ∩ input spectrum span ∩ the
    /// span of reconstructed points (outside it there is no estimate).
    pub fn comparison_domain(&self, rec: &Reconstruction) -> (f64, f64) {
        let (a, b) = self.calibration.valid_window_nm;
        let (c, d) = self.spectrum.span_nm();
        let (e, f) = rec.spectrum.span_nm();
        (a.max(c).max(e), b.min(d).min(f))
    }

    pub fn l1_distance(&self, rec: &Reconstruction) -> Result<f64> {
        normalized_l1_distance(&rec.spectrum, &self.spectrum, self.comparison_domain(rec), L1_POINTS)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_pipeline_runs() {
        let store = PresetStore::builtin();
        let exp = FiberExperiment::from_preset(&store, "ln300", &SourceOverrides::default(), 7, 2e4).unwrap();
        let mut windows = 0;
        let h = exp
            .measure(|_| {
                windows += 1;
                Ok(())
            })
            .unwrap();
        assert!(windows >= 1);
        let rec = exp.reconstruct(&h).unwrap();
        let l1 = exp.l1_distance(&rec).unwrap();
        assert!(l1 < 0.5, "{l1}");
        assert!((h.acquisition_time_s() - exp.run.duration_s).abs() < 1e-9);
    }

    #[test]
    fn stream_histogram_matches_per_window_sum() {
        let store = PresetStore::builtin();
        let mut exp = FiberExperiment::from_preset(&store, "ln300", &SourceOverrides::default(), 3, 5e3).unwrap();
        exp.run.window_s = exp.run.duration_s / 3.5;
        let a = exp.measure(|_| Ok(())).unwrap();
        let mut b = CoincidenceHistogram::zeros(exp.bin_width_ps, exp.window_ps, 0.0).unwrap();
        for w in simulate_windows(&exp.run, &exp.detectors).unwrap() {
            b.merge(&histogram(&w, exp.bin_width_ps, exp.window_ps).unwrap()).unwrap();
        }
        assert_eq!(a, b);
    }
}
