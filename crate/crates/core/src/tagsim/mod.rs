//! Monte Carlo generator of two-channel time-tag streams.
//!
//! Pairs are emitted as a homogeneous Poisson process. Each pair draws one
//! photon wavelength from the SPDC spectrum (the partner is the energy
//! conjugate). Each photon is routed, filtered and detected independently.
//! A detected photon is stamped with
//!
//! ```text
//! t = emission + [fibre delay if routed to the fibre arm] + N(0, σ_detector)
//! ```
//!
//! Fluorescence photons and dark counts are independent Poisson processes
//! producing unpaired tags. Detector dead time is not modelled.
//!
//! Long runs are cut into windows (`RunConfig::window_s`), each generated
//! from its own seed derived from `(seed, window index)`. The merged stream
//! is deterministic for a fixed seed and window length.

mod format;
mod sampler;
mod thermal;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dispersion::conjugate_wavelength;
use crate::error::{Error, Result};
use crate::fiber::CalibrationCurve;
use crate::spectrum::SampledSpectrum;

pub use format::{read_binary, BinaryTagWriter, read_csv, write_binary, write_csv, TAG_FILE_MAGIC, TAG_FILE_VERSION};
pub use sampler::WavelengthSampler;
pub use thermal::{simulate_thermal, ThermalConfig};

/// Simulation clock origin. Every tag is offset by this so that negative
/// fibre offsets and jitter never underflow the unsigned timestamp.
pub const CLOCK_ORIGIN_PS: f64 = 1_000_000.0;

/// Marks tags that do not belong to a pair.
pub const NO_PAIR: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum Truth {
    Pair = 0,
    Fluor = 1,
    Dark = 2,
    Thermal = 3,
    /// Read back from a file; truth is not exported.
    Unknown = 255,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TimeTag {
    pub timestamp_ps: u64,
    pub channel: u8,
    pub truth: Truth,
    pub pair_id: u64,
}

/// Ground truth for one emitted pair, kept only when requested.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairRecord {
    pub pair_id: u64,
    pub emission_ps: f64,
    pub wavelengths_nm: [f64; 2],
    pub channels: [u8; 2],
    pub detected: [bool; 2],
    pub jitter_ps: [f64; 2],
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TimeTagStream {
    pub events: Vec<TimeTag>,
    /// Acquisition time in seconds (0 when unknown).
    pub duration_s: f64,
    pub pair_records: Vec<PairRecord>,
}

impl TimeTagStream {
    pub fn new(events: Vec<TimeTag>, duration_s: f64) -> Self {
        Self {
            events,
            duration_s,
            pair_records: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn channel_counts(&self) -> [u64; 2] {
        let mut counts = [0u64; 2];
        for e in &self.events {
            counts[usize::from(e.channel.min(1))] += 1;
        }
        counts
    }

    /// First index where timestamps decrease, if any.
    pub fn first_unsorted(&self) -> Option<usize> {
        self.events
            .windows(2)
            .position(|w| w[1].timestamp_ps < w[0].timestamp_ps)
            .map(|i| i + 1)
    }

    pub fn sort(&mut self) {
        self.events
            .sort_unstable_by_key(|e| (e.timestamp_ps, e.channel, e.truth, e.pair_id));
    }

    /// Copy with truth stripped, as it would be read back from disk.
    pub fn stripped(&self) -> Self {
        let events = self
            .events
            .iter()
            .map(|e| TimeTag {
                truth: Truth::Unknown,
                pair_id: NO_PAIR,
                ..*e
            })
            .collect();
        Self::new(events, self.duration_s)
    }

    /// Only the events whose truth is in `keep`.
    pub fn filter_truth(&self, keep: &[Truth]) -> Self {
        let events = self
            .events
            .iter()
            .filter(|e| keep.contains(&e.truth))
            .copied()
            .collect();
        Self::new(events, self.duration_s)
    }

    /// Same events with every timestamp shifted by `offset_ps`.
    pub fn shifted(&self, offset_ps: u64) -> Self {
        let events = self
            .events
            .iter()
            .map(|e| TimeTag {
                timestamp_ps: e.timestamp_ps + offset_ps,
                ..*e
            })
            .collect();
        Self::new(events, self.duration_s)
    }

    /// Same events with channels 0 and 1 exchanged.
    pub fn channels_swapped(&self) -> Self {
        let events = self
            .events
            .iter()
            .map(|e| TimeTag {
                channel: 1 - e.channel.min(1),
                ..*e
            })
            .collect();
        Self::new(events, self.duration_s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorModel {
    pub name: String,
    /// (wavelength nm, efficiency 0..1), linear in between, zero outside.
    pub efficiency_curve: Vec<(f64, f64)>,
    pub jitter_sigma_ps: f64,
    pub dark_rate_per_s: f64,
}

impl DetectorModel {
    pub fn ideal(name: &str) -> Self {
        Self {
            name: name.to_owned(),
            efficiency_curve: vec![(100.0, 1.0), (100_000.0, 1.0)],
            jitter_sigma_ps: 0.0,
            dark_rate_per_s: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let key = |f: &str| format!("detector.{}.{f}", self.name);
        let curve = &self.efficiency_curve;
        if curve.is_empty() {
            return Err(Error::config(key("efficiency_curve"), "empty table"));
        }
        if curve.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::config(key("efficiency_curve"), "wavelengths must be strictly increasing"));
        }
        if curve.iter().any(|&(_, e)| !(0.0..=1.0).contains(&e)) {
            return Err(Error::config(key("efficiency_curve"), "efficiencies must lie in [0, 1]"));
        }
        if !(self.jitter_sigma_ps.is_finite() && self.jitter_sigma_ps >= 0.0) {
            return Err(Error::config(key("jitter_sigma_ps"), "must be >= 0"));
        }
        if !(self.dark_rate_per_s.is_finite() && self.dark_rate_per_s >= 0.0) {
            return Err(Error::config(key("dark_rate_per_s"), "must be >= 0"));
        }
        Ok(())
    }

    pub fn efficiency(&self, lambda_nm: f64) -> f64 {
        let c = &self.efficiency_curve;
        let (first, last) = (c[0], c[c.len() - 1]);
        if lambda_nm < first.0 || lambda_nm > last.0 {
            return 0.0;
        }
        let i = c.partition_point(|&(x, _)| x <= lambda_nm);
        if i >= c.len() {
            return last.1;
        }
        let (x0, y0) = c[i - 1];
        let (x1, y1) = c[i];
        y0 + (y1 - y0) * (lambda_nm - x0) / (x1 - x0)
    }

    pub fn support_nm(&self) -> (f64, f64) {
        (self.efficiency_curve[0].0, self.efficiency_curve[self.efficiency_curve.len() - 1].0)
    }
}

/// Ideal spectral filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Filter {
    Longpass { cuton_nm: f64 },
    Shortpass { cutoff_nm: f64 },
    /// Top-hat of full width `fwhm_nm`.
    Bandpass { center_nm: f64, fwhm_nm: f64 },
}

impl Filter {
    pub fn transmits(&self, lambda_nm: f64) -> bool {
        match *self {
            Filter::Longpass { cuton_nm } => lambda_nm >= cuton_nm,
            Filter::Shortpass { cutoff_nm } => lambda_nm <= cutoff_nm,
            Filter::Bandpass { center_nm, fwhm_nm } => (lambda_nm - center_nm).abs() <= 0.5 * fwhm_nm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Routing {
    /// Beam splitter: each photon goes to channel 1 with probability
    /// `splitter_ratio`.
    FiftyFifty,
    /// Photons shorter than `split_nm` go to `blue_channel`.
    Dichroic { split_nm: f64, blue_channel: u8 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiberArm {
    pub calibration: CalibrationCurve,
    pub channel: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fluorescence {
    /// Shape only; normalised internally.
    pub spectrum: SampledSpectrum,
    /// Emitted photons per second before routing and detection.
    pub rate_per_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub duration_s: f64,
    /// Emitted pairs per second with at least one photon inside the spectrum span.
    pub pair_rate_anchor: f64,
    pub pump_wavelength_nm: f64,
    pub spdc_spectrum: Option<SampledSpectrum>,
    pub fluorescence: Option<Fluorescence>,
    pub splitter_ratio: f64,
    pub routing: Routing,
    pub fiber_arm: Option<FiberArm>,
    /// Applied to every photon before the splitter.
    #[serde(default)]
    pub common_filters: Vec<Filter>,
    /// Applied after the splitter, per channel.
    #[serde(default)]
    pub channel_filters: [Vec<Filter>; 2],
    pub seed: u64,
    /// Generation window length; part of the determinism contract.
    pub window_s: f64,
    /// Keep a [`PairRecord`] per emitted pair.
    #[serde(default)]
    pub record_truth: bool,
}

impl RunConfig {
    /// Pairs-only run with a 50/50 splitter and no fibre.
    pub fn new(duration_s: f64, pump_wavelength_nm: f64, seed: u64) -> Self {
        Self {
            duration_s,
            pair_rate_anchor: 0.0,
            pump_wavelength_nm,
            spdc_spectrum: None,
            fluorescence: None,
            splitter_ratio: 0.5,
            routing: Routing::FiftyFifty,
            fiber_arm: None,
            common_filters: Vec::new(),
            channel_filters: [Vec::new(), Vec::new()],
            seed,
            window_s: 1.0,
            record_truth: false,
        }
    }

    pub fn validate(&self, detectors: &[DetectorModel; 2]) -> Result<()> {
        if !(self.duration_s.is_finite() && self.duration_s >= 0.0) {
            return Err(Error::config("duration_s", "must be >= 0"));
        }
        if !(self.window_s.is_finite() && self.window_s > 0.0) {
            return Err(Error::config("window_s", "must be > 0"));
        }
        if !(self.pair_rate_anchor.is_finite() && self.pair_rate_anchor >= 0.0) {
            return Err(Error::config("pair_rate_anchor", "must be >= 0"));
        }
        if !(self.splitter_ratio > 0.0 && self.splitter_ratio < 1.0) {
            return Err(Error::config("splitter_ratio", "must lie strictly between 0 and 1"));
        }
        if let Routing::Dichroic { blue_channel, split_nm } = self.routing {
            if blue_channel > 1 || !(split_nm > 0.0) {
                return Err(Error::config("routing", "dichroic needs blue_channel in {0,1} and split_nm > 0"));
            }
        }
        if let Some(arm) = &self.fiber_arm {
            if arm.channel > 1 {
                return Err(Error::config("fiber_arm.channel", "must be 0 or 1"));
            }
            arm.calibration.validate()?;
            if arm.calibration.time_offset_ps < -CLOCK_ORIGIN_PS / 2.0 {
                return Err(Error::config(
                    "fiber_arm.calibration.time_offset_ps",
                    format!("offsets below {} ps are not representable", -CLOCK_ORIGIN_PS / 2.0),
                ));
            }
        }
        if let Some(f) = &self.fluorescence {
            if !(f.rate_per_s.is_finite() && f.rate_per_s >= 0.0) {
                return Err(Error::config("fluorescence.rate_per_s", "must be >= 0"));
            }
        }
        for d in detectors {
            d.validate()?;
        }
        if self.pair_rate_anchor > 0.0 {
            let spectrum = self
                .spdc_spectrum
                .as_ref()
                .ok_or_else(|| Error::config("spdc_spectrum", "a nonzero pair rate needs a spectrum"))?;
            if spectrum.max_density() <= 0.0 {
                return Err(Error::config("spdc_spectrum", "spectrum is identically zero"));
            }
            let sampler = WavelengthSampler::for_pairs(spectrum, self.pump_wavelength_nm)?;
            let p = self.expected_pair_detection(&sampler, detectors);
            if p.singles[0] + p.singles[1] <= 0.0 {
                let (lo, hi) = spectrum.span_nm();
                let (l0, h0) = detectors[0].support_nm();
                let (l1, h1) = detectors[1].support_nm();
                let pair_lo = conjugate_wavelength(self.pump_wavelength_nm, hi)?;
                let pair_hi = conjugate_wavelength(self.pump_wavelength_nm, lo)?;
                return Err(Error::config(
                    "spdc_spectrum",
                    format!(
                        "no overlap between photon wavelengths [{lo}, {hi}] ∪ [{pair_lo}, {pair_hi}] nm \
                         and detector efficiency supports [{l0}, {h0}] nm / [{l1}, {h1}] nm after filters"
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Probability that a photon ends up on `channel` (routing only).
    fn route_probability(&self, channel: u8, lambda_nm: f64) -> f64 {
        match self.routing {
            Routing::FiftyFifty => {
                if channel == 1 {
                    self.splitter_ratio
                } else {
                    1.0 - self.splitter_ratio
                }
            }
            Routing::Dichroic { split_nm, blue_channel } => {
                let blue = lambda_nm < split_nm;
                if (channel == blue_channel) == blue {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Survival probability once routed to `channel` (filters, fibre loss,
    /// detector efficiency).
    fn survival(&self, channel: u8, lambda_nm: f64, detectors: &[DetectorModel; 2]) -> f64 {
        if !self.common_filters.iter().all(|f| f.transmits(lambda_nm))
            || !self.channel_filters[usize::from(channel)]
                .iter()
                .all(|f| f.transmits(lambda_nm))
        {
            return 0.0;
        }
        let fibre = match &self.fiber_arm {
            Some(arm) if arm.channel == channel => arm.calibration.model.transmission(lambda_nm),
            _ => 1.0,
        };
        fibre * detectors[usize::from(channel)].efficiency(lambda_nm)
    }

    fn detection(&self, channel: u8, lambda_nm: f64, detectors: &[DetectorModel; 2]) -> f64 {
        self.route_probability(channel, lambda_nm) * self.survival(channel, lambda_nm, detectors)
    }

    fn expected_pair_detection(&self, sampler: &WavelengthSampler, detectors: &[DetectorModel; 2]) -> PairDetection {
        const SUB: usize = 64;
        let lp = self.pump_wavelength_nm;
        let mut singles = [0.0; 2];
        for (c, s) in singles.iter_mut().enumerate() {
            *s = sampler.expectation(SUB, |a| {
                let b = conjugate_wavelength(lp, a).unwrap_or(f64::NAN);
                self.detection(c as u8, a, detectors) + self.detection(c as u8, b, detectors)
            });
        }
        let coincidence = sampler.expectation(SUB, |a| {
            let b = conjugate_wavelength(lp, a).unwrap_or(f64::NAN);
            self.detection(0, a, detectors) * self.detection(1, b, detectors)
                + self.detection(1, a, detectors) * self.detection(0, b, detectors)
        });
        PairDetection { singles, coincidence }
    }

    /// Analytic expectations composed from rates, routing, filters and
    /// efficiencies.
    pub fn expected_rates(&self, detectors: &[DetectorModel; 2]) -> Result<ExpectedRates> {
        self.validate(detectors)?;
        let mut singles = [0.0; 2];
        let mut coincidence = 0.0;
        if self.pair_rate_anchor > 0.0 {
            let spectrum = self.spdc_spectrum.as_ref().expect("validated");
            let sampler = WavelengthSampler::for_pairs(spectrum, self.pump_wavelength_nm)?;
            let p = self.expected_pair_detection(&sampler, detectors);
            for c in 0..2 {
                singles[c] += self.pair_rate_anchor * p.singles[c];
            }
            coincidence = self.pair_rate_anchor * p.coincidence;
        }
        if let Some(f) = &self.fluorescence {
            if f.rate_per_s > 0.0 && f.spectrum.max_density() > 0.0 {
                let sampler = WavelengthSampler::new(&f.spectrum)?;
                for (c, s) in singles.iter_mut().enumerate() {
                    *s += f.rate_per_s * sampler.expectation(64, |l| self.detection(c as u8, l, detectors));
                }
            }
        }
        for (c, s) in singles.iter_mut().enumerate() {
            *s += detectors[c].dark_rate_per_s;
        }
        Ok(ExpectedRates {
            singles_per_s: singles,
            true_coincidences_per_s: coincidence,
        })
    }
}

struct PairDetection {
    singles: [f64; 2],
    coincidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpectedRates {
    pub singles_per_s: [f64; 2],
    /// Pairs detected on opposite channels, per second.
    pub true_coincidences_per_s: f64,
}

/// SplitMix64 step, used to derive per-window seeds.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Rounds a simulated time in ps onto the unsigned clock.
fn stamp(t_ps: f64) -> u64 {
    (CLOCK_ORIGIN_PS + t_ps).round().max(0.0) as u64
}

pub(crate) fn window_bounds(duration_s: f64, window_s: f64) -> Vec<(f64, f64)> {
    if duration_s <= 0.0 {
        return Vec::new();
    }
    let n = (duration_s / window_s).ceil().max(1.0) as usize;
    (0..n)
        .map(|i| {
            let start = i as f64 * window_s;
            (start, ((i + 1) as f64 * window_s).min(duration_s))
        })
        .filter(|(a, b)| b > a)
        .collect()
}

struct Generator<'a> {
    cfg: &'a RunConfig,
    detectors: &'a [DetectorModel; 2],
    pair_sampler: Option<WavelengthSampler>,
    fluor_sampler: Option<WavelengthSampler>,
    jitter: [Option<Normal<f64>>; 2],
}

impl<'a> Generator<'a> {
    fn new(cfg: &'a RunConfig, detectors: &'a [DetectorModel; 2]) -> Result<Self> {
        cfg.validate(detectors)?;
        let pair_sampler = match (&cfg.spdc_spectrum, cfg.pair_rate_anchor > 0.0) {
            (Some(s), true) => Some(WavelengthSampler::for_pairs(s, cfg.pump_wavelength_nm)?),
            _ => None,
        };
        let fluor_sampler = match &cfg.fluorescence {
            Some(f) if f.rate_per_s > 0.0 && f.spectrum.max_density() > 0.0 => Some(WavelengthSampler::new(&f.spectrum)?),
            _ => None,
        };
        let jitter = [0, 1].map(|c| {
            let sigma = detectors[c].jitter_sigma_ps;
            (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("validated sigma"))
        });
        Ok(Self {
            cfg,
            detectors,
            pair_sampler,
            fluor_sampler,
            jitter,
        })
    }

    fn route<R: Rng>(&self, rng: &mut R, lambda_nm: f64) -> u8 {
        match self.cfg.routing {
            Routing::FiftyFifty => u8::from(rng.random::<f64>() < self.cfg.splitter_ratio),
            Routing::Dichroic { split_nm, blue_channel } => {
                if lambda_nm < split_nm {
                    blue_channel
                } else {
                    1 - blue_channel
                }
            }
        }
    }

    /// Routes and detects one photon; returns (channel, detected, delay, jitter).
    fn photon<R: Rng>(&self, rng: &mut R, lambda_nm: f64) -> (u8, bool, f64, f64) {
        let channel = self.route(rng, lambda_nm);
        let p = self.cfg.survival(channel, lambda_nm, self.detectors);
        let detected = rng.random::<f64>() < p;
        let jitter = match &self.jitter[usize::from(channel)] {
            Some(n) => n.sample(rng),
            None => 0.0,
        };
        let delay = match &self.cfg.fiber_arm {
            Some(arm) if arm.channel == channel => arm.calibration.delay_unchecked(lambda_nm),
            _ => 0.0,
        };
        (channel, detected, delay, jitter)
    }

    fn window(&self, index: usize, start_s: f64, end_s: f64) -> TimeTagStream {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.seed, index as u64));
        let (t0, t1) = (start_s * 1e12, end_s * 1e12);
        let mut events = Vec::new();
        let mut records = Vec::new();
        let lp = self.cfg.pump_wavelength_nm;

        if let Some(sampler) = &self.pair_sampler {
            let gap = Exp::new(self.cfg.pair_rate_anchor * 1e-12).expect("positive rate");
            let mut t = t0 + gap.sample(&mut rng);
            let mut local_id = 0u64;
            while t < t1 {
                let a = sampler.sample(&mut rng);
                let b = conjugate_wavelength(lp, a).expect("sampler stays above the pump");
                let pa = self.photon(&mut rng, a);
                let pb = self.photon(&mut rng, b);
                for (p, _) in [(pa, a), (pb, b)] {
                    if p.1 {
                        events.push(TimeTag {
                            timestamp_ps: stamp(t + p.2 + p.3),
                            channel: p.0,
                            truth: Truth::Pair,
                            pair_id: local_id,
                        });
                    }
                }
                if self.cfg.record_truth {
                    records.push(PairRecord {
                        pair_id: local_id,
                        emission_ps: t,
                        wavelengths_nm: [a, b],
                        channels: [pa.0, pb.0],
                        detected: [pa.1, pb.1],
                        jitter_ps: [pa.3, pb.3],
                    });
                }
                local_id += 1;
                t += gap.sample(&mut rng);
            }
        }

        if let (Some(sampler), Some(f)) = (&self.fluor_sampler, &self.cfg.fluorescence) {
            let n = poisson(&mut rng, f.rate_per_s * (end_s - start_s));
            for _ in 0..n {
                let t = t0 + rng.random::<f64>() * (t1 - t0);
                let lambda = sampler.sample(&mut rng);
                let (channel, detected, delay, jitter) = self.photon(&mut rng, lambda);
                if detected {
                    events.push(TimeTag {
                        timestamp_ps: stamp(t + delay + jitter),
                        channel,
                        truth: Truth::Fluor,
                        pair_id: NO_PAIR,
                    });
                }
            }
        }

        for (c, det) in self.detectors.iter().enumerate() {
            let n = poisson(&mut rng, det.dark_rate_per_s * (end_s - start_s));
            for _ in 0..n {
                let t = t0 + rng.random::<f64>() * (t1 - t0);
                events.push(TimeTag {
                    timestamp_ps: stamp(t),
                    channel: c as u8,
                    truth: Truth::Dark,
                    pair_id: NO_PAIR,
                });
            }
        }

        let mut stream = TimeTagStream {
            events,
            duration_s: end_s - start_s,
            pair_records: records,
        };
        stream.sort();
        stream
    }
}

pub(crate) fn poisson<R: Rng>(rng: &mut R, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("finite positive mean").sample(rng) as u64
}

/// Generates the whole run as one time-sorted stream.
pub fn simulate(cfg: &RunConfig, detectors: &[DetectorModel; 2]) -> Result<TimeTagStream> {
    let gen = Generator::new(cfg, detectors)?;
    let bounds = window_bounds(cfg.duration_s, cfg.window_s);
    let parts: Vec<TimeTagStream> = bounds
        .par_iter()
        .enumerate()
        .map(|(i, &(a, b))| gen.window(i, a, b))
        .collect();
    Ok(merge_windows(parts, cfg.duration_s))
}

/// Generates the run window by window. Each item is an independent,
/// sorted stream whose `duration_s` is the window length; pairs emitted
/// near a window end stay in that window. Pair ids are local to a window.
pub fn simulate_windows<'a>(
    cfg: &'a RunConfig,
    detectors: &'a [DetectorModel; 2],
) -> Result<impl Iterator<Item = TimeTagStream> + 'a> {
    let gen = Generator::new(cfg, detectors)?;
    let bounds = window_bounds(cfg.duration_s, cfg.window_s);
    Ok(bounds
        .into_iter()
        .enumerate()
        .map(move |(i, (a, b))| gen.window(i, a, b)))
}

pub(crate) fn merge_windows(parts: Vec<TimeTagStream>, duration_s: f64) -> TimeTagStream {
    let mut events = Vec::with_capacity(parts.iter().map(|p| p.events.len()).sum());
    let mut records = Vec::new();
    let mut id_offset = 0u64;
    for part in parts {
        let n_pairs = part
            .pair_records
            .len()
            .max(part.events.iter().filter(|e| e.pair_id != NO_PAIR).map(|e| e.pair_id as usize + 1).max().unwrap_or(0))
            as u64;
        events.extend(part.events.into_iter().map(|e| TimeTag {
            pair_id: if e.pair_id == NO_PAIR { NO_PAIR } else { e.pair_id + id_offset },
            ..e
        }));
        records.extend(part.pair_records.into_iter().map(|r| PairRecord {
            pair_id: r.pair_id + id_offset,
            ..r
        }));
        id_offset += n_pairs;
    }
    let mut stream = TimeTagStream {
        events,
        duration_s,
        pair_records: records,
    };
    stream.sort();
    stream
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_spectrum() -> SampledSpectrum {
        let grid = SampledSpectrum::uniform_grid(1300.0, 1450.0, 151);
        SampledSpectrum::new(grid.clone(), vec![1.0; grid.len()]).unwrap()
    }

    fn ideal() -> [DetectorModel; 2] {
        [DetectorModel::ideal("a"), DetectorModel::ideal("b")]
    }

    #[test]
    fn zero_rates_give_empty_stream() {
        let cfg = RunConfig::new(10.0, 685.0, 1);
        assert!(simulate(&cfg, &ideal()).unwrap().is_empty());
        let cfg = RunConfig::new(0.0, 685.0, 1);
        assert!(simulate(&cfg, &ideal()).unwrap().is_empty());
    }

    #[test]
    fn seed_determinism() {
        let mut cfg = RunConfig::new(2.5, 685.0, 99);
        cfg.pair_rate_anchor = 2000.0;
        cfg.spdc_spectrum = Some(flat_spectrum());
        cfg.window_s = 0.7;
        let mut det = ideal();
        det[0].jitter_sigma_ps = 50.0;
        det[1].dark_rate_per_s = 100.0;
        let a = simulate(&cfg, &det).unwrap();
        let b = simulate(&cfg, &det).unwrap();
        assert_eq!(a.events, b.events);
        cfg.seed = 100;
        assert_ne!(simulate(&cfg, &det).unwrap().events, a.events);
        assert!(a.first_unsorted().is_none());
    }

    #[test]
    fn windowed_and_merged_agree() {
        let mut cfg = RunConfig::new(3.0, 685.0, 5);
        cfg.pair_rate_anchor = 500.0;
        cfg.spdc_spectrum = Some(flat_spectrum());
        let merged = simulate(&cfg, &ideal()).unwrap();
        let parts: Vec<_> = simulate_windows(&cfg, &ideal()).unwrap().collect();
        assert_eq!(parts.len(), 3);
        assert_eq!(merged.len(), parts.iter().map(|p| p.len()).sum::<usize>());
        let merged_again = merge_windows(parts, 3.0);
        assert_eq!(merged.events, merged_again.events);
    }

    #[test]
    fn support_mismatch_is_config_error() {
        let mut cfg = RunConfig::new(1.0, 685.0, 1);
        cfg.pair_rate_anchor = 10.0;
        cfg.spdc_spectrum = Some(flat_spectrum());
        let mut det = ideal();
        for d in &mut det {
            d.efficiency_curve = vec![(400.0, 0.9), (900.0, 0.9)];
        }
        let err = simulate(&cfg, &det).unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
        assert!(err.to_string().contains("no overlap"), "{err}");
    }

    #[test]
    fn config_validation() {
        let mut cfg = RunConfig::new(1.0, 685.0, 1);
        cfg.splitter_ratio = 1.0;
        assert!(simulate(&cfg, &ideal()).is_err());
        let mut cfg = RunConfig::new(-1.0, 685.0, 1);
        assert!(simulate(&cfg, &ideal()).is_err());
        cfg.duration_s = 1.0;
        cfg.pair_rate_anchor = 5.0;
        assert!(simulate(&cfg, &ideal()).is_err(), "rate without spectrum");
        let mut det = ideal();
        det[0].efficiency_curve = vec![(500.0, 1.2)];
        assert!(det[0].validate().is_err());
    }

    #[test]
    fn efficiency_interpolation() {
        let d = DetectorModel {
            name: "x".into(),
            efficiency_curve: vec![(500.0, 0.2), (1000.0, 0.8)],
            jitter_sigma_ps: 0.0,
            dark_rate_per_s: 0.0,
        };
        assert!((d.efficiency(750.0) - 0.5).abs() < 1e-15);
        assert_eq!(d.efficiency(1000.0), 0.8);
        assert_eq!(d.efficiency(1001.0), 0.0);
        assert_eq!(d.efficiency(499.0), 0.0);
    }

    #[test]
    fn dichroic_routing_splits_by_colour() {
        let mut cfg = RunConfig::new(1.0, 515.0, 3);
        let grid = SampledSpectrum::uniform_grid(800.0, 1000.0, 21);
        cfg.spdc_spectrum = Some(SampledSpectrum::new(grid.clone(), vec![1.0; grid.len()]).unwrap());
        cfg.pair_rate_anchor = 1000.0;
        cfg.routing = Routing::Dichroic { split_nm: 1030.0, blue_channel: 1 };
        cfg.record_truth = true;
        let s = simulate(&cfg, &ideal()).unwrap();
        for r in &s.pair_records {
            for k in 0..2 {
                assert_eq!(r.channels[k], u8::from(r.wavelengths_nm[k] < 1030.0));
            }
        }
        // every pair is split across channels
        let rates = cfg.expected_rates(&ideal()).unwrap();
        assert!((rates.true_coincidences_per_s - 1000.0).abs() < 1e-9);
    }
}
