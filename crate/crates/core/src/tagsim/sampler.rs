use rand::Rng;

use crate::dispersion::conjugate_wavelength;
use crate::error::{Error, Result};
use crate::spectrum::SampledSpectrum;

/// Inverse-CDF sampler over a sampled density. Cell weights are trapezoid
/// areas (times an optional per-cell factor); within a cell the CDF is linear,
/// i.e. the wavelength is uniform.
#[derive(Debug, Clone)]
pub struct WavelengthSampler {
    edges: Vec<f64>,
    cdf: Vec<f64>,
    total: f64,
}

impl WavelengthSampler {
    pub fn new(spectrum: &SampledSpectrum) -> Result<Self> {
        Self::weighted(spectrum, |_| 1.0)
    }

    /// Sampler for pair emission from a single-photon marginal `spectrum`.
    ///
    /// A draw picks one photon; its partner is the energy conjugate. Cells
    /// whose conjugate also falls inside the spectrum would be reached from
    /// both photons, so they carry half weight. The resulting photon marginal
    /// equals the spectrum on its span and on the span's conjugate image.
    pub fn for_pairs(spectrum: &SampledSpectrum, pump_nm: f64) -> Result<Self> {
        let (lo, hi) = spectrum.span_nm();
        if lo <= pump_nm {
            return Err(Error::config(
                "spdc_spectrum",
                format!("spectrum starts at {lo} nm, at or below the pump {pump_nm} nm"),
            ));
        }
        Self::weighted(spectrum, |mid| match conjugate_wavelength(pump_nm, mid) {
            Ok(c) if c >= lo && c <= hi => 0.5,
            _ => 1.0,
        })
    }

    fn weighted(spectrum: &SampledSpectrum, factor: impl Fn(f64) -> f64) -> Result<Self> {
        let w = spectrum.wavelengths();
        let d = spectrum.density();
        if w.len() < 2 {
            return Err(Error::config("spectrum", "need at least two grid points to sample"));
        }
        let mut cdf = Vec::with_capacity(w.len());
        cdf.push(0.0);
        let mut acc = 0.0;
        for i in 0..w.len() - 1 {
            let mid = 0.5 * (w[i] + w[i + 1]);
            acc += 0.5 * (d[i] + d[i + 1]) * (w[i + 1] - w[i]) * factor(mid);
            cdf.push(acc);
        }
        Ok(Self {
            edges: w.to_vec(),
            cdf,
            total: acc,
        })
    }

    /// Integral of the (weighted) density.
    pub fn total_weight(&self) -> f64 {
        self.total
    }

    pub fn cells(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        // (lo, hi, probability)
        self.edges
            .windows(2)
            .zip(self.cdf.windows(2))
            .map(move |(e, c)| (e[0], e[1], (c[1] - c[0]) / self.total))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u = rng.random::<f64>() * self.total;
        let k = self.cdf.partition_point(|&c| c <= u).clamp(1, self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[k - 1], self.cdf[k]);
        let (e0, e1) = (self.edges[k - 1], self.edges[k]);
        let f = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
        e0 + f * (e1 - e0)
    }

    /// Expectation of `f(λ)` under the sampling law (midpoint rule with
    /// `sub` points per cell).
    pub fn expectation(&self, sub: usize, mut f: impl FnMut(f64) -> f64) -> f64 {
        let mut acc = 0.0;
        for (lo, hi, p) in self.cells() {
            if p == 0.0 {
                continue;
            }
            let mean = (0..sub)
                .map(|j| f(lo + (hi - lo) * (j as f64 + 0.5) / sub as f64))
                .sum::<f64>()
                / sub as f64;
            acc += p * mean;
        }
        acc
    }
}
