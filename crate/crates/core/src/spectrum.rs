use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{csv_rows, parse_field};

pub const SPECTRUM_CSV_HEADER: &str = "wavelength_nm,relative_density";

/// Density on a strictly increasing wavelength grid (relative units per nm).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledSpectrum {
    wavelengths_nm: Vec<f64>,
    density: Vec<f64>,
}

impl SampledSpectrum {
    pub fn new(wavelengths_nm: Vec<f64>, density: Vec<f64>) -> Result<Self> {
        if wavelengths_nm.len() != density.len() {
            return Err(Error::config(
                "spectrum",
                format!(
                    "{} wavelengths but {} density values",
                    wavelengths_nm.len(),
                    density.len()
                ),
            ));
        }
        if let Some(i) = wavelengths_nm
            .windows(2)
            .position(|w| !(w[1] > w[0]) || !w[0].is_finite() || !w[1].is_finite())
        {
            return Err(Error::config(
                "spectrum.wavelengths_nm",
                format!("grid must be strictly increasing (index {})", i + 1),
            ));
        }
        if let Some(i) = density.iter().position(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::config(
                "spectrum.density",
                format!("density must be finite and >= 0, got {} at index {i}", density[i]),
            ));
        }
        Ok(Self {
            wavelengths_nm,
            density,
        })
    }

    /// Uniform grid of `points` samples over `[lo, hi]`.
    pub fn uniform_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
        assert!(points >= 2);
        (0..points)
            .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
            .collect()
    }

    pub fn wavelengths(&self) -> &[f64] {
        &self.wavelengths_nm
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn len(&self) -> usize {
        self.density.len()
    }

    pub fn is_empty(&self) -> bool {
        self.density.is_empty()
    }

    pub fn span_nm(&self) -> (f64, f64) {
        (
            self.wavelengths_nm.first().copied().unwrap_or(f64::NAN),
            self.wavelengths_nm.last().copied().unwrap_or(f64::NAN),
        )
    }

    pub fn max_density(&self) -> f64 {
        self.density.iter().copied().fold(0.0, f64::max)
    }

    /// Trapezoidal integral over the grid.
    pub fn integral(&self) -> f64 {
        self.wavelengths_nm
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(w, d)| 0.5 * (d[0] + d[1]) * (w[1] - w[0]))
            .sum()
    }

    /// Linear interpolation; zero outside the grid.
    pub fn interpolate(&self, lambda_nm: f64) -> f64 {
        let w = &self.wavelengths_nm;
        if w.is_empty() || lambda_nm < w[0] || lambda_nm > w[w.len() - 1] {
            return 0.0;
        }
        let i = w.partition_point(|&x| x <= lambda_nm);
        if i == w.len() {
            return self.density[w.len() - 1];
        }
        let (x0, x1) = (w[i - 1], w[i]);
        let f = (lambda_nm - x0) / (x1 - x0);
        self.density[i - 1] * (1.0 - f) + self.density[i] * f
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.wavelengths_nm.clone(),
            self.density.iter().map(|d| d * factor).collect(),
        )
    }

    /// Copy rescaled to unit trapezoidal integral.
    pub fn normalized(&self) -> Result<Self> {
        let total = self.integral();
        if total <= 0.0 {
            return Err(Error::EmptySpectrum);
        }
        self.scaled(1.0 / total)
    }

    /// Two-column CSV with `#` comment lines carried before the header.
    pub fn to_csv(&self, comments: &[String]) -> String {
        let mut out = String::new();
        for c in comments {
            out.push_str("# ");
            out.push_str(c);
            out.push('\n');
        }
        out.push_str(SPECTRUM_CSV_HEADER);
        out.push('\n');
        for (w, d) in self.wavelengths_nm.iter().zip(&self.density) {
            out.push_str(&format!("{w},{d}\n"));
        }
        out
    }

    pub fn from_csv(src: &str, source_name: &str) -> Result<Self> {
        let mut wavelengths = Vec::new();
        let mut density = Vec::new();
        for (line, fields) in csv_rows(src, source_name, SPECTRUM_CSV_HEADER)? {
            wavelengths.push(parse_field(fields.first(), source_name, line, "wavelength_nm")?);
            density.push(parse_field(fields.get(1), source_name, line, "relative_density")?);
        }
        Self::new(wavelengths, density)
    }
}
