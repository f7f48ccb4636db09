//! Refractive-index models and the energy-conservation arithmetic of
//! three-wave mixing.
//!
//! All public interfaces take wavelengths in nanometres. Sellmeier
//! coefficients are stored the way they are usually published: pairs of
//! dimensionless oscillator strengths `B` and resonance terms `C` in µm².
//!
//! Material sets are loaded from a TOML document (see
//! `presets/materials.toml` for the shipped defaults):
//!
//! ```toml
//! version = 1
//!
//! [materials.fused_silica]
//! form = "sellmeier_lambda_squared"   # or "constant"
//! coefficients = [0.6961663, 0.0046791482, ...]  # B1, C1, B2, C2, ...
//! valid_range_nm = [210.0, 3710.0]
//! reference = "free text"               # optional
//! ```

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light in nm/ps.
pub const SPEED_OF_LIGHT_NM_PER_PS: f64 = 299_792.458;

/// Vacuum wavelength in nanometres.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Wavelength(f64);

/// Angular frequency in rad/ps.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct AngularFrequency(f64);

impl Wavelength {
    pub fn new(nm: f64) -> Result<Self> {
        if nm.is_finite() && nm > 0.0 {
            Ok(Self(nm))
        } else {
            Err(Error::Domain(format!("wavelength must be positive, got {nm} nm")))
        }
    }

    pub fn nm(self) -> f64 {
        self.0
    }

    pub fn to_angular_frequency(self) -> AngularFrequency {
        AngularFrequency(2.0 * PI * SPEED_OF_LIGHT_NM_PER_PS / self.0)
    }
}

impl AngularFrequency {
    pub fn new(rad_per_ps: f64) -> Result<Self> {
        if rad_per_ps.is_finite() && rad_per_ps > 0.0 {
            Ok(Self(rad_per_ps))
        } else {
            Err(Error::Domain(format!(
                "angular frequency must be positive, got {rad_per_ps} rad/ps"
            )))
        }
    }

    pub fn rad_per_ps(self) -> f64 {
        self.0
    }

    pub fn to_wavelength(self) -> Wavelength {
        Wavelength(2.0 * PI * SPEED_OF_LIGHT_NM_PER_PS / self.0)
    }
}

impl fmt::Display for Wavelength {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} nm", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DispersionForm {
    /// n² − 1 = Σ Bᵢ λ² / (λ² − Cᵢ), λ in µm, Cᵢ in µm².
    SellmeierLambdaSquared,
    /// n is the single coefficient.
    Constant,
}

/// Named refractive-index model with a hard validity range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialModel {
    name: String,
    form: DispersionForm,
    coefficients: Vec<f64>,
    valid_range_nm: (f64, f64),
}

/// Points used to check `n ≥ 1` when a model is constructed.
const VALIDATION_SCAN_POINTS: usize = 1024;

impl MaterialModel {
    pub fn new(
        name: impl Into<String>,
        form: DispersionForm,
        coefficients: Vec<f64>,
        valid_range_nm: (f64, f64),
    ) -> Result<Self> {
        let name = name.into();
        let prefix = name.clone();
        let key = |field: &str| format!("materials.{prefix}.{field}");
        let (lo, hi) = valid_range_nm;
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo < hi) {
            return Err(Error::config(
                key("valid_range_nm"),
                format!("need 0 < min < max, got [{lo}, {hi}]"),
            ));
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::config(key("coefficients"), "all coefficients must be finite"));
        }
        match form {
            DispersionForm::Constant if coefficients.len() != 1 => {
                return Err(Error::config(
                    key("coefficients"),
                    format!("constant form takes exactly one value, got {}", coefficients.len()),
                ));
            }
            DispersionForm::SellmeierLambdaSquared
                if coefficients.is_empty() || coefficients.len() % 2 != 0 =>
            {
                return Err(Error::config(
                    key("coefficients"),
                    format!(
                        "sellmeier form takes (B, C) pairs, got {} values",
                        coefficients.len()
                    ),
                ));
            }
            _ => {}
        }
        let model = Self {
            name,
            form,
            coefficients,
            valid_range_nm,
        };
        for i in 0..VALIDATION_SCAN_POINTS {
            let lambda = lo + (hi - lo) * i as f64 / (VALIDATION_SCAN_POINTS - 1) as f64;
            let n = model.eval_unchecked(lambda);
            if !(n.is_finite() && n >= 1.0) {
                return Err(Error::config(
                    key("coefficients"),
                    format!("index {n} at {lambda} nm; models must give finite n >= 1 on their valid range"),
                ));
            }
        }
        Ok(model)
    }

    pub fn constant(name: impl Into<String>, n: f64, valid_range_nm: (f64, f64)) -> Result<Self> {
        Self::new(name, DispersionForm::Constant, vec![n], valid_range_nm)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn form(&self) -> DispersionForm {
        self.form
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn valid_range_nm(&self) -> (f64, f64) {
        self.valid_range_nm
    }

    pub fn contains(&self, lambda_nm: f64) -> bool {
        lambda_nm >= self.valid_range_nm.0 && lambda_nm <= self.valid_range_nm.1
    }

    /// Refractive index at `lambda_nm`; errors outside the valid range.
    pub fn refractive_index(&self, lambda_nm: f64) -> Result<f64> {
        if !self.contains(lambda_nm) {
            return Err(Error::Range {
                what: "material",
                name: self.name.clone(),
                wavelength_nm: lambda_nm,
                min_nm: self.valid_range_nm.0,
                max_nm: self.valid_range_nm.1,
            });
        }
        Ok(self.eval_unchecked(lambda_nm))
    }

    fn eval_unchecked(&self, lambda_nm: f64) -> f64 {
        match self.form {
            DispersionForm::Constant => self.coefficients[0],
            DispersionForm::SellmeierLambdaSquared => {
                let l2 = (lambda_nm * 1e-3).powi(2);
                let sum: f64 = self
                    .coefficients
                    .chunks_exact(2)
                    .map(|bc| bc[0] * l2 / (l2 - bc[1]))
                    .sum();
                (1.0 + sum).sqrt()
            }
        }
    }
}

/// Named collection of material models, as read from a materials file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MaterialLibrary {
    materials: BTreeMap<String, MaterialModel>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MaterialsFile {
    version: u32,
    materials: BTreeMap<String, MaterialEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MaterialEntry {
    form: DispersionForm,
    coefficients: Vec<f64>,
    valid_range_nm: [f64; 2],
    #[allow(dead_code)]
    reference: Option<String>,
}

impl MaterialLibrary {
    pub fn from_toml_str(src: &str, source_name: &str) -> Result<Self> {
        let file: MaterialsFile = parse_toml(src, source_name)?;
        if file.version != 1 {
            return Err(Error::config(
                "version",
                format!("unsupported materials file version {}", file.version),
            ));
        }
        let mut materials = BTreeMap::new();
        for (name, entry) in file.materials {
            let model = MaterialModel::new(
                name.clone(),
                entry.form,
                entry.coefficients,
                (entry.valid_range_nm[0], entry.valid_range_nm[1]),
            )?;
            materials.insert(name, model);
        }
        Ok(Self { materials })
    }

    pub fn insert(&mut self, model: MaterialModel) {
        self.materials.insert(model.name().to_owned(), model);
    }

    pub fn get(&self, name: &str) -> Result<&MaterialModel> {
        self.materials.get(name).ok_or_else(|| {
            Error::config(
                name.to_owned(),
                format!(
                    "unknown material; known: {}",
                    self.materials.keys().cloned().collect::<Vec<_>>().join(", ")
                ),
            )
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = &MaterialModel> {
        self.materials.values()
    }

    pub fn len(&self) -> usize {
        self.materials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.materials.is_empty()
    }
}

/// Deserializes TOML, turning span information into a line/column location.
pub(crate) fn parse_toml<T: serde::de::DeserializeOwned>(src: &str, source_name: &str) -> Result<T> {
    toml::from_str(src).map_err(|e| {
        let location = match e.span() {
            Some(span) => {
                let before = &src[..span.start.min(src.len())];
                let line = before.matches('\n').count() + 1;
                let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
                format!("line {line}, column {column}")
            }
            None => "unknown location".to_owned(),
        };
        Error::Parse {
            source_name: source_name.to_owned(),
            location,
            message: e.message().to_owned(),
        }
    })
}

/// Idler wavelength fixed by energy conservation, 1/λi = 1/λp − 1/λs.
pub fn conjugate_wavelength(pump_nm: f64, signal_nm: f64) -> Result<f64> {
    if !(pump_nm > 0.0 && pump_nm.is_finite() && signal_nm.is_finite()) {
        return Err(Error::Domain(format!(
            "non-physical wavelengths pump={pump_nm} nm signal={signal_nm} nm"
        )));
    }
    if signal_nm <= pump_nm {
        return Err(Error::Domain(format!(
            "signal {signal_nm} nm must be longer than pump {pump_nm} nm"
        )));
    }
    Ok(pump_nm * signal_nm / (signal_nm - pump_nm))
}

/// Collinear phase mismatch Δk = 2π(n_p/λp − n_s/λs − n_i/λi) in rad/nm.
///
/// The idler term is expanded through energy conservation so that equal
/// indices cancel exactly rather than to rounding error.
pub fn phase_mismatch(
    pump_nm: f64,
    signal_nm: f64,
    n_pump: f64,
    n_signal: f64,
    n_idler: f64,
) -> Result<f64> {
    conjugate_wavelength(pump_nm, signal_nm)?;
    for (label, n) in [("pump", n_pump), ("signal", n_signal), ("idler", n_idler)] {
        if !(n.is_finite() && n >= 1.0) {
            return Err(Error::Domain(format!("{label} index {n} must be finite and >= 1")));
        }
    }
    Ok(2.0 * PI * ((n_pump - n_idler) / pump_nm - (n_signal - n_idler) / signal_nm))
}
