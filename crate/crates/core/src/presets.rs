//! Versioned preset files: materials, sources, fibres and detectors.
//!
//! The shipped presets are compiled in. If `BIPHOTON_PRESET_PATH` names a
//! directory, `<name>.toml` files there take precedence.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dispersion::{parse_toml, MaterialLibrary};
use crate::error::{Error, Result};
use crate::fiber::CalibrationCurve;
use crate::io::sha256_hex;
use crate::multilayer::{Incidence, StackSpec};
use crate::spdc::{EnhancementSide, FluorescenceConfig, SpdcConfig};
use crate::tagsim::{DetectorModel, Filter};

pub const PRESET_PATH_ENV: &str = "BIPHOTON_PRESET_PATH";
pub const PRESET_VERSION: u32 = 1;

const EMBEDDED: &[(&str, &str)] = &[
    ("materials", include_str!("../presets/materials.toml")),
    ("ln300", include_str!("../presets/ln300.toml")),
    ("gap400", include_str!("../presets/gap400.toml")),
    ("dcf150", include_str!("../presets/dcf150.toml")),
    ("snspd_vis", include_str!("../presets/snspd_vis.toml")),
    ("snspd_ir", include_str!("../presets/snspd_ir.toml")),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresetKind {
    Source,
    Fiber,
    Detector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSection {
    pub pump_wavelength_nm: f64,
    pub pump_power_mw: f64,
    pub d_eff_pm_per_v: f64,
    pub spectral_window_nm: (f64, f64),
    pub grid_points: usize,
    #[serde(default)]
    pub enhancement: EnhancementSide,
    #[serde(default)]
    pub incidence: Incidence,
}

/// Defaults for simulated measurements with this source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    /// Detector presets for channel 0 and channel 1.
    pub detectors: [String; 2],
    pub fiber: String,
    pub fiber_channel: u8,
    pub pair_rate_anchor: f64,
    #[serde(default = "half")]
    pub splitter_ratio: f64,
    #[serde(default)]
    pub common_filters: Vec<Filter>,
    pub bin_width_ps: u64,
    pub window_ps: u64,
    pub peak_halfwidth_ps: f64,
    pub window_s: f64,
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourcePreset {
    pub stack: StackSpec,
    pub source: SourceSection,
    pub fluorescence: Option<FluorescenceConfig>,
    pub experiment: ExperimentSection,
}

/// Values that replace the preset's `[source]` defaults.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SourceOverrides {
    pub pump_wavelength_nm: Option<f64>,
    pub pump_power_mw: Option<f64>,
    pub spectral_window_nm: Option<(f64, f64)>,
    pub grid_points: Option<usize>,
    pub nonlinear_thickness_nm: Option<f64>,
}

impl SourcePreset {
    pub fn spdc_config(&self, library: &MaterialLibrary, o: &SourceOverrides) -> Result<SpdcConfig> {
        let mut stack = self.stack.build(library)?;
        if let Some(t) = o.nonlinear_thickness_nm {
            stack = stack.with_nonlinear_thickness(t)?;
        }
        let s = &self.source;
        let cfg = SpdcConfig {
            stack,
            pump_wavelength_nm: o.pump_wavelength_nm.unwrap_or(s.pump_wavelength_nm),
            pump_power_mw: o.pump_power_mw.unwrap_or(s.pump_power_mw),
            d_eff_pm_per_v: s.d_eff_pm_per_v,
            spectral_window_nm: o.spectral_window_nm.unwrap_or(s.spectral_window_nm),
            grid_points: o.grid_points.unwrap_or(s.grid_points),
            enhancement: s.enhancement,
            incidence: s.incidence,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PresetBody {
    Source(Box<SourcePreset>),
    Fiber(CalibrationCurve),
    Detector(DetectorModel),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: String,
    pub aliases: Vec<String>,
    pub description: String,
    /// Where the preset came from: `builtin:<name>` or a file path.
    pub origin: String,
    /// sha256 of the preset text.
    pub hash: String,
    pub body: PresetBody,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PresetFile {
    version: u32,
    kind: PresetKind,
    name: String,
    #[serde(default)]
    aliases: Vec<String>,
    #[serde(default)]
    description: String,
    stack: Option<StackSpec>,
    source: Option<SourceSection>,
    fluorescence: Option<FluorescenceConfig>,
    experiment: Option<ExperimentSection>,
    calibration: Option<CalibrationCurve>,
    detector: Option<DetectorModel>,
}

fn missing(section: &str, origin: &str) -> Error {
    Error::config(format!("{origin}: [{section}]"), "section is required for this preset kind")
}

pub fn parse_preset(src: &str, origin: &str) -> Result<Preset> {
    let file: PresetFile = parse_toml(src, origin)?;
    if file.version != PRESET_VERSION {
        return Err(Error::config(
            format!("{origin}: version"),
            format!("unsupported preset version {}, expected {PRESET_VERSION}", file.version),
        ));
    }
    let body = match file.kind {
        PresetKind::Source => PresetBody::Source(Box::new(SourcePreset {
            stack: file.stack.ok_or_else(|| missing("stack", origin))?,
            source: file.source.ok_or_else(|| missing("source", origin))?,
            fluorescence: file.fluorescence,
            experiment: file.experiment.ok_or_else(|| missing("experiment", origin))?,
        })),
        PresetKind::Fiber => {
            let c = file.calibration.ok_or_else(|| missing("calibration", origin))?;
            c.validate()?;
            PresetBody::Fiber(c)
        }
        PresetKind::Detector => {
            let d = file.detector.ok_or_else(|| missing("detector", origin))?;
            d.validate()?;
            PresetBody::Detector(d)
        }
    };
    Ok(Preset {
        name: file.name,
        aliases: file.aliases,
        description: file.description,
        origin: origin.to_owned(),
        hash: sha256_hex(src.as_bytes()),
        body,
    })
}

/// Resolves preset names against an optional override directory and the
/// built-in set.
#[derive(Debug, Clone, Default)]
pub struct PresetStore {
    dir: Option<PathBuf>,
}

impl PresetStore {
    pub fn builtin() -> Self {
        Self { dir: None }
    }

    pub fn with_dir(dir: impl Into<PathBuf>) -> Self {
        Self { dir: Some(dir.into()) }
    }

    /// Honours `BIPHOTON_PRESET_PATH`.
    pub fn from_env() -> Self {
        match std::env::var_os(PRESET_PATH_ENV) {
            Some(d) if !d.is_empty() => Self::with_dir(d),
            _ => Self::builtin(),
        }
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    /// Raw text and origin of `<name>.toml`.
    fn text(&self, name: &str) -> Result<Option<(String, String)>> {
        if let Some(dir) = &self.dir {
            let path = dir.join(format!("{name}.toml"));
            if path.is_file() {
                return Ok(Some((crate::io::read_to_string(&path)?, path.display().to_string())));
            }
        }
        Ok(EMBEDDED
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(n, t)| (t.to_string(), format!("builtin:{n}"))))
    }

    pub fn materials(&self) -> Result<(MaterialLibrary, String)> {
        let (text, origin) = self.text("materials")?.expect("materials are embedded");
        Ok((MaterialLibrary::from_toml_str(&text, &origin)?, sha256_hex(text.as_bytes())))
    }

    /// All preset names known to the store (excluding materials).
    pub fn names(&self) -> Result<Vec<String>> {
        let mut names: Vec<String> = EMBEDDED.iter().map(|(n, _)| n.to_string()).collect();
        if let Some(dir) = &self.dir {
            if let Ok(entries) = std::fs::read_dir(dir) {
                for e in entries.flatten() {
                    let p = e.path();
                    if p.extension().is_some_and(|x| x == "toml") {
                        if let Some(stem) = p.file_stem().and_then(|s| s.to_str()) {
                            names.push(stem.to_owned());
                        }
                    }
                }
            }
        }
        names.retain(|n| n != "materials");
        names.sort();
        names.dedup();
        Ok(names)
    }

    pub fn get(&self, name: &str) -> Result<Preset> {
        if name != "materials" {
            if let Some((text, origin)) = self.text(name)? {
                return parse_preset(&text, &origin);
            }
        }
        for candidate in self.names()? {
            let (text, origin) = self.text(&candidate)?.expect("listed");
            let preset = parse_preset(&text, &origin)?;
            if preset.aliases.iter().any(|a| a == name) {
                return Ok(preset);
            }
        }
        Err(Error::config(
            "preset",
            format!("unknown preset `{name}`; known: {}", self.names()?.join(", ")),
        ))
    }

    pub fn source(&self, name: &str) -> Result<(SourcePreset, Preset)> {
        let p = self.get(name)?;
        match &p.body {
            PresetBody::Source(s) => Ok(((**s).clone(), p)),
            _ => Err(Error::config("preset", format!("`{name}` is not a source preset"))),
        }
    }

    pub fn fiber(&self, name: &str) -> Result<CalibrationCurve> {
        match self.get(name)?.body {
            PresetBody::Fiber(c) => Ok(c),
            _ => Err(Error::config("preset", format!("`{name}` is not a fiber preset"))),
        }
    }

    pub fn detector(&self, name: &str) -> Result<DetectorModel> {
        match self.get(name)?.body {
            PresetBody::Detector(d) => Ok(d),
            _ => Err(Error::config("preset", format!("`{name}` is not a detector preset"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_parse() {
        let store = PresetStore::builtin();
        let (lib, _) = store.materials().unwrap();
        for name in ["ln300", "gap400"] {
            let (src, _) = store.source(name).unwrap();
            src.spdc_config(&lib, &SourceOverrides::default()).unwrap();
        }
        assert_eq!(store.source("ln300_silica").unwrap().1.name, "ln300");
        assert_eq!(store.source("gap400_silica4um_sapphire").unwrap().1.name, "gap400");
        let c = store.fiber("dcf150").unwrap();
        assert_eq!(c.model.zdw_nm, 1500.0);
        assert_eq!(store.detector("snspd_vis").unwrap().jitter_sigma_ps, 50.0);
        assert_eq!(store.detector("snspd_ir").unwrap().jitter_sigma_ps, 80.0);
        assert!(store.detector("ln300").is_err());
        assert!(store.get("nope").unwrap_err().to_string().contains("known:"));
    }

    #[test]
    fn directory_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let text = include_str!("../presets/snspd_vis.toml").replace("50.0", "42.0");
        std::fs::write(dir.path().join("snspd_vis.toml"), text).unwrap();
        let store = PresetStore::with_dir(dir.path());
        assert_eq!(store.detector("snspd_vis").unwrap().jitter_sigma_ps, 42.0);
        assert_eq!(store.detector("snspd_ir").unwrap().jitter_sigma_ps, 80.0);
    }

    #[test]
    fn bad_preset_reports_location() {
        let err = parse_preset("version = 1\nkind = \"fiber\"\nname = 3\n", "x.toml").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        let err = parse_preset("version = 2\nkind = \"fiber\"\nname = \"x\"\n", "x.toml").unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }
}
