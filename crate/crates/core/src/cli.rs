//! `biphoton` command line.
//!
//! Every subcommand writes its outputs atomically into `--out-dir` together
//! with `<subcommand>.manifest.json`:
//!
//! ```text
//! {
//!   "tool": "biphoton", "version": "...", "subcommand": "...",
//!   "config": { ...parsed arguments... },
//!   "seed": 42 | null,
//!   "config_hash": "<sha256 of the config JSON>",
//!   "presets": [{ "name", "origin", "sha256" }],
//!   "inputs":  [{ "path", "sha256" }],
//!   "outputs": [{ "path", "sha256" }],
//!   "notes": [ ... ]
//! }
//! ```
//!
//! File hashes are git-style object hashes (`sha256("blob <len>\0" + bytes)`).
//! Output paths are relative to the output directory, so identical runs give
//! identical manifests.
//!
//! Exit codes: 0 success, 1 runtime error, 2 usage error, 3 invalid
//! configuration. Errors are a single line on stderr:
//! `error kind=<tag> exit=<code> message=<json string>`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::coincidence::{
    car_and_rate_with, histogram, shifted_window_accidentals, Accidentals, CoincidenceHistogram, HistogramMetadata,
    HISTOGRAM_CSV_HEADER,
};
use crate::error::{Error, ErrorKind, Result};
use crate::experiment::{fluorescence_source, FiberExperiment};
use crate::fiber::{calibration_edge, fit_calibration, points_from_csv, points_to_csv, CalibrationCurve, CalibrationFit, CalibrationPoint, FitMode};
use crate::io::{read_bytes, sha256_hex, write_atomic};
use crate::multilayer::{internal_intensity_factor_from, stack_response, Incidence, StackSpec};
use crate::plot::{Plot, Series, SeriesStyle};
use crate::presets::{Preset, PresetStore, SourceOverrides};
use crate::reconstruct::{reconstruct_spectrum, spectral_width, EfficiencyCorrection, ReconstructOptions, Reconstruction};
use crate::spdc::{spdc_spectral_density, EnhancementSide};
use crate::spectrum::{SampledSpectrum, SPECTRUM_CSV_HEADER};
use crate::tagsim::{
    read_binary, read_csv, simulate, simulate_thermal, write_binary, write_csv, BinaryTagWriter, FiberArm, Filter,
    Routing, RunConfig, ThermalConfig, TimeTagStream, TAG_FILE_MAGIC,
};

#[derive(Debug, Parser)]
#[command(name = "biphoton", version, about = "Thin-film SPDC simulation and fibre-spectroscopy analysis")]
pub struct Cli {
    /// Cap on worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Directory for outputs and the run manifest.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// List materials, optionally evaluating n(λ).
    Materials(MaterialsArgs),
    /// Reflectance, transmittance and field enhancement of a stack.
    Stack(StackArgs),
    /// SPDC (and fluorescence) spectral density of a source preset.
    Spectrum(SpectrumArgs),
    /// Simulate a two-channel time-tag stream.
    Simulate(SimulateArgs),
    /// Simulate thermal light on two channels.
    Thermal(ThermalArgs),
    /// Cross-correlation histogram of a tag file.
    Histogram(HistogramArgs),
    /// CAR and pair rate of a histogram.
    Analyze(AnalyzeArgs),
    /// Fit a fibre calibration curve to filter-edge points.
    Calibrate(CalibrateArgs),
    /// Convert a fibre histogram into a spectrum.
    Reconstruct(ReconstructArgs),
    /// spectrum → tags → histogram → reconstruction, with an L1 report.
    Pipeline(PipelineArgs),
    /// Render a CSV output as SVG.
    Plot(PlotArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct MaterialsArgs {
    /// Evaluate every material at this wavelength (nm).
    #[arg(long)]
    pub wavelength: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
pub enum Side {
    Superstrate,
    Substrate,
}

impl From<Side> for Incidence {
    fn from(s: Side) -> Self {
        match s {
            Side::Superstrate => Incidence::Superstrate,
            Side::Substrate => Incidence::Substrate,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct StackArgs {
    /// Source preset whose stack is used.
    #[arg(long, conflicts_with = "stack")]
    pub preset: Option<String>,
    /// TOML stack description (superstrate, layers, substrate, ...).
    #[arg(long)]
    pub stack: Option<PathBuf>,
    /// Wavelength range `min:max` in nm.
    #[arg(long, value_parser = parse_range, default_value = "800:1600")]
    pub range: (f64, f64),
    #[arg(long, default_value_t = 1001)]
    pub points: usize,
    #[arg(long, value_enum, default_value = "superstrate")]
    pub incidence: Side,
    #[arg(long, default_value = "stack.csv")]
    pub out: String,
}

#[derive(Debug, Args, Serialize)]
pub struct SourceArgs {
    /// Source preset (ln300, gap400, ...).
    #[arg(long, default_value = "ln300")]
    pub preset: String,
    /// Pump wavelength in nm.
    #[arg(long)]
    pub pump: Option<f64>,
    /// Spectral window `min:max` in nm.
    #[arg(long, value_parser = parse_range)]
    pub window: Option<(f64, f64)>,
    #[arg(long)]
    pub points: Option<usize>,
    /// Pump power in mW.
    #[arg(long)]
    pub power: Option<f64>,
    /// Nonlinear film thickness in nm.
    #[arg(long)]
    pub thickness: Option<f64>,
}

impl SourceArgs {
    fn overrides(&self) -> SourceOverrides {
        SourceOverrides {
            pump_wavelength_nm: self.pump,
            pump_power_mw: self.power,
            spectral_window_nm: self.window,
            grid_points: self.points,
            nonlinear_thickness_nm: self.thickness,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
pub enum Enhancement {
    Both,
    Detection,
    Pump,
    None,
}

#[derive(Debug, Args, Serialize)]
pub struct SpectrumArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Override the preset's Fabry-Perot factors.
    #[arg(long, value_enum)]
    pub enhancement: Option<Enhancement>,
    /// Also write the fluorescence spectrum.
    #[arg(long)]
    pub fluorescence: bool,
    #[arg(long, default_value = "spectrum.csv")]
    pub out: String,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
pub enum Mode {
    /// One arm through the preset's dispersive fibre.
    Fiber,
    /// Direct detection on both channels.
    Correlation,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
pub enum TagFormat {
    Bin,
    Csv,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Use this spectrum CSV instead of computing one from the preset.
    #[arg(long)]
    pub spectrum: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "fiber")]
    pub mode: Mode,
    /// Expected true coincidences for the run (sets the duration).
    #[arg(long, value_parser = parse_count, conflicts_with = "duration")]
    pub pairs: Option<f64>,
    /// Acquisition time in seconds.
    #[arg(long)]
    pub duration: Option<f64>,
    /// Emitted pairs per second (overrides the preset).
    #[arg(long)]
    pub rate_anchor: Option<f64>,
    /// Band-pass filter `center:fwhm` in nm in front of both detectors.
    #[arg(long, value_parser = parse_range)]
    pub bandpass: Option<(f64, f64)>,
    /// `fifty-fifty` or `dichroic:<split nm>[:<blue channel>]`.
    #[arg(long, default_value = "fifty-fifty")]
    pub routing: String,
    #[arg(long)]
    pub no_fluorescence: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "bin")]
    pub format: TagFormat,
    #[arg(long, default_value = "tags.bin")]
    pub out: String,
}

#[derive(Debug, Args, Serialize)]
pub struct ThermalArgs {
    /// Detected events per second, both channels.
    #[arg(long, value_parser = parse_count, default_value = "1e4")]
    pub rate: f64,
    /// Intensity coherence time, e.g. `10ns` or `inf`.
    #[arg(long, value_parser = parse_time_ps, default_value = "10ns")]
    pub coherence: f64,
    #[arg(long, default_value_t = 10.0)]
    pub duration: f64,
    /// Detector jitter σ per channel, e.g. `50ps,80ps`.
    #[arg(long, value_parser = parse_time_pair, default_value = "0,0")]
    pub jitter: (f64, f64),
    #[arg(long, default_value_t = 0.5)]
    pub splitter: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "bin")]
    pub format: TagFormat,
    #[arg(long, default_value = "thermal_tags.bin")]
    pub out: String,
}

#[derive(Debug, Args, Serialize)]
pub struct HistogramArgs {
    /// Tag file (binary or CSV).
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, value_parser = parse_time_ps, default_value = "50ps")]
    pub bin: f64,
    #[arg(long, value_parser = parse_time_ps, default_value = "50ns")]
    pub window: f64,
    #[arg(long, default_value = "histogram.csv")]
    pub out: String,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
pub enum AccidentalSource {
    Sidebands,
    Shifted,
}

#[derive(Debug, Args, Serialize)]
pub struct AnalyzeArgs {
    /// Histogram CSV; its JSON sidecar is read from `--meta` or next to it.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub meta: Option<PathBuf>,
    /// Half-width of the coincidence peak, e.g. `500ps`.
    #[arg(long, value_parser = parse_time_ps)]
    pub peak_halfwidth: f64,
    #[arg(long, value_enum, default_value = "sidebands")]
    pub accidentals: AccidentalSource,
    /// Tag file for `--accidentals shifted`.
    #[arg(long)]
    pub tags: Option<PathBuf>,
    /// Delay of the shifted window.
    #[arg(long, value_parser = parse_time_ps, default_value = "1us")]
    pub shift: f64,
    #[arg(long, default_value = "analysis.json")]
    pub out: String,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
pub enum FitKind {
    Offset,
    OffsetLength,
}

#[derive(Debug, Args, Serialize)]
pub struct CalibrateArgs {
    /// Fibre preset providing the model.
    #[arg(long, default_value = "dcf150")]
    pub fiber: String,
    /// CSV of `cuton_nm,edge_dt_ps` points.
    #[arg(long, conflicts_with = "edge")]
    pub points: Option<PathBuf>,
    /// `<cut-on nm>=<histogram.csv>`; the edge is read from the histogram.
    #[arg(long)]
    pub edge: Vec<String>,
    /// Smoothing span for edge finding; keep it below half the plateau width.
    #[arg(long, value_parser = parse_time_ps, default_value = "200ps")]
    pub shoulder: f64,
    #[arg(long, value_enum, default_value = "offset")]
    pub fit: FitKind,
    /// Valid window `min:max` nm (defaults to the preset's window).
    #[arg(long, value_parser = parse_range)]
    pub window: Option<(f64, f64)>,
    #[arg(long, default_value = "calibration.json")]
    pub out: String,
}

#[derive(Debug, Args, Serialize)]
pub struct ReconstructArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub meta: Option<PathBuf>,
    /// Fitted calibration JSON (from `calibrate`).
    #[arg(long, conflicts_with = "fiber")]
    pub calibration: Option<PathBuf>,
    /// Fibre preset used as the calibration.
    #[arg(long)]
    pub fiber: Option<String>,
    /// Detector presets on channel 0 and 1, e.g. `snspd_vis,snspd_ir`.
    #[arg(long, requires = "pump")]
    pub efficiency: Option<String>,
    #[arg(long)]
    pub pump: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub fiber_channel: u8,
    /// Keep density per ps of delay (no Jacobian).
    #[arg(long)]
    pub raw_timeaxis: bool,
    /// Combined jitter σ for the resolution report.
    #[arg(long, value_parser = parse_time_ps)]
    pub jitter: Option<f64>,
    #[arg(long, default_value = "spectrum_reconstructed.csv")]
    pub out: String,
}

#[derive(Debug, Args, Serialize)]
pub struct PipelineArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Expected true coincidences.
    #[arg(long, value_parser = parse_count, default_value = "1e6")]
    pub pairs: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Do not write the tag file.
    #[arg(long)]
    pub skip_tags: bool,
    /// Also render SVG plots.
    #[arg(long)]
    pub plots: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct PlotArgs {
    /// Spectrum, histogram or stack CSV.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Overlay a second CSV of the same kind (both normalised to peak 1).
    #[arg(long)]
    pub compare: Option<PathBuf>,
    #[arg(long)]
    pub log_y: bool,
    #[arg(long)]
    pub title: Option<String>,
    #[arg(long, default_value = "plot.svg")]
    pub out: String,
}

/// Number with an optional time unit (fs, ps, ns, us, µs, ms, s), in ps.
/// A bare number is taken as ps. `inf` is accepted.
pub fn parse_time_ps(s: &str) -> std::result::Result<f64, String> {
    let s = s.trim();
    if s.eq_ignore_ascii_case("inf") {
        return Ok(f64::INFINITY);
    }
    let (num, scale) = [("fs", 1e-3), ("ps", 1.0), ("ns", 1e3), ("us", 1e6), ("µs", 1e6), ("ms", 1e9), ("s", 1e12)]
        .iter()
        .find_map(|(u, k)| s.strip_suffix(u).map(|n| (n, *k)))
        .unwrap_or((s, 1.0));
    let value: f64 = num.trim().parse().map_err(|_| format!("`{s}` is not a time"))?;
    let v = value * scale;
    if v.is_nan() || v < 0.0 {
        return Err(format!("`{s}` must be >= 0"));
    }
    Ok(v)
}

fn parse_time_pair(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected `a,b`, got `{s}`"))?;
    Ok((parse_time_ps(a)?, parse_time_ps(b)?))
}

/// `a:b` as two numbers.
pub fn parse_range(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected `min:max`, got `{s}`"))?;
    let a: f64 = a.trim().parse().map_err(|_| format!("`{a}` is not a number"))?;
    let b: f64 = b.trim().parse().map_err(|_| format!("`{b}` is not a number"))?;
    Ok((a, b))
}

fn parse_count(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("`{s}` is not a number"))?;
    if !(v.is_finite() && v >= 0.0) {
        return Err(format!("`{s}` must be finite and >= 0"));
    }
    Ok(v)
}

/// Git-style object hash of file contents.
pub fn object_hash(bytes: &[u8]) -> String {
    let mut data = format!("blob {}\0", bytes.len()).into_bytes();
    data.extend_from_slice(bytes);
    sha256_hex(&data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresetRef {
    pub name: String,
    pub origin: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub config: Value,
    pub seed: Option<u64>,
    pub config_hash: String,
    pub presets: Vec<PresetRef>,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    pub notes: Vec<String>,
}

struct Ctx {
    out_dir: PathBuf,
    manifest: Manifest,
}

impl Ctx {
    fn new(out_dir: &Path, subcommand: &str, config: Value, seed: Option<u64>) -> Result<Self> {
        std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let config_hash = sha256_hex(config.to_string().as_bytes());
        Ok(Self {
            out_dir: out_dir.to_owned(),
            manifest: Manifest {
                tool: "biphoton".into(),
                version: env!("CARGO_PKG_VERSION").into(),
                subcommand: subcommand.into(),
                config,
                seed,
                config_hash,
                presets: Vec::new(),
                inputs: Vec::new(),
                outputs: Vec::new(),
                notes: Vec::new(),
            },
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(name);
        write_atomic(&path, bytes)?;
        self.record_output(name, bytes);
        Ok(path)
    }

    fn record_output(&mut self, name: &str, bytes: &[u8]) {
        self.manifest.outputs.push(FileHash {
            path: name.to_owned(),
            sha256: object_hash(bytes),
        });
    }

    fn read(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = read_bytes(path)?;
        self.manifest.inputs.push(FileHash {
            path: path.display().to_string(),
            sha256: object_hash(&bytes),
        });
        Ok(bytes)
    }

    fn read_text(&mut self, path: &Path) -> Result<String> {
        let bytes = self.read(path)?;
        String::from_utf8(bytes).map_err(|e| Error::Parse {
            source_name: path.display().to_string(),
            location: format!("byte {}", e.utf8_error().valid_up_to()),
            message: "not UTF-8 text".into(),
        })
    }

    fn preset(&mut self, p: &Preset) {
        if !self.manifest.presets.iter().any(|r| r.name == p.name) {
            self.manifest.presets.push(PresetRef {
                name: p.name.clone(),
                origin: p.origin.clone(),
                sha256: p.hash.clone(),
            });
        }
    }

    fn note(&mut self, s: impl Into<String>) {
        let s = s.into();
        eprintln!("note: {s}");
        self.manifest.notes.push(s);
    }

    fn finish(mut self) -> Result<()> {
        let name = format!("{}.manifest.json", self.manifest.subcommand);
        let body = serde_json::to_vec_pretty(&self.manifest).expect("manifest serializes");
        write_atomic(&self.path(&name), &body)?;
        self.manifest.outputs.clear();
        Ok(())
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("arguments serialize")
}

fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    let mut b = serde_json::to_vec_pretty(v).expect("serializable");
    b.push(b'\n');
    b
}

/// Reads a tag file, binary or CSV. A zero-length file is an empty stream.
pub fn read_tags(bytes: &[u8], source_name: &str) -> Result<TimeTagStream> {
    if bytes.is_empty() {
        return Ok(TimeTagStream::default());
    }
    if bytes.starts_with(&TAG_FILE_MAGIC) {
        return read_binary(bytes, source_name);
    }
    let text = std::str::from_utf8(bytes).map_err(|_| Error::Parse {
        source_name: source_name.to_owned(),
        location: "byte 0".into(),
        message: "neither a binary tag file nor UTF-8 CSV".into(),
    })?;
    read_csv(text, source_name)
}

fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

fn load_histogram(ctx: &mut Ctx, csv: &Path, meta: Option<&Path>) -> Result<CoincidenceHistogram> {
    let meta_path = meta.map_or_else(|| sidecar_path(csv), Path::to_path_buf);
    let meta_text = ctx.read_text(&meta_path)?;
    let meta: HistogramMetadata = serde_json::from_str(&meta_text).map_err(|e| Error::Parse {
        source_name: meta_path.display().to_string(),
        location: format!("line {}, column {}", e.line(), e.column()),
        message: e.to_string(),
    })?;
    let text = ctx.read_text(csv)?;
    CoincidenceHistogram::from_csv(&text, &csv.display().to_string(), &meta)
}

fn write_histogram(ctx: &mut Ctx, name: &str, h: &CoincidenceHistogram) -> Result<()> {
    ctx.write(name, h.to_csv().as_bytes())?;
    let meta = h.metadata(None);
    ctx.write(&sidecar_name(name), &json_bytes(&meta))?;
    Ok(())
}

fn sidecar_name(name: &str) -> String {
    Path::new(name).with_extension("json").display().to_string()
}

fn tag_bytes(stream: &TimeTagStream, format: TagFormat) -> Vec<u8> {
    match format {
        TagFormat::Bin => write_binary(stream),
        TagFormat::Csv => write_csv(stream).into_bytes(),
    }
}

fn enhancement(e: Enhancement) -> EnhancementSide {
    match e {
        Enhancement::Both => EnhancementSide::Both,
        Enhancement::Detection => EnhancementSide::Detection,
        Enhancement::Pump => EnhancementSide::Pump,
        Enhancement::None => EnhancementSide::None,
    }
}

fn parse_routing(s: &str) -> Result<Routing> {
    if s == "fifty-fifty" || s == "fifty_fifty" {
        return Ok(Routing::FiftyFifty);
    }
    let bad = || Error::config("routing", format!("expected `fifty-fifty` or `dichroic:<nm>[:<channel>]`, got `{s}`"));
    let rest = s.strip_prefix("dichroic:").ok_or_else(bad)?;
    let mut parts = rest.split(':');
    let split_nm: f64 = parts.next().and_then(|p| p.parse().ok()).ok_or_else(bad)?;
    let blue_channel: u8 = match parts.next() {
        Some(c) => c.parse().map_err(|_| bad())?,
        None => 1,
    };
    Ok(Routing::Dichroic { split_nm, blue_channel })
}

fn cmd_materials(ctx: &mut Ctx, store: &PresetStore, a: &MaterialsArgs) -> Result<()> {
    let (lib, hash) = store.materials()?;
    ctx.manifest.presets.push(PresetRef {
        name: "materials".into(),
        origin: store.dir().map_or("builtin:materials".into(), |d| d.display().to_string()),
        sha256: hash,
    });
    let mut csv = String::from("name,form,min_nm,max_nm,index\n");
    for m in lib.iter() {
        let name = m.name();
        let index = match a.wavelength {
            Some(l) if m.contains(l) => format!("{:.6}", m.refractive_index(l)?),
            _ => String::new(),
        };
        let (lo, hi) = m.valid_range_nm();
        let form = serde_json::to_value(m.form()).expect("form").as_str().unwrap_or("").to_owned();
        println!("{name:<20} {form:<26} [{lo}, {hi}] nm {index}");
        let _ = writeln!(csv, "{name},{form},{lo},{hi},{index}");
    }
    ctx.write("materials.csv", csv.as_bytes())?;
    Ok(())
}

fn cmd_stack(ctx: &mut Ctx, store: &PresetStore, a: &StackArgs) -> Result<()> {
    let (lib, _) = store.materials()?;
    let spec: StackSpec = match (&a.preset, &a.stack) {
        (_, Some(path)) => {
            let text = ctx.read_text(path)?;
            crate::dispersion::parse_toml(&text, &path.display().to_string())?
        }
        (name, None) => {
            let (src, p) = store.source(name.as_deref().unwrap_or("gap400"))?;
            ctx.preset(&p);
            src.stack
        }
    };
    let stack = spec.build(&lib)?;
    if a.points < 2 || !(a.range.0 < a.range.1) {
        return Err(Error::config("range", "need min < max and at least 2 points"));
    }
    let idx = stack.nonlinear_layer_index();
    let side = Incidence::from(a.incidence);
    let mut csv = String::from("wavelength_nm,reflectance,transmittance,enhancement\n");
    let mut worst: f64 = 0.0;
    for l in SampledSpectrum::uniform_grid(a.range.0, a.range.1, a.points) {
        let s = match side {
            Incidence::Superstrate => stack_response(&stack, l)?,
            Incidence::Substrate => stack_response(&stack.reversed(), l)?,
        };
        let f = internal_intensity_factor_from(&stack, idx, l, side)?;
        worst = worst.max((s.reflectance + s.transmittance - 1.0).abs());
        let _ = writeln!(csv, "{l},{},{},{f}", s.reflectance, s.transmittance);
    }
    println!("max |R + T - 1| = {worst:.3e}");
    ctx.write(&a.out, csv.as_bytes())?;
    Ok(())
}

fn cmd_spectrum(ctx: &mut Ctx, store: &PresetStore, a: &SpectrumArgs) -> Result<()> {
    let (lib, _) = store.materials()?;
    let (src, p) = store.source(&a.source.preset)?;
    ctx.preset(&p);
    let mut cfg = src.spdc_config(&lib, &a.source.overrides())?;
    if let Some(e) = a.enhancement {
        cfg.enhancement = enhancement(e);
    }
    let plan = cfg.plan_window()?;
    for w in &plan.warnings {
        ctx.note(w.clone());
    }
    let spectrum = spdc_spectral_density(&cfg)?;
    let comments = vec![
        format!("biphoton spectrum, preset {} ({})", p.name, p.origin),
        format!("config_hash={}", ctx.manifest.config_hash),
        format!("pump_nm={} window_nm={}:{}", cfg.pump_wavelength_nm, plan.window_nm.0, plan.window_nm.1),
    ];
    ctx.write(&a.out, spectrum.to_csv(&comments).as_bytes())?;
    println!("{} points over [{}, {}] nm", spectrum.len(), plan.window_nm.0, plan.window_nm.1);
    if a.fluorescence {
        match &src.fluorescence {
            Some(f) => {
                let film = cfg.stack.nonlinear_layer().thickness_nm;
                let fl = crate::spdc::fluorescence_density(f, plan.window_nm, cfg.grid_points, film, cfg.pump_power_mw)?;
                let name = format!("{}_fluorescence.csv", Path::new(&a.out).with_extension("").display());
                ctx.write(&name, fl.to_csv(&comments[..2]).as_bytes())?;
            }
            None => ctx.note("preset has no fluorescence model"),
        }
    }
    Ok(())
}

fn cmd_simulate(ctx: &mut Ctx, store: &PresetStore, a: &SimulateArgs) -> Result<()> {
    let (lib, _) = store.materials()?;
    let (src, p) = store.source(&a.source.preset)?;
    ctx.preset(&p);
    let cfg = src.spdc_config(&lib, &a.source.overrides())?;
    let spectrum = match &a.spectrum {
        Some(path) => {
            let text = ctx.read_text(path)?;
            SampledSpectrum::from_csv(&text, &path.display().to_string())?
        }
        None => spdc_spectral_density(&cfg)?,
    };
    let ex = &src.experiment;
    let detectors = [store.detector(&ex.detectors[0])?, store.detector(&ex.detectors[1])?];
    for name in &ex.detectors {
        ctx.preset(&store.get(name)?);
    }
    let mut run = RunConfig::new(1.0, cfg.pump_wavelength_nm, a.seed);
    run.pair_rate_anchor = a.rate_anchor.unwrap_or(ex.pair_rate_anchor);
    run.spdc_spectrum = Some(spectrum);
    run.splitter_ratio = ex.splitter_ratio;
    run.common_filters = ex.common_filters.clone();
    if let Some((center_nm, fwhm_nm)) = a.bandpass {
        run.common_filters.push(Filter::Bandpass { center_nm, fwhm_nm });
    }
    run.routing = parse_routing(&a.routing)?;
    run.window_s = ex.window_s;
    if a.mode == Mode::Fiber {
        ctx.preset(&store.get(&ex.fiber)?);
        run.fiber_arm = Some(FiberArm {
            calibration: store.fiber(&ex.fiber)?,
            channel: ex.fiber_channel,
        });
    }
    if !a.no_fluorescence {
        if let Some(f) = &src.fluorescence {
            run.fluorescence =
                fluorescence_source(f, cfg.pump_wavelength_nm, cfg.stack.nonlinear_layer().thickness_nm, cfg.pump_power_mw)?;
        }
    }
    let expected = run.expected_rates(&detectors)?;
    run.duration_s = match (a.pairs, a.duration) {
        (Some(n), _) => {
            if !(expected.true_coincidences_per_s > 0.0) {
                return Err(Error::config("pairs", "configuration yields no coincidences"));
            }
            n / expected.true_coincidences_per_s
        }
        (None, Some(d)) => d,
        (None, None) => 1.0,
    };
    let stream = simulate(&run, &detectors)?;
    let counts = stream.channel_counts();
    println!(
        "{:.3} s, {} tags (ch0 {}, ch1 {}); expected true coincidences {:.4} /s",
        run.duration_s,
        stream.len(),
        counts[0],
        counts[1],
        expected.true_coincidences_per_s
    );
    ctx.write(&a.out, &tag_bytes(&stream, a.format))?;
    let report = json!({ "duration_s": run.duration_s, "expected": expected, "tags": stream.len(), "channel_counts": counts });
    ctx.write(&sidecar_name(&a.out), &json_bytes(&report))?;
    Ok(())
}

fn cmd_thermal(ctx: &mut Ctx, a: &ThermalArgs) -> Result<()> {
    let mut cfg = ThermalConfig::new(a.duration, a.rate, a.coherence, a.seed);
    cfg.jitter_sigma_ps = [a.jitter.0, a.jitter.1];
    cfg.splitter_ratio = a.splitter;
    let stream = simulate_thermal(&cfg)?;
    println!("{} tags over {} s", stream.len(), a.duration);
    ctx.write(&a.out, &tag_bytes(&stream, a.format))?;
    Ok(())
}

fn to_ps_u64(v: f64, key: &str) -> Result<u64> {
    if !(v.is_finite() && v >= 1.0 && v.fract() == 0.0) {
        return Err(Error::config(key, format!("{v} ps must be a positive whole number of ps")));
    }
    Ok(v as u64)
}

fn cmd_histogram(ctx: &mut Ctx, a: &HistogramArgs) -> Result<()> {
    let bytes = ctx.read(&a.input)?;
    let stream = read_tags(&bytes, &a.input.display().to_string())?;
    let h = histogram(&stream, to_ps_u64(a.bin, "bin")?, to_ps_u64(a.window, "window")?)?;
    println!("{} coincidences in {} bins", h.total(), h.len());
    write_histogram(ctx, &a.out, &h)
}

fn cmd_analyze(ctx: &mut Ctx, a: &AnalyzeArgs) -> Result<()> {
    let h = load_histogram(ctx, &a.input, a.meta.as_deref())?;
    let acc = match a.accidentals {
        AccidentalSource::Sidebands => Accidentals::Sidebands,
        AccidentalSource::Shifted => {
            let path = a
                .tags
                .as_ref()
                .ok_or_else(|| Error::config("tags", "`--accidentals shifted` needs `--tags`"))?;
            let bytes = ctx.read(path)?;
            let stream = read_tags(&bytes, &path.display().to_string())?;
            let (level, sigma) =
                shifted_window_accidentals(&stream, h.bin_width_ps(), to_ps_u64(a.shift, "shift")?, h.window_ps())?;
            Accidentals::External { level, sigma }
        }
    };
    let r = car_and_rate_with(&h, a.peak_halfwidth, acc)?;
    println!(
        "pair rate {:.4} ± {:.4} Hz, CAR {}",
        r.pair_rate_hz,
        r.pair_rate_sigma_hz,
        match r.car {
            crate::coincidence::CarValue::Finite { value, sigma } => format!("{value:.3} ± {sigma:.3}"),
            crate::coincidence::CarValue::Unbounded => "unbounded (no accidentals)".into(),
            crate::coincidence::CarValue::Undefined => "undefined (empty histogram)".into(),
        }
    );
    let meta = h.metadata(Some(r));
    ctx.write(&a.out, &json_bytes(&meta))?;
    Ok(())
}

fn cmd_calibrate(ctx: &mut Ctx, store: &PresetStore, a: &CalibrateArgs) -> Result<()> {
    let p = store.get(&a.fiber)?;
    ctx.preset(&p);
    let base = store.fiber(&a.fiber)?;
    let points: Vec<CalibrationPoint> = match &a.points {
        Some(path) => {
            let text = ctx.read_text(path)?;
            points_from_csv(&text, &path.display().to_string())?
        }
        None => {
            if a.edge.is_empty() {
                return Err(Error::config("points", "give `--points` or at least one `--edge`"));
            }
            let mut pts = Vec::new();
            for e in &a.edge {
                let (cut, file) = e
                    .split_once('=')
                    .ok_or_else(|| Error::config("edge", format!("expected `<nm>=<histogram.csv>`, got `{e}`")))?;
                let cuton_nm: f64 = cut.trim().parse().map_err(|_| Error::config("edge", format!("`{cut}` is not a wavelength")))?;
                let h = load_histogram(ctx, Path::new(file), None)?;
                pts.push(CalibrationPoint {
                    cuton_nm,
                    edge_dt_ps: calibration_edge(&h, a.shoulder)?,
                });
            }
            pts
        }
    };
    let mode = match a.fit {
        FitKind::Offset => FitMode::OffsetOnly,
        FitKind::OffsetLength => FitMode::OffsetAndLength,
    };
    let fit: CalibrationFit = fit_calibration(&points, &base.model, mode, Some(a.window.unwrap_or(base.valid_window_nm)))?;
    println!(
        "offset {:.3} ps, length factor {:.5}, residual RMS {:.3} ps",
        fit.curve.time_offset_ps, fit.length_scale, fit.residual_rms_ps
    );
    ctx.write(&a.out, &json_bytes(&fit))?;
    ctx.write("calibration_points.csv", points_to_csv(&points).as_bytes())?;
    Ok(())
}

fn write_reconstruction(ctx: &mut Ctx, name: &str, rec: &Reconstruction, comments: &[String]) -> Result<()> {
    ctx.write(name, rec.spectrum.to_csv(comments).as_bytes())?;
    ctx.write(&sidecar_name(name), &json_bytes(&rec.metadata))?;
    Ok(())
}

fn cmd_reconstruct(ctx: &mut Ctx, store: &PresetStore, a: &ReconstructArgs) -> Result<()> {
    let h = load_histogram(ctx, &a.input, a.meta.as_deref())?;
    let calib: CalibrationCurve = match (&a.calibration, &a.fiber) {
        (Some(path), _) => {
            let text = ctx.read_text(path)?;
            let fit: Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
                source_name: path.display().to_string(),
                location: format!("line {}, column {}", e.line(), e.column()),
                message: e.to_string(),
            })?;
            // accept a bare curve or a fit result
            let curve = fit.get("curve").cloned().unwrap_or(fit);
            serde_json::from_value(curve).map_err(|e| Error::Parse {
                source_name: path.display().to_string(),
                location: "calibration".into(),
                message: e.to_string(),
            })?
        }
        (None, fiber) => {
            let name = fiber.as_deref().unwrap_or("dcf150");
            ctx.preset(&store.get(name)?);
            store.fiber(name)?
        }
    };
    let mut options = ReconstructOptions::new();
    options.raw_timeaxis = a.raw_timeaxis;
    options.fiber_channel = a.fiber_channel;
    options.jitter_sigma_ps = a.jitter;
    if let Some(list) = &a.efficiency {
        let (d0, d1) = list
            .split_once(',')
            .ok_or_else(|| Error::config("efficiency", "expected `<channel 0 detector>,<channel 1 detector>`"))?;
        let dets = [store.detector(d0.trim())?, store.detector(d1.trim())?];
        let fc = usize::from(a.fiber_channel.min(1));
        options.efficiency = Some(EfficiencyCorrection {
            fiber_detector: dets[fc].clone(),
            direct_detector: dets[1 - fc].clone(),
            pump_wavelength_nm: a.pump.expect("clap enforces --pump"),
        });
    }
    let rec = reconstruct_spectrum(&h, &calib, &options)?;
    let width = spectral_width(&rec.spectrum, 0.1)?;
    println!(
        "{} points, {} bins dropped, width at 10% {:.1} nm",
        rec.spectrum.len(),
        rec.metadata.dropped_bins,
        width
    );
    write_reconstruction(ctx, &a.out, &rec, &[format!("config_hash={}", ctx.manifest.config_hash)])
}

#[derive(Debug, Serialize)]
struct PipelineReport {
    preset: String,
    pump_wavelength_nm: f64,
    seed: u64,
    duration_s: f64,
    expected_coincidences: f64,
    expected_true_coincidences_per_s: f64,
    histogram_total: u64,
    comparison_domain_nm: (f64, f64),
    normalized_l1_distance: f64,
    width_at_10_percent_nm: f64,
    dropped_bins: usize,
}

fn cmd_pipeline(ctx: &mut Ctx, store: &PresetStore, a: &PipelineArgs) -> Result<()> {
    let (src, p) = store.source(&a.source.preset)?;
    ctx.preset(&p);
    for name in src.experiment.detectors.iter().chain([&src.experiment.fiber]) {
        ctx.preset(&store.get(name)?);
    }
    let exp = FiberExperiment::from_preset(store, &a.source.preset, &a.source.overrides(), a.seed, a.pairs)?;
    let comments = vec![
        format!("biphoton pipeline input, preset {}", p.name),
        format!("config_hash={}", ctx.manifest.config_hash),
    ];
    ctx.write("spectrum_in.csv", exp.spectrum.to_csv(&comments).as_bytes())?;

    let h = if a.skip_tags {
        exp.measure(|_| Ok(()))?
    } else {
        let path = ctx.path("tags.bin");
        let tmp = tempfile::NamedTempFile::new_in(&ctx.out_dir).map_err(|e| Error::io(&ctx.out_dir, e))?;
        let file = tmp.reopen().map_err(|e| Error::io(tmp.path(), e))?;
        let mut writer = BinaryTagWriter::new(BufWriter::new(file), exp.run.duration_s).map_err(|e| Error::io(&path, e))?;
        let h = exp.measure(|w| writer.push(w))?;
        drop(writer.finish()?);
        tmp.persist(&path).map_err(|e| Error::io(&path, e.error))?;
        let bytes = read_bytes(&path)?;
        ctx.record_output("tags.bin", &bytes);
        h
    };
    write_histogram(ctx, "histogram.csv", &h)?;
    let rec = exp.reconstruct(&h)?;
    write_reconstruction(ctx, "spectrum_out.csv", &rec, &comments[1..])?;
    let report = PipelineReport {
        preset: p.name.clone(),
        pump_wavelength_nm: exp.run.pump_wavelength_nm,
        seed: a.seed,
        duration_s: exp.run.duration_s,
        expected_coincidences: exp.expected_coincidences,
        expected_true_coincidences_per_s: exp.expected.true_coincidences_per_s,
        histogram_total: h.total(),
        comparison_domain_nm: exp.comparison_domain(&rec),
        normalized_l1_distance: exp.l1_distance(&rec)?,
        width_at_10_percent_nm: spectral_width(&rec.spectrum, 0.1)?,
        dropped_bins: rec.metadata.dropped_bins,
    };
    println!(
        "L1 distance {:.4} over [{:.0}, {:.0}] nm; width at 10% {:.0} nm; {} coincidences",
        report.normalized_l1_distance,
        report.comparison_domain_nm.0,
        report.comparison_domain_nm.1,
        report.width_at_10_percent_nm,
        report.histogram_total
    );
    ctx.write("report.json", &json_bytes(&report))?;
    if a.plots {
        let peak_in = exp.spectrum.max_density();
        let peak_out = rec.spectrum.max_density().max(f64::MIN_POSITIVE);
        let plot = Plot::new(format!("{} biphoton spectrum", p.name), "wavelength (nm)", "normalised density")
            .with(Series::new(
                "model",
                exp.spectrum.wavelengths().to_vec(),
                exp.spectrum.density().iter().map(|d| d / peak_in).collect(),
                SeriesStyle::Line,
            ))
            .with(Series::new(
                "reconstructed",
                rec.spectrum.wavelengths().to_vec(),
                rec.spectrum.density().iter().map(|d| d / peak_out).collect(),
                SeriesStyle::Step,
            ));
        ctx.write("spectrum.svg", plot.to_svg()?.as_bytes())?;
        let hist = Plot::new("coincidence histogram", "delay (ps)", "counts")
            .log_y(true)
            .with(Series::new(
                "counts",
                h.bin_centers_ps().collect(),
                h.counts().iter().map(|&c| c as f64).collect(),
                SeriesStyle::Step,
            ));
        ctx.write("histogram.svg", hist.to_svg()?.as_bytes())?;
    }
    Ok(())
}

/// Columns of a recognised output CSV: (x label, y label, style).
fn csv_kind(header: &str) -> Option<(&'static str, &'static str, SeriesStyle)> {
    match header {
        h if h == SPECTRUM_CSV_HEADER => Some(("wavelength (nm)", "density", SeriesStyle::Line)),
        h if h == HISTOGRAM_CSV_HEADER => Some(("delay (ps)", "counts", SeriesStyle::Step)),
        "wavelength_nm,reflectance,transmittance,enhancement" => Some(("wavelength (nm)", "value", SeriesStyle::Line)),
        _ => None,
    }
}

fn read_columns(text: &str, source_name: &str) -> Result<(String, Vec<String>, Vec<Vec<f64>>)> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    let (_, header) = lines.next().ok_or_else(|| Error::Parse {
        source_name: source_name.to_owned(),
        location: "line 1".into(),
        message: "empty file".into(),
    })?;
    let names: Vec<String> = header.split(',').map(|s| s.trim().to_owned()).collect();
    let mut cols = vec![Vec::new(); names.len()];
    for (i, l) in lines {
        for (k, f) in l.split(',').enumerate().take(names.len()) {
            cols[k].push(f.trim().parse::<f64>().map_err(|_| Error::Parse {
                source_name: source_name.to_owned(),
                location: format!("line {}, column {}", i + 1, k + 1),
                message: format!("`{f}` is not a number"),
            })?);
        }
    }
    Ok((header.trim().to_owned(), names, cols))
}

fn cmd_plot(ctx: &mut Ctx, a: &PlotArgs) -> Result<()> {
    let mut inputs = vec![a.input.clone()];
    inputs.extend(a.compare.clone());
    let mut plot: Option<Plot> = None;
    for path in &inputs {
        let text = ctx.read_text(path)?;
        let (header, names, cols) = read_columns(&text, &path.display().to_string())?;
        let (xl, yl, style) = csv_kind(&header).ok_or_else(|| {
            Error::config("in", format!("{}: unrecognised CSV header `{header}`", path.display()))
        })?;
        let title = a.title.clone().unwrap_or_else(|| path.display().to_string());
        let mut p = plot.take().unwrap_or_else(|| Plot::new(title, xl, yl).log_y(a.log_y));
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        for k in 1..names.len() {
            let mut y = cols[k].clone();
            if a.compare.is_some() {
                let m = y.iter().cloned().fold(0.0, f64::max);
                if m > 0.0 {
                    y.iter_mut().for_each(|v| *v /= m);
                }
            }
            p = p.with(Series::new(format!("{stem}: {}", names[k]), cols[0].clone(), y, style));
        }
        plot = Some(p);
    }
    let svg = plot.expect("at least one input").to_svg()?;
    ctx.write(&a.out, svg.as_bytes())?;
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    let store = PresetStore::from_env();
    let (name, config, seed) = match &cli.command {
        Command::Materials(a) => ("materials", to_value(a), None),
        Command::Stack(a) => ("stack", to_value(a), None),
        Command::Spectrum(a) => ("spectrum", to_value(a), None),
        Command::Simulate(a) => ("simulate", to_value(a), Some(a.seed)),
        Command::Thermal(a) => ("thermal", to_value(a), Some(a.seed)),
        Command::Histogram(a) => ("histogram", to_value(a), None),
        Command::Analyze(a) => ("analyze", to_value(a), None),
        Command::Calibrate(a) => ("calibrate", to_value(a), None),
        Command::Reconstruct(a) => ("reconstruct", to_value(a), None),
        Command::Pipeline(a) => ("pipeline", to_value(a), Some(a.seed)),
        Command::Plot(a) => ("plot", to_value(a), None),
    };
    let mut ctx = Ctx::new(&cli.out_dir, name, config, seed)?;
    match &cli.command {
        Command::Materials(a) => cmd_materials(&mut ctx, &store, a)?,
        Command::Stack(a) => cmd_stack(&mut ctx, &store, a)?,
        Command::Spectrum(a) => cmd_spectrum(&mut ctx, &store, a)?,
        Command::Simulate(a) => cmd_simulate(&mut ctx, &store, a)?,
        Command::Thermal(a) => cmd_thermal(&mut ctx, a)?,
        Command::Histogram(a) => cmd_histogram(&mut ctx, a)?,
        Command::Analyze(a) => cmd_analyze(&mut ctx, a)?,
        Command::Calibrate(a) => cmd_calibrate(&mut ctx, &store, a)?,
        Command::Reconstruct(a) => cmd_reconstruct(&mut ctx, &store, a)?,
        Command::Pipeline(a) => cmd_pipeline(&mut ctx, &store, a)?,
        Command::Plot(a) => cmd_plot(&mut ctx, a)?,
    }
    ctx.finish()
}

pub fn exit_code(e: &Error) -> i32 {
    match e.kind() {
        ErrorKind::Config => 3,
        ErrorKind::Runtime => 1,
    }
}

fn error_line(kind: &str, code: i32, message: &str) -> String {
    let one_line = message.split_whitespace().collect::<Vec<_>>().join(" ");
    format!("error kind={kind} exit={code} message={}", Value::String(one_line))
}

/// Parses `argv` (including the program name), runs, and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind as K;
            if matches!(e.kind(), K::DisplayHelp | K::DisplayVersion | K::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = e.print();
                return if e.kind() == K::DisplayHelpOnMissingArgumentOrSubcommand { 2 } else { 0 };
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("{}", error_line("usage", 2, first));
            return 2;
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("{}", error_line("config", 3, "--threads must be >= 1"));
            return 3;
        }
        // fails only if a pool already exists (e.g. repeated in-process runs)
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("{}", error_line(e.tag(), code, &e.to_string()));
            code
        }
    }
}
