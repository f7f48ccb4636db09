//! Dispersive-fibre group delay and the arrival-time ↔ wavelength calibration
//! used for fibre spectroscopy.
//!
//! The fibre follows the usual single-mode form
//! `D(λ) = (S0/4)·(λ − λ0⁴/λ³)` ps/(nm·km), whose integral from the
//! zero-dispersion wavelength `λ0` is `(S0/8)·(λ − λ0²/λ)²`. The relative
//! delay is therefore non-negative and strictly decreasing below `λ0`, which
//! is what makes the time→wavelength map one-to-one there and only there.

use serde::{Deserialize, Serialize};

use crate::coincidence::CoincidenceHistogram;
use crate::error::{Error, Result};
use crate::io::{csv_rows, parse_field};

pub const CALIBRATION_CSV_HEADER: &str = "cuton_nm,edge_dt_ps";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiberModel {
    pub length_m: f64,
    pub zdw_nm: f64,
    /// Dispersion slope at the ZDW, ps/(nm²·km).
    pub slope_ps_per_nm2_km: f64,
    /// Optional (wavelength nm, loss dB/km) table, linearly interpolated and
    /// clamped at its ends.
    #[serde(default)]
    pub attenuation_db_per_km: Option<Vec<(f64, f64)>>,
}

impl FiberModel {
    pub fn new(length_m: f64, zdw_nm: f64, slope_ps_per_nm2_km: f64) -> Result<Self> {
        let model = Self {
            length_m,
            zdw_nm,
            slope_ps_per_nm2_km,
            attenuation_db_per_km: None,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length_m.is_finite() && self.length_m > 0.0) {
            return Err(Error::config("fiber.length_m", "must be > 0"));
        }
        if !(self.zdw_nm.is_finite() && self.zdw_nm > 0.0) {
            return Err(Error::config("fiber.zdw_nm", "must be > 0"));
        }
        if !(self.slope_ps_per_nm2_km.is_finite() && self.slope_ps_per_nm2_km > 0.0) {
            return Err(Error::config("fiber.slope_ps_per_nm2_km", "must be > 0"));
        }
        if let Some(table) = &self.attenuation_db_per_km {
            if table.is_empty() || table.windows(2).any(|w| !(w[1].0 > w[0].0)) {
                return Err(Error::config(
                    "fiber.attenuation_db_per_km",
                    "table must be non-empty with strictly increasing wavelengths",
                ));
            }
        }
        Ok(())
    }

    fn length_km(&self) -> f64 {
        self.length_m * 1e-3
    }

    /// D(λ) in ps/(nm·km).
    pub fn dispersion_parameter(&self, lambda_nm: f64) -> f64 {
        let z = self.zdw_nm;
        0.25 * self.slope_ps_per_nm2_km * (lambda_nm - z.powi(4) / lambda_nm.powi(3))
    }

    /// Group delay relative to the ZDW over the full length, ps. Defined for
    /// every wavelength; it is only invertible on one side of the ZDW.
    pub fn relative_group_delay_ps(&self, lambda_nm: f64) -> f64 {
        let u = lambda_nm - self.zdw_nm * self.zdw_nm / lambda_nm;
        self.length_km() * 0.125 * self.slope_ps_per_nm2_km * u * u
    }

    /// d(delay)/dλ = length·D(λ), ps/nm.
    pub fn delay_slope_ps_per_nm(&self, lambda_nm: f64) -> f64 {
        self.length_km() * self.dispersion_parameter(lambda_nm)
    }

    /// Power transmission of the whole fibre at `lambda_nm`.
    pub fn transmission(&self, lambda_nm: f64) -> f64 {
        let Some(table) = &self.attenuation_db_per_km else {
            return 1.0;
        };
        let db_per_km = interpolate_clamped(table, lambda_nm);
        10f64.powf(-db_per_km * self.length_km() / 10.0)
    }
}

fn interpolate_clamped(table: &[(f64, f64)], x: f64) -> f64 {
    let i = table.partition_point(|&(tx, _)| tx <= x);
    if i == 0 {
        return table[0].1;
    }
    if i == table.len() {
        return table[table.len() - 1].1;
    }
    let (x0, y0) = table[i - 1];
    let (x1, y1) = table[i];
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// Fibre model plus fixed path offset, restricted to a window below the ZDW.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationCurve {
    pub model: FiberModel,
    pub time_offset_ps: f64,
    pub valid_window_nm: (f64, f64),
}

impl CalibrationCurve {
    pub fn new(model: FiberModel, time_offset_ps: f64, valid_window_nm: (f64, f64)) -> Result<Self> {
        let curve = Self {
            model,
            time_offset_ps,
            valid_window_nm,
        };
        curve.validate()?;
        Ok(curve)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let (lo, hi) = self.valid_window_nm;
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo < hi) {
            return Err(Error::config("calibration.valid_window_nm", format!("need 0 < min < max, got [{lo}, {hi}]")));
        }
        if hi >= self.model.zdw_nm {
            return Err(Error::NonMonotone(format!(
                "valid window [{lo}, {hi}] nm reaches the zero-dispersion wavelength {} nm; \
                 the delay is only one-to-one entirely below it",
                self.model.zdw_nm
            )));
        }
        if !self.time_offset_ps.is_finite() {
            return Err(Error::config("calibration.time_offset_ps", "must be finite"));
        }
        Ok(())
    }

    pub fn contains(&self, lambda_nm: f64) -> bool {
        lambda_nm >= self.valid_window_nm.0 && lambda_nm <= self.valid_window_nm.1
    }

    /// Δt(λ) without the window check; used by the simulator.
    pub fn delay_unchecked(&self, lambda_nm: f64) -> f64 {
        self.model.relative_group_delay_ps(lambda_nm) + self.time_offset_ps
    }

    pub fn arrival_time_difference(&self, lambda_nm: f64) -> Result<f64> {
        if !self.contains(lambda_nm) {
            return Err(Error::Range {
                what: "calibration window",
                name: format!("fibre {} m, ZDW {} nm", self.model.length_m, self.model.zdw_nm),
                wavelength_nm: lambda_nm,
                min_nm: self.valid_window_nm.0,
                max_nm: self.valid_window_nm.1,
            });
        }
        Ok(self.delay_unchecked(lambda_nm))
    }

    /// dΔt/dλ in ps/nm (negative below the ZDW).
    pub fn jacobian_ps_per_nm(&self, lambda_nm: f64) -> f64 {
        self.model.delay_slope_ps_per_nm(lambda_nm)
    }

    /// Δt range covered by the valid window, ascending.
    pub fn time_image_ps(&self) -> (f64, f64) {
        // delay decreases with λ below the ZDW
        (
            self.delay_unchecked(self.valid_window_nm.1),
            self.delay_unchecked(self.valid_window_nm.0),
        )
    }

    /// Inverse map Δt → λ on the valid window.
    pub fn wavelength_at(&self, dt_ps: f64) -> Result<f64> {
        let (t_lo, t_hi) = self.time_image_ps();
        if !(dt_ps >= t_lo && dt_ps <= t_hi) {
            return Err(Error::Range {
                what: "calibration image",
                name: format!("Δt={dt_ps} ps, image [{t_lo}, {t_hi}] ps"),
                wavelength_nm: f64::NAN,
                min_nm: self.valid_window_nm.0,
                max_nm: self.valid_window_nm.1,
            });
        }
        let k = self.model.length_km() * 0.125 * self.model.slope_ps_per_nm2_km;
        let z = self.model.zdw_nm;
        // λ − z²/λ = u < 0 below the ZDW; the root form avoids cancellation
        let u = -((dt_ps - self.time_offset_ps).max(0.0) / k).sqrt();
        let lambda = 2.0 * z * z / ((u * u + 4.0 * z * z).sqrt() - u);
        Ok(lambda.clamp(self.valid_window_nm.0, self.valid_window_nm.1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    OffsetOnly,
    /// Offset plus a multiplicative correction on the fibre length.
    OffsetAndLength,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub cuton_nm: f64,
    pub edge_dt_ps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFit {
    pub curve: CalibrationCurve,
    pub mode: FitMode,
    pub length_scale: f64,
    pub residuals_ps: Vec<f64>,
    pub residual_rms_ps: f64,
}

/// Least-squares fit of the path offset (and optionally a length factor) so
/// the model passes through measured filter-edge points.
///
/// `valid_window_nm` defaults to the hull of the cut-on wavelengths.
pub fn fit_calibration(
    points: &[CalibrationPoint],
    model: &FiberModel,
    mode: FitMode,
    valid_window_nm: Option<(f64, f64)>,
) -> Result<CalibrationFit> {
    model.validate()?;
    let needed = match mode {
        FitMode::OffsetOnly => 1,
        FitMode::OffsetAndLength => 2,
    };
    if points.len() < needed {
        return Err(Error::Fit(format!(
            "{mode:?} needs at least {needed} point(s), got {}",
            points.len()
        )));
    }
    for p in points {
        if !(p.cuton_nm.is_finite() && p.edge_dt_ps.is_finite()) {
            return Err(Error::Fit("calibration points must be finite".into()));
        }
        if p.cuton_nm >= model.zdw_nm {
            return Err(Error::Fit(format!(
                "cut-on {} nm is at or above the zero-dispersion wavelength {} nm, \
                 where arrival time no longer maps one-to-one onto wavelength",
                p.cuton_nm, model.zdw_nm
            )));
        }
    }
    let g: Vec<f64> = points.iter().map(|p| model.relative_group_delay_ps(p.cuton_nm)).collect();
    let y: Vec<f64> = points.iter().map(|p| p.edge_dt_ps).collect();
    let n = points.len() as f64;

    let (offset, scale) = match mode {
        FitMode::OffsetOnly => {
            let offset = y.iter().zip(&g).map(|(yi, gi)| yi - gi).sum::<f64>() / n;
            (offset, 1.0)
        }
        FitMode::OffsetAndLength => {
            let g_mean = g.iter().sum::<f64>() / n;
            let y_mean = y.iter().sum::<f64>() / n;
            let sxx: f64 = g.iter().map(|gi| (gi - g_mean).powi(2)).sum();
            let sxy: f64 = g.iter().zip(&y).map(|(gi, yi)| (gi - g_mean) * (yi - y_mean)).sum();
            let spread = g.iter().fold(0.0f64, |m, gi| m.max((gi - g_mean).abs()));
            if sxx <= 0.0 || spread <= 1e-12 * g_mean.abs().max(1.0) {
                return Err(Error::Fit(
                    "offset+length fit needs at least two distinct cut-on wavelengths".into(),
                ));
            }
            let scale = sxy / sxx;
            if !(scale > 0.0) {
                return Err(Error::Fit(format!("fitted length factor {scale} is not positive")));
            }
            (y_mean - scale * g_mean, scale)
        }
    };

    let residuals_ps: Vec<f64> = g.iter().zip(&y).map(|(gi, yi)| yi - (offset + scale * gi)).collect();
    let residual_rms_ps = (residuals_ps.iter().map(|r| r * r).sum::<f64>() / n).sqrt();

    let window = match valid_window_nm {
        Some(w) => w,
        None => {
            let lo = points.iter().map(|p| p.cuton_nm).fold(f64::INFINITY, f64::min);
            let hi = points.iter().map(|p| p.cuton_nm).fold(f64::NEG_INFINITY, f64::max);
            if !(lo < hi) {
                return Err(Error::Fit(
                    "cannot infer a valid window from a single cut-on wavelength; pass one explicitly".into(),
                ));
            }
            (lo, hi)
        }
    };
    let mut fitted = model.clone();
    fitted.length_m *= scale;
    let curve = CalibrationCurve::new(fitted, offset, window)?;
    Ok(CalibrationFit {
        curve,
        mode,
        length_scale: scale,
        residuals_ps,
        residual_rms_ps,
    })
}

pub fn points_to_csv(points: &[CalibrationPoint]) -> String {
    let mut out = format!("{CALIBRATION_CSV_HEADER}\n");
    for p in points {
        out.push_str(&format!("{},{}\n", p.cuton_nm, p.edge_dt_ps));
    }
    out
}

pub fn points_from_csv(src: &str, source_name: &str) -> Result<Vec<CalibrationPoint>> {
    csv_rows(src, source_name, CALIBRATION_CSV_HEADER)?
        .map(|(line, f)| {
            Ok(CalibrationPoint {
                cuton_nm: parse_field(f.first(), source_name, line, "cuton_nm")?,
                edge_dt_ps: parse_field(f.get(1), source_name, line, "edge_dt_ps")?,
            })
        })
        .collect()
}

/// Half-maximum point of the falling shoulder that a longpass filter in the
/// fibre arm cuts into a histogram, in ps.
///
/// A longpass removes the short (slow) wavelengths, so the shoulder is on the
/// large-Δt side. Counts are smoothed with a centred moving average over
/// `shoulder_span_ps`. The background is the mean of the outermost tenth of
/// the window (at least one span), so the window must reach past the edge.
/// The shoulder is the outermost point clearly (5σ) above it, and its level is
/// the mean count over the span that lies one span further inward. The edge is where the
/// smoothed counts fall through the background-corrected half level,
/// linearly interpolated between bin centres.
pub fn calibration_edge(histogram: &CoincidenceHistogram, shoulder_span_ps: f64) -> Result<f64> {
    if !(shoulder_span_ps.is_finite() && shoulder_span_ps >= 0.0) {
        return Err(Error::config("shoulder_span", "must be >= 0"));
    }
    let counts = histogram.counts();
    if counts.iter().all(|&c| c == 0) {
        return Err(Error::Fit("histogram is empty; no shoulder to locate".into()));
    }
    let b = histogram.bin_width_ps() as f64;
    let half_width = ((0.5 * shoulder_span_ps / b).round() as usize).min(counts.len() / 2);
    let width = 2 * half_width + 1;
    let smooth: Vec<f64> = (0..counts.len())
        .map(|k| {
            let lo = k.saturating_sub(half_width);
            let hi = (k + half_width).min(counts.len() - 1);
            counts[lo..=hi].iter().sum::<u64>() as f64 / (hi - lo + 1) as f64
        })
        .collect();
    let tail = (counts.len() / 10).max(width).min(counts.len());
    let background = counts[counts.len() - tail..].iter().sum::<u64>() as f64 / tail as f64;
    let noise = (background.max(1.0) / width as f64).sqrt() + (background.max(1.0) / tail as f64).sqrt();
    let threshold = background + 5.0 * noise;
    let outer = smooth
        .iter()
        .rposition(|&v| v > threshold)
        .ok_or_else(|| Error::Fit("no shoulder stands out of the background".into()))?;
    let inner = outer.saturating_sub(2 * width);
    let plateau = &counts[inner..outer.saturating_sub(width).max(inner + 1)];
    let level = plateau.iter().sum::<u64>() as f64 / plateau.len() as f64;
    let half = background + 0.5 * (level - background);
    let Some(k) = (inner..=outer).rev().find(|&i| smooth[i] >= half) else {
        return Ok(histogram.bin_center_ps(outer));
    };
    let t_k = histogram.bin_center_ps(k);
    if k + 1 >= counts.len() {
        return Ok(t_k);
    }
    let (c0, c1) = (smooth[k], smooth[k + 1]);
    let frac = if c0 > c1 { (c0 - half) / (c0 - c1) } else { 0.0 };
    Ok(t_k + frac * b)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Logistic step falling at `edge` on a flat background, with a tall
    /// unrelated peak far inside so the shoulder sits far below the maximum.
    fn stepped(edge: f64, level: f64, background: f64) -> Vec<f64> {
        (0..801)
            .map(|k| {
                let t = (k as f64 - 400.0) * 50.0;
                let peak = if (t + 8000.0).abs() < 300.0 { 50.0 * level } else { 0.0 };
                background + peak + level / (1.0 + ((t - edge) / 60.0).exp())
            })
            .collect()
    }

    #[test]
    fn edge_of_a_low_shoulder() {
        let expected: Vec<u64> = stepped(6137.0, 200.0, 3.0).iter().map(|v| v.round() as u64).collect();
        let h = CoincidenceHistogram::from_parts(50, expected, 1.0, [1, 1]).unwrap();
        let edge = calibration_edge(&h, 500.0).unwrap();
        assert!((edge - 6137.0).abs() < 10.0, "{edge}");
    }

    #[test]
    fn edge_survives_poisson_noise() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Poisson};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        // smoothed σ ≈ √(42/11) ≈ 2 counts over a slope of ≈ 40/550 counts/ps
        // gives ≈ 27 ps of crossing noise
        let mut sum = 0.0;
        for _ in 0..20 {
            let counts = stepped(2411.0, 40.0, 2.0)
                .iter()
                .map(|&m| Poisson::new(m).unwrap().sample(&mut rng) as u64)
                .collect();
            let h = CoincidenceHistogram::from_parts(50, counts, 1.0, [1, 1]).unwrap();
            let edge = calibration_edge(&h, 500.0).unwrap();
            assert!((edge - 2411.0).abs() < 100.0, "{edge}");
            sum += edge - 2411.0;
        }
        assert!((sum / 20.0).abs() < 20.0, "bias {}", sum / 20.0);
    }

    #[test]
    fn flat_histogram_has_no_edge() {
        let h = CoincidenceHistogram::from_parts(50, vec![7; 101], 1.0, [1, 1]).unwrap();
        assert!(calibration_edge(&h, 500.0).is_err());
        let empty = CoincidenceHistogram::from_parts(50, vec![0; 101], 1.0, [1, 1]).unwrap();
        assert!(calibration_edge(&empty, 500.0).is_err());
    }

    fn dcf() -> FiberModel {
        FiberModel::new(150.0, 1500.0, 0.07).unwrap()
    }

    #[test]
    fn dispersion_parameter_examples() {
        let m = dcf();
        assert_eq!(m.dispersion_parameter(1500.0), 0.0);
        let d1000 = 0.0175 * (1000.0 - 1500f64.powi(4) / 1000f64.powi(3));
        assert!((m.dispersion_parameter(1000.0) - d1000).abs() < 1e-12);
        assert!((m.dispersion_parameter(1000.0) - (-71.09)).abs() < 0.01);
        assert!((m.dispersion_parameter(1400.0) - (-7.79)).abs() < 0.01);
        // increasing through the ZDW
        assert!(m.dispersion_parameter(1490.0) < 0.0 && m.dispersion_parameter(1510.0) > 0.0);
    }

    #[test]
    fn delay_matches_riemann_oracle() {
        let m = dcf();
        let n = 1_000_000;
        let (a, b) = (1000.0, 1500.0);
        let h = (b - a) / n as f64;
        // midpoint sum of D from λ to the ZDW; the delay is −∫_λ^{ZDW} D
        let integral: f64 = (0..n).map(|i| m.dispersion_parameter(a + (i as f64 + 0.5) * h)).sum::<f64>() * h;
        let oracle = -0.15 * integral;
        let curve = CalibrationCurve::new(m, 0.0, (800.0, 1450.0)).unwrap();
        let dt = curve.arrival_time_difference(1000.0).unwrap();
        assert!((dt - oracle).abs() < 0.01, "{dt} vs {oracle}");
    }

    #[test]
    fn offset_is_additive_and_zdw_is_reference() {
        let m = dcf();
        assert_eq!(m.relative_group_delay_ps(1500.0), 0.0);
        let a = CalibrationCurve::new(m.clone(), 0.0, (800.0, 1400.0)).unwrap();
        let b = CalibrationCurve::new(m, 1234.5, (800.0, 1400.0)).unwrap();
        for l in [800.0, 1033.3, 1400.0] {
            let d = b.arrival_time_difference(l).unwrap() - a.arrival_time_difference(l).unwrap();
            assert!((d - 1234.5).abs() < 1e-9);
        }
    }

    #[test]
    fn window_errors() {
        let m = dcf();
        assert!(matches!(
            CalibrationCurve::new(m.clone(), 0.0, (800.0, 1600.0)),
            Err(Error::NonMonotone(_))
        ));
        let c = CalibrationCurve::new(m, 0.0, (800.0, 1400.0)).unwrap();
        assert!(matches!(c.arrival_time_difference(1450.0), Err(Error::Range { .. })));
        assert!(c.wavelength_at(c.time_image_ps().1 + 1.0).is_err());
    }

    #[test]
    fn exact_offset_recovery() {
        let truth = CalibrationCurve::new(dcf(), 1234.5, (800.0, 1400.0)).unwrap();
        let points: Vec<_> = [850.0, 950.0, 1050.0, 1150.0, 1250.0]
            .iter()
            .map(|&l| CalibrationPoint {
                cuton_nm: l,
                edge_dt_ps: truth.delay_unchecked(l),
            })
            .collect();
        let fit = fit_calibration(&points, &dcf(), FitMode::OffsetOnly, Some((800.0, 1400.0))).unwrap();
        assert!((fit.curve.time_offset_ps - 1234.5).abs() < 1e-6);
        assert!(fit.residual_rms_ps < 1e-6);
        let single = fit_calibration(&points[..1], &dcf(), FitMode::OffsetOnly, Some((800.0, 1400.0))).unwrap();
        assert!((single.curve.time_offset_ps - 1234.5).abs() < 1e-6);
    }

    #[test]
    fn fit_rejections() {
        let above = [CalibrationPoint { cuton_nm: 1550.0, edge_dt_ps: 0.0 }];
        let err = fit_calibration(&above, &dcf(), FitMode::OffsetOnly, Some((800.0, 1400.0))).unwrap_err();
        assert!(err.to_string().contains("zero-dispersion"));
        let same = [
            CalibrationPoint { cuton_nm: 900.0, edge_dt_ps: 10.0 },
            CalibrationPoint { cuton_nm: 900.0, edge_dt_ps: 12.0 },
        ];
        assert!(matches!(
            fit_calibration(&same, &dcf(), FitMode::OffsetAndLength, Some((800.0, 1400.0))),
            Err(Error::Fit(_))
        ));
        assert!(fit_calibration(&same[..1], &dcf(), FitMode::OffsetAndLength, None).is_err());
        assert!(fit_calibration(&[], &dcf(), FitMode::OffsetOnly, None).is_err());
    }

    #[test]
    fn points_csv_round_trip() {
        let pts = vec![
            CalibrationPoint { cuton_nm: 850.0, edge_dt_ps: 4321.25 },
            CalibrationPoint { cuton_nm: 1000.5, edge_dt_ps: -3.0 },
        ];
        assert_eq!(points_from_csv(&points_to_csv(&pts), "p.csv").unwrap(), pts);
    }

    #[test]
    fn attenuation_table() {
        let mut m = dcf();
        assert_eq!(m.transmission(1000.0), 1.0);
        m.attenuation_db_per_km = Some(vec![(800.0, 20.0), (1200.0, 10.0)]);
        // 15 dB/km over 0.15 km at 1000 nm
        assert!((m.transmission(1000.0) - 10f64.powf(-0.225)).abs() < 1e-12);
        assert!((m.transmission(500.0) - 10f64.powf(-0.3)).abs() < 1e-12);
    }
}
