//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use biphoton::tagsim::{TimeTag, TimeTagStream, Truth, NO_PAIR};

pub fn tag(channel: u8, timestamp_ps: u64) -> TimeTag {
    TimeTag {
        timestamp_ps,
        channel,
        truth: Truth::Unknown,
        pair_id: NO_PAIR,
    }
}

/// O(n²) histogram straight from the bin definition: bin `c` (centred at
/// `c·b`) holds `Δt` with `(c − ½)b ≤ Δt < (c + ½)b`, for `|c| ≤ ⌊W/b⌋`.
pub fn brute_force_histogram(stream: &TimeTagStream, bin_width_ps: u64, window_ps: u64) -> Vec<u64> {
    let h = (window_ps / bin_width_ps) as i128;
    let b = bin_width_ps as i128;
    let mut counts = vec![0u64; (2 * h + 1) as usize];
    for e0 in stream.events.iter().filter(|e| e.channel == 0) {
        for e1 in stream.events.iter().filter(|e| e.channel == 1) {
            let dt = e1.timestamp_ps as i128 - e0.timestamp_ps as i128;
            let mut c = (dt as f64 / b as f64).round() as i128;
            while 2 * dt >= (2 * c + 1) * b {
                c += 1;
            }
            while 2 * dt < (2 * c - 1) * b {
                c -= 1;
            }
            if c.abs() <= h {
                counts[(c + h) as usize] += 1;
            }
        }
    }
    counts
}

/// Same definition as [`brute_force_histogram`], but only visits channel-1
/// events inside the window (found by binary search), for large streams.
pub fn windowed_histogram(stream: &TimeTagStream, bin_width_ps: u64, window_ps: u64) -> Vec<u64> {
    let h = (window_ps / bin_width_ps) as i128;
    let b = bin_width_ps as i128;
    let reach = (h * b + b / 2 + 1) as u64;
    let t1: Vec<u64> = stream.events.iter().filter(|e| e.channel == 1).map(|e| e.timestamp_ps).collect();
    let mut counts = vec![0u64; (2 * h + 1) as usize];
    for e0 in stream.events.iter().filter(|e| e.channel == 0) {
        let start = t1.partition_point(|&t| t + reach < e0.timestamp_ps);
        for &t in t1[start..].iter().take_while(|&&t| t <= e0.timestamp_ps + reach) {
            let dt = t as i128 - e0.timestamp_ps as i128;
            let mut c = (dt as f64 / b as f64).round() as i128;
            while 2 * dt >= (2 * c + 1) * b {
                c += 1;
            }
            while 2 * dt < (2 * c - 1) * b {
                c -= 1;
            }
            if c.abs() <= h {
                counts[(c + h) as usize] += 1;
            }
        }
    }
    counts
}

/// Random sorted two-channel stream with clustered (correlated) and
/// uniform events, including exact ties and exact bin-edge offsets.
pub fn random_stream(seed: u64, n: usize, span_ps: u64, bin_width_ps: u64) -> TimeTagStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events = Vec::with_capacity(n);
    while events.len() < n {
        let t = rng.random_range(0..span_ps);
        let ch = rng.random_range(0..2u8);
        events.push(tag(ch, t));
        match rng.random_range(0..4) {
            0 => events.push(tag(1 - ch, t)),
            1 => {
                let k = rng.random_range(0..40u64);
                let edge = k * bin_width_ps + bin_width_ps / 2;
                events.push(tag(1 - ch, t + edge));
            }
            2 => events.push(tag(1 - ch, t + rng.random_range(0..5000))),
            _ => {}
        }
    }
    events.truncate(n);
    events.sort_by_key(|e| (e.timestamp_ps, e.channel));
    TimeTagStream::new(events, span_ps as f64 * 1e-12)
}

/// Fresnel amplitude coefficients at normal incidence, from medium a into b.
fn fresnel(na: f64, nb: f64) -> (Complex64, Complex64) {
    (
        Complex64::new((na - nb) / (na + nb), 0.0),
        Complex64::new(2.0 * na / (na + nb), 0.0),
    )
}

/// Thickness-averaged |E|² in the top film of `ambient | film | rest… | substrate`
/// for a unit wave from the ambient, by nested Airy (Rouard) sums.
///
/// `film` and `rest` are (index, thickness nm).
pub fn airy_mean_intensity(ambient: f64, film: (f64, f64), rest: &[(f64, f64)], substrate: f64, lambda_nm: f64) -> f64 {
    let one = Complex64::new(1.0, 0.0);
    let k0 = 2.0 * std::f64::consts::PI / lambda_nm;
    // reflection seen from inside medium j at its lower interface, built
    // from the substrate upward
    let mut below = substrate;
    let mut gamma: Option<Complex64> = None;
    for i in (0..rest.len()).rev() {
        let n = rest[i].0;
        let (r, _) = fresnel(n, below);
        gamma = Some(match gamma {
            None => r,
            Some(g) => {
                let (nb, db) = rest[i + 1];
                let e = Complex64::from_polar(1.0, 2.0 * k0 * nb * db);
                (r + g * e) / (one + r * g * e)
            }
        });
        below = n;
    }
    let (nf, d) = film;
    let (r_fb, _) = fresnel(nf, below);
    let r_b = match gamma {
        None => r_fb,
        Some(g) => {
            let (n1, d1) = rest[0];
            let e = Complex64::from_polar(1.0, 2.0 * k0 * n1 * d1);
            (r_fb + g * e) / (one + r_fb * g * e)
        }
    };
    let (_, t_af) = fresnel(ambient, nf);
    let (r_fa, _) = fresnel(nf, ambient);
    let kd = k0 * nf * d;
    let round = Complex64::from_polar(1.0, 2.0 * kd);
    let a = t_af / (one - r_fa * r_b * round);
    let b = a * r_b * round;
    let cross = (round - one) / Complex64::new(0.0, 2.0 * kd);
    a.norm_sqr() + b.norm_sqr() + 2.0 * (a * b.conj() * cross).re
}


/// Statistics of repeated calibration fits on noisy synthetic edge points.
#[derive(Debug, Clone, Copy)]
pub struct FitEnsemble {
    pub mean_offset_error_ps: f64,
    pub sd_offset_ps: f64,
    /// Fraction of repetitions whose offset error exceeds 3σ/√n.
    pub outside_3_sigma: f64,
    pub mean_length_scale: f64,
    pub sd_length_scale: f64,
    /// Least-squares prediction of the length-scale spread.
    pub predicted_sd_length_scale: f64,
}

/// Fits `reps` noisy copies (Gaussian σ on every point) of edge points
/// generated from `curve` with its fibre length multiplied by `true_scale`.
pub fn fit_ensemble(
    curve: &biphoton::fiber::CalibrationCurve,
    cutons: &[f64],
    sigma_ps: f64,
    true_scale: f64,
    mode: biphoton::fiber::FitMode,
    reps: usize,
    seed: u64,
) -> FitEnsemble {
    use biphoton::fiber::{fit_calibration, CalibrationPoint};
    use rand_distr::{Distribution, Normal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma_ps).unwrap();
    let mut truth = curve.model.clone();
    truth.length_m *= true_scale;
    let g: Vec<f64> = cutons.iter().map(|&l| truth.relative_group_delay_ps(l)).collect();
    let (mut offsets, mut scales) = (Vec::new(), Vec::new());
    for _ in 0..reps {
        let points: Vec<CalibrationPoint> = cutons
            .iter()
            .zip(&g)
            .map(|(&cuton_nm, gi)| CalibrationPoint {
                cuton_nm,
                edge_dt_ps: curve.time_offset_ps + gi + noise.sample(&mut rng),
            })
            .collect();
        let fit = fit_calibration(&points, &curve.model, mode, Some(curve.valid_window_nm)).unwrap();
        offsets.push(fit.curve.time_offset_ps - curve.time_offset_ps);
        scales.push(fit.length_scale);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let sd = |v: &[f64]| {
        let m = mean(v);
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
    };
    let bound = 3.0 * sigma_ps / (cutons.len() as f64).sqrt();
    let g0: Vec<f64> = cutons.iter().map(|&l| curve.model.relative_group_delay_ps(l)).collect();
    let gm = mean(&g0);
    let sxx: f64 = g0.iter().map(|x| (x - gm).powi(2)).sum();
    FitEnsemble {
        mean_offset_error_ps: mean(&offsets),
        sd_offset_ps: sd(&offsets),
        outside_3_sigma: offsets.iter().filter(|e| e.abs() > bound).count() as f64 / reps as f64,
        mean_length_scale: mean(&scales),
        sd_length_scale: sd(&scales),
        predicted_sd_length_scale: sigma_ps / sxx.sqrt(),
    }
}
