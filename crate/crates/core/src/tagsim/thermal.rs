//! Chaotic (thermal) light source.
//!
//! The field is a stationary complex Ornstein-Uhlenbeck process with
//! `⟨|E|²⟩ = 1` and `⟨E*(t)E(t+τ)⟩ = exp(−|τ|/2τc)`, so the intensity
//! `I = |E|²` has `g²(τ) = 1 + exp(−|τ|/τc)`. Detections are a doubly
//! stochastic Poisson process with rate `mean_rate · I(t)`, generated by
//! thinning: candidates arrive at `CAP · mean_rate` and are accepted with
//! probability `min(I, CAP) / CAP`. The field is advanced exactly between
//! candidates, so there is no time step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{derive_seed, merge_windows, stamp, window_bounds, TimeTag, TimeTagStream, Truth, NO_PAIR};
use crate::error::{Error, Result};

/// Intensity ceiling in units of the mean. P(I > 20) = e⁻²⁰.
const CAP: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalConfig {
    pub duration_s: f64,
    /// Detected events per second, both channels together.
    pub mean_rate_per_s: f64,
    /// Intensity correlation time; `inf` gives a constant intensity.
    pub coherence_time_ps: f64,
    pub splitter_ratio: f64,
    pub jitter_sigma_ps: [f64; 2],
    pub seed: u64,
    pub window_s: f64,
}

impl ThermalConfig {
    pub fn new(duration_s: f64, mean_rate_per_s: f64, coherence_time_ps: f64, seed: u64) -> Self {
        Self {
            duration_s,
            mean_rate_per_s,
            coherence_time_ps,
            splitter_ratio: 0.5,
            jitter_sigma_ps: [0.0, 0.0],
            seed,
            window_s: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s.is_finite() && self.duration_s >= 0.0) {
            return Err(Error::config("duration_s", "must be >= 0"));
        }
        if !(self.mean_rate_per_s.is_finite() && self.mean_rate_per_s >= 0.0) {
            return Err(Error::config("mean_rate_per_s", "must be >= 0"));
        }
        if !(self.coherence_time_ps > 0.0) {
            return Err(Error::config("coherence_time_ps", "must be > 0"));
        }
        if !(self.splitter_ratio > 0.0 && self.splitter_ratio < 1.0) {
            return Err(Error::config("splitter_ratio", "must lie strictly between 0 and 1"));
        }
        if self.jitter_sigma_ps.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::config("jitter_sigma_ps", "must be >= 0"));
        }
        if !(self.window_s.is_finite() && self.window_s > 0.0) {
            return Err(Error::config("window_s", "must be > 0"));
        }
        Ok(())
    }

    fn window(&self, index: usize, start_s: f64, end_s: f64) -> TimeTagStream {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, index as u64));
        let mut events = Vec::new();
        let (t0, t1) = (start_s * 1e12, end_s * 1e12);
        let jitter = self
            .jitter_sigma_ps
            .map(|s| (s > 0.0).then(|| Normal::new(0.0, s).expect("validated sigma")));
        let constant = !self.coherence_time_ps.is_finite();
        let candidate_rate = if constant { self.mean_rate_per_s } else { CAP * self.mean_rate_per_s };
        if candidate_rate > 0.0 {
            let gap = Exp::new(candidate_rate * 1e-12).expect("positive rate");
            // stationary start: E ~ CN(0, 1)
            let half = std::f64::consts::FRAC_1_SQRT_2;
            let draw = |rng: &mut ChaCha8Rng| {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                (re * half, im * half)
            };
            let mut field = draw(&mut rng);
            let mut t = t0 + gap.sample(&mut rng);
            let mut last = t0;
            while t < t1 {
                let accept = if constant {
                    true
                } else {
                    let rho = (-(t - last) / (2.0 * self.coherence_time_ps)).exp();
                    let s = (1.0 - rho * rho).sqrt();
                    let w = draw(&mut rng);
                    field = (rho * field.0 + s * w.0, rho * field.1 + s * w.1);
                    last = t;
                    let intensity = field.0 * field.0 + field.1 * field.1;
                    rng.random::<f64>() * CAP < intensity.min(CAP)
                };
                if accept {
                    let channel = u8::from(rng.random::<f64>() < self.splitter_ratio);
                    let j = match &jitter[usize::from(channel)] {
                        Some(n) => n.sample(&mut rng),
                        None => 0.0,
                    };
                    events.push(TimeTag {
                        timestamp_ps: stamp(t + j),
                        channel,
                        truth: Truth::Thermal,
                        pair_id: NO_PAIR,
                    });
                }
                t += gap.sample(&mut rng);
            }
        }
        let mut stream = TimeTagStream::new(events, end_s - start_s);
        stream.sort();
        stream
    }
}

/// Generates a thermal-light time-tag stream.
pub fn simulate_thermal(cfg: &ThermalConfig) -> Result<TimeTagStream> {
    cfg.validate()?;
    let parts: Vec<_> = window_bounds(cfg.duration_s, cfg.window_s)
        .par_iter()
        .enumerate()
        .map(|(i, &(a, b))| cfg.window(i, a, b))
        .collect();
    Ok(merge_windows(parts, cfg.duration_s))
}
