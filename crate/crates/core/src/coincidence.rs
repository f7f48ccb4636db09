//! Two-channel cross-correlation histogram and the CAR / pair-rate estimators.
//!
//! Bins are centred on multiples of the bin width `b`: bin `k` (with
//! `k = 0..N`, `N = 2h + 1`, `h = ⌊window / b⌋`) covers
//! `[(k − h − ½)b, (k − h + ½)b)` of `Δt = t₁ − t₀`. An event exactly on an
//! edge goes to the upper bin, i.e. `⌊Δt/b + ½⌋` rounds toward −∞. The
//! arithmetic is done in doubled integer picoseconds, so it is exact.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{csv_rows, parse_field};
use crate::tagsim::TimeTagStream;

pub const HISTOGRAM_CSV_HEADER: &str = "bin_center_ps,counts";

/// Channel-0 events per parallel shard.
const SHARD: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceHistogram {
    bin_width_ps: u64,
    half_bins: usize,
    counts: Vec<u64>,
    acquisition_time_s: f64,
    channel_counts: [u64; 2],
}

impl CoincidenceHistogram {
    pub fn zeros(bin_width_ps: u64, window_ps: u64, acquisition_time_s: f64) -> Result<Self> {
        if bin_width_ps == 0 {
            return Err(Error::config("bin_width", "must be > 0"));
        }
        if window_ps < bin_width_ps {
            return Err(Error::config("window", format!("{window_ps} ps is smaller than the bin width {bin_width_ps} ps")));
        }
        if !(acquisition_time_s.is_finite() && acquisition_time_s >= 0.0) {
            return Err(Error::config("acquisition_time", "must be >= 0"));
        }
        let half_bins = (window_ps / bin_width_ps) as usize;
        Ok(Self {
            bin_width_ps,
            half_bins,
            counts: vec![0; 2 * half_bins + 1],
            acquisition_time_s,
            channel_counts: [0, 0],
        })
    }

    /// Rebuilds a histogram from exported data.
    pub fn from_parts(
        bin_width_ps: u64,
        counts: Vec<u64>,
        acquisition_time_s: f64,
        channel_counts: [u64; 2],
    ) -> Result<Self> {
        if counts.len() % 2 == 0 {
            return Err(Error::config("counts", "histogram must have an odd number of bins"));
        }
        let mut h = Self::zeros(bin_width_ps, bin_width_ps * (counts.len() as u64 / 2).max(1), acquisition_time_s)?;
        h.half_bins = counts.len() / 2;
        h.counts = counts;
        h.channel_counts = channel_counts;
        Ok(h)
    }

    pub fn bin_width_ps(&self) -> u64 {
        self.bin_width_ps
    }

    pub fn half_bins(&self) -> usize {
        self.half_bins
    }

    /// Half-range actually covered by bin centres, `h·b`.
    pub fn window_ps(&self) -> u64 {
        self.half_bins as u64 * self.bin_width_ps
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn bin_center_ps(&self, k: usize) -> f64 {
        (k as f64 - self.half_bins as f64) * self.bin_width_ps as f64
    }

    pub fn bin_centers_ps(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.counts.len()).map(|k| self.bin_center_ps(k))
    }

    pub fn acquisition_time_s(&self) -> f64 {
        self.acquisition_time_s
    }

    pub fn channel_counts(&self) -> [u64; 2] {
        self.channel_counts
    }

    /// Singles rates in events/s (zero when the acquisition time is unknown).
    pub fn channel_rates(&self) -> [f64; 2] {
        if self.acquisition_time_s > 0.0 {
            self.channel_counts.map(|c| c as f64 / self.acquisition_time_s)
        } else {
            [0.0, 0.0]
        }
    }

    /// Bin index of `Δt`, if it falls inside the histogram.
    pub fn bin_of(&self, dt_ps: i128) -> Option<usize> {
        let b = i128::from(self.bin_width_ps);
        let k = (2 * dt_ps + b).div_euclid(2 * b) + self.half_bins as i128;
        (0..self.counts.len() as i128).contains(&k).then_some(k as usize)
    }

    /// Adds another acquisition with the same binning.
    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.bin_width_ps != self.bin_width_ps || other.half_bins != self.half_bins {
            return Err(Error::config("histogram", "cannot merge histograms with different binning"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.acquisition_time_s += other.acquisition_time_s;
        self.channel_counts[0] += other.channel_counts[0];
        self.channel_counts[1] += other.channel_counts[1];
        Ok(())
    }

    /// Counts with the Δt axis reversed (what swapping channels would give).
    pub fn mirrored(&self) -> Self {
        let mut h = self.clone();
        h.counts.reverse();
        h.channel_counts.swap(0, 1);
        h
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(24 * self.counts.len());
        out.push_str(HISTOGRAM_CSV_HEADER);
        out.push('\n');
        for (k, c) in self.counts.iter().enumerate() {
            let center = (k as i64 - self.half_bins as i64) * self.bin_width_ps as i64;
            let _ = writeln!(out, "{center},{c}");
        }
        out
    }

    pub fn metadata(&self, estimate: Option<CarAndRate>) -> HistogramMetadata {
        HistogramMetadata {
            bin_width_ps: self.bin_width_ps,
            window_ps: self.window_ps(),
            bins: self.counts.len(),
            acquisition_time_s: self.acquisition_time_s,
            channel_counts: self.channel_counts,
            channel_rates_per_s: self.channel_rates(),
            total_coincidences: self.total(),
            estimate,
        }
    }

    /// Loads the CSV export plus its JSON sidecar.
    pub fn from_csv(src: &str, source_name: &str, meta: &HistogramMetadata) -> Result<Self> {
        let mut centers = Vec::new();
        let mut counts = Vec::new();
        for (line, f) in csv_rows(src, source_name, HISTOGRAM_CSV_HEADER)? {
            centers.push((line, parse_field::<i64>(f.first(), source_name, line, "bin_center_ps")?));
            counts.push(parse_field::<u64>(f.get(1), source_name, line, "counts")?);
        }
        let h = Self::from_parts(meta.bin_width_ps, counts, meta.acquisition_time_s, meta.channel_counts)?;
        for (k, (line, c)) in centers.into_iter().enumerate() {
            if c as f64 != h.bin_center_ps(k) {
                return Err(Error::Parse {
                    source_name: source_name.to_owned(),
                    location: format!("line {line}"),
                    message: format!("bin centre {c} ps does not match the sidecar binning"),
                });
            }
        }
        Ok(h)
    }
}

/// JSON sidecar written next to a histogram CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramMetadata {
    pub bin_width_ps: u64,
    pub window_ps: u64,
    pub bins: usize,
    pub acquisition_time_s: f64,
    pub channel_counts: [u64; 2],
    pub channel_rates_per_s: [f64; 2],
    pub total_coincidences: u64,
    #[serde(default)]
    pub estimate: Option<CarAndRate>,
}

/// Splits a stream into per-channel timestamp lists, checking the order.
fn split_channels(stream: &TimeTagStream) -> Result<[Vec<u64>; 2]> {
    let mut ch: [Vec<u64>; 2] = [Vec::new(), Vec::new()];
    let mut prev = 0u64;
    for (i, e) in stream.events.iter().enumerate() {
        if e.timestamp_ps < prev {
            return Err(Error::Unsorted {
                index: i,
                previous: prev,
                current: e.timestamp_ps,
            });
        }
        prev = e.timestamp_ps;
        if e.channel > 1 {
            return Err(Error::config("channel", format!("event {i} has channel {}", e.channel)));
        }
        ch[usize::from(e.channel)].push(e.timestamp_ps);
    }
    Ok(ch)
}

fn sweep(h: &CoincidenceHistogram, t0s: &[u64], t1s: &[u64], counts: &mut [u64]) {
    let b = i128::from(h.bin_width_ps);
    // Δt lies in the histogram iff 2Δt ∈ [−(2h+1)b, (2h+1)b)
    let reach = (2 * h.half_bins as i128 + 1) * b;
    let Some(&first) = t0s.first() else { return };
    let mut lo = t1s.partition_point(|&t1| 2 * (i128::from(t1) - i128::from(first)) < -reach);
    for &t0 in t0s {
        let t0 = i128::from(t0);
        while lo < t1s.len() && 2 * (i128::from(t1s[lo]) - t0) < -reach {
            lo += 1;
        }
        for &t1 in &t1s[lo..] {
            let dt = i128::from(t1) - t0;
            if 2 * dt >= reach {
                break;
            }
            let k = (2 * dt + b).div_euclid(2 * b) + h.half_bins as i128;
            counts[k as usize] += 1;
        }
    }
}

/// Counts every (channel-0, channel-1) event pair by `t₁ − t₀`.
///
/// The acquisition time is taken from the stream, or from its timestamp span
/// when the stream does not carry one.
pub fn histogram(stream: &TimeTagStream, bin_width_ps: u64, window_ps: u64) -> Result<CoincidenceHistogram> {
    let acquisition = if stream.duration_s > 0.0 {
        stream.duration_s
    } else {
        match (stream.events.first(), stream.events.last()) {
            (Some(a), Some(b)) => b.timestamp_ps.saturating_sub(a.timestamp_ps) as f64 * 1e-12,
            _ => 0.0,
        }
    };
    let mut h = CoincidenceHistogram::zeros(bin_width_ps, window_ps, acquisition)?;
    let [t0s, t1s] = split_channels(stream)?;
    h.channel_counts = [t0s.len() as u64, t1s.len() as u64];
    let n = h.counts.len();
    if t0s.len() <= SHARD {
        let mut counts = vec![0; n];
        sweep(&h, &t0s, &t1s, &mut counts);
        h.counts = counts;
    } else {
        h.counts = t0s
            .par_chunks(SHARD)
            .map(|chunk| {
                let mut counts = vec![0; n];
                sweep(&h, chunk, &t1s, &mut counts);
                counts
            })
            .reduce(
                || vec![0; n],
                |mut a, b| {
                    a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                    a
                },
            );
    }
    Ok(h)
}

/// Mean coincidences per bin-width far from zero delay, from a second pass
/// with channel 1 delayed by `delay_ps`. Counts `Δt − delay` in
/// `[−span_ps, span_ps)`. Returns (level per bin, σ).
pub fn shifted_window_accidentals(
    stream: &TimeTagStream,
    bin_width_ps: u64,
    delay_ps: u64,
    span_ps: u64,
) -> Result<(f64, f64)> {
    if span_ps < bin_width_ps {
        return Err(Error::config("span", "must cover at least one bin"));
    }
    let [t0s, t1s] = split_channels(stream)?;
    let (lo_off, hi_off) = (i128::from(delay_ps) - i128::from(span_ps), i128::from(delay_ps) + i128::from(span_ps));
    let mut n = 0u64;
    let mut lo = 0usize;
    for &t0 in &t0s {
        let t0 = i128::from(t0);
        while lo < t1s.len() && i128::from(t1s[lo]) - t0 < lo_off {
            lo += 1;
        }
        n += t1s[lo..].iter().take_while(|&&t1| i128::from(t1) - t0 < hi_off).count() as u64;
    }
    let bins = 2.0 * span_ps as f64 / bin_width_ps as f64;
    Ok((n as f64 / bins, (n as f64).sqrt() / bins))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CarValue {
    Finite { value: f64, sigma: f64 },
    /// Peak present but no accidentals in the sidebands.
    Unbounded,
    /// Neither peak nor sidebands have counts.
    Undefined,
}

impl CarValue {
    pub fn value(&self) -> f64 {
        match *self {
            CarValue::Finite { value, .. } => value,
            CarValue::Unbounded => f64::INFINITY,
            CarValue::Undefined => f64::NAN,
        }
    }
}

/// Where the accidental level comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Accidentals {
    /// Bins of the same histogram beyond 3× the peak half-width.
    Sidebands,
    /// A level measured elsewhere, e.g. by [`shifted_window_accidentals`].
    External { level: f64, sigma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarAndRate {
    pub car: CarValue,
    pub pair_rate_hz: f64,
    pub pair_rate_sigma_hz: f64,
    /// Mean accidental coincidences per bin.
    pub accidental_level: f64,
    pub accidental_sigma: f64,
    pub peak_bins: usize,
    pub sideband_bins: usize,
    pub peak_halfwidth_ps: f64,
}

/// CAR and true-pair rate with sideband accidentals.
pub fn car_and_rate(h: &CoincidenceHistogram, peak_halfwidth_ps: f64) -> Result<CarAndRate> {
    car_and_rate_with(h, peak_halfwidth_ps, Accidentals::Sidebands)
}

/// Peak bins have `|centre| ≤ peak_halfwidth`. With `P` peak counts over
/// `Np` bins and accidental level `a ± σa` per bin:
///
/// ```text
/// pair_rate = (P − a·Np) / T,   σ = sqrt(P + Np²σa²) / T
/// CAR       = max(peak bins) / a
/// ```
pub fn car_and_rate_with(h: &CoincidenceHistogram, peak_halfwidth_ps: f64, accidentals: Accidentals) -> Result<CarAndRate> {
    if !(peak_halfwidth_ps.is_finite() && peak_halfwidth_ps >= 0.0) {
        return Err(Error::config("peak_halfwidth", "must be >= 0"));
    }
    if !(h.acquisition_time_s > 0.0) {
        return Err(Error::config("acquisition_time", "histogram has no acquisition time; rates are undefined"));
    }
    let mut peak_sum = 0u64;
    let mut peak_max = 0u64;
    let mut peak_bins = 0usize;
    let mut side_sum = 0u64;
    let mut side_bins = 0usize;
    for (k, &c) in h.counts.iter().enumerate() {
        let t = h.bin_center_ps(k).abs();
        if t <= peak_halfwidth_ps {
            peak_sum += c;
            peak_max = peak_max.max(c);
            peak_bins += 1;
        } else if t > 3.0 * peak_halfwidth_ps {
            side_sum += c;
            side_bins += 1;
        }
    }
    let (level, level_sigma) = match accidentals {
        Accidentals::Sidebands => {
            if (h.window_ps() as f64) < 6.0 * peak_halfwidth_ps || side_bins == 0 {
                return Err(Error::config(
                    "peak_halfwidth",
                    format!(
                        "window ±{} ps leaves no sidebands beyond 3×{peak_halfwidth_ps} ps; need window >= 6× peak_halfwidth",
                        h.window_ps()
                    ),
                ));
            }
            let n = side_bins as f64;
            (side_sum as f64 / n, (side_sum as f64).sqrt() / n)
        }
        Accidentals::External { level, sigma } => (level, sigma),
    };
    let np = peak_bins as f64;
    let t = h.acquisition_time_s;
    let pair_rate = (peak_sum as f64 - level * np) / t;
    let pair_sigma = (peak_sum as f64 + np * np * level_sigma * level_sigma).sqrt() / t;
    let car = if level > 0.0 {
        let value = peak_max as f64 / level;
        let rel = (if peak_max > 0 { 1.0 / peak_max as f64 } else { 0.0 }) + (level_sigma / level).powi(2);
        CarValue::Finite {
            value,
            sigma: value * rel.sqrt(),
        }
    } else if peak_max > 0 {
        CarValue::Unbounded
    } else {
        CarValue::Undefined
    };
    Ok(CarAndRate {
        car,
        pair_rate_hz: pair_rate,
        pair_rate_sigma_hz: pair_sigma,
        accidental_level: level,
        accidental_sigma: level_sigma,
        peak_bins,
        sideband_bins: side_bins,
        peak_halfwidth_ps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tagsim::{TimeTag, Truth, NO_PAIR};

    fn tag(channel: u8, t: u64) -> TimeTag {
        TimeTag {
            timestamp_ps: t,
            channel,
            truth: Truth::Unknown,
            pair_id: NO_PAIR,
        }
    }

    #[test]
    fn empty_stream_gives_zero_counts() {
        let h = histogram(&TimeTagStream::default(), 50, 50_000).unwrap();
        assert_eq!(h.len(), 2001);
        assert_eq!(h.total(), 0);
    }

    #[test]
    fn coincident_pair_lands_in_centre() {
        let s = TimeTagStream::new(vec![tag(0, 1000), tag(1, 1000)], 1.0);
        let h = histogram(&s, 50, 50_000).unwrap();
        assert_eq!(h.counts()[1000], 1);
        assert_eq!(h.total(), 1);
        assert_eq!(h.bin_center_ps(1000), 0.0);
    }

    #[test]
    fn edges_round_down() {
        let s = TimeTagStream::new(vec![tag(0, 1000), tag(1, 1025), tag(1, 1075)], 1.0);
        let h = histogram(&s, 50, 100).unwrap();
        // +25 is the lower edge of bin +1; +75 the lower edge of bin +2
        assert_eq!(h.counts(), &[0, 0, 0, 1, 1]);
        let s = TimeTagStream::new(vec![tag(1, 975), tag(0, 1000)], 1.0);
        let h = histogram(&s, 50, 100).unwrap();
        // −25 is the lower edge of bin 0
        assert_eq!(h.counts(), &[0, 0, 1, 0, 0]);
    }

    #[test]
    fn unsorted_is_an_error() {
        let s = TimeTagStream::new(vec![tag(0, 10), tag(1, 5)], 1.0);
        assert!(matches!(histogram(&s, 1, 10), Err(Error::Unsorted { index: 1, .. })));
    }

    #[test]
    fn flat_histogram_estimates() {
        let h = CoincidenceHistogram::from_parts(100, vec![50; 201], 10.0, [0, 0]).unwrap();
        let r = car_and_rate(&h, 500.0).unwrap();
        assert_eq!(r.pair_rate_hz, 0.0);
        assert!((r.car.value() - 1.0).abs() < 1e-12);
        assert!(r.pair_rate_sigma_hz > 0.0);
    }

    #[test]
    fn zero_sidebands() {
        let mut counts = vec![0; 201];
        counts[100] = 7;
        let h = CoincidenceHistogram::from_parts(100, counts, 10.0, [0, 0]).unwrap();
        let r = car_and_rate(&h, 500.0).unwrap();
        assert_eq!(r.car, CarValue::Unbounded);
        assert!((r.pair_rate_hz - 0.7).abs() < 1e-12);
        let h = CoincidenceHistogram::from_parts(100, vec![0; 201], 10.0, [0, 0]).unwrap();
        assert_eq!(car_and_rate(&h, 500.0).unwrap().car, CarValue::Undefined);
    }

    #[test]
    fn needs_sidebands() {
        let h = CoincidenceHistogram::from_parts(100, vec![1; 21], 10.0, [0, 0]).unwrap();
        assert!(car_and_rate(&h, 500.0).is_err());
    }

    #[test]
    fn merge_and_csv_round_trip() {
        let s = TimeTagStream::new(vec![tag(0, 1000), tag(1, 1100), tag(1, 1900)], 2.0);
        let mut h = histogram(&s, 50, 1000).unwrap();
        let other = h.clone();
        h.merge(&other).unwrap();
        assert_eq!(h.total(), 4);
        assert_eq!(h.acquisition_time_s(), 4.0);
        let meta: HistogramMetadata = serde_json::from_str(&serde_json::to_string(&h.metadata(None)).unwrap()).unwrap();
        let back = CoincidenceHistogram::from_csv(&h.to_csv(), "h.csv", &meta).unwrap();
        assert_eq!(back, h);
    }

    #[test]
    fn shifted_window_level() {
        // one ch0 event and ch1 events every 100 ps
        let mut ev = vec![tag(0, 0)];
        ev.extend((0..1000).map(|i| tag(1, i * 100)));
        let s = TimeTagStream::new(ev, 1.0);
        let (level, _) = shifted_window_accidentals(&s, 100, 50_000, 10_000).unwrap();
        assert!((level - 1.0).abs() < 1e-12);
    }
}
