//! Minimal standalone SVG plots: axes with ticks, line and step series,
//! optional logarithmic y axis.

use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesStyle {
    Line,
    /// Histogram-like steps centred on each x.
    Step,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub style: SeriesStyle,
    pub color: String,
}

impl Series {
    pub fn new(label: impl Into<String>, x: Vec<f64>, y: Vec<f64>, style: SeriesStyle) -> Self {
        Self {
            label: label.into(),
            x,
            y,
            style,
            color: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_y: bool,
    pub width: f64,
    pub height: f64,
    pub series: Vec<Series>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#444444"];

impl Plot {
    pub fn new(title: impl Into<String>, x_label: impl Into<String>, y_label: impl Into<String>) -> Self {
        Self {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            log_y: false,
            width: 720.0,
            height: 440.0,
            series: Vec::new(),
        }
    }

    pub fn log_y(mut self, on: bool) -> Self {
        self.log_y = on;
        self
    }

    pub fn with(mut self, series: Series) -> Self {
        self.series.push(series);
        self
    }

    pub fn to_svg(&self) -> Result<String> {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for s in &self.series {
            if s.x.len() != s.y.len() {
                return Err(Error::config("plot", format!("series `{}` has mismatched lengths", s.label)));
            }
            for (&x, &y) in s.x.iter().zip(&s.y) {
                if x.is_finite() && y.is_finite() && (!self.log_y || y > 0.0) {
                    xs.push(x);
                    ys.push(if self.log_y { y.log10() } else { y });
                }
            }
        }
        if xs.is_empty() {
            return Err(Error::config("plot", "no finite points to draw"));
        }
        let (mut x0, mut x1) = min_max(&xs);
        let (mut y0, mut y1) = min_max(&ys);
        if !self.log_y {
            y0 = y0.min(0.0);
        }
        if x1 == x0 {
            x0 -= 0.5;
            x1 += 0.5;
        }
        if y1 == y0 {
            y1 = y0 + 1.0;
        }
        let pad = 0.05 * (y1 - y0);
        y1 += pad;
        if self.log_y {
            y0 -= pad;
        }

        let (w, h) = (self.width, self.height);
        let (ml, mr, mt, mb) = (80.0, 20.0, 40.0, 60.0);
        let (pw, ph) = (w - ml - mr, h - mt - mb);
        let px = |x: f64| ml + (x - x0) / (x1 - x0) * pw;
        let py = |y: f64| mt + ph - (y - y0) / (y1 - y0) * ph;

        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
            w / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(svg, r#"<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);

        for t in ticks(x0, x1) {
            let x = px(t);
            let _ = writeln!(svg, r#"<line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="black"/>"#, mt + ph, mt + ph + 5.0);
            let _ = writeln!(svg, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#, mt + ph + 18.0, fmt_tick(t));
        }
        for t in ticks(y0, y1) {
            let y = py(t);
            let label = if self.log_y { format!("1e{}", fmt_tick(t)) } else { fmt_tick(t) };
            let _ = writeln!(svg, r#"<line x1="{}" y1="{y:.2}" x2="{ml}" y2="{y:.2}" stroke="black"/>"#, ml - 5.0);
            let _ = writeln!(svg, r#"<text x="{}" y="{:.2}" text-anchor="end">{label}</text>"#, ml - 8.0, y + 4.0);
        }
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            ml + pw / 2.0,
            h - 15.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            svg,
            r#"<text x="20" y="{}" text-anchor="middle" transform="rotate(-90 20 {})">{}</text>"#,
            mt + ph / 2.0,
            mt + ph / 2.0,
            escape(&self.y_label)
        );

        for (i, s) in self.series.iter().enumerate() {
            let color = if s.color.is_empty() { PALETTE[i % PALETTE.len()] } else { &s.color };
            let pts: Vec<(f64, f64)> = s
                .x
                .iter()
                .zip(&s.y)
                .filter(|(x, y)| x.is_finite() && y.is_finite() && (!self.log_y || **y > 0.0))
                .map(|(&x, &y)| (x, if self.log_y { y.log10() } else { y }))
                .collect();
            let mut d = String::new();
            match s.style {
                SeriesStyle::Line => {
                    for (k, (x, y)) in pts.iter().enumerate() {
                        let _ = write!(d, "{}{:.2},{:.2} ", if k == 0 { 'M' } else { 'L' }, px(*x), py(*y));
                    }
                }
                SeriesStyle::Step => {
                    for (k, &(x, y)) in pts.iter().enumerate() {
                        let left = if k > 0 { 0.5 * (pts[k - 1].0 + x) } else { x - half_gap(&pts, k) };
                        let right = if k + 1 < pts.len() { 0.5 * (x + pts[k + 1].0) } else { x + half_gap(&pts, k) };
                        let _ = write!(
                            d,
                            "{}{:.2},{:.2} L{:.2},{:.2} ",
                            if k == 0 { 'M' } else { 'L' },
                            px(left),
                            py(y),
                            px(right),
                            py(y)
                        );
                    }
                }
            }
            let _ = writeln!(svg, r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, d.trim_end());
            let ly = mt + 16.0 + 16.0 * i as f64;
            let _ = writeln!(
                svg,
                r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
                ml + pw - 150.0,
                ml + pw - 125.0,
                ml + pw - 120.0,
                ly + 4.0,
                escape(&s.label)
            );
        }
        svg.push_str("</svg>\n");
        Ok(svg)
    }
}

fn half_gap(pts: &[(f64, f64)], k: usize) -> f64 {
    if pts.len() < 2 {
        return 0.5;
    }
    let j = if k == 0 { 1 } else { k };
    0.5 * (pts[j].0 - pts[j - 1].0).abs()
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)))
}

/// Round tick positions, about six per axis.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let raw = (hi - lo) / 6.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let start = (lo / step).ceil() as i64;
    let end = (hi / step).floor() as i64;
    (start..=end).map(|i| i as f64 * step).collect()
}

fn fmt_tick(t: f64) -> String {
    let a = t.abs();
    if a != 0.0 && !(1e-3..1e6).contains(&a) {
        format!("{t:.1e}")
    } else {
        let s = format!("{t:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_owned()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_line_and_step() {
        let x: Vec<f64> = (0..50).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| 1.0 + v * v).collect();
        let svg = Plot::new("t <1>", "x", "y")
            .with(Series::new("line", x.clone(), y.clone(), SeriesStyle::Line))
            .with(Series::new("step", x, y, SeriesStyle::Step))
            .log_y(true)
            .to_svg()
            .unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("t &lt;1&gt;"));
        assert_eq!(svg.matches("<path").count(), 2);
    }

    #[test]
    fn empty_plot_is_an_error() {
        assert!(Plot::new("", "", "").to_svg().is_err());
        let s = Series::new("zeros", vec![1.0], vec![0.0], SeriesStyle::Line);
        assert!(Plot::new("", "", "").log_y(true).with(s).to_svg().is_err());
    }

    #[test]
    fn tick_spacing() {
        assert_eq!(ticks(0.0, 10.0), vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0]);
        assert_eq!(fmt_tick(1500.0), "1500");
        assert_eq!(fmt_tick(0.25), "0.25");
    }
}
