//! Minimal line charts written as standalone SVG.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Style {
    Line,
    Dashed,
    Markers,
}

#[derive(Clone, Debug)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    /// Half-widths of vertical error bars, one per point.
    pub err: Option<Vec<f64>>,
    pub style: Style,
}

impl Series {
    pub fn new(name: impl Into<String>, style: Style) -> Self {
        Self { name: name.into(), points: Vec::new(), err: None, style }
    }

    pub fn push(&mut self, x: f64, y: f64) {
        self.points.push((x, y));
    }

    pub fn push_err(&mut self, x: f64, y: f64, e: f64) {
        self.points.push((x, y));
        self.err.get_or_insert_with(Vec::new).push(e);
    }
}

#[derive(Clone, Debug, Default)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub series: Vec<Series>,
    /// Vertical reference lines with labels.
    pub vlines: Vec<(f64, String)>,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Roughly five round tick values covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| span / s <= 6.0).unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * span {
        out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
        t += step;
    }
    out
}

impl Chart {
    pub fn new(title: impl Into<String>, x_label: impl Into<String>, y_label: impl Into<String>) -> Self {
        Self { title: title.into(), x_label: x_label.into(), y_label: y_label.into(), ..Default::default() }
    }

    fn bounds(&self) -> (f64, f64, f64, f64) {
        let fx = |x: f64| if self.log_x { x.log10() } else { x };
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for s in &self.series {
            for (i, &(x, y)) in s.points.iter().enumerate() {
                if !x.is_finite() || !y.is_finite() || (self.log_x && x <= 0.0) {
                    continue;
                }
                let e = s.err.as_ref().map_or(0.0, |e| e[i]);
                x0 = x0.min(fx(x));
                x1 = x1.max(fx(x));
                y0 = y0.min(y - e);
                y1 = y1.max(y + e);
            }
        }
        for &(x, _) in &self.vlines {
            if x.is_finite() && (!self.log_x || x > 0.0) {
                x0 = x0.min(fx(x));
                x1 = x1.max(fx(x));
            }
        }
        if !x0.is_finite() {
            return (0.0, 1.0, 0.0, 1.0);
        }
        if x1 - x0 < 1e-12 {
            x0 -= 0.5;
            x1 += 0.5;
        }
        if y1 - y0 < 1e-12 {
            y0 -= 0.5;
            y1 += 0.5;
        }
        let pad = 0.05 * (y1 - y0);
        (x0, x1, y0 - pad, y1 + pad)
    }

    pub fn render(&self) -> String {
        let (x0, x1, y0, y1) = self.bounds();
        let pw = W - LEFT - RIGHT;
        let ph = H - TOP - BOTTOM;
        let fx = |x: f64| if self.log_x { x.log10() } else { x };
        let px = |x: f64| LEFT + (fx(x) - x0) / (x1 - x0) * pw;
        let py = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;
        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, LEFT + pw / 2.0, esc(&self.title));
        let _ = writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
        for t in ticks(x0, x1) {
            let xv = if self.log_x { 10f64.powf(t) } else { t };
            let x = px(xv);
            let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="black"/>"#, TOP + ph, TOP + ph + 5.0);
            let _ = writeln!(s, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#, TOP + ph + 18.0, tick_label(xv));
        }
        for t in ticks(y0, y1) {
            let y = py(t);
            let _ = writeln!(s, r#"<line x1="{}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="black"/>"#, LEFT - 5.0);
            let _ = writeln!(s, r##"<line x1="{LEFT}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#ddd"/>"##, LEFT + pw);
            let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 8.0, y + 4.0, tick_label(t));
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, H - 12.0, esc(&self.x_label));
        let _ = writeln!(
            s,
            r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#,
            TOP + ph / 2.0,
            esc(&self.y_label)
        );
        for (x, label) in &self.vlines {
            if !x.is_finite() {
                continue;
            }
            let xp = px(*x);
            let _ = writeln!(s, r##"<line x1="{xp:.2}" y1="{TOP}" x2="{xp:.2}" y2="{}" stroke="#555" stroke-dasharray="2,3"/>"##, TOP + ph);
            let _ = writeln!(s, r##"<text x="{:.2}" y="{}" fill="#555">{}</text>"##, xp + 3.0, TOP + 12.0, esc(label));
        }
        for (k, ser) in self.series.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            let pts: Vec<(usize, f64, f64)> = ser
                .points
                .iter()
                .enumerate()
                .filter(|(_, (x, y))| x.is_finite() && y.is_finite() && (!self.log_x || *x > 0.0))
                .map(|(i, &(x, y))| (i, px(x), py(y)))
                .collect();
            match ser.style {
                Style::Line | Style::Dashed => {
                    let d: Vec<String> = pts.iter().map(|(_, x, y)| format!("{x:.2},{y:.2}")).collect();
                    let dash = if ser.style == Style::Dashed { r#" stroke-dasharray="6,4""# } else { "" };
                    let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.8"{dash}/>"#, d.join(" "));
                }
                Style::Markers => {
                    for (_, x, y) in &pts {
                        let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3.5" fill="{color}"/>"#);
                    }
                }
            }
            if let Some(err) = &ser.err {
                for &(i, x, _) in &pts {
                    let (y, e) = (ser.points[i].1, err[i]);
                    let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="{color}"/>"#, py(y - e), py(y + e));
                }
            }
            let ly = TOP + 10.0 + 18.0 * k as f64;
            let lx = LEFT + pw + 12.0;
            let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 22.0);
            let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 28.0, ly + 4.0, esc(&ser.name));
        }
        s.push_str("</svg>\n");
        s
    }
}

fn tick_label(t: f64) -> String {
    let a = t.abs();
    if a != 0.0 && !(1e-3..1e4).contains(&a) {
        format!("{t:.0e}")
    } else {
        let s = format!("{t:.4}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        if s == "-0" { "0".into() } else { s.into() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_are_round_and_cover_range() {
        let t = ticks(0.13, 0.97);
        assert!(t.len() >= 3 && t.len() <= 7);
        assert!(t.iter().all(|&x| (0.13..=0.97).contains(&x)));
        assert!((t[1] - t[0] - 0.2).abs() < 1e-12 || (t[1] - t[0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn renders_every_series() {
        let mut c = Chart::new("t", "x", "y");
        let mut a = Series::new("a < b", Style::Line);
        a.push(1.0, 2.0);
        a.push(2.0, 3.0);
        let mut b = Series::new("b", Style::Markers);
        b.push_err(1.5, 2.5, 0.1);
        c.series = vec![a, b];
        c.vlines.push((1.2, "α".into()));
        let svg = c.render();
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert!(svg.contains("<polyline") && svg.contains("<circle"));
        assert!(svg.contains("a &lt; b"));
    }

    #[test]
    fn log_axis_skips_nonpositive_points() {
        let mut c = Chart::new("t", "x", "y");
        c.log_x = true;
        let mut a = Series::new("a", Style::Line);
        a.push(0.0, 1.0);
        a.push(10.0, 1.0);
        a.push(1000.0, 2.0);
        c.series.push(a);
        assert!(!c.render().contains("NaN"));
    }
}
