//! Minimal SVG emitters: heatmaps, scatter overlays and line plots.

use std::fmt::Write;

const W: f64 = 480.0;
const H: f64 = 400.0;
const MARGIN: f64 = 50.0;

/// Piecewise-linear blue–green–yellow gradient on `t ∈ [0, 1]`.
pub fn color(t: f64) -> String {
    const STOPS: [(f64, [f64; 3]); 5] = [
        (0.0, [68.0, 1.0, 84.0]),
        (0.25, [59.0, 82.0, 139.0]),
        (0.5, [33.0, 145.0, 140.0]),
        (0.75, [94.0, 201.0, 98.0]),
        (1.0, [253.0, 231.0, 37.0]),
    ];
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let k = STOPS
        .iter()
        .rposition(|(s, _)| *s <= t)
        .unwrap_or(0)
        .min(STOPS.len() - 2);
    let (s0, c0) = STOPS[k];
    let (s1, c1) = STOPS[k + 1];
    let u = (t - s0) / (s1 - s0);
    let c: Vec<u8> = (0..3).map(|i| (c0[i] + u * (c1[i] - c0[i])).round() as u8).collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

pub struct Frame {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x_range.0) / (self.x_range.1 - self.x_range.0) * (W - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        H - MARGIN - (y - self.y_range.0) / (self.y_range.1 - self.y_range.0) * (H - 2.0 * MARGIN)
    }

    fn open(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#,
            W / 2.0,
            escape(&self.title)
        );
        s
    }

    fn close(&self, mut s: String) -> String {
        let (x0, x1) = (self.px(self.x_range.0), self.px(self.x_range.1));
        let (y0, y1) = (self.py(self.y_range.0), self.py(self.y_range.1));
        let _ = writeln!(
            s,
            r#"<rect x="{x0:.2}" y="{y1:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
            x1 - x0,
            y0 - y1
        );
        for k in 0..=4 {
            let fx = self.x_range.0 + k as f64 / 4.0 * (self.x_range.1 - self.x_range.0);
            let fy = self.y_range.0 + k as f64 / 4.0 * (self.y_range.1 - self.y_range.0);
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                self.px(fx),
                y0 + 15.0,
                tick(fx)
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
                x0 - 4.0,
                self.py(fy) + 4.0,
                tick(fy)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            W / 2.0,
            H - 12.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
            H / 2.0,
            H / 2.0,
            escape(&self.y_label)
        );
        s.push_str("</svg>\n");
        s
    }
}

fn tick(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn cells(frame: &Frame, s: &mut String, values: &[f64], rows: usize, cols: usize) {
    let vmax = values.iter().copied().fold(0.0, f64::max);
    let vmin = values.iter().copied().fold(f64::INFINITY, f64::min).min(0.0);
    let span = if vmax > vmin { vmax - vmin } else { 1.0 };
    let dx = (frame.x_range.1 - frame.x_range.0) / cols as f64;
    let dy = (frame.y_range.1 - frame.y_range.0) / rows as f64;
    for r in 0..rows {
        for c in 0..cols {
            let v = values[r * cols + c];
            let x0 = frame.px(frame.x_range.0 + c as f64 * dx);
            let x1 = frame.px(frame.x_range.0 + (c + 1) as f64 * dx);
            let y0 = frame.py(frame.y_range.0 + r as f64 * dy);
            let y1 = frame.py(frame.y_range.0 + (r + 1) as f64 * dy);
            let _ = writeln!(
                s,
                r#"<rect x="{x0:.2}" y="{y1:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                x1 - x0 + 0.05,
                y0 - y1 + 0.05,
                color((v - vmin) / span)
            );
        }
    }
}

/// Row-major `rows × cols` values; row `r` is drawn at the `r`-th slice of
/// the y range, column `c` at the `c`-th slice of the x range.
pub fn heatmap(frame: &Frame, values: &[f64], rows: usize, cols: usize) -> String {
    assert_eq!(values.len(), rows * cols);
    let mut s = frame.open();
    cells(frame, &mut s, values, rows, cols);
    frame.close(s)
}

/// Heatmap with black dots at `points`.
pub fn heatmap_with_points(frame: &Frame, values: &[f64], rows: usize, cols: usize, points: &[(f64, f64)]) -> String {
    let mut s = frame.open();
    cells(frame, &mut s, values, rows, cols);
    dots(frame, &mut s, points);
    frame.close(s)
}

fn dots(frame: &Frame, s: &mut String, points: &[(f64, f64)]) {
    for &(x, y) in points {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="1.6" fill="black"/>"#,
            frame.px(x),
            frame.py(y)
        );
    }
}

pub fn scatter(frame: &Frame, points: &[(f64, f64)]) -> String {
    let mut s = frame.open();
    dots(frame, &mut s, points);
    frame.close(s)
}

/// Polylines with markers; the frame ranges are in plotted coordinates
/// (already log-transformed when a log plot is wanted).
pub fn lines(frame: &Frame, series: &[(String, Vec<(f64, f64)>)]) -> String {
    const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
    let mut s = frame.open();
    for (k, (name, pts)) in series.iter().enumerate() {
        let col = PALETTE[k % PALETTE.len()];
        let path: Vec<String> = pts
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", frame.px(x), frame.py(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{col}" stroke-width="1.5"/>"#,
            path.join(" ")
        );
        for p in &path {
            let (x, y) = p.split_once(',').unwrap();
            let _ = writeln!(s, r#"<circle cx="{x}" cy="{y}" r="2.5" fill="{col}"/>"#);
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{col}">{}</text>"#,
            W - MARGIN - 110.0,
            MARGIN + 14.0 * (k as f64 + 1.0),
            escape(name)
        );
    }
    frame.close(s)
}

/// Range of finite values padded by 5%.
pub fn padded_range(values: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .into_iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 };
    (lo - pad, hi + pad)
}
