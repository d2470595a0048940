//! Minimal SVG charts: line plots and a speaker-grid heatmap.

use std::fmt::Write as _;

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 56.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
}

impl Series {
    pub fn new(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self { label: label.into(), points, dashed: false }
    }

    pub fn dashed(mut self) -> Self {
        self.dashed = true;
        self
    }
}

fn bounds(series: &[Series]) -> (f64, f64, f64, f64) {
    let pts = series.iter().flat_map(|s| s.points.iter()).filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        return (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    let pad = ((y1 - y0) * 0.05).max(1e-6);
    (x0, x1, y0 - pad, y1 + pad)
}

fn header(s: &mut String, title: &str) {
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title)).unwrap();
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (x0, x1, y0, y1) = bounds(series);
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let mut s = String::new();
    header(&mut s, title);
    writeln!(s, r#"<g stroke="black" fill="none"><rect x="{PAD}" y="{PAD}" width="{}" height="{}"/></g>"#, W - 2.0 * PAD, H - 2.0 * PAD).unwrap();
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{:.3}</text>"#, sx(xv), H - PAD + 16.0, xv).unwrap();
        writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.3}</text>"#, PAD - 4.0, sy(yv) + 4.0, yv).unwrap();
    }
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 12.0, escape(x_label)).unwrap();
    writeln!(s, r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#, H / 2.0, H / 2.0, escape(y_label)).unwrap();
    for (k, ser) in series.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let path: Vec<String> = ser
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let dash = if ser.dashed { r#" stroke-dasharray="5,4""# } else { "" };
        writeln!(s, r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5"{dash} points="{}"/>"#, path.join(" ")).unwrap();
        if !ser.label.is_empty() {
            let ly = PAD + 14.0 + 16.0 * k as f64;
            writeln!(s, r#"<text x="{:.1}" y="{ly:.1}" fill="{colour}">{}</text>"#, W - PAD - 4.0, escape(&ser.label))
                .unwrap();
        }
    }
    s.push_str("</svg>\n");
    s
}

/// One row per participant, one column per timestep. `shade` in [0, 1]
/// fills a cell; `marks` draws a dot (ground truth). The first `dark`
/// columns are drawn as observed.
pub fn speaker_grid(title: &str, shade: &[Vec<f64>], marks: &[Vec<bool>], dark: usize) -> String {
    let rows = shade.len();
    let cols = shade.first().map_or(0, Vec::len);
    let cw = (W - 2.0 * PAD) / cols.max(1) as f64;
    let ch = (H - 2.0 * PAD) / rows.max(1) as f64;
    let mut s = String::new();
    header(&mut s, title);
    for (r, row) in shade.iter().enumerate() {
        writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">p{r}</text>"#, PAD - 6.0, PAD + (r as f64 + 0.6) * ch).unwrap();
        for (c, &v) in row.iter().enumerate() {
            let v = v.clamp(0.0, 1.0);
            let (x, y) = (PAD + c as f64 * cw, PAD + r as f64 * ch);
            let fill = if c < dark {
                format!("rgb({0},{0},{0})", (255.0 * (1.0 - 0.85 * v)) as u8)
            } else {
                format!("rgb({},{},255)", (255.0 * (1.0 - 0.8 * v)) as u8, (255.0 * (1.0 - 0.6 * v)) as u8)
            };
            writeln!(s, r##"<rect x="{x:.1}" y="{y:.1}" width="{cw:.1}" height="{ch:.1}" fill="{fill}" stroke="#ccc"/>"##).unwrap();
            if marks.get(r).and_then(|m| m.get(c)).copied().unwrap_or(false) {
                writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="{:.1}" fill="red"/>"#, x + cw / 2.0, y + ch / 2.0, (cw.min(ch) / 6.0).max(2.0))
                    .unwrap();
            }
        }
    }
    for c in 0..cols {
        writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{c}</text>"#, PAD + (c as f64 + 0.5) * cw, H - PAD + 16.0).unwrap();
    }
    s.push_str("</svg>\n");
    s
}
