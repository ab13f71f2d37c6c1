//! Self-contained SVG line charts; no plotting dependency so runs are
//! hermetic.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 50.0;
const COLORS: [&str; 6] = [
    "#1f6feb", "#d73a49", "#22863a", "#b08800", "#6f42c1", "#e36209",
];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub series: Vec<Series>,
}

impl Chart {
    pub fn render(&self) -> String {
        let tx = |v: f64| if self.log_x { v.log10() } else { v };
        let ty = |v: f64| if self.log_y { v.max(1e-300).log10() } else { v };
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for s in &self.series {
            for &(x, y) in &s.points {
                xs.push(tx(x));
                ys.push(ty(y));
            }
        }
        let (x0, x1) = bounds(&xs);
        let (y0, y1) = bounds(&ys);
        let px = |x: f64| MARGIN_L + (tx(x) - x0) / (x1 - x0) * (WIDTH - MARGIN_L - MARGIN_R);
        let py = |y: f64| {
            HEIGHT - MARGIN_B - (ty(y) - y0) / (y1 - y0) * (HEIGHT - MARGIN_T - MARGIN_B)
        };

        let mut out = String::new();
        let _ = write!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
        );
        let _ = write!(
            out,
            r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
        );
        let _ = write!(
            out,
            r#"<text x="{}" y="20" text-anchor="middle" font-family="monospace" font-size="14">{}</text>"#,
            WIDTH / 2.0,
            escape(&self.title)
        );
        // axes
        let _ = write!(
            out,
            r#"<line x1="{MARGIN_L}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
            HEIGHT - MARGIN_B,
            WIDTH - MARGIN_R,
            HEIGHT - MARGIN_B
        );
        let _ = write!(
            out,
            r#"<line x1="{MARGIN_L}" y1="{MARGIN_T}" x2="{MARGIN_L}" y2="{}" stroke="black"/>"#,
            HEIGHT - MARGIN_B
        );
        // ticks (5 per axis, in transformed space)
        for i in 0..=4 {
            let fx = x0 + (x1 - x0) * i as f64 / 4.0;
            let sx = MARGIN_L + (WIDTH - MARGIN_L - MARGIN_R) * i as f64 / 4.0;
            let label = if self.log_x {
                format!("{:.2e}", 10f64.powf(fx))
            } else {
                format!("{fx:.3}")
            };
            let _ = write!(
                out,
                r#"<line x1="{sx}" y1="{}" x2="{sx}" y2="{}" stroke="black"/><text x="{sx}" y="{}" text-anchor="middle" font-family="monospace" font-size="10">{label}</text>"#,
                HEIGHT - MARGIN_B,
                HEIGHT - MARGIN_B + 5.0,
                HEIGHT - MARGIN_B + 18.0
            );
            let fy = y0 + (y1 - y0) * i as f64 / 4.0;
            let sy = HEIGHT - MARGIN_B - (HEIGHT - MARGIN_T - MARGIN_B) * i as f64 / 4.0;
            let label = if self.log_y {
                format!("{:.2e}", 10f64.powf(fy))
            } else {
                format!("{fy:.3}")
            };
            let _ = write!(
                out,
                r#"<line x1="{}" y1="{sy}" x2="{MARGIN_L}" y2="{sy}" stroke="black"/><text x="{}" y="{}" text-anchor="end" font-family="monospace" font-size="10">{label}</text>"#,
                MARGIN_L - 5.0,
                MARGIN_L - 8.0,
                sy + 3.0
            );
        }
        let _ = write!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle" font-family="monospace" font-size="12">{}</text>"#,
            WIDTH / 2.0,
            HEIGHT - 10.0,
            escape(&self.x_label)
        );
        let _ = write!(
            out,
            r#"<text x="15" y="{}" text-anchor="middle" font-family="monospace" font-size="12" transform="rotate(-90 15 {})">{}</text>"#,
            HEIGHT / 2.0,
            HEIGHT / 2.0,
            escape(&self.y_label)
        );
        for (si, s) in self.series.iter().enumerate() {
            let color = COLORS[si % COLORS.len()];
            let pts: Vec<String> = s
                .points
                .iter()
                .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
                .collect();
            let _ = write!(
                out,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                pts.join(" ")
            );
            for &(x, y) in &s.points {
                let _ = write!(
                    out,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                    px(x),
                    py(y)
                );
            }
            let _ = write!(
                out,
                r#"<text x="{}" y="{}" font-family="monospace" font-size="11" fill="{color}">{}</text>"#,
                WIDTH - MARGIN_R - 150.0,
                MARGIN_T + 15.0 * (si as f64 + 1.0),
                escape(&s.label)
            );
        }
        out.push_str("</svg>");
        out
    }
}

fn bounds(vals: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in vals {
        if v.is_finite() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
