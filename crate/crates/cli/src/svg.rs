//! Static Bode plot emitter.

use std::fmt::Write;

use bdft_core::Complex64;

const WIDTH: f64 = 720.0;
const PANEL_H: f64 = 260.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const GAP: f64 = 50.0;

pub struct Curve {
    pub omegas: Vec<f64>,
    pub values: Vec<Complex64>,
    pub stroke: &'static str,
    pub width: f64,
}

pub struct Markers {
    pub omegas: Vec<f64>,
    pub values: Vec<Complex64>,
    pub fill: &'static str,
}

/// Phase in degrees mapped to (-270, 90].
fn phase_deg(h: Complex64) -> f64 {
    let p = h.arg().to_degrees();
    if p > 90.0 {
        p - 360.0
    } else {
        p
    }
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn frac(&self, v: f64) -> f64 {
        if self.log {
            (v.ln() - self.lo.ln()) / (self.hi.ln() - self.lo.ln())
        } else {
            (v - self.lo) / (self.hi - self.lo)
        }
    }
}

fn decades(lo: f64, hi: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut e = lo.log10().floor() as i32;
    while 10f64.powi(e) <= hi * (1.0 + 1e-12) {
        let v = 10f64.powi(e);
        if v >= lo * (1.0 - 1e-12) {
            out.push(v);
        }
        e += 1;
    }
    out
}

fn log_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite() && *v > 0.0) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.1, 10.0);
    }
    (
        10f64.powf(lo.log10().floor()),
        10f64.powf(hi.log10().ceil()).max(10f64.powf(lo.log10().floor() + 1.0)),
    )
}

pub fn bode(title: &str, curves: &[Curve], markers: &[Markers]) -> String {
    let all_w = curves
        .iter()
        .flat_map(|c| c.omegas.iter())
        .chain(markers.iter().flat_map(|m| m.omegas.iter()))
        .copied();
    let (wlo, whi) = log_range(all_w);
    let all_mag = curves
        .iter()
        .flat_map(|c| c.values.iter())
        .chain(markers.iter().flat_map(|m| m.values.iter()))
        .map(|v| v.norm());
    let (mlo, mhi) = log_range(all_mag);

    let x_axis = Axis { lo: wlo, hi: whi, log: true };
    let mag_axis = Axis { lo: mlo, hi: mhi, log: true };
    let ph_axis = Axis { lo: -270.0, hi: 90.0, log: false };
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let height = MARGIN_T + 2.0 * PANEL_H + GAP + 40.0;
    let top = [MARGIN_T, MARGIN_T + PANEL_H + GAP];
    let px = |w: f64| MARGIN_L + x_axis.frac(w) * plot_w;
    let py = |panel: usize, frac: f64| top[panel] + (1.0 - frac) * PANEL_H;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );

    for (panel, label) in [(0, "|H| [mm/(m/s²)]"), (1, "phase [deg]")] {
        let _ = writeln!(
            s,
            r#"<rect x="{MARGIN_L}" y="{}" width="{plot_w}" height="{PANEL_H}" fill="none" stroke="black"/>"#,
            top[panel]
        );
        let _ = writeln!(
            s,
            r#"<text x="14" y="{:.1}" transform="rotate(-90 14 {:.1})" text-anchor="middle">{}</text>"#,
            top[panel] + PANEL_H / 2.0,
            top[panel] + PANEL_H / 2.0,
            escape(label)
        );
        for w in decades(wlo, whi) {
            let x = px(w);
            let _ = writeln!(
                s,
                r##"<line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="#ddd"/>"##,
                top[panel],
                top[panel] + PANEL_H
            );
            if panel == 1 {
                let _ = writeln!(
                    s,
                    r#"<text x="{x:.2}" y="{:.1}" text-anchor="middle">{}</text>"#,
                    top[panel] + PANEL_H + 14.0,
                    w
                );
            }
        }
    }
    for m in decades(mlo, mhi) {
        let y = py(0, mag_axis.frac(m));
        let _ = writeln!(
            s,
            r##"<line x1="{MARGIN_L}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#ddd"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"##,
            MARGIN_L + plot_w,
            MARGIN_L - 4.0,
            y + 4.0,
            m
        );
    }
    for deg in [-270.0, -180.0, -90.0, 0.0, 90.0] {
        let y = py(1, ph_axis.frac(deg));
        let _ = writeln!(
            s,
            r##"<line x1="{MARGIN_L}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#ddd"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"##,
            MARGIN_L + plot_w,
            MARGIN_L - 4.0,
            y + 4.0,
            deg
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{:.1}" text-anchor="middle">ω [rad/s]</text>"#,
        MARGIN_L + plot_w / 2.0,
        height - 6.0
    );

    for c in curves {
        for panel in 0..2 {
            let pts: Vec<String> = c
                .omegas
                .iter()
                .zip(&c.values)
                .map(|(&w, &h)| {
                    let f = if panel == 0 {
                        mag_axis.frac(h.norm())
                    } else {
                        ph_axis.frac(phase_deg(h))
                    };
                    format!("{:.2},{:.2}", px(w), py(panel, f.clamp(0.0, 1.0)))
                })
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{}" stroke-width="{}" points="{}"/>"#,
                c.stroke,
                c.width,
                pts.join(" ")
            );
        }
    }
    for m in markers {
        for (&w, &h) in m.omegas.iter().zip(&m.values) {
            let x = px(w);
            let y0 = py(0, mag_axis.frac(h.norm()).clamp(0.0, 1.0));
            let y1 = py(1, ph_axis.frac(phase_deg(h)).clamp(0.0, 1.0));
            let _ = writeln!(
                s,
                r#"<circle cx="{x:.2}" cy="{y0:.2}" r="2.5" fill="{0}"/><circle cx="{x:.2}" cy="{y1:.2}" r="2.5" fill="{0}"/>"#,
                m.fill
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Log-spaced frequency grid with `n` points.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64))
        .collect()
}
