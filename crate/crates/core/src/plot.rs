//! Minimal static SVG charts: line plots with interquartile bands and box
//! plots. Output depends only on the input numbers, so reruns are
//! byte-identical.

use std::fmt::Write;

const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 190.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

/// One line with an optional shaded band.
#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub label: String,
    pub y: Vec<f64>,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if !(0.01..1000.0).contains(&a) {
        format!("{v:.1e}")
    } else if a >= 10.0 {
        format!("{v:.0}")
    } else {
        let s = format!("{v:.2}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// Roughly five evenly spaced round tick values covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|&s| s >= raw)
        .unwrap_or(10.0 * mag);
    let start = (lo / step).ceil() as i64;
    let end = (hi / step).floor() as i64;
    (start..=end).map(|k| k as f64 * step).collect()
}

struct Frame {
    x_lo: f64,
    x_hi: f64,
    y_lo: f64,
    y_hi: f64,
}

impl Frame {
    fn new(x_lo: f64, x_hi: f64, mut y_lo: f64, mut y_hi: f64) -> Self {
        if !(y_hi > y_lo) {
            y_lo -= 0.5;
            y_hi += 0.5;
        }
        let pad = 0.05 * (y_hi - y_lo);
        Frame {
            x_lo,
            x_hi: if x_hi > x_lo { x_hi } else { x_lo + 1.0 },
            y_lo: y_lo - pad,
            y_hi: y_hi + pad,
        }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x_lo) / (self.x_hi - self.x_lo) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y_lo) / (self.y_hi - self.y_lo) * (HEIGHT - TOP - BOTTOM)
    }
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        (WIDTH - RIGHT + LEFT) / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, f: &Frame, x_label: &str, y_label: &str, x_ticks: bool) {
    let (x0, x1) = (LEFT, WIDTH - RIGHT);
    let (y0, y1) = (HEIGHT - BOTTOM, TOP);
    let _ = writeln!(
        out,
        r#"<path d="M{x0} {y1} L{x0} {y0} L{x1} {y0}" fill="none" stroke="black"/>"#
    );
    for t in ticks(f.y_lo, f.y_hi) {
        let y = f.py(t);
        let _ = writeln!(
            out,
            r##"<line x1="{x0}" y1="{y:.2}" x2="{x1}" y2="{y:.2}" stroke="#e5e5e5"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"##,
            x0 - 6.0,
            y + 4.0,
            fmt_tick(t)
        );
    }
    if x_ticks {
        for t in ticks(f.x_lo, f.x_hi) {
            let x = f.px(t);
            let _ = writeln!(
                out,
                r#"<line x1="{x:.2}" y1="{y0}" x2="{x:.2}" y2="{}" stroke="black"/><text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#,
                y0 + 5.0,
                y0 + 18.0,
                fmt_tick(t)
            );
        }
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

fn legend(out: &mut String, labels: &[&str]) {
    for (k, label) in labels.iter().enumerate() {
        let y = TOP + 10.0 + 18.0 * k as f64;
        let x = WIDTH - RIGHT + 15.0;
        let _ = writeln!(
            out,
            r#"<rect x="{x}" y="{}" width="14" height="4" fill="{}"/><text x="{}" y="{}">{}</text>"#,
            y - 2.0,
            PALETTE[k % PALETTE.len()],
            x + 20.0,
            y + 4.0,
            escape(label)
        );
    }
}

/// Line chart of per-step series against the step index. Non-finite points
/// break the line.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, lines: &[Line]) -> String {
    let finite = lines
        .iter()
        .flat_map(|l| {
            l.y.iter()
                .chain(l.lower.iter().flatten())
                .chain(l.upper.iter().flatten())
        })
        .copied()
        .filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 1.0) };
    let n = lines.iter().map(|l| l.y.len()).max().unwrap_or(1);
    let f = Frame::new(0.0, (n.max(2) - 1) as f64, lo, hi);
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, &f, x_label, y_label, true);
    for (k, line) in lines.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        if let (Some(lower), Some(upper)) = (&line.lower, &line.upper) {
            let mut d = String::new();
            let pts: Vec<usize> = (0..lower.len().min(upper.len()))
                .filter(|&t| lower[t].is_finite() && upper[t].is_finite())
                .collect();
            for (m, &t) in pts.iter().enumerate() {
                let _ = write!(
                    d,
                    "{}{:.2} {:.2} ",
                    if m == 0 { "M" } else { "L" },
                    f.px(t as f64),
                    f.py(upper[t])
                );
            }
            for &t in pts.iter().rev() {
                let _ = write!(d, "L{:.2} {:.2} ", f.px(t as f64), f.py(lower[t]));
            }
            if !pts.is_empty() {
                let _ = writeln!(
                    out,
                    r#"<path d="{}Z" fill="{color}" fill-opacity="0.15" stroke="none"/>"#,
                    d
                );
            }
        }
        let mut d = String::new();
        let mut pen_down = false;
        for (t, &y) in line.y.iter().enumerate() {
            if y.is_finite() {
                let _ = write!(
                    d,
                    "{}{:.2} {:.2} ",
                    if pen_down { "L" } else { "M" },
                    f.px(t as f64),
                    f.py(y)
                );
                pen_down = true;
            } else {
                pen_down = false;
            }
        }
        let _ = writeln!(
            out,
            r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            d.trim_end()
        );
    }
    let labels: Vec<&str> = lines.iter().map(|l| l.label.as_str()).collect();
    legend(&mut out, &labels);
    out.push_str("</svg>\n");
    out
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Box plot: boxes span the interquartile range, whiskers the extremes and
/// the bar marks the median.
pub fn box_chart(title: &str, y_label: &str, groups: &[(String, Vec<f64>)]) -> String {
    let all = groups
        .iter()
        .flat_map(|(_, v)| v.iter())
        .copied()
        .filter(|v| v.is_finite());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 1.0) };
    let f = Frame::new(0.0, groups.len().max(1) as f64, lo, hi);
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, &f, "", y_label, false);
    for (k, (label, values)) in groups.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let cx = f.px(k as f64 + 0.5);
        let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        if !v.is_empty() {
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let (q0, q1, q2, q3, q4) = (
                v[0],
                quantile(&v, 0.25),
                quantile(&v, 0.5),
                quantile(&v, 0.75),
                v[v.len() - 1],
            );
            let half = 0.3 * (f.px(1.0) - f.px(0.0));
            let _ = writeln!(
                out,
                r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="{color}"/>"#,
                f.py(q0),
                f.py(q4)
            );
            let _ = writeln!(
                out,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{color}" fill-opacity="0.3" stroke="{color}"/>"#,
                cx - half,
                f.py(q3),
                2.0 * half,
                (f.py(q1) - f.py(q3)).max(0.5)
            );
            let _ = writeln!(
                out,
                r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black" stroke-width="2"/>"#,
                cx - half,
                f.py(q2),
                cx + half,
                f.py(q2)
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{cx:.2}" y="{}" text-anchor="middle">{}</text>"#,
            HEIGHT - BOTTOM + 16.0,
            escape(label)
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_are_round_and_inside() {
        let t = ticks(0.0, 1000.0);
        assert_eq!(t, vec![0.0, 200.0, 400.0, 600.0, 800.0, 1000.0]);
        let t = ticks(-0.13, 0.91);
        assert!(t.iter().all(|&v| (-0.13..=0.91).contains(&v)));
    }

    #[test]
    fn charts_are_deterministic_svg() {
        let lines = vec![Line {
            label: "a<b".into(),
            y: vec![0.0, 1.0, f64::NAN, 3.0],
            lower: Some(vec![0.0, 0.5, 1.0, 2.0]),
            upper: Some(vec![0.0, 1.5, 3.0, 4.0]),
        }];
        let a = line_chart("t", "x", "y", &lines);
        assert_eq!(a, line_chart("t", "x", "y", &lines));
        assert!(a.starts_with("<svg") && a.ends_with("</svg>\n"));
        assert!(a.contains("a&lt;b"));
        let b = box_chart("b", "loss", &[("x".into(), vec![1.0, 2.0, 3.0]), ("y".into(), vec![])]);
        assert!(b.contains("<rect"));
    }
}
