//! Small dependency-free SVG charts for experiment reports.

use std::fmt::Write as _;

use crate::interpret::escape;
use crate::validation::FiveNumber;

const W: f64 = 900.0;
const H: f64 = 420.0;
const PAD: f64 = 50.0;
const PALETTE: [&str; 4] = ["#2e86c1", "#c0392b", "#27ae60", "#8e44ad"];

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{PAD}" y="24" font-family="sans-serif" font-size="15">{}</text>"#, escape(title));
    let _ = writeln!(s, r##"<line x1="{PAD}" y1="{}" x2="{}" y2="{}" stroke="#333"/>"##, H - PAD, W - PAD, H - PAD);
    let _ = writeln!(s, r##"<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{}" stroke="#333"/>"##, H - PAD);
    s
}

fn y_of(v: f64, lo: f64, hi: f64) -> f64 {
    H - PAD - (H - 2.0 * PAD) * (v - lo) / (hi - lo)
}

fn y_ticks(s: &mut String, lo: f64, hi: f64) {
    for i in 0..=4 {
        let v = lo + (hi - lo) * i as f64 / 4.0;
        let y = y_of(v, lo, hi);
        let _ = writeln!(s, r##"<text x="{}" y="{:.1}" font-family="sans-serif" font-size="10" text-anchor="end">{v:.2}</text>"##, PAD - 4.0, y + 3.0);
        let _ = writeln!(s, r##"<line x1="{PAD}" y1="{y:.1}" x2="{}" y2="{y:.1}" stroke="#eee"/>"##, W - PAD);
    }
}

/// Grouped bars on a [0, 1] axis: one group per label, one bar per series.
pub fn bar_chart(title: &str, labels: &[String], series: &[(&str, Vec<f64>)]) -> String {
    let mut s = header(title);
    y_ticks(&mut s, 0.0, 1.0);
    let n = labels.len().max(1) as f64;
    let slot = (W - 2.0 * PAD) / n;
    let bw = slot * 0.8 / series.len().max(1) as f64;
    for (si, (name, vals)) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        for (i, &v) in vals.iter().enumerate() {
            let x = PAD + slot * i as f64 + slot * 0.1 + bw * si as f64;
            let y = y_of(v.clamp(0.0, 1.0), 0.0, 1.0);
            let _ = writeln!(s, r#"<rect x="{x:.1}" y="{y:.1}" width="{bw:.1}" height="{:.1}" fill="{color}"><title>{} {}: {v:.4}</title></rect>"#, H - PAD - y, escape(&labels[i]), escape(name));
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" fill="{color}">{}</text>"#, W - PAD - 120.0, 24.0 + 14.0 * si as f64, escape(name));
    }
    if labels.len() <= 40 {
        for (i, l) in labels.iter().enumerate() {
            let x = PAD + slot * (i as f64 + 0.5);
            let _ = writeln!(s, r#"<text x="{x:.1}" y="{}" font-family="sans-serif" font-size="8" text-anchor="end" transform="rotate(-45 {x:.1} {})">{}</text>"#, H - PAD + 10.0, H - PAD + 10.0, escape(l));
        }
    }
    s.push_str("</svg>\n");
    s
}

/// One box (min, quartiles, max) per label on a [0, 1] axis.
pub fn box_plot(title: &str, boxes: &[(String, FiveNumber)]) -> String {
    let mut s = header(title);
    y_ticks(&mut s, 0.0, 1.0);
    let slot = (W - 2.0 * PAD) / boxes.len().max(1) as f64;
    for (i, (label, f)) in boxes.iter().enumerate() {
        let cx = PAD + slot * (i as f64 + 0.5);
        let half = slot * 0.25;
        let y = |v: f64| y_of(v.clamp(0.0, 1.0), 0.0, 1.0);
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(s, r#"<line x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{:.1}" stroke="{color}"/>"#, y(f.min), y(f.max));
        let _ = writeln!(s, r#"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="white" stroke="{color}"/>"#, cx - half, y(f.q3), 2.0 * half, (y(f.q1) - y(f.q3)).max(0.5));
        let _ = writeln!(s, r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{color}" stroke-width="2"/>"#, cx - half, y(f.median), cx + half, y(f.median));
        let _ = writeln!(s, r#"<text x="{cx:.1}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#, H - PAD + 16.0, escape(label));
    }
    s.push_str("</svg>\n");
    s
}

/// Vertical bars of `(value, count)` pairs.
pub fn histogram(title: &str, counts: &[(usize, usize)]) -> String {
    let mut s = header(title);
    let top = counts.iter().map(|c| c.1).max().unwrap_or(1).max(1) as f64;
    y_ticks(&mut s, 0.0, top);
    let slot = (W - 2.0 * PAD) / counts.len().max(1) as f64;
    for (i, &(k, c)) in counts.iter().enumerate() {
        let x = PAD + slot * i as f64 + slot * 0.1;
        let y = y_of(c as f64, 0.0, top);
        let _ = writeln!(s, r##"<rect x="{x:.1}" y="{y:.1}" width="{:.1}" height="{:.1}" fill="#2e86c1"><title>k={k}: {c}</title></rect>"##, slot * 0.8, H - PAD - y);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" font-family="sans-serif" font-size="10" text-anchor="middle">{k}</text>"#, x + slot * 0.4, H - PAD + 14.0);
    }
    s.push_str("</svg>\n");
    s
}
