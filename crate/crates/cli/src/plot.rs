//! Self-contained SVG line plot of BER against SNR.

use std::fmt::Write;

use gsmdet_core::bench::BerRecord;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 55.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Zero-BER points are left out; the curve breaks there.
pub fn ber_svg(records: &[BerRecord], title: &str) -> String {
    let mut names: Vec<&str> = Vec::new();
    for r in records {
        if !names.contains(&r.detector.as_str()) {
            names.push(&r.detector);
        }
    }
    let snrs: Vec<f64> = records.iter().map(|r| r.snr_db).collect();
    let (mut x_min, mut x_max) = snrs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &s| (a.min(s), b.max(s)));
    if x_min == x_max {
        x_min -= 1.0;
        x_max += 1.0;
    }
    let positive = records.iter().map(|r| r.ber).filter(|b| *b > 0.0);
    let lowest = positive.clone().fold(1.0f64, f64::min);
    let highest = positive.fold(1e-1f64, f64::max);
    let y_min = lowest.log10().floor().min(-1.0);
    let y_max = highest.log10().ceil().max(y_min + 1.0);

    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + (x - x_min) / (x_max - x_min) * plot_w;
    let py = |ber: f64| TOP + (y_max - ber.log10()) / (y_max - y_min) * plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#, LEFT + plot_w / 2.0, escape(title));

    // Decade grid and labels.
    for d in (y_min as i32)..=(y_max as i32) {
        let y = py(10f64.powi(d));
        let _ = writeln!(s, r##"<line x1="{LEFT}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/>"##, LEFT + plot_w);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">1e{d}</text>"#, LEFT - 6.0, y + 4.0);
    }
    let mut ticks: Vec<f64> = snrs.clone();
    ticks.sort_by(f64::total_cmp);
    ticks.dedup();
    let stride = ticks.len().div_ceil(12).max(1);
    for x in ticks.iter().step_by(stride) {
        let tx = px(*x);
        let _ = writeln!(s, r##"<line x1="{tx:.1}" y1="{TOP}" x2="{tx:.1}" y2="{:.1}" stroke="#eee"/>"##, TOP + plot_h);
        let _ = writeln!(s, r#"<text x="{tx:.1}" y="{:.1}" text-anchor="middle">{x}</text>"#, TOP + plot_h + 18.0);
    }
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">SNR (dB)</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">BER</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    );

    for (i, name) in names.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let mut pts: Vec<&BerRecord> = records.iter().filter(|r| r.detector == *name).collect();
        pts.sort_by(|a, b| a.snr_db.total_cmp(&b.snr_db));
        let mut segment: Vec<String> = Vec::new();
        let flush = |segment: &mut Vec<String>, s: &mut String| {
            if segment.len() > 1 {
                let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, segment.join(" "));
            }
            segment.clear();
        };
        for r in &pts {
            if r.ber > 0.0 {
                let (x, y) = (px(r.snr_db), py(r.ber));
                segment.push(format!("{x:.1},{y:.1}"));
                let _ = writeln!(s, r#"<circle cx="{x:.1}" cy="{y:.1}" r="3" fill="{color}"/>"#);
            } else {
                flush(&mut segment, &mut s);
            }
        }
        flush(&mut segment, &mut s);
        let ly = TOP + 16.0 + 20.0 * i as f64;
        let lx = LEFT + plot_w + 15.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 24.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 30.0, ly + 4.0, escape(name));
    }
    s.push_str("</svg>\n");
    s
}
