use std::fmt::Write;

use crate::classify::Label;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 60.0;
const TICKS: usize = 5;

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (-1.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 1.0, hi + 1.0);
    }
    let pad = 0.1 * (hi - lo);
    (lo - pad, hi + pad)
}

fn marker(out: &mut String, label: Label, x: f64, y: f64, class: &str) {
    match label {
        Label::High => writeln!(
            out,
            r##"<circle class="{class} high" cx="{x:.2}" cy="{y:.2}" r="5" fill="#1f77b4"/>"##
        ),
        Label::Low => writeln!(
            out,
            r##"<rect class="{class} low" x="{:.2}" y="{:.2}" width="9" height="9" fill="#d62728"/>"##,
            x - 4.5,
            y - 4.5
        ),
    }
    .expect("write to string");
}

/// PC1/PC2 scatter as an SVG document. High samples are blue circles, low
/// samples red squares; each sample is one element with class `marker`.
/// Output depends only on the input.
pub fn emit_scatter_plot(samples: &[([f64; 2], Label)]) -> String {
    let (x0, x1) = range(samples.iter().map(|s| s.0[0]));
    let (y0, y1) = range(samples.iter().map(|s| s.0[1]));
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let sx = |v: f64| MARGIN + (v - x0) / (x1 - x0) * plot_w;
    let sy = |v: f64| HEIGHT - MARGIN - (v - y0) / (y1 - y0) * plot_h;

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    )
    .unwrap();
    for i in 0..=TICKS {
        let t = i as f64 / TICKS as f64;
        let (vx, vy) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        let (px, py) = (sx(vx), sy(vy));
        let base = HEIGHT - MARGIN;
        writeln!(s, r#"<line x1="{px:.2}" y1="{base}" x2="{px:.2}" y2="{:.2}" stroke="black"/>"#, base + 5.0).unwrap();
        writeln!(s, r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{vx:.2}</text>"#, base + 20.0).unwrap();
        writeln!(s, r#"<line x1="{:.2}" y1="{py:.2}" x2="{MARGIN}" y2="{py:.2}" stroke="black"/>"#, MARGIN - 5.0).unwrap();
        writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{vy:.2}</text>"#, MARGIN - 8.0, py + 4.0).unwrap();
    }
    writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">PC1</text>"#, WIDTH / 2.0, HEIGHT - 15.0).unwrap();
    writeln!(
        s,
        r#"<text x="20" y="{:.2}" text-anchor="middle" transform="rotate(-90 20 {:.2})">PC2</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    )
    .unwrap();
    for (pcs, label) in samples {
        marker(&mut s, *label, sx(pcs[0]), sy(pcs[1]), "marker");
    }
    let lx = WIDTH - MARGIN - 70.0;
    for (i, label) in [Label::High, Label::Low].into_iter().enumerate() {
        let ly = MARGIN + 15.0 + 18.0 * i as f64;
        marker(&mut s, label, lx, ly, "legend-marker");
        writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, lx + 10.0, ly + 4.0, label.as_str()).unwrap();
    }
    s.push_str("</svg>\n");
    s
}
