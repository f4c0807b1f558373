//! Standalone SVG line charts on `[0, 1]`.

use std::fmt::Write;

pub struct Series {
    pub label: String,
    pub color: &'static str,
    pub dashed: bool,
    pub points: Vec<(f64, f64)>,
}

/// Filled region between two step or polyline curves sampled at the same x.
pub struct Band {
    pub label: String,
    pub color: &'static str,
    pub lower: Vec<(f64, f64)>,
    pub upper: Vec<(f64, f64)>,
}

const W: f64 = 720.0;
const H: f64 = 440.0;
const M: f64 = 48.0;

pub fn chart(title: &str, bands: &[Band], series: &[Series]) -> String {
    let ys = bands
        .iter()
        .flat_map(|b| b.lower.iter().chain(&b.upper))
        .chain(series.iter().flat_map(|s| &s.points))
        .map(|p| p.1)
        .filter(|y| y.is_finite());
    let (mut lo, mut hi) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), y| (a.min(y), b.max(y)));
    if !(lo < hi) {
        lo -= 1.0;
        hi += 1.0;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let px = |x: f64| M + x * (W - 2.0 * M);
    let py = |y: f64| H - M - (y - lo) / (hi - lo) * (H - 2.0 * M);
    let path = |pts: &[(f64, f64)]| {
        pts.iter()
            .enumerate()
            .map(|(i, &(x, y))| format!("{}{:.2},{:.2}", if i == 0 { "M" } else { "L" }, px(x), py(y)))
            .collect::<Vec<_>>()
            .join(" ")
    };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<rect x="{M}" y="{M}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * M,
        H - 2.0 * M
    );
    for k in 0..=4 {
        let x = k as f64 / 4.0;
        let y = lo + (hi - lo) * k as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{:.2}" y="{}" text-anchor="middle">{x}</text>"#, px(x), H - M + 16.0);
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{y:.3}</text>"#, M - 4.0, py(y) + 4.0);
    }
    for b in bands {
        let mut pts = b.lower.clone();
        pts.extend(b.upper.iter().rev());
        let _ = writeln!(s, r#"<path d="{} Z" fill="{}" fill-opacity="0.25" stroke="none"/>"#, path(&pts), b.color);
    }
    for ser in series {
        let dash = if ser.dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(
            s,
            r#"<path d="{}" fill="none" stroke="{}" stroke-width="1.5"{dash}/>"#,
            path(&ser.points),
            ser.color
        );
    }
    let labels = bands.iter().map(|b| (&b.label, b.color)).chain(series.iter().map(|s| (&s.label, s.color)));
    for (i, (label, color)) in labels.enumerate() {
        let y = M + 16.0 + 16.0 * i as f64;
        let _ = writeln!(s, r#"<rect x="{}" y="{}" width="12" height="4" fill="{color}"/>"#, W - M - 150.0, y - 4.0);
        let _ = writeln!(s, r#"<text x="{}" y="{y}">{}</text>"#, W - M - 132.0, escape(label));
    }
    s.push_str("</svg>\n");
    s
}

/// `(x, y)` pairs tracing a piecewise-constant function with the given edges.
pub fn steps(edges: &[f64], values: &[f64]) -> Vec<(f64, f64)> {
    values.iter().enumerate().flat_map(|(i, &v)| [(edges[i], v), (edges[i + 1], v)]).collect()
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_is_well_formed() {
        let band = Band {
            label: "band".into(),
            color: "steelblue",
            lower: steps(&[0.0, 0.5, 1.0], &[0.0, 1.0]),
            upper: steps(&[0.0, 0.5, 1.0], &[1.0, 2.0]),
        };
        let line = Series { label: "a<b".into(), color: "black", dashed: true, points: vec![(0.0, 0.0), (1.0, 1.0)] };
        let svg = chart("t", &[band], &[line]);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a&lt;b"));
        assert_eq!(svg.matches("<path").count(), 2);
    }
}
