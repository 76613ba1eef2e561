//! Minimal SVG line charts of mean NSE against sample size.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::config::SampleSize;
use crate::error::{CovMatchError, Result};
use crate::experiment::AggregateRow;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// One series per `(method, N)`, plotting log10 mean NSE over the T values
/// in file order. Asymptotic rows are drawn as a dashed horizontal line.
pub fn nse_chart(rows: &[AggregateRow], title: &str) -> Result<String> {
    if rows.is_empty() {
        return Err(CovMatchError::Input("no rows to plot".into()));
    }
    let mut ts: Vec<usize> = rows
        .iter()
        .filter_map(|r| match r.t {
            SampleSize::Finite(t) => Some(t),
            SampleSize::Asymptotic => None,
        })
        .collect();
    ts.sort_unstable();
    ts.dedup();

    let mut series: BTreeMap<(String, usize), (Vec<(usize, f64)>, Option<f64>)> = BTreeMap::new();
    for r in rows {
        let y = r.mean_nse.max(1e-16).log10();
        if !y.is_finite() {
            continue;
        }
        let e = series.entry((r.method.to_string(), r.n)).or_default();
        match r.t {
            SampleSize::Finite(t) => e.0.push((t, y)),
            SampleSize::Asymptotic => e.1 = Some(y),
        }
    }
    let ys: Vec<f64> = series.values().flat_map(|(p, a)| p.iter().map(|q| q.1).chain(*a)).collect();
    if ys.is_empty() {
        return Err(CovMatchError::Input("no finite NSE values to plot".into()));
    }
    let ymin = ys.iter().cloned().fold(f64::INFINITY, f64::min).floor();
    let ymax = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max).ceil().max(ymin + 1.0);

    let xs: Vec<f64> = ts.iter().map(|&t| (t as f64).log10()).collect();
    let (xmin, xmax) = match (xs.first(), xs.last()) {
        (Some(&a), Some(&b)) if b > a => (a, b),
        (Some(&a), _) => (a - 0.5, a + 0.5),
        _ => (0.0, 1.0),
    };
    let px = |x: f64| MARGIN + (x - xmin) / (xmax - xmin) * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - (y - ymin) / (ymax - ymin) * (HEIGHT - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#, WIDTH / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<path d="M{m} {m} V{b} H{r}" stroke="black" fill="none"/>"#,
        m = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN
    );
    let mut e = ymin as i64;
    while e as f64 <= ymax {
        let y = py(e as f64);
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">1e{e}</text>"#, MARGIN - 6.0, y + 4.0);
        e += 1;
    }
    for (&t, &x) in ts.iter().zip(&xs) {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{t}</text>"#,
            px(x),
            HEIGHT - MARGIN + 18.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">T</text>"#,
        WIDTH / 2.0,
        HEIGHT - MARGIN + 40.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">mean NSE</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );

    for (k, ((method, n), (pts, asym))) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        if !pts.is_empty() {
            let d: Vec<String> = pts
                .iter()
                .enumerate()
                .map(|(i, &(t, y))| {
                    format!("{}{:.1} {:.1}", if i == 0 { 'M' } else { 'L' }, px((t as f64).log10()), py(y))
                })
                .collect();
            let _ = writeln!(s, r#"<path d="{}" stroke="{color}" stroke-width="2" fill="none"/>"#, d.join(" "));
        }
        if let Some(y) = asym {
            let _ = writeln!(
                s,
                r#"<line x1="{m}" x2="{r}" y1="{y:.1}" y2="{y:.1}" stroke="{color}" stroke-dasharray="6 4"/>"#,
                m = MARGIN,
                r = WIDTH - MARGIN,
                y = py(*y)
            );
        }
        let ly = MARGIN + 16.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{ly:.1}" fill="{color}">{} N={n}</text>"#,
            WIDTH - MARGIN - 110.0,
            escape(method)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
