use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::MetricRecord;
use crate::error::{Error, Result};

/// Validation F1 over epochs for one run.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(usize, f64)>,
}

impl Series {
    /// Epochs without validation scores are skipped.
    pub fn from_log(label: impl Into<String>, log: &[MetricRecord]) -> Self {
        Series {
            label: label.into(),
            points: log.iter().filter_map(|r| r.validation.map(|v| (r.epoch, v.f1))).collect(),
        }
    }
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];
const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 50.0;

/// `series,epoch,f1` rows.
pub fn curve_csv(series: &[Series]) -> Result<String> {
    check(series)?;
    let mut s = String::from("series,epoch,f1\n");
    for se in series {
        for (e, f) in &se.points {
            let _ = writeln!(s, "{},{e},{f}", se.label);
        }
    }
    Ok(s)
}

fn check(series: &[Series]) -> Result<()> {
    if series.iter().all(|s| s.points.is_empty()) {
        return Err(Error::NoData);
    }
    Ok(())
}

/// Line chart of F1 (0 to 1) against epoch, one polyline per series.
pub fn curve_svg(series: &[Series]) -> Result<String> {
    check(series)?;
    let max_epoch = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).max().unwrap_or(1).max(1);
    let min_epoch = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).min().unwrap_or(0);
    let span = (max_epoch - min_epoch).max(1) as f64;
    let (pw, ph) = (WIDTH - 2.0 * MARGIN, HEIGHT - 2.0 * MARGIN);
    let x = |e: usize| MARGIN + (e - min_epoch) as f64 / span * pw;
    let y = |f: f64| MARGIN + (1.0 - f.clamp(0.0, 1.0)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let (x0, y0, x1, y1) = (MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN, MARGIN);
    let _ = writeln!(s, r#"<path d="M{x0} {y1} L{x0} {y0} L{x1} {y0}" fill="none" stroke="black"/>"#);
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{f:.2}</text>"#, x0 - 6.0, y(f) + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{min_epoch}</text>"#, x0, y0 + 18.0);
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{max_epoch}</text>"#, x1, y0 + 18.0);
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">epoch</text>"#, WIDTH / 2.0, HEIGHT - 10.0);
    let _ = writeln!(s, r#"<text x="14" y="{:.2}" transform="rotate(-90 14 {:.2})" text-anchor="middle">F1</text>"#, HEIGHT / 2.0, HEIGHT / 2.0);
    for (i, se) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = se.points.iter().map(|&(e, f)| format!("{:.2},{:.2}", x(e), y(f))).collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            pts.join(" ")
        );
        let ly = MARGIN + 16.0 * i as f64;
        let _ = writeln!(s, r#"<line x1="{:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#, x1 - 110.0, x1 - 90.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, x1 - 84.0, ly + 4.0, escape(&se.label));
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Writes `<stem>.csv` and `<stem>.svg`.
pub fn curve_emit(series: &[Series], stem: impl AsRef<Path>) -> Result<()> {
    let stem = stem.as_ref();
    let csv = curve_csv(series)?;
    let svg = curve_svg(series)?;
    for (ext, body) in [("csv", csv), ("svg", svg)] {
        let p = stem.with_extension(ext);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(label: &str, f: &[f64]) -> Series {
        Series {
            label: label.into(),
            points: f.iter().enumerate().map(|(i, &v)| (i + 1, v)).collect(),
        }
    }

    #[test]
    fn one_run_three_points() {
        let svg = curve_svg(&[series("mmm", &[0.1, 0.5, 0.7])]).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 1);
        let pts = svg.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
        assert_eq!(pts.split(' ').count(), 3);
        assert_eq!(svg, curve_svg(&[series("mmm", &[0.1, 0.5, 0.7])]).unwrap());
    }

    #[test]
    fn two_runs_two_labelled_series() {
        let s = [series("mmm", &[0.2, 0.4]), series("max_bce", &[0.1, 0.2])];
        let svg = curve_svg(&s).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains(">mmm<") && svg.contains(">max_bce<"));
        let csv = curve_csv(&s).unwrap();
        assert_eq!(csv.lines().count(), 5);
    }

    #[test]
    fn empty_is_no_data() {
        assert!(matches!(curve_svg(&[]), Err(Error::NoData)));
        assert!(matches!(curve_csv(&[series("x", &[])]), Err(Error::NoData)));
    }
}
