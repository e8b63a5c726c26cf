//! Dependency-free SVG line plots of CSV columns.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKind {
    Line,
    LogLog,
}

#[derive(Clone, Debug)]
pub struct PlotSpec<'a> {
    pub kind: PlotKind,
    pub x: &'a str,
    pub ys: &'a [&'a str],
    pub title: &'a str,
    /// Dashed `c / sqrt(x)` line through the first point of the first series.
    pub sqrt_baseline: bool,
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

fn schema(msg: impl Into<String>) -> CliError {
    CliError::Config(format!("plot schema mismatch: {}", msg.into()))
}

/// Reads `x` and each `ys` column of a CSV file as numbers.
fn read_columns(csv: &Path, x: &str, ys: &[&str]) -> CliResult<(Vec<f64>, Vec<Vec<f64>>)> {
    let mut rdr = csv::Reader::from_path(csv)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| schema(format!("no column `{name}`")));
    let xi = col(x)?;
    let yi: Vec<usize> = ys.iter().map(|y| col(y)).collect::<CliResult<_>>()?;
    let parse = |rec: &csv::StringRecord, i: usize| -> CliResult<f64> {
        let s = &rec[i];
        s.trim().parse::<f64>().map_err(|_| schema(format!("non-numeric value `{s}` in column `{}`", &headers[i])))
    };
    let mut xs = Vec::new();
    let mut series = vec![Vec::new(); ys.len()];
    for rec in rdr.records() {
        let rec = rec?;
        xs.push(parse(&rec, xi)?);
        for (s, &i) in series.iter_mut().zip(&yi) {
            s.push(parse(&rec, i)?);
        }
    }
    if xs.is_empty() {
        return Err(schema("CSV has no data rows"));
    }
    Ok((xs, series))
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn new(values: impl Iterator<Item = f64>, log: bool) -> Option<Self> {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite() && (!log || *v > 0.0)) {
            let v = if log { v.log10() } else { v };
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            return None;
        }
        if hi - lo < 1e-12 {
            let pad = if lo == 0.0 { 1.0 } else { 0.5 * lo.abs().max(if log { 1.0 } else { 0.0 }) };
            lo -= pad;
            hi += pad;
        }
        Some(Self { lo, hi, log })
    }

    fn map(&self, v: f64, a: f64, b: f64) -> Option<f64> {
        if !v.is_finite() || (self.log && v <= 0.0) {
            return None;
        }
        let v = if self.log { v.log10() } else { v };
        Some(a + (v - self.lo) / (self.hi - self.lo) * (b - a))
    }

    /// Tick positions (in data units) and labels.
    fn ticks(&self) -> Vec<(f64, String)> {
        if self.log {
            let (a, b) = (self.lo.floor() as i32, self.hi.ceil() as i32);
            (a..=b)
                .map(|k| 10f64.powi(k))
                .filter(|v| (self.lo - 1e-9..=self.hi + 1e-9).contains(&v.log10()))
                .map(|v| (v, format!("1e{}", v.log10().round() as i32)))
                .collect()
        } else {
            (0..=4)
                .map(|k| {
                    let v = self.lo + (self.hi - self.lo) * k as f64 / 4.0;
                    (v, format!("{v:.3}"))
                })
                .collect()
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders the selected CSV columns as an SVG file.
pub fn emit_plot(csv: &Path, spec: &PlotSpec<'_>, out: &Path) -> CliResult<()> {
    if spec.ys.is_empty() {
        return Err(schema("no y columns selected"));
    }
    let (xs, series) = read_columns(csv, spec.x, spec.ys)?;
    let log = spec.kind == PlotKind::LogLog;
    let baseline: Option<Vec<f64>> = if spec.sqrt_baseline {
        let (x0, y0) = (xs[0], series[0][0]);
        (x0 > 0.0 && y0.is_finite()).then(|| xs.iter().map(|x| y0 * (x0 / x).sqrt()).collect())
    } else {
        None
    };
    let xa = Axis::new(xs.iter().copied(), log).ok_or_else(|| schema("no plottable x values"))?;
    let all_y = series.iter().flatten().chain(baseline.iter().flatten()).copied();
    let ya = Axis::new(all_y, log).ok_or_else(|| schema("no plottable y values"))?;
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, H - BOTTOM, TOP);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, (x0 + x1) / 2.0, escape(spec.title));
    let _ = writeln!(svg, r#"<rect x="{x0}" y="{y1}" width="{}" height="{}" fill="none" stroke="black"/>"#, x1 - x0, y0 - y1);
    for (v, label) in xa.ticks() {
        let px = xa.map(v, x0, x1).unwrap();
        let _ = writeln!(svg, r#"<line x1="{px:.2}" y1="{y0}" x2="{px:.2}" y2="{}" stroke="black"/>"#, y0 + 5.0);
        let _ = writeln!(svg, r#"<text x="{px:.2}" y="{}" text-anchor="middle">{label}</text>"#, y0 + 18.0);
    }
    for (v, label) in ya.ticks() {
        let py = ya.map(v, y0, y1).unwrap();
        let _ = writeln!(svg, r#"<line x1="{}" y1="{py:.2}" x2="{x0}" y2="{py:.2}" stroke="black"/>"#, x0 - 5.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{:.2}" text-anchor="end">{label}</text>"#, x0 - 8.0, py + 4.0);
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, H - 18.0, escape(spec.x));

    let polyline = |svg: &mut String, ys: &[f64], color: &str, dash: &str| {
        let pts: Vec<String> = xs
            .iter()
            .zip(ys)
            .filter_map(|(&x, &y)| Some(format!("{:.2},{:.2}", xa.map(x, x0, x1)?, ya.map(y, y0, y1)?)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"{dash}/>"#,
            pts.join(" ")
        );
        for p in &pts {
            let (px, py) = p.split_once(',').unwrap();
            if dash.is_empty() {
                let _ = writeln!(svg, r#"<circle cx="{px}" cy="{py}" r="3" fill="{color}"/>"#);
            }
        }
    };
    let mut legend: Vec<(String, &str, bool)> = Vec::new();
    for (k, (ys, name)) in series.iter().zip(spec.ys).enumerate() {
        let color = COLORS[k % COLORS.len()];
        polyline(&mut svg, ys, color, "");
        legend.push((name.to_string(), color, false));
    }
    if let Some(b) = &baseline {
        polyline(&mut svg, b, "#555555", r#" stroke-dasharray="6,4""#);
        legend.push(("1/sqrt(t) sampling".into(), "#555555", true));
    }
    for (k, (name, color, dashed)) in legend.iter().enumerate() {
        let ly = y1 + 14.0 + 18.0 * k as f64;
        let dash = if *dashed { r#" stroke-dasharray="6,4""# } else { "" };
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"{dash}/>"#,
            x1 + 10.0,
            x1 + 34.0
        );
        let _ = writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, x1 + 40.0, ly + 4.0, escape(name));
    }
    svg.push_str("</svg>\n");
    std::fs::write(out, svg)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn two_series_give_two_labeled_polylines() {
        let dir = tempfile::tempdir().unwrap();
        let csv = write(dir.path(), "a.csv", "r,var,stderr\n0.1,1.0,0.1\n0.2,2.0,0.2\n0.4,1.5,0.1\n");
        let out = dir.path().join("a.svg");
        let spec = PlotSpec { kind: PlotKind::Line, x: "r", ys: &["var", "stderr"], title: "t", sqrt_baseline: false };
        emit_plot(&csv, &spec, &out).unwrap();
        let svg = std::fs::read_to_string(&out).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains(">var<") && svg.contains(">stderr<"));
    }

    #[test]
    fn loglog_with_baseline_is_dashed() {
        let dir = tempfile::tempdir().unwrap();
        let csv = write(dir.path(), "s.csv", "chi,t,eps_mean\n2,0.01,0.1\n3,0.1,0.05\n4,1.0,0.03\n");
        let out = dir.path().join("s.svg");
        let spec = PlotSpec { kind: PlotKind::LogLog, x: "t", ys: &["eps_mean"], title: "s", sqrt_baseline: true };
        emit_plot(&csv, &spec, &out).unwrap();
        let svg = std::fs::read_to_string(&out).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("stroke-dasharray"));
    }

    #[test]
    fn schema_errors() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("x.svg");
        let spec = PlotSpec { kind: PlotKind::Line, x: "r", ys: &["var"], title: "", sqrt_baseline: false };
        let empty = write(dir.path(), "e.csv", "r,var\n");
        assert!(emit_plot(&empty, &spec, &out).is_err());
        let wrong = write(dir.path(), "w.csv", "a,b\n1,2\n");
        assert!(emit_plot(&wrong, &spec, &out).is_err());
        let text = write(dir.path(), "t.csv", "r,var\n1,abc\n");
        assert!(emit_plot(&text, &spec, &out).is_err());
    }
}
