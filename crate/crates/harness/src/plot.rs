//! Polyline SVG charts built from the emitted CSV text, so every figure can
//! be regenerated offline from the tables alone.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{HarnessError, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LineChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Dashed vertical markers, e.g. rank-adaptation boundaries.
    pub vlines: Vec<f64>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

impl LineChart {
    fn bounds(&self) -> (f64, f64, f64, f64) {
        let pts = self
            .series
            .iter()
            .flat_map(|s| s.points.iter())
            .filter(|(x, y)| x.is_finite() && y.is_finite());
        let (mut x0, mut x1, mut y0, mut y1) = (
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
        );
        for &(x, y) in pts {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            return (0.0, 1.0, 0.0, 1.0);
        }
        if x1 - x0 < 1e-12 {
            x1 = x0 + 1.0;
        }
        if y1 - y0 < 1e-12 {
            y0 -= 0.5;
            y1 += 0.5;
        }
        (x0, x1, y0, y1)
    }

    pub fn to_svg(&self) -> String {
        let (x0, x1, y0, y1) = self.bounds();
        let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
        let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);
        let mut s = String::new();
        writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#).unwrap();
        writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
        writeln!(
            s,
            r#"<text x="{}" y="24" text-anchor="middle" font-size="16">{}</text>"#,
            WIDTH / 2.0,
            escape(&self.title)
        )
        .unwrap();
        let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
        writeln!(
            s,
            r#"<path d="M{l} {t} L{l} {b} L{r} {b}" fill="none" stroke="black"/>"#
        )
        .unwrap();
        for (v, x) in [(x0, l), (x1, r)] {
            writeln!(
                s,
                r#"<text x="{x}" y="{}" text-anchor="middle" font-size="11">{}</text>"#,
                b + 16.0,
                tick(v)
            )
            .unwrap();
        }
        for (v, y) in [(y0, b), (y1, t)] {
            writeln!(
                s,
                r#"<text x="{}" y="{y}" text-anchor="end" font-size="11">{}</text>"#,
                l - 4.0,
                tick(v)
            )
            .unwrap();
        }
        writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#,
            WIDTH / 2.0,
            HEIGHT - 16.0,
            escape(&self.x_label)
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="16" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 16 {})">{}</text>"#,
            HEIGHT / 2.0,
            HEIGHT / 2.0,
            escape(&self.y_label)
        )
        .unwrap();
        for &v in &self.vlines {
            if v >= x0 && v <= x1 {
                let x = sx(v);
                writeln!(s, r#"<line x1="{x:.2}" y1="{t}" x2="{x:.2}" y2="{b}" stroke="red" stroke-dasharray="5,4"/>"#).unwrap();
            }
        }
        for (i, series) in self.series.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            let pts: Vec<String> = series
                .points
                .iter()
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                pts.join(" ")
            )
            .unwrap();
            let ly = t + 14.0 * i as f64;
            writeln!(
                s,
                r#"<text x="{}" y="{ly}" font-size="11" fill="{color}">{}</text>"#,
                r - 150.0,
                escape(&series.name)
            )
            .unwrap();
        }
        s.push_str("</svg>\n");
        s
    }
}

fn tick(v: f64) -> String {
    if v.abs() >= 1e4 || (v != 0.0 && v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.2}")
    }
}

/// Header and rows of a comma-separated table without quoting.
pub fn parse_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut lines = text.lines().filter(|l| !l.is_empty());
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| HarnessError::Config("empty CSV".into()))?
        .split(',')
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let row: Vec<String> = line.split(',').map(str::to_string).collect();
        if row.len() != header.len() {
            return Err(HarnessError::Config(format!(
                "CSV row {} has {} fields, header has {}",
                i + 2,
                row.len(),
                header.len()
            )));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

fn column(header: &[String], name: &str) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| HarnessError::Config(format!("CSV lacks column '{name}'")))
}

fn num(s: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| HarnessError::Config(format!("'{s}' is not a number")))
}

/// Seed-averaged measured error, bias term and variance term against rank
/// for one epsilon of a bias/variance table.
pub fn bias_variance_chart(csv: &str, epsilon: f64) -> Result<LineChart> {
    let (h, rows) = parse_csv(csv)?;
    let (ci, ce) = (column(&h, "r")?, column(&h, "epsilon")?);
    let names = ["measured_error", "bias_term", "variance_term"];
    let cols: Vec<usize> = names.iter().map(|n| column(&h, n)).collect::<Result<_>>()?;
    let mut acc: Vec<BTreeMap<usize, (f64, usize)>> = vec![BTreeMap::new(); names.len()];
    for row in &rows {
        if num(&row[ce])? != epsilon {
            continue;
        }
        let r: usize = row[ci]
            .parse()
            .map_err(|_| HarnessError::Config("bad rank".into()))?;
        for (k, &c) in cols.iter().enumerate() {
            let e = acc[k].entry(r).or_insert((0.0, 0));
            e.0 += num(&row[c])?;
            e.1 += 1;
        }
    }
    Ok(LineChart {
        title: format!("error vs rank, epsilon = {epsilon}"),
        x_label: "rank r".into(),
        y_label: "seed mean".into(),
        series: names
            .iter()
            .zip(acc)
            .map(|(n, m)| Series {
                name: n.to_string(),
                points: m
                    .into_iter()
                    .map(|(r, (s, c))| (r as f64, s / c as f64))
                    .collect(),
            })
            .collect(),
        vlines: Vec::new(),
    })
}

/// Learning curves (one `(label, csv)` per series) with optional
/// adaptation boundaries read from an `env_step` column.
pub fn learning_curve_chart(
    curves: &[(String, String)],
    boundaries_csv: Option<&str>,
) -> Result<LineChart> {
    let mut series = Vec::new();
    for (name, csv) in curves {
        let (h, rows) = parse_csv(csv)?;
        let (cs, cm) = (column(&h, "step")?, column(&h, "return_mean")?);
        let points = rows
            .iter()
            .map(|r| Ok((num(&r[cs])?, num(&r[cm])?)))
            .collect::<Result<_>>()?;
        series.push(Series {
            name: name.clone(),
            points,
        });
    }
    let mut vlines = Vec::new();
    if let Some(csv) = boundaries_csv {
        let (h, rows) = parse_csv(csv)?;
        let c = column(&h, "env_step")?;
        for r in &rows {
            vlines.push(num(&r[c])?);
        }
        vlines.sort_by(f64::total_cmp);
        vlines.dedup();
    }
    Ok(LineChart {
        title: "evaluation return under nominal dynamics".into(),
        x_label: "environment step".into(),
        y_label: "return".into(),
        series,
        vlines,
    })
}

/// Rank per bottleneck layer across adaptations; point 0 is the initial rank.
pub fn rank_trace_chart(csv: &str, title: &str) -> Result<LineChart> {
    let (h, rows) = parse_csv(csv)?;
    let (ci, cl, cb, ca) = (
        column(&h, "adaptation_index")?,
        column(&h, "layer_id")?,
        column(&h, "rank_before")?,
        column(&h, "rank_after")?,
    );
    let mut layers: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for row in &rows {
        let idx = num(&row[ci])?;
        let pts = layers.entry(row[cl].clone()).or_default();
        if pts.is_empty() {
            pts.push((idx, num(&row[cb])?));
        }
        pts.push((idx + 1.0, num(&row[ca])?));
    }
    Ok(LineChart {
        title: title.to_string(),
        x_label: "adaptation".into(),
        y_label: "rank".into(),
        series: layers
            .into_iter()
            .map(|(name, points)| Series { name, points })
            .collect(),
        vlines: Vec::new(),
    })
}
