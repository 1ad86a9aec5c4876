//! Minimal SVG line charts from comma-separated tables.

use std::fmt::Write as _;

use anyhow::{bail, ensure, Context, Result};

/// Numeric columns of a comma-separated table with a header row.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    /// Parses the table; non-numeric cells become NaN and are left out of plots.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<String> =
            lines.next().context("empty table")?.split(',').map(|s| s.trim().to_string()).collect();
        let rows = lines.map(|l| l.split(',').map(|c| c.trim().parse().unwrap_or(f64::NAN)).collect()).collect();
        Ok(Self { header, rows })
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let j = self
            .header
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("no column {name:?}; have {}", self.header.join(", ")))?;
        Ok(self.rows.iter().map(|r| r.get(j).copied().unwrap_or(f64::NAN)).collect())
    }
}

const PALETTE: [&str; 6] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02"];
const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 56.0;

fn fmt_tick(v: f64) -> String {
    if v == 0.0 || (1e-2..1e4).contains(&v.abs()) {
        format!("{v:.3}")
    } else {
        format!("{v:.2e}")
    }
}

/// Line chart of `ys` against `x`; `log_y` plots log10 of positive values.
pub fn line_chart(table: &Table, x: &str, ys: &[&str], log_y: bool, title: &str) -> Result<String> {
    ensure!(!ys.is_empty(), "at least one y column is needed");
    let xs = table.column(x)?;
    let transform = |v: f64| if log_y { if v > 0.0 { v.log10() } else { f64::NAN } } else { v };
    let series: Vec<(&str, Vec<f64>)> =
        ys.iter().map(|&name| Ok((name, table.column(name)?.into_iter().map(transform).collect()))).collect::<Result<_>>()?;

    let finite = |v: &&f64| v.is_finite();
    let (x0, x1) = bounds(xs.iter().filter(finite).copied());
    let (y0, y1) = bounds(series.iter().flat_map(|(_, v)| v.iter().filter(finite).copied()));
    if !(x0.is_finite() && y0.is_finite()) {
        bail!("nothing to plot: no finite points");
    }
    let sx = |v: f64| MARGIN + (v - x0) / (x1 - x0) * (W - 2.0 * MARGIN);
    let sy = |v: f64| H - MARGIN - (v - y0) / (y1 - y0) * (H - 2.0 * MARGIN);

    let mut svg = String::new();
    writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#)?;
    writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#)?;
    writeln!(svg, r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#, W / 2.0, escape(title))?;
    writeln!(
        svg,
        r#"<path d="M{m} {t} V{b} H{r}" fill="none" stroke="black"/>"#,
        m = MARGIN,
        t = MARGIN,
        b = H - MARGIN,
        r = W - MARGIN
    )?;
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let ylabel = if log_y { format!("1e{yv:.1}") } else { fmt_tick(yv) };
        writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, sx(xv), H - MARGIN + 16.0, fmt_tick(xv))?;
        writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, MARGIN - 4.0, sy(yv) + 4.0, ylabel)?;
    }
    writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 12.0, escape(x))?;
    for (i, (name, vals)) in series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let mut d = String::new();
        let mut pen_down = false;
        for (xv, yv) in xs.iter().zip(vals) {
            if xv.is_finite() && yv.is_finite() {
                write!(d, "{}{:.2} {:.2} ", if pen_down { "L" } else { "M" }, sx(*xv), sy(*yv))?;
                pen_down = true;
            } else {
                pen_down = false;
            }
        }
        writeln!(svg, r#"<path d="{}" fill="none" stroke="{colour}" stroke-width="1.5"/>"#, d.trim_end())?;
        let ly = MARGIN + 14.0 * i as f64;
        writeln!(svg, r#"<text x="{:.1}" y="{ly:.1}" fill="{colour}" text-anchor="end">{}</text>"#, W - MARGIN, escape(name))?;
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
