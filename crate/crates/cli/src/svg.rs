//! Deterministic SVG line plots of CSV traces.

use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SvgError {
    #[error("column `{0}` is not in the CSV header")]
    MissingColumn(String),
    #[error("row {row}, column `{column}`: `{value}` is not a number")]
    BadValue { row: usize, column: String, value: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// What to draw: one x column against one or more y columns.
#[derive(Debug, Clone)]
pub struct PlotSpec {
    pub title: String,
    pub x: String,
    pub series: Vec<String>,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo <= f64::EPSILON * lo.abs().max(1.0) {
        let pad = 0.5 * lo.abs().max(1.0);
        (lo - pad, hi + pad)
    } else {
        (lo, hi)
    }
}

/// Renders `spec` from `csv_text`. Equal inputs give byte-identical output.
pub fn emit_svg(csv_text: &str, spec: &PlotSpec) -> Result<String, SvgError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(csv_text.as_bytes());
    let header = reader.headers()?.clone();
    let index = |name: &str| header.iter().position(|h| h == name).ok_or_else(|| SvgError::MissingColumn(name.to_string()));
    let xi = index(&spec.x)?;
    let yi: Vec<usize> = spec.series.iter().map(|s| index(s)).collect::<Result<_, _>>()?;

    let mut xs = Vec::new();
    let mut ys: Vec<Vec<f64>> = vec![Vec::new(); yi.len()];
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let parse = |col: usize| -> Result<f64, SvgError> {
            let raw = record.get(col).unwrap_or("");
            raw.trim().parse::<f64>().map_err(|_| SvgError::BadValue {
                row: row + 1,
                column: header[col].to_string(),
                value: raw.to_string(),
            })
        };
        xs.push(parse(xi)?);
        for (k, &c) in yi.iter().enumerate() {
            ys[k].push(parse(c)?);
        }
    }

    let (x0, x1) = range(xs.iter().copied());
    let (y0, y1) = range(ys.iter().flatten().copied());
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let py = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(&spec.title)
    );
    // axes
    let _ = writeln!(
        s,
        r#"<path d="M{:.2},{:.2} L{:.2},{:.2} L{:.2},{:.2}" fill="none" stroke="black"/>"#,
        LEFT,
        TOP,
        LEFT,
        TOP + ph,
        LEFT + pw,
        TOP + ph
    );
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-family="sans-serif" font-size="11">{}</text>"#,
            px(xv),
            TOP + ph + 16.0,
            format_tick(xv)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end" font-family="sans-serif" font-size="11">{}</text>"#,
            LEFT - 6.0,
            py(yv) + 4.0,
            format_tick(yv)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 10.0,
        escape(&spec.x)
    );

    for (k, series) in ys.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let mut d = String::new();
        let mut pen_down = false;
        for (x, y) in xs.iter().zip(series) {
            if !(x.is_finite() && y.is_finite()) {
                pen_down = false;
                continue;
            }
            let _ = write!(d, "{}{:.2},{:.2} ", if pen_down { "L" } else { "M" }, px(*x), py(*y));
            pen_down = true;
        }
        if !d.is_empty() {
            let _ = writeln!(s, r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, d.trim_end());
        }
    }

    if spec.series.len() > 1 || ys.iter().all(Vec::is_empty) {
        for (k, name) in spec.series.iter().enumerate() {
            let y = TOP + 12.0 + 16.0 * k as f64;
            let x = LEFT + pw - 150.0;
            let color = COLORS[k % COLORS.len()];
            let _ = writeln!(
                s,
                r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="2"/>"#,
                x,
                y - 4.0,
                x + 20.0,
                y - 4.0
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11">{}</text>"#,
                x + 26.0,
                y,
                escape(name)
            );
        }
    } else if let Some(name) = spec.series.first() {
        let _ = writeln!(
            s,
            r#"<text x="16" y="{:.2}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 16 {:.2})">{}</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn format_tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e4).contains(&a) {
        format!("{v:.2e}")
    } else {
        format!("{v:.4}")
    }
}
