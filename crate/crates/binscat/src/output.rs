//! Plot assembly and serialization: per-group series, the savedata and
//! savegrid CSV formats, and a deterministic SVG renderer.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::inference::EvalGrid;

/// One plotted point; interval series carry lower/upper, grid-based rows
/// carry their bin index (0 for knot rows) and knot flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlotRow {
    pub x: f64,
    pub y: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub bin: usize,
    pub is_knot: bool,
}

impl PlotRow {
    pub fn point(x: f64, y: f64, bin: usize, is_knot: bool) -> PlotRow {
        PlotRow {
            x,
            y,
            lower: None,
            upper: None,
            bin,
            is_knot,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Symbol {
    Circle,
    Square,
    Triangle,
    Diamond,
    Cross,
}

impl Symbol {
    pub fn parse(name: &str) -> Result<Symbol> {
        match name {
            "circle" => Ok(Symbol::Circle),
            "square" => Ok(Symbol::Square),
            "triangle" => Ok(Symbol::Triangle),
            "diamond" => Ok(Symbol::Diamond),
            "cross" => Ok(Symbol::Cross),
            other => Err(Error::Config(format!("unknown symbol {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupStyle {
    pub color: String,
    pub symbol: Symbol,
    /// SVG dash-array; empty string means solid.
    pub dash: String,
}

/// Computed series for one by-group, before styling.
#[derive(Debug, Clone, Default)]
pub struct GroupData {
    pub label: String,
    pub dots: Vec<PlotRow>,
    pub line: Option<Vec<PlotRow>>,
    pub ci: Option<Vec<PlotRow>>,
    pub cb: Option<Vec<PlotRow>>,
    pub polyreg: Option<Vec<PlotRow>>,
}

#[derive(Debug, Clone)]
pub struct GroupSeries {
    pub label: String,
    pub dots: Vec<PlotRow>,
    pub line: Option<Vec<PlotRow>>,
    pub ci: Option<Vec<PlotRow>>,
    pub cb: Option<Vec<PlotRow>>,
    pub polyreg: Option<Vec<PlotRow>>,
    pub style: GroupStyle,
}

#[derive(Debug, Clone)]
pub struct PlotBundle {
    pub groups: Vec<GroupSeries>,
    pub title: String,
    pub x_label: String,
    pub y_label: String,
}

/// Style cycles; empty lists fall back to the built-in defaults and all
/// lists wrap around when shorter than the group count.
#[derive(Debug, Clone, Default)]
pub struct StyleOptions {
    pub colors: Vec<String>,
    pub symbols: Vec<Symbol>,
    pub patterns: Vec<String>,
}

const DEFAULT_COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];
const DEFAULT_SYMBOLS: [Symbol; 5] = [
    Symbol::Circle,
    Symbol::Square,
    Symbol::Triangle,
    Symbol::Diamond,
    Symbol::Cross,
];
const DEFAULT_PATTERNS: [&str; 4] = ["", "6,3", "2,3", "8,3,2,3"];

/// Attach styles to computed series, cycling through the style lists in
/// group order.
pub fn assemble(
    groups: Vec<GroupData>,
    style: &StyleOptions,
    title: &str,
    x_label: &str,
    y_label: &str,
) -> PlotBundle {
    let styled = groups
        .into_iter()
        .enumerate()
        .map(|(i, g)| {
            let color = if style.colors.is_empty() {
                DEFAULT_COLORS[i % DEFAULT_COLORS.len()].to_string()
            } else {
                style.colors[i % style.colors.len()].clone()
            };
            let symbol = if style.symbols.is_empty() {
                DEFAULT_SYMBOLS[i % DEFAULT_SYMBOLS.len()]
            } else {
                style.symbols[i % style.symbols.len()]
            };
            let dash = if style.patterns.is_empty() {
                DEFAULT_PATTERNS[i % DEFAULT_PATTERNS.len()].to_string()
            } else {
                style.patterns[i % style.patterns.len()].clone()
            };
            GroupSeries {
                label: g.label,
                dots: g.dots,
                line: g.line,
                ci: g.ci,
                cb: g.cb,
                polyreg: g.polyreg,
                style: GroupStyle {
                    color,
                    symbol,
                    dash,
                },
            }
        })
        .collect();
    PlotBundle {
        groups: styled,
        title: title.to_string(),
        x_label: x_label.to_string(),
        y_label: y_label.to_string(),
    }
}

fn check_target(path: &Path, overwrite: bool) -> Result<()> {
    if path.exists() && !overwrite {
        return Err(Error::FileExists(path.to_path_buf()));
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Write every plotted series as CSV rows
/// (group, series, x, y, y_lower, y_upper, bin, is_knot). Floats use the
/// shortest round-trippable representation, so reading the file back
/// reproduces the values bit for bit.
pub fn write_savedata(bundle: &PlotBundle, path: &Path, overwrite: bool) -> Result<()> {
    check_target(path, overwrite)?;
    let mut out = String::new();
    out.push_str("group,series,x,y,y_lower,y_upper,bin,is_knot\n");
    for g in &bundle.groups {
        let mut emit = |series: &str, rows: &[PlotRow]| {
            for r in rows {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    g.label,
                    series,
                    r.x,
                    r.y,
                    fmt_opt(r.lower),
                    fmt_opt(r.upper),
                    r.bin,
                    u8::from(r.is_knot)
                );
            }
        };
        emit("dots", &g.dots);
        if let Some(rows) = &g.line {
            emit("line", rows);
        }
        if let Some(rows) = &g.ci {
            emit("ci", rows);
        }
        if let Some(rows) = &g.cb {
            emit("cb", rows);
        }
        if let Some(rows) = &g.polyreg {
            emit("polyreg", rows);
        }
    }
    std::fs::write(path, out).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Read a savedata file back into a bundle (with default styling).
pub fn read_savedata(path: &Path) -> Result<PlotBundle> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            source: e,
        })?;
    let mut groups: Vec<GroupData> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            source: e,
        })?;
        let get = |i: usize| record.get(i).unwrap_or("").to_string();
        let label = get(0);
        let series = get(1);
        let parse = |raw: String, col: &str| -> Result<f64> {
            raw.parse().map_err(|_| Error::NonNumeric {
                column: col.into(),
                row: 0,
                value: raw,
            })
        };
        let row = PlotRow {
            x: parse(get(2), "x")?,
            y: parse(get(3), "y")?,
            lower: if get(4).is_empty() {
                None
            } else {
                Some(parse(get(4), "y_lower")?)
            },
            upper: if get(5).is_empty() {
                None
            } else {
                Some(parse(get(5), "y_upper")?)
            },
            bin: get(6).parse().unwrap_or(0),
            is_knot: get(7) == "1",
        };
        let slot = match groups.iter().position(|g| g.label == label) {
            Some(i) => i,
            None => {
                groups.push(GroupData {
                    label,
                    ..Default::default()
                });
                groups.len() - 1
            }
        };
        let g = &mut groups[slot];
        match series.as_str() {
            "dots" => g.dots.push(row),
            "line" => g.line.get_or_insert_with(Vec::new).push(row),
            "ci" => g.ci.get_or_insert_with(Vec::new).push(row),
            "cb" => g.cb.get_or_insert_with(Vec::new).push(row),
            "polyreg" => g.polyreg.get_or_insert_with(Vec::new).push(row),
            other => {
                return Err(Error::Config(format!(
                    "unknown series {other:?} in {}",
                    path.display()
                )))
            }
        }
    }
    Ok(assemble(groups, &StyleOptions::default(), "", "", ""))
}

/// Write the evaluation grid: the x column (named after the independent
/// variable), one all-zero column per covariate, `binsreg_isknot`, and
/// `binsreg_bin` (1-based; 0 for knot rows). The file feeds external
/// model fitting whose predictions come back via `binsreg_fit*` columns.
pub fn write_savegrid(
    grid: &EvalGrid,
    covariate_names: &[String],
    x_name: &str,
    path: &Path,
    overwrite: bool,
) -> Result<()> {
    check_target(path, overwrite)?;
    let mut out = String::new();
    out.push_str(x_name);
    for name in covariate_names {
        out.push(',');
        out.push_str(name);
    }
    out.push_str(",binsreg_isknot,binsreg_bin\n");
    for i in 0..grid.len() {
        let _ = write!(out, "{}", grid.points[i]);
        for _ in covariate_names {
            out.push_str(",0");
        }
        let _ = writeln!(
            out,
            ",{},{}",
            u8::from(grid.is_knot[i]),
            grid.bin_of[i]
        );
    }
    std::fs::write(path, out).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

struct Frame {
    width: f64,
    height: f64,
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

const MARGIN_LEFT: f64 = 62.0;
const MARGIN_RIGHT: f64 = 18.0;
const MARGIN_TOP: f64 = 38.0;
const MARGIN_BOTTOM: f64 = 48.0;

impl Frame {
    fn px(&self, x: f64) -> f64 {
        let span = (self.x_max - self.x_min).max(1e-300);
        MARGIN_LEFT + (x - self.x_min) / span * (self.width - MARGIN_LEFT - MARGIN_RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        let span = (self.y_max - self.y_min).max(1e-300);
        self.height - MARGIN_BOTTOM - (y - self.y_min) / span * (self.height - MARGIN_TOP - MARGIN_BOTTOM)
    }
}

fn nice_ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let spread = hi > lo;
    if !spread {
        return vec![lo];
    }
    let raw_step = (hi - lo) / target as f64;
    let mag = 10f64.powf(raw_step.log10().floor());
    let norm = raw_step / mag;
    let step = if norm <= 1.5 {
        1.0
    } else if norm <= 3.5 {
        2.0
    } else if norm <= 7.5 {
        5.0
    } else {
        10.0
    } * mag;
    let first = (lo / step).ceil() * step;
    let mut ticks = Vec::new();
    let mut t = first;
    while t <= hi + step * 1e-9 {
        ticks.push(if t.abs() < step * 1e-9 { 0.0 } else { t });
        t += step;
    }
    ticks
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if !(0.001..10000.0).contains(&a) {
        format!("{v:.2e}")
    } else if a >= 100.0 {
        format!("{v:.0}")
    } else if a >= 1.0 {
        format!("{v:.2}")
            .trim_end_matches('0')
            .trim_end_matches('.')
            .to_string()
    } else {
        format!("{v:.3}")
            .trim_end_matches('0')
            .trim_end_matches('.')
            .to_string()
    }
}

fn marker_svg(symbol: Symbol, cx: f64, cy: f64, color: &str) -> String {
    let r = 3.4;
    match symbol {
        Symbol::Circle => format!(
            r#"<circle cx="{cx:.3}" cy="{cy:.3}" r="{r}" fill="{color}"/>"#
        ),
        Symbol::Square => format!(
            r#"<rect x="{:.3}" y="{:.3}" width="{:.1}" height="{:.1}" fill="{color}"/>"#,
            cx - r,
            cy - r,
            2.0 * r,
            2.0 * r
        ),
        Symbol::Triangle => format!(
            r#"<polygon points="{:.3},{:.3} {:.3},{:.3} {:.3},{:.3}" fill="{color}"/>"#,
            cx,
            cy - r,
            cx - r,
            cy + r,
            cx + r,
            cy + r
        ),
        Symbol::Diamond => format!(
            r#"<polygon points="{:.3},{:.3} {:.3},{:.3} {:.3},{:.3} {:.3},{:.3}" fill="{color}"/>"#,
            cx,
            cy - r,
            cx + r,
            cy,
            cx,
            cy + r,
            cx - r,
            cy
        ),
        Symbol::Cross => format!(
            r#"<path d="M{:.3} {:.3}L{:.3} {:.3}M{:.3} {:.3}L{:.3} {:.3}" stroke="{color}" stroke-width="1.6"/>"#,
            cx - r,
            cy - r,
            cx + r,
            cy + r,
            cx - r,
            cy + r,
            cx + r,
            cy - r
        ),
    }
}

/// Render the bundle to an SVG string. A pure function of its inputs:
/// identical bundles produce byte-identical output.
pub fn render_svg(bundle: &PlotBundle, width: u32, height: u32) -> String {
    let mut x_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    let mut consider = |rows: &[PlotRow]| {
        for r in rows {
            x_min = x_min.min(r.x);
            x_max = x_max.max(r.x);
            y_min = y_min.min(r.y).min(r.lower.unwrap_or(r.y));
            y_max = y_max.max(r.y).max(r.upper.unwrap_or(r.y));
        }
    };
    for g in &bundle.groups {
        consider(&g.dots);
        if let Some(rows) = &g.line {
            consider(rows);
        }
        if let Some(rows) = &g.ci {
            consider(rows);
        }
        if let Some(rows) = &g.cb {
            consider(rows);
        }
        if let Some(rows) = &g.polyreg {
            consider(rows);
        }
    }
    if !x_min.is_finite() {
        x_min = 0.0;
        x_max = 1.0;
        y_min = 0.0;
        y_max = 1.0;
    }
    if x_max == x_min {
        x_max = x_min + 1.0;
    }
    if y_max == y_min {
        y_max = y_min + 1.0;
    }
    let pad_x = (x_max - x_min) * 0.04;
    let pad_y = (y_max - y_min) * 0.06;
    let frame = Frame {
        width: width as f64,
        height: height as f64,
        x_min: x_min - pad_x,
        x_max: x_max + pad_x,
        y_min: y_min - pad_y,
        y_max: y_max + pad_y,
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(
        svg,
        r#"<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>"#
    );

    // axes, gridlines, tick labels
    let plot_bottom = frame.height - MARGIN_BOTTOM;
    let plot_right = frame.width - MARGIN_RIGHT;
    for t in nice_ticks(frame.x_min, frame.x_max, 6) {
        let px = frame.px(t);
        let _ = writeln!(
            svg,
            r#"<line x1="{px:.3}" y1="{MARGIN_TOP}" x2="{px:.3}" y2="{plot_bottom:.3}" stroke="rgb(224,224,224)" stroke-width="0.7"/>"#
        );
        let _ = writeln!(
            svg,
            r#"<text x="{px:.3}" y="{:.3}" font-size="11" text-anchor="middle" fill="rgb(51,51,51)" font-family="sans-serif">{}</text>"#,
            plot_bottom + 16.0,
            fmt_tick(t)
        );
    }
    for t in nice_ticks(frame.y_min, frame.y_max, 5) {
        let py = frame.py(t);
        let _ = writeln!(
            svg,
            r#"<line x1="{MARGIN_LEFT}" y1="{py:.3}" x2="{plot_right:.3}" y2="{py:.3}" stroke="rgb(224,224,224)" stroke-width="0.7"/>"#
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.3}" y="{:.3}" font-size="11" text-anchor="end" fill="rgb(51,51,51)" font-family="sans-serif">{}</text>"#,
            MARGIN_LEFT - 7.0,
            py + 3.5,
            fmt_tick(t)
        );
    }
    let _ = writeln!(
        svg,
        r#"<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{:.3}" height="{:.3}" fill="none" stroke="rgb(51,51,51)" stroke-width="1"/>"#,
        plot_right - MARGIN_LEFT,
        plot_bottom - MARGIN_TOP
    );

    // confidence bands first, so every polygon sits under the line layers
    for g in &bundle.groups {
        if let Some(rows) = &g.cb {
            let mut points = String::new();
            for r in rows {
                let _ = write!(
                    points,
                    "{:.3},{:.3} ",
                    frame.px(r.x),
                    frame.py(r.upper.unwrap_or(r.y))
                );
            }
            for r in rows.iter().rev() {
                let _ = write!(
                    points,
                    "{:.3},{:.3} ",
                    frame.px(r.x),
                    frame.py(r.lower.unwrap_or(r.y))
                );
            }
            let _ = writeln!(
                svg,
                r#"<polygon points="{}" fill="{}" fill-opacity="0.22"/>"#,
                points.trim_end(),
                g.style.color
            );
        }
    }

    for g in &bundle.groups {
        if let Some(rows) = &g.line {
            let mut points = String::new();
            for r in rows {
                let _ = write!(points, "{:.3},{:.3} ", frame.px(r.x), frame.py(r.y));
            }
            let dash = if g.style.dash.is_empty() {
                String::new()
            } else {
                format!(r#" stroke-dasharray="{}""#, g.style.dash)
            };
            let _ = writeln!(
                svg,
                r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.8"{dash}/>"#,
                points.trim_end(),
                g.style.color
            );
        }
        if let Some(rows) = &g.polyreg {
            let mut points = String::new();
            for r in rows {
                let _ = write!(points, "{:.3},{:.3} ", frame.px(r.x), frame.py(r.y));
            }
            let _ = writeln!(
                svg,
                r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.2" stroke-dasharray="5,3"/>"#,
                points.trim_end(),
                g.style.color
            );
            for r in rows {
                if let (Some(lo), Some(hi)) = (r.lower, r.upper) {
                    let px = frame.px(r.x);
                    let _ = writeln!(
                        svg,
                        r#"<line x1="{px:.3}" y1="{:.3}" x2="{px:.3}" y2="{:.3}" stroke="{}" stroke-width="0.8" stroke-opacity="0.7"/>"#,
                        frame.py(lo),
                        frame.py(hi),
                        g.style.color
                    );
                }
            }
        }
        if let Some(rows) = &g.ci {
            for r in rows {
                if let (Some(lo), Some(hi)) = (r.lower, r.upper) {
                    let px = frame.px(r.x);
                    let _ = writeln!(
                        svg,
                        r#"<line x1="{px:.3}" y1="{:.3}" x2="{px:.3}" y2="{:.3}" stroke="{}" stroke-width="1.3"/>"#,
                        frame.py(lo),
                        frame.py(hi),
                        g.style.color
                    );
                }
            }
        }
    }

    for g in &bundle.groups {
        for r in &g.dots {
            let _ = writeln!(
                svg,
                "{}",
                marker_svg(g.style.symbol, frame.px(r.x), frame.py(r.y), &g.style.color)
            );
        }
    }

    // legend, one entry per group in group order
    if bundle.groups.len() > 1 || !bundle.groups.first().map(|g| g.label.is_empty()).unwrap_or(true)
    {
        let mut ly = MARGIN_TOP + 14.0;
        let lx = plot_right - 130.0;
        for g in &bundle.groups {
            let _ = writeln!(
                svg,
                r#"<g class="legend-entry">{}<text x="{:.3}" y="{:.3}" font-size="11" fill="rgb(51,51,51)" font-family="sans-serif">{}</text></g>"#,
                marker_svg(g.style.symbol, lx, ly - 3.5, &g.style.color),
                lx + 10.0,
                ly,
                xml_escape(&g.label)
            );
            ly += 16.0;
        }
    }

    if !bundle.title.is_empty() {
        let _ = writeln!(
            svg,
            r#"<text x="{:.3}" y="22" font-size="14" text-anchor="middle" fill="rgb(17,17,17)" font-family="sans-serif">{}</text>"#,
            frame.width / 2.0,
            xml_escape(&bundle.title)
        );
    }
    if !bundle.x_label.is_empty() {
        let _ = writeln!(
            svg,
            r#"<text x="{:.3}" y="{:.3}" font-size="12" text-anchor="middle" fill="rgb(17,17,17)" font-family="sans-serif">{}</text>"#,
            (MARGIN_LEFT + plot_right) / 2.0,
            frame.height - 10.0,
            xml_escape(&bundle.x_label)
        );
    }
    if !bundle.y_label.is_empty() {
        let _ = writeln!(
            svg,
            r#"<text x="14" y="{:.3}" font-size="12" text-anchor="middle" fill="rgb(17,17,17)" font-family="sans-serif" transform="rotate(-90 14 {:.3})">{}</text>"#,
            (MARGIN_TOP + plot_bottom) / 2.0,
            (MARGIN_TOP + plot_bottom) / 2.0,
            xml_escape(&bundle.y_label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

pub fn write_svg(bundle: &PlotBundle, path: &Path, width: u32, height: u32) -> Result<()> {
    std::fs::write(path, render_svg(bundle, width, height)).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}
