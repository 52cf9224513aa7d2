//! Static SVG plots of residual and jump data files.

use std::fmt::Write;

use crate::error::{CliError, Result};
use crate::scenario::{JUMP_COLUMNS, RESIDUAL_COLUMNS};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Parsed contents of one data file.
#[derive(Debug, Clone, PartialEq)]
pub enum PlotData {
    /// `(t, |residual|)`, sup over components.
    Residual { label: String, points: Vec<(f64, f64)> },
    /// `(k, |Δx(t_k)|, |I_k|)`.
    Jumps { label: String, bars: Vec<(usize, f64, f64)> },
}

#[derive(Debug, Clone)]
pub struct Plot {
    pub svg: String,
    pub warnings: Vec<String>,
}

fn malformed<T>(path: &str, reason: impl Into<String>) -> Result<T> {
    Err(CliError::DataMalformed { path: path.to_string(), reason: reason.into() })
}

fn field<T: std::str::FromStr>(path: &str, line: usize, s: &str) -> Result<T> {
    s.parse().or_else(|_| malformed(path, format!("line {line}: cannot parse `{s}`")))
}

/// Parses a residual-layout or jump-layout CSV written by `run`.
pub fn parse(path: &str, text: &str) -> Result<PlotData> {
    let mut lines = text.lines().enumerate();
    let Some((_, header)) = lines.next() else {
        return malformed(path, "empty file");
    };
    let cols: Vec<&str> = header.split(',').collect();
    let vector = cols.last() == Some(&"component");
    let base = &cols[..cols.len() - usize::from(vector)];
    let label = std::path::Path::new(path).file_stem().map_or(path.to_string(), |s| s.to_string_lossy().into_owned());
    let rows = lines.map(|(i, l)| (i + 1, l.split(',').collect::<Vec<_>>())).filter(|(_, r)| r != &[""]);
    if base == RESIDUAL_COLUMNS {
        let mut points: Vec<(f64, usize, f64)> = Vec::new();
        for (i, r) in rows {
            if r.len() != cols.len() {
                return malformed(path, format!("line {i}: expected {} fields, found {}", cols.len(), r.len()));
            }
            let t: f64 = field(path, i, r[0])?;
            let piece: usize = field(path, i, r[1])?;
            for x in &r[2..4] {
                field::<f64>(path, i, x)?;
            }
            let re: f64 = field(path, i, r[4])?;
            let im: f64 = field(path, i, r[5])?;
            let m = re.hypot(im);
            match points.last_mut() {
                Some(last) if vector && last.0 == t && last.1 == piece => last.2 = last.2.max(m),
                _ => points.push((t, piece, m)),
            }
        }
        Ok(PlotData::Residual { label, points: points.into_iter().map(|p| (p.0, p.2)).collect() })
    } else if base == JUMP_COLUMNS {
        let mut bars: Vec<(usize, f64, f64)> = Vec::new();
        for (i, r) in rows {
            if r.len() != cols.len() {
                return malformed(path, format!("line {i}: expected {} fields, found {}", cols.len(), r.len()));
            }
            let k: usize = field(path, i, r[0])?;
            let vals = r[2..6].iter().map(|s| field::<f64>(path, i, s)).collect::<Result<Vec<_>>>()?;
            let (dx, imp) = (vals[0].hypot(vals[1]), vals[2].hypot(vals[3]));
            match bars.last_mut() {
                Some(last) if vector && last.0 == k => {
                    last.1 = last.1.max(dx);
                    last.2 = last.2.max(imp);
                }
                _ => bars.push((k, dx, imp)),
            }
        }
        Ok(PlotData::Jumps { label, bars })
    } else {
        malformed(path, format!("unrecognized header `{header}`"))
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Canvas {
    out: String,
}

impl Canvas {
    fn new() -> Self {
        let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
        let _ = writeln!(
            out,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">"
        );
        let _ = writeln!(out, "<rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");
        Canvas { out }
    }

    fn frame(&mut self, xlabel: &str, ylabel: &str) {
        let (w, h) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
        let _ = writeln!(self.out, "<rect x=\"{LEFT}\" y=\"{TOP}\" width=\"{w}\" height=\"{h}\" fill=\"none\" stroke=\"black\"/>");
        self.text(LEFT + w / 2.0, HEIGHT - 12.0, "middle", xlabel);
        let _ = writeln!(
            self.out,
            "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>",
            TOP + h / 2.0,
            TOP + h / 2.0,
            escape(ylabel)
        );
    }

    fn text(&mut self, x: f64, y: f64, anchor: &str, s: &str) {
        let _ = writeln!(self.out, "<text x=\"{x:.1}\" y=\"{y:.1}\" text-anchor=\"{anchor}\">{}</text>", escape(s));
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, style: &str) {
        let _ = writeln!(self.out, "<line x1=\"{x1:.1}\" y1=\"{y1:.1}\" x2=\"{x2:.1}\" y2=\"{y2:.1}\" {style}/>");
    }

    fn legend(&mut self, i: usize, label: &str, color: &str) {
        let y = TOP + 14.0 + 18.0 * i as f64;
        let x = WIDTH - RIGHT + 12.0;
        self.line(x, y - 4.0, x + 20.0, y - 4.0, &format!("stroke=\"{color}\" stroke-width=\"2\""));
        self.text(x + 26.0, y, "start", label);
    }

    fn finish(mut self) -> String {
        self.out.push_str("</svg>\n");
        self.out
    }
}

/// Renders residual files as log-scale curves with impulse rules, or jump
/// files as paired bars. Mixing the two layouts is an error.
pub fn render(data: &[PlotData], impulses: &[f64]) -> Result<Plot> {
    let residual = data.iter().all(|d| matches!(d, PlotData::Residual { .. }));
    let jumps = data.iter().all(|d| matches!(d, PlotData::Jumps { .. }));
    if data.is_empty() || residual {
        Ok(render_residuals(data, impulses))
    } else if jumps {
        Ok(render_jumps(data))
    } else {
        malformed("plot", "cannot mix residual and jump files in one plot")
    }
}

fn render_residuals(data: &[PlotData], impulses: &[f64]) -> Plot {
    let mut c = Canvas::new();
    let mut warnings = Vec::new();
    c.frame("t", "|residual| (log10)");
    let series: Vec<(&str, &[(f64, f64)])> = data
        .iter()
        .filter_map(|d| match d {
            PlotData::Residual { label, points } => Some((label.as_str(), points.as_slice())),
            PlotData::Jumps { .. } => None,
        })
        .collect();
    let all = series.iter().flat_map(|s| s.1.iter());
    let tmax = all.clone().map(|p| p.0).chain(impulses.iter().copied()).fold(0.0_f64, f64::max);
    let positive: Vec<f64> = all.clone().map(|p| p.1).filter(|&v| v > 0.0 && v.is_finite()).collect();
    if series.iter().all(|s| s.1.is_empty()) {
        warnings.push("no data points; drew the axis frame only".to_string());
        return Plot { svg: c.finish(), warnings };
    }
    let lo = positive.iter().copied().fold(f64::INFINITY, f64::min).log10().floor();
    let hi = positive.iter().copied().fold(f64::NEG_INFINITY, f64::max).log10().ceil();
    // all-zero residuals sit on a nominal floor
    let (lo, hi) = if positive.is_empty() { (-17.0, -15.0) } else { (lo, hi.max(lo + 1.0)) };
    let (w, h) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let tmax = if tmax > 0.0 { tmax } else { 1.0 };
    let px = |t: f64| LEFT + w * t / tmax;
    let py = |v: f64| {
        let l = if v > 0.0 { v.log10() } else { lo };
        TOP + h * (hi - l.clamp(lo, hi)) / (hi - lo)
    };
    let step = ((hi - lo) / 8.0).ceil().max(1.0);
    let mut e = lo;
    while e <= hi {
        let y = py(10f64.powf(e));
        c.line(LEFT - 4.0, y, LEFT, y, "stroke=\"black\"");
        c.text(LEFT - 8.0, y + 4.0, "end", &format!("1e{e}"));
        e += step;
    }
    for i in 0..=4 {
        let t = tmax * i as f64 / 4.0;
        c.line(px(t), TOP + h, px(t), TOP + h + 4.0, "stroke=\"black\"");
        c.text(px(t), TOP + h + 18.0, "middle", &format!("{t:.3}"));
    }
    for &t in impulses {
        c.line(px(t), TOP, px(t), TOP + h, "stroke=\"gray\" stroke-dasharray=\"4 3\"");
    }
    for (i, (label, points)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        if points.is_empty() {
            warnings.push(format!("series `{label}` is empty"));
            continue;
        }
        let path: Vec<String> = points.iter().map(|&(t, v)| format!("{:.1},{:.1}", px(t), py(v))).collect();
        let _ = writeln!(c.out, "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>", path.join(" "));
        c.legend(i, label, color);
    }
    Plot { svg: c.finish(), warnings }
}

fn render_jumps(data: &[PlotData]) -> Plot {
    let mut c = Canvas::new();
    let mut warnings = Vec::new();
    c.frame("impulse k", "|Δx(t_k)| and |I_k|");
    let bars: Vec<(String, usize, f64, f64)> = data
        .iter()
        .flat_map(|d| match d {
            PlotData::Jumps { label, bars } => bars.iter().map(|b| (label.clone(), b.0, b.1, b.2)).collect(),
            PlotData::Residual { .. } => Vec::new(),
        })
        .collect();
    if bars.is_empty() {
        warnings.push("no impulses; drew the axis frame only".to_string());
        return Plot { svg: c.finish(), warnings };
    }
    let (w, h) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let top = bars.iter().map(|b| b.2.max(b.3)).fold(0.0_f64, f64::max);
    let top = if top > 0.0 { top * 1.1 } else { 1.0 };
    let slot = w / bars.len() as f64;
    let bw = slot * 0.3;
    for i in 0..=4 {
        let v = top * i as f64 / 4.0;
        let y = TOP + h - h * v / top;
        c.line(LEFT - 4.0, y, LEFT, y, "stroke=\"black\"");
        c.text(LEFT - 8.0, y + 4.0, "end", &format!("{v:.3}"));
    }
    for (i, (label, k, dx, imp)) in bars.iter().enumerate() {
        let x0 = LEFT + slot * i as f64 + slot * 0.2;
        for (j, v) in [dx, imp].into_iter().enumerate() {
            let bh = h * v / top;
            let _ = writeln!(
                c.out,
                "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{bw:.1}\" height=\"{bh:.1}\" fill=\"{}\"/>",
                x0 + j as f64 * bw,
                TOP + h - bh,
                COLORS[j]
            );
        }
        let name = if data.len() > 1 { format!("{label} k={k}") } else { format!("k={k}") };
        c.text(x0 + bw, TOP + h + 18.0, "middle", &name);
    }
    c.legend(0, "|Δx(t_k)|", COLORS[0]);
    c.legend(1, "|I_k|", COLORS[1]);
    Plot { svg: c.finish(), warnings }
}
