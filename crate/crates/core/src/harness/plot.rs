//! SVG figures. Every plotted number is also written to a CSV by the caller.

use std::path::Path;

use plotters::prelude::*;

use crate::error::{Error, Result};

const SIZE: (u32, u32) = (720, 460);

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Report(format!("plotting failed: {e}"))
}

pub struct Line {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    /// Symmetric error bars, one per point (empty for none).
    pub err: Vec<f64>,
}

fn bounds(lines: &[Line]) -> ((f64, f64), (f64, f64)) {
    let xs = lines.iter().flat_map(|l| l.points.iter().map(|p| p.0));
    let (x0, x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    let ys = lines.iter().flat_map(|l| {
        l.points.iter().enumerate().flat_map(move |(i, p)| {
            let e = l.err.get(i).copied().unwrap_or(0.0);
            [p.1 - e, p.1 + e]
        })
    });
    let (y0, y1) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), y| (a.min(y), b.max(y)));
    let pad = |lo: f64, hi: f64| {
        if !lo.is_finite() || !hi.is_finite() {
            (0.0, 1.0)
        } else if hi - lo < 1e-12 {
            (lo - 0.5, hi + 0.5)
        } else {
            let m = (hi - lo) * 0.05;
            (lo - m, hi + m)
        }
    };
    (pad(x0, x1), pad(y0, y1))
}

/// Line chart; `x_ticks` (if given) labels integer x positions.
pub fn line_chart(path: &Path, title: &str, x_desc: &str, y_desc: &str, x_ticks: &[String], lines: &[Line]) -> Result<()> {
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let ((x0, x1), (y0, y1)) = bounds(lines);
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(56)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(plot_err)?;
    let label = |x: &f64| {
        let i = x.round();
        if !x_ticks.is_empty() && (x - i).abs() < 1e-6 && i >= 0.0 && (i as usize) < x_ticks.len() {
            x_ticks[i as usize].clone()
        } else if x_ticks.is_empty() {
            format!("{x:.2}")
        } else {
            String::new()
        }
    };
    let n_ticks = if x_ticks.is_empty() { 10 } else { x_ticks.len() * 4 };
    chart
        .configure_mesh()
        .x_desc(x_desc)
        .y_desc(y_desc)
        .x_labels(n_ticks)
        .x_label_formatter(&label)
        .draw()
        .map_err(plot_err)?;
    for (i, l) in lines.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(l.points.iter().copied(), color.stroke_width(2)))
            .map_err(plot_err)?
            .label(l.name.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
        chart.draw_series(l.points.iter().map(|p| Circle::new(*p, 3, color.filled()))).map_err(plot_err)?;
        let bars = l.points.iter().zip(&l.err).filter(|(_, e)| **e > 0.0);
        chart
            .draw_series(bars.map(|(p, e)| PathElement::new(vec![(p.0, p.1 - e), (p.0, p.1 + e)], color)))
            .map_err(plot_err)?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.85))
        .border_style(BLACK)
        .position(SeriesLabelPosition::LowerRight)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

fn ramp(v: f64) -> RGBColor {
    let t = v.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    RGBColor(lerp(247.0, 8.0), lerp(251.0, 48.0), lerp(255.0, 107.0))
}

/// Matrix heatmap with values in `[0, 1]`; row 0 is drawn at the top.
pub fn heatmap(path: &Path, title: &str, rows: &[String], cols: &[String], values: &[f64], x_desc: &str, y_desc: &str) -> Result<()> {
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let (nr, nc) = (rows.len(), cols.len());
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(80)
        .build_cartesian_2d(0.0..nc as f64, 0.0..nr as f64)
        .map_err(plot_err)?;
    let xl = |x: &f64| {
        let i = (x - 0.5).round();
        if (x - 0.5 - i).abs() < 1e-6 && i >= 0.0 && (i as usize) < nc { cols[i as usize].clone() } else { String::new() }
    };
    let yl = |y: &f64| {
        let i = (y - 0.5).round();
        if (y - 0.5 - i).abs() < 1e-6 && i >= 0.0 && (i as usize) < nr { rows[nr - 1 - i as usize].clone() } else { String::new() }
    };
    chart
        .configure_mesh()
        .disable_mesh()
        .x_desc(x_desc)
        .y_desc(y_desc)
        .x_labels(nc * 2 + 1)
        .y_labels(nr * 2 + 1)
        .x_label_formatter(&xl)
        .y_label_formatter(&yl)
        .draw()
        .map_err(plot_err)?;
    chart
        .draw_series((0..nr).flat_map(|r| {
            (0..nc).map(move |c| {
                let y = (nr - 1 - r) as f64;
                Rectangle::new([(c as f64, y), (c as f64 + 1.0, y + 1.0)], ramp(values[r * nc + c]).filled())
            })
        }))
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

pub struct Dot {
    pub x: usize,
    pub y: usize,
    /// Radius key (relative increase), scaled across the figure.
    pub size: f64,
    /// Color key in `[0, 1]`.
    pub color: f64,
}

/// Categorical dot plot: dot radius from `size`, fill from `color`.
pub fn dot_plot(path: &Path, title: &str, xcats: &[String], ycats: &[String], dots: &[Dot]) -> Result<()> {
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(110)
        .build_cartesian_2d(-0.5..xcats.len() as f64 - 0.5, -0.5..ycats.len() as f64 - 0.5)
        .map_err(plot_err)?;
    let cat = |cats: &[String], v: f64| {
        let i = v.round();
        if (v - i).abs() < 1e-6 && i >= 0.0 && (i as usize) < cats.len() { cats[i as usize].clone() } else { String::new() }
    };
    let xl = |v: &f64| cat(xcats, *v);
    let yl = |v: &f64| cat(ycats, *v);
    chart
        .configure_mesh()
        .x_labels(xcats.len() * 4 + 1)
        .y_labels(ycats.len() * 4 + 1)
        .x_label_formatter(&xl)
        .y_label_formatter(&yl)
        .draw()
        .map_err(plot_err)?;
    let lo = dots.iter().map(|d| d.size).fold(f64::INFINITY, f64::min);
    let hi = dots.iter().map(|d| d.size).fold(f64::NEG_INFINITY, f64::max);
    chart
        .draw_series(dots.iter().map(|d| {
            let t = if hi > lo { (d.size - lo) / (hi - lo) } else { 0.5 };
            let r = (6.0 + 22.0 * t).round() as i32;
            Circle::new((d.x as f64, d.y as f64), r, ShapeStyle::from(&ramp(0.15 + 0.85 * d.color)).filled())
        }))
        .map_err(plot_err)?;
    chart
        .draw_series(dots.iter().map(|d| Text::new(format!("{:.3}", d.size), (d.x as f64 + 0.12, d.y as f64 + 0.2), ("sans-serif", 12))))
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}
