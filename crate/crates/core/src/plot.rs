//! Minimal PNG plots (series, bars, trajectories). Built without a font
//! backend, so plots carry no text; the accompanying CSVs hold the numbers.

use std::path::Path;

use plotters::prelude::*;

use crate::error::{Error, Result};

const SIZE: (u32, u32) = (640, 480);

pub const COLOURS: [RGBColor; 4] = [
    RGBColor(31, 119, 180),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
    RGBColor(255, 127, 14),
];

fn plot_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        msg: e.to_string(),
    }
}

fn bounds(series: &[Vec<(f64, f64)>]) -> Option<((f64, f64), (f64, f64))> {
    let pts = series
        .iter()
        .flatten()
        .filter(|(x, y)| x.is_finite() && y.is_finite());
    let mut it = pts.peekable();
    it.peek()?;
    let (mut x0, mut x1, mut y0, mut y1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for &(x, y) in it {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let pad = |a: f64, b: f64| {
        let d = ((b - a) * 0.05).max(1e-9);
        (a - d, b + d)
    };
    Some((pad(x0, x1), pad(y0, y1)))
}

/// Overlays polylines; `equal_aspect` keeps x and y on the same scale.
pub fn line_plot(series: &[Vec<(f64, f64)>], path: &Path, equal_aspect: bool) -> Result<()> {
    let Some(((mut x0, mut x1), (mut y0, mut y1))) = bounds(series) else {
        return Err(Error::InvalidArgument("nothing to plot".into()));
    };
    if equal_aspect {
        let aspect = SIZE.0 as f64 / SIZE.1 as f64;
        let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
        let half_h = ((x1 - x0) / aspect).max(y1 - y0) / 2.0;
        let half_w = half_h * aspect;
        (x0, x1, y0, y1) = (cx - half_w, cx + half_w, cy - half_h, cy + half_h);
    }
    let root = BitMapBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(path, e))?;
    let mut chart = ChartBuilder::on(&root)
        .margin(20)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(|e| plot_err(path, e))?;
    for (i, s) in series.iter().enumerate() {
        let colour = COLOURS[i % COLOURS.len()];
        chart
            .draw_series(LineSeries::new(s.iter().copied(), colour.stroke_width(2)))
            .map_err(|e| plot_err(path, e))?;
    }
    root.present().map_err(|e| plot_err(path, e))
}

/// One bar per value, left to right.
pub fn bar_plot(values: &[f64], highlight: Option<usize>, path: &Path) -> Result<()> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("nothing to plot".into()));
    }
    let top = values.iter().copied().fold(0.0, f64::max).max(1e-9) * 1.05;
    let root = BitMapBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(path, e))?;
    let mut chart = ChartBuilder::on(&root)
        .margin(20)
        .build_cartesian_2d(0.0..values.len() as f64, 0.0..top)
        .map_err(|e| plot_err(path, e))?;
    chart
        .draw_series(values.iter().enumerate().map(|(i, &v)| {
            let colour = if Some(i) == highlight {
                COLOURS[1]
            } else {
                COLOURS[0]
            };
            Rectangle::new(
                [(i as f64 + 0.15, 0.0), (i as f64 + 0.85, v.max(0.0))],
                colour.filled(),
            )
        }))
        .map_err(|e| plot_err(path, e))?;
    root.present().map_err(|e| plot_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_pngs() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.png");
        line_plot(
            &[vec![(0.0, 1.0), (1.0, 0.5)], vec![(0.0, 0.0), (1.0, 1.0)]],
            &p,
            true,
        )
        .unwrap();
        assert!(p.exists());
        let b = dir.path().join("b.png");
        bar_plot(&[0.2, 0.9, 0.5], Some(1), &b).unwrap();
        assert!(b.exists());
        assert!(line_plot(&[], &p, false).is_err());
    }
}
