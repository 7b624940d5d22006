use std::path::Path;

use plotters::prelude::*;

use crate::BenchError;

/// One named line.
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

fn plot_err<E: std::fmt::Display>(e: E) -> BenchError {
    BenchError::Plot(e.to_string())
}

const COLORS: [RGBColor; 6] = [BLUE, RED, GREEN, MAGENTA, CYAN, BLACK];

/// Writes a static SVG line chart. With `log_x` the x axis is logarithmic
/// and must be positive.
pub fn line_chart(path: &Path, title: &str, x_desc: &str, y_desc: &str, series: &[Series], log_x: bool) -> Result<(), BenchError> {
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y1) = (f64::MAX, f64::MIN, 0f64);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    if x0 > x1 {
        (x0, x1) = (0.0, 1.0);
    }
    if x0 == x1 {
        x1 = x0 + 1.0;
    }
    let y1 = if y1 > 0.0 { y1 * 1.1 } else { 1.0 };
    let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut b = ChartBuilder::on(&root);
    b.caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(80);
    macro_rules! draw {
        ($chart:expr) => {{
            let mut chart = $chart;
            chart
                .configure_mesh()
                .x_desc(x_desc)
                .y_desc(y_desc)
                .draw()
                .map_err(plot_err)?;
            for (i, s) in series.iter().enumerate() {
                let color = COLORS[i % COLORS.len()];
                chart
                    .draw_series(LineSeries::new(s.points.iter().copied(), color.stroke_width(2)))
                    .map_err(plot_err)?
                    .label(s.name.as_str())
                    .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
            }
            chart
                .configure_series_labels()
                .background_style(WHITE.mix(0.8))
                .border_style(BLACK)
                .draw()
                .map_err(plot_err)?;
        }};
    }
    if log_x {
        draw!(b.build_cartesian_2d((x0.max(1e-9)..x1).log_scale(), 0f64..y1).map_err(plot_err)?);
    } else {
        draw!(b.build_cartesian_2d(x0..x1, 0f64..y1).map_err(plot_err)?);
    }
    root.present().map_err(plot_err)?;
    Ok(())
}

/// Turns `(time, value)` change points into a step line ending at `end`.
pub fn steps(changes: &[(u64, usize)], end: u64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for (i, &(t, v)) in changes.iter().enumerate() {
        if i > 0 {
            out.push((t as f64, changes[i - 1].1 as f64));
        }
        out.push((t as f64, v as f64));
    }
    if let Some(&(_, v)) = changes.last() {
        out.push((end as f64, v as f64));
    }
    out
}
