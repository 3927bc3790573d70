//! Static SVG figures of a simulation trace.

use std::path::Path;

use plotters::prelude::*;
use rdsat_core::sim::SimulationTrace;
use rdsat_core::sturm_liouville::SpectralBasis;

const SIZE: (u32, u32) = (800, 500);
const MAX_TIMES: usize = 300;
const MAX_NODES: usize = 120;
const PALETTE: [RGBColor; 4] = [
    RGBColor(31, 119, 180),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
    RGBColor(148, 103, 189),
];

pub type PlotResult = Result<(), String>;

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Evenly spaced indices into `0..len`, at most `max` of them, including the
/// last one.
fn picks(len: usize, max: usize) -> Vec<usize> {
    if len <= max {
        return (0..len).collect();
    }
    let mut v: Vec<usize> = (0..max).map(|i| i * (len - 1) / (max - 1)).collect();
    v.dedup();
    v
}

/// Blue for negative, white at zero, red for positive.
fn diverging(v: f64, scale: f64) -> RGBColor {
    let s = if scale > 0.0 {
        (v / scale).clamp(-1.0, 1.0)
    } else {
        0.0
    };
    let fade = |c: u8, w: f64| (255.0 - (255.0 - c as f64) * w).round() as u8;
    if s >= 0.0 {
        RGBColor(fade(178, s), fade(24, s), fade(43, s))
    } else {
        RGBColor(fade(33, -s), fade(102, -s), fade(172, -s))
    }
}

fn heatmap(
    path: &Path,
    title: &str,
    times: &[f64],
    nodes: &[f64],
    field: &[Vec<f64>],
) -> PlotResult {
    let scale = field.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(err)?;
    let t_end = *times.last().unwrap_or(&1.0);
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("{title} (|max| = {scale:.3e})"), ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(0.0..t_end, 0.0..1.0)
        .map_err(err)?;
    chart
        .configure_mesh()
        .disable_mesh()
        .x_desc("t")
        .y_desc("x")
        .draw()
        .map_err(err)?;
    let cells = times.windows(2).enumerate().flat_map(|(k, w)| {
        let (t0, t1) = (w[0], w[1]);
        nodes.windows(2).enumerate().map(move |(i, x)| {
            let v = 0.5 * (field[k][i] + field[k][i + 1]);
            Rectangle::new([(t0, x[0]), (t1, x[1])], diverging(v, scale).filled())
        })
    });
    chart.draw_series(cells).map_err(err)?;
    root.present().map_err(err)
}

fn sampled_field(
    trace: &SimulationTrace,
    basis: &SpectralBasis,
    f: impl Fn(&SimulationTrace, &SpectralBasis, usize) -> Vec<f64>,
) -> (Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
    let grid = basis.grid();
    let tk = picks(trace.len(), MAX_TIMES);
    let xi = picks(grid.len(), MAX_NODES);
    let times = tk.iter().map(|&k| trace.times[k]).collect();
    let nodes = xi.iter().map(|&i| grid.node(i)).collect();
    let field = tk
        .iter()
        .map(|&k| {
            let full = f(trace, basis, k);
            xi.iter().map(|&i| full[i]).collect()
        })
        .collect();
    (times, nodes, field)
}

pub fn state_heatmap(path: &Path, trace: &SimulationTrace, basis: &SpectralBasis) -> PlotResult {
    let (t, x, f) = sampled_field(trace, basis, |tr, b, k| tr.state_field(b, k));
    heatmap(path, "state z(t, x)", &t, &x, &f)
}

pub fn error_heatmap(path: &Path, trace: &SimulationTrace, basis: &SpectralBasis) -> PlotResult {
    let (t, x, f) = sampled_field(trace, basis, |tr, b, k| tr.error_field(b, k));
    heatmap(path, "reconstruction error", &t, &x, &f)
}

/// Commanded and saturated inputs with the saturation levels.
pub fn inputs(path: &Path, trace: &SimulationTrace, levels: &[f64]) -> PlotResult {
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(err)?;
    let t_end = *trace.times.last().unwrap_or(&1.0);
    let bound = trace
        .inputs
        .iter()
        .flatten()
        .chain(levels)
        .fold(0.0f64, |m, v| m.max(v.abs()))
        * 1.1;
    let mut chart = ChartBuilder::on(&root)
        .caption("inputs u (thin) and sat(u) (thick)", ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(0.0..t_end, -bound..bound)
        .map_err(err)?;
    chart
        .configure_mesh()
        .x_desc("t")
        .y_desc("u")
        .draw()
        .map_err(err)?;
    for (k, level) in levels.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        for sign in [-1.0, 1.0] {
            chart
                .draw_series(LineSeries::new(
                    [(0.0, sign * level), (t_end, sign * level)],
                    color.mix(0.4),
                ))
                .map_err(err)?;
        }
        let raw = trace
            .times
            .iter()
            .zip(&trace.inputs)
            .map(|(t, u)| (*t, u[k]));
        chart
            .draw_series(LineSeries::new(raw, color.mix(0.6)))
            .map_err(err)?;
        let sat = trace
            .times
            .iter()
            .zip(&trace.saturated_inputs)
            .map(|(t, u)| (*t, u[k]));
        chart
            .draw_series(LineSeries::new(sat, color.stroke_width(2)))
            .map_err(err)?
            .label(format!("u_{}", k + 1))
            .legend(move |(x, y)| PathElement::new([(x, y), (x + 20, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(err)?;
    root.present().map_err(err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn picks_cover_both_ends() {
        assert_eq!(picks(5, 10), vec![0, 1, 2, 3, 4]);
        let p = picks(1001, 11);
        assert_eq!(p.len(), 11);
        assert_eq!((p[0], p[10]), (0, 1000));
    }

    #[test]
    fn colormap_is_white_at_zero() {
        assert_eq!(diverging(0.0, 1.0), RGBColor(255, 255, 255));
        assert_eq!(diverging(2.0, 1.0), RGBColor(178, 24, 43));
        assert_eq!(diverging(-1.0, 1.0), RGBColor(33, 102, 172));
    }
}
