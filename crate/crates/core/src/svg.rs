//! Native SVG line and scatter plots.
//!
//! Plots are a viewing convenience; CSV artifacts remain the contract. The
//! renderer draws axes with tick labels, optional log scaling per axis,
//! error bars, and a legend, with no external dependencies.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Result, SimError};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 78.0;
const MARGIN_RIGHT: f64 = 24.0;
const MARGIN_TOP: f64 = 46.0;
const MARGIN_BOTTOM: f64 = 64.0;

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesStyle {
    Line,
    Scatter,
    LineWithMarkers,
}

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    /// Symmetric error-bar half heights, one per point.
    pub error_bars: Option<Vec<f64>>,
    pub style: SeriesStyle,
}

impl Series {
    pub fn line(label: &str, points: Vec<(f64, f64)>) -> Self {
        Series {
            label: label.into(),
            points,
            error_bars: None,
            style: SeriesStyle::Line,
        }
    }

    pub fn scatter(label: &str, points: Vec<(f64, f64)>) -> Self {
        Series {
            label: label.into(),
            points,
            error_bars: None,
            style: SeriesStyle::Scatter,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub x_log: bool,
    pub y_log: bool,
    pub series: Vec<Series>,
}

impl Plot {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Plot {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            x_log: false,
            y_log: false,
            series: Vec::new(),
        }
    }
}

struct Axis {
    low: f64,
    high: f64,
    log: bool,
}

impl Axis {
    fn to_unit(&self, value: f64) -> f64 {
        if self.log {
            (value.log10() - self.low) / (self.high - self.low)
        } else {
            (value - self.low) / (self.high - self.low)
        }
    }
}

fn nice_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let magnitude = 10f64.powf(raw.log10().floor());
    let normalized = raw / magnitude;
    let nice = if normalized < 1.5 {
        1.0
    } else if normalized < 3.5 {
        2.0
    } else if normalized < 7.5 {
        5.0
    } else {
        10.0
    };
    nice * magnitude
}

fn linear_ticks(low: f64, high: f64) -> Vec<f64> {
    let step = nice_step(high - low);
    let first = (low / step).ceil() * step;
    let mut ticks = Vec::new();
    let mut tick = first;
    while tick <= high + step * 1e-9 {
        ticks.push(if tick.abs() < step * 1e-9 { 0.0 } else { tick });
        tick += step;
    }
    ticks
}

fn log_ticks(low_log: f64, high_log: f64) -> Vec<f64> {
    let mut decades = Vec::new();
    let mut exponent = low_log.ceil() as i32;
    while (exponent as f64) <= high_log + 1e-9 {
        decades.push(10f64.powi(exponent));
        exponent += 1;
    }
    if decades.len() >= 2 {
        return decades;
    }
    let mut ticks = Vec::new();
    for e in (low_log.floor() as i32)..=(high_log.ceil() as i32) {
        for mantissa in [1.0, 2.0, 5.0] {
            let value = mantissa * 10f64.powi(e);
            let lv = value.log10();
            if lv >= low_log - 1e-9 && lv <= high_log + 1e-9 {
                ticks.push(value);
            }
        }
    }
    if ticks.len() < 2 {
        ticks = [low_log, (low_log + high_log) / 2.0, high_log]
            .iter()
            .map(|e| 10f64.powf(*e))
            .collect();
    }
    ticks
}

fn format_tick(value: f64) -> String {
    let magnitude = value.abs();
    if value == 0.0 {
        "0".to_string()
    } else if magnitude >= 1e5 || magnitude < 1e-3 {
        format!("{value:.0e}")
    } else if magnitude >= 10.0 {
        let rounded = (value * 100.0).round() / 100.0;
        if rounded.fract().abs() < 1e-9 {
            format!("{rounded:.0}")
        } else {
            format!("{rounded}")
        }
    } else {
        let rounded = (value * 1000.0).round() / 1000.0;
        format!("{rounded}")
    }
}

fn axis_bounds(values: impl Iterator<Item = f64>, log: bool, name: &str) -> Result<Axis> {
    let mut low = f64::INFINITY;
    let mut high = f64::NEG_INFINITY;
    let mut any = false;
    for v in values {
        if !v.is_finite() {
            return Err(SimError::InvalidArgument(format!(
                "non-finite value on the {name} axis"
            )));
        }
        if log && v <= 0.0 {
            return Err(SimError::InvalidArgument(format!(
                "log {name} axis requires positive values, got {v}"
            )));
        }
        let v = if log { v.log10() } else { v };
        low = low.min(v);
        high = high.max(v);
        any = true;
    }
    if !any {
        return Err(SimError::InvalidArgument(format!("{name} axis has no data")));
    }
    if high - low < 1e-12 {
        low -= 0.5;
        high += 0.5;
    } else {
        let pad = 0.05 * (high - low);
        low -= pad;
        high += pad;
    }
    Ok(Axis { low, high, log })
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders the plot to a standalone SVG document.
pub fn render(plot: &Plot) -> Result<String> {
    if plot.series.is_empty() || plot.series.iter().all(|s| s.points.is_empty()) {
        return Err(SimError::InvalidArgument("plot has no data".into()));
    }
    for series in &plot.series {
        if let Some(bars) = &series.error_bars {
            if bars.len() != series.points.len() {
                return Err(SimError::InvalidArgument(format!(
                    "series {} has {} error bars for {} points",
                    series.label,
                    bars.len(),
                    series.points.len()
                )));
            }
        }
    }
    let x_axis = axis_bounds(
        plot.series
            .iter()
            .flat_map(|s| s.points.iter().map(|(x, _)| *x)),
        plot.x_log,
        "x",
    )?;
    let y_values = plot.series.iter().flat_map(|s| {
        s.points.iter().enumerate().flat_map(move |(i, (_, y))| {
            let bar = s.error_bars.as_ref().map(|b| b[i]).unwrap_or(0.0);
            if plot.y_log && *y - bar <= 0.0 {
                vec![*y]
            } else {
                vec![*y - bar, *y + bar]
            }
        })
    });
    let y_axis = axis_bounds(y_values, plot.y_log, "y")?;

    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let px = |x: f64| MARGIN_LEFT + x_axis.to_unit(x) * plot_w;
    let py = |y: f64| MARGIN_TOP + (1.0 - y_axis.to_unit(y)) * plot_h;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\">\n"
    ));
    svg.push_str(&format!(
        "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"26\" text-anchor=\"middle\" font-size=\"16\">{}</text>\n",
        MARGIN_LEFT + plot_w / 2.0,
        escape(&plot.title)
    ));

    let x_ticks = if plot.x_log {
        log_ticks(x_axis.low, x_axis.high)
    } else {
        linear_ticks(x_axis.low, x_axis.high)
    };
    let y_ticks = if plot.y_log {
        log_ticks(y_axis.low, y_axis.high)
    } else {
        linear_ticks(y_axis.low, y_axis.high)
    };
    for tick in &x_ticks {
        let x = px(*tick);
        if !(MARGIN_LEFT - 1.0..=WIDTH - MARGIN_RIGHT + 1.0).contains(&x) {
            continue;
        }
        svg.push_str(&format!(
            "<line x1=\"{x:.1}\" y1=\"{:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"#dddddd\"/>\n",
            MARGIN_TOP,
            MARGIN_TOP + plot_h
        ));
        svg.push_str(&format!(
            "<text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"12\">{}</text>\n",
            MARGIN_TOP + plot_h + 18.0,
            format_tick(*tick)
        ));
    }
    for tick in &y_ticks {
        let y = py(*tick);
        if !(MARGIN_TOP - 1.0..=MARGIN_TOP + plot_h + 1.0).contains(&y) {
            continue;
        }
        svg.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#dddddd\"/>\n",
            MARGIN_LEFT,
            MARGIN_LEFT + plot_w
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" font-size=\"12\">{}</text>\n",
            MARGIN_LEFT - 8.0,
            y + 4.0,
            format_tick(*tick)
        ));
    }
    svg.push_str(&format!(
        "<rect x=\"{MARGIN_LEFT}\" y=\"{MARGIN_TOP}\" width=\"{plot_w:.1}\" height=\"{plot_h:.1}\" \
         fill=\"none\" stroke=\"black\"/>\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 16.0,
        escape(&plot.x_label)
    ));
    svg.push_str(&format!(
        "<text x=\"20\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"14\" \
         transform=\"rotate(-90 20 {:.1})\">{}</text>\n",
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0,
        escape(&plot.y_label)
    ));

    for (s_idx, series) in plot.series.iter().enumerate() {
        let color = PALETTE[s_idx % PALETTE.len()];
        if let Some(bars) = &series.error_bars {
            for ((x, y), bar) in series.points.iter().zip(bars.iter()) {
                if *bar <= 0.0 {
                    continue;
                }
                let (y_low, y_high) = (y - bar, y + bar);
                if plot.y_log && y_low <= 0.0 {
                    continue;
                }
                let xc = px(*x);
                svg.push_str(&format!(
                    "<line x1=\"{xc:.2}\" y1=\"{:.2}\" x2=\"{xc:.2}\" y2=\"{:.2}\" \
                     stroke=\"{color}\" stroke-width=\"1\" class=\"errorbar\"/>\n",
                    py(y_low),
                    py(y_high)
                ));
            }
        }
        let draw_line = matches!(series.style, SeriesStyle::Line | SeriesStyle::LineWithMarkers);
        let draw_markers =
            matches!(series.style, SeriesStyle::Scatter | SeriesStyle::LineWithMarkers);
        if draw_line && series.points.len() >= 2 {
            let coords: Vec<String> = series
                .points
                .iter()
                .map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y)))
                .collect();
            svg.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\"/>\n",
                coords.join(" ")
            ));
        }
        if draw_markers {
            for (x, y) in &series.points {
                svg.push_str(&format!(
                    "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>\n",
                    px(*x),
                    py(*y)
                ));
            }
        }
        let legend_y = MARGIN_TOP + 16.0 + 18.0 * s_idx as f64;
        svg.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{legend_y:.1}\" x2=\"{:.1}\" y2=\"{legend_y:.1}\" \
             stroke=\"{color}\" stroke-width=\"3\"/>\n",
            MARGIN_LEFT + plot_w - 150.0,
            MARGIN_LEFT + plot_w - 128.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\">{}</text>\n",
            MARGIN_LEFT + plot_w - 122.0,
            legend_y + 4.0,
            escape(&series.label)
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Renders and writes the plot to `path`.
pub fn write_svg(path: &Path, plot: &Plot) -> Result<()> {
    let svg = render(plot)?;
    let mut file = BufWriter::new(File::create(path)?);
    file.write_all(svg.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay_plot() -> Plot {
        let mut plot = Plot::new("coherence decay", "time (ns)", "contrast");
        let points: Vec<(f64, f64)> =
            (0..10).map(|k| (10.0 * k as f64, (-0.1 * k as f64).exp())).collect();
        let mut series = Series::line("xy8", points);
        series.error_bars = Some(vec![0.02; 10]);
        series.style = SeriesStyle::LineWithMarkers;
        plot.series.push(series);
        plot.series.push(Series::scatter(
            "droid",
            (0..10).map(|k| (10.0 * k as f64, (-0.05 * k as f64).exp())).collect(),
        ));
        plot
    }

    #[test]
    fn renders_axes_series_and_legend() {
        let svg = render(&decay_plot()).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.ends_with("</svg>\n"));
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(svg.matches("<circle").count() >= 20);
        assert!(svg.contains("xy8"));
        assert!(svg.contains("droid"));
        assert!(svg.contains("coherence decay"));
        assert!(svg.matches("class=\"errorbar\"").count() == 10);
    }

    #[test]
    fn log_axes_use_decade_ticks() {
        let mut plot = Plot::new("T2 vs density", "density (ppm)", "T2 (ns)");
        plot.x_log = true;
        plot.y_log = true;
        plot.series.push(Series::line(
            "xy8",
            vec![(30.0, 1500.0), (123.0, 400.0), (236.0, 220.0), (500.0, 120.0)],
        ));
        let svg = render(&plot).unwrap();
        assert!(svg.contains(">100<"));
        assert!(svg.contains(">1000<") || svg.contains(">1e3<"));
    }

    #[test]
    fn log_axis_rejects_nonpositive_values() {
        let mut plot = Plot::new("bad", "x", "y");
        plot.x_log = true;
        plot.series.push(Series::line("s", vec![(0.0, 1.0), (10.0, 2.0)]));
        assert!(render(&plot).is_err());
    }

    #[test]
    fn empty_plot_rejected() {
        let plot = Plot::new("empty", "x", "y");
        assert!(render(&plot).is_err());
    }

    #[test]
    fn single_point_does_not_degenerate() {
        let mut plot = Plot::new("point", "x", "y");
        plot.series.push(Series::scatter("s", vec![(3.0, 4.0)]));
        let svg = render(&plot).unwrap();
        assert!(svg.contains("<circle"));
        assert!(!svg.contains("NaN"));
    }

    #[test]
    fn render_is_deterministic() {
        let a = render(&decay_plot()).unwrap();
        let b = render(&decay_plot()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn writes_file(){
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plot.svg");
        write_svg(&path, &decay_plot()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("</svg>"));
    }
}
