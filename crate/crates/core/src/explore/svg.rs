use std::fmt::Write;

use super::chart::{ChartKind, ChartSpec, XValue};
use super::ExploreError;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 70.0;
const FONT: &str = "font-family=\"Helvetica, Arial, sans-serif\"";
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

fn axis_title(label: &str, unit: &str) -> String {
    if unit.is_empty() {
        escape(label)
    } else {
        escape(&format!("{label} ({unit})"))
    }
}

/// Tick label: integers without decimals, otherwise up to three places.
fn tick_label(v: f64) -> String {
    if (v - v.round()).abs() < 1e-9 {
        format!("{:.0}", v.round() + 0.0)
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

enum XScale {
    Numeric { min: f64, max: f64 },
    Categorical(Vec<String>),
}

impl XScale {
    fn of(spec: &ChartSpec) -> XScale {
        let points = spec.series.iter().flat_map(|s| &s.points);
        if points.clone().all(|p| matches!(p.x, XValue::Number(_))) {
            let xs: Vec<f64> = points
                .filter_map(|p| match p.x {
                    XValue::Number(x) => Some(x),
                    XValue::Text(_) => None,
                })
                .collect();
            let (min, max) = bounds(&xs, false);
            return XScale::Numeric { min, max };
        }
        let mut cats: Vec<String> = Vec::new();
        for p in points {
            let key = x_key(&p.x);
            if !cats.contains(&key) {
                cats.push(key);
            }
        }
        if spec.kind == ChartKind::Line {
            cats.sort();
        }
        XScale::Categorical(cats)
    }

    fn band(&self) -> f64 {
        match self {
            XScale::Numeric { .. } => 0.0,
            XScale::Categorical(c) => plot_width() / c.len().max(1) as f64,
        }
    }

    fn position(&self, x: &XValue) -> f64 {
        match (self, x) {
            (XScale::Numeric { min, max }, XValue::Number(v)) => {
                LEFT + (v - min) / (max - min) * plot_width()
            }
            (XScale::Categorical(cats), x) => {
                let key = x_key(x);
                let i = cats.iter().position(|c| *c == key).unwrap_or(0);
                LEFT + (i as f64 + 0.5) * self.band()
            }
            (XScale::Numeric { .. }, XValue::Text(_)) => {
                unreachable!("numeric scale has only numbers")
            }
        }
    }
}

fn x_key(x: &XValue) -> String {
    match x {
        XValue::Number(v) => tick_label(*v),
        XValue::Text(t) => t.clone(),
    }
}

fn plot_width() -> f64 {
    WIDTH - LEFT - RIGHT
}

fn plot_height() -> f64 {
    HEIGHT - TOP - BOTTOM
}

fn bounds(values: &[f64], include_zero: bool) -> (f64, f64) {
    let mut lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if include_zero {
        lo = lo.min(0.0);
        hi = hi.max(0.0);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if lo == hi {
        return (lo - 1.0, hi + 1.0);
    }
    (lo, hi)
}

/// Renders a chart as a standalone SVG 1.1 document. Output depends only on
/// the spec, so identical specs give identical bytes.
pub fn render_chart_svg(spec: &ChartSpec) -> Result<String, ExploreError> {
    spec.validate()?;
    let xs = XScale::of(spec);
    let ys: Vec<f64> = spec
        .series
        .iter()
        .flat_map(|s| s.points.iter().filter_map(|p| p.y))
        .collect();
    let bars = matches!(spec.kind, ChartKind::Bar | ChartKind::Histogram);
    let (ymin, ymax) = bounds(&ys, bars);
    let y_at = |v: f64| TOP + (ymax - v) / (ymax - ymin) * plot_height();
    let bottom = TOP + plot_height();
    let right = LEFT + plot_width();

    let mut out = String::new();
    let w = &mut out;
    let _ = writeln!(w, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(w, "<title>{}</title>", escape(&spec.title));
    let _ = writeln!(
        w,
        r##"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>"##
    );
    let _ = writeln!(
        w,
        r#"<text x="{:.2}" y="28" {FONT} font-size="16" text-anchor="middle">{}</text>"#,
        LEFT + plot_width() / 2.0,
        escape(&spec.title)
    );

    // axes
    let _ = writeln!(
        w,
        r##"<line class="axis" x1="{LEFT:.2}" y1="{bottom:.2}" x2="{right:.2}" y2="{bottom:.2}" stroke="#000000"/>"##
    );
    let _ = writeln!(
        w,
        r##"<line class="axis" x1="{LEFT:.2}" y1="{TOP:.2}" x2="{LEFT:.2}" y2="{bottom:.2}" stroke="#000000"/>"##
    );
    for i in 0..=4 {
        let v = ymin + (ymax - ymin) * i as f64 / 4.0;
        let y = y_at(v);
        let _ = writeln!(
            w,
            r##"<line x1="{:.2}" y1="{y:.2}" x2="{LEFT:.2}" y2="{y:.2}" stroke="#000000"/><text x="{:.2}" y="{:.2}" {FONT} font-size="11" text-anchor="end">{}</text>"##,
            LEFT - 5.0,
            LEFT - 8.0,
            y + 4.0,
            tick_label(v)
        );
    }
    match &xs {
        XScale::Numeric { min, max } => {
            for i in 0..=4 {
                let v = min + (max - min) * i as f64 / 4.0;
                let x = xs.position(&XValue::Number(v));
                let _ = writeln!(
                    w,
                    r##"<line x1="{x:.2}" y1="{bottom:.2}" x2="{x:.2}" y2="{:.2}" stroke="#000000"/><text x="{x:.2}" y="{:.2}" {FONT} font-size="11" text-anchor="middle">{}</text>"##,
                    bottom + 5.0,
                    bottom + 18.0,
                    tick_label(v)
                );
            }
        }
        XScale::Categorical(cats) => {
            let step = cats.len().div_ceil(8).max(1);
            for (i, c) in cats.iter().enumerate().step_by(step) {
                let x = LEFT + (i as f64 + 0.5) * xs.band();
                let _ = writeln!(
                    w,
                    r#"<text x="{x:.2}" y="{:.2}" {FONT} font-size="11" text-anchor="middle">{}</text>"#,
                    bottom + 18.0,
                    escape(c)
                );
            }
        }
    }
    let _ = writeln!(
        w,
        r#"<text x="{:.2}" y="{:.2}" {FONT} font-size="13" text-anchor="middle">{}</text>"#,
        LEFT + plot_width() / 2.0,
        HEIGHT - 20.0,
        axis_title(&spec.x_axis.label, &spec.x_axis.unit)
    );
    let _ = writeln!(
        w,
        r#"<text x="20" y="{:.2}" {FONT} font-size="13" text-anchor="middle" transform="rotate(-90 20 {:.2})">{}</text>"#,
        TOP + plot_height() / 2.0,
        TOP + plot_height() / 2.0,
        axis_title(&spec.y_axis.label, &spec.y_axis.unit)
    );

    // data
    let n_series = spec.series.len();
    for (si, series) in spec.series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        match spec.kind {
            ChartKind::Line | ChartKind::EcgTrace => {
                let mut d = String::new();
                let mut pen_down = false;
                for p in &series.points {
                    match p.y {
                        Some(y) => {
                            let cmd = if pen_down { 'L' } else { 'M' };
                            let _ = write!(d, "{cmd}{:.2},{:.2} ", xs.position(&p.x), y_at(y));
                            pen_down = true;
                        }
                        None => pen_down = false,
                    }
                }
                if !d.is_empty() {
                    let width = if spec.kind == ChartKind::EcgTrace {
                        0.8
                    } else {
                        1.5
                    };
                    let _ = writeln!(
                        w,
                        r#"<path d="{}" fill="none" stroke="{color}" stroke-width="{width}"/>"#,
                        d.trim_end()
                    );
                }
            }
            ChartKind::Scatter => {
                for p in &series.points {
                    if let Some(y) = p.y {
                        let _ = writeln!(
                            w,
                            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}" fill-opacity="0.6"/>"#,
                            xs.position(&p.x),
                            y_at(y)
                        );
                    }
                }
            }
            ChartKind::Bar | ChartKind::Histogram => {
                let slot = match &xs {
                    XScale::Categorical(_) => xs.band() * 0.8 / n_series as f64,
                    XScale::Numeric { .. } => {
                        plot_width() / (series.points.len().max(1) as f64 * 1.25) / n_series as f64
                    }
                };
                for p in &series.points {
                    if let Some(y) = p.y {
                        let center = xs.position(&p.x);
                        let x = center - slot * n_series as f64 / 2.0 + slot * si as f64;
                        let (top, base) = (y_at(y.max(0.0)), y_at(y.min(0.0)));
                        let _ = writeln!(
                            w,
                            r#"<rect x="{x:.2}" y="{top:.2}" width="{slot:.2}" height="{:.2}" fill="{color}"/>"#,
                            base - top
                        );
                    }
                }
            }
        }
    }

    // legend and annotations
    let mut line_y = TOP + 10.0;
    if n_series > 1 {
        for (si, series) in spec.series.iter().enumerate() {
            let _ = writeln!(
                w,
                r#"<rect x="{:.2}" y="{:.2}" width="10" height="10" fill="{}"/><text x="{:.2}" y="{:.2}" {FONT} font-size="11">{}</text>"#,
                right + 15.0,
                line_y - 9.0,
                PALETTE[si % PALETTE.len()],
                right + 30.0,
                line_y,
                escape(&series.name)
            );
            line_y += 16.0;
        }
    }
    for a in &spec.annotations {
        let _ = writeln!(
            w,
            r#"<text x="{:.2}" y="{:.2}" {FONT} font-size="11">{}: {}</text>"#,
            right + 15.0,
            line_y,
            escape(&a.label),
            escape(&a.text)
        );
        line_y += 16.0;
    }
    let _ = writeln!(w, "</svg>");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explore::chart::{Axis, Point, Series};

    fn spec(kind: ChartKind, points: Vec<Point>) -> ChartSpec {
        let mut s = ChartSpec::new(
            kind,
            "A & B",
            Axis::new("Time", "s"),
            Axis::new("Voltage", "uV"),
        );
        s.series.push(Series {
            name: "s".into(),
            points,
        });
        s
    }

    #[test]
    fn two_point_line() {
        let svg = render_chart_svg(&spec(
            ChartKind::Line,
            vec![Point::number(0.0, Some(1.0)), Point::number(1.0, Some(2.0))],
        ))
        .unwrap();
        assert!(svg.starts_with("<?xml"));
        assert_eq!(svg.matches("<path").count(), 1);
        assert!(svg.contains("Time (s)"));
        assert!(svg.contains("Voltage (uV)"));
        assert!(svg.contains("A &amp; B"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn deterministic() {
        let s = spec(
            ChartKind::Scatter,
            vec![Point::category("u1", 3.0), Point::category("u2", 4.0)],
        );
        assert_eq!(render_chart_svg(&s).unwrap(), render_chart_svg(&s).unwrap());
    }

    #[test]
    fn gap_starts_new_subpath() {
        let mut s = spec(
            ChartKind::EcgTrace,
            (0..6)
                .map(|i| Point::number(i as f64 / 512.0, (i != 3).then_some(i as f64)))
                .collect(),
        );
        s.sampling_frequency_hz = Some(512.0);
        let svg = render_chart_svg(&s).unwrap();
        let d = svg.split("d=\"").nth(1).unwrap().split('"').next().unwrap();
        assert_eq!(d.matches('M').count(), 2);
        assert_eq!(d.matches('L').count(), 3);
    }

    #[test]
    fn bars_and_empty() {
        let svg = render_chart_svg(&spec(
            ChartKind::Bar,
            vec![Point::category("A", 3.0), Point::category("B", 1.0)],
        ))
        .unwrap();
        assert_eq!(svg.matches(r##"fill="#1f77b4""##).count(), 2);
        let mut empty = spec(ChartKind::Bar, vec![]);
        assert!(render_chart_svg(&empty).unwrap().contains("</svg>"));
        empty.series.clear();
        assert!(matches!(
            render_chart_svg(&empty),
            Err(ExploreError::EmptySpec)
        ));
    }

    #[test]
    fn tick_labels() {
        assert_eq!(tick_label(3.0), "3");
        assert_eq!(tick_label(2.5), "2.5");
        assert_eq!(tick_label(1.0 / 3.0), "0.333");
        assert_eq!(tick_label(-0.0), "0");
    }
}
