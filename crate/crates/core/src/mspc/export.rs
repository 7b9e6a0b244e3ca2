use std::fmt::Write;

use super::ControlChart;

/// One row per sample: `sample_index,t2,spex,t2_warning,t2_alarm,spex_limit,onset_flag`.
/// `sample_index` is 1-based; `onset_flag` is 1 from the fault onset on.
pub fn chart_csv(chart: &ControlChart) -> String {
    let mut out = String::from("sample_index,t2,spex,t2_warning,t2_alarm,spex_limit,onset_flag\n");
    let l = &chart.limits;
    for i in 0..chart.len() {
        let flag = chart.fault_onset.is_some_and(|o| i + 1 >= o) as u8;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            i + 1,
            chart.t2[i],
            chart.spex[i],
            l.t2_warning,
            l.t2_alarm,
            l.spex_limit,
            flag
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvgOptions {
    pub log_scale: bool,
    pub width: u32,
    pub height: u32,
}

impl Default for SvgOptions {
    fn default() -> Self {
        SvgOptions {
            log_scale: false,
            width: 900,
            height: 640,
        }
    }
}

struct Panel<'a> {
    title: &'a str,
    values: &'a [f64],
    warning: f64,
    alarm: f64,
}

/// Two stacked panels (T² above SPEx) with warning/alarm lines and the
/// onset marker.
pub fn chart_svg(chart: &ControlChart, opts: SvgOptions) -> String {
    let (w, h) = (opts.width as f64, opts.height as f64);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}" font-family="sans-serif" font-size="12">"#,
        opts.width, opts.height, opts.width, opts.height
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let l = &chart.limits;
    let panels = [
        Panel {
            title: "T²",
            values: &chart.t2,
            warning: l.t2_warning,
            alarm: l.t2_alarm,
        },
        Panel {
            title: "SPEx",
            values: &chart.spex,
            warning: l.spex_warning,
            alarm: l.spex_limit,
        },
    ];
    let panel_h = h / 2.0;
    for (p, panel) in panels.iter().enumerate() {
        draw_panel(&mut out, panel, chart.fault_onset, opts.log_scale, 0.0, p as f64 * panel_h, w, panel_h);
    }
    out.push_str("</svg>\n");
    out
}

#[allow(clippy::too_many_arguments)]
fn draw_panel(out: &mut String, panel: &Panel, onset: Option<usize>, log: bool, x0: f64, y0: f64, w: f64, h: f64) {
    let (left, right, top, bottom) = (70.0, 20.0, 28.0, 36.0);
    let (px, py) = (x0 + left, y0 + top);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let m = panel.values.len().max(1);

    let floor = panel
        .values
        .iter()
        .chain([&panel.warning, &panel.alarm])
        .copied()
        .filter(|v| *v > 0.0)
        .fold(f64::INFINITY, f64::min)
        .min(1.0);
    let tf = |v: f64| if log { v.max(floor).log10() } else { v };
    let all = panel.values.iter().chain([&panel.warning, &panel.alarm]).map(|&v| tf(v));
    let (mut lo, mut hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !log {
        lo = lo.min(0.0);
    }
    if !(hi > lo) {
        hi = lo + 1.0;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - if log { pad } else { 0.0 }, hi + pad);
    let sx = |i: f64| px + pw * (i - 1.0) / (m.max(2) - 1) as f64;
    let sy = |v: f64| py + ph * (1.0 - (tf(v) - lo) / (hi - lo));

    let label = if log { format!("log10({})", panel.title) } else { panel.title.to_string() };
    let _ = writeln!(out, r#"<g>"#);
    let _ = writeln!(
        out,
        r#"<rect x="{px:.2}" y="{py:.2}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}">{label}</text>"#, px, py - 8.0);
    for (v, txt) in [(lo, lo), (hi, hi)] {
        let y = py + ph * (1.0 - (v - lo) / (hi - lo));
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{:.3}</text>"#, px - 6.0, y + 4.0, txt);
    }
    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">sample</text>"#, px + pw / 2.0, py + ph + 28.0);
    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}">1</text>"#, px, py + ph + 14.0);
    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{m}</text>"#, px + pw, py + ph + 14.0);

    let mut points = String::new();
    for (i, &v) in panel.values.iter().enumerate() {
        let _ = write!(points, "{:.2},{:.2} ", sx(i as f64 + 1.0), sy(v));
    }
    let _ = writeln!(
        out,
        r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="1"/>"#,
        points.trim_end()
    );
    for (v, colour, dash) in [(panel.warning, "orange", "6,4"), (panel.alarm, "red", "none")] {
        let y = sy(v);
        let _ = writeln!(
            out,
            r#"<line x1="{px:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{colour}" stroke-dasharray="{dash}"/>"#,
            px + pw
        );
    }
    if let Some(o) = onset.filter(|o| *o >= 1 && *o <= m) {
        let x = sx(o as f64);
        let _ = writeln!(
            out,
            r#"<line x1="{x:.2}" y1="{py:.2}" x2="{x:.2}" y2="{:.2}" stroke="gray" stroke-dasharray="3,3"/>"#,
            py + ph
        );
    }
    let _ = writeln!(out, "</g>");
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mspc::{ChartLimits, LimitMethod};

    fn chart() -> ControlChart {
        ControlChart {
            t2: vec![0.1, 0.2, 5.0],
            spex: vec![0.0, 1.0, 3.0],
            limits: ChartLimits {
                t2_warning: 0.5,
                t2_alarm: 1.0,
                t2_flim: 1.1,
                spex_warning: 1.5,
                spex_limit: 2.0,
                method: LimitMethod::GaussianChi2,
                t2_method: "gaussian_moments".into(),
                spex_method: "scaled_chi2".into(),
            },
            fault_onset: Some(3),
        }
    }

    #[test]
    fn csv_columns_and_flags() {
        let csv = chart_csv(&chart());
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "sample_index,t2,spex,t2_warning,t2_alarm,spex_limit,onset_flag");
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[1], "1,0.1,0,0.5,1,2,0");
        assert!(lines[3].ends_with(",1"));
    }

    #[test]
    fn svg_has_two_panels_and_onset() {
        for log_scale in [false, true] {
            let svg = chart_svg(&chart(), SvgOptions { log_scale, ..Default::default() });
            assert!(svg.starts_with("<svg"));
            assert_eq!(svg.matches("<polyline").count(), 2);
            assert_eq!(svg.matches("stroke=\"gray\"").count(), 2);
            assert!(!svg.contains("NaN") && !svg.contains("inf"));
            assert_eq!(svg.contains("log10("), log_scale);
        }
    }
}
