//! Minimal SVG line plots with error bars.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{SummaryRow, SweepAxes};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    /// `(x, mean, std)`.
    pub points: Vec<(f64, f64, f64)>,
}

const W: f64 = 480.0;
const H: f64 = 320.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 45.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn nice_range(lo: f64, hi: f64) -> (f64, f64) {
    if !(hi > lo) {
        let pad = lo.abs().max(1.0) * 0.1;
        return (lo - pad, hi + pad);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

/// Renders the series as an SVG document.
pub fn line_plot_svg(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, m, s) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(m - s);
        y1 = y1.max(m + s);
    }
    if x0 > x1 {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    let (x0, x1) = nice_range(x0, x1);
    let (y0, y1) = nice_range(y0, y1);
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{}</text>"#, LEFT + pw / 2.0, esc(title));
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            sx(xv),
            TOP + ph + 15.0,
            fmt_tick(xv)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            LEFT - 5.0,
            sy(yv) + 4.0,
            fmt_tick(yv)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        H - 8.0,
        esc(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        esc(y_label)
    );
    for (k, ser) in series.iter().enumerate() {
        let c = PALETTE[k % PALETTE.len()];
        let path: Vec<String> = ser.points.iter().map(|&(x, m, _)| format!("{:.1},{:.1}", sx(x), sy(m))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="1.5"/>"#, path.join(" "));
        for &(x, m, sd) in &ser.points {
            let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="2.5" fill="{c}"/>"#, sx(x), sy(m));
            if sd > 0.0 {
                let _ = writeln!(
                    s,
                    r#"<line x1="{0:.1}" y1="{1:.1}" x2="{0:.1}" y2="{2:.1}" stroke="{c}"/>"#,
                    sx(x),
                    sy(m - sd),
                    sy(m + sd)
                );
            }
        }
        let ly = TOP + 10.0 + 16.0 * k as f64;
        let lx = W - RIGHT + 10.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{c}" stroke-width="2"/>"#, lx + 18.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 22.0, ly + 4.0, esc(&ser.label));
    }
    s.push_str("</svg>\n");
    s
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else if v.abs() >= 1.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.3}")
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Axis {
    name: &'static str,
    label: &'static str,
    get: fn(&SummaryRow) -> f64,
}

const AXES: [Axis; 5] = [
    Axis { name: "n_images", label: "training images", get: |r| r.n_images as f64 },
    Axis { name: "radius_m", label: "camera radius (m)", get: |r| r.radius_m },
    Axis { name: "mask_iou", label: "mask IoU target", get: |r| r.mask_iou_target },
    Axis { name: "sigma_t", label: "translation noise (cm)", get: |r| r.sigma_t_m * 100.0 },
    Axis { name: "sigma_r", label: "rotation noise (deg)", get: |r| r.sigma_r_deg },
];

fn axis_len(sweep: &SweepAxes, name: &str) -> usize {
    match name {
        "n_images" => sweep.n_images.len(),
        "radius_m" => sweep.radius_m.len(),
        "mask_iou" => sweep.mask_iou.len(),
        "sigma_t" => sweep.sigma_t_m.len(),
        _ => sweep.sigma_r_deg.len(),
    }
}

/// One MAE and one IoU plot per swept numeric axis; lines are the
/// combinations of every other setting.
pub(super) fn write_plots(sweep: &SweepAxes, summary: &[SummaryRow], dir: &Path) -> Result<()> {
    for axis in AXES.iter().filter(|a| axis_len(sweep, a.name) > 1) {
        let label_of = |r: &SummaryRow| {
            let mut parts = Vec::new();
            for other in AXES.iter().filter(|o| o.name != axis.name && axis_len(sweep, o.name) > 1) {
                parts.push(format!("{}={}", other.name, fmt_tick((other.get)(r))));
            }
            if sweep.use_depth.len() > 1 {
                parts.push(if r.use_depth { "depth" } else { "no depth" }.to_string());
            }
            if sweep.optimize_extrinsics.len() > 1 {
                parts.push(if r.optimize_extrinsics { "extr" } else { "no extr" }.to_string());
            }
            if parts.is_empty() {
                "mean".to_string()
            } else {
                parts.join(", ")
            }
        };
        for (metric, y_label, pick) in [
            ("mae", "depth MAE (cm)", (|r: &SummaryRow| r.depth_mae_mean_m.map(|m| (m * 100.0, r.depth_mae_std_m.unwrap_or(0.0) * 100.0))) as fn(&SummaryRow) -> Option<(f64, f64)>),
            ("iou", "IoU (%)", |r: &SummaryRow| r.mask_iou_mean.map(|m| (m * 100.0, r.mask_iou_std.unwrap_or(0.0) * 100.0))),
        ] {
            let mut series: Vec<Series> = Vec::new();
            for r in summary {
                let Some((m, sd)) = pick(r) else { continue };
                let label = label_of(r);
                let x = (axis.get)(r);
                match series.iter_mut().find(|s| s.label == label) {
                    Some(s) => s.points.push((x, m, sd)),
                    None => series.push(Series {
                        label,
                        points: vec![(x, m, sd)],
                    }),
                }
            }
            for s in &mut series {
                s.points.sort_by(|a, b| a.0.total_cmp(&b.0));
            }
            let svg = line_plot_svg(&format!("{} vs {}", y_label, axis.label), axis.label, y_label, &series);
            fs::write(dir.join(format!("plot_{}_{}.svg", axis.name, metric)), svg)?;
        }
    }
    Ok(())
}
