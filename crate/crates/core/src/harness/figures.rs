//! Minimal SVG rendering of the report figures.

use std::fmt::Write as _;
use std::path::Path;

use super::evaluate::EvalReport;
use super::io::write_atomic;
use super::Result;
use crate::evalkit::{CorrelationMode, Timing};
use crate::Tensor;

const W: f64 = 480.0;
const H: f64 = 320.0;
const PAD: f64 = 48.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

struct Series<'a> {
    name: &'a str,
    points: Vec<(f64, f64)>,
}

fn bounds(series: &[Series], fixed: Option<(f64, f64)>) -> (f64, f64, f64, f64) {
    let pts = series.iter().flat_map(|s| s.points.iter()).filter(|p| p.1.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if let Some((a, b)) = fixed {
        y0 = a;
        y1 = b;
    }
    if !(x1 > x0) {
        x1 = x0 + 1.0;
    }
    if !(y1 > y0) {
        y1 = y0 + 1.0;
    }
    (x0, x1, y0, y1)
}

fn line_chart(title: &str, xlabel: &str, ylabel: &str, series: &[Series], fixed_y: Option<(f64, f64)>, diagonal: bool) -> String {
    let (x0, x1, y0, y1) = bounds(series, fixed_y);
    let px = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let py = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{title}</text>"#, W / 2.0);
    let _ = writeln!(
        s,
        r#"<path d="M{PAD} {} H{} M{PAD} {} V{PAD}" stroke="black" fill="none"/>"#,
        H - PAD,
        W - PAD,
        H - PAD
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{xlabel}</text>"#, W / 2.0, H - 10.0);
    let _ = writeln!(s, r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">{ylabel}</text>"#, H / 2.0, H / 2.0);
    for (v, anchor, x, y) in [
        (x0, "start", px(x0), H - PAD + 14.0),
        (x1, "end", px(x1), H - PAD + 14.0),
    ] {
        let _ = writeln!(s, r#"<text x="{x}" y="{y}" text-anchor="{anchor}">{v:.3}</text>"#);
    }
    for v in [y0, y1] {
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{v:.3e}</text>"#, PAD - 4.0, py(v) + 4.0);
    }
    if diagonal {
        let _ = writeln!(
            s,
            r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#777" stroke-dasharray="4 3"/>"##,
            px(x0),
            py(x0),
            px(x1),
            py(x1)
        );
    }
    for (k, ser) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let d: Vec<String> = ser
            .points
            .iter()
            .filter(|p| p.1.is_finite())
            .enumerate()
            .map(|(i, &(x, y))| format!("{}{:.2} {:.2}", if i == 0 { 'M' } else { 'L' }, px(x), py(y)))
            .collect();
        let _ = writeln!(s, r#"<path d="{}" stroke="{color}" stroke-width="1.8" fill="none"/>"#, d.join(" "));
        let ly = PAD + 14.0 * k as f64;
        let _ = writeln!(s, r#"<rect x="{}" y="{}" width="10" height="3" fill="{color}"/>"#, W - PAD - 90.0, ly - 4.0);
        let _ = writeln!(s, r#"<text x="{}" y="{ly}">{}</text>"#, W - PAD - 76.0, ser.name);
    }
    s.push_str("</svg>\n");
    s
}

fn bar_chart(title: &str, ylabel: &str, bars: &[(String, f64)]) -> String {
    let max = bars.iter().map(|b| b.1).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let slot = (W - 2.0 * PAD) / bars.len().max(1) as f64;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{title}</text>"#, W / 2.0);
    let _ = writeln!(s, r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">{ylabel}</text>"#, H / 2.0, H / 2.0);
    for (k, (name, v)) in bars.iter().enumerate() {
        let h = v / max * (H - 2.0 * PAD);
        let x = PAD + slot * k as f64 + slot * 0.15;
        let _ = writeln!(
            s,
            r#"<rect x="{x:.2}" y="{:.2}" width="{:.2}" height="{h:.2}" fill="{}"/>"#,
            H - PAD - h,
            slot * 0.7,
            PALETTE[k % PALETTE.len()]
        );
        let _ = writeln!(s, r#"<text x="{:.2}" y="{}" text-anchor="middle">{name}</text>"#, x + slot * 0.35, H - PAD + 14.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{v:.3e}</text>"#, x + slot * 0.35, H - PAD - h - 4.0);
    }
    s.push_str("</svg>\n");
    s
}

/// Grid of heatmaps; each row is a lead step, each column a map kind.
pub fn heatmap_grid(title: &str, rows: &[(String, Vec<Tensor>)], columns: &[&str]) -> String {
    let cell = 120.0;
    let gap = 16.0;
    let width = PAD + columns.len() as f64 * (cell + gap);
    let height = 40.0 + rows.len() as f64 * (cell + gap);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="16" text-anchor="middle" font-size="13">{title}</text>"#, width / 2.0);
    for (c, name) in columns.iter().enumerate() {
        let _ = writeln!(s, r#"<text x="{}" y="32" text-anchor="middle">{name}</text>"#, PAD + c as f64 * (cell + gap) + cell / 2.0);
    }
    for (r, (label, maps)) in rows.iter().enumerate() {
        let oy = 40.0 + r as f64 * (cell + gap);
        let _ = writeln!(s, r#"<text x="4" y="{}">{label}</text>"#, oy + cell / 2.0);
        for (c, m) in maps.iter().enumerate() {
            let ox = PAD + c as f64 * (cell + gap);
            let (h, w) = (m.shape()[0], m.shape()[1]);
            let max = m.data().iter().cloned().filter(|v| v.is_finite()).fold(0.0, f64::max);
            let (ch, cw) = (cell / h as f64, cell / w as f64);
            for i in 0..h {
                for j in 0..w {
                    let v = m.get(&[i, j]);
                    let t = if max > 0.0 && v.is_finite() { (v / max).clamp(0.0, 1.0) } else { 0.0 };
                    let shade = (255.0 * (1.0 - t)).round() as u8;
                    let _ = writeln!(
                        s,
                        r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="rgb({shade},{shade},255)"/>"#,
                        ox + j as f64 * cw,
                        oy + i as f64 * ch,
                        cw + 0.05,
                        ch + 0.05
                    );
                }
            }
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Figures 1–3 analogues for a set of reports, plus one map grid per report
/// directory that carries `maps/`.
pub fn write_figures(
    out: &Path,
    reports: &[EvalReport],
    timings: &[Option<Timing>],
    report_dirs: &[&Path],
    mode: CorrelationMode,
) -> Result<Vec<String>> {
    let mut written = Vec::new();
    let mut put = |name: &str, svg: String| -> Result<()> {
        write_atomic(&out.join(name), svg.as_bytes())?;
        written.push(name.to_string());
        Ok(())
    };
    let lead_series = |f: &dyn Fn(&EvalReport) -> &[f64]| -> Vec<Series> {
        reports
            .iter()
            .map(|r| Series {
                name: &r.variant,
                points: f(r).iter().enumerate().map(|(i, &v)| ((5 * (i + 1)) as f64, v)).collect(),
            })
            .collect()
    };
    put(
        "fig1_mse_vs_lead.svg",
        line_chart("MSE vs lead time", "lead (minutes)", "MSE", &lead_series(&|r| &r.mse.values), None, false),
    )?;
    let gflops: Vec<(String, f64)> = reports
        .iter()
        .map(|r| (r.variant.clone(), r.cost.total_flops as f64 / 1e9))
        .collect();
    put("fig2_gflops.svg", bar_chart("Inference cost per sample", "GFLOPs", &gflops))?;
    if timings.iter().any(Option::is_some) {
        let times: Vec<(String, f64)> = reports
            .iter()
            .zip(timings)
            .map(|(r, t)| (r.variant.clone(), t.as_ref().map_or(0.0, |t| t.mean)))
            .collect();
        put("fig2_time.svg", bar_chart("Inference time per sample", "seconds", &times))?;
    }
    let rel: Vec<Series> = reports
        .iter()
        .map(|r| Series {
            name: &r.variant,
            points: r
                .reliability
                .levels
                .iter()
                .zip(&r.reliability.observed)
                .map(|(&a, &b)| (a, b))
                .collect(),
        })
        .collect();
    put(
        "fig3_reliability.svg",
        line_chart("Reliability", "nominal coverage", "observed coverage", &rel, Some((0.0, 1.0)), true),
    )?;
    put(
        "fig3_correlation.svg",
        line_chart(
            "Uncertainty-error correlation",
            "lead (minutes)",
            "correlation",
            &lead_series(&|r| r.correlation.curve(mode)),
            None,
            false,
        ),
    )?;
    let kinds = ["target", "output", "rmse", "uncertainty"];
    for (r, dir) in reports.iter().zip(report_dirs) {
        let maps_dir = dir.join("maps");
        let Ok(entries) = std::fs::read_dir(&maps_dir) else { continue };
        let mut leads: Vec<usize> = entries
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                name.strip_prefix("lead_")?.split('_').next()?.parse().ok()
            })
            .collect();
        leads.sort_unstable();
        leads.dedup();
        let mut rows = Vec::new();
        for lead in leads {
            let maps = kinds
                .iter()
                .map(|k| super::evaluate::read_grid(&maps_dir.join(format!("lead_{lead:02}_{k}.csv"))))
                .collect::<Result<Vec<_>>>()?;
            rows.push((format!("{} min", 5 * lead), maps));
        }
        if !rows.is_empty() {
            put(&format!("maps_{}.svg", r.variant), heatmap_grid(&r.variant, &rows, &kinds))?;
        }
    }
    Ok(written)
}
