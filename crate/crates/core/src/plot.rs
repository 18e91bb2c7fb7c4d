//! Minimal SVG charts: ROC curves, reliability diagrams and ranked bars.

use std::fmt::Write as _;

use crate::evaluation::EvaluationReport;
use crate::explain::AttributionSummary;

const W: f64 = 640.0;
const H: f64 = 480.0;
const MARGIN: f64 = 60.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="16">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    s
}

/// Axes for the unit square with ticks every 0.2.
fn unit_axes(s: &mut String, x_label: &str, y_label: &str) {
    let (x0, y0, x1, y1) = (MARGIN, H - MARGIN, W - MARGIN, MARGIN);
    let _ = writeln!(
        s,
        r#"<rect x="{x0}" y="{y1}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        x1 - x0,
        y0 - y1
    );
    for k in 0..=5 {
        let t = k as f64 / 5.0;
        let (px, py) = to_px(t, t);
        let _ = writeln!(
            s,
            r#"<text x="{px:.1}" y="{:.1}" text-anchor="middle">{t:.1}</text>"#,
            y0 + 18.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{t:.1}</text>"#,
            x0 - 6.0,
            py + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        W / 2.0,
        H - 16.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(y_label)
    );
    let (a, b) = (to_px(0.0, 0.0), to_px(1.0, 1.0));
    let _ = writeln!(
        s,
        r##"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#999" stroke-dasharray="4 4"/>"##,
        a.0, a.1, b.0, b.1
    );
}

fn to_px(x: f64, y: f64) -> (f64, f64) {
    (
        MARGIN + x * (W - 2.0 * MARGIN),
        H - MARGIN - y * (H - 2.0 * MARGIN),
    )
}

fn polyline(s: &mut String, pts: &[(f64, f64)], color: &str, markers: bool) {
    let coords: Vec<String> = pts
        .iter()
        .map(|&(x, y)| {
            let (px, py) = to_px(x, y);
            format!("{px:.1},{py:.1}")
        })
        .collect();
    let _ = writeln!(
        s,
        r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
        coords.join(" ")
    );
    if markers {
        for &(x, y) in pts {
            let (px, py) = to_px(x, y);
            let _ = writeln!(
                s,
                r#"<circle cx="{px:.1}" cy="{py:.1}" r="3" fill="{color}"/>"#
            );
        }
    }
}

fn legend(s: &mut String, entries: &[String]) {
    for (i, e) in entries.iter().enumerate() {
        let y = MARGIN + 16.0 + 16.0 * i as f64;
        let x = W - MARGIN - 200.0;
        let c = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            s,
            r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{c}" stroke-width="2"/>"#,
            x + 18.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}">{}</text>"#,
            x + 24.0,
            y + 4.0,
            escape(e)
        );
    }
}

pub fn roc_svg(report: &EvaluationReport) -> String {
    let mut s = header(&format!("ROC curves ({})", report.partition));
    unit_axes(&mut s, "False positive rate", "True positive rate");
    let mut names = Vec::new();
    for (i, m) in report.models.iter().enumerate() {
        let pts: Vec<(f64, f64)> = m.roc.iter().map(|p| (p.fpr, p.tpr)).collect();
        polyline(&mut s, &pts, PALETTE[i % PALETTE.len()], false);
        names.push(format!("{} (AUC {:.3})", m.model, m.auc));
    }
    legend(&mut s, &names);
    s.push_str("</svg>\n");
    s
}

/// Reliability diagram; uses the calibrated curve when `calibrated` is set and available.
pub fn calibration_svg(report: &EvaluationReport, calibrated: bool) -> String {
    let title = if calibrated {
        "Calibration after isotonic regression"
    } else {
        "Calibration curves"
    };
    let mut s = header(&format!("{title} ({})", report.partition));
    unit_axes(
        &mut s,
        "Mean predicted probability",
        "Observed positive fraction",
    );
    let mut names = Vec::new();
    for (i, m) in report.models.iter().enumerate() {
        let curve = match (&m.calibration_after, calibrated) {
            (Some(c), true) => c,
            _ => &m.calibration,
        };
        let pts: Vec<(f64, f64)> = curve
            .iter()
            .map(|p| (p.mean_predicted, p.observed_rate))
            .collect();
        polyline(&mut s, &pts, PALETTE[i % PALETTE.len()], true);
        names.push(m.model.clone());
    }
    legend(&mut s, &names);
    s.push_str("</svg>\n");
    s
}

/// Horizontal bars of mean |Shapley value|, largest on top.
pub fn importance_svg(summary: &AttributionSummary) -> String {
    let rows = summary.ranking.len().max(1);
    let bar_h = ((H - 2.0 * MARGIN) / rows as f64).min(24.0);
    let max = summary
        .ranking
        .iter()
        .map(|f| f.mean_abs)
        .fold(0.0, f64::max);
    let mut s = header(&format!("Mean |Shapley value|: {}", summary.model));
    let left = 170.0;
    let width = W - left - MARGIN;
    for (i, f) in summary.ranking.iter().enumerate() {
        let y = MARGIN + i as f64 * bar_h;
        let w = if max > 0.0 {
            f.mean_abs / max * width
        } else {
            0.0
        };
        let _ = writeln!(
            s,
            r#"<rect x="{left}" y="{:.1}" width="{w:.1}" height="{:.1}" fill="{}"/>"#,
            y + 2.0,
            bar_h - 4.0,
            PALETTE[0]
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#,
            left - 6.0,
            y + bar_h / 2.0 + 4.0,
            escape(&f.feature)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}">{:.4}</text>"#,
            left + w + 4.0,
            y + bar_h / 2.0 + 4.0,
            f.mean_abs
        );
    }
    s.push_str("</svg>\n");
    s
}
