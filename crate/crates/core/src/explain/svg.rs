use std::fmt::Write;

use super::ShapSummary;

const WIDTH: f64 = 720.0;
const ROW: f64 = 36.0;
const LEFT: f64 = 110.0;
const RIGHT: f64 = 30.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

/// Blue for the lowest feature values through red for the highest.
fn colour(t: f64) -> String {
    let r = (40.0 + 200.0 * t).round() as u8;
    let b = (240.0 - 200.0 * t).round() as u8;
    format!("#{r:02x}30{b:02x}")
}

/// Deterministic vertical spread in `[-1, 1]`.
fn jitter(i: usize) -> f64 {
    let h = (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) >> 40;
    (h as f64 / (1u64 << 24) as f64) * 2.0 - 1.0
}

/// Beeswarm-style summary: one row per feature in rank order, horizontal
/// position is phi, colour is the rank of the feature value.
pub fn render_summary_svg(summary: &ShapSummary) -> String {
    let n_rows = summary.ranking.len();
    let height = TOP + BOTTOM + ROW * n_rows as f64;
    let max_abs = summary
        .explanations
        .iter()
        .flat_map(|e| e.phi.iter())
        .fold(0.0f64, |m, p| m.max(p.abs()))
        .max(1e-12);
    let plot_w = WIDTH - LEFT - RIGHT;
    let x_of = |phi: f64| LEFT + plot_w * (phi / max_abs + 1.0) / 2.0;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{} / {} ({:?} scale)</text>"#,
        WIDTH / 2.0,
        summary.task.name(),
        summary.model,
        summary.config.scale
    );
    let zero = x_of(0.0);
    let _ = writeln!(
        s,
        r##"<line x1="{zero:.2}" y1="{TOP}" x2="{zero:.2}" y2="{:.2}" stroke="#999" stroke-dasharray="4 3"/>"##,
        height - BOTTOM
    );
    for (row, attr) in summary.ranking.iter().enumerate() {
        let j = summary.feature_names.iter().position(|n| *n == attr.feature).expect("ranked feature exists");
        let y = TOP + ROW * (row as f64 + 0.5);
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end" dominant-baseline="middle">{}</text>"#,
            LEFT - 8.0,
            y,
            attr.feature
        );
        let mut order: Vec<usize> = (0..summary.explanations.len()).collect();
        order.sort_by(|&a, &b| summary.explanations[a].x.values[j].total_cmp(&summary.explanations[b].x.values[j]));
        let denom = (order.len().max(2) - 1) as f64;
        for (rank, &i) in order.iter().enumerate() {
            let e = &summary.explanations[i];
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{}" fill-opacity="0.7"/>"#,
                x_of(e.phi[j]),
                y + jitter(i * 31 + j) * ROW * 0.3,
                colour(rank as f64 / denom)
            );
        }
    }
    let axis_y = height - BOTTOM + 6.0;
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{axis_y:.2}" x2="{:.2}" y2="{axis_y:.2}" stroke="black"/>"#,
        WIDTH - RIGHT
    );
    for t in [-1.0, -0.5, 0.0, 0.5, 1.0] {
        let x = x_of(t * max_abs);
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{:.3}</text>"#,
            axis_y + 16.0,
            t * max_abs
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">SHAP value (low feature value blue, high red)</text>"#,
        LEFT + plot_w / 2.0,
        height - 6.0
    );
    s.push_str("</svg>\n");
    s
}
