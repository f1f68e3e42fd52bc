//! Serialization of run results: the CSV log schemas and small SVG line
//! charts. Floats are written with the shortest round-trip representation,
//! so identical runs serialize to identical bytes.

use std::fmt::Write as _;

use crate::federation::RunHistory;
use crate::topology::Topology;

/// Per-step training loss: `t,device,loss`.
pub fn run_log_csv(history: &RunHistory) -> String {
    let mut out = String::from("t,device,loss\n");
    for r in &history.step_losses {
        writeln!(out, "{},{},{}", r.t, r.device, r.loss).unwrap();
    }
    out
}

/// Per-candidate pull audit: `t,i,j,candidate_id,probability,chosen`.
pub fn exchange_log_csv(history: &RunHistory) -> String {
    let mut out = String::from("t,i,j,candidate_id,probability,chosen\n");
    for r in &history.exchange_candidates {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.t,
            r.receiver,
            r.transmitter,
            r.point_id,
            r.probability,
            u8::from(r.chosen)
        )
        .unwrap();
    }
    out
}

/// Per-probe evaluation row:
/// `gamma,t,accuracy,label_variance_mean,cumulative_delay_s`.
pub fn evaluation_log_csv(history: &RunHistory) -> String {
    let mut out = String::from("gamma,t,accuracy,label_variance_mean,cumulative_delay_s\n");
    for r in &history.evaluations {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.gamma, r.t, r.accuracy, r.label_variance_mean, r.cumulative_delay_s
        )
        .unwrap();
    }
    out
}

/// Per-pull-event plan summary: `t,i,j,n,macro_probs,entropy`; the macro
/// probabilities are `;`-joined.
pub fn pull_summary_csv(history: &RunHistory) -> String {
    let mut out = String::from("t,i,j,n,macro_probs,entropy\n");
    for r in &history.pull_summaries {
        let macros = r
            .macro_probs
            .iter()
            .map(|p| p.to_string())
            .collect::<Vec<_>>()
            .join(";");
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.t, r.receiver, r.transmitter, r.budget, macros, r.composed_entropy
        )
        .unwrap();
    }
    out
}

/// Edge dump for inspection: `i,j` with `i < j`.
pub fn edges_csv(topology: &Topology) -> String {
    let mut out = String::from("i,j\n");
    for (i, j) in topology.edges() {
        writeln!(out, "{i},{j}").unwrap();
    }
    out
}

/// A named series of (x, y) points for charting.
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const SERIES_COLORS: [&str; 5] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

/// Renders a minimal multi-series line chart. CSV stays the contract; this
/// exists so runs can be eyeballed without external tooling.
pub fn svg_line_chart(series: &[Series], title: &str, x_label: &str, y_label: &str) -> String {
    let (width, height) = (640.0, 420.0);
    let (left, right, top, bottom) = (60.0, 20.0, 40.0, 50.0);
    let plot_w = width - left - right;
    let plot_h = height - top - bottom;

    let all: Vec<(f64, f64)> = series.iter().flat_map(|s| s.points.iter().copied()).collect();
    let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in &all {
        x_min = x_min.min(*x);
        x_max = x_max.max(*x);
        y_min = y_min.min(*y);
        y_max = y_max.max(*y);
    }
    if all.is_empty() {
        x_min = 0.0;
        x_max = 1.0;
        y_min = 0.0;
        y_max = 1.0;
    }
    if (x_max - x_min).abs() < 1e-12 {
        x_max = x_min + 1.0;
    }
    if (y_max - y_min).abs() < 1e-12 {
        y_max = y_min + 1.0;
    }
    let sx = move |x: f64| left + (x - x_min) / (x_max - x_min) * plot_w;
    let sy = move |y: f64| top + plot_h - (y - y_min) / (y_max - y_min) * plot_h;

    let mut out = String::new();
    writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\">"
    )
    .unwrap();
    writeln!(out, "<rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>").unwrap();
    writeln!(
        out,
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{title}</text>",
        width / 2.0
    )
    .unwrap();
    // Axes.
    writeln!(
        out,
        "<line x1=\"{left}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        top + plot_h,
        left + plot_w,
        top + plot_h
    )
    .unwrap();
    writeln!(
        out,
        "<line x1=\"{left}\" y1=\"{top}\" x2=\"{left}\" y2=\"{}\" stroke=\"black\"/>",
        top + plot_h
    )
    .unwrap();
    writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\">{x_label}</text>",
        left + plot_w / 2.0,
        height - 12.0
    )
    .unwrap();
    writeln!(
        out,
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\" \
         transform=\"rotate(-90 16 {})\">{y_label}</text>",
        top + plot_h / 2.0,
        top + plot_h / 2.0
    )
    .unwrap();
    // Range labels.
    writeln!(
        out,
        "<text x=\"{left}\" y=\"{}\" font-size=\"10\">{x_min}</text>",
        top + plot_h + 16.0
    )
    .unwrap();
    writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-size=\"10\">{x_max}</text>",
        left + plot_w,
        top + plot_h + 16.0
    )
    .unwrap();
    writeln!(out, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-size=\"10\">{y_min}</text>", left - 6.0, top + plot_h).unwrap();
    writeln!(out, "<text x=\"{}\" y=\"{top}\" text-anchor=\"end\" font-size=\"10\">{y_max}</text>", left - 6.0).unwrap();

    for (k, s) in series.iter().enumerate() {
        let color = SERIES_COLORS[k % SERIES_COLORS.len()];
        let pts = s
            .points
            .iter()
            .map(|&(x, y)| format!("{},{}", sx(x), sy(y)))
            .collect::<Vec<_>>()
            .join(" ");
        writeln!(
            out,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{pts}\"/>"
        )
        .unwrap();
        writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" fill=\"{color}\">{}</text>",
            left + plot_w - 120.0,
            top + 14.0 * (k as f64 + 1.0),
            s.name
        )
        .unwrap();
    }
    writeln!(out, "</svg>").unwrap();
    out
}
