//! Charts and a markdown summary for a run directory.
//!
//! Output goes to `<run>/report/`: `accuracy.svg`, `auroc.svg`,
//! `selection.svg` and `summary.md`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde_json::Value;

use dualspace::experiment::read_metrics;
use dualspace::{Error, MetricsReport};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const LEFT: f64 = 56.0;
const RIGHT: f64 = 140.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 44.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

type Series<'a> = (&'a str, Vec<(usize, Option<f64>)>);

pub fn run(run_dir: &Path) -> Result<(), Error> {
    let metrics_path = run_dir.join("metrics.jsonl");
    if !metrics_path.exists() {
        return Err(Error::Config(format!("no metrics log at {}", metrics_path.display())));
    }
    let metrics = read_metrics(&metrics_path)?;
    if metrics.is_empty() {
        return Err(Error::format(&metrics_path, "no epochs recorded"));
    }
    let out = run_dir.join("report");
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;

    let pick = |f: &dyn Fn(&MetricsReport) -> Option<f64>| -> Vec<(usize, Option<f64>)> {
        metrics.iter().map(|m| (m.epoch, f(m))).collect()
    };
    let charts: [(&str, &str, Vec<Series>); 3] = [
        ("accuracy.svg", "Test accuracy (known classes)", vec![("accuracy", pick(&|m| m.test.accuracy))]),
        (
            "auroc.svg",
            "Open-set detection",
            vec![("AUROC", pick(&|m| m.test.auroc)), ("FPR95", pick(&|m| m.test.fpr95))],
        ),
        (
            "selection.svg",
            "Sample selection",
            vec![
                ("clean precision", pick(&|m| m.selection.and_then(|s| s.clean_precision))),
                ("clean recall", pick(&|m| m.selection.and_then(|s| s.clean_recall))),
                ("open precision", pick(&|m| m.selection.and_then(|s| s.open_precision))),
            ],
        ),
    ];
    for (file, title, series) in &charts {
        let path = out.join(file);
        fs::write(&path, line_chart(title, series)).map_err(|e| Error::io(&path, e))?;
    }

    let summary_path = run_dir.join("summary.json");
    let (source, value) = if summary_path.exists() {
        let text = fs::read_to_string(&summary_path).map_err(|e| Error::io(&summary_path, e))?;
        let v: Value = serde_json::from_str(&text).map_err(|e| Error::format(&summary_path, e))?;
        ("summary.json", v)
    } else {
        let last = metrics.last().expect("checked non-empty");
        let v = serde_json::to_value(last).map_err(|e| Error::format(&metrics_path, e))?;
        ("last line of metrics.jsonl (run unfinished)", v)
    };
    let md = markdown(run_dir, source, &value, &charts.iter().map(|c| c.0).collect::<Vec<_>>());
    let path = out.join("summary.md");
    fs::write(&path, md).map_err(|e| Error::io(&path, e))?;
    log::info!("report written to {}", out.display());
    Ok(())
}

/// Dotted key paths and JSON-rendered leaves, sorted by key.
pub fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

fn markdown(run_dir: &Path, source: &str, value: &Value, charts: &[&str]) -> String {
    let mut rows = Vec::new();
    flatten("", value, &mut rows);
    let mut s = String::new();
    let _ = writeln!(s, "# Run report: {}\n", run_dir.display());
    let _ = writeln!(s, "Values from {source}.\n");
    let _ = writeln!(s, "| key | value |\n|---|---|");
    for (k, v) in rows {
        let _ = writeln!(s, "| {k} | {v} |");
    }
    let _ = writeln!(s);
    for c in charts {
        let _ = writeln!(s, "![{c}]({c})");
    }
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Line chart of values in [0, 1] against epoch. Missing values break
/// the line.
pub fn line_chart(title: &str, series: &[Series]) -> String {
    let max_epoch = series
        .iter()
        .flat_map(|(_, pts)| pts.iter().map(|p| p.0))
        .max()
        .unwrap_or(1)
        .max(2);
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let x = |e: usize| LEFT + plot_w * (e as f64 - 1.0) / (max_epoch as f64 - 1.0);
    let y = |v: f64| TOP + plot_h * (1.0 - v.clamp(0.0, 1.0));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        LEFT + plot_w / 2.0,
        escape(title)
    );
    for i in 0..=4 {
        let v = i as f64 / 4.0;
        let yy = y(v);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{yy:.1}" x2="{:.1}" y2="{yy:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"##,
            LEFT + plot_w,
            LEFT - 6.0,
            yy + 4.0
        );
    }
    let step = (max_epoch as f64 / 6.0).ceil().max(1.0) as usize;
    let mut ticks: Vec<usize> = (1..=max_epoch).step_by(step).collect();
    if ticks.last() != Some(&max_epoch) {
        ticks.push(max_epoch);
    }
    for e in ticks {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{e}</text>"#,
            x(e),
            TOP + plot_h + 18.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">epoch</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 8.0
    );
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );

    for (k, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let mut segment: Vec<String> = Vec::new();
        let mut segments = Vec::new();
        for &(e, v) in pts {
            match v {
                Some(v) if v.is_finite() => segment.push(format!("{:.1},{:.1}", x(e), y(v))),
                _ => {
                    if !segment.is_empty() {
                        segments.push(std::mem::take(&mut segment));
                    }
                }
            }
        }
        if !segment.is_empty() {
            segments.push(segment);
        }
        for seg in segments {
            if seg.len() == 1 {
                let (cx, cy) = seg[0].split_once(',').expect("formatted as x,y");
                let _ = writeln!(s, r#"<circle cx="{cx}" cy="{cy}" r="2.5" fill="{color}"/>"#);
            } else {
                let _ = writeln!(
                    s,
                    r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
                    seg.join(" ")
                );
            }
        }
        let ly = TOP + 14.0 + 18.0 * k as f64;
        let lx = LEFT + plot_w + 10.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{ly:.1}">{}</text>"#,
            ly - 4.0,
            lx + 18.0,
            ly - 4.0,
            lx + 24.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_breaks_lines_at_missing_values() {
        let svg = line_chart(
            "t",
            &[("a", vec![(1, Some(0.1)), (2, Some(0.2)), (3, None), (4, Some(0.4)), (5, Some(0.5))])],
        );
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn chart_draws_isolated_points() {
        let svg = line_chart("t", &[("a", vec![(1, None), (2, Some(0.5)), (3, None)])]);
        assert_eq!(svg.matches("<circle").count(), 1);
        assert_eq!(svg.matches("<polyline").count(), 0);
    }

    #[test]
    fn flatten_keeps_json_rendering() {
        let v: Value = serde_json::json!({"a": {"b": 0.1, "c": null}, "d": "x"});
        let mut rows = Vec::new();
        flatten("", &v, &mut rows);
        assert_eq!(
            rows,
            vec![
                ("a.b".to_string(), "0.1".to_string()),
                ("a.c".to_string(), "null".to_string()),
                ("d".to_string(), "\"x\"".to_string())
            ]
        );
    }
}
