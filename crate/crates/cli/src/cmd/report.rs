use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use super::eval::{summarise, Row, TaskSummary};
use crate::header::RunHeader;
use crate::usage;

pub const TABLE_NAME: &str = "report.md";
pub const PLOT_NAME: &str = "scatter.svg";

#[derive(clap::Args, Debug, Serialize)]
pub struct Args {
    /// Eval CSVs, one per model or configuration.
    #[arg(required = true, num_args = 1..)]
    pub csv: Vec<PathBuf>,
    /// Display names, one per CSV (default: file stem).
    #[arg(long)]
    pub label: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

pub struct Model {
    pub label: String,
    pub tasks: Vec<TaskSummary>,
    pub average: TaskSummary,
}

pub fn read_rows(path: &Path) -> Result<Vec<Row>> {
    let mut reader =
        csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let rows = reader
        .deserialize()
        .collect::<Result<Vec<Row>, _>>()
        .with_context(|| format!("parsing {}", path.display()))?;
    if rows.is_empty() {
        return Err(usage(format!("{} has no rows", path.display())));
    }
    Ok(rows)
}

fn fmt_metric(v: f64) -> String {
    format!("{v:.6}")
}

/// Rows are tasks in first-seen order, then an Average row; each model
/// contributes a warping error and a perceptual distance column.
pub fn markdown_table(models: &[Model]) -> String {
    let mut tasks: Vec<&str> = Vec::new();
    for m in models {
        for t in &m.tasks {
            if !tasks.contains(&t.task.as_str()) {
                tasks.push(&t.task);
            }
        }
    }
    let mut out = String::from("| Task |");
    for m in models {
        let _ = write!(out, " {} E_warp | {} D |", m.label, m.label);
    }
    out.push_str("\n|---|");
    out.push_str(&"---:|---:|".repeat(models.len()));
    out.push('\n');
    for task in tasks {
        let _ = write!(out, "| {task} |");
        for m in models {
            match m.tasks.iter().find(|t| t.task == task) {
                Some(t) => {
                    let _ = write!(
                        out,
                        " {} | {} |",
                        fmt_metric(t.warping_error),
                        fmt_metric(t.perceptual_distance)
                    );
                }
                None => out.push_str(" n/a | n/a |"),
            }
        }
        out.push('\n');
    }
    out.push_str("| **Average** |");
    for m in models {
        let _ = write!(
            out,
            " {} | {} |",
            fmt_metric(m.average.warping_error),
            fmt_metric(m.average.perceptual_distance)
        );
    }
    out.push('\n');
    out
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Warping error (x) against perceptual distance (y), one labelled point per model.
pub fn scatter_svg(models: &[Model], comment: &str) -> String {
    const W: f64 = 480.0;
    const H: f64 = 360.0;
    const M: f64 = 56.0;
    let max_x = models
        .iter()
        .map(|m| m.average.warping_error)
        .fold(0.0, f64::max);
    let max_y = models
        .iter()
        .map(|m| m.average.perceptual_distance)
        .fold(0.0, f64::max);
    let span = |v: f64| {
        if v > 0.0 && v.is_finite() {
            v * 1.15
        } else {
            1.0
        }
    };
    let (sx, sy) = (span(max_x), span(max_y));
    let px = |x: f64| M + x / sx * (W - 2.0 * M);
    let py = |y: f64| H - M - y / sy * (H - 2.0 * M);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(svg, "<!-- {} -->", xml_escape(comment).replace("--", "- -"));
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<path d="M{M} {top} V{bottom} H{right}" stroke="black" fill="none"/>"#,
        top = M,
        bottom = H - M,
        right = W - M
    );
    for i in 0..=4 {
        let fx = sx * i as f64 / 4.0;
        let fy = sy * i as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle">{:.3e}</text>"#,
            px(fx),
            H - M + 16.0,
            fx
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{:.3e}</text>"#,
            M - 6.0,
            py(fy) + 3.0,
            fy
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">warping error</text>"#,
        W / 2.0,
        H - 12.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{:.1}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {:.1})">perceptual distance</text>"#,
        H / 2.0,
        H / 2.0
    );
    for m in models {
        let (x, y) = (
            px(m.average.warping_error),
            py(m.average.perceptual_distance),
        );
        let _ = writeln!(
            svg,
            r#"<circle class="point" cx="{x:.2}" cy="{y:.2}" r="4" fill="steelblue"/>"#
        );
        let _ = writeln!(
            svg,
            r#"<text class="label" x="{:.2}" y="{:.2}" font-size="11">{}</text>"#,
            x + 6.0,
            y - 6.0,
            xml_escape(&m.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn run(args: Args) -> Result<()> {
    if !args.label.is_empty() && args.label.len() != args.csv.len() {
        return Err(usage(format!(
            "{} labels given for {} CSVs",
            args.label.len(),
            args.csv.len()
        )));
    }
    let mut models = Vec::new();
    for (i, path) in args.csv.iter().enumerate() {
        let rows = read_rows(path)?;
        let (tasks, average) = summarise(&rows);
        let label = args.label.get(i).cloned().unwrap_or_else(|| {
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| format!("model {}", i + 1))
        });
        models.push(Model {
            label,
            tasks,
            average,
        });
    }
    let header = RunHeader::new("report", &args, None)?;
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let table = format!(
        "<!-- {} -->\n\n{}",
        header.summary_line(),
        markdown_table(&models)
    );
    let table_path = args.out.join(TABLE_NAME);
    std::fs::write(&table_path, table)
        .with_context(|| format!("writing {}", table_path.display()))?;
    let plot_path = args.out.join(PLOT_NAME);
    std::fs::write(&plot_path, scatter_svg(&models, &header.summary_line()))
        .with_context(|| format!("writing {}", plot_path.display()))?;
    eprintln!("wrote {} and {}", table_path.display(), plot_path.display());
    Ok(())
}
