//! Report rendering in three formats: aligned text, tab-delimited table and
//! structured JSON.

use std::fmt::Write as _;

use serde::Serialize;

use super::{AblationRow, OracleResult, RunReport, SweepPoint};
use crate::model::TemporalInterval;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Text,
    Delimited,
    Structured,
}

impl std::str::FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(OutputFormat::Text),
            "delimited-table" | "delimited" | "tsv" => Ok(OutputFormat::Delimited),
            "structured" | "json" => Ok(OutputFormat::Structured),
            other => Err(format!("unknown format {other:?} (expected text, delimited-table or structured)")),
        }
    }
}

fn json<T: Serialize + ?Sized>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("reports serialize");
    s.push('\n');
    s
}

fn interval(i: &Option<TemporalInterval>) -> String {
    i.map_or_else(|| "-".to_string(), |i| i.to_string())
}

fn table(header: &[&str], rows: &[Vec<String>], format: OutputFormat) -> String {
    let mut out = String::new();
    if format == OutputFormat::Delimited {
        out.push_str(&header.join("\t"));
        out.push('\n');
        for r in rows {
            let cells: Vec<String> = r.iter().map(|c| c.replace(['\t', '\n'], " ")).collect();
            out.push_str(&cells.join("\t"));
            out.push('\n');
        }
        return out;
    }
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        padded.join("  ").trim_end().to_string()
    };
    out.push_str(&line(header.to_vec()));
    out.push('\n');
    for r in rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

pub fn render_run(report: &RunReport, format: OutputFormat) -> String {
    if format == OutputFormat::Structured {
        return json(report);
    }
    let rows: Vec<Vec<String>> = report
        .outcomes
        .iter()
        .map(|o| {
            vec![
                o.id.clone(),
                if o.correct { "yes" } else { "no" }.to_string(),
                o.answer.clone(),
                o.gold_answer.clone(),
                o.score.to_string(),
                o.frames.to_string(),
                o.iterations.to_string(),
                o.terminated_by.clone().unwrap_or_else(|| "error".into()),
                interval(&o.answer_interval),
                o.error.clone().unwrap_or_default(),
            ]
        })
        .collect();
    let mut out = table(
        &["question", "correct", "answer", "gold", "score", "frames", "iters", "stop", "interval", "error"],
        &rows,
        format,
    );
    if format == OutputFormat::Text {
        let _ = writeln!(
            out,
            "\naccuracy {:.3}  mean frames {:.1}  failures {}",
            report.accuracy, report.mean_frames, report.failures
        );
        for (d, f) in &report.frame_fraction_by_duration {
            let _ = writeln!(out, "frame fraction at {d} s: {f:.4}");
        }
    }
    out
}

pub fn render_ablation(rows: &[AblationRow], format: OutputFormat) -> String {
    if format == OutputFormat::Structured {
        return json(rows);
    }
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.config.clone(),
                format!("{:.4}", r.mean_accuracy),
                format!("{:.1}", r.mean_frames),
                r.seeds.len().to_string(),
            ]
        })
        .collect();
    table(&["config", "accuracy", "mean_frames", "seeds"], &cells, format)
}

pub fn render_sweep(points: &[SweepPoint], format: OutputFormat) -> String {
    if format == OutputFormat::Structured {
        return json(points);
    }
    let cells: Vec<Vec<String>> = points
        .iter()
        .map(|p| {
            vec![
                format!("{}", p.duration_s),
                format!("{:.1}", p.mean_frames),
                format!("{:.4}", p.frame_fraction),
                format!("{:.3}", p.accuracy),
            ]
        })
        .collect();
    table(&["duration_s", "mean_frames", "frame_fraction", "accuracy"], &cells, format)
}

pub fn render_oracle(results: &[OracleResult], format: OutputFormat) -> String {
    if format == OutputFormat::Structured {
        return json(results);
    }
    let cells: Vec<Vec<String>> = results
        .iter()
        .map(|r| {
            vec![
                r.question_id.clone(),
                r.answer_interval.to_string(),
                format!("{:.4}", r.best_score),
                format!("{:.4}", r.threshold),
                if r.found { "yes" } else { "no" }.to_string(),
                r.frames_scanned.to_string(),
            ]
        })
        .collect();
    table(&["question", "window", "score", "threshold", "found", "frames"], &cells, format)
}
