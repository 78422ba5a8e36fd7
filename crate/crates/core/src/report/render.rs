use std::fmt::Write;
use std::str::FromStr;

use super::{to_canonical_json, AuditReport, Color, ReportError, RowDiff};

const ANSI_RESET: &str = "\x1b[0m";
const MISSING_MARK: &str = "[missing]";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderFormat {
    Ansi,
    Html,
    Json,
}

impl FromStr for RenderFormat {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ansi" => Ok(RenderFormat::Ansi),
            "html" => Ok(RenderFormat::Html),
            "json" => Ok(RenderFormat::Json),
            other => Err(ReportError::UnsupportedFormat(other.to_string())),
        }
    }
}

fn ansi_code(color: Color) -> &'static str {
    match color {
        Color::Green => "\x1b[32m",
        Color::Red => "\x1b[31m",
        Color::Purple => "\x1b[35m",
    }
}

fn html_color(color: Color) -> &'static str {
    match color {
        Color::Green => "#1a7f37",
        Color::Red => "#cf222e",
        Color::Purple => "#8250df",
    }
}

fn escape_html(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

pub fn ansi_row(diff: &RowDiff) -> String {
    let mut out = String::new();
    for seg in &diff.segments {
        let text = if seg.text.is_empty() { MISSING_MARK } else { &seg.text };
        out.push_str(ansi_code(seg.color));
        out.push_str(text);
        out.push_str(ANSI_RESET);
    }
    out
}

pub fn html_row(diff: &RowDiff) -> String {
    let mut out = String::new();
    for seg in &diff.segments {
        let text = if seg.text.is_empty() {
            MISSING_MARK.to_string()
        } else {
            escape_html(&seg.text).replace('\n', "<br>")
        };
        let _ = write!(out, "<span style=\"color:{}\">{}</span>", html_color(seg.color), text);
    }
    out
}

fn summary_lines(report: &AuditReport) -> Vec<String> {
    let score = &report.dataset_score;
    let confound = &report.confound;
    let mut lines = vec![
        format!("dataset: {}", report.dataset),
        format!("backend: {}", report.provenance.backend_id),
        format!("model: {}", report.config.gen.model_id),
        format!(
            "files: {}  trials: {}",
            report.files.len(),
            score.trial_count
        ),
        format!("mean ratio: {:.4}  (trial-weighted {:.4})", score.dataset_mean, score.trial_weighted_mean),
        format!(
            "copy-last baseline: {:.4}  (best prefix row {:.4})",
            confound.copy_baseline_mean, confound.copy_baseline_best
        ),
        format!("duplicate-row fraction: {:.4}", confound.duplicate_row_fraction),
        format!("verdict: {}  (margin {:+.4})", report.verdict.level, report.verdict.margin),
    ];
    for (file, mean) in &score.per_file {
        lines.push(format!("  {file}: {mean:.4}"));
    }
    for c in &confound.stuck_columns {
        lines.push(format!(
            "stuck column: {} #{} (run {})",
            c.file_ref, c.column.index, c.column.max_run_length
        ));
    }
    for c in &confound.predictable_columns {
        lines.push(format!("predictable column: {} #{} ({})", c.file_ref, c.column.index, c.column.class));
    }
    lines.extend(report.verdict.notes.iter().map(|n| format!("note: {n}")));
    lines.extend(report.notes.iter().map(|n| format!("note: {n}")));
    lines
}

fn render_ansi(report: &AuditReport) -> String {
    let mut out = String::new();
    for line in summary_lines(report) {
        out.push_str(&line);
        out.push('\n');
    }
    out.push('\n');
    for t in &report.trials {
        let _ = writeln!(
            out,
            "{} trial {} ratio {:.4}",
            t.file_ref, t.score.trial_id, t.score.ratio
        );
        let _ = writeln!(out, "  truth: {}", t.diff.gt_row);
        let _ = writeln!(out, "  model: {}", ansi_row(&t.diff));
    }
    out
}

fn render_html(report: &AuditReport) -> String {
    let mut out = String::from(
        "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n",
    );
    let _ = writeln!(out, "<title>tabaudit: {}</title>", escape_html(&report.dataset));
    out.push_str("</head>\n<body style=\"font-family:sans-serif;margin:2em\">\n");
    let _ = writeln!(out, "<h1>{}</h1>", escape_html(&report.dataset));
    out.push_str("<pre style=\"background:#f6f8fa;padding:1em\">");
    for line in summary_lines(report) {
        out.push_str(&escape_html(&line));
        out.push('\n');
    }
    out.push_str("</pre>\n");
    out.push_str("<table style=\"border-collapse:collapse;font-family:monospace\">\n");
    out.push_str("<tr><th style=\"text-align:left;padding:4px\">file</th><th style=\"padding:4px\">trial</th><th style=\"padding:4px\">ratio</th><th style=\"text-align:left;padding:4px\">truth / model</th></tr>\n");
    for t in &report.trials {
        let _ = writeln!(
            out,
            "<tr style=\"border-top:1px solid #d0d7de\"><td style=\"padding:4px\">{}</td><td style=\"padding:4px\">{}</td><td style=\"padding:4px\">{:.4}</td><td style=\"padding:4px\">{}<br>{}</td></tr>",
            escape_html(&t.file_ref),
            t.score.trial_id,
            t.score.ratio,
            escape_html(&t.diff.gt_row),
            html_row(&t.diff)
        );
    }
    out.push_str("</table>\n</body>\n</html>\n");
    out
}

pub fn render_report(report: &AuditReport, format: RenderFormat) -> String {
    match format {
        RenderFormat::Ansi => render_ansi(report),
        RenderFormat::Html => render_html(report),
        RenderFormat::Json => to_canonical_json(report),
    }
}
