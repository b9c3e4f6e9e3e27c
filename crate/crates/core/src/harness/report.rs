use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::aggregation::AggregationPolicy;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptResult {
    pub template_id: usize,
    pub accuracy: f64,
    pub avg_runs: f64,
    /// `None` when the backend does not expose its architecture sizes.
    pub avg_flops: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub method: String,
    pub policy: Option<AggregationPolicy>,
    pub per_prompt: Vec<PromptResult>,
    pub mean_accuracy: f64,
    pub cross_prompt_std: f64,
    pub n_samples: usize,
    pub backend: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::InvalidConfig(format!(
                "unknown report format {other:?}"
            ))),
        }
    }
}

const CSV_HEADER: [&str; 11] = [
    "row",
    "template_id",
    "accuracy",
    "avg_runs",
    "avg_flops",
    "mean_accuracy",
    "cross_prompt_std",
    "n_samples",
    "method",
    "policy",
    "backend",
];

/// Serializes `report`. Field order is fixed, so equal reports render to
/// identical bytes.
pub fn render_report(report: &EvaluationReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => {
            let mut out = serde_json::to_string_pretty(report)?;
            out.push('\n');
            Ok(out)
        }
        ReportFormat::Csv => render_csv(report),
    }
}

fn render_csv(report: &EvaluationReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    let policy = match &report.policy {
        Some(p) => serde_json::to_string(p)?,
        None => String::new(),
    };
    for p in &report.per_prompt {
        w.write_record([
            "prompt".to_string(),
            p.template_id.to_string(),
            p.accuracy.to_string(),
            p.avg_runs.to_string(),
            p.avg_flops.map(|f| f.to_string()).unwrap_or_default(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
        ])?;
    }
    w.write_record([
        "summary".to_string(),
        String::new(),
        String::new(),
        String::new(),
        String::new(),
        report.mean_accuracy.to_string(),
        report.cross_prompt_std.to_string(),
        report.n_samples.to_string(),
        report.method.clone(),
        policy,
        report.backend.clone(),
    ])?;
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv writer emits utf-8"))
}

pub fn parse_report(raw: &str, format: ReportFormat) -> Result<EvaluationReport> {
    match format {
        ReportFormat::Json => Ok(serde_json::from_str(raw)?),
        ReportFormat::Csv => parse_csv(raw),
    }
}

fn field<T: FromStr>(rec: &csv::StringRecord, idx: usize) -> Result<T> {
    let raw = rec.get(idx).unwrap_or_default();
    raw.parse().map_err(|_| {
        Error::InvalidConfig(format!(
            "csv column {} has bad value {raw:?}",
            CSV_HEADER[idx]
        ))
    })
}

fn parse_csv(raw: &str) -> Result<EvaluationReport> {
    let mut r = csv::Reader::from_reader(raw.as_bytes());
    let mut per_prompt = Vec::new();
    let mut summary = None;
    for rec in r.records() {
        let rec = rec?;
        match rec.get(0) {
            Some("prompt") => per_prompt.push(PromptResult {
                template_id: field(&rec, 1)?,
                accuracy: field(&rec, 2)?,
                avg_runs: field(&rec, 3)?,
                avg_flops: match rec.get(4) {
                    Some("") | None => None,
                    Some(_) => Some(field(&rec, 4)?),
                },
            }),
            Some("summary") => summary = Some(rec),
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown csv row kind {other:?}"
                )))
            }
        }
    }
    let s = summary.ok_or_else(|| Error::InvalidConfig("csv report has no summary row".into()))?;
    let policy = match s.get(9) {
        Some("") | None => None,
        Some(json) => Some(serde_json::from_str(json)?),
    };
    Ok(EvaluationReport {
        method: s.get(8).unwrap_or_default().to_string(),
        policy,
        per_prompt,
        mean_accuracy: field(&s, 5)?,
        cross_prompt_std: field(&s, 6)?,
        n_samples: field(&s, 7)?,
        backend: s.get(10).unwrap_or_default().to_string(),
    })
}

pub fn emit_report(
    report: &EvaluationReport,
    path: impl AsRef<Path>,
    format: ReportFormat,
) -> Result<()> {
    let path = path.as_ref();
    let body = render_report(report, format)?;
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

pub fn read_report(path: impl AsRef<Path>, format: ReportFormat) -> Result<EvaluationReport> {
    let path = path.as_ref();
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_report(&raw, format)
}
