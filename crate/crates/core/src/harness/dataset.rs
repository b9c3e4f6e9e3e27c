use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{LabelSpec, Sample};

/// Parses JSONL records `{"text": ..., "title"?: ..., "label"?: ...}`.
/// Blank lines are skipped; line numbers in errors are 1-based.
pub fn parse_dataset(raw: &str, labels: Option<&LabelSpec>) -> Result<Vec<Sample>> {
    let mut samples = Vec::new();
    for (idx, line) in raw.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let sample: Sample = serde_json::from_str(line).map_err(|e| Error::MalformedLine {
            line: line_no,
            reason: e.to_string(),
        })?;
        if let (Some(spec), Some(label)) = (labels, &sample.gold_label) {
            if spec.index_of(label).is_none() {
                return Err(Error::UnknownLabel {
                    line: line_no,
                    label: label.clone(),
                });
            }
        }
        samples.push(sample);
    }
    Ok(samples)
}

pub fn load_dataset(path: impl AsRef<Path>, labels: Option<&LabelSpec>) -> Result<Vec<Sample>> {
    let path = path.as_ref();
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&raw, labels)
}
