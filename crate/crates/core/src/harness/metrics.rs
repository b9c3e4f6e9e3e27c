use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StdKind {
    /// Divisor = number of values.
    #[default]
    Population,
    /// Divisor = number of values - 1.
    Sample,
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population standard deviation of per-prompt accuracies.
pub fn cross_prompt_std(accuracies: &[f64]) -> f64 {
    std_with(accuracies, StdKind::Population)
}

pub fn sample_std(values: &[f64]) -> f64 {
    std_with(values, StdKind::Sample)
}

pub(crate) fn std_with(values: &[f64], kind: StdKind) -> f64 {
    let n = values.len();
    let divisor = match kind {
        StdKind::Population => n,
        StdKind::Sample => n.saturating_sub(1),
    };
    if divisor == 0 {
        return 0.0;
    }
    let mu = mean(values);
    let ss: f64 = values.iter().map(|v| (v - mu).powi(2)).sum();
    (ss / divisor as f64).sqrt()
}

/// Forward-pass sizes: batch `B`, sequence `s`, hidden `h`, layers `l`, vocab `V`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlopsParams {
    pub batch: u64,
    pub seq_len: u64,
    pub hidden: u64,
    pub layers: u64,
    pub vocab: u64,
}

/// `l(24·B·s·h² + 4·B·s²·h) + 2·B·s·h·V`.
pub fn flops_estimate(p: FlopsParams) -> u128 {
    let (b, s, h, l, v) = (
        p.batch as u128,
        p.seq_len as u128,
        p.hidden as u128,
        p.layers as u128,
        p.vocab as u128,
    );
    l * (24 * b * s * h * h + 4 * b * s * s * h) + 2 * b * s * h * v
}
