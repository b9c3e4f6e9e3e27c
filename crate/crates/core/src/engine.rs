//! Class scoring at the next position and at placeholder-skipped positions,
//! the exhaustive marginal those positions approximate, and content-free
//! calibration.

use serde::{Deserialize, Serialize};

use crate::backend::LanguageModel;
use crate::error::{Error, Result};
use crate::types::{LabelSpec, PromptTemplate, Sample, TokenId, Vocab};

/// Guard on `V^i` for [`exact_marginal`].
pub const MAX_ENUMERATION: u64 = 1_000_000;

/// Lower bound applied to content-free scores before dividing by them.
pub const CALIBRATION_FLOOR: f64 = 1e-12;

/// `(m + 1) × K` class scores read from one forward pass over the input
/// followed by `m` placeholders. Row `i` scores the token `i` positions past
/// the end of the input; row 0 is the next token.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionClassMatrix {
    entries: Vec<Vec<f64>>,
    n_tokens: usize,
    placeholders: usize,
}

impl PositionClassMatrix {
    pub fn new(entries: Vec<Vec<f64>>, n_tokens: usize) -> Self {
        let placeholders = entries.len().saturating_sub(1);
        Self {
            entries,
            n_tokens,
            placeholders,
        }
    }

    /// Number of positions (`m + 1`).
    pub fn positions(&self) -> usize {
        self.entries.len()
    }

    pub fn classes(&self) -> usize {
        self.entries.first().map_or(0, Vec::len)
    }

    /// Input token count.
    pub fn n_tokens(&self) -> usize {
        self.n_tokens
    }

    pub fn placeholders(&self) -> usize {
        self.placeholders
    }

    pub fn row(&self, position: usize) -> &[f64] {
        &self.entries[position]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.entries
    }

    /// Row renormalized over the K classes.
    pub fn normalized_row(&self, position: usize) -> Vec<f64> {
        normalize(&self.entries[position])
    }

    pub fn normalized(&self) -> Self {
        Self {
            entries: (0..self.positions())
                .map(|i| self.normalized_row(i))
                .collect(),
            ..self.clone()
        }
    }
}

pub(crate) fn normalize(scores: &[f64]) -> Vec<f64> {
    let sum: f64 = scores.iter().sum();
    if sum > 0.0 {
        scores.iter().map(|s| s / sum).collect()
    } else {
        vec![1.0 / scores.len() as f64; scores.len()]
    }
}

fn check_length<B: LanguageModel + ?Sized>(backend: &B, len: usize) -> Result<()> {
    if len > backend.max_len() {
        return Err(Error::SequenceTooLong {
            len,
            max_len: backend.max_len(),
        });
    }
    Ok(())
}

/// Next-token class scores: class-token sums over the final output row.
pub fn ntp_scores<B: LanguageModel + ?Sized>(
    backend: &B,
    x: &[TokenId],
    labels: &LabelSpec,
) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::EmptyInput);
    }
    psp_scores(backend, x, 0, labels)
}

/// Class scores for the token `skip` positions past the end of `x`, read
/// from the final row of `x ++ <ph> × skip`.
///
/// An empty `x` is accepted so content-free inputs that tokenize to nothing
/// can still be scored; with `skip == 0` this is the empty-prefix row.
pub fn psp_scores<B: LanguageModel + ?Sized>(
    backend: &B,
    x: &[TokenId],
    skip: usize,
    labels: &LabelSpec,
) -> Result<Vec<f64>> {
    check_length(backend, x.len() + skip)?;
    let row = if x.is_empty() {
        if skip == 0 {
            backend.forward_empty()?
        } else {
            let ph = backend.vocab().placeholder_id();
            last_row(backend.forward_full(&vec![ph; skip])?)?
        }
    } else {
        last_row(backend.forward_with_placeholders(x, skip)?)?
    };
    Ok(labels.class_scores(&row))
}

fn last_row(m: crate::backend::PrefixDistributionMatrix) -> Result<Vec<f64>> {
    m.last_row().map(<[f64]>::to_vec).ok_or(Error::EmptyInput)
}

/// All positions `0..=m` from a single forward pass over `x ++ <ph> × m`.
pub fn p3_matrix<B: LanguageModel + ?Sized>(
    backend: &B,
    x: &[TokenId],
    m: usize,
    labels: &LabelSpec,
) -> Result<PositionClassMatrix> {
    if x.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = x.len();
    check_length(backend, n + m)?;
    let out = backend.forward_with_placeholders(x, m)?;
    let entries = (0..=m)
        .map(|i| labels.class_scores(out.row(n - 1 + i)))
        .collect();
    Ok(PositionClassMatrix::new(entries, n))
}

/// Exact probability that the token `skip` positions past `x` belongs to
/// each class, summing over every intermediate continuation in `V^skip` by
/// the chain rule. Branches with exactly zero probability are skipped.
pub fn exact_marginal<B: LanguageModel + ?Sized>(
    backend: &B,
    x: &[TokenId],
    skip: usize,
    labels: &LabelSpec,
) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::EmptyInput);
    }
    let v = backend.vocab().size();
    let paths = (v as u64).checked_pow(skip as u32).unwrap_or(u64::MAX);
    if paths > MAX_ENUMERATION {
        return Err(Error::EnumerationTooLarge {
            vocab: v,
            depth: skip,
            limit: MAX_ENUMERATION,
        });
    }
    check_length(backend, x.len() + skip)?;
    let mut totals = vec![0.0; labels.len()];
    let mut seq = x.to_vec();
    enumerate(backend, &mut seq, skip, 1.0, labels, &mut totals)?;
    Ok(totals)
}

fn enumerate<B: LanguageModel + ?Sized>(
    backend: &B,
    seq: &mut Vec<TokenId>,
    remaining: usize,
    mass: f64,
    labels: &LabelSpec,
    totals: &mut [f64],
) -> Result<()> {
    let row = last_row(backend.forward_full(seq)?)?;
    if remaining == 0 {
        for (t, s) in totals.iter_mut().zip(labels.class_scores(&row)) {
            *t += mass * s;
        }
        return Ok(());
    }
    for (tok, &p) in row.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        seq.push(tok as TokenId);
        enumerate(backend, seq, remaining - 1, mass * p, labels, totals)?;
        seq.pop();
    }
    Ok(())
}

/// Divides each class score by its content-free score and renormalizes.
pub fn calibrate(scores: &[f64], cal: &CalibrationVector) -> Vec<f64> {
    let divided: Vec<f64> = scores
        .iter()
        .zip(&cal.scores)
        .map(|(s, c)| s / c.max(CALIBRATION_FLOOR))
        .collect();
    normalize(&divided)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CalibrationVariant {
    #[default]
    None,
    /// "N/A"
    Na,
    /// ""
    Empty,
    /// placeholder surface repeated five times
    Unk5,
}

impl CalibrationVariant {
    pub fn content_free_text(self, vocab: &Vocab) -> Option<String> {
        match self {
            CalibrationVariant::None => None,
            CalibrationVariant::Na => Some("N/A".into()),
            CalibrationVariant::Empty => Some(String::new()),
            CalibrationVariant::Unk5 => Some(vocab.placeholder_surface().repeat(5)),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CalibrationVariant::None => "none",
            CalibrationVariant::Na => "na",
            CalibrationVariant::Empty => "empty",
            CalibrationVariant::Unk5 => "unk5",
        }
    }
}

impl std::str::FromStr for CalibrationVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Self::None),
            "na" | "n/a" => Ok(Self::Na),
            "empty" => Ok(Self::Empty),
            "unk5" => Ok(Self::Unk5),
            other => Err(Error::InvalidConfig(format!(
                "unknown calibration variant {other:?}"
            ))),
        }
    }
}

/// Per-class content-free scores; every entry is at least [`CALIBRATION_FLOOR`].
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationVector {
    pub scores: Vec<f64>,
    pub variant: CalibrationVariant,
}

impl CalibrationVector {
    pub fn new(scores: Vec<f64>, variant: CalibrationVariant) -> Self {
        let scores = scores
            .into_iter()
            .map(|s| s.max(CALIBRATION_FLOOR))
            .collect();
        Self { scores, variant }
    }

    pub fn uniform(classes: usize) -> Self {
        Self::new(
            vec![1.0 / classes as f64; classes],
            CalibrationVariant::None,
        )
    }
}

/// Content-free tokens for `template` under `variant`: every slot is filled
/// with the content-free string.
pub fn content_free_tokens<B: LanguageModel + ?Sized>(
    backend: &B,
    template: &PromptTemplate,
    variant: CalibrationVariant,
) -> Result<Vec<TokenId>> {
    let text = variant.content_free_text(backend.vocab()).ok_or_else(|| {
        Error::InvalidConfig("calibration variant none has no content-free input".into())
    })?;
    let sample = Sample::new(text.clone()).with_title(text);
    let prompt = template.render(&sample)?;
    backend.tokenize(&prompt)
}

/// Scores the content-free rendering of `template` at `position`, the same
/// placeholder offset as the scores it will calibrate.
pub fn content_free_vector<B: LanguageModel + ?Sized>(
    backend: &B,
    template: &PromptTemplate,
    labels: &LabelSpec,
    variant: CalibrationVariant,
    position: usize,
) -> Result<CalibrationVector> {
    let tokens = content_free_tokens(backend, template, variant)?;
    let scores = psp_scores(backend, &tokens, position, labels)?;
    Ok(CalibrationVector::new(scores, variant))
}
