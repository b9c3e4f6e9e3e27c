//! Policies that reduce a [`PositionClassMatrix`] to one class decision.

use std::collections::HashMap;
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use crate::backend::{argmax, LanguageModel};
use crate::engine::{
    calibrate, content_free_vector, normalize, p3_matrix, CalibrationVariant, CalibrationVector,
    PositionClassMatrix,
};
use crate::error::{Error, Result};
use crate::types::{LabelSpec, PromptTemplate, Sample};

/// Upper bound on placeholders appended for any single decision.
pub const MAX_PLACEHOLDERS: usize = 512;

pub const DEFAULT_INTERCEPT: f64 = -10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteMode {
    /// Each position casts one ballot for its argmax class.
    #[default]
    Plurality,
    /// Class scores (calibrated, normalized) are summed over positions.
    ScoreSum,
}

/// Which content-free position calibrates each voting position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationAnchor {
    /// Position `i` is calibrated by content-free input with `i` placeholders.
    #[default]
    PerPosition,
    /// Every position is calibrated by the next-token content-free vector.
    NextToken,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum AggregationPolicy {
    NextToken,
    SkipPosition {
        skip: usize,
    },
    /// Reads the position `round(tan(eta) * n_tokens + intercept)`.
    SlopePosition {
        eta_degrees: f64,
        #[serde(default = "default_intercept")]
        intercept: f64,
    },
    /// Votes over positions `[0, eta)`.
    RangeVote {
        eta: usize,
        #[serde(default)]
        calibration: CalibrationVariant,
        #[serde(default)]
        vote: VoteMode,
        #[serde(default)]
        anchor: CalibrationAnchor,
    },
}

fn default_intercept() -> f64 {
    DEFAULT_INTERCEPT
}

impl AggregationPolicy {
    pub fn range_vote(eta: usize, calibration: CalibrationVariant) -> Self {
        AggregationPolicy::RangeVote {
            eta,
            calibration,
            vote: VoteMode::Plurality,
            anchor: CalibrationAnchor::PerPosition,
        }
    }

    pub fn slope(eta_degrees: f64) -> Self {
        AggregationPolicy::SlopePosition {
            eta_degrees,
            intercept: DEFAULT_INTERCEPT,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            AggregationPolicy::SlopePosition {
                eta_degrees,
                intercept,
            } => {
                if !(0.0..90.0).contains(eta_degrees) {
                    return Err(Error::InvalidPolicy(format!(
                        "eta_degrees {eta_degrees} outside [0, 90)"
                    )));
                }
                if !intercept.is_finite() {
                    return Err(Error::InvalidPolicy(format!(
                        "intercept {intercept} is not finite"
                    )));
                }
            }
            AggregationPolicy::RangeVote { eta, .. } if *eta == 0 => {
                return Err(Error::InvalidPolicy("range vote needs eta >= 1".into()));
            }
            _ => {}
        }
        Ok(())
    }

    /// Short name used in reports and file names.
    pub fn tag(&self) -> String {
        match self {
            AggregationPolicy::NextToken => "next_token".into(),
            AggregationPolicy::SkipPosition { skip } => format!("skip{skip}"),
            AggregationPolicy::SlopePosition {
                eta_degrees,
                intercept,
            } => {
                format!("slope{eta_degrees}_b{intercept}")
            }
            AggregationPolicy::RangeVote {
                eta,
                calibration,
                vote,
                anchor,
            } => {
                let mut tag = format!("vote{eta}_{}", calibration.as_str());
                if *vote == VoteMode::ScoreSum {
                    tag.push_str("_sum");
                }
                if *anchor == CalibrationAnchor::NextToken {
                    tag.push_str("_anchor0");
                }
                tag
            }
        }
    }

    pub fn calibration(&self) -> CalibrationVariant {
        match self {
            AggregationPolicy::RangeVote { calibration, .. } => *calibration,
            _ => CalibrationVariant::None,
        }
    }

    /// Placeholders needed to decide for an input of `n_tokens`, given at
    /// most `m_max` placeholders are available.
    pub fn placeholders_needed(&self, n_tokens: usize, m_max: usize) -> usize {
        match self {
            AggregationPolicy::NextToken => 0,
            AggregationPolicy::SkipPosition { skip } => *skip,
            AggregationPolicy::SlopePosition {
                eta_degrees,
                intercept,
            } => slope_position(n_tokens, *eta_degrees, *intercept, m_max),
            AggregationPolicy::RangeVote { eta, .. } => eta.saturating_sub(1),
        }
    }

    /// Content-free positions this policy calibrates with.
    pub fn calibration_positions(&self) -> Vec<usize> {
        match self {
            AggregationPolicy::RangeVote {
                eta,
                calibration,
                anchor,
                ..
            } if *calibration != CalibrationVariant::None => match anchor {
                CalibrationAnchor::PerPosition => (0..*eta).collect(),
                CalibrationAnchor::NextToken => vec![0],
            },
            _ => Vec::new(),
        }
    }
}

/// `clamp(round(tan(eta) * n_tokens + intercept), 0, m_max)` with `eta` in degrees.
pub fn slope_position(n_tokens: usize, eta_degrees: f64, intercept: f64, m_max: usize) -> usize {
    let raw = (eta_degrees.to_radians().tan() * n_tokens as f64 + intercept).round();
    if raw.is_nan() || raw <= 0.0 {
        0
    } else {
        (raw as usize).min(m_max)
    }
}

/// Plurality (or score-sum) vote over positions `[0, eta)`. With
/// calibration, `calibration[i]` calibrates position `i`. Plurality ties go to
/// the tied class that wins the lowest position.
pub fn range_vote(
    matrix: &PositionClassMatrix,
    eta: usize,
    calibration: Option<&[CalibrationVector]>,
    mode: VoteMode,
) -> Result<usize> {
    if eta == 0 {
        return Err(Error::InvalidPolicy("range vote needs eta >= 1".into()));
    }
    if matrix.positions() < eta {
        return Err(Error::EtaExceedsMatrix {
            eta,
            positions: matrix.positions(),
        });
    }
    if let Some(cal) = calibration {
        if cal.len() < eta {
            return Err(Error::InvalidPolicy(format!(
                "{} calibration vectors for {eta} positions",
                cal.len()
            )));
        }
    }
    let scored = |i: usize| -> Vec<f64> {
        match calibration {
            Some(cal) => calibrate(matrix.row(i), &cal[i]),
            None => matrix.row(i).to_vec(),
        }
    };
    let k = matrix.classes();
    match mode {
        VoteMode::Plurality => {
            let winners: Vec<usize> = (0..eta).map(|i| argmax(&scored(i))).collect();
            let mut votes = vec![0usize; k];
            for &w in &winners {
                votes[w] += 1;
            }
            let top = votes.iter().copied().max().unwrap_or(0);
            Ok(winners
                .into_iter()
                .find(|&w| votes[w] == top)
                .expect("at least one voter"))
        }
        VoteMode::ScoreSum => {
            let mut totals = vec![0.0; k];
            for i in 0..eta {
                for (t, s) in totals.iter_mut().zip(normalize(&scored(i))) {
                    *t += s;
                }
            }
            Ok(argmax(&totals))
        }
    }
}

/// Applies `policy` to an already computed matrix. `calibration` must hold
/// one vector per entry of [`AggregationPolicy::calibration_positions`].
pub fn decide(
    matrix: &PositionClassMatrix,
    policy: &AggregationPolicy,
    calibration: &[CalibrationVector],
) -> Result<usize> {
    policy.validate()?;
    let pick = |position: usize| -> Result<usize> {
        if position >= matrix.positions() {
            return Err(Error::EtaExceedsMatrix {
                eta: position + 1,
                positions: matrix.positions(),
            });
        }
        Ok(argmax(matrix.row(position)))
    };
    match policy {
        AggregationPolicy::NextToken => pick(0),
        AggregationPolicy::SkipPosition { skip } => pick(*skip),
        AggregationPolicy::SlopePosition {
            eta_degrees,
            intercept,
        } => pick(slope_position(
            matrix.n_tokens(),
            *eta_degrees,
            *intercept,
            matrix.placeholders(),
        )),
        AggregationPolicy::RangeVote {
            eta,
            calibration: variant,
            vote,
            anchor,
        } => {
            if *variant == CalibrationVariant::None {
                return range_vote(matrix, *eta, None, *vote);
            }
            let per_position: Vec<CalibrationVector> = match anchor {
                CalibrationAnchor::PerPosition => calibration.to_vec(),
                CalibrationAnchor::NextToken => {
                    let first = calibration
                        .first()
                        .ok_or_else(|| Error::InvalidPolicy("missing calibration vector".into()))?;
                    vec![first.clone(); *eta]
                }
            };
            range_vote(matrix, *eta, Some(&per_position), *vote)
        }
    }
}

type CacheKey = (String, CalibrationVariant, usize);

/// Content-free vectors keyed by (template, variant, position). Intended to
/// live for one backend and one label spec.
#[derive(Debug, Default)]
pub struct CalibrationCache {
    vectors: RwLock<HashMap<CacheKey, CalibrationVector>>,
}

impl CalibrationCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.vectors.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get_or_compute<B: LanguageModel + ?Sized>(
        &self,
        backend: &B,
        template: &PromptTemplate,
        labels: &LabelSpec,
        variant: CalibrationVariant,
        position: usize,
    ) -> Result<CalibrationVector> {
        let key = (template.as_str().to_string(), variant, position);
        if let Some(v) = self.vectors.read().unwrap().get(&key) {
            return Ok(v.clone());
        }
        let mut map = self.vectors.write().unwrap();
        if let Some(v) = map.get(&key) {
            return Ok(v.clone());
        }
        let v = content_free_vector(backend, template, labels, variant, position)?;
        map.insert(key, v.clone());
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub class: usize,
    pub matrix: PositionClassMatrix,
}

/// Classifies a rendered prompt with one forward pass, plus one content-free
/// pass for each calibration vector not yet in `cache`. `template` is the
/// template the prompt was rendered from; it is used only for calibration.
pub fn classify<B: LanguageModel + ?Sized>(
    backend: &B,
    prompt: &str,
    template: &PromptTemplate,
    labels: &LabelSpec,
    policy: &AggregationPolicy,
    cache: &CalibrationCache,
) -> Result<Decision> {
    classify_with_placeholders(backend, prompt, template, labels, policy, cache, 0)
}

/// Like [`classify`] but appends at least `min_placeholders`, so the
/// returned matrix can be inspected beyond what the policy needs.
pub fn classify_with_placeholders<B: LanguageModel + ?Sized>(
    backend: &B,
    prompt: &str,
    template: &PromptTemplate,
    labels: &LabelSpec,
    policy: &AggregationPolicy,
    cache: &CalibrationCache,
    min_placeholders: usize,
) -> Result<Decision> {
    policy.validate()?;
    let x = backend.tokenize(prompt)?;
    if x.is_empty() {
        return Err(Error::EmptyInput);
    }
    let room = backend
        .max_len()
        .saturating_sub(x.len())
        .min(MAX_PLACEHOLDERS);
    let m = policy
        .placeholders_needed(x.len(), room)
        .max(min_placeholders);
    let matrix = p3_matrix(backend, &x, m, labels)?;
    let calibration = policy
        .calibration_positions()
        .into_iter()
        .map(|pos| cache.get_or_compute(backend, template, labels, policy.calibration(), pos))
        .collect::<Result<Vec<_>>>()?;
    let class = decide(&matrix, policy, &calibration)?;
    Ok(Decision { class, matrix })
}

pub fn classify_sample<B: LanguageModel + ?Sized>(
    backend: &B,
    template: &PromptTemplate,
    sample: &Sample,
    labels: &LabelSpec,
    policy: &AggregationPolicy,
    cache: &CalibrationCache,
) -> Result<Decision> {
    let prompt = template.render(sample)?;
    classify(backend, &prompt, template, labels, policy, cache)
}
