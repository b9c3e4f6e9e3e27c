use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{flops_estimate, mean, std_with, FlopsParams, StdKind};
use super::report::{EvaluationReport, PromptResult};
use crate::aggregation::{classify, AggregationPolicy, CalibrationCache};
use crate::backend::{argmax, CountingBackend, LanguageModel};
use crate::baselines::{generate_classify, self_consistency, way_seeds, Decoding};
use crate::engine::{ntp_scores, psp_scores};
use crate::error::{Error, Result};
use crate::types::{LabelSpec, PromptTemplate, Sample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Method {
    Ntp,
    Psp {
        skip: usize,
    },
    P3 {
        policy: AggregationPolicy,
    },
    Gen {
        max_tokens: usize,
    },
    Sc {
        ways: usize,
        temperature: f64,
        seed: u64,
        max_tokens: usize,
    },
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Ntp => "ntp",
            Method::Psp { .. } => "psp",
            Method::P3 { .. } => "p3",
            Method::Gen { .. } => "gen",
            Method::Sc { .. } => "sc",
        }
    }

    /// The aggregation policy a method's decision is equivalent to, if any.
    pub fn policy(&self) -> Option<AggregationPolicy> {
        match self {
            Method::Ntp => Some(AggregationPolicy::NextToken),
            Method::Psp { skip } => Some(AggregationPolicy::SkipPosition { skip: *skip }),
            Method::P3 { policy } => Some(policy.clone()),
            Method::Gen { .. } | Method::Sc { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    /// Worker threads; backends that refuse concurrent calls always get one.
    pub jobs: usize,
    pub std_kind: StdKind,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            jobs: 1,
            std_kind: StdKind::Population,
        }
    }
}

struct SampleOutcome {
    correct: bool,
    passes: usize,
    flops: u128,
}

/// Accuracy of `method` under every template. Undecided samples count as
/// incorrect. Results are merged in (template, sample) order, so the report
/// does not depend on `jobs`.
pub fn evaluate<B: LanguageModel + ?Sized>(
    backend: &B,
    templates: &[PromptTemplate],
    samples: &[Sample],
    labels: &LabelSpec,
    method: &Method,
    options: EvalOptions,
) -> Result<EvaluationReport> {
    if templates.is_empty() {
        return Err(Error::InvalidConfig("need at least one template".into()));
    }
    if samples.is_empty() {
        return Err(Error::InvalidConfig(
            "need at least one labeled sample".into(),
        ));
    }
    if let Some(policy) = method.policy() {
        policy.validate()?;
    }
    labels.check_vocab(backend.vocab())?;
    let gold: Vec<usize> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let label = s
                .gold_label
                .as_deref()
                .ok_or_else(|| Error::InvalidConfig(format!("sample {i} has no label")))?;
            labels.index_of(label).ok_or(Error::UnknownLabel {
                line: i + 1,
                label: label.to_string(),
            })
        })
        .collect::<Result<_>>()?;

    let jobs = if backend.concurrent() {
        options.jobs.max(1)
    } else {
        1
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;

    let mut per_prompt = Vec::with_capacity(templates.len());
    for (template_id, template) in templates.iter().enumerate() {
        let cache = CalibrationCache::new();
        let outcomes: Vec<Result<SampleOutcome>> = pool.install(|| {
            samples
                .par_iter()
                .enumerate()
                .map(|(i, sample)| {
                    let counter = CountingBackend::new(backend);
                    let decision =
                        decide_sample(&counter, template, sample, i, labels, method, &cache)?;
                    let passes = counter.take_passes();
                    let flops = backend.dims().map_or(0, |d| {
                        passes
                            .iter()
                            .map(|p| {
                                flops_estimate(FlopsParams {
                                    batch: 1,
                                    seq_len: p.tokens.len().max(1) as u64,
                                    hidden: d.hidden,
                                    layers: d.layers,
                                    vocab: d.vocab,
                                })
                            })
                            .sum()
                    });
                    Ok(SampleOutcome {
                        correct: decision == Some(gold[i]),
                        passes: passes.len(),
                        flops,
                    })
                })
                .collect()
        });
        let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
        let n = outcomes.len() as f64;
        let correct = outcomes.iter().filter(|o| o.correct).count();
        let passes: usize = outcomes.iter().map(|o| o.passes).sum();
        let flops: u128 = outcomes.iter().map(|o| o.flops).sum();
        per_prompt.push(PromptResult {
            template_id,
            accuracy: correct as f64 / n,
            avg_runs: passes as f64 / n,
            avg_flops: backend.dims().map(|_| flops as f64 / n),
        });
    }

    let accuracies: Vec<f64> = per_prompt.iter().map(|p| p.accuracy).collect();
    Ok(EvaluationReport {
        method: method.name().to_string(),
        policy: method.policy(),
        mean_accuracy: mean(&accuracies),
        cross_prompt_std: std_with(&accuracies, options.std_kind),
        per_prompt,
        n_samples: samples.len(),
        backend: backend.fingerprint(),
    })
}

fn decide_sample<B: LanguageModel + ?Sized>(
    backend: &B,
    template: &PromptTemplate,
    sample: &Sample,
    index: usize,
    labels: &LabelSpec,
    method: &Method,
    cache: &CalibrationCache,
) -> Result<Option<usize>> {
    let prompt = template.render(sample)?;
    match method {
        Method::P3 { policy } => Ok(Some(
            classify(backend, &prompt, template, labels, policy, cache)?.class,
        )),
        _ => {
            let x = backend.tokenize(&prompt)?;
            match method {
                Method::Ntp => Ok(Some(argmax(&ntp_scores(backend, &x, labels)?))),
                Method::Psp { skip } => Ok(Some(argmax(&psp_scores(backend, &x, *skip, labels)?))),
                Method::Gen { max_tokens } => {
                    Ok(
                        generate_classify(backend, &x, labels, *max_tokens, Decoding::Greedy)?
                            .matched_class,
                    )
                }
                Method::Sc {
                    ways,
                    temperature,
                    seed,
                    max_tokens,
                } => {
                    let seeds = way_seeds(*seed, index as u64, *ways);
                    Ok(
                        self_consistency(backend, &x, labels, *temperature, &seeds, *max_tokens)?
                            .decision,
                    )
                }
                Method::P3 { .. } => unreachable!(),
            }
        }
    }
}
