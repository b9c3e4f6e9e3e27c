//! Generation-based classification and self-consistency voting.

use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backend::{sample_from_row, LanguageModel};
use crate::error::{Error, Result};
use crate::types::{LabelSpec, TokenId};

pub const DEFAULT_MAX_TOKENS: usize = 50;
pub const DEFAULT_SC_TEMPERATURE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decoding {
    Greedy,
    Sampled { temperature: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerationOutcome {
    pub generated_tokens: Vec<TokenId>,
    /// Index into the label spec of the class whose surface appeared first.
    pub matched_class: Option<usize>,
    /// Generation steps taken, one backend pass each.
    pub tokens_consumed: usize,
    pub truncated: bool,
}

/// Earliest case-insensitive occurrence of any class surface in `text`;
/// ties at the same offset go to the earlier class.
pub fn match_surface(text: &str, labels: &LabelSpec) -> Option<usize> {
    let haystack = text.to_lowercase();
    let mut best: Option<(usize, usize)> = None;
    for (class, spec) in labels.classes().iter().enumerate() {
        for surface in &spec.surfaces {
            let needle = surface.to_lowercase();
            if needle.is_empty() {
                continue;
            }
            if let Some(at) = haystack.find(&needle) {
                if best.is_none_or(|(b, _)| at < b) {
                    best = Some((at, class));
                }
            }
        }
    }
    best.map(|(_, class)| class)
}

/// Generates token by token until the detokenized continuation contains a
/// class surface form, `max_tokens` steps pass, or the backend's length
/// limit is reached.
pub fn generate_classify<B: LanguageModel + ?Sized>(
    backend: &B,
    prompt_tokens: &[TokenId],
    labels: &LabelSpec,
    max_tokens: usize,
    decoding: Decoding,
) -> Result<GenerationOutcome> {
    if max_tokens == 0 {
        return Err(Error::InvalidConfig("max_tokens must be at least 1".into()));
    }
    if prompt_tokens.is_empty() {
        return Err(Error::EmptyInput);
    }
    let (temperature, mut rng) = match decoding {
        Decoding::Greedy => (0.0, ChaCha8Rng::seed_from_u64(0)),
        Decoding::Sampled { temperature, seed } => (temperature, ChaCha8Rng::seed_from_u64(seed)),
    };
    let mut seq = prompt_tokens.to_vec();
    let mut generated = Vec::new();
    while generated.len() < max_tokens && seq.len() < backend.max_len() {
        let out = backend.forward_full(&seq)?;
        let row = out.last_row().ok_or(Error::EmptyInput)?;
        let next = sample_from_row(row, temperature, &mut rng)?;
        seq.push(next);
        generated.push(next);
        if let Some(class) = match_surface(&backend.detokenize(&generated), labels) {
            return Ok(GenerationOutcome {
                tokens_consumed: generated.len(),
                generated_tokens: generated,
                matched_class: Some(class),
                truncated: false,
            });
        }
    }
    Ok(GenerationOutcome {
        tokens_consumed: generated.len(),
        generated_tokens: generated,
        matched_class: None,
        truncated: true,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelfConsistencyOutcome {
    /// `None` when every way abstained or the top vote count is shared.
    pub decision: Option<usize>,
    pub ways: Vec<GenerationOutcome>,
    pub total_runs: usize,
}

/// Runs one sampled generation per seed and takes a plurality over the
/// matched classes. Unmatched ways abstain. `temperature == 0` decodes greedily.
pub fn self_consistency<B: LanguageModel + ?Sized>(
    backend: &B,
    prompt_tokens: &[TokenId],
    labels: &LabelSpec,
    temperature: f64,
    seeds: &[u64],
    max_tokens: usize,
) -> Result<SelfConsistencyOutcome> {
    if seeds.is_empty() {
        return Err(Error::InvalidConfig(
            "self-consistency needs at least one way".into(),
        ));
    }
    if seeds.iter().collect::<HashSet<_>>().len() != seeds.len() {
        return Err(Error::InvalidConfig(
            "self-consistency seeds must be distinct".into(),
        ));
    }
    let ways = seeds
        .iter()
        .map(|&seed| {
            let decoding = if temperature == 0.0 {
                Decoding::Greedy
            } else {
                Decoding::Sampled { temperature, seed }
            };
            generate_classify(backend, prompt_tokens, labels, max_tokens, decoding)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut votes = vec![0usize; labels.len()];
    for class in ways.iter().filter_map(|w| w.matched_class) {
        votes[class] += 1;
    }
    let top = votes.iter().copied().max().unwrap_or(0);
    let leaders: Vec<usize> = (0..votes.len()).filter(|&c| votes[c] == top).collect();
    let decision = (top > 0 && leaders.len() == 1).then(|| leaders[0]);
    let total_runs = ways.iter().map(|w| w.tokens_consumed).sum();
    Ok(SelfConsistencyOutcome {
        decision,
        ways,
        total_runs,
    })
}

/// `ways` distinct seeds derived from a base seed and a sample index.
pub fn way_seeds(base: u64, sample_index: u64, ways: usize) -> Vec<u64> {
    let start = base.wrapping_add(sample_index.wrapping_mul(ways as u64));
    (0..ways as u64).map(|w| start.wrapping_add(w)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::TabularLm;
    use crate::types::{ClassSpec, Vocab};

    fn vocab() -> Vocab {
        let words = ["<unk>", "review", "a", "very", "good", "bad", "so", "hmm"];
        Vocab::new(words.iter().map(|s| s.to_string()).collect(), 0).unwrap()
    }

    fn labels() -> LabelSpec {
        LabelSpec::new(vec![
            ClassSpec {
                name: "positive".into(),
                tokens: vec![4],
                surfaces: vec!["good".into()],
            },
            ClassSpec {
                name: "negative".into(),
                tokens: vec![5],
                surfaces: vec!["bad".into()],
            },
        ])
        .unwrap()
    }

    fn one_hot(i: usize) -> Vec<f64> {
        let mut row = vec![0.0; 8];
        row[i] = 1.0;
        row
    }

    /// Deterministic chain given by `next[t]`.
    fn chain(next: [usize; 8]) -> TabularLm {
        TabularLm::from_fn(vocab(), 1, |ctx| {
            one_hot(next[ctx[0].map_or(0, |t| t as usize)])
        })
        .unwrap()
    }

    #[test]
    fn immediate_match() {
        let lm = chain([0, 4, 0, 0, 0, 0, 0, 0]);
        let out = generate_classify(&lm, &[1], &labels(), 50, Decoding::Greedy).unwrap();
        assert_eq!(out.matched_class, Some(0));
        assert_eq!(out.tokens_consumed, 1);
        assert!(!out.truncated);
    }

    #[test]
    fn never_matching_truncates_at_cap() {
        // review -> so -> hmm -> so -> ...
        let lm = chain([0, 6, 0, 0, 0, 0, 7, 6]);
        let out = generate_classify(&lm, &[1], &labels(), 50, Decoding::Greedy).unwrap();
        assert_eq!(out.matched_class, None);
        assert_eq!(out.tokens_consumed, 50);
        assert!(out.truncated);
    }

    #[test]
    fn a_very_good_matches_at_step_three() {
        // review -> a -> very -> good
        let lm = chain([0, 2, 3, 4, 0, 0, 0, 0]);
        let out = generate_classify(&lm, &[1], &labels(), 50, Decoding::Greedy).unwrap();
        assert_eq!(out.generated_tokens, vec![2, 3, 4]);
        assert_eq!(lm.detokenize(&out.generated_tokens), "a very good");
        assert_eq!(out.matched_class, Some(0));
        assert_eq!(out.tokens_consumed, 3);
    }

    #[test]
    fn stops_at_backend_length_limit() {
        let lm = chain([0, 6, 0, 0, 0, 0, 7, 6]).with_max_len(10);
        let out = generate_classify(&lm, &[1, 1, 1], &labels(), 50, Decoding::Greedy).unwrap();
        assert_eq!(out.tokens_consumed, 7);
        assert!(out.truncated);
    }

    #[test]
    fn surface_matching_is_case_insensitive_and_earliest() {
        assert_eq!(match_surface("so GOOD", &labels()), Some(0));
        assert_eq!(match_surface("bad then good", &labels()), Some(1));
        assert_eq!(match_surface("neither", &labels()), None);
    }

    #[test]
    fn self_consistency_single_greedy_way_matches_generation() {
        let lm = chain([0, 2, 3, 4, 0, 0, 0, 0]);
        let sc = self_consistency(&lm, &[1], &labels(), 0.0, &[9], 50).unwrap();
        let gen = generate_classify(&lm, &[1], &labels(), 50, Decoding::Greedy).unwrap();
        assert_eq!(sc.ways, vec![gen.clone()]);
        assert_eq!(sc.decision, gen.matched_class);
        assert_eq!(sc.total_runs, gen.tokens_consumed);
    }

    #[test]
    fn self_consistency_plurality_and_abstention() {
        // After "review": good 0.5, bad 0.3, hmm 0.2 (hmm loops to hmm forever)
        let lm = TabularLm::from_fn(vocab(), 1, |ctx| match ctx[0] {
            Some(1) => {
                let mut row = vec![0.0; 8];
                row[4] = 0.5;
                row[5] = 0.3;
                row[7] = 0.2;
                row
            }
            _ => one_hot(7),
        })
        .unwrap();
        let seeds: Vec<u64> = (0..3).collect();
        let sc = self_consistency(&lm, &[1], &labels(), 1.0, &seeds, 10).unwrap();
        assert_eq!(sc.ways.len(), 3);
        assert_eq!(
            sc.total_runs,
            sc.ways.iter().map(|w| w.tokens_consumed).sum::<usize>()
        );
        let matched: Vec<_> = sc.ways.iter().filter_map(|w| w.matched_class).collect();
        let mut votes = [0; 2];
        for m in &matched {
            votes[*m] += 1;
        }
        match sc.decision {
            Some(c) => assert!(votes[c] > votes[1 - c]),
            None => assert_eq!(votes[0], votes[1]),
        }
    }

    #[test]
    fn self_consistency_rejects_duplicate_seeds() {
        let lm = chain([0, 4, 0, 0, 0, 0, 0, 0]);
        assert!(self_consistency(&lm, &[1], &labels(), 1.0, &[1, 1], 50).is_err());
        assert!(self_consistency(&lm, &[1], &labels(), 1.0, &[], 50).is_err());
    }

    #[test]
    fn all_abstain_is_undecided() {
        let lm = chain([0, 6, 0, 0, 0, 0, 7, 6]);
        let sc = self_consistency(&lm, &[1], &labels(), 1.0, &[1, 2, 3], 5).unwrap();
        assert_eq!(sc.decision, None);
        assert_eq!(sc.total_runs, 15);
    }

    #[test]
    fn seeds_are_distinct_across_samples() {
        let a = way_seeds(42, 0, 3);
        let b = way_seeds(42, 1, 3);
        assert_eq!(a, vec![42, 43, 44]);
        assert!(a.iter().all(|s| !b.contains(s)));
    }
}
