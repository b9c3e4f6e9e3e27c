#![allow(dead_code)]

use p3_core::backend::{TabularLm, ToyTransformer, ToyTransformerConfig};
use p3_core::types::{ClassSpec, LabelSpec, PromptTemplate, Sample, TokenId, Vocab};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn one_hot(v: usize, i: usize) -> Vec<f64> {
    let mut row = vec![0.0; v];
    row[i] = 1.0;
    row
}

pub fn random_distribution(rng: &mut impl Rng, v: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..v).map(|_| rng.gen::<f64>().powi(3) + 1e-3).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|p| p / sum).collect()
}

pub fn random_tokens(rng: &mut impl Rng, v: usize, min: usize, max: usize) -> Vec<TokenId> {
    let len = rng.gen_range(min..=max);
    (0..len).map(|_| rng.gen_range(0..v as TokenId)).collect()
}

/// Acceptance-size toy transformer: V=16, l=2, h=32, max_len=64.
pub fn toy(seed: u64) -> ToyTransformer {
    ToyTransformer::new(ToyTransformerConfig {
        vocab: 16,
        layers: 2,
        hidden: 32,
        heads: 4,
        max_len: 64,
        seed,
    })
    .unwrap()
}

pub fn random_tabular(seed: u64, v: usize, order: usize) -> TabularLm {
    let mut r = rng(seed);
    TabularLm::from_fn(Vocab::synthetic(v).unwrap(), order, |_| {
        random_distribution(&mut r, v)
    })
    .unwrap()
}

pub fn toy_labels() -> LabelSpec {
    LabelSpec::new(vec![
        ClassSpec {
            name: "alpha".into(),
            tokens: vec![3, 4],
            surfaces: vec!["t3".into()],
        },
        ClassSpec {
            name: "beta".into(),
            tokens: vec![7],
            surfaces: vec!["t7".into()],
        },
        ClassSpec {
            name: "gamma".into(),
            tokens: vec![11, 12],
            surfaces: vec!["t11".into()],
        },
    ])
    .unwrap()
}

/// Every token is its own class.
pub fn full_vocab_labels(v: usize) -> LabelSpec {
    let pairs: Vec<(String, TokenId)> = (0..v).map(|t| (format!("tok{t}"), t as TokenId)).collect();
    LabelSpec::single_tokens(&pairs).unwrap()
}

/// Independent oracle for order-1 chains: propagate the next-token
/// distribution through the transition table `skip` times (forward
/// algorithm), then sum class tokens.
pub fn markov_forward_oracle(
    lm: &TabularLm,
    x: &[TokenId],
    skip: usize,
    labels: &LabelSpec,
) -> Vec<f64> {
    assert_eq!(lm.order(), 1);
    let v = lm.vocab().size();
    let last = *x.last().unwrap();
    let mut alpha = lm.distribution(&[Some(last)]).unwrap().to_vec();
    for _ in 0..skip {
        let mut next = vec![0.0; v];
        for (t, &a) in alpha.iter().enumerate() {
            let row = lm.distribution(&[Some(t as TokenId)]).unwrap();
            for (n, p) in next.iter_mut().zip(row) {
                *n += a * p;
            }
        }
        alpha = next;
    }
    labels.class_scores(&alpha)
}

use p3_core::backend::LanguageModel;

// ---- brittleness fixture -------------------------------------------------

pub const BRITTLE_SURFACES: [&str; 12] = [
    "<unk>", "good", "great", "bad", "awful", "pos", "neg", "s0", "s1", "s2", "s3", "s4",
];
/// Pull of each template's final token towards "pos" at the next position.
pub const TEMPLATE_BIAS: [f64; 5] = [0.0, 0.35, -0.35, 0.0, 0.15];

fn sentiment(tok: TokenId) -> Option<f64> {
    match tok {
        1 | 2 => Some(1.0),
        3 | 4 => Some(-1.0),
        _ => None,
    }
}

/// Order-4 table. After a template suffix token the next-token class mass is
/// dominated by that template's bias; once placeholders follow, the mass
/// depends only on the sentiment word still in the context.
pub fn brittle_lm() -> TabularLm {
    let vocab = Vocab::new(BRITTLE_SURFACES.iter().map(|s| s.to_string()).collect(), 0).unwrap();
    let v = vocab.size();
    TabularLm::from_fn(vocab, 4, |ctx| {
        let word = ctx.iter().rev().flatten().find_map(|&t| sentiment(t));
        let last = ctx.last().copied().flatten();
        let pos_share = match (last, word) {
            (Some(t @ 7..=11), Some(s)) => Some(0.5 + 0.1 * s + TEMPLATE_BIAS[(t - 7) as usize]),
            (Some(0), Some(s)) => Some(0.5 + 0.25 * s),
            _ => None,
        };
        match pos_share {
            Some(share) => {
                let mut row = vec![0.02; v];
                row[5] = 0.8 * share;
                row[6] = 0.8 * (1.0 - share);
                row
            }
            None => vec![1.0 / v as f64; v],
        }
    })
    .unwrap()
}

pub fn brittle_labels() -> LabelSpec {
    LabelSpec::new(vec![
        ClassSpec {
            name: "positive".into(),
            tokens: vec![5],
            surfaces: vec!["pos".into()],
        },
        ClassSpec {
            name: "negative".into(),
            tokens: vec![6],
            surfaces: vec!["neg".into()],
        },
    ])
    .unwrap()
}

pub fn brittle_templates() -> Vec<PromptTemplate> {
    (0..5)
        .map(|j| PromptTemplate::parse(&format!("{{text}} s{j}")).unwrap())
        .collect()
}

pub fn brittle_samples() -> Vec<Sample> {
    [
        "good", "great", "bad", "awful", "great", "good", "awful", "bad",
    ]
    .iter()
    .map(|w| {
        let label = if matches!(*w, "good" | "great") {
            "positive"
        } else {
            "negative"
        };
        Sample::new(*w).with_label(label)
    })
    .collect()
}

// ---- scripted generation chains ----------------------------------------------

/// Vocabulary: `<unk>`, `review`, `good`, `bad`, then fillers `f1..f60`.
pub fn chain_vocab() -> Vocab {
    let mut surfaces = vec![
        "<unk>".to_string(),
        "review".into(),
        "good".into(),
        "bad".into(),
    ];
    surfaces.extend((1..=60).map(|i| format!("f{i}")));
    Vocab::new(surfaces, 0).unwrap()
}

pub fn chain_labels() -> LabelSpec {
    LabelSpec::new(vec![
        ClassSpec {
            name: "positive".into(),
            tokens: vec![2],
            surfaces: vec!["good".into()],
        },
        ClassSpec {
            name: "negative".into(),
            tokens: vec![3],
            surfaces: vec!["bad".into()],
        },
    ])
    .unwrap()
}

fn filler(i: usize) -> usize {
    3 + i
}

/// Greedy continuation of `review` is `f1 .. f(k-1) good`, so a class
/// surface first appears at step `k`. `None` loops over fillers forever.
pub fn scripted_chain(k: Option<usize>) -> TabularLm {
    let vocab = chain_vocab();
    let v = vocab.size();
    TabularLm::from_fn(vocab, 1, |ctx| {
        let t = ctx[0].map_or(0, |t| t as usize);
        let next = match k {
            Some(k) => {
                if t == 1 {
                    if k == 1 {
                        2
                    } else {
                        filler(1)
                    }
                } else if (filler(1)..filler(k)).contains(&t) {
                    let i = t - 3;
                    if i + 1 < k {
                        filler(i + 1)
                    } else {
                        2
                    }
                } else {
                    0
                }
            }
            None => match t {
                1 => filler(1),
                t if t == filler(1) => filler(2),
                _ => filler(1),
            },
        };
        one_hot(v, next)
    })
    .unwrap()
}

/// After `review` or a filler: `good` with probability `p`, otherwise a
/// uniformly random filler. Stopping time is geometric.
pub fn geometric_chain(p: f64) -> TabularLm {
    let vocab = chain_vocab();
    let v = vocab.size();
    TabularLm::from_fn(vocab, 1, |_| {
        let mut row = vec![0.0; v];
        row[2] = p;
        for i in 1..=60 {
            row[filler(i)] = (1.0 - p) / 60.0;
        }
        row
    })
    .unwrap()
}
