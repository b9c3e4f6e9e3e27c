//! Small decoder-only transformer with seeded random weights. Untrained; it
//! exists to produce rich, reproducible, strictly causal distributions.
//!
//! Weights are drawn from `ChaCha8Rng::seed_from_u64(seed)` in this order,
//! each matrix row-major:
//!
//! 1. token embedding `(V + 1) × h` (row `V` is the internal BOS token), `U(-1, 1)`
//! 2. position embedding `(max_len + 1) × h`, `U(-1, 1)`
//! 3. per layer: `W_q`, `W_k`, `W_v`, `W_o` (`h × h`), `W_1` (`h × 4h`),
//!    `W_2` (`4h × h`), each `U(-1/√fan_in, 1/√fan_in)`
//! 4. LM head `h × V`, `U(-3/√h, 3/√h)`
//!
//! Layer-norm gains are one and all biases zero. Blocks are pre-norm with
//! tanh-approximated GELU in the MLP.

use ndarray::{s, Array2, Axis};
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{validate_input, LanguageModel, ModelDims, PrefixDistributionMatrix, SurfaceTokenizer};
use crate::error::{Error, Result};
use crate::types::{TokenId, Vocab};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyTransformerConfig {
    pub vocab: usize,
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for ToyTransformerConfig {
    fn default() -> Self {
        Self {
            vocab: 16,
            layers: 2,
            hidden: 32,
            heads: 4,
            max_len: 64,
            seed: 0,
        }
    }
}

impl ToyTransformerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.vocab == 0 || self.layers == 0 || self.hidden == 0 || self.max_len == 0 {
            return bad(format!("toy transformer sizes must be positive: {self:?}"));
        }
        if self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return bad(format!(
                "heads {} must divide hidden {}",
                self.heads, self.hidden
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Block {
    wq: Array2<f64>,
    wk: Array2<f64>,
    wv: Array2<f64>,
    wo: Array2<f64>,
    w1: Array2<f64>,
    w2: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct ToyTransformer {
    config: ToyTransformerConfig,
    vocab: Vocab,
    tokenizer: SurfaceTokenizer,
    tok_emb: Array2<f64>,
    pos_emb: Array2<f64>,
    blocks: Vec<Block>,
    head: Array2<f64>,
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Array2<f64> {
    let dist = Uniform::new_inclusive(-bound, bound);
    Array2::from_shape_fn((rows, cols), |_| dist.sample(rng))
}

impl ToyTransformer {
    /// Uses a synthetic vocabulary (`<unk>` placeholder at id 0, then `t1`, `t2`, ...).
    pub fn new(config: ToyTransformerConfig) -> Result<Self> {
        let vocab = Vocab::synthetic(config.vocab)?;
        Self::with_vocab(config, vocab)
    }

    pub fn with_vocab(config: ToyTransformerConfig, vocab: Vocab) -> Result<Self> {
        config.validate()?;
        if vocab.size() != config.vocab {
            return Err(Error::InvalidConfig(format!(
                "vocabulary has {} tokens but config.vocab = {}",
                vocab.size(),
                config.vocab
            )));
        }
        let h = config.hidden;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let tok_emb = uniform(&mut rng, config.vocab + 1, h, 1.0);
        let pos_emb = uniform(&mut rng, config.max_len + 1, h, 1.0);
        let inv = |fan_in: usize| 1.0 / (fan_in as f64).sqrt();
        let blocks = (0..config.layers)
            .map(|_| Block {
                wq: uniform(&mut rng, h, h, inv(h)),
                wk: uniform(&mut rng, h, h, inv(h)),
                wv: uniform(&mut rng, h, h, inv(h)),
                wo: uniform(&mut rng, h, h, inv(h)),
                w1: uniform(&mut rng, h, 4 * h, inv(h)),
                w2: uniform(&mut rng, 4 * h, h, inv(4 * h)),
            })
            .collect();
        let head = uniform(&mut rng, h, config.vocab, 3.0 * inv(h));
        Ok(Self {
            config,
            tokenizer: SurfaceTokenizer::new(&vocab),
            vocab,
            tok_emb,
            pos_emb,
            blocks,
            head,
        })
    }

    pub fn config(&self) -> &ToyTransformerConfig {
        &self.config
    }

    fn bos(&self) -> usize {
        self.config.vocab
    }

    /// Distributions after every position of `[BOS] ++ tokens`; row 0 is the
    /// empty-prefix prediction.
    fn run(&self, tokens: &[TokenId]) -> Array2<f64> {
        let len = tokens.len() + 1;
        let h = self.config.hidden;
        let mut x = Array2::<f64>::zeros((len, h));
        for (pos, id) in std::iter::once(self.bos())
            .chain(tokens.iter().map(|&t| t as usize))
            .enumerate()
        {
            let mut row = x.row_mut(pos);
            row += &self.tok_emb.row(id);
            row += &self.pos_emb.row(pos);
        }
        for block in &self.blocks {
            let attn = self.attention(block, &layer_norm(&x));
            x += &attn;
            let hidden = layer_norm(&x).dot(&block.w1).mapv(gelu);
            x += &hidden.dot(&block.w2);
        }
        let logits = layer_norm(&x).dot(&self.head);
        softmax_rows(logits)
    }

    fn attention(&self, block: &Block, a: &Array2<f64>) -> Array2<f64> {
        let len = a.nrows();
        let heads = self.config.heads;
        let dh = self.config.hidden / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let q = a.dot(&block.wq);
        let k = a.dot(&block.wk);
        let v = a.dot(&block.wv);
        let mut out = Array2::<f64>::zeros((len, self.config.hidden));
        for hd in 0..heads {
            let cols = s![.., hd * dh..(hd + 1) * dh];
            let (qh, kh, vh) = (q.slice(cols), k.slice(cols), v.slice(cols));
            let mut scores = qh.dot(&kh.t()) * scale;
            // causal mask: position i sees only j <= i
            for i in 0..len {
                for j in (i + 1)..len {
                    scores[[i, j]] = f64::NEG_INFINITY;
                }
            }
            let weights = softmax_rows(scores);
            out.slice_mut(cols).assign(&weights.dot(&vh));
        }
        out.dot(&block.wo)
    }
}

fn layer_norm(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let n = row.len() as f64;
        let mean = row.sum() / n;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let denom = (var + LN_EPS).sqrt();
        row.mapv_inplace(|v| (v - mean) / denom);
    }
    out
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x.powi(3))).tanh())
}

fn softmax_rows(mut m: Array2<f64>) -> Array2<f64> {
    for mut row in m.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    m
}

impl LanguageModel for ToyTransformer {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn max_len(&self) -> usize {
        self.config.max_len
    }

    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>> {
        Ok(self.tokenizer.tokenize(text))
    }

    fn forward_full(&self, tokens: &[TokenId]) -> Result<PrefixDistributionMatrix> {
        validate_input(&self.vocab, self.config.max_len, tokens)?;
        let probs = self.run(tokens);
        let rows = probs.slice(s![1.., ..]);
        let data: Vec<f64> = rows.iter().copied().collect();
        Ok(PrefixDistributionMatrix::from_flat(data, self.config.vocab))
    }

    fn forward_empty(&self) -> Result<Vec<f64>> {
        let probs = self.run(&[]);
        Ok(probs.row(0).to_vec())
    }

    fn dims(&self) -> Option<ModelDims> {
        Some(ModelDims {
            layers: self.config.layers as u64,
            hidden: self.config.hidden as u64,
            vocab: self.config.vocab as u64,
        })
    }

    fn fingerprint(&self) -> String {
        let c = &self.config;
        format!(
            "toy(v={},l={},h={},heads={},max_len={},seed={})",
            c.vocab, c.layers, c.hidden, c.heads, c.max_len, c.seed
        )
    }
}
