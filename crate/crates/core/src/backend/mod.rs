//! Language-model backends. A backend owns its vocabulary and tokenizer and
//! returns next-token probability distributions for every prefix of its input.

mod counting;
mod remote;
mod tabular;
mod tokenizer;
mod toy;

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::types::{TokenId, Vocab};

pub use counting::{CountingBackend, PassRecord};
pub use remote::{RemoteBackend, DEFAULT_REMOTE_MAX_LEN};
pub use tabular::{Context, TabularLm};
pub use tokenizer::SurfaceTokenizer;
pub use toy::{ToyTransformer, ToyTransformerConfig};

/// Tolerance for row normalization of backend output.
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

/// `L × V` matrix whose row `i` is the distribution of the token following
/// the prefix of length `i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefixDistributionMatrix {
    data: Vec<f64>,
    vocab: usize,
}

impl PrefixDistributionMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>, vocab: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * vocab);
        for (i, row) in rows.into_iter().enumerate() {
            check_distribution(&row, vocab, ROW_SUM_TOLERANCE)
                .map_err(|e| Error::RemoteProtocol(format!("row {i}: {e}")))?;
            data.extend(row);
        }
        Ok(Self { data, vocab })
    }

    pub(crate) fn from_flat(data: Vec<f64>, vocab: usize) -> Self {
        debug_assert_eq!(data.len() % vocab, 0);
        Self { data, vocab }
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.vocab
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.vocab..(i + 1) * self.vocab]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.vocab)
    }

    pub fn last_row(&self) -> Option<&[f64]> {
        self.len().checked_sub(1).map(|i| self.row(i))
    }
}

pub(crate) fn check_distribution(
    row: &[f64],
    vocab: usize,
    tol: f64,
) -> std::result::Result<(), String> {
    if row.len() != vocab {
        return Err(format!("expected {vocab} entries, got {}", row.len()));
    }
    if let Some(p) = row.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(format!("probability {p} outside [0, 1]"));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > tol {
        return Err(format!("row sums to {sum}"));
    }
    Ok(())
}

/// Architecture sizes used for closed-form FLOPs accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub layers: u64,
    pub hidden: u64,
    pub vocab: u64,
}

pub trait LanguageModel: Send + Sync {
    fn vocab(&self) -> &Vocab;

    /// Longest token sequence accepted by `forward_full`.
    fn max_len(&self) -> usize;

    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>>;

    fn detokenize(&self, tokens: &[TokenId]) -> String {
        let vocab = self.vocab();
        tokens
            .iter()
            .filter_map(|&t| vocab.surface(t))
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn forward_full(&self, tokens: &[TokenId]) -> Result<PrefixDistributionMatrix>;

    /// `forward_full(tokens ++ <ph> × placeholders)` in one pass.
    fn forward_with_placeholders(
        &self,
        tokens: &[TokenId],
        placeholders: usize,
    ) -> Result<PrefixDistributionMatrix> {
        let ph = self.vocab().placeholder_id();
        let mut seq = Vec::with_capacity(tokens.len() + placeholders);
        seq.extend_from_slice(tokens);
        seq.extend(std::iter::repeat_n(ph, placeholders));
        self.forward_full(&seq)
    }

    /// Next-token distribution for the empty prefix.
    fn forward_empty(&self) -> Result<Vec<f64>>;

    /// Whether concurrent `forward_*` calls are allowed.
    fn concurrent(&self) -> bool {
        true
    }

    fn dims(&self) -> Option<ModelDims> {
        None
    }

    fn fingerprint(&self) -> String;
}

impl<T: LanguageModel + ?Sized> LanguageModel for &T {
    fn vocab(&self) -> &Vocab {
        (**self).vocab()
    }
    fn max_len(&self) -> usize {
        (**self).max_len()
    }
    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>> {
        (**self).tokenize(text)
    }
    fn detokenize(&self, tokens: &[TokenId]) -> String {
        (**self).detokenize(tokens)
    }
    fn forward_full(&self, tokens: &[TokenId]) -> Result<PrefixDistributionMatrix> {
        (**self).forward_full(tokens)
    }
    fn forward_with_placeholders(
        &self,
        tokens: &[TokenId],
        m: usize,
    ) -> Result<PrefixDistributionMatrix> {
        (**self).forward_with_placeholders(tokens, m)
    }
    fn forward_empty(&self) -> Result<Vec<f64>> {
        (**self).forward_empty()
    }
    fn concurrent(&self) -> bool {
        (**self).concurrent()
    }
    fn dims(&self) -> Option<ModelDims> {
        (**self).dims()
    }
    fn fingerprint(&self) -> String {
        (**self).fingerprint()
    }
}

impl<T: LanguageModel + ?Sized> LanguageModel for Box<T> {
    fn vocab(&self) -> &Vocab {
        (**self).vocab()
    }
    fn max_len(&self) -> usize {
        (**self).max_len()
    }
    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>> {
        (**self).tokenize(text)
    }
    fn detokenize(&self, tokens: &[TokenId]) -> String {
        (**self).detokenize(tokens)
    }
    fn forward_full(&self, tokens: &[TokenId]) -> Result<PrefixDistributionMatrix> {
        (**self).forward_full(tokens)
    }
    fn forward_with_placeholders(
        &self,
        tokens: &[TokenId],
        m: usize,
    ) -> Result<PrefixDistributionMatrix> {
        (**self).forward_with_placeholders(tokens, m)
    }
    fn forward_empty(&self) -> Result<Vec<f64>> {
        (**self).forward_empty()
    }
    fn concurrent(&self) -> bool {
        (**self).concurrent()
    }
    fn dims(&self) -> Option<ModelDims> {
        (**self).dims()
    }
    fn fingerprint(&self) -> String {
        (**self).fingerprint()
    }
}

/// Shared input checks for local backends.
pub(crate) fn validate_input(vocab: &Vocab, max_len: usize, tokens: &[TokenId]) -> Result<()> {
    if tokens.is_empty() {
        return Err(Error::EmptyInput);
    }
    if tokens.len() > max_len {
        return Err(Error::SequenceTooLong {
            len: tokens.len(),
            max_len,
        });
    }
    tokens.iter().try_for_each(|&t| vocab.check_token(t))
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Draws a token from `row`. `temperature == 0` is greedy argmax; otherwise
/// probabilities are sharpened or flattened as `p^(1/T)`.
pub fn sample_from_row<R: rand::Rng>(
    row: &[f64],
    temperature: f64,
    rng: &mut R,
) -> Result<TokenId> {
    if temperature.is_nan() || temperature < 0.0 || temperature.is_infinite() {
        return Err(Error::InvalidConfig(format!(
            "temperature {temperature} must be >= 0"
        )));
    }
    if temperature == 0.0 {
        return Ok(argmax(row) as TokenId);
    }
    let weights: Vec<f64> = if temperature == 1.0 {
        row.to_vec()
    } else {
        // Scale in log space relative to the max to avoid underflow for small T.
        let max = row.iter().cloned().fold(0.0_f64, f64::max);
        row.iter()
            .map(|&p| {
                if p > 0.0 {
                    ((p.ln() - max.ln()) / temperature).exp()
                } else {
                    0.0
                }
            })
            .collect()
    };
    let dist = WeightedIndex::new(&weights)
        .map_err(|e| Error::InvalidConfig(format!("cannot sample from row: {e}")))?;
    Ok(dist.sample(rng) as TokenId)
}

/// Samples the token following `tokens`, deterministically for a given seed.
pub fn sample_next<B: LanguageModel + ?Sized>(
    backend: &B,
    tokens: &[TokenId],
    temperature: f64,
    rng_seed: u64,
) -> Result<TokenId> {
    let matrix = backend.forward_full(tokens)?;
    let row = matrix.last_row().ok_or(Error::EmptyInput)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    sample_from_row(row, temperature, &mut rng)
}
