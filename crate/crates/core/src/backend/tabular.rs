use std::collections::HashMap;
use std::path::Path;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use super::{
    check_distribution, validate_input, LanguageModel, PrefixDistributionMatrix, SurfaceTokenizer,
};
use crate::error::{Error, Result};
use crate::types::{TokenId, Vocab};

/// The last `order` tokens of a prefix, left-padded with `None` (the start
/// symbol) when the prefix is shorter than the order.
pub type Context = Vec<Option<TokenId>>;

const TABLE_TOLERANCE: f64 = 1e-9;
const MAX_CONTEXTS: u64 = 5_000_000;
const DEFAULT_MAX_LEN: usize = 1024;

/// Order-`k` Markov language model backed by an explicit table of
/// next-token distributions.
#[derive(Debug, Clone)]
pub struct TabularLm {
    vocab: Vocab,
    tokenizer: SurfaceTokenizer,
    order: usize,
    max_len: usize,
    table: HashMap<Context, Vec<f64>>,
    fingerprint: String,
}

#[derive(Deserialize)]
struct TableFile {
    order: usize,
    vocab: Vocab,
    #[serde(default)]
    max_len: Option<usize>,
    #[serde(default)]
    default: Option<Vec<f64>>,
    #[serde(default)]
    table: Vec<TableEntry>,
}

#[derive(Deserialize)]
struct TableEntry {
    context: Context,
    probs: Vec<f64>,
}

impl TabularLm {
    /// Builds the table by evaluating `dist` on every reachable context.
    pub fn from_fn<F>(vocab: Vocab, order: usize, mut dist: F) -> Result<Self>
    where
        F: FnMut(&[Option<TokenId>]) -> Vec<f64>,
    {
        let contexts = reachable_contexts(vocab.size(), order)?;
        let table = contexts
            .into_iter()
            .map(|ctx| {
                let row = dist(&ctx);
                (ctx, row)
            })
            .collect();
        Self::build(vocab, order, table, DEFAULT_MAX_LEN)
    }

    /// Builds from explicit entries; contexts without an entry take
    /// `default`, or construction fails when no default is given.
    pub fn from_entries(
        vocab: Vocab,
        order: usize,
        entries: HashMap<Context, Vec<f64>>,
        default: Option<Vec<f64>>,
    ) -> Result<Self> {
        let mut table = entries;
        for ctx in reachable_contexts(vocab.size(), order)? {
            if let std::collections::hash_map::Entry::Vacant(slot) = table.entry(ctx) {
                match &default {
                    Some(d) => {
                        slot.insert(d.clone());
                    }
                    None => {
                        return Err(Error::InvalidTable(format!(
                            "no entry for reachable context {:?}",
                            slot.key()
                        )));
                    }
                }
            }
        }
        Self::build(vocab, order, table, DEFAULT_MAX_LEN)
    }

    pub fn from_json_str(raw: &str) -> Result<Self> {
        let file: TableFile = serde_json::from_str(raw)?;
        let vocab = Vocab::new(file.vocab.surfaces().to_vec(), file.vocab.placeholder_id())?;
        let mut entries = HashMap::new();
        for entry in file.table {
            if entries.insert(entry.context.clone(), entry.probs).is_some() {
                return Err(Error::InvalidTable(format!(
                    "duplicate context {:?}",
                    entry.context
                )));
            }
        }
        let lm = Self::from_entries(vocab, file.order, entries, file.default)?;
        Ok(match file.max_len {
            Some(max_len) => lm.with_max_len(max_len),
            None => lm,
        })
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&raw)
    }

    fn build(
        vocab: Vocab,
        order: usize,
        table: HashMap<Context, Vec<f64>>,
        max_len: usize,
    ) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidTable("order must be at least 1".into()));
        }
        let v = vocab.size();
        for (ctx, row) in &table {
            if ctx.len() != order {
                return Err(Error::InvalidTable(format!(
                    "context {ctx:?} does not have length {order}"
                )));
            }
            if let Some(t) = ctx.iter().flatten().find(|t| **t as usize >= v) {
                return Err(Error::InvalidTable(format!(
                    "context token {t} out of range"
                )));
            }
            check_distribution(row, v, TABLE_TOLERANCE)
                .map_err(|e| Error::InvalidTable(format!("context {ctx:?}: {e}")))?;
        }
        let fingerprint = fingerprint(&vocab, order, &table);
        Ok(Self {
            tokenizer: SurfaceTokenizer::new(&vocab),
            vocab,
            order,
            max_len,
            table,
            fingerprint,
        })
    }

    pub fn with_max_len(mut self, max_len: usize) -> Self {
        self.max_len = max_len;
        self
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Context of the prefix `tokens` (possibly empty).
    pub fn context_of(&self, tokens: &[TokenId]) -> Context {
        let k = self.order;
        let pad = k.saturating_sub(tokens.len());
        let tail = &tokens[tokens.len().saturating_sub(k)..];
        std::iter::repeat_n(None, pad)
            .chain(tail.iter().copied().map(Some))
            .collect()
    }

    pub fn distribution(&self, ctx: &[Option<TokenId>]) -> Option<&[f64]> {
        self.table.get(ctx).map(Vec::as_slice)
    }

    fn lookup(&self, tokens: &[TokenId]) -> Result<&[f64]> {
        let ctx = self.context_of(tokens);
        self.distribution(&ctx)
            .ok_or_else(|| Error::InvalidTable(format!("no entry for context {ctx:?}")))
    }
}

/// Every context a prefix of length >= 0 can produce: `j` start symbols
/// followed by `order - j` tokens, for `j` in `0..=order`.
fn reachable_contexts(vocab: usize, order: usize) -> Result<Vec<Context>> {
    let total: u64 = (0..=order as u32)
        .map(|d| (vocab as u64).saturating_pow(d))
        .fold(0u64, u64::saturating_add);
    if total > MAX_CONTEXTS {
        return Err(Error::InvalidTable(format!(
            "{total} reachable contexts exceed the limit of {MAX_CONTEXTS}"
        )));
    }
    let mut out = Vec::with_capacity(total as usize);
    for real in 0..=order {
        let pad = order - real;
        let count = (vocab as u64).pow(real as u32);
        for code in 0..count {
            let mut ctx: Context = vec![None; order];
            let mut rest = code;
            for slot in (pad..order).rev() {
                ctx[slot] = Some((rest % vocab as u64) as TokenId);
                rest /= vocab as u64;
            }
            out.push(ctx);
        }
    }
    Ok(out)
}

fn fingerprint(vocab: &Vocab, order: usize, table: &HashMap<Context, Vec<f64>>) -> String {
    let mut keys: Vec<&Context> = table.keys().collect();
    keys.sort();
    let mut hasher = Sha256::new();
    for s in vocab.surfaces() {
        hasher.update(s.as_bytes());
        hasher.update([0]);
    }
    for ctx in keys {
        for t in ctx {
            hasher.update(t.map_or(u32::MAX, |t| t).to_le_bytes());
        }
        for p in &table[ctx] {
            hasher.update(p.to_le_bytes());
        }
    }
    let digest = hasher.finalize();
    let short: String = digest[..6].iter().map(|b| format!("{b:02x}")).collect();
    format!("tabular(order={order},v={},sha256={short})", vocab.size())
}

impl LanguageModel for TabularLm {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn max_len(&self) -> usize {
        self.max_len
    }

    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>> {
        Ok(self.tokenizer.tokenize(text))
    }

    fn forward_full(&self, tokens: &[TokenId]) -> Result<PrefixDistributionMatrix> {
        validate_input(&self.vocab, self.max_len, tokens)?;
        let mut data = Vec::with_capacity(tokens.len() * self.vocab.size());
        for i in 0..tokens.len() {
            data.extend_from_slice(self.lookup(&tokens[..=i])?);
        }
        Ok(PrefixDistributionMatrix::from_flat(data, self.vocab.size()))
    }

    fn forward_empty(&self) -> Result<Vec<f64>> {
        Ok(self.lookup(&[])?.to_vec())
    }

    fn fingerprint(&self) -> String {
        self.fingerprint.clone()
    }
}
