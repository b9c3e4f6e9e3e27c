use std::sync::Mutex;

use super::{LanguageModel, ModelDims, PrefixDistributionMatrix};
use crate::error::Result;
use crate::types::{TokenId, Vocab};

/// One recorded forward pass: the full token sequence the model saw,
/// including appended placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PassRecord {
    pub tokens: Vec<TokenId>,
}

/// Wraps a backend and records every forward pass it serves.
#[derive(Debug)]
pub struct CountingBackend<B> {
    inner: B,
    passes: Mutex<Vec<PassRecord>>,
}

impl<B: LanguageModel> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            passes: Mutex::new(Vec::new()),
        }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    pub fn pass_count(&self) -> usize {
        self.passes.lock().unwrap().len()
    }

    pub fn passes(&self) -> Vec<PassRecord> {
        self.passes.lock().unwrap().clone()
    }

    /// Returns and clears the recorded passes.
    pub fn take_passes(&self) -> Vec<PassRecord> {
        std::mem::take(&mut *self.passes.lock().unwrap())
    }

    pub fn reset(&self) {
        self.passes.lock().unwrap().clear();
    }

    fn record(&self, tokens: Vec<TokenId>) {
        self.passes.lock().unwrap().push(PassRecord { tokens });
    }
}

impl<B: LanguageModel> LanguageModel for CountingBackend<B> {
    fn vocab(&self) -> &Vocab {
        self.inner.vocab()
    }

    fn max_len(&self) -> usize {
        self.inner.max_len()
    }

    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>> {
        self.inner.tokenize(text)
    }

    fn detokenize(&self, tokens: &[TokenId]) -> String {
        self.inner.detokenize(tokens)
    }

    fn forward_full(&self, tokens: &[TokenId]) -> Result<PrefixDistributionMatrix> {
        self.record(tokens.to_vec());
        self.inner.forward_full(tokens)
    }

    fn forward_with_placeholders(
        &self,
        tokens: &[TokenId],
        placeholders: usize,
    ) -> Result<PrefixDistributionMatrix> {
        let ph = self.inner.vocab().placeholder_id();
        let mut seq = tokens.to_vec();
        seq.extend(std::iter::repeat_n(ph, placeholders));
        self.record(seq);
        self.inner.forward_with_placeholders(tokens, placeholders)
    }

    fn forward_empty(&self) -> Result<Vec<f64>> {
        self.record(Vec::new());
        self.inner.forward_empty()
    }

    fn concurrent(&self) -> bool {
        self.inner.concurrent()
    }

    fn dims(&self) -> Option<ModelDims> {
        self.inner.dims()
    }

    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }
}
