//! JSON-over-HTTP client for a model server.
//!
//! Endpoints:
//! - `GET /vocab` → `{"size": V, "placeholder_id": p, "surfaces": [...]}`
//! - `POST /tokenize` `{"text": s}` → `{"tokens": [ids]}`
//! - `POST /forward_full` `{"tokens": [ids], "append_placeholders": m}` →
//!   `{"rows": [[probs]...]}` with `|rows| = |tokens| + m`

use std::time::Duration;

use reqwest::blocking::Client;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{LanguageModel, PrefixDistributionMatrix};
use crate::error::{Error, Result};
use crate::types::{TokenId, Vocab};

pub const DEFAULT_REMOTE_MAX_LEN: usize = 4096;

#[derive(Debug, Deserialize)]
struct VocabResponse {
    size: usize,
    placeholder_id: TokenId,
    surfaces: Vec<String>,
}

#[derive(Serialize)]
struct TokenizeRequest<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct TokenizeResponse {
    tokens: Vec<TokenId>,
}

#[derive(Serialize)]
struct ForwardRequest<'a> {
    tokens: &'a [TokenId],
    append_placeholders: usize,
}

#[derive(Deserialize)]
struct ForwardResponse {
    rows: Vec<Vec<f64>>,
}

#[derive(Debug)]
pub struct RemoteBackend {
    base: String,
    client: Client,
    vocab: Vocab,
    max_len: usize,
}

impl RemoteBackend {
    /// Connects and fetches the vocabulary.
    pub fn connect(base_url: &str, max_len: usize) -> Result<Self> {
        let client = Client::builder()
            .timeout(Duration::from_secs(300))
            .build()
            .map_err(|e| Error::RemoteUnavailable(e.to_string()))?;
        let base = base_url.trim_end_matches('/').to_string();
        let resp: VocabResponse = Self::decode(client.get(format!("{base}/vocab")).send())?;
        if resp.surfaces.len() != resp.size {
            return Err(Error::RemoteProtocol(format!(
                "vocab size {} but {} surfaces",
                resp.size,
                resp.surfaces.len()
            )));
        }
        let vocab = Vocab::new(resp.surfaces, resp.placeholder_id)?;
        Ok(Self {
            base,
            client,
            vocab,
            max_len,
        })
    }

    pub fn url(&self) -> &str {
        &self.base
    }

    fn decode<T: DeserializeOwned>(
        resp: reqwest::Result<reqwest::blocking::Response>,
    ) -> Result<T> {
        let resp = resp.map_err(|e| Error::RemoteUnavailable(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(Error::RemoteUnavailable(format!(
                "server returned {status}"
            )));
        }
        let body = resp
            .text()
            .map_err(|e| Error::RemoteUnavailable(e.to_string()))?;
        serde_json::from_str(&body).map_err(|e| Error::RemoteProtocol(e.to_string()))
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, body: &Req) -> Result<Resp> {
        Self::decode(
            self.client
                .post(format!("{}{path}", self.base))
                .json(body)
                .send(),
        )
    }
}

impl LanguageModel for RemoteBackend {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn max_len(&self) -> usize {
        self.max_len
    }

    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>> {
        let resp: TokenizeResponse = self.post("/tokenize", &TokenizeRequest { text })?;
        resp.tokens
            .iter()
            .try_for_each(|&t| self.vocab.check_token(t))?;
        Ok(resp.tokens)
    }

    fn forward_full(&self, tokens: &[TokenId]) -> Result<PrefixDistributionMatrix> {
        self.forward_with_placeholders(tokens, 0)
    }

    fn forward_with_placeholders(
        &self,
        tokens: &[TokenId],
        placeholders: usize,
    ) -> Result<PrefixDistributionMatrix> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput);
        }
        let total = tokens.len() + placeholders;
        if total > self.max_len {
            return Err(Error::SequenceTooLong {
                len: total,
                max_len: self.max_len,
            });
        }
        tokens.iter().try_for_each(|&t| self.vocab.check_token(t))?;
        let resp: ForwardResponse = self.post(
            "/forward_full",
            &ForwardRequest {
                tokens,
                append_placeholders: placeholders,
            },
        )?;
        if resp.rows.len() != total {
            return Err(Error::RemoteProtocol(format!(
                "expected {total} rows, got {}",
                resp.rows.len()
            )));
        }
        PrefixDistributionMatrix::from_rows(resp.rows, self.vocab.size())
    }

    /// The protocol has no empty-prefix request.
    fn forward_empty(&self) -> Result<Vec<f64>> {
        Err(Error::EmptyInput)
    }

    fn fingerprint(&self) -> String {
        format!("remote({},v={})", self.base, self.vocab.size())
    }
}
