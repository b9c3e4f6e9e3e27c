use std::collections::HashMap;

use crate::types::{TokenId, Vocab};

/// Whitespace-separated, greedy longest-match tokenizer over vocabulary
/// surfaces. Characters no surface covers collapse into one placeholder
/// (unknown) token per run.
#[derive(Debug, Clone)]
pub struct SurfaceTokenizer {
    lookup: HashMap<String, TokenId>,
    longest: usize,
    unknown: TokenId,
}

impl SurfaceTokenizer {
    pub fn new(vocab: &Vocab) -> Self {
        let mut lookup = HashMap::new();
        for (id, surface) in vocab.surfaces().iter().enumerate() {
            if surface.is_empty() || surface.chars().any(char::is_whitespace) {
                continue;
            }
            lookup.entry(surface.clone()).or_insert(id as TokenId);
        }
        let longest = lookup.keys().map(String::len).max().unwrap_or(0);
        Self {
            lookup,
            longest,
            unknown: vocab.placeholder_id(),
        }
    }

    pub fn tokenize(&self, text: &str) -> Vec<TokenId> {
        let mut out = Vec::new();
        for word in text.split_whitespace() {
            let mut pos = 0;
            let mut in_unknown = false;
            while pos < word.len() {
                match self.longest_match(&word[pos..]) {
                    Some((id, len)) => {
                        out.push(id);
                        pos += len;
                        in_unknown = false;
                    }
                    None => {
                        if !in_unknown {
                            out.push(self.unknown);
                            in_unknown = true;
                        }
                        pos += word[pos..].chars().next().map_or(1, char::len_utf8);
                    }
                }
            }
        }
        out
    }

    fn longest_match(&self, rest: &str) -> Option<(TokenId, usize)> {
        let mut len = self.longest.min(rest.len());
        while len > 0 {
            if rest.is_char_boundary(len) {
                if let Some(&id) = self.lookup.get(&rest[..len]) {
                    return Some((id, len));
                }
            }
            len -= 1;
        }
        None
    }
}
