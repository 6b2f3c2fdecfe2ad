use std::collections::HashMap;

use crate::corpus::Document;

/// Word-level vocabulary with reserved ids for unknown words and the
/// segment markers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub const UNK: usize = 0;
    pub const CLS: usize = 1;
    pub const SEP: usize = 2;
    const RESERVED: [&'static str; 3] = ["[UNK]", "[CLS]", "[SEP]"];

    /// Every distinct token of `docs`, in first-seen order after the
    /// reserved entries.
    pub fn build<'a>(docs: impl IntoIterator<Item = &'a Document>) -> Self {
        let mut tokens: Vec<String> = Self::RESERVED.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, usize> = tokens.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
        for doc in docs {
            for t in &doc.tokens {
                if !index.contains_key(t) {
                    index.insert(t.clone(), tokens.len());
                    tokens.push(t.clone());
                }
            }
        }
        Self { tokens, index }
    }

    /// Restores a vocabulary from its token list (reserved entries first).
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
        Self { tokens, index }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(Self::UNK)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }
}
