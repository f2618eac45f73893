//! Closed vocabularies with frequency cutoff and an unknown-token slot.

use std::collections::HashMap;

use crate::transition::TOKEN_TERMINATOR;

pub const UNK_TOKEN: &str = "<unk>";

/// Token table. Index 0 is always the unknown token; a generation
/// vocabulary additionally reserves index 1 for the string terminator.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Build from a token stream, keeping tokens seen at least `cutoff`
    /// times, in first-occurrence order.
    pub fn build<'a>(
        corpus: impl IntoIterator<Item = &'a str>,
        cutoff: usize,
        with_terminator: bool,
    ) -> Vocab {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut order: Vec<&str> = Vec::new();
        for tok in corpus {
            let n = counts.entry(tok).or_insert(0);
            if *n == 0 {
                order.push(tok);
            }
            *n += 1;
        }
        let mut tokens = vec![UNK_TOKEN.to_string()];
        if with_terminator {
            tokens.push(TOKEN_TERMINATOR.to_string());
        }
        for tok in order {
            if counts[tok] >= cutoff.max(1) && !tokens.iter().any(|t| t == tok) {
                tokens.push(tok.to_string());
            }
        }
        Vocab::from_tokens(tokens)
    }

    /// Rebuild from a stored token list (token 0 must be the unknown).
    pub fn from_tokens(tokens: Vec<String>) -> Vocab {
        debug_assert_eq!(tokens.first().map(String::as_str), Some(UNK_TOKEN));
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab { tokens, index }
    }

    pub fn unk_id(&self) -> usize {
        0
    }

    pub fn id(&self, tok: &str) -> Option<usize> {
        self.index.get(tok).copied()
    }

    pub fn id_or_unk(&self, tok: &str) -> usize {
        self.id(tok).unwrap_or(0)
    }

    pub fn contains(&self, tok: &str) -> bool {
        self.index.contains_key(tok)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
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
}
