//! Vocabulary files and line-aligned parallel corpora.
//!
//! A vocabulary file lists one token per line; the line number is the token
//! id. Ids 0, 1 and 2 are reserved for padding, begin- and end-of-sequence.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::vecstore::TokenId;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const RESERVED: [&str; 3] = ["<pad>", "<s>", "</s>"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, TokenId>,
}

impl Vocab {
    /// Builds a vocabulary from the reserved tokens followed by `tokens`
    /// in first-seen order; duplicates are skipped.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Self {
            tokens: Vec::new(),
            ids: HashMap::new(),
        };
        for t in RESERVED {
            v.insert(t);
        }
        for t in tokens {
            v.insert(t.as_ref());
        }
        v
    }

    fn insert(&mut self, t: &str) -> TokenId {
        if let Some(&id) = self.ids.get(t) {
            return id;
        }
        let id = self.tokens.len() as TokenId;
        self.tokens.push(t.to_owned());
        self.ids.insert(t.to_owned(), id);
        id
    }

    pub fn parse(text: &str) -> Result<Self> {
        let tokens: Vec<&str> = text.lines().collect();
        if tokens.len() < RESERVED.len() {
            return Err(Error::parse("vocabulary", "fewer than 3 lines (ids 0-2 are reserved)"));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::parse("vocabulary", format!("line {}: invalid token {t:?}", i + 1)));
            }
            if ids.insert((*t).to_owned(), i as TokenId).is_some() {
                return Err(Error::parse("vocabulary", format!("line {}: duplicate token {t:?}", i + 1)));
            }
        }
        Ok(Self {
            tokens: tokens.into_iter().map(str::to_owned).collect(),
            ids,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_file_string(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Encodes a whitespace-tokenised line. Unknown tokens are an error.
    pub fn encode(&self, line: &str) -> Result<Vec<TokenId>> {
        line.split_whitespace()
            .map(|t| {
                self.id(t)
                    .ok_or_else(|| Error::parse("input", format!("token {t:?} not in vocabulary")))
            })
            .collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or("<unk>"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Reads a text file as lines (no trailing newline handling beyond
/// [`str::lines`]).
pub fn read_lines(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_owned).collect())
}

/// Line-aligned (source, target) token-id pairs.
pub type ParallelCorpus = Vec<(Vec<TokenId>, Vec<TokenId>)>;

pub fn read_parallel(vocab: &Vocab, src: impl AsRef<Path>, tgt: impl AsRef<Path>) -> Result<ParallelCorpus> {
    let s = read_lines(&src)?;
    let t = read_lines(&tgt)?;
    if s.len() != t.len() {
        return Err(Error::parse(
            format!("{}", src.as_ref().display()),
            format!("{} source lines but {} target lines", s.len(), t.len()),
        ));
    }
    s.iter()
        .zip(&t)
        .map(|(a, b)| Ok((vocab.encode(a)?, vocab.encode(b)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids() {
        let v = Vocab::from_tokens(["hello", "world", "hello"]);
        assert_eq!(v.len(), 5);
        assert_eq!(v.id("<pad>"), Some(PAD));
        assert_eq!(v.id("<s>"), Some(BOS));
        assert_eq!(v.id("</s>"), Some(EOS));
        assert_eq!(v.encode("world hello").unwrap(), vec![4, 3]);
        assert_eq!(v.decode(&[3, 4]), "hello world");
        assert_eq!(Vocab::parse(&v.to_file_string()).unwrap(), v);
    }

    #[test]
    fn unknown_tokens_and_bad_files() {
        let v = Vocab::from_tokens(["a"]);
        assert!(v.encode("a b").is_err());
        assert!(Vocab::parse("a\nb\n").is_err());
        assert!(Vocab::parse("<pad>\n<s>\n</s>\nx\nx\n").is_err());
    }
}
