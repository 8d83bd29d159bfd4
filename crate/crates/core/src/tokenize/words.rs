use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::EncodedSequence;
use crate::error::{Error, Result};

/// Default word sequence length.
pub const WORD_MAX_LEN: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SplitMode {
    /// Whitespace split, then every non-alphanumeric character becomes its
    /// own token.
    #[default]
    DetachPunctuation,
    /// Whitespace split only.
    Whitespace,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Tokenizer {
    pub lowercase: bool,
    pub split: SplitMode,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Self {
            lowercase: true,
            split: SplitMode::DetachPunctuation,
        }
    }
}

impl Tokenizer {
    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let text = if self.lowercase {
            text.to_lowercase()
        } else {
            text.to_string()
        };
        let mut tokens = Vec::new();
        for chunk in text.split_whitespace() {
            match self.split {
                SplitMode::Whitespace => tokens.push(chunk.to_string()),
                SplitMode::DetachPunctuation => {
                    let mut word = String::new();
                    for c in chunk.chars() {
                        if c.is_alphanumeric() {
                            word.push(c);
                        } else {
                            if !word.is_empty() {
                                tokens.push(std::mem::take(&mut word));
                            }
                            tokens.push(c.to_string());
                        }
                    }
                    if !word.is_empty() {
                        tokens.push(word);
                    }
                }
            }
        }
        tokens
    }
}

/// Corpus-built word index. Index 0 is padding, 1 is out-of-vocabulary, real
/// tokens follow by descending training frequency (ties lexicographic).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WordVocab {
    tokens: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, usize>,
}

impl WordVocab {
    pub const PAD: usize = 0;
    pub const OOV: usize = 1;
    pub const RESERVED: usize = 2;

    /// Builds the vocabulary from a stream of training tokens, dropping tokens
    /// seen fewer than `min_freq` times.
    pub fn build<I, S>(corpus: I, min_freq: u64) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut freq: HashMap<String, u64> = HashMap::new();
        let mut seen = false;
        for tok in corpus {
            seen = true;
            *freq.entry(tok.as_ref().to_string()).or_default() += 1;
        }
        if !seen {
            return Err(Error::invalid(
                "cannot build a vocabulary from an empty corpus",
            ));
        }
        let mut entries: Vec<(String, u64)> = freq
            .into_iter()
            .filter(|&(_, n)| n >= min_freq.max(1))
            .collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let (tokens, counts): (Vec<String>, Vec<u64>) = entries.into_iter().unzip();
        Ok(Self::from_parts(tokens, counts))
    }

    /// Builds from raw texts using `tokenizer`.
    pub fn from_texts<'a>(
        texts: impl IntoIterator<Item = &'a str>,
        tokenizer: &Tokenizer,
        min_freq: u64,
    ) -> Result<Self> {
        Self::build(
            texts.into_iter().flat_map(|t| tokenizer.tokenize(t)),
            min_freq,
        )
    }

    fn from_parts(tokens: Vec<String>, counts: Vec<u64>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i + Self::RESERVED))
            .collect();
        Self {
            tokens,
            counts,
            index,
        }
    }

    /// Table size including the two reserved entries.
    pub fn len(&self) -> usize {
        self.tokens.len() + Self::RESERVED
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn index_of(&self, token: &str) -> usize {
        self.get(token).unwrap_or(Self::OOV)
    }

    /// Token at `index`; `None` for the reserved entries.
    pub fn token(&self, index: usize) -> Option<&str> {
        index
            .checked_sub(Self::RESERVED)
            .and_then(|i| self.tokens.get(i))
            .map(String::as_str)
    }

    /// Training-corpus frequency of the token at `index`.
    pub fn count(&self, index: usize) -> Option<u64> {
        index
            .checked_sub(Self::RESERVED)
            .and_then(|i| self.counts.get(i))
            .copied()
    }

    /// Human-readable form of an index, `<pad>`/`<oov>` for the reserved ones.
    pub fn display(&self, index: usize) -> &str {
        match index {
            Self::PAD => "<pad>",
            Self::OOV => "<oov>",
            i => self.token(i).unwrap_or("<invalid>"),
        }
    }

    pub fn encode(&self, text: &str, tokenizer: &Tokenizer, max_len: usize) -> EncodedSequence {
        let mut indices: Vec<usize> = tokenizer
            .tokenize(text)
            .iter()
            .take(max_len)
            .map(|t| self.index_of(t))
            .collect();
        let true_length = indices.len();
        indices.resize(max_len, Self::PAD);
        EncodedSequence {
            indices,
            true_length,
            label: None,
        }
    }

    /// One token per line in index order, after the reserved `PAD` and `OOV` lines.
    pub fn dump(&self) -> String {
        let mut out = String::from("PAD\nOOV\n");
        for t in &self.tokens {
            let _ = writeln!(out, "{t}");
        }
        out
    }

    /// Parses [`WordVocab::dump`] output. Frequencies are not stored in the
    /// dump and come back as zero.
    pub fn parse_dump(text: &str, origin: &str) -> Result<Self> {
        let mut lines = text.lines();
        for (n, expect) in [(1, "PAD"), (2, "OOV")] {
            if lines.next() != Some(expect) {
                return Err(Error::Parse {
                    path: origin.to_string(),
                    line: n,
                    msg: format!("expected reserved line '{expect}'"),
                });
            }
        }
        let tokens: Vec<String> = lines.map(str::to_string).collect();
        let mut seen = HashMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || seen.insert(t.as_str(), i).is_some() {
                return Err(Error::Parse {
                    path: origin.to_string(),
                    line: i + 3,
                    msg: format!("empty or duplicate token '{t}'"),
                });
            }
        }
        let counts = vec![0; tokens.len()];
        Ok(Self::from_parts(tokens, counts))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.dump()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_dump(&text, &path.display().to_string())
    }

    /// SHA-256 of the dump; identifies the index assignment.
    pub fn hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"word\n");
        h.update(self.dump().as_bytes());
        h.finalize().into()
    }
}

pub fn build_word_vocab<I, S>(corpus: I, min_freq: u64) -> Result<WordVocab>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    WordVocab::build(corpus, min_freq)
}

pub fn encode_words(text: &str, vocab: &WordVocab, max_len: usize) -> EncodedSequence {
    vocab.encode(text, &Tokenizer::default(), max_len)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frequency_order_and_floor() {
        let v = build_word_vocab("a a b".split(' '), 1).unwrap();
        assert_eq!(v.get("a"), Some(2));
        assert_eq!(v.get("b"), Some(3));
        let v2 = build_word_vocab("a a b".split(' '), 2).unwrap();
        assert_eq!(v2.get("a"), Some(2));
        assert_eq!(v2.index_of("b"), WordVocab::OOV);
        assert_eq!(v, build_word_vocab("a a b".split(' '), 1).unwrap());
    }

    #[test]
    fn ties_broken_lexicographically() {
        let v = build_word_vocab(["c", "b", "a", "b", "c", "a"], 1).unwrap();
        assert_eq!(
            (v.get("a"), v.get("b"), v.get("c")),
            (Some(2), Some(3), Some(4))
        );
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(build_word_vocab(Vec::<String>::new(), 1).is_err());
    }

    #[test]
    fn punctuation_is_detached() {
        let t = Tokenizer::default();
        assert_eq!(t.tokenize("Good, movie."), vec!["good", ",", "movie", "."]);
        let raw = Tokenizer {
            split: SplitMode::Whitespace,
            ..Tokenizer::default()
        };
        assert_eq!(raw.tokenize("Good, movie."), vec!["good,", "movie."]);
    }

    #[test]
    fn encode_known_and_unknown() {
        let v = build_word_vocab(["good", "movie"], 1).unwrap();
        let s = encode_words("good movie", &v, 4);
        assert_eq!(
            s.indices,
            vec![v.index_of("good"), v.index_of("movie"), 0, 0]
        );
        assert_eq!(s.true_length, 2);
        let s = encode_words("zzzzunseen", &v, 3);
        assert_eq!(s.indices, vec![WordVocab::OOV, 0, 0]);
        assert_eq!(v.display(WordVocab::OOV), "<oov>");
    }

    #[test]
    fn dump_round_trip() {
        let v = build_word_vocab("the cat sat on the mat".split(' '), 1).unwrap();
        let back = WordVocab::parse_dump(&v.dump(), "mem").unwrap();
        assert_eq!(back.len(), v.len());
        for i in 0..v.len() {
            assert_eq!(back.token(i), v.token(i));
        }
        assert_eq!(back.hash(), v.hash());
        assert!(WordVocab::parse_dump("OOV\nPAD\n", "mem").is_err());
    }
}
