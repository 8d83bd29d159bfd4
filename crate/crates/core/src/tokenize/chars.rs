use sha2::{Digest, Sha256};

use super::EncodedSequence;
use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

/// The 69-symbol character dictionary: lowercase letters, digits, 32 ASCII
/// punctuation marks and newline.
pub const ALPHABET: &str =
    "abcdefghijklmnopqrstuvwxyz0123456789-,;.!?:'\"/\\|_@#$%^&*~`+=<>()[]{}\n";

pub const ALPHABET_SIZE: usize = 69;

/// Default character sequence length.
pub const CHAR_MAX_LEN: usize = 1014;

#[derive(Clone, Debug)]
pub struct CharVocab {
    symbols: Vec<char>,
    lookup: [u8; 128],
    lowercase: bool,
}

impl Default for CharVocab {
    fn default() -> Self {
        Self::new(true)
    }
}

impl CharVocab {
    /// Index used for padding and for characters outside the alphabet.
    pub const PAD: usize = ALPHABET_SIZE;

    pub fn new(lowercase: bool) -> Self {
        let symbols: Vec<char> = ALPHABET.chars().collect();
        debug_assert_eq!(symbols.len(), ALPHABET_SIZE);
        let mut lookup = [Self::PAD as u8; 128];
        for (i, &c) in symbols.iter().enumerate() {
            lookup[c as usize] = i as u8;
        }
        Self {
            symbols,
            lookup,
            lowercase,
        }
    }

    pub fn len(&self) -> usize {
        ALPHABET_SIZE
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn lowercase(&self) -> bool {
        self.lowercase
    }

    /// Index of `c` as-is (no case folding), or `PAD`.
    pub fn index(&self, c: char) -> usize {
        if c.is_ascii() {
            self.lookup[c as usize] as usize
        } else {
            Self::PAD
        }
    }

    pub fn symbol(&self, index: usize) -> Option<char> {
        self.symbols.get(index).copied()
    }

    /// Maps each character (lowercased when configured) to its alphabet
    /// index, out-of-alphabet characters to `PAD`, then pads or truncates
    /// to `max_len`.
    pub fn encode(&self, text: &str, max_len: usize) -> EncodedSequence {
        let mut indices: Vec<usize> = if self.lowercase {
            text.chars()
                .flat_map(char::to_lowercase)
                .take(max_len)
                .map(|c| self.index(c))
                .collect()
        } else {
            text.chars().take(max_len).map(|c| self.index(c)).collect()
        };
        let true_length = indices.len();
        indices.resize(max_len, Self::PAD);
        EncodedSequence {
            indices,
            true_length,
            label: None,
        }
    }

    /// Text of the first `true_length` positions; `PAD` renders as a space.
    pub fn decode(&self, seq: &EncodedSequence) -> String {
        seq.indices[..seq.true_length]
            .iter()
            .map(|&i| self.symbol(i).unwrap_or(' '))
            .collect()
    }

    /// `(69, max_len)` matrix whose column `t` is the unit vector of index `t`;
    /// `PAD` columns are zero.
    pub fn one_hot<T: Scalar>(&self, seq: &EncodedSequence) -> Result<Tensor<T>> {
        let len = seq.indices.len();
        let mut data = vec![T::zero(); ALPHABET_SIZE * len];
        for (t, &i) in seq.indices.iter().enumerate() {
            if i < ALPHABET_SIZE {
                data[i * len + t] = T::one();
            }
        }
        Tensor::from_vec(&[ALPHABET_SIZE, len], data)
    }

    pub fn hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"char\n");
        h.update(ALPHABET.as_bytes());
        h.update([self.lowercase as u8]);
        h.finalize().into()
    }
}

/// Character encoding with the default dictionary.
pub fn encode_chars(text: &str, max_len: usize) -> EncodedSequence {
    CharVocab::default().encode(text, max_len)
}

pub fn chars_to_onehot<T: Scalar>(seq: &EncodedSequence) -> Result<Tensor<T>> {
    CharVocab::default().one_hot(seq)
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;

    #[test]
    fn alphabet_has_69_distinct_symbols() {
        let set: HashSet<char> = ALPHABET.chars().collect();
        assert_eq!(ALPHABET.chars().count(), 69);
        assert_eq!(set.len(), 69);
        let v = CharVocab::default();
        for (i, c) in ALPHABET.chars().enumerate() {
            assert_eq!(v.index(c), i);
            assert_eq!(v.symbol(i), Some(c));
        }
    }

    #[test]
    fn pads_short_text() {
        let v = CharVocab::default();
        let s = v.encode("ab", 4);
        assert_eq!(s.indices, vec![0, 1, CharVocab::PAD, CharVocab::PAD]);
        assert_eq!(s.true_length, 2);
    }

    #[test]
    fn lowercases() {
        let v = CharVocab::default();
        assert_eq!(v.encode("AB", 10), v.encode("ab", 10));
        let raw = CharVocab::new(false);
        assert_eq!(raw.encode("A", 1).indices, vec![CharVocab::PAD]);
    }

    #[test]
    fn truncates_long_text() {
        let text = "x".repeat(2000);
        let s = encode_chars(&text, CHAR_MAX_LEN);
        assert_eq!(s.indices.len(), 1014);
        assert_eq!(s.true_length, 1014);
    }

    #[test]
    fn unknown_symbols_are_zero_columns() {
        let s = encode_chars("a é😀", 6);
        assert_eq!(
            &s.indices[..4],
            &[0, CharVocab::PAD, CharVocab::PAD, CharVocab::PAD]
        );
        let m: Tensor<f64> = chars_to_onehot(&s).unwrap();
        assert_eq!(m.shape(), &[69, 6]);
        assert_eq!(m.get(&[0, 0]), 1.0);
        for t in 1..6 {
            assert!((0..69).all(|r| m.get(&[r, t]) == 0.0));
        }
    }

    #[test]
    fn all_padding_is_zero_matrix() {
        let s = encode_chars("", 5);
        let m: Tensor<f32> = chars_to_onehot(&s).unwrap();
        assert!(m.data().iter().all(|&x| x == 0.0));
    }
}
