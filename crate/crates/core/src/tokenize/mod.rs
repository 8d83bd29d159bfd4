//! Character and word input encodings.

mod chars;
mod embeddings;
mod words;

pub use chars::{chars_to_onehot, encode_chars, CharVocab, ALPHABET, ALPHABET_SIZE, CHAR_MAX_LEN};
pub use embeddings::{
    init_embeddings, load_pretrained, write_pretrained, Pretrained, EMBED_INIT_RANGE,
};
pub use words::{build_word_vocab, encode_words, SplitMode, Tokenizer, WordVocab, WORD_MAX_LEN};

/// A fixed-length index sequence. `indices.len()` is always the configured
/// maximum length; positions past `true_length` are padding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedSequence {
    pub indices: Vec<usize>,
    pub true_length: usize,
    pub label: Option<usize>,
}

impl EncodedSequence {
    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }
}

/// Level-specific text encoder.
#[derive(Clone, Debug)]
pub enum Encoder {
    Char {
        vocab: CharVocab,
        max_len: usize,
    },
    Word {
        vocab: WordVocab,
        tokenizer: Tokenizer,
        max_len: usize,
    },
}

impl Encoder {
    pub fn encode(&self, text: &str) -> EncodedSequence {
        match self {
            Encoder::Char { vocab, max_len } => vocab.encode(text, *max_len),
            Encoder::Word {
                vocab,
                tokenizer,
                max_len,
            } => vocab.encode(text, tokenizer, *max_len),
        }
    }

    pub fn max_len(&self) -> usize {
        match self {
            Encoder::Char { max_len, .. } | Encoder::Word { max_len, .. } => *max_len,
        }
    }

    /// Number of input symbols: 69 for characters, table size for words.
    pub fn vocab_size(&self) -> usize {
        match self {
            Encoder::Char { vocab, .. } => vocab.len(),
            Encoder::Word { vocab, .. } => vocab.len(),
        }
    }

    pub fn vocab_hash(&self) -> [u8; 32] {
        match self {
            Encoder::Char { vocab, .. } => vocab.hash(),
            Encoder::Word { vocab, .. } => vocab.hash(),
        }
    }
}
