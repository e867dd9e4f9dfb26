//! Character vocabulary for the CTC head.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Character inventory with an explicit blank, unknown and word separator.
///
/// The default follows the English wav2vec2 character tokenizer layout:
/// `<pad>` doubles as the CTC blank and `|` separates words.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub symbols: Vec<String>,
    pub blank: usize,
    pub unk: usize,
    pub word_separator: usize,
}

const DEFAULT_SYMBOLS: [&str; 32] = [
    "<pad>", "<s>", "</s>", "<unk>", "|", "E", "T", "A", "O", "N", "I", "H", "S", "R", "D", "L", "U", "M", "W", "C",
    "F", "G", "Y", "P", "B", "V", "K", "'", "X", "J", "Q", "Z",
];

impl Default for Vocab {
    fn default() -> Self {
        Vocab { symbols: DEFAULT_SYMBOLS.iter().map(|s| s.to_string()).collect(), blank: 0, unk: 3, word_separator: 4 }
    }
}

/// Label ids for one transcript. Never contains the blank.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<usize>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl Vocab {
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.symbols.len();
        if self.blank >= n || self.unk >= n || self.word_separator >= n {
            return Err(Error::validation("vocab special ids out of range"));
        }
        Ok(())
    }

    fn id_of(&self, sym: &str) -> Option<usize> {
        self.symbols.iter().position(|s| s == sym)
    }

    /// Upper-cases, maps whitespace runs to the word separator and drops
    /// characters other than letters and apostrophes.
    pub fn encode(&self, text: &str) -> TokenSequence {
        let mut tokens = Vec::new();
        let mut pending_sep = false;
        for ch in text.chars() {
            if ch.is_whitespace() {
                pending_sep = !tokens.is_empty();
                continue;
            }
            if !(ch.is_alphabetic() || ch == '\'') {
                continue;
            }
            if pending_sep {
                tokens.push(self.word_separator);
                pending_sep = false;
            }
            let up: String = ch.to_uppercase().collect();
            tokens.push(self.id_of(&up).unwrap_or(self.unk));
        }
        TokenSequence { tokens }
    }

    /// Greedy CTC decoding of a frame-wise argmax sequence.
    pub fn decode_frames(&self, frame_ids: &[usize]) -> String {
        let mut out = String::new();
        let mut prev = None;
        for &k in frame_ids {
            if Some(k) != prev && k != self.blank {
                out.push_str(&self.render(k));
            }
            prev = Some(k);
        }
        out.trim().to_string()
    }

    fn render(&self, id: usize) -> String {
        if id == self.word_separator {
            " ".into()
        } else if id == self.unk {
            "?".into()
        } else {
            self.symbols[id].to_lowercase()
        }
    }

    pub fn decode(&self, tokens: &TokenSequence) -> String {
        tokens.tokens.iter().map(|&t| self.render(t)).collect()
    }
}
