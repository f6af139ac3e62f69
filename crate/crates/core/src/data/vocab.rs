use std::collections::HashMap;

use crate::error::{Error, Result};

/// The 32 printable ASCII punctuation marks.
pub const PUNCTUATION: &str = "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~";

const LOWERCASE: &str = "abcdefghijklmnopqrstuvwxyz";
const DIGITS: &str = "0123456789";

/// Character ↔ id codec. Character ids come first, then SOS, EOS and PAD.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

impl Vocabulary {
    /// 36 characters (letters and digits), or 68 with punctuation.
    pub fn new(include_punctuation: bool) -> Self {
        let mut chars: Vec<char> = LOWERCASE.chars().chain(DIGITS.chars()).collect();
        if include_punctuation {
            chars.extend(PUNCTUATION.chars());
        }
        let index = chars.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        Vocabulary { chars, index }
    }

    /// Arbitrary character set, in id order. Duplicates are rejected.
    pub fn from_chars(chars: &str) -> Result<Self> {
        let chars: Vec<char> = chars.chars().collect();
        let index: HashMap<char, usize> = chars.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        if chars.is_empty() || index.len() != chars.len() {
            return Err(Error::Config(format!(
                "charset must be non-empty without repeats, got {:?}",
                chars.iter().collect::<String>()
            )));
        }
        Ok(Vocabulary { chars, index })
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn num_chars(&self) -> usize {
        self.chars.len()
    }

    /// Total number of ids, specials included.
    pub fn len(&self) -> usize {
        self.chars.len() + 3
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn sos(&self) -> usize {
        self.chars.len()
    }

    pub fn eos(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn pad(&self) -> usize {
        self.chars.len() + 2
    }

    pub fn is_special(&self, id: usize) -> bool {
        id >= self.chars.len()
    }

    pub fn contains(&self, c: char) -> bool {
        self.index.contains_key(&c)
    }

    pub fn id(&self, c: char) -> Result<usize> {
        self.index
            .get(&c)
            .copied()
            .ok_or_else(|| Error::Codec(format!("character {c:?} is not in the vocabulary")))
    }

    pub fn char_of(&self, id: usize) -> Option<char> {
        self.chars.get(id).copied()
    }

    /// `[SOS, ids(text)…, EOS]`.
    pub fn encode_label(&self, text: &str, max_len: usize) -> Result<TokenSequence> {
        let n = text.chars().count();
        if n == 0 {
            return Err(Error::Contract("cannot encode an empty transcript".into()));
        }
        if n > max_len {
            return Err(Error::Length(format!(
                "transcript {text:?} has {n} characters, maximum is {max_len}"
            )));
        }
        let mut ids = Vec::with_capacity(n + 2);
        ids.push(self.sos());
        for c in text.chars() {
            ids.push(self.id(c)?);
        }
        ids.push(self.eos());
        Ok(TokenSequence { ids, len: n })
    }

    /// Characters of the given ids, skipping special symbols.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter().filter_map(|&i| self.char_of(i)).collect()
    }
}

/// `[SOS, y_1 … y_L, EOS]` for one transcript; padding is added per batch.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    ids: Vec<usize>,
    len: usize,
}

impl TokenSequence {
    /// Validates the SOS … EOS framing against `vocab`.
    pub fn from_ids(ids: Vec<usize>, vocab: &Vocabulary) -> Result<Self> {
        let ok = ids.len() >= 2
            && ids[0] == vocab.sos()
            && ids[ids.len() - 1] == vocab.eos()
            && ids[1..ids.len() - 1].iter().all(|&i| i < vocab.num_chars());
        if !ok {
            return Err(Error::Codec(format!("malformed token sequence {ids:?}")));
        }
        let len = ids.len() - 2;
        Ok(TokenSequence { ids, len })
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    /// Logical length L (specials excluded).
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Character ids `y_1 … y_L`.
    pub fn chars(&self) -> &[usize] {
        &self.ids[1..=self.len]
    }

    /// Teacher-forcing input `[SOS, y_1 … y_L]`.
    pub fn decoder_input(&self) -> &[usize] {
        &self.ids[..=self.len]
    }

    /// Prediction targets `[y_1 … y_L, EOS]`.
    pub fn decoder_target(&self) -> &[usize] {
        &self.ids[1..]
    }
}

/// Reverses the character ids, keeping SOS and EOS in place.
pub fn make_reversed_target(tokens: &TokenSequence) -> TokenSequence {
    let mut ids = tokens.ids.clone();
    ids[1..=tokens.len].reverse();
    TokenSequence { ids, len: tokens.len }
}
