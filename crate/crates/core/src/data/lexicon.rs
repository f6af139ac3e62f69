use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Candidate words for lexicon-constrained prediction, in file order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Lexicon {
    words: Vec<String>,
}

impl Lexicon {
    pub fn new(words: impl IntoIterator<Item = impl Into<String>>) -> Result<Self> {
        let words: Vec<String> = words
            .into_iter()
            .map(|w| w.into().trim().to_lowercase())
            .filter(|w| !w.is_empty())
            .collect();
        if words.is_empty() {
            return Err(Error::Lexicon("lexicon contains no words".into()));
        }
        Ok(Lexicon { words })
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

/// One word per line; lower-cased, blank lines dropped, duplicates kept.
pub fn load_lexicon(path: &Path) -> Result<Lexicon> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Lexicon::new(text.lines()).map_err(|e| Error::Lexicon(format!("{}: {e}", path.display())))
}
