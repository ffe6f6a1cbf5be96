use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use unicode_normalization::UnicodeNormalization;

use super::{io_err, Result, SynthError};

/// Punctuation added to every label map unless configured otherwise.
pub const DEFAULT_PUNCTUATION: &str = ".,-:";

/// An ordered list of NFC-normalized words.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
}

impl Vocabulary {
    /// Trims, drops empty entries and NFC-normalizes.
    pub fn from_words<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut out = Vec::new();
        for w in words {
            let w = w.as_ref().trim();
            if w.is_empty() {
                continue;
            }
            if w.chars().any(|c| c.is_control()) {
                return Err(SynthError::InvalidWord(w.to_owned()));
            }
            out.push(w.nfc().collect::<String>());
        }
        if out.is_empty() {
            return Err(SynthError::EmptyVocabulary);
        }
        Ok(Self { words: out })
    }

    /// Reads a UTF-8 file with one word per line.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        let text = String::from_utf8(bytes).map_err(|_| SynthError::InvalidUtf8 {
            path: path.to_owned(),
        })?;
        Self::from_words(text.lines())
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Bijection between codepoints and class ids `1..=L`. Id 0 is the CTC blank.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    chars: Vec<char>,
    ids: BTreeMap<char, u32>,
}

impl LabelMap {
    pub const BLANK: u32 = 0;

    /// Ids are assigned in ascending codepoint order starting at 1.
    pub fn from_chars(chars: impl IntoIterator<Item = char>) -> Self {
        let mut chars: Vec<char> = chars.into_iter().collect();
        chars.sort_unstable();
        chars.dedup();
        let ids = chars.iter().enumerate().map(|(i, &c)| (c, i as u32 + 1)).collect();
        Self { chars, ids }
    }

    /// Every codepoint of the vocabulary plus `punctuation`.
    pub fn build(vocab: &Vocabulary, punctuation: &str) -> Self {
        Self::from_chars(
            vocab
                .words()
                .iter()
                .flat_map(|w| w.chars())
                .chain(punctuation.nfc()),
        )
    }

    /// Number of non-blank labels `L`.
    pub fn num_labels(&self) -> usize {
        self.chars.len()
    }

    /// Output classes of a recognizer over this map: `L + 1`.
    pub fn num_classes(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn id(&self, c: char) -> Option<u32> {
        self.ids.get(&c).copied()
    }

    pub fn char_of(&self, id: u32) -> Option<char> {
        if id == Self::BLANK {
            None
        } else {
            self.chars.get(id as usize - 1).copied()
        }
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    /// Maps an (NFC-normalized) string to label ids.
    pub fn encode(&self, text: &str) -> Result<Vec<u32>> {
        text.nfc()
            .map(|c| self.id(c).ok_or(SynthError::OutOfAlphabet(c)))
            .collect()
    }

    /// Maps ids back to text; blanks and unknown ids are skipped.
    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter().filter_map(|&id| self.char_of(id)).collect()
    }

    /// Space-separated `U+XXXX` list in id order.
    pub fn to_codepoint_list(&self) -> String {
        self.chars
            .iter()
            .map(|&c| format!("U+{:04X}", c as u32))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn parse_codepoint_list(text: &str) -> Result<Self> {
        let chars = text
            .split_whitespace()
            .enumerate()
            .map(|(i, tok)| {
                parse_codepoint(tok).ok_or_else(|| SynthError::Malformed {
                    file: "codepoint list".into(),
                    line: i + 1,
                    reason: format!("bad codepoint `{tok}`"),
                })
            })
            .collect::<Result<Vec<char>>>()?;
        Ok(Self::from_chars(chars))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse_codepoint_list(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.to_codepoint_list().replace(' ', "\n");
        text.push('\n');
        std::fs::write(path, text).map_err(io_err(path))
    }
}

impl fmt::Display for LabelMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_codepoint_list())
    }
}

/// Parses `U+XXXX`.
pub(crate) fn parse_codepoint(tok: &str) -> Option<char> {
    let hex = tok.strip_prefix("U+").or_else(|| tok.strip_prefix("u+"))?;
    u32::from_str_radix(hex, 16).ok().and_then(char::from_u32)
}
