//! A small self-contained benchmark setup: twelve Devanagari consonants drawn with
//! procedural glyphs and a seeded 50-word vocabulary over them.

use std::collections::BTreeSet;

use rand::Rng as _;

use super::{GlyphAtlas, LabelMap, Vocabulary};
use crate::rng::rng_from_seed;

pub const TOY_VOCAB_SIZE: usize = 50;
pub const TOY_GLYPH_HEIGHT: usize = 16;
pub const TOY_MIN_WORD_LEN: usize = 3;
pub const TOY_MAX_WORD_LEN: usize = 6;

/// U+0915 (KA) through U+0920 (TTHA).
pub fn toy_alphabet() -> Vec<char> {
    (0x915..=0x920).filter_map(char::from_u32).collect()
}

/// `TOY_VOCAB_SIZE` distinct words of 3 to 6 letters.
pub fn toy_vocabulary(seed: u64) -> Vocabulary {
    let alphabet = toy_alphabet();
    let mut rng = rng_from_seed(seed);
    let mut seen = BTreeSet::new();
    let mut words = Vec::with_capacity(TOY_VOCAB_SIZE);
    while words.len() < TOY_VOCAB_SIZE {
        let len = rng.random_range(TOY_MIN_WORD_LEN..=TOY_MAX_WORD_LEN);
        let w: String = (0..len)
            .map(|_| alphabet[rng.random_range(0..alphabet.len())])
            .collect();
        if seen.insert(w.clone()) {
            words.push(w);
        }
    }
    Vocabulary::from_words(words).expect("toy words are valid")
}

pub fn toy_atlas() -> GlyphAtlas {
    GlyphAtlas::procedural(&toy_alphabet(), TOY_GLYPH_HEIGHT)
}

/// Vocabulary, atlas and label map (no punctuation) for the toy benchmark.
pub fn toy_setup(seed: u64) -> (Vocabulary, GlyphAtlas, LabelMap) {
    let vocab = toy_vocabulary(seed);
    let labels = LabelMap::build(&vocab, "");
    (vocab, toy_atlas(), labels)
}
