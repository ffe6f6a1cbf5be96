//! Synthetic word-image rendering.
//!
//! Words from a [`Vocabulary`] are laid out with glyphs from a [`GlyphAtlas`], distorted
//! by a randomly sampled [`RenderSpec`] (scale, stroke, kerning, skew, rotation,
//! perspective jitter), composited over a uniform or textured background and perturbed
//! with pixel noise. Datasets are written as PGM files plus a tab-separated manifest.

mod atlas;
mod dataset;
mod labels;
mod render;
mod spec;
pub mod toy;

pub use atlas::{Glyph, GlyphAtlas};
pub use dataset::{
    generate_dataset, load_backgrounds, DatasetManifest, GeneratorInputs, ManifestRecord,
    ALPHABET_FILE, CONFIG_SNAPSHOT_FILE, MANIFEST_FILE,
};
pub use labels::{LabelMap, Vocabulary, DEFAULT_PUNCTUATION};
pub use render::render_word;
pub use spec::{sample_render_spec, Background, RenderRanges, RenderSpec, TextureCrop};

use std::path::PathBuf;

use crate::config::ConfigError;
use crate::imaging::ImagingError;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid UTF-8")]
    InvalidUtf8 { path: PathBuf },
    #[error("vocabulary contains no usable words")]
    EmptyVocabulary,
    #[error("invalid word {0:?}: control characters and tabs are not allowed")]
    InvalidWord(String),
    #[error("codepoint U+{:04X} is not in the label map", *.0 as u32)]
    OutOfAlphabet(char),
    #[error("glyph atlas has no glyph for U+{:04X}", *.0 as u32)]
    MissingGlyph(char),
    #[error("word {word:?} renders {width} px wide, above the {cap} px cap")]
    WordTooWide { word: String, width: usize, cap: usize },
    #[error("range `{name}` is inverted: min {min} > max {max}")]
    InvertedRange { name: &'static str, min: f64, max: f64 },
    #[error("invalid render configuration: {0}")]
    InvalidRanges(String),
    #[error("malformed {file} line {line}: {reason}")]
    Malformed { file: String, line: usize, reason: String },
    #[error("dataset count must be at least 1")]
    EmptyDataset,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

pub type Result<T> = std::result::Result<T, SynthError>;

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> SynthError + '_ {
    move |source| SynthError::Io {
        path: path.to_owned(),
        source,
    }
}
