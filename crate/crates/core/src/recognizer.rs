//! A trained model plus its label map: image in, text out.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::ctc::{beam_decode, greedy_decode};
use crate::eval::{EvalError, Transcriber};
use crate::imaging::{resize_fixed_height, Image, ImagingError};
use crate::nn::{Checkpoint, Model, NnError, Real, Tensor};
use crate::synthgen::LabelMap;

/// Checkpoint metadata key holding the label alphabet as a `U+XXXX` list.
pub const ALPHABET_KEY: &str = "alphabet";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decoder {
    Greedy,
    /// Prefix beam search of the given width.
    Beam(usize),
}

impl Decoder {
    pub fn decode<F: Real>(&self, logprobs: &Tensor<F>) -> Vec<u32> {
        match *self {
            Decoder::Greedy => greedy_decode(logprobs),
            Decoder::Beam(w) => beam_decode(logprobs, w),
        }
    }
}

impl fmt::Display for Decoder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Decoder::Greedy => f.write_str("greedy"),
            Decoder::Beam(w) => write!(f, "beam:{w}"),
        }
    }
}

impl FromStr for Decoder {
    type Err = String;

    /// `greedy` or `beam:N`.
    fn from_str(s: &str) -> Result<Self, String> {
        match s.split_once(':') {
            None if s == "greedy" => Ok(Decoder::Greedy),
            Some(("beam", w)) => match w.parse() {
                Ok(w) if w >= 1 => Ok(Decoder::Beam(w)),
                _ => Err(format!("bad beam width `{w}`")),
            },
            _ => Err("expected `greedy` or `beam:N`".into()),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RecognizerError {
    #[error(transparent)]
    Model(#[from] NnError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error("checkpoint has no `{ALPHABET_KEY}` entry")]
    MissingAlphabet,
    #[error("bad alphabet in checkpoint: {0}")]
    BadAlphabet(String),
    #[error("model has {classes} output classes but the label map has {labels} labels")]
    LabelMismatch { classes: usize, labels: usize },
}

/// Rescales to `height` rows keeping the aspect ratio (no-op when already that tall).
pub fn fit_height(img: &Image, height: usize) -> Result<Image, ImagingError> {
    if img.height() == height {
        Ok(img.clone())
    } else {
        resize_fixed_height(img, height)
    }
}

pub struct Recognizer<F> {
    pub model: Model<F>,
    pub labels: LabelMap,
    pub decoder: Decoder,
}

impl<F: Real> Recognizer<F> {
    pub fn new(model: Model<F>, labels: LabelMap, decoder: Decoder) -> Result<Self, RecognizerError> {
        let classes = model.config().classes;
        if classes != labels.num_classes() {
            return Err(RecognizerError::LabelMismatch {
                classes,
                labels: labels.num_labels(),
            });
        }
        Ok(Self { model, labels, decoder })
    }

    pub fn from_checkpoint(ck: Checkpoint<F>, decoder: Decoder) -> Result<Self, RecognizerError> {
        let labels = labels_from_meta(&ck.meta)?;
        Self::new(ck.model, labels, decoder)
    }

    /// Log-probabilities for an arbitrary-height grayscale image.
    pub fn logprobs(&self, img: &Image) -> Result<Tensor<F>, RecognizerError> {
        let img = fit_height(img, self.model.config().input_height)?;
        Ok(self.model.infer_image(&img)?)
    }

    pub fn recognize(&self, img: &Image) -> Result<String, RecognizerError> {
        let lp = self.logprobs(img)?;
        Ok(self.labels.decode(&self.decoder.decode(&lp)))
    }
}

pub fn labels_from_meta(meta: &BTreeMap<String, String>) -> Result<LabelMap, RecognizerError> {
    let list = meta.get(ALPHABET_KEY).ok_or(RecognizerError::MissingAlphabet)?;
    LabelMap::parse_codepoint_list(list).map_err(|e| RecognizerError::BadAlphabet(e.to_string()))
}

impl<F: Real> Transcriber for Recognizer<F> {
    fn transcribe(&self, image: &Image) -> Result<String, EvalError> {
        self.recognize(image).map_err(|e| match e {
            RecognizerError::Model(m) => EvalError::Model(m),
            other => EvalError::Transcribe(other.to_string()),
        })
    }

    fn covers(&self, c: char) -> bool {
        self.labels.id(c).is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decoder_parsing() {
        assert_eq!("greedy".parse::<Decoder>().unwrap(), Decoder::Greedy);
        assert_eq!("beam:8".parse::<Decoder>().unwrap(), Decoder::Beam(8));
        assert!("beam:0".parse::<Decoder>().is_err());
        assert!("viterbi".parse::<Decoder>().is_err());
        assert_eq!(Decoder::Beam(3).to_string().parse::<Decoder>().unwrap(), Decoder::Beam(3));
    }
}
