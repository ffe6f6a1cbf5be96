//! Recognition metrics: Levenshtein distance, character and word recognition rates.
//!
//! Strings are NFC-normalized and compared per Unicode codepoint, not per grapheme
//! cluster.
//!
//! `CRR = (nCharacters − Σ distance(RT, GT)) / nCharacters`, with `nCharacters` the
//! total number of ground-truth codepoints; it is not clamped and goes negative when
//! the recognized text is much longer than the truth. `WRR = nCorrect / nWords`.

use std::fmt::Write as _;

use rayon::prelude::*;
use unicode_normalization::UnicodeNormalization;

use crate::imaging::Image;
use crate::nn::NnError;
use crate::synthgen::{DatasetManifest, SynthError};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("evaluation corpus is empty")]
    EmptyCorpus,
    #[error(transparent)]
    Data(#[from] SynthError),
    #[error(transparent)]
    Model(#[from] NnError),
    #[error("transcription failed: {0}")]
    Transcribe(String),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Unit-cost edit distance over codepoints.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = diag + usize::from(ca != cb);
            diag = row[j + 1];
            row[j + 1] = sub.min(row[j] + 1).min(diag + 1);
        }
    }
    row[b.len()]
}

/// Recognized text and ground truth, both NFC-normalized.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalPair {
    pub recognized: String,
    pub truth: String,
}

impl EvalPair {
    pub fn new(recognized: &str, truth: &str) -> Self {
        Self {
            recognized: recognized.nfc().collect(),
            truth: truth.nfc().collect(),
        }
    }

    pub fn distance(&self) -> usize {
        levenshtein(&self.recognized, &self.truth)
    }

    pub fn is_correct(&self) -> bool {
        self.recognized == self.truth
    }
}

pub fn crr(pairs: &[EvalPair]) -> Result<f64> {
    let n: usize = pairs.iter().map(|p| p.truth.chars().count()).sum();
    if n == 0 {
        return Err(EvalError::EmptyCorpus);
    }
    let d: usize = pairs.iter().map(EvalPair::distance).sum();
    Ok((n as f64 - d as f64) / n as f64)
}

pub fn wrr(pairs: &[EvalPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let correct = pairs.iter().filter(|p| p.is_correct()).count();
    Ok(correct as f64 / pairs.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairRecord {
    /// Image path or other identifier.
    pub id: String,
    pub pair: EvalPair,
    pub distance: usize,
    pub correct: bool,
    /// Ground truth contains codepoints the model cannot emit.
    pub out_of_alphabet: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub n_words: usize,
    pub n_characters: usize,
    pub total_distance: usize,
    pub n_correct: usize,
    pub n_out_of_alphabet: usize,
    pub crr: f64,
    pub wrr: f64,
    pub records: Vec<PairRecord>,
}

impl EvalReport {
    pub fn from_records(records: Vec<PairRecord>) -> Result<Self> {
        let n_characters: usize = records.iter().map(|r| r.pair.truth.chars().count()).sum();
        if records.is_empty() || n_characters == 0 {
            return Err(EvalError::EmptyCorpus);
        }
        let total_distance = records.iter().map(|r| r.distance).sum();
        let n_correct = records.iter().filter(|r| r.correct).count();
        let n_words = records.len();
        Ok(Self {
            n_words,
            n_characters,
            total_distance,
            n_correct,
            n_out_of_alphabet: records.iter().filter(|r| r.out_of_alphabet).count(),
            crr: (n_characters as f64 - total_distance as f64) / n_characters as f64,
            wrr: n_correct as f64 / n_words as f64,
            records,
        })
    }

    pub fn from_pairs(pairs: &[EvalPair]) -> Result<Self> {
        let records = pairs
            .iter()
            .enumerate()
            .map(|(i, p)| PairRecord {
                id: i.to_string(),
                pair: p.clone(),
                distance: p.distance(),
                correct: p.is_correct(),
                out_of_alphabet: false,
            })
            .collect();
        Self::from_records(records)
    }

    /// `metric\tvalue` lines.
    pub fn metric_lines(&self) -> String {
        format!(
            "n_words\t{}\nn_characters\t{}\nedit_distance\t{}\nn_correct\t{}\nout_of_alphabet\t{}\ncrr\t{:.6}\nwrr\t{:.6}\n",
            self.n_words,
            self.n_characters,
            self.total_distance,
            self.n_correct,
            self.n_out_of_alphabet,
            self.crr,
            self.wrr
        )
    }

    /// Human-readable summary.
    pub fn table(&self) -> String {
        let rows = [
            ("words", self.n_words.to_string()),
            ("characters", self.n_characters.to_string()),
            ("edit distance", self.total_distance.to_string()),
            ("correct words", self.n_correct.to_string()),
            ("CRR (%)", format!("{:.2}", 100.0 * self.crr)),
            ("WRR (%)", format!("{:.2}", 100.0 * self.wrr)),
        ];
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<15}{v:>10}");
        }
        out
    }

    /// Per-pair dump: `id\tground truth\trecognized\tdistance\tcorrect`.
    pub fn pairs_tsv(&self) -> String {
        let mut out = String::from("# id\tgt\trt\tdistance\tcorrect\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                r.id,
                r.pair.truth,
                r.pair.recognized,
                r.distance,
                u8::from(r.correct)
            );
        }
        out
    }
}

/// Anything that turns a word image into text.
pub trait Transcriber: Sync {
    fn transcribe(&self, image: &Image) -> Result<String>;

    /// Whether the model can emit `c` at all.
    fn covers(&self, _c: char) -> bool {
        true
    }
}

/// Transcribes every manifest record and aggregates CRR/WRR.
///
/// Ground truths containing characters the transcriber cannot emit still count
/// (they can never be fully correct) and are reported with a warning.
pub fn evaluate_manifest<T: Transcriber + ?Sized>(transcriber: &T, manifest: &DatasetManifest) -> Result<EvalReport> {
    if manifest.records.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let records = manifest
        .records
        .par_iter()
        .map(|rec| {
            let img = manifest.load_image(rec)?;
            let text = transcriber.transcribe(&img)?;
            let pair = EvalPair::new(&text, &rec.text);
            Ok(PairRecord {
                id: rec.path.clone(),
                distance: pair.distance(),
                correct: pair.is_correct(),
                out_of_alphabet: !pair.truth.chars().all(|c| transcriber.covers(c)),
                pair,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = EvalReport::from_records(records)?;
    if report.n_out_of_alphabet > 0 {
        log::warn!(
            "{} ground-truth words contain characters outside the model alphabet",
            report.n_out_of_alphabet
        );
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn levenshtein_examples() {
        assert_eq!(levenshtein("", "abc"), 3);
        assert_eq!(levenshtein("abc", "abc"), 0);
        assert_eq!(levenshtein("kitten", "sitting"), 3);
        // Codepoints, not bytes.
        assert_eq!(levenshtein("कखग", "कग"), 1);
    }

    #[test]
    fn nfc_equivalence() {
        // Precomposed vs decomposed: e + combining acute.
        let p = EvalPair::new("e\u{301}", "\u{e9}");
        assert!(p.is_correct());
        assert_eq!(p.distance(), 0);
    }

    #[test]
    fn crr_examples() {
        let p = EvalPair::new("abcdefghXY", "abcdefghij");
        assert_eq!(p.distance(), 2);
        assert!((crr(&[p]).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(crr(&[EvalPair::new("ab", "ab"), EvalPair::new("c", "c")]).unwrap(), 1.0);
        assert_eq!(crr(&[EvalPair::new("bcd", "a")]).unwrap(), -2.0);
        assert!(matches!(crr(&[]), Err(EvalError::EmptyCorpus)));
    }

    #[test]
    fn wrr_examples() {
        let half = [
            EvalPair::new("a", "a"),
            EvalPair::new("b", "b"),
            EvalPair::new("x", "c"),
            EvalPair::new("", "d"),
        ];
        assert_eq!(wrr(&half).unwrap(), 0.5);
        assert_eq!(wrr(&half[..2]).unwrap(), 1.0);
        assert_eq!(wrr(&half[2..]).unwrap(), 0.0);
        assert!(matches!(wrr(&[]), Err(EvalError::EmptyCorpus)));
    }

    #[test]
    fn metric_line_format() {
        let r = EvalReport::from_pairs(&[EvalPair::new("a", "a")]).unwrap();
        assert!(r.metric_lines().contains("wrr\t1.000000\n"));
        assert!(r.metric_lines().contains("crr\t1.000000\n"));
    }
}
