use std::collections::HashMap;

use ctct::eval::{crr, evaluate_manifest, levenshtein, wrr, EvalError, EvalPair, EvalReport, Transcriber};
use ctct::imaging::{save_pgm, Image};
use ctct::synthgen::{DatasetManifest, ManifestRecord};
use proptest::prelude::*;

/// Edit distance straight from the recursive definition (exponential; short strings only).
fn recursive_distance(a: &[char], b: &[char], memo: &mut HashMap<(usize, usize), usize>) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    if let Some(&d) = memo.get(&(a.len(), b.len())) {
        return d;
    }
    let sub = recursive_distance(&a[1..], &b[1..], memo) + usize::from(a[0] != b[0]);
    let del = recursive_distance(&a[1..], b, memo) + 1;
    let ins = recursive_distance(a, &b[1..], memo) + 1;
    let d = sub.min(del).min(ins);
    memo.insert((a.len(), b.len()), d);
    d
}

fn oracle(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    recursive_distance(&a, &b, &mut HashMap::new())
}

/// Short strings over a small mixed alphabet so collisions are common.
fn word() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(vec!['a', 'b', 'c', 'क', 'ख', 'ि']), 0..8)
        .prop_map(|v| v.into_iter().collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn matches_recursive_definition(a in word(), b in word()) {
        prop_assert_eq!(levenshtein(&a, &b), oracle(&a, &b));
    }

    #[test]
    fn is_a_metric(a in word(), b in word(), c in word()) {
        let d = levenshtein(&a, &b);
        prop_assert_eq!(d, levenshtein(&b, &a));
        prop_assert_eq!(d == 0, a == b);
        prop_assert!(levenshtein(&a, &c) <= d + levenshtein(&b, &c));
        let (la, lb) = (a.chars().count(), b.chars().count());
        prop_assert!(la.abs_diff(lb) <= d && d <= la.max(lb));
    }

    #[test]
    fn perfect_words_imply_perfect_characters(words in prop::collection::vec(word().prop_filter("nonempty", |w| !w.is_empty()), 1..6)) {
        let pairs: Vec<EvalPair> = words.iter().map(|w| EvalPair::new(w, w)).collect();
        prop_assert_eq!(wrr(&pairs).unwrap(), 1.0);
        prop_assert_eq!(crr(&pairs).unwrap(), 1.0);
    }

    #[test]
    fn report_aggregates_match_its_records(pairs in prop::collection::vec((word(), word().prop_filter("nonempty", |w| !w.is_empty())), 1..10)) {
        let pairs: Vec<EvalPair> = pairs.iter().map(|(r, g)| EvalPair::new(r, g)).collect();
        let report = EvalReport::from_pairs(&pairs).unwrap();
        let chars: usize = report.records.iter().map(|r| r.pair.truth.chars().count()).sum();
        let dist: usize = report.records.iter().map(|r| levenshtein(&r.pair.recognized, &r.pair.truth)).sum();
        let correct = report.records.iter().filter(|r| r.pair.recognized == r.pair.truth).count();
        prop_assert_eq!(report.crr, (chars as f64 - dist as f64) / chars as f64);
        prop_assert_eq!(report.wrr, correct as f64 / report.records.len() as f64);
        prop_assert!((0.0..=1.0).contains(&report.wrr) && report.crr <= 1.0);
    }
}

/// (recognized, ground truth, hand-computed distance).
const FIXTURE: [(&str, &str, usize); 10] = [
    ("कखग", "कखग", 0),
    ("abd", "abc", 1),
    ("kitten", "sitting", 3),
    ("", "word", 4),
    ("bcd", "a", 3),
    ("hello", "hello", 0),
    ("cafe\u{301}", "caf\u{e9}", 0),
    ("zyx", "xyz", 2),
    ("ba", "ab", 2),
    ("टड", "टठड", 1),
];

#[test]
fn ten_pair_fixture() {
    let pairs: Vec<EvalPair> = FIXTURE.iter().map(|(r, g, _)| EvalPair::new(r, g)).collect();
    for (p, (_, _, d)) in pairs.iter().zip(FIXTURE) {
        assert_eq!(p.distance(), d, "{p:?}");
    }
    // 35 ground-truth codepoints, total distance 16, 3 exact words.
    assert_eq!(crr(&pairs).unwrap(), 19.0 / 35.0);
    assert_eq!(wrr(&pairs).unwrap(), 3.0 / 10.0);
    let report = EvalReport::from_pairs(&pairs).unwrap();
    assert_eq!((report.n_characters, report.total_distance, report.n_correct), (35, 16, 3));
    assert!(report.metric_lines().contains("crr\t0.542857\nwrr\t0.300000\n"));
}

#[test]
fn crr_is_taken_literally() {
    assert_eq!(crr(&[EvalPair::new("bcd", "a")]).unwrap(), -2.0);
    assert_eq!(crr(&[EvalPair::new("abcdefghXY", "abcdefghij")]).unwrap(), 0.8);
    assert!(matches!(wrr(&[]), Err(EvalError::EmptyCorpus)));
}

#[test]
fn ten_thousand_random_pairs() {
    use rand::Rng;
    let mut rng = ctct::rng::rng_from_seed(42);
    let alphabet = ['a', 'b', 'क', 'ख', 'ग', 'ा'];
    let word_of = |rng: &mut ctct::rng::Rng| -> String {
        let n = rng.random_range(0..10);
        (0..n).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect()
    };
    for _ in 0..10_000 {
        let (a, b, c) = (word_of(&mut rng), word_of(&mut rng), word_of(&mut rng));
        let d = levenshtein(&a, &b);
        assert_eq!(d, levenshtein(&b, &a));
        assert_eq!(d == 0, a == b);
        assert!(levenshtein(&a, &c) <= d + levenshtein(&c, &b));
        let (la, lb) = (a.chars().count(), b.chars().count());
        assert!(la.abs_diff(lb) <= d && d <= la.max(lb));
    }
}

struct Constant(&'static str);

impl Transcriber for Constant {
    fn transcribe(&self, _: &Image) -> Result<String, EvalError> {
        Ok(self.0.to_owned())
    }
}

fn manifest_of(words: &[&str], dir: &std::path::Path) -> DatasetManifest {
    std::fs::create_dir_all(dir.join("images")).unwrap();
    let records = words
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let rel = format!("images/{i}.pgm");
            save_pgm(&Image::filled(8, 8, 0.5).unwrap(), &dir.join(&rel)).unwrap();
            ManifestRecord {
                path: rel,
                text: w.to_string(),
            }
        })
        .collect();
    DatasetManifest {
        root: dir.to_owned(),
        base_seed: None,
        config_hash: None,
        records,
    }
}

#[test]
fn stub_transcriber_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest_of(&["कखग"; 5], dir.path());
    let report = evaluate_manifest(&Constant("कखग"), &m).unwrap();
    assert_eq!((report.wrr, report.crr), (1.0, 1.0));
    assert!(report.metric_lines().contains("wrr\t1.000000"));
    let report = evaluate_manifest(&Constant("कख"), &m).unwrap();
    assert_eq!(report.wrr, 0.0);
    assert_eq!(report.crr, (15.0 - 5.0) / 15.0);
}

#[test]
fn empty_manifest_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest_of(&[], dir.path());
    assert!(matches!(evaluate_manifest(&Constant("x"), &m), Err(EvalError::EmptyCorpus)));
}
