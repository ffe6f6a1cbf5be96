//! Acceptance criteria 1-8. Prints one PASS/FAIL line per criterion and exits nonzero
//! if any fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use ctct::ctc::{brute_force_prob, ctc_loss};
use ctct::eval::{crr, evaluate_manifest, levenshtein, wrr, EvalPair};
use ctct::nn::gradcheck::layer_checks;
use ctct::nn::linear::log_softmax;
use ctct::nn::{Model, ModelConfig};
use ctct::recognizer::{Decoder, Recognizer};
use ctct::rng::{rng_from_seed, Rng};
use ctct::synthgen::toy::{toy_alphabet, toy_setup};
use ctct::synthgen::{generate_dataset, DatasetManifest, GeneratorInputs, LabelMap, RenderRanges};
use ctct::train::{gradcheck_model, load_training_data, run_training, TrainOptions, TrainSession, TrainingData};
use ctct::{Image, Tensor};
use rand::Rng as _;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_logprobs(rng: &mut Rng, t: usize, labels: usize) -> Tensor<f64> {
    let k = labels + 1;
    let z = Tensor::from_vec(&[t, k], (0..t * k).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
    log_softmax(&z).unwrap()
}

fn exp(lp: &Tensor<f64>) -> Tensor<f64> {
    Tensor::from_vec(lp.shape(), lp.data().iter().map(|v| v.exp()).collect()).unwrap()
}

fn ctc_oracle() -> Outcome {
    let mut rng = rng_from_seed(101);
    let start = Instant::now();
    let (mut worst, mut compared, mut infeasible) = (0.0f64, 0, 0);
    for _ in 0..1000 {
        let t = rng.random_range(1..=6);
        let labels = rng.random_range(1..=3);
        let lp = random_logprobs(&mut rng, t, labels);
        let len = rng.random_range(0..=3);
        let target: Vec<u32> = (0..len).map(|_| rng.random_range(1..=labels as u32)).collect();
        let p = brute_force_prob(&exp(&lp), &target).map_err(|e| e.to_string())?;
        match ctc_loss(&lp, &target) {
            Ok(r) => {
                worst = worst.max((r.nll + p.ln()).abs());
                compared += 1;
            }
            Err(_) if p == 0.0 => infeasible += 1,
            Err(e) => return Err(format!("ctc_loss failed on a feasible target: {e}")),
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst <= 1e-9 && compared >= 500 && secs < 10.0,
        format!("{compared} instances (+{infeasible} infeasible), max |diff| {worst:.2e}, {secs:.2} s"),
    )
}

/// Every label sequence over `1..=labels` with length at most `max_len`.
fn all_sequences(labels: u32, max_len: usize) -> Vec<Vec<u32>> {
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..max_len {
        frontier = frontier
            .iter()
            .flat_map(|s: &Vec<u32>| (1..=labels).map(move |l| [s.as_slice(), &[l]].concat()))
            .collect();
        out.extend(frontier.iter().cloned());
    }
    out
}

fn total_probability() -> Outcome {
    let mut rng = rng_from_seed(102);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let t = rng.random_range(1..=5);
        let labels = rng.random_range(1..=3);
        let probs = exp(&random_logprobs(&mut rng, t, labels));
        let mut total = 0.0;
        for seq in all_sequences(labels as u32, t) {
            total += brute_force_prob(&probs, &seq).map_err(|e| e.to_string())?;
        }
        worst = worst.max((total - 1.0).abs());
    }
    check(worst <= 1e-9, format!("100 distributions, max |sum - 1| {worst:.2e}"))
}

fn gradient_integrity() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for c in layer_checks(0, 1e-5) {
        let bound = match c.report.label.as_str() {
            "blstm" => 1e-5,
            "conv2d" | "linear+log_softmax" => 1e-6,
            _ => c.tolerance,
        };
        ok &= c.passed() && c.report.max_rel_error <= bound;
        lines.push(format!("{} {:.1e}", c.report.label, c.report.max_rel_error));
    }
    let m = gradcheck_model(&ModelConfig::tiny(4), 0, 200, 1e-5).map_err(|e| e.to_string())?;
    ok &= m.report.max_rel_error <= 1e-4 && m.negative_control.max_rel_error > 0.1;
    lines.push(format!(
        "tiny model+ctc {:.1e}, negated gradient {:.1e}",
        m.report.max_rel_error, m.negative_control.max_rel_error
    ));
    check(ok, lines.join("; "))
}

fn metric_fixtures() -> Outcome {
    const FIXTURE: [(&str, &str); 10] = [
        ("कखग", "कखग"),
        ("abd", "abc"),
        ("kitten", "sitting"),
        ("", "word"),
        ("bcd", "a"),
        ("hello", "hello"),
        ("cafe\u{301}", "caf\u{e9}"),
        ("zyx", "xyz"),
        ("ba", "ab"),
        ("टड", "टठड"),
    ];
    let pairs: Vec<EvalPair> = FIXTURE.iter().map(|(r, g)| EvalPair::new(r, g)).collect();
    let (c, w) = (crr(&pairs).map_err(|e| e.to_string())?, wrr(&pairs).map_err(|e| e.to_string())?);
    let fixture_ok = c == 19.0 / 35.0 && w == 0.3;

    let mut rng = rng_from_seed(104);
    let alphabet = ['a', 'b', 'c', 'क', 'ख', 'ि'];
    let word = |rng: &mut Rng| -> String {
        let n = rng.random_range(0..10);
        (0..n).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect()
    };
    let mut violations = 0;
    for _ in 0..10_000 {
        let (a, b, x) = (word(&mut rng), word(&mut rng), word(&mut rng));
        let d = levenshtein(&a, &b);
        let (la, lb) = (a.chars().count(), b.chars().count());
        let holds = d == levenshtein(&b, &a)
            && (d == 0) == (a == b)
            && levenshtein(&a, &x) <= d + levenshtein(&x, &b)
            && la.abs_diff(lb) <= d
            && d <= la.max(lb);
        violations += usize::from(!holds);
    }
    check(
        fixture_ok && violations == 0,
        format!("fixture crr {c:.6} wrr {w:.6}; 10000 pairs, {violations} metric violations"),
    )
}

struct Benchmark {
    _dir: tempfile::TempDir,
    labels: LabelMap,
    train: DatasetManifest,
    test: DatasetManifest,
}

const BENCH_EPOCHS: usize = 6;

fn benchmark_data() -> Result<Benchmark, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (vocab, atlas, labels) = toy_setup(1);
    let ranges = RenderRanges::default();
    let inputs = GeneratorInputs {
        vocab: &vocab,
        atlas: &atlas,
        labels: &labels,
        ranges: &ranges,
        backgrounds: &[],
    };
    let train = generate_dataset(&inputs, 5000, 7, &dir.path().join("train")).map_err(|e| e.to_string())?;
    let test = generate_dataset(&inputs, 500, 8, &dir.path().join("test")).map_err(|e| e.to_string())?;
    Ok(Benchmark {
        _dir: dir,
        labels,
        train,
        test,
    })
}

/// Trains `config` for the benchmark budget and returns (held-out WRR, seconds).
fn train_and_score(b: &Benchmark, config: &ModelConfig) -> Result<(f64, f64), String> {
    let start = Instant::now();
    let data: TrainingData<f32> = load_training_data(&b.train, &b.labels, config).map_err(|e| e.to_string())?;
    let mut session = TrainSession::<f32>::new(config, b.labels.clone(), 1).map_err(|e| e.to_string())?;
    let opts = TrainOptions {
        epochs: BENCH_EPOCHS,
        batch_size: 32,
        seed: 3,
        ..Default::default()
    };
    run_training(&mut session, &data, &opts, |_| {}).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let rec = Recognizer::new(session.model, b.labels.clone(), Decoder::Greedy).map_err(|e| e.to_string())?;
    let report = evaluate_manifest(&rec, &b.test).map_err(|e| e.to_string())?;
    Ok((report.wrr, secs))
}

fn pull(path: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![path.to_owned()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(path).unwrap().to_owned(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn ctct(args: &[&str]) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_ctct"))
        .args(args)
        .env_remove("CTCT_NUMERIC")
        .output()
        .map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&o.stderr).into_owned())
    }
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let s = |p: &Path| p.to_str().unwrap().to_owned();
    let mut renders = Vec::new();
    let mut runs = Vec::new();
    for run in ["a", "b"] {
        let data = dir.path().join(run).join("data");
        ctct(&["render", "--toy-vocab-seed", "1", "--count", "64", "--seed", "21", "--out", &s(&data)])?;
        let ck = dir.path().join(run).join("ck");
        ctct(&[
            "--threads", "1", "train", "--manifest", &s(&data.join("manifest.tsv")), "--preset", "tiny",
            "--seed", "22", "--epochs", "2", "--batch-size", "16", "--checkpoint-dir", &s(&ck),
        ])?;
        renders.push(pull(&data));
        runs.push(pull(&ck));
    }
    check(
        renders[0] == renders[1] && runs[0] == runs[1],
        format!("{} dataset files and {} checkpoint/log files compared", renders[0].len(), runs[0].len()),
    )
}

fn shape_contract() -> Outcome {
    let classes = 5;
    let img = Image::filled(32, 100, 0.5).map_err(|e| e.to_string())?;
    let mut shapes = Vec::new();
    for (cfg, want) in [(ModelConfig::standard(classes), 24), (ModelConfig::rnn_only(classes, 32, 2, 512), 100)] {
        let model = Model::<f32>::init(&cfg, &mut rng_from_seed(1)).map_err(|e| e.to_string())?;
        let out = model.infer_image(&img).map_err(|e| e.to_string())?;
        if out.shape() != [want, classes] || cfg.output_len(100) != Some(want) {
            return Err(format!("{:?}: got {:?}, want [{want}, {classes}]", cfg.variant, out.shape()));
        }
        shapes.push(format!("{:?} {:?}", cfg.variant, out.shape()));
    }
    Ok(format!("32x100 input -> {}", shapes.join(", ")))
}

fn report(n: usize, name: &str, outcome: &Outcome) -> bool {
    let (verdict, detail) = match outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("{verdict} criterion {n} ({name}): {detail}");
    outcome.is_ok()
}

fn main() {
    let mut ok = true;
    ok &= report(1, "ctc oracle", &ctc_oracle());
    ok &= report(2, "total probability", &total_probability());
    ok &= report(3, "gradient integrity", &gradient_integrity());
    ok &= report(4, "metric fixtures", &metric_fixtures());

    let (hybrid, rnn) = match benchmark_data() {
        Ok(b) => {
            let classes = b.labels.num_classes();
            let hybrid = train_and_score(&b, &ModelConfig::toy(classes));
            let rnn = train_and_score(&b, &ModelConfig::rnn_only(classes, 32, 2, 64));
            (hybrid, rnn)
        }
        Err(e) => (Err(e.clone()), Err(e)),
    };
    let setup = format!("{} glyphs, 50 words, 5000/500 renders, {BENCH_EPOCHS} epochs", toy_alphabet().len());
    let c5 = hybrid.clone().and_then(|(w, secs)| {
        check(w >= 0.90 && secs <= 1800.0, format!("{setup}: hybrid WRR {w:.3} after {secs:.0} s"))
    });
    ok &= report(5, "toy benchmark", &c5);
    let c6 = match (&hybrid, &rnn) {
        (Ok((h, _)), Ok((r, secs))) => check(
            *h >= r + 0.05,
            format!("hybrid WRR {h:.3} vs rnn-only WRR {r:.3} ({secs:.0} s), margin {:.3}", h - r),
        ),
        (Err(e), _) | (_, Err(e)) => Err(e.clone()),
    };
    ok &= report(6, "hybrid beats rnn-only", &c6);

    ok &= report(7, "determinism", &determinism());
    ok &= report(8, "shape contract", &shape_contract());
    if !ok {
        std::process::exit(1);
    }
}
