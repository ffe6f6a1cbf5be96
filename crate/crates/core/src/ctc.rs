//! Connectionist temporal classification: loss, gradient and decoding.
//!
//! Label id 0 is the blank. Frame scores are per-timestep log-probabilities
//! `[T, K]` with `K = labels + 1`. Dynamic programs run in `f64` log space, where
//! log 0 is represented by [`LOG_ZERO`].

use std::collections::BTreeMap;

use crate::nn::{Real, Tensor};

pub const BLANK: u32 = 0;

/// Stand-in for `ln 0`. Any log-sum-exp result at or below it is clamped back to it.
pub const LOG_ZERO: f64 = -1e30;

/// Largest number of paths [`brute_force_prob`] will enumerate.
pub const MAX_ENUMERATED_PATHS: u64 = 10_000_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CtcError {
    #[error("target needs {required} frames but only {frames} are available")]
    InfeasibleTarget { required: usize, frames: usize },
    #[error("label {label} is out of range for {classes} classes (blank is not a valid target label)")]
    InvalidLabel { label: u32, classes: usize },
    #[error("enumerating {classes}^{frames} paths exceeds the limit of {MAX_ENUMERATED_PATHS}")]
    TooLarge { classes: usize, frames: usize },
    #[error("expected [T, K] frame scores with T >= 1 and K >= 2, got {0:?}")]
    Shape(Vec<usize>),
}

pub type Result<T> = std::result::Result<T, CtcError>;

/// Merges adjacent repeats, then drops blanks.
pub fn collapse(path: &[u32]) -> Vec<u32> {
    let mut out = Vec::new();
    let mut prev = None;
    for &k in path {
        if Some(k) != prev && k != BLANK {
            out.push(k);
        }
        prev = Some(k);
    }
    out
}

/// Fewest frames that can emit `target`: one per label plus a blank between equal neighbours.
pub fn required_frames(target: &[u32]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

fn log_add(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m <= LOG_ZERO {
        return LOG_ZERO;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn dims<F: Real>(scores: &Tensor<F>) -> Result<(usize, usize)> {
    match *scores.shape() {
        [t, k] if t >= 1 && k >= 2 => Ok((t, k)),
        ref s => Err(CtcError::Shape(s.to_vec())),
    }
}

fn check_target(target: &[u32], classes: usize) -> Result<()> {
    match target.iter().find(|&&l| l == BLANK || l as usize >= classes) {
        Some(&label) => Err(CtcError::InvalidLabel { label, classes }),
        None => Ok(()),
    }
}

#[derive(Clone, Debug)]
pub struct CtcResult<F> {
    /// `−ln p(target | x)` in nats.
    pub nll: f64,
    /// Gradient of `nll` w.r.t. the pre-softmax logits, `[T, K]`.
    pub grad: Tensor<F>,
}

/// Loss and logit gradient for one sequence. Rows of `logprobs` must be log-distributions.
///
/// The gradient is `softmax − posterior`, where the posterior is the occupation
/// probability of each label at each frame among paths collapsing to `target`.
pub fn ctc_loss<F: Real>(logprobs: &Tensor<F>, target: &[u32]) -> Result<CtcResult<F>> {
    let (t_len, k) = dims(logprobs)?;
    check_target(target, k)?;
    let required = required_frames(target);
    if required > t_len {
        return Err(CtcError::InfeasibleTarget {
            required,
            frames: t_len,
        });
    }
    let lp: Vec<f64> = logprobs.data().iter().map(|v| v.as_f64().max(LOG_ZERO)).collect();
    // Blank-augmented target: blank, l1, blank, l2, ..., blank.
    let ext: Vec<u32> = std::iter::once(BLANK)
        .chain(target.iter().flat_map(|&l| [l, BLANK]))
        .collect();
    let s_len = ext.len();
    let y = |t: usize, s: usize| lp[t * k + ext[s] as usize];
    // Whether state s may be entered from s − 2 (skipping a blank).
    let can_skip = |s: usize| s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2];

    let mut alpha = vec![LOG_ZERO; t_len * s_len];
    alpha[0] = y(0, 0);
    if s_len > 1 {
        alpha[1] = y(0, 1);
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let prev = &alpha[(t - 1) * s_len..t * s_len];
            let mut a = prev[s];
            if s >= 1 {
                a = log_add(a, prev[s - 1]);
            }
            if can_skip(s) {
                a = log_add(a, prev[s - 2]);
            }
            alpha[t * s_len + s] = if a <= LOG_ZERO { LOG_ZERO } else { a + y(t, s) };
        }
    }
    let last = (t_len - 1) * s_len;
    let log_p = if s_len > 1 {
        log_add(alpha[last + s_len - 1], alpha[last + s_len - 2])
    } else {
        alpha[last]
    };

    let mut beta = vec![LOG_ZERO; t_len * s_len];
    beta[last + s_len - 1] = y(t_len - 1, s_len - 1);
    if s_len > 1 {
        beta[last + s_len - 2] = y(t_len - 1, s_len - 2);
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let next = &beta[(t + 1) * s_len..(t + 2) * s_len];
            let mut b = next[s];
            if s + 1 < s_len {
                b = log_add(b, next[s + 1]);
            }
            if s + 2 < s_len && can_skip(s + 2) {
                b = log_add(b, next[s + 2]);
            }
            beta[t * s_len + s] = if b <= LOG_ZERO { LOG_ZERO } else { b + y(t, s) };
        }
    }

    let mut grad = vec![F::zero(); t_len * k];
    let mut occupancy = vec![LOG_ZERO; k];
    for t in 0..t_len {
        occupancy.iter_mut().for_each(|o| *o = LOG_ZERO);
        for s in 0..s_len {
            let (a, b) = (alpha[t * s_len + s], beta[t * s_len + s]);
            if a > LOG_ZERO && b > LOG_ZERO {
                let l = ext[s] as usize;
                occupancy[l] = log_add(occupancy[l], a + b - y(t, s));
            }
        }
        for c in 0..k {
            let post = if occupancy[c] > LOG_ZERO {
                (occupancy[c] - log_p).exp()
            } else {
                0.0
            };
            grad[t * k + c] = F::lit(lp[t * k + c].exp() - post);
        }
    }
    Ok(CtcResult {
        nll: -log_p,
        grad: Tensor::from_vec(&[t_len, k], grad).expect("shape matches"),
    })
}

/// Calls `visit(path, probability)` for every one of the `K^T` frame-label paths.
fn enumerate_paths(probs: &Tensor<f64>, mut visit: impl FnMut(&[u32], f64)) -> Result<()> {
    let (t_len, k) = dims(probs)?;
    let total = (k as u64).checked_pow(t_len as u32);
    if total.is_none_or(|n| n > MAX_ENUMERATED_PATHS) {
        return Err(CtcError::TooLarge {
            classes: k,
            frames: t_len,
        });
    }
    let mut path = vec![0u32; t_len];
    loop {
        let p: f64 = path
            .iter()
            .enumerate()
            .map(|(t, &c)| probs.data()[t * k + c as usize])
            .product();
        visit(&path, p);
        // Odometer increment, last frame fastest.
        let mut t = t_len;
        loop {
            if t == 0 {
                return Ok(());
            }
            t -= 1;
            path[t] += 1;
            if (path[t] as usize) < k {
                break;
            }
            path[t] = 0;
        }
    }
}

/// `p(target)` by summing the probability of every path that collapses to it.
/// `probs` holds per-frame probabilities (not logs).
pub fn brute_force_prob(probs: &Tensor<f64>, target: &[u32]) -> Result<f64> {
    let mut sum = 0.0;
    enumerate_paths(probs, |path, p| {
        if collapse(path) == target {
            sum += p;
        }
    })?;
    Ok(sum)
}

/// Probability of every label sequence reachable from `probs`, including the empty one.
pub fn brute_force_distribution(probs: &Tensor<f64>) -> Result<BTreeMap<Vec<u32>, f64>> {
    let mut dist = BTreeMap::new();
    enumerate_paths(probs, |path, p| {
        *dist.entry(collapse(path)).or_insert(0.0) += p;
    })?;
    Ok(dist)
}

/// Best path: per-frame argmax (lowest id on ties), then collapse.
pub fn greedy_decode<F: Real>(logprobs: &Tensor<F>) -> Vec<u32> {
    let (t_len, k) = match *logprobs.shape() {
        [t, k] => (t, k),
        _ => return Vec::new(),
    };
    let path: Vec<u32> = (0..t_len)
        .map(|t| {
            let row = &logprobs.data()[t * k..(t + 1) * k];
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best as u32
        })
        .collect();
    collapse(&path)
}

#[derive(Clone, Copy)]
struct BeamScore {
    blank: f64,
    non_blank: f64,
}

impl BeamScore {
    const EMPTY: BeamScore = BeamScore {
        blank: LOG_ZERO,
        non_blank: LOG_ZERO,
    };

    fn total(&self) -> f64 {
        log_add(self.blank, self.non_blank)
    }
}

/// Prefix beam search without a language model.
///
/// Each prefix tracks the probability of ending in a blank and in its last label.
/// After every frame the `width` most probable prefixes survive (ties broken by
/// prefix order). Width 1 is not guaranteed to equal [`greedy_decode`].
pub fn beam_decode<F: Real>(logprobs: &Tensor<F>, width: usize) -> Vec<u32> {
    let width = width.max(1);
    let (t_len, k) = match *logprobs.shape() {
        [t, k] if t >= 1 => (t, k),
        _ => return Vec::new(),
    };
    let lp = |t: usize, c: usize| logprobs.data()[t * k + c].as_f64().max(LOG_ZERO);
    let mut beam: Vec<(Vec<u32>, BeamScore)> = vec![(
        Vec::new(),
        BeamScore {
            blank: 0.0,
            non_blank: LOG_ZERO,
        },
    )];
    for t in 0..t_len {
        let mut next: BTreeMap<Vec<u32>, BeamScore> = BTreeMap::new();
        for (prefix, score) in &beam {
            let total = score.total();
            let e = next.entry(prefix.clone()).or_insert(BeamScore::EMPTY);
            e.blank = log_add(e.blank, total + lp(t, BLANK as usize));
            let last = prefix.last().copied();
            for c in 1..k as u32 {
                let y = lp(t, c as usize);
                if Some(c) == last {
                    // Repeat without a blank stays on the same prefix.
                    let e = next.get_mut(prefix).expect("inserted above");
                    e.non_blank = log_add(e.non_blank, score.non_blank + y);
                    let mut ext = prefix.clone();
                    ext.push(c);
                    let e = next.entry(ext).or_insert(BeamScore::EMPTY);
                    e.non_blank = log_add(e.non_blank, score.blank + y);
                } else {
                    let mut ext = prefix.clone();
                    ext.push(c);
                    let e = next.entry(ext).or_insert(BeamScore::EMPTY);
                    e.non_blank = log_add(e.non_blank, total + y);
                }
            }
        }
        let mut ranked: Vec<(Vec<u32>, BeamScore)> = next.into_iter().collect();
        ranked.sort_by(|a, b| b.1.total().total_cmp(&a.1.total()).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(width);
        beam = ranked;
    }
    beam.into_iter().next().map(|(p, _)| p).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logs(shape: &[usize], probs: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, probs.iter().map(|p| p.ln()).collect()).unwrap()
    }

    #[test]
    fn collapse_examples() {
        assert_eq!(collapse(&[0, 1, 1, 0, 2, 0]), vec![1, 2]);
        assert_eq!(collapse(&[1, 1, 2]), vec![1, 2]);
        assert_eq!(collapse(&[1, 0, 1, 2]), vec![1, 1, 2]);
        assert!(collapse(&[0, 0]).is_empty());
    }

    #[test]
    fn single_frame_loss() {
        let lp = logs(&[1, 3], &[0.2, 0.5, 0.3]);
        let r = ctc_loss(&lp, &[2]).unwrap();
        assert!((r.nll + 0.3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn two_uniform_frames() {
        let lp = logs(&[2, 2], &[0.5; 4]);
        let r = ctc_loss(&lp, &[1]).unwrap();
        assert!((r.nll + 0.75f64.ln()).abs() < 1e-15);
        let bf = brute_force_prob(&Tensor::from_f64(&[2, 2], &[0.5; 4]).unwrap(), &[1]).unwrap();
        assert!((bf - 0.75).abs() < 1e-15);
    }

    #[test]
    fn repeated_label_needs_a_separating_blank() {
        let lp = logs(&[2, 2], &[0.5; 4]);
        assert_eq!(
            ctc_loss(&lp, &[1, 1]).unwrap_err(),
            CtcError::InfeasibleTarget { required: 3, frames: 2 }
        );
        assert_eq!(required_frames(&[1, 1, 2, 2, 2]), 8);
        let lp3 = logs(&[3, 2], &[0.5; 6]);
        assert!((ctc_loss(&lp3, &[1, 1]).unwrap().nll + 0.125f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn invalid_labels_rejected() {
        let lp = logs(&[2, 2], &[0.5; 4]);
        assert!(matches!(ctc_loss(&lp, &[0]), Err(CtcError::InvalidLabel { .. })));
        assert!(matches!(ctc_loss(&lp, &[2]), Err(CtcError::InvalidLabel { .. })));
    }

    #[test]
    fn one_frame_cannot_emit_two_labels() {
        let p = Tensor::from_f64(&[1, 3], &[0.2, 0.5, 0.3]).unwrap();
        assert_eq!(brute_force_prob(&p, &[1, 2]).unwrap(), 0.0);
    }

    #[test]
    fn enumeration_limit() {
        let p = Tensor::<f64>::full(&[8, 8], 0.125);
        assert!(matches!(brute_force_prob(&p, &[1]), Err(CtcError::TooLarge { .. })));
    }

    #[test]
    fn greedy_examples() {
        // argmaxes a, a, blank, b
        let lp = logs(&[4, 3], &[0.1, 0.8, 0.1, 0.2, 0.7, 0.1, 0.6, 0.2, 0.2, 0.1, 0.1, 0.8]);
        assert_eq!(greedy_decode(&lp), vec![1, 2]);
        let blanks = logs(&[3, 3], &[0.9, 0.05, 0.05, 0.9, 0.05, 0.05, 0.9, 0.05, 0.05]);
        assert!(greedy_decode(&blanks).is_empty());
        assert_eq!(greedy_decode(&logs(&[1, 3], &[0.1, 0.6, 0.3])), vec![1]);
        // ties go to the lowest id
        assert_eq!(greedy_decode(&logs(&[1, 3], &[0.2, 0.4, 0.4])), vec![1]);
    }

    #[test]
    fn beam_single_frame_equals_greedy() {
        let lp = logs(&[1, 4], &[0.1, 0.2, 0.6, 0.1]);
        for w in 1..5 {
            assert_eq!(beam_decode(&lp, w), greedy_decode(&lp));
        }
    }

    #[test]
    fn beam_beats_best_path() {
        // Best path is blank,blank (0.36) but "a" has 0.64 spread over three paths.
        let p = [0.6, 0.4, 0.6, 0.4];
        let lp = logs(&[2, 2], &p);
        assert!(greedy_decode(&lp).is_empty());
        assert_eq!(beam_decode(&lp, 4), vec![1]);
    }
}
