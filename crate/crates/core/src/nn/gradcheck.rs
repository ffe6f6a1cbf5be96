//! Central finite-difference gradient checking.

use rand::seq::index::sample;
use rand::Rng as _;

use super::tensor::{Real, Tensor};
use crate::rng::Rng;

/// Magnitudes below this count as this value in the relative-error denominator, so
/// coordinates whose true gradient is zero do not blow up the ratio on rounding noise.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// `|a − n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub label: String,
    pub coords_checked: usize,
    pub max_rel_error: f64,
    pub worst_coord: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
}

impl GradCheckReport {
    fn new(label: String) -> Self {
        Self {
            label,
            coords_checked: 0,
            max_rel_error: 0.0,
            worst_coord: 0,
            analytic_at_worst: 0.0,
            numeric_at_worst: 0.0,
        }
    }

    fn record(&mut self, coord: usize, analytic: f64, numeric: f64) {
        let e = rel_error(analytic, numeric);
        self.coords_checked += 1;
        if e > self.max_rel_error || self.coords_checked == 1 {
            self.max_rel_error = e;
            self.worst_coord = coord;
            self.analytic_at_worst = analytic;
            self.numeric_at_worst = numeric;
        }
    }

    /// Combines reports, keeping the worst coordinate.
    pub fn merge(mut self, other: &GradCheckReport) -> Self {
        self.coords_checked += other.coords_checked;
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst_coord = other.worst_coord;
            self.analytic_at_worst = other.analytic_at_worst;
            self.numeric_at_worst = other.numeric_at_worst;
        }
        self
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}\tcoords={}\tmax_rel_error={:.3e}\tworst={} (analytic {:.6e}, numeric {:.6e})",
            self.label,
            self.coords_checked,
            self.max_rel_error,
            self.worst_coord,
            self.analytic_at_worst,
            self.numeric_at_worst
        )
    }
}

/// A scalar function of a flat coordinate vector that can be nudged in place.
pub trait GradCheckTarget {
    fn label(&self) -> String;
    fn num_coords(&self) -> usize;
    /// Adds `delta` to coordinate `i`.
    fn nudge(&mut self, i: usize, delta: f64);
    fn loss(&self) -> f64;
}

/// Compares `analytic[i]` against `(f(x + eps·eᵢ) − f(x − eps·eᵢ)) / 2eps` on `samples`
/// coordinates drawn without replacement (all of them if there are fewer).
pub fn check_target<T: GradCheckTarget + ?Sized>(
    target: &mut T,
    analytic: &[f64],
    samples: usize,
    eps: f64,
    rng: &mut Rng,
) -> GradCheckReport {
    let n = target.num_coords();
    assert_eq!(analytic.len(), n, "analytic gradient length");
    let mut coords: Vec<usize> = if samples >= n {
        (0..n).collect()
    } else {
        sample(rng, n, samples).into_vec()
    };
    coords.sort_unstable();
    let mut report = GradCheckReport::new(target.label());
    for i in coords {
        target.nudge(i, eps);
        let up = target.loss();
        target.nudge(i, -2.0 * eps);
        let down = target.loss();
        target.nudge(i, eps);
        report.record(i, analytic[i], (up - down) / (2.0 * eps));
    }
    report
}

struct FnTarget<'a, L> {
    x: Tensor<f64>,
    f: &'a L,
}

impl<L: Fn(&Tensor<f64>) -> f64> GradCheckTarget for FnTarget<'_, L> {
    fn label(&self) -> String {
        format!("fn{:?}", self.x.shape())
    }

    fn num_coords(&self) -> usize {
        self.x.len()
    }

    fn nudge(&mut self, i: usize, delta: f64) {
        self.x.data_mut()[i] += delta;
    }

    fn loss(&self) -> f64 {
        (self.f)(&self.x)
    }
}

/// Checks every coordinate of `x` for a closure `f`.
pub fn check_function<L: Fn(&Tensor<f64>) -> f64>(
    x: &Tensor<f64>,
    analytic: &Tensor<f64>,
    f: L,
    eps: f64,
) -> GradCheckReport {
    assert_eq!(x.shape(), analytic.shape(), "analytic gradient shape");
    let mut t = FnTarget { x: x.clone(), f: &f };
    let n = x.len();
    check_target(&mut t, analytic.data(), n, eps, &mut crate::rng::rng_from_seed(0))
}

/// Tensor with entries uniform in `[-scale, scale]`.
pub fn random_tensor<F: Real>(shape: &[usize], rng: &mut Rng, scale: f64) -> Tensor<F> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| F::lit(rng.random_range(-scale..=scale))).collect();
    Tensor::from_vec(shape, data).expect("shape product matches")
}

/// A layer-level check and the largest relative error it may report.
pub struct LayerCheck {
    pub report: GradCheckReport,
    pub tolerance: f64,
}

impl LayerCheck {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error <= self.tolerance
    }
}

fn weighted_sum(ys: &[&Tensor<f64>], rs: &[Tensor<f64>]) -> f64 {
    ys.iter()
        .zip(rs)
        .map(|(y, r)| y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum::<f64>())
        .sum()
}

fn labelled(mut r: GradCheckReport, label: &str) -> GradCheckReport {
    r.label = label.to_owned();
    r
}

/// Finite-difference checks of every layer type against a random linear functional
/// of its output, in 64-bit arithmetic.
pub fn layer_checks(seed: u64, eps: f64) -> Vec<LayerCheck> {
    use super::batchnorm::{batchnorm_backward, batchnorm_forward, BnStats};
    use super::conv::{conv2d_backward, conv2d_forward, maxpool2d_backward, maxpool2d_forward, ConvGeometry};
    use super::linear::{linear_backward, linear_forward, log_softmax, log_softmax_backward};
    use super::lstm::{blstm_backward, blstm_forward, BlstmWeights, LstmWeights};

    let mut rng = crate::rng::rng_from_seed(seed);
    let mut out = Vec::new();

    // conv2d, padded, 2 -> 3 channels
    let geom = ConvGeometry { pad: (1, 1), stride: (1, 1) };
    let x = random_tensor::<f64>(&[2, 5, 6], &mut rng, 1.0);
    let w = random_tensor::<f64>(&[3, 2, 3, 3], &mut rng, 1.0);
    let b = random_tensor::<f64>(&[3], &mut rng, 1.0);
    let r = vec![random_tensor::<f64>(&[3, 5, 6], &mut rng, 1.0)];
    let conv = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| {
        weighted_sum(&[&conv2d_forward(x, w, b, geom).expect("valid shapes").0], &r)
    };
    let (_, cache) = conv2d_forward(&x, &w, &b, geom).expect("valid shapes");
    let g = conv2d_backward(&cache, &w, &r[0]).expect("valid shapes");
    let rep = check_function(&x, &g.dx, |p| conv(p, &w, &b), eps)
        .merge(&check_function(&w, &g.dw, |p| conv(&x, p, &b), eps))
        .merge(&check_function(&b, &g.db, |p| conv(&x, &w, p), eps));
    out.push(LayerCheck { report: labelled(rep, "conv2d"), tolerance: 1e-6 });

    // max pooling with a rectangular window
    let x = random_tensor::<f64>(&[2, 4, 6], &mut rng, 1.0);
    let r = vec![random_tensor::<f64>(&[2, 2, 6], &mut rng, 1.0)];
    let (_, cache) = maxpool2d_forward(&x, (2, 1)).expect("divisible");
    let dx = maxpool2d_backward(&cache, &r[0]).expect("matching size");
    let rep = check_function(&x, &dx, |p| weighted_sum(&[&maxpool2d_forward(p, (2, 1)).expect("divisible").0], &r), eps);
    out.push(LayerCheck { report: labelled(rep, "maxpool2d"), tolerance: 1e-6 });

    // batch norm over samples of different widths
    let xs = vec![random_tensor::<f64>(&[2, 2, 3], &mut rng, 1.0), random_tensor::<f64>(&[2, 2, 5], &mut rng, 1.0)];
    let gamma = random_tensor::<f64>(&[2], &mut rng, 1.0);
    let beta = random_tensor::<f64>(&[2], &mut rng, 1.0);
    let rs: Vec<_> = xs.iter().map(|x| random_tensor::<f64>(x.shape(), &mut rng, 1.0)).collect();
    let bn = |xs: &[Tensor<f64>], g: &Tensor<f64>, b: &Tensor<f64>| {
        let (ys, _) = batchnorm_forward(xs, g, b, 1e-5, BnStats::Batch).expect("valid shapes");
        weighted_sum(&ys.iter().collect::<Vec<_>>(), &rs)
    };
    let (_, cache) = batchnorm_forward(&xs, &gamma, &beta, 1e-5, BnStats::Batch).expect("valid shapes");
    let g = batchnorm_backward(&cache, &gamma, &rs).expect("valid shapes");
    let mut rep = check_function(&gamma, &g.dgamma, |p| bn(&xs, p, &beta), eps)
        .merge(&check_function(&beta, &g.dbeta, |p| bn(&xs, &gamma, p), eps));
    for i in 0..xs.len() {
        rep = rep.merge(&check_function(&xs[i], &g.dx[i], |p| {
            let mut v = xs.clone();
            v[i] = p.clone();
            bn(&v, &gamma, &beta)
        }, eps));
    }
    out.push(LayerCheck { report: labelled(rep, "batchnorm"), tolerance: 1e-5 });

    // BLSTM, T = 4, D = 3, h = 2
    let lstm = |rng: &mut Rng| LstmWeights {
        wx: random_tensor(&[8, 3], rng, 0.8),
        wh: random_tensor(&[8, 2], rng, 0.8),
        b: random_tensor(&[8], rng, 0.5),
    };
    let weights = BlstmWeights { fwd: lstm(&mut rng), bwd: lstm(&mut rng) };
    let x = random_tensor::<f64>(&[4, 3], &mut rng, 1.0);
    let r = vec![random_tensor::<f64>(&[4, 4], &mut rng, 1.0)];
    let blstm = |x: &Tensor<f64>, w: &BlstmWeights<f64>| weighted_sum(&[&blstm_forward(x, w).expect("valid shapes").0], &r);
    let (_, cache) = blstm_forward(&x, &weights).expect("valid shapes");
    let (dx, g) = blstm_backward(&cache, &weights, &r[0]).expect("valid shapes");
    let mut rep = check_function(&x, &dx, |p| blstm(p, &weights), eps);
    for (bwd, grads) in [(false, &g.fwd), (true, &g.bwd)] {
        let part = |w: &BlstmWeights<f64>| if bwd { w.bwd.clone() } else { w.fwd.clone() };
        let with = |lw: LstmWeights<f64>| {
            let mut w = weights.clone();
            if bwd { w.bwd = lw } else { w.fwd = lw }
            w
        };
        let base = part(&weights);
        rep = rep
            .merge(&check_function(&base.wx, &grads.dwx, |p| blstm(&x, &with(LstmWeights { wx: p.clone(), ..base.clone() })), eps))
            .merge(&check_function(&base.wh, &grads.dwh, |p| blstm(&x, &with(LstmWeights { wh: p.clone(), ..base.clone() })), eps))
            .merge(&check_function(&base.b, &grads.db, |p| blstm(&x, &with(LstmWeights { b: p.clone(), ..base.clone() })), eps));
    }
    out.push(LayerCheck { report: labelled(rep, "blstm"), tolerance: 1e-5 });

    // linear + log-softmax
    let x = random_tensor::<f64>(&[3, 4], &mut rng, 1.0);
    let w = random_tensor::<f64>(&[5, 4], &mut rng, 1.0);
    let b = random_tensor::<f64>(&[5], &mut rng, 1.0);
    let r = vec![random_tensor::<f64>(&[3, 5], &mut rng, 1.0)];
    let lin = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| {
        let lp = log_softmax(&linear_forward(x, w, b).expect("valid shapes")).expect("rank 2");
        weighted_sum(&[&lp], &r)
    };
    let lp = log_softmax(&linear_forward(&x, &w, &b).expect("valid shapes")).expect("rank 2");
    let dy = log_softmax_backward(&lp, &r[0]).expect("matching shapes");
    let g = linear_backward(&x, &w, &dy).expect("valid shapes");
    let rep = check_function(&x, &g.dx, |p| lin(p, &w, &b), eps)
        .merge(&check_function(&w, &g.dw, |p| lin(&x, p, &b), eps))
        .merge(&check_function(&b, &g.db, |p| lin(&x, &w, p), eps));
    out.push(LayerCheck { report: labelled(rep, "linear+log_softmax"), tolerance: 1e-7 });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_passes_and_sign_flip_fails() {
        let x = Tensor::<f64>::from_f64(&[3], &[0.5, -1.0, 2.0]).unwrap();
        let f = |p: &Tensor<f64>| p.data().iter().map(|v| v * v * v).sum::<f64>();
        let good = Tensor::from_f64(&[3], &[0.75, 3.0, 12.0]).unwrap();
        assert!(check_function(&x, &good, f, 1e-5).max_rel_error < 1e-8);
        let mut bad = good.clone();
        bad.scale(-1.0);
        let r = check_function(&x, &bad, f, 1e-5);
        assert!(r.max_rel_error > 1.0, "{r}");
    }

    #[test]
    fn all_layers_pass() {
        for c in layer_checks(7, 1e-5) {
            assert!(c.passed(), "{} (tolerance {:e})", c.report, c.tolerance);
        }
    }

    #[test]
    fn rel_error_floor() {
        assert_eq!(rel_error(0.0, 0.0), 0.0);
        assert!(rel_error(1e-12, -1e-12) < 1e-5);
        assert!((rel_error(1.0, 2.0) - 0.5).abs() < 1e-15);
    }
}
