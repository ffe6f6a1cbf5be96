//! Affine output layer and row-wise log-softmax.

use super::tensor::{gemm, Mat, Real, Tensor};
use super::{NnError, Result};

pub struct LinearGrads<F> {
    pub dx: Tensor<F>,
    pub dw: Tensor<F>,
    pub db: Tensor<F>,
}

/// `y = x · wᵀ + b` for `x: [T, D]`, `w: [K, D]`, `b: [K]`.
pub fn linear_forward<F: Real>(x: &Tensor<F>, w: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    let (t, d, k) = linear_dims(x, w, b)?;
    let mut y = Vec::with_capacity(t * k);
    for _ in 0..t {
        y.extend_from_slice(b.data());
    }
    gemm(Mat::new(x.data(), t, d), Mat::new(w.data(), k, d).t(), F::one(), &mut y);
    Tensor::from_vec(&[t, k], y)
}

pub fn linear_backward<F: Real>(x: &Tensor<F>, w: &Tensor<F>, dy: &Tensor<F>) -> Result<LinearGrads<F>> {
    let (t, d) = (x.dim(0), x.dim(1));
    let k = w.dim(0);
    if dy.shape() != [t, k] || w.shape() != [k, d] {
        return Err(NnError::Shape(format!("linear gradient {:?} for x {:?}, w {:?}", dy.shape(), x.shape(), w.shape())));
    }
    let mut dx = vec![F::zero(); t * d];
    gemm(Mat::new(dy.data(), t, k), Mat::new(w.data(), k, d), F::zero(), &mut dx);
    let mut dw = vec![F::zero(); k * d];
    gemm(Mat::new(dy.data(), t, k).t(), Mat::new(x.data(), t, d), F::zero(), &mut dw);
    let mut db = vec![F::zero(); k];
    for row in dy.data().chunks(k) {
        for (acc, &v) in db.iter_mut().zip(row) {
            *acc += v;
        }
    }
    Ok(LinearGrads {
        dx: Tensor::from_vec(&[t, d], dx)?,
        dw: Tensor::from_vec(&[k, d], dw)?,
        db: Tensor::from_vec(&[k], db)?,
    })
}

fn linear_dims<F: Real>(x: &Tensor<F>, w: &Tensor<F>, b: &Tensor<F>) -> Result<(usize, usize, usize)> {
    match (x.shape(), w.shape(), b.shape()) {
        (&[t, d], &[k, d2], &[k2]) if d == d2 && k == k2 => Ok((t, d, k)),
        (xs, ws, bs) => Err(NnError::Shape(format!("linear x {xs:?}, w {ws:?}, b {bs:?}"))),
    }
}

/// Row-wise `y − max(y) − ln Σ exp(y − max(y))`.
pub fn log_softmax<F: Real>(y: &Tensor<F>) -> Result<Tensor<F>> {
    if y.rank() != 2 {
        return Err(NnError::Shape(format!("log_softmax expects [T, K], got {:?}", y.shape())));
    }
    let mut out = y.clone();
    for t in 0..y.dim(0) {
        let row = out.row_mut(t);
        let m = row.iter().copied().fold(F::neg_infinity(), F::max);
        let lse = row.iter().map(|&v| (v - m).exp()).sum::<F>().ln() + m;
        row.iter_mut().for_each(|v| *v -= lse);
    }
    Ok(out)
}

/// Given `logp = log_softmax(y)` and `dlogp`, returns `dy = dlogp − softmax · Σ dlogp`.
pub fn log_softmax_backward<F: Real>(logp: &Tensor<F>, dlogp: &Tensor<F>) -> Result<Tensor<F>> {
    if logp.shape() != dlogp.shape() || logp.rank() != 2 {
        return Err(NnError::Shape("log_softmax gradient shape mismatch".into()));
    }
    let mut dy = dlogp.clone();
    for t in 0..logp.dim(0) {
        let s: F = dlogp.row(t).iter().copied().sum();
        for (d, &lp) in dy.row_mut(t).iter_mut().zip(logp.row(t)) {
            *d -= lp.exp() * s;
        }
    }
    Ok(dy)
}
