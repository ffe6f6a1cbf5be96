//! Batch normalization over a batch of `[C, ...]` tensors.
//!
//! Samples may differ in their trailing extents (word images differ in width);
//! statistics for channel `c` are taken over every position of every sample.

use super::tensor::{Real, Tensor};
use super::{NnError, Result};

/// Which statistics normalize the input.
#[derive(Clone, Copy, Debug)]
pub enum BnStats<'a, F> {
    /// Batch statistics (training).
    Batch,
    /// Stored running statistics (inference).
    Running { mean: &'a Tensor<F>, var: &'a Tensor<F> },
}

#[derive(Clone, Debug)]
pub struct BnCache<F> {
    xhat: Vec<Tensor<F>>,
    inv_std: Vec<F>,
    count: usize,
    /// Per-channel batch mean (zero in inference mode).
    pub batch_mean: Vec<F>,
    /// Per-channel unbiased batch variance (zero in inference mode).
    pub batch_var: Vec<F>,
}

pub struct BnGrads<F> {
    pub dx: Vec<Tensor<F>>,
    pub dgamma: Tensor<F>,
    pub dbeta: Tensor<F>,
}

fn channel_len<F: Real>(x: &Tensor<F>, c: usize) -> Result<usize> {
    if x.rank() < 1 || x.dim(0) != c {
        return Err(NnError::Shape(format!(
            "batchnorm expects {c} channels, got shape {:?}",
            x.shape()
        )));
    }
    Ok(x.len() / c)
}

/// Normalizes each channel, then scales by `gamma` and shifts by `beta`.
///
/// Batch statistics use the biased variance; the unbiased one is kept in the cache
/// for [`update_running`].
pub fn batchnorm_forward<F: Real>(
    xs: &[Tensor<F>],
    gamma: &Tensor<F>,
    beta: &Tensor<F>,
    eps: F,
    stats: BnStats<'_, F>,
) -> Result<(Vec<Tensor<F>>, BnCache<F>)> {
    let c = gamma.len();
    if beta.len() != c {
        return Err(NnError::Shape("batchnorm gamma/beta size mismatch".into()));
    }
    if xs.is_empty() {
        return Err(NnError::Shape("batchnorm over an empty batch".into()));
    }
    let mut count = 0usize;
    for x in xs {
        count += channel_len(x, c)?;
    }

    let (mean, var, batch_var) = match stats {
        BnStats::Batch => {
            let mut mean = vec![F::zero(); c];
            for x in xs {
                let n = x.len() / c;
                for (ch, m) in mean.iter_mut().enumerate() {
                    *m += x.data()[ch * n..(ch + 1) * n].iter().copied().sum::<F>();
                }
            }
            let cnt = F::lit(count as f64);
            mean.iter_mut().for_each(|m| *m /= cnt);
            let mut var = vec![F::zero(); c];
            for x in xs {
                let n = x.len() / c;
                for (ch, v) in var.iter_mut().enumerate() {
                    let m = mean[ch];
                    *v += x.data()[ch * n..(ch + 1) * n]
                        .iter()
                        .map(|&a| (a - m) * (a - m))
                        .sum::<F>();
                }
            }
            let unbiased: Vec<F> = var
                .iter()
                .map(|&v| if count > 1 { v / (cnt - F::one()) } else { F::zero() })
                .collect();
            var.iter_mut().for_each(|v| *v /= cnt);
            (mean, var, unbiased)
        }
        BnStats::Running { mean, var } => {
            if mean.len() != c || var.len() != c {
                return Err(NnError::Shape("batchnorm running statistics size mismatch".into()));
            }
            (mean.data().to_vec(), var.data().to_vec(), vec![F::zero(); c])
        }
    };

    let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
    let mut ys = Vec::with_capacity(xs.len());
    let mut xhats = Vec::with_capacity(xs.len());
    for x in xs {
        let n = x.len() / c;
        let mut xhat = x.clone();
        let mut y = x.clone();
        for ch in 0..c {
            let (m, s, g, b) = (mean[ch], inv_std[ch], gamma.data()[ch], beta.data()[ch]);
            let xh = &mut xhat.data_mut()[ch * n..(ch + 1) * n];
            for v in xh.iter_mut() {
                *v = (*v - m) * s;
            }
            for (o, &h) in y.data_mut()[ch * n..(ch + 1) * n].iter_mut().zip(xh.iter()) {
                *o = g * h + b;
            }
        }
        ys.push(y);
        xhats.push(xhat);
    }
    let batch_mean = match stats {
        BnStats::Batch => mean,
        BnStats::Running { .. } => vec![F::zero(); c],
    };
    Ok((
        ys,
        BnCache {
            xhat: xhats,
            inv_std,
            count,
            batch_mean,
            batch_var,
        },
    ))
}

/// `running ← momentum·running + (1 − momentum)·batch`, using the unbiased batch variance.
pub fn update_running<F: Real>(cache: &BnCache<F>, mean: &mut Tensor<F>, var: &mut Tensor<F>, momentum: F) {
    let keep = F::one() - momentum;
    for (r, &b) in mean.data_mut().iter_mut().zip(&cache.batch_mean) {
        *r = momentum * *r + keep * b;
    }
    for (r, &b) in var.data_mut().iter_mut().zip(&cache.batch_var) {
        *r = momentum * *r + keep * b;
    }
}

/// Backward pass of train-mode batch normalization.
pub fn batchnorm_backward<F: Real>(cache: &BnCache<F>, gamma: &Tensor<F>, dys: &[Tensor<F>]) -> Result<BnGrads<F>> {
    let c = gamma.len();
    if dys.len() != cache.xhat.len() {
        return Err(NnError::Shape("batchnorm gradient batch size mismatch".into()));
    }
    let mut dgamma = vec![F::zero(); c];
    let mut dbeta = vec![F::zero(); c];
    for (dy, xh) in dys.iter().zip(&cache.xhat) {
        if dy.shape() != xh.shape() {
            return Err(NnError::Shape("batchnorm gradient shape mismatch".into()));
        }
        let n = dy.len() / c;
        for ch in 0..c {
            let r = ch * n..(ch + 1) * n;
            for (&g, &h) in dy.data()[r.clone()].iter().zip(&xh.data()[r]) {
                dbeta[ch] += g;
                dgamma[ch] += g * h;
            }
        }
    }
    // dx = γ·s/N · (N·dy − Σdy − x̂·Σ(dy·x̂))
    let cnt = F::lit(cache.count as f64);
    let mut dx = Vec::with_capacity(dys.len());
    for (dy, xh) in dys.iter().zip(&cache.xhat) {
        let n = dy.len() / c;
        let mut out = dy.clone();
        for ch in 0..c {
            let k = gamma.data()[ch] * cache.inv_std[ch] / cnt;
            let r = ch * n..(ch + 1) * n;
            for (o, &h) in out.data_mut()[r.clone()].iter_mut().zip(&xh.data()[r]) {
                *o = k * (cnt * *o - dbeta[ch] - h * dgamma[ch]);
            }
        }
        dx.push(out);
    }
    Ok(BnGrads {
        dx,
        dgamma: Tensor::from_vec(&[c], dgamma)?,
        dbeta: Tensor::from_vec(&[c], dbeta)?,
    })
}
