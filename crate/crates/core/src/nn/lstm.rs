//! LSTM and bidirectional LSTM over `[T, D]` sequences, with exact BPTT.
//!
//! Gate rows are stacked in the order input, forget, candidate, output:
//! `a = Wx·x_t + Wh·h_{t−1} + b`, `c_t = f⊙c_{t−1} + i⊙g`, `h_t = o⊙tanh(c_t)`.
//! No peepholes.

use super::tensor::{gemm, Mat, Real, Tensor};
use super::{NnError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LstmWeights<F> {
    /// `[4h, D]`
    pub wx: Tensor<F>,
    /// `[4h, h]`
    pub wh: Tensor<F>,
    /// `[4h]`
    pub b: Tensor<F>,
}

impl<F: Real> LstmWeights<F> {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            wx: Tensor::zeros(&[4 * hidden, input]),
            wh: Tensor::zeros(&[4 * hidden, hidden]),
            b: Tensor::zeros(&[4 * hidden]),
        }
    }

    pub fn hidden(&self) -> usize {
        self.wh.dim(1)
    }

    pub fn input(&self) -> usize {
        self.wx.dim(1)
    }
}

pub struct LstmGrads<F> {
    pub dwx: Tensor<F>,
    pub dwh: Tensor<F>,
    pub db: Tensor<F>,
}

#[derive(Clone, Debug)]
pub struct LstmCache<F> {
    x: Tensor<F>,
    /// Activated gates per timestep, `[T, 4h]`.
    gates: Vec<F>,
    c: Vec<F>,
    tanh_c: Vec<F>,
    h: Vec<F>,
    reverse: bool,
}

fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

fn order(t: usize, reverse: bool) -> Box<dyn Iterator<Item = usize>> {
    if reverse {
        Box::new((0..t).rev())
    } else {
        Box::new(0..t)
    }
}

fn check_weights<F: Real>(w: &LstmWeights<F>, d: usize) -> Result<usize> {
    let h = w.wh.dim(1);
    if w.wh.shape() != [4 * h, h] || w.wx.shape() != [4 * h, d] || w.b.shape() != [4 * h] {
        return Err(NnError::Shape(format!(
            "lstm weights wx {:?} wh {:?} b {:?} for input dim {d}",
            w.wx.shape(),
            w.wh.shape(),
            w.b.shape()
        )));
    }
    Ok(h)
}

fn seq_dims<F: Real>(x: &Tensor<F>) -> Result<(usize, usize)> {
    match *x.shape() {
        [t, d] if t >= 1 => Ok((t, d)),
        ref s => Err(NnError::Shape(format!("lstm expects a non-empty [T, D] sequence, got {s:?}"))),
    }
}

/// Runs one direction; with `reverse` the recurrence starts at the last timestep.
/// Output row `t` is always the hidden state at input position `t`.
pub fn lstm_forward<F: Real>(x: &Tensor<F>, w: &LstmWeights<F>, reverse: bool) -> Result<(Tensor<F>, LstmCache<F>)> {
    let (t_len, d) = seq_dims(x)?;
    let h = check_weights(w, d)?;
    let g4 = 4 * h;
    let mut pre = vec![F::zero(); t_len * g4];
    for row in pre.chunks_mut(g4) {
        row.copy_from_slice(w.b.data());
    }
    gemm(Mat::new(x.data(), t_len, d), Mat::new(w.wx.data(), g4, d).t(), F::one(), &mut pre);

    let mut c = vec![F::zero(); t_len * h];
    let mut tanh_c = vec![F::zero(); t_len * h];
    let mut hs = vec![F::zero(); t_len * h];
    let mut prev: Option<usize> = None;
    for t in order(t_len, reverse) {
        let a = &mut pre[t * g4..(t + 1) * g4];
        if let Some(p) = prev {
            let hp = hs[p * h..(p + 1) * h].to_vec();
            gemm(Mat::new(&hp, 1, h), Mat::new(w.wh.data(), g4, h).t(), F::one(), a);
        }
        for k in 0..h {
            a[k] = sigmoid(a[k]);
            a[h + k] = sigmoid(a[h + k]);
            a[2 * h + k] = a[2 * h + k].tanh();
            a[3 * h + k] = sigmoid(a[3 * h + k]);
            let cp = prev.map_or(F::zero(), |p| c[p * h + k]);
            let ct = a[h + k] * cp + a[k] * a[2 * h + k];
            c[t * h + k] = ct;
            let tc = ct.tanh();
            tanh_c[t * h + k] = tc;
            hs[t * h + k] = a[3 * h + k] * tc;
        }
        prev = Some(t);
    }
    let out = Tensor::from_vec(&[t_len, h], hs.clone())?;
    Ok((
        out,
        LstmCache {
            x: x.clone(),
            gates: pre,
            c,
            tanh_c,
            h: hs,
            reverse,
        },
    ))
}

/// BPTT. `dh` is the loss gradient w.r.t. every output row; returns `dx` and weight gradients.
pub fn lstm_backward<F: Real>(cache: &LstmCache<F>, w: &LstmWeights<F>, dh: &Tensor<F>) -> Result<(Tensor<F>, LstmGrads<F>)> {
    let (t_len, d) = seq_dims(&cache.x)?;
    let h = check_weights(w, d)?;
    if dh.shape() != [t_len, h] {
        return Err(NnError::Shape(format!("lstm output gradient {:?}, expected [{t_len}, {h}]", dh.shape())));
    }
    let g4 = 4 * h;
    let mut da = vec![F::zero(); t_len * g4];
    // Row t holds the hidden state fed into step t (zero for the first step).
    let mut h_prev = vec![F::zero(); t_len * h];
    let mut dh_rec = vec![F::zero(); h];
    let mut dc_next = vec![F::zero(); h];

    let steps: Vec<usize> = order(t_len, cache.reverse).collect();
    for (s, &t) in steps.iter().enumerate().rev() {
        let prev = if s > 0 { Some(steps[s - 1]) } else { None };
        let gates = &cache.gates[t * g4..(t + 1) * g4];
        let dat = &mut da[t * g4..(t + 1) * g4];
        for k in 0..h {
            let (i, f, g, o) = (gates[k], gates[h + k], gates[2 * h + k], gates[3 * h + k]);
            let tc = cache.tanh_c[t * h + k];
            let dht = dh.data()[t * h + k] + dh_rec[k];
            let d_o = dht * tc;
            let dc = dht * o * (F::one() - tc * tc) + dc_next[k];
            let cp = prev.map_or(F::zero(), |p| cache.c[p * h + k]);
            dat[k] = dc * g * i * (F::one() - i);
            dat[h + k] = dc * cp * f * (F::one() - f);
            dat[2 * h + k] = dc * i * (F::one() - g * g);
            dat[3 * h + k] = d_o * o * (F::one() - o);
            dc_next[k] = dc * f;
        }
        match prev {
            Some(p) => {
                h_prev[t * h..(t + 1) * h].copy_from_slice(&cache.h[p * h..(p + 1) * h]);
                gemm(Mat::new(dat, 1, g4), Mat::new(w.wh.data(), g4, h), F::zero(), &mut dh_rec);
            }
            None => dh_rec.iter_mut().for_each(|v| *v = F::zero()),
        }
    }

    let mut dwx = vec![F::zero(); g4 * d];
    gemm(Mat::new(&da, t_len, g4).t(), Mat::new(cache.x.data(), t_len, d), F::zero(), &mut dwx);
    let mut dwh = vec![F::zero(); g4 * h];
    gemm(Mat::new(&da, t_len, g4).t(), Mat::new(&h_prev, t_len, h), F::zero(), &mut dwh);
    let mut db = vec![F::zero(); g4];
    for row in da.chunks(g4) {
        for (acc, &v) in db.iter_mut().zip(row) {
            *acc += v;
        }
    }
    let mut dx = vec![F::zero(); t_len * d];
    gemm(Mat::new(&da, t_len, g4), Mat::new(w.wx.data(), g4, d), F::zero(), &mut dx);
    Ok((
        Tensor::from_vec(&[t_len, d], dx)?,
        LstmGrads {
            dwx: Tensor::from_vec(&[g4, d], dwx)?,
            dwh: Tensor::from_vec(&[g4, h], dwh)?,
            db: Tensor::from_vec(&[g4], db)?,
        },
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlstmWeights<F> {
    pub fwd: LstmWeights<F>,
    pub bwd: LstmWeights<F>,
}

#[derive(Clone, Debug)]
pub struct BlstmCache<F> {
    fwd: LstmCache<F>,
    bwd: LstmCache<F>,
}

pub struct BlstmGrads<F> {
    pub fwd: LstmGrads<F>,
    pub bwd: LstmGrads<F>,
}

/// Output row `t` is `[h_fwd(t) | h_bwd(t)]`.
pub fn blstm_forward<F: Real>(x: &Tensor<F>, w: &BlstmWeights<F>) -> Result<(Tensor<F>, BlstmCache<F>)> {
    let (yf, cf) = lstm_forward(x, &w.fwd, false)?;
    let (yb, cb) = lstm_forward(x, &w.bwd, true)?;
    let (t_len, hf, hb) = (yf.dim(0), yf.dim(1), yb.dim(1));
    let mut out = Vec::with_capacity(t_len * (hf + hb));
    for t in 0..t_len {
        out.extend_from_slice(yf.row(t));
        out.extend_from_slice(yb.row(t));
    }
    Ok((Tensor::from_vec(&[t_len, hf + hb], out)?, BlstmCache { fwd: cf, bwd: cb }))
}

pub fn blstm_backward<F: Real>(cache: &BlstmCache<F>, w: &BlstmWeights<F>, dy: &Tensor<F>) -> Result<(Tensor<F>, BlstmGrads<F>)> {
    let (hf, hb) = (w.fwd.hidden(), w.bwd.hidden());
    let t_len = cache.fwd.x.dim(0);
    if dy.shape() != [t_len, hf + hb] {
        return Err(NnError::Shape(format!("blstm output gradient {:?}, expected [{t_len}, {}]", dy.shape(), hf + hb)));
    }
    let mut dyf = Vec::with_capacity(t_len * hf);
    let mut dyb = Vec::with_capacity(t_len * hb);
    for t in 0..t_len {
        dyf.extend_from_slice(&dy.row(t)[..hf]);
        dyb.extend_from_slice(&dy.row(t)[hf..]);
    }
    let (mut dx, gf) = lstm_backward(&cache.fwd, &w.fwd, &Tensor::from_vec(&[t_len, hf], dyf)?)?;
    let (dxb, gb) = lstm_backward(&cache.bwd, &w.bwd, &Tensor::from_vec(&[t_len, hb], dyb)?)?;
    dx.add_assign(&dxb);
    Ok((dx, BlstmGrads { fwd: gf, bwd: gb }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{check_function, random_tensor};
    use crate::rng::{rng_from_seed, Rng};

    fn random_weights(d: usize, h: usize, rng: &mut Rng) -> LstmWeights<f64> {
        LstmWeights {
            wx: random_tensor(&[4 * h, d], rng, 0.8),
            wh: random_tensor(&[4 * h, h], rng, 0.8),
            b: random_tensor(&[4 * h], rng, 0.5),
        }
    }

    fn pick(w: &mut BlstmWeights<f64>, bwd: bool) -> &mut LstmWeights<f64> {
        if bwd {
            &mut w.bwd
        } else {
            &mut w.fwd
        }
    }

    fn reversed(x: &Tensor<f64>) -> Tensor<f64> {
        let (t, d) = (x.dim(0), x.dim(1));
        let data = (0..t).rev().flat_map(|i| x.row(i).to_vec()).collect();
        Tensor::from_vec(&[t, d], data).unwrap()
    }

    #[test]
    fn zero_network_outputs_zero() {
        let w = BlstmWeights {
            fwd: LstmWeights::<f64>::zeros(3, 2),
            bwd: LstmWeights::zeros(3, 2),
        };
        let x = random_tensor(&[5, 3], &mut rng_from_seed(1), 1.0);
        let (y, _) = blstm_forward(&x, &w).unwrap();
        assert_eq!(y.shape(), &[5, 4]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reversal_symmetry() {
        let mut rng = rng_from_seed(2);
        let a = random_weights(3, 2, &mut rng);
        let b = random_weights(3, 2, &mut rng);
        let x = random_tensor(&[6, 3], &mut rng, 1.0);
        let (y, _) = blstm_forward(&x, &BlstmWeights { fwd: a.clone(), bwd: b.clone() }).unwrap();
        // Swapping the direction weights and reversing the input reverses the output
        // and swaps its halves.
        let (yr, _) = blstm_forward(&reversed(&x), &BlstmWeights { fwd: b, bwd: a }).unwrap();
        for t in 0..6 {
            let (orig, rev) = (y.row(t), yr.row(5 - t));
            assert!((orig[0] - rev[2]).abs() < 1e-14 && (orig[1] - rev[3]).abs() < 1e-14);
            assert!((orig[2] - rev[0]).abs() < 1e-14 && (orig[3] - rev[1]).abs() < 1e-14);
        }
    }

    #[test]
    fn single_step_matches_hand_computation() {
        let mut w = LstmWeights::<f64>::zeros(1, 1);
        w.wx = Tensor::from_f64(&[4, 1], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        w.b = Tensor::from_f64(&[4], &[0.0, 1.0, 0.0, -1.0]).unwrap();
        let x = Tensor::from_f64(&[1, 1], &[0.5]).unwrap();
        let (y, _) = lstm_forward(&x, &w, false).unwrap();
        let s = |v: f64| 1.0 / (1.0 + (-v).exp());
        let c = s(0.5) * 1.5f64.tanh();
        assert!((y.data()[0] - s(1.0) * c.tanh()).abs() < 1e-15);
    }

    #[test]
    fn bptt_matches_finite_differences() {
        let mut rng = rng_from_seed(3);
        let w = BlstmWeights {
            fwd: random_weights(3, 2, &mut rng),
            bwd: random_weights(3, 2, &mut rng),
        };
        let x = random_tensor::<f64>(&[4, 3], &mut rng, 1.0);
        let r = random_tensor::<f64>(&[4, 4], &mut rng, 1.0);
        let loss = |x: &Tensor<f64>, w: &BlstmWeights<f64>| {
            let (y, _) = blstm_forward(x, w).unwrap();
            y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let (_, cache) = blstm_forward(&x, &w).unwrap();
        let (dx, g) = blstm_backward(&cache, &w, &r).unwrap();

        let mut reports = vec![check_function(&x, &dx, |p| loss(p, &w), 1e-5)];
        for (dir, grads) in [(false, &g.fwd), (true, &g.bwd)] {
            reports.push(check_function(&pick(&mut w.clone(), dir).wx, &grads.dwx, |p| {
                let mut v = w.clone();
                pick(&mut v, dir).wx = p.clone();
                loss(&x, &v)
            }, 1e-5));
            reports.push(check_function(&pick(&mut w.clone(), dir).wh, &grads.dwh, |p| {
                let mut v = w.clone();
                pick(&mut v, dir).wh = p.clone();
                loss(&x, &v)
            }, 1e-5));
            reports.push(check_function(&pick(&mut w.clone(), dir).b, &grads.db, |p| {
                let mut v = w.clone();
                pick(&mut v, dir).b = p.clone();
                loss(&x, &v)
            }, 1e-5));
        }
        for r in reports {
            assert!(r.max_rel_error <= 1e-5, "{r}");
        }
    }

    #[test]
    fn rejects_empty_sequence() {
        let w = LstmWeights::<f64>::zeros(3, 2);
        assert!(lstm_forward(&Tensor::zeros(&[0, 3]), &w, false).is_err());
    }
}
