//! 2-D cross-correlation, max pooling and ReLU on `[C, H, W]` tensors.

use super::tensor::{gemm, Mat, Real, Tensor};
use super::{NnError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub pad: (usize, usize),
    pub stride: (usize, usize),
}

impl Default for ConvGeometry {
    fn default() -> Self {
        Self {
            pad: (0, 0),
            stride: (1, 1),
        }
    }
}

/// Output extent of a convolution along one axis, if the arithmetic is valid.
pub fn conv_out_len(len: usize, kernel: usize, pad: usize, stride: usize) -> Option<usize> {
    let padded = len + 2 * pad;
    if padded < kernel || stride == 0 || (padded - kernel) % stride != 0 {
        None
    } else {
        Some((padded - kernel) / stride + 1)
    }
}

/// What the backward pass needs from the forward pass.
#[derive(Clone, Debug)]
pub struct ConvCache<F> {
    cols: Vec<F>,
    in_shape: [usize; 3],
    kernel: (usize, usize),
    geom: ConvGeometry,
    out_hw: (usize, usize),
}

pub struct ConvGrads<F> {
    pub dx: Tensor<F>,
    pub dw: Tensor<F>,
    pub db: Tensor<F>,
}

fn dims3<F: Real>(x: &Tensor<F>, what: &str) -> Result<[usize; 3]> {
    match *x.shape() {
        [c, h, w] => Ok([c, h, w]),
        ref s => Err(NnError::Shape(format!("{what}: expected [C, H, W], got {s:?}"))),
    }
}

/// `y[o, i, j] = b[o] + Σ w[o, c, u, v] · x[c, i·sh + u − ph, j·sw + v − pw]`.
pub fn conv2d_forward<F: Real>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    b: &Tensor<F>,
    geom: ConvGeometry,
) -> Result<(Tensor<F>, ConvCache<F>)> {
    let [c_in, h, wd] = dims3(x, "conv2d input")?;
    let (c_out, kh, kw) = match *w.shape() {
        [o, c, kh, kw] if c == c_in => (o, kh, kw),
        ref s => {
            return Err(NnError::Shape(format!(
                "conv2d weight {s:?} does not match {c_in} input channels"
            )))
        }
    };
    if b.shape() != [c_out] {
        return Err(NnError::Shape(format!("conv2d bias {:?}, expected [{c_out}]", b.shape())));
    }
    let (ph, pw) = geom.pad;
    let (sh, sw) = geom.stride;
    let (Some(ho), Some(wo)) = (conv_out_len(h, kh, ph, sh), conv_out_len(wd, kw, pw, sw)) else {
        return Err(NnError::Shape(format!(
            "conv2d {kh}x{kw} kernel (pad {ph},{pw}, stride {sh},{sw}) does not fit {h}x{wd}"
        )));
    };
    let k = c_in * kh * kw;
    let n = ho * wo;
    let xd = x.data();
    let mut cols = vec![F::zero(); k * n];
    for c in 0..c_in {
        for u in 0..kh {
            for v in 0..kw {
                let row = &mut cols[((c * kh + u) * kw + v) * n..][..n];
                for i in 0..ho {
                    let y = (i * sh + u) as isize - ph as isize;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    let src = &xd[(c * h + y as usize) * wd..][..wd];
                    let dst = &mut row[i * wo..(i + 1) * wo];
                    for (j, d) in dst.iter_mut().enumerate() {
                        let xx = (j * sw + v) as isize - pw as isize;
                        if xx >= 0 && xx < wd as isize {
                            *d = src[xx as usize];
                        }
                    }
                }
            }
        }
    }
    let mut out = Vec::with_capacity(c_out * n);
    for &bias in b.data() {
        out.extend(std::iter::repeat_n(bias, n));
    }
    gemm(Mat::new(w.data(), c_out, k), Mat::new(&cols, k, n), F::one(), &mut out);
    let y = Tensor::from_vec(&[c_out, ho, wo], out)?;
    Ok((
        y,
        ConvCache {
            cols,
            in_shape: [c_in, h, wd],
            kernel: (kh, kw),
            geom,
            out_hw: (ho, wo),
        },
    ))
}

pub fn conv2d_backward<F: Real>(cache: &ConvCache<F>, w: &Tensor<F>, dy: &Tensor<F>) -> Result<ConvGrads<F>> {
    let [c_in, h, wd] = cache.in_shape;
    let (kh, kw) = cache.kernel;
    let (ho, wo) = cache.out_hw;
    let c_out = w.dim(0);
    if dy.shape() != [c_out, ho, wo] {
        return Err(NnError::Shape(format!(
            "conv2d output gradient {:?}, expected {:?}",
            dy.shape(),
            [c_out, ho, wo]
        )));
    }
    let k = c_in * kh * kw;
    let n = ho * wo;

    let mut dw = vec![F::zero(); c_out * k];
    gemm(Mat::new(dy.data(), c_out, n), Mat::new(&cache.cols, k, n).t(), F::zero(), &mut dw);
    let db: Vec<F> = dy.data().chunks(n).map(|r| r.iter().copied().sum()).collect();

    let mut dcols = vec![F::zero(); k * n];
    gemm(Mat::new(w.data(), c_out, k).t(), Mat::new(dy.data(), c_out, n), F::zero(), &mut dcols);
    let (ph, pw) = cache.geom.pad;
    let (sh, sw) = cache.geom.stride;
    let mut dx = vec![F::zero(); c_in * h * wd];
    for c in 0..c_in {
        for u in 0..kh {
            for v in 0..kw {
                let row = &dcols[((c * kh + u) * kw + v) * n..][..n];
                for i in 0..ho {
                    let y = (i * sh + u) as isize - ph as isize;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    let dst = &mut dx[(c * h + y as usize) * wd..][..wd];
                    for (j, &g) in row[i * wo..(i + 1) * wo].iter().enumerate() {
                        let xx = (j * sw + v) as isize - pw as isize;
                        if xx >= 0 && xx < wd as isize {
                            dst[xx as usize] += g;
                        }
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        dx: Tensor::from_vec(&[c_in, h, wd], dx)?,
        dw: Tensor::from_vec(w.shape(), dw)?,
        db: Tensor::from_vec(&[c_out], db)?,
    })
}

/// Flat input index of each pooled maximum.
#[derive(Clone, Debug)]
pub struct PoolCache {
    argmax: Vec<usize>,
    in_shape: [usize; 3],
}

/// Non-overlapping max pooling (stride = window). Ties go to the first element in
/// row-major order within the window.
pub fn maxpool2d_forward<F: Real>(x: &Tensor<F>, window: (usize, usize)) -> Result<(Tensor<F>, PoolCache)> {
    let [c, h, w] = dims3(x, "maxpool input")?;
    let (wh, ww) = window;
    if wh == 0 || ww == 0 || h % wh != 0 || w % ww != 0 {
        return Err(NnError::IndivisiblePool {
            height: h,
            width: w,
            window,
        });
    }
    let (ho, wo) = (h / wh, w / ww);
    let xd = x.data();
    let mut out = Vec::with_capacity(c * ho * wo);
    let mut argmax = Vec::with_capacity(c * ho * wo);
    for ch in 0..c {
        for i in 0..ho {
            for j in 0..wo {
                let mut best_idx = (ch * h + i * wh) * w + j * ww;
                let mut best = xd[best_idx];
                for u in 0..wh {
                    for v in 0..ww {
                        let idx = (ch * h + i * wh + u) * w + j * ww + v;
                        if xd[idx] > best {
                            best = xd[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    Ok((
        Tensor::from_vec(&[c, ho, wo], out)?,
        PoolCache {
            argmax,
            in_shape: [c, h, w],
        },
    ))
}

pub fn maxpool2d_backward<F: Real>(cache: &PoolCache, dy: &Tensor<F>) -> Result<Tensor<F>> {
    if dy.len() != cache.argmax.len() {
        return Err(NnError::Shape("maxpool gradient size mismatch".into()));
    }
    let mut dx = Tensor::zeros(&cache.in_shape);
    let d = dx.data_mut();
    for (&idx, &g) in cache.argmax.iter().zip(dy.data()) {
        d[idx] += g;
    }
    Ok(dx)
}

pub fn relu_inplace<F: Real>(x: &mut Tensor<F>) {
    for v in x.data_mut() {
        if *v < F::zero() {
            *v = F::zero();
        }
    }
}

/// Gradient through a ReLU given its output.
pub fn relu_backward<F: Real>(y: &Tensor<F>, dy: &mut Tensor<F>) {
    for (g, &out) in dy.data_mut().iter_mut().zip(y.data()) {
        if out <= F::zero() {
            *g = F::zero();
        }
    }
}

/// Splits a height-1 map `[C, 1, W]` into `W` column vectors: a `[W, C]` matrix whose
/// row `t` is column `t` of the map.
pub fn feature_columns<F: Real>(map: &Tensor<F>) -> Result<Tensor<F>> {
    let [c, h, w] = dims3(map, "feature map")?;
    if h != 1 {
        return Err(NnError::NonUnitHeight(h));
    }
    let d = map.data();
    let mut out = Vec::with_capacity(c * w);
    for t in 0..w {
        out.extend((0..c).map(|ch| d[ch * w + t]));
    }
    Tensor::from_vec(&[w, c], out)
}

/// Inverse of [`feature_columns`] for gradients.
pub fn feature_columns_backward<F: Real>(dcols: &Tensor<F>) -> Result<Tensor<F>> {
    let (w, c) = (dcols.dim(0), dcols.dim(1));
    let d = dcols.data();
    let mut out = vec![F::zero(); c * w];
    for t in 0..w {
        for ch in 0..c {
            out[ch * w + t] = d[t * c + ch];
        }
    }
    Tensor::from_vec(&[c, 1, w], out)
}
