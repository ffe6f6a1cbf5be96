//! The CNN-BLSTM recognizer and its rnn-only baseline.
//!
//! Hybrid: `[1, H, W]` image → conv stack (conv → BN → ReLU → pool) → `[C, 1, T]`
//! → column features `[T, C]` → BLSTM layers → linear → log-softmax `[T, K]`.
//! Rnn-only: the `H`-pixel columns of the image feed the BLSTM layers directly.
//!
//! Batches are processed layer by layer so batch normalization sees the whole
//! batch; within a layer samples run in parallel. Per-sample gradients are summed in
//! sample order, so results do not depend on the number of threads.

use rand::Rng as _;
use rayon::prelude::*;

use super::batchnorm::{batchnorm_backward, batchnorm_forward, update_running, BnCache, BnStats};
use super::config::{ConvLayerSpec, ModelConfig, Variant};
use super::conv::{
    conv2d_backward, conv2d_forward, feature_columns, feature_columns_backward, maxpool2d_backward,
    maxpool2d_forward, relu_backward, relu_inplace, ConvCache, ConvGeometry, PoolCache,
};
use super::linear::{linear_backward, linear_forward, log_softmax};
use super::lstm::{blstm_backward, blstm_forward, BlstmCache, BlstmWeights, LstmWeights};
use super::tensor::{Real, Tensor};
use super::{NnError, Result};
use crate::imaging::Image;
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormParams<F> {
    pub gamma: Tensor<F>,
    pub beta: Tensor<F>,
    pub running_mean: Tensor<F>,
    pub running_var: Tensor<F>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<F> {
    pub spec: ConvLayerSpec,
    /// `[C_out, C_in, kh, kw]`
    pub weight: Tensor<F>,
    pub bias: Tensor<F>,
    pub bn: Option<BatchNormParams<F>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm; caches kept for backward.
    Train,
    /// Running statistics in batch norm.
    Infer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<F> {
    config: ModelConfig,
    pub conv: Vec<ConvLayer<F>>,
    pub blstm: Vec<BlstmWeights<F>>,
    /// `[K, 2h]`
    pub out_weight: Tensor<F>,
    pub out_bias: Tensor<F>,
}

struct ConvStep<F> {
    conv: Vec<ConvCache<F>>,
    bn: Option<BnCache<F>>,
    /// Post-ReLU, pre-pool activations.
    act: Vec<Tensor<F>>,
    pool: Option<Vec<PoolCache>>,
}

/// Everything [`Model::backward`] needs from [`Model::forward`].
pub struct ForwardCache<F> {
    conv: Vec<ConvStep<F>>,
    blstm: Vec<Vec<BlstmCache<F>>>,
    head_in: Vec<Tensor<F>>,
}

impl<F> ForwardCache<F> {
    pub fn batch_size(&self) -> usize {
        self.head_in.len()
    }
}

fn par_map<T: Sync, U: Send>(items: &[T], f: impl Fn(usize, &T) -> Result<U> + Sync + Send) -> Result<Vec<U>> {
    items.par_iter().enumerate().map(|(i, x)| f(i, x)).collect()
}

/// Sums tensors in slice order.
fn fold_sum<F: Real>(parts: impl IntoIterator<Item = Tensor<F>>) -> Option<Tensor<F>> {
    let mut it = parts.into_iter();
    let mut acc = it.next()?;
    for t in it {
        acc.add_assign(&t);
    }
    Some(acc)
}

fn xavier<F: Real>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor<F> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| F::lit(rng.random_range(-limit..limit))).collect();
    Tensor::from_vec(shape, data).expect("shape product matches")
}

fn lstm_init<F: Real>(input: usize, hidden: usize, rng: &mut Rng) -> LstmWeights<F> {
    let mut w = LstmWeights::zeros(input, hidden);
    w.wx = xavier(&[4 * hidden, input], input, 4 * hidden, rng);
    w.wh = xavier(&[4 * hidden, hidden], hidden, 4 * hidden, rng);
    // Gate order i, f, g, o: forget-gate bias starts at 1.
    w.b.data_mut()[hidden..2 * hidden].iter_mut().for_each(|v| *v = F::one());
    w
}

impl<F: Real> Model<F> {
    /// All-zero weights with the right shapes (unit running variance).
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut conv = Vec::new();
        if config.variant == Variant::Hybrid {
            let mut c_in = 1;
            for spec in &config.conv {
                let c = spec.out_channels;
                conv.push(ConvLayer {
                    spec: *spec,
                    weight: Tensor::zeros(&[c, c_in, spec.kernel.0, spec.kernel.1]),
                    bias: Tensor::zeros(&[c]),
                    bn: spec.batch_norm.then(|| BatchNormParams {
                        gamma: Tensor::full(&[c], F::one()),
                        beta: Tensor::zeros(&[c]),
                        running_mean: Tensor::zeros(&[c]),
                        running_var: Tensor::full(&[c], F::one()),
                    }),
                });
                c_in = c;
            }
        }
        let h = config.hidden_per_direction();
        let mut input = config.feature_dim();
        let mut blstm = Vec::new();
        for _ in 0..config.blstm_layers {
            blstm.push(BlstmWeights {
                fwd: LstmWeights::zeros(input, h),
                bwd: LstmWeights::zeros(input, h),
            });
            input = 2 * h;
        }
        Ok(Self {
            config: config.clone(),
            conv,
            blstm,
            out_weight: Tensor::zeros(&[config.classes, input]),
            out_bias: Tensor::zeros(&[config.classes]),
        })
    }

    /// Xavier-uniform weights, zero biases, forget-gate biases 1, unit BN scale.
    pub fn init(config: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        let mut m = Self::zeros(config)?;
        for layer in &mut m.conv {
            let [c_out, c_in, kh, kw] = [layer.weight.dim(0), layer.weight.dim(1), layer.weight.dim(2), layer.weight.dim(3)];
            layer.weight = xavier(layer.weight.shape(), c_in * kh * kw, c_out * kh * kw, rng);
        }
        for layer in &mut m.blstm {
            let (d, h) = (layer.fwd.input(), layer.fwd.hidden());
            layer.fwd = lstm_init(d, h, rng);
            layer.bwd = lstm_init(d, h, rng);
        }
        let (k, d) = (m.out_weight.dim(0), m.out_weight.dim(1));
        m.out_weight = xavier(&[k, d], d, k, rng);
        Ok(m)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Trainable tensors in a fixed order shared by [`Model::params_mut`] and
    /// [`Model::backward`].
    pub fn named_params(&self) -> Vec<(String, &Tensor<F>)> {
        let mut out = Vec::new();
        for (i, l) in self.conv.iter().enumerate() {
            let n = i + 1;
            out.push((format!("conv{n}.weight"), &l.weight));
            out.push((format!("conv{n}.bias"), &l.bias));
            if let Some(bn) = &l.bn {
                out.push((format!("conv{n}.bn.gamma"), &bn.gamma));
                out.push((format!("conv{n}.bn.beta"), &bn.beta));
            }
        }
        for (i, l) in self.blstm.iter().enumerate() {
            for (dir, w) in [("fwd", &l.fwd), ("bwd", &l.bwd)] {
                out.push((format!("blstm{}.{dir}.wx", i + 1), &w.wx));
                out.push((format!("blstm{}.{dir}.wh", i + 1), &w.wh));
                out.push((format!("blstm{}.{dir}.b", i + 1), &w.b));
            }
        }
        out.push(("out.weight".into(), &self.out_weight));
        out.push(("out.bias".into(), &self.out_bias));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<F>> {
        let mut out = Vec::new();
        for l in &mut self.conv {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
            if let Some(bn) = &mut l.bn {
                out.push(&mut bn.gamma);
                out.push(&mut bn.beta);
            }
        }
        for l in &mut self.blstm {
            for w in [&mut l.fwd, &mut l.bwd] {
                out.push(&mut w.wx);
                out.push(&mut w.wh);
                out.push(&mut w.b);
            }
        }
        out.push(&mut self.out_weight);
        out.push(&mut self.out_bias);
        out
    }

    /// Non-trainable state (batch-norm running statistics).
    pub fn named_buffers(&self) -> Vec<(String, &Tensor<F>)> {
        let mut out = Vec::new();
        for (i, l) in self.conv.iter().enumerate() {
            if let Some(bn) = &l.bn {
                out.push((format!("conv{}.bn.running_mean", i + 1), &bn.running_mean));
                out.push((format!("conv{}.bn.running_var", i + 1), &bn.running_var));
            }
        }
        out
    }

    fn buffers_mut(&mut self) -> Vec<&mut Tensor<F>> {
        let mut out = Vec::new();
        for l in &mut self.conv {
            if let Some(bn) = &mut l.bn {
                out.push(&mut bn.running_mean);
                out.push(&mut bn.running_var);
            }
        }
        out
    }

    /// Parameter or buffer by name.
    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor<F>> {
        let names: Vec<String> = self
            .named_params()
            .into_iter()
            .chain(self.named_buffers())
            .map(|(n, _)| n)
            .collect();
        let idx = names.iter().position(|n| n == name)?;
        let n_params = self.params_mut().len();
        if idx < n_params {
            self.params_mut().into_iter().nth(idx)
        } else {
            self.buffers_mut().into_iter().nth(idx - n_params)
        }
    }

    pub fn num_params(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }

    /// Converts every tensor to another scalar type.
    pub fn cast<G: Real>(&self) -> Model<G> {
        Model {
            config: self.config.clone(),
            conv: self
                .conv
                .iter()
                .map(|l| ConvLayer {
                    spec: l.spec,
                    weight: l.weight.cast(),
                    bias: l.bias.cast(),
                    bn: l.bn.as_ref().map(|b| BatchNormParams {
                        gamma: b.gamma.cast(),
                        beta: b.beta.cast(),
                        running_mean: b.running_mean.cast(),
                        running_var: b.running_var.cast(),
                    }),
                })
                .collect(),
            blstm: self
                .blstm
                .iter()
                .map(|l| BlstmWeights {
                    fwd: cast_lstm(&l.fwd),
                    bwd: cast_lstm(&l.bwd),
                })
                .collect(),
            out_weight: self.out_weight.cast(),
            out_bias: self.out_bias.cast(),
        }
    }

    /// Normalizes `(x − 0.5) / 0.5` and right-pads by repeating the last column up to
    /// a multiple of the pool widths. The image must already have the model's height.
    pub fn prepare_input(&self, img: &Image) -> Result<Tensor<F>> {
        let h = self.config.input_height;
        if img.height() != h {
            return Err(NnError::InputHeight {
                got: img.height(),
                expected: h,
            });
        }
        let data = img.pixels().iter().map(|&v| F::lit((v as f64 - 0.5) / 0.5)).collect();
        self.prepare_input_tensor(Tensor::from_vec(&[1, h, img.width()], data)?)
    }

    /// Pads an already normalized `[1, H, W]` tensor as [`Model::prepare_input`] does.
    pub fn prepare_input_tensor(&self, x: Tensor<F>) -> Result<Tensor<F>> {
        let (h, w) = match *x.shape() {
            [1, h, w] if h == self.config.input_height => (h, w),
            ref s => {
                return Err(NnError::Shape(format!(
                    "expected [1, {}, W] input, got {s:?}",
                    self.config.input_height
                )))
            }
        };
        let min = self.config.min_width();
        if w < min {
            return Err(NnError::InputTooNarrow { width: w, min });
        }
        let wp = self.config.padded_width(w);
        if wp == w {
            return Ok(x);
        }
        let d = x.data();
        let mut data = Vec::with_capacity(h * wp);
        for y in 0..h {
            let row = &d[y * w..(y + 1) * w];
            data.extend_from_slice(row);
            data.extend(std::iter::repeat_n(row[w - 1], wp - w));
        }
        Tensor::from_vec(&[1, h, wp], data)
    }

    fn check_input(&self, x: &Tensor<F>) -> Result<()> {
        let h = self.config.input_height;
        match *x.shape() {
            [1, hh, w] if hh == h && self.config.output_len(w).is_some() && self.config.padded_width(w) == w => Ok(()),
            [1, hh, _] if hh != h => Err(NnError::InputHeight { got: hh, expected: h }),
            ref s => Err(NnError::Shape(format!(
                "model input {s:?} is not a prepared [1, {h}, W] tensor"
            ))),
        }
    }

    /// Log-probabilities `[T, K]` for each input produced by [`Model::prepare_input`].
    pub fn forward(&self, inputs: &[Tensor<F>], mode: Mode) -> Result<(Vec<Tensor<F>>, ForwardCache<F>)> {
        if inputs.is_empty() {
            return Err(NnError::Shape("empty batch".into()));
        }
        for x in inputs {
            self.check_input(x)?;
        }
        let mut conv_steps = Vec::with_capacity(self.conv.len());
        let seqs: Vec<Tensor<F>> = match self.config.variant {
            Variant::Hybrid => {
                let mut xs: Vec<Tensor<F>> = inputs.to_vec();
                for layer in &self.conv {
                    let (xs_next, step) = self.conv_layer_forward(layer, &xs, mode)?;
                    xs = xs_next;
                    conv_steps.push(step);
                }
                par_map(&xs, |_, x| feature_columns(x))?
            }
            Variant::RnnOnly => par_map(inputs, |_, x| {
                let (h, w) = (x.dim(1), x.dim(2));
                let d = x.data();
                let cols = (0..w).flat_map(|t| (0..h).map(move |y| d[y * w + t])).collect();
                Tensor::from_vec(&[w, h], cols)
            })?,
        };
        let per_sample = par_map(&seqs, |_, seq| {
            let mut x = seq.clone();
            let mut caches = Vec::with_capacity(self.blstm.len());
            for layer in &self.blstm {
                let (y, c) = blstm_forward(&x, layer)?;
                caches.push(c);
                x = y;
            }
            let lp = log_softmax(&linear_forward(&x, &self.out_weight, &self.out_bias)?)?;
            Ok((lp, caches, x))
        })?;
        let mut outs = Vec::with_capacity(inputs.len());
        let mut blstm = Vec::with_capacity(inputs.len());
        let mut head_in = Vec::with_capacity(inputs.len());
        for (lp, c, h) in per_sample {
            outs.push(lp);
            blstm.push(c);
            head_in.push(h);
        }
        Ok((
            outs,
            ForwardCache {
                conv: conv_steps,
                blstm,
                head_in,
            },
        ))
    }

    fn conv_layer_forward(&self, layer: &ConvLayer<F>, xs: &[Tensor<F>], mode: Mode) -> Result<(Vec<Tensor<F>>, ConvStep<F>)> {
        let geom = ConvGeometry {
            pad: layer.spec.pad,
            stride: (1, 1),
        };
        let conv_out = par_map(xs, |_, x| conv2d_forward(x, &layer.weight, &layer.bias, geom))?;
        let (mut ys, conv_caches): (Vec<_>, Vec<_>) = conv_out.into_iter().unzip();
        let mut bn_cache = None;
        if let Some(bn) = &layer.bn {
            let stats = match mode {
                Mode::Train => BnStats::Batch,
                Mode::Infer => BnStats::Running {
                    mean: &bn.running_mean,
                    var: &bn.running_var,
                },
            };
            let (normed, cache) = batchnorm_forward(&ys, &bn.gamma, &bn.beta, F::lit(self.config.bn_eps), stats)?;
            ys = normed;
            bn_cache = Some(cache);
        }
        ys.par_iter_mut().for_each(relu_inplace);
        let (out, pool) = match layer.spec.pool {
            Some(window) => {
                let pooled = par_map(&ys, |_, y| maxpool2d_forward(y, window))?;
                let (out, caches): (Vec<_>, Vec<_>) = pooled.into_iter().unzip();
                (out, Some(caches))
            }
            None => (ys.clone(), None),
        };
        Ok((
            out,
            ConvStep {
                conv: conv_caches,
                bn: bn_cache,
                act: ys,
                pool,
            },
        ))
    }

    /// Gradients of `Σ_i ⟨dlogits_i, logits_i⟩` w.r.t. every parameter, in
    /// [`Model::named_params`] order. `dlogits` are gradients w.r.t. the pre-softmax
    /// outputs (what [`crate::ctc::ctc_loss`] returns).
    pub fn backward(&self, cache: &ForwardCache<F>, dlogits: &[Tensor<F>]) -> Result<Vec<Tensor<F>>> {
        if dlogits.len() != cache.batch_size() {
            return Err(NnError::Shape("backward batch size differs from forward".into()));
        }
        let need_dx = self.config.variant == Variant::Hybrid;
        let per_sample = par_map(dlogits, |i, dy| {
            let x = &cache.head_in[i];
            let head = linear_backward(x, &self.out_weight, dy)?;
            let mut d = head.dx;
            let mut layer_grads = Vec::with_capacity(self.blstm.len());
            for (l, layer) in self.blstm.iter().enumerate().rev() {
                let (dx, g) = blstm_backward(&cache.blstm[i][l], layer, &d)?;
                layer_grads.push(g);
                d = dx;
            }
            layer_grads.reverse();
            let dmap = if need_dx { Some(feature_columns_backward(&d)?) } else { None };
            Ok((head.dw, head.db, layer_grads, dmap))
        })?;

        let mut dout_w = Vec::with_capacity(per_sample.len());
        let mut dout_b = Vec::with_capacity(per_sample.len());
        let mut dblstm: Vec<Vec<Tensor<F>>> = vec![Vec::new(); self.blstm.len() * 6];
        let mut dmaps = Vec::new();
        for (dw, db, layers, dmap) in per_sample {
            dout_w.push(dw);
            dout_b.push(db);
            for (l, g) in layers.into_iter().enumerate() {
                for (j, t) in [g.fwd.dwx, g.fwd.dwh, g.fwd.db, g.bwd.dwx, g.bwd.dwh, g.bwd.db].into_iter().enumerate() {
                    dblstm[l * 6 + j].push(t);
                }
            }
            if let Some(m) = dmap {
                dmaps.push(m);
            }
        }

        let mut conv_grads: Vec<Vec<Tensor<F>>> = Vec::with_capacity(self.conv.len());
        if need_dx {
            let mut dys = dmaps;
            for (l, layer) in self.conv.iter().enumerate().rev() {
                let step = &cache.conv[l];
                if let Some(pools) = &step.pool {
                    dys = par_map(&dys, |i, dy| maxpool2d_backward(&pools[i], dy))?;
                }
                dys.par_iter_mut().enumerate().for_each(|(i, dy)| relu_backward(&step.act[i], dy));
                let mut bn_grads = None;
                if let (Some(bn), Some(bn_cache)) = (&layer.bn, &step.bn) {
                    let g = batchnorm_backward(bn_cache, &bn.gamma, &dys)?;
                    dys = g.dx;
                    bn_grads = Some((g.dgamma, g.dbeta));
                }
                let grads = par_map(&dys, |i, dy| conv2d_backward(&step.conv[i], &layer.weight, dy))?;
                let mut dws = Vec::with_capacity(grads.len());
                let mut dbs = Vec::with_capacity(grads.len());
                let mut dxs = Vec::with_capacity(grads.len());
                for g in grads {
                    dws.push(g.dw);
                    dbs.push(g.db);
                    dxs.push(g.dx);
                }
                let mut layer_out = vec![fold_sum(dws).expect("non-empty batch"), fold_sum(dbs).expect("non-empty batch")];
                if let Some((dg, db)) = bn_grads {
                    layer_out.push(dg);
                    layer_out.push(db);
                }
                conv_grads.push(layer_out);
                dys = dxs;
            }
            conv_grads.reverse();
        }

        let mut out: Vec<Tensor<F>> = conv_grads.into_iter().flatten().collect();
        for parts in dblstm {
            out.push(fold_sum(parts).expect("non-empty batch"));
        }
        out.push(fold_sum(dout_w).expect("non-empty batch"));
        out.push(fold_sum(dout_b).expect("non-empty batch"));
        Ok(out)
    }

    /// Moves running batch-norm statistics towards the batch statistics of `cache`.
    pub fn update_running_stats(&mut self, cache: &ForwardCache<F>) {
        let momentum = F::lit(self.config.bn_momentum);
        for (layer, step) in self.conv.iter_mut().zip(&cache.conv) {
            if let (Some(bn), Some(c)) = (&mut layer.bn, &step.bn) {
                update_running(c, &mut bn.running_mean, &mut bn.running_var, momentum);
            }
        }
    }

    /// Inference on one prepared input.
    pub fn infer(&self, input: &Tensor<F>) -> Result<Tensor<F>> {
        let (mut out, _) = self.forward(std::slice::from_ref(input), Mode::Infer)?;
        Ok(out.pop().expect("one output"))
    }

    /// Prepares `img` and runs inference.
    pub fn infer_image(&self, img: &Image) -> Result<Tensor<F>> {
        self.infer(&self.prepare_input(img)?)
    }

    /// Names accepted by [`Model::activations`].
    pub fn layer_names(&self) -> Vec<String> {
        (1..=self.conv.len()).map(|i| format!("conv{i}")).collect()
    }

    /// Post-ReLU, pre-pool `[C, H, W]` activations of each conv layer (inference mode).
    pub fn activations(&self, input: &Tensor<F>) -> Result<Vec<(String, Tensor<F>)>> {
        self.check_input(input)?;
        let mut xs = vec![input.clone()];
        let mut out = Vec::new();
        for (i, layer) in self.conv.iter().enumerate() {
            let (next, mut step) = self.conv_layer_forward(layer, &xs, Mode::Infer)?;
            out.push((format!("conv{}", i + 1), step.act.pop().expect("one sample")));
            xs = next;
        }
        Ok(out)
    }

    /// Activations of one named layer.
    pub fn activation(&self, input: &Tensor<F>, layer: &str) -> Result<Tensor<F>> {
        let valid = self.layer_names();
        if !valid.iter().any(|n| n == layer) {
            return Err(NnError::UnknownLayer {
                name: layer.to_owned(),
                valid,
            });
        }
        Ok(self
            .activations(input)?
            .into_iter()
            .find(|(n, _)| n == layer)
            .expect("validated name")
            .1)
    }
}

fn cast_lstm<F: Real, G: Real>(w: &LstmWeights<F>) -> LstmWeights<G> {
    LstmWeights {
        wx: w.wx.cast(),
        wh: w.wh.cast(),
        b: w.b.cast(),
    }
}
