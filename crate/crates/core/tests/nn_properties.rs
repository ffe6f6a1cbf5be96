use ctct::nn::adadelta::Adadelta;
use ctct::nn::batchnorm::{batchnorm_forward, BnStats};
use ctct::nn::conv::{conv2d_forward, maxpool2d_backward, maxpool2d_forward, ConvGeometry};
use ctct::nn::gradcheck::random_tensor;
use ctct::nn::linear::log_softmax;
use ctct::nn::model::Mode;
use ctct::nn::{Model, ModelConfig};
use ctct::rng::rng_from_seed;
use ctct::Tensor;
use proptest::prelude::*;

fn tensor(shape: &'static [usize]) -> impl Strategy<Value = Tensor<f64>> {
    let n: usize = shape.iter().product();
    prop::collection::vec(-2.0f64..2.0, n).prop_map(move |v| Tensor::from_vec(shape, v).unwrap())
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_is_linear(x in tensor(&[2, 5, 4]), y in tensor(&[2, 5, 4]), w in tensor(&[3, 2, 3, 2]),
                      a in -2.0f64..2.0, b in -2.0f64..2.0, stride in 1usize..3) {
        let geom = ConvGeometry { pad: (1, 1), stride: (stride, stride) };
        let zero = Tensor::zeros(&[3]);
        let f = |t: &Tensor<f64>| conv2d_forward(t, &w, &zero, geom).unwrap().0;
        let mix: Vec<f64> = x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect();
        let lhs = f(&Tensor::from_vec(x.shape(), mix).unwrap());
        let (fx, fy) = (f(&x), f(&y));
        for i in 0..lhs.len() {
            prop_assert!((lhs.data()[i] - (a * fx.data()[i] + b * fy.data()[i])).abs() <= 1e-9);
        }
    }

    #[test]
    fn pooling_takes_window_maxima(x in tensor(&[2, 4, 6]), tall in any::<bool>()) {
        let window = if tall { (2, 1) } else { (2, 2) };
        let (y, cache) = maxpool2d_forward(&x, window).unwrap();
        let (h, w) = (4, 6);
        let (ho, wo) = (h / window.0, w / window.1);
        prop_assert_eq!(y.shape(), &[2, ho, wo][..]);
        if tall {
            prop_assert_eq!(wo, w);
        }
        let global = x.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for c in 0..2 {
            for i in 0..ho {
                for j in 0..wo {
                    let mut m = f64::NEG_INFINITY;
                    for u in 0..window.0 {
                        for v in 0..window.1 {
                            m = m.max(x.data()[(c * h + i * window.0 + u) * w + j * window.1 + v]);
                        }
                    }
                    let out = y.data()[(c * ho + i) * wo + j];
                    prop_assert_eq!(out, m);
                    prop_assert!(out <= global);
                }
            }
        }
        // Routing moves each output gradient to exactly one input.
        let dy = Tensor::full(y.shape(), 1.0);
        let dx = maxpool2d_backward(&cache, &dy).unwrap();
        prop_assert_eq!(dx.data().iter().sum::<f64>(), y.len() as f64);
        prop_assert_eq!(dx.data().iter().filter(|&&g| g != 0.0).count(), y.len());
    }

    #[test]
    fn log_softmax_rows_are_distributions(z in tensor(&[4, 7]), shift in -50.0f64..50.0) {
        let lp = log_softmax(&z).unwrap();
        for t in 0..4 {
            let s: f64 = lp.row(t).iter().map(|v| v.exp()).sum();
            prop_assert!((s - 1.0).abs() <= 1e-12);
        }
        let shifted = Tensor::from_vec(z.shape(), z.data().iter().map(|v| v + shift).collect()).unwrap();
        let lp2 = log_softmax(&shifted).unwrap();
        for (p, q) in lp.data().iter().zip(lp2.data()) {
            prop_assert!((p - q).abs() <= 1e-12);
        }
    }

    #[test]
    fn adadelta_opposes_the_gradient(g in tensor(&[6]), steps in 1usize..4) {
        let mut x = Tensor::<f64>::zeros(&[6]);
        let mut opt = Adadelta::new([&x], 0.95, 1e-6).unwrap();
        for _ in 0..steps {
            let before = x.clone();
            opt.step(vec![&mut x], std::slice::from_ref(&g), true).unwrap();
            for i in 0..6 {
                let dx = x.data()[i] - before.data()[i];
                prop_assert!(dx * g.data()[i] <= 0.0);
                prop_assert_eq!(dx == 0.0, g.data()[i] == 0.0);
            }
        }
    }

    #[test]
    fn batchnorm_standardizes_each_channel(seed in any::<u64>()) {
        let mut rng = rng_from_seed(seed);
        let xs: Vec<Tensor<f64>> = (0..8).map(|i| random_tensor(&[3, 2, 2 + i % 3], &mut rng, 3.0)).collect();
        let gamma = Tensor::full(&[3], 1.0);
        let beta = Tensor::zeros(&[3]);
        let (ys, _) = batchnorm_forward(&xs, &gamma, &beta, 1e-5, BnStats::Batch).unwrap();
        for c in 0..3 {
            let vals: Vec<f64> = ys.iter().flat_map(|y| {
                let per = y.len() / 3;
                y.data()[c * per..(c + 1) * per].to_vec()
            }).collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            prop_assert!(mean.abs() <= 1e-6);
            prop_assert!((var - 1.0).abs() <= 1e-3);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn model_outputs_match_the_shape_contract(seed in any::<u64>(), width in 1usize..60, rnn_only in any::<bool>()) {
        let cfg = if rnn_only { ModelConfig::rnn_only(5, 16, 1, 8) } else { ModelConfig::tiny(5) };
        let model = Model::<f64>::init(&cfg, &mut rng_from_seed(seed)).unwrap();
        let mut rng = rng_from_seed(seed ^ 1);
        let img = random_tensor::<f64>(&[1, cfg.input_height, width], &mut rng, 1.0);
        match cfg.output_len(width) {
            Some(t) => {
                let x = model.prepare_input_tensor(img).unwrap();
                let (out, _) = model.forward(&[x.clone()], Mode::Train).unwrap();
                prop_assert_eq!(out[0].shape(), &[t, 5][..]);
                let inferred = model.infer(&x).unwrap();
                prop_assert_eq!(inferred.shape(), &[t, 5][..]);
                for row in 0..t {
                    prop_assert!(log_sum_exp(out[0].row(row)).abs() <= 1e-9);
                    prop_assert!(log_sum_exp(inferred.row(row)).abs() <= 1e-9);
                }
            }
            None => {
                prop_assert!(width < cfg.min_width());
                prop_assert!(model.prepare_input_tensor(img).and_then(|x| model.infer(&x)).is_err());
            }
        }
    }
}

#[test]
fn default_shapes() {
    let hybrid = ModelConfig::standard(10);
    assert_eq!(hybrid.output_len(100), Some(24));
    assert_eq!(hybrid.input_height, 32);
    assert_eq!(hybrid.conv.len(), 7);
    let rnn = ModelConfig::rnn_only(10, 32, 2, 512);
    assert_eq!(rnn.output_len(100), Some(100));
}

#[test]
fn standard_model_forward_shape() {
    let cfg = ModelConfig::standard(4);
    let model = Model::<f32>::init(&cfg, &mut rng_from_seed(1)).unwrap();
    let img = ctct::Image::filled(32, 100, 0.3).unwrap();
    assert_eq!(model.infer_image(&img).unwrap().shape(), &[24, 4]);
}
