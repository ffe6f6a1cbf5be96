use ctct::nn::{ModelConfig, Variant};
use ctct::synthgen::toy::toy_setup;
use ctct::synthgen::{generate_dataset, GeneratorInputs, RenderRanges};
use ctct::train::{batch_loss, load_training_data, run_training, train_step, TrainOptions, TrainSession, TrainingData};

fn toy_data(count: usize, seed: u64, cfg: impl Fn(usize) -> ModelConfig) -> (TrainingData<f32>, TrainSession<f32>, tempfile::TempDir) {
    let dir = tempfile::tempdir().unwrap();
    let (vocab, atlas, labels) = toy_setup(1);
    let ranges = RenderRanges::default();
    let inputs = GeneratorInputs {
        vocab: &vocab,
        atlas: &atlas,
        labels: &labels,
        ranges: &ranges,
        backgrounds: &[],
    };
    let manifest = generate_dataset(&inputs, count, seed, dir.path()).unwrap();
    let config = cfg(labels.num_classes());
    let data = load_training_data(&manifest, &labels, &config).unwrap();
    let session = TrainSession::new(&config, labels, 3).unwrap();
    (data, session, dir)
}

#[test]
fn overfits_a_single_batch() {
    let (data, mut s, _dir) = toy_data(8, 21, ModelConfig::toy);
    let initial = batch_loss(&s.model, &data.inputs, &data.targets, false).unwrap().0.mean_loss;
    for _ in 0..200 {
        train_step(&mut s.model, &mut s.optimizer, &data.inputs, &data.targets, true).unwrap();
    }
    let last = batch_loss(&s.model, &data.inputs, &data.targets, false).unwrap().0.mean_loss;
    assert!(last < 0.1 * initial, "initial {initial}, final {last}");
}

#[test]
fn rnn_only_variant_trains_without_convolutions() {
    let (data, mut s, _dir) = toy_data(16, 22, |c| ModelConfig::rnn_only(c, 32, 1, 16));
    assert_eq!(s.model.config().variant, Variant::RnnOnly);
    assert!(s.model.conv.is_empty());
    let opts = TrainOptions {
        epochs: 2,
        batch_size: 8,
        seed: 4,
        ..Default::default()
    };
    let summary = run_training(&mut s, &data, &opts, |_| {}).unwrap();
    assert_eq!(summary.steps, 4);
    assert!(summary.epoch_losses.iter().all(|l| l.is_finite()));
}

#[test]
fn identical_seeds_give_identical_trajectories() {
    let run = || {
        let (data, mut s, _dir) = toy_data(12, 23, ModelConfig::tiny);
        let opts = TrainOptions {
            epochs: 2,
            batch_size: 4,
            seed: 9,
            ..Default::default()
        };
        let summary = run_training(&mut s, &data, &opts, |_| {}).unwrap();
        (s.model, summary.epoch_losses)
    };
    let (a, la) = run();
    let (b, lb) = run();
    assert_eq!(la, lb);
    assert_eq!(a, b);
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let (data, s, _dir) = toy_data(6, 24, ModelConfig::tiny);
    let loss_with = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mut s = s.clone();
            train_step(&mut s.model, &mut s.optimizer, &data.inputs, &data.targets, true).unwrap();
            let loss = batch_loss(&s.model, &data.inputs, &data.targets, false).unwrap().0.mean_loss;
            (s.model, loss)
        })
    };
    let (m1, l1) = loss_with(1);
    let (m3, l3) = loss_with(3);
    assert_eq!(l1.to_bits(), l3.to_bits());
    assert_eq!(m1, m3);
}
