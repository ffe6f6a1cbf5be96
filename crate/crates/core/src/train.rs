//! Minibatch training with CTC loss and Adadelta.
//!
//! The loss of a batch is the mean CTC negative log-likelihood over its feasible
//! samples. Samples whose target needs more frames than the model emits are skipped
//! and counted. Each epoch visits the data in an order drawn from `(seed, epoch)`, so
//! a run resumed from an end-of-epoch checkpoint continues exactly as an
//! uninterrupted one would.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::ctc::{ctc_loss, CtcError};
use crate::imaging::ImagingError;
use crate::nn::adadelta::{DEFAULT_EPS, DEFAULT_RHO};
use crate::nn::gradcheck::{check_target, GradCheckReport, GradCheckTarget};
use crate::nn::model::{ForwardCache, Mode};
use crate::nn::{save_checkpoint, Adadelta, Checkpoint, Model, ModelConfig, NnError, Real, Tensor};
use crate::recognizer::{fit_height, labels_from_meta, RecognizerError, ALPHABET_KEY};
use crate::rng::{rng_from_seed, stream};
use crate::synthgen::{DatasetManifest, LabelMap, SynthError};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] NnError),
    #[error(transparent)]
    Ctc(#[from] CtcError),
    #[error(transparent)]
    Data(#[from] SynthError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Recognizer(#[from] RecognizerError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("dataset label map does not match the model: {0}")]
    LabelMismatch(String),
    #[error("invalid training options: {0}")]
    Options(String),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Prepared model inputs with their label sequences.
#[derive(Clone, Debug)]
pub struct TrainingData<F> {
    pub inputs: Vec<Tensor<F>>,
    pub targets: Vec<Vec<u32>>,
}

impl<F: Real> TrainingData<F> {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Loads, height-normalizes and encodes every manifest record, keeping the result in memory.
pub fn load_training_data<F: Real>(manifest: &DatasetManifest, labels: &LabelMap, config: &ModelConfig) -> Result<TrainingData<F>> {
    let shape = Model::<F>::zeros(config)?;
    if config.classes != labels.num_classes() {
        return Err(TrainError::LabelMismatch(format!(
            "model has {} classes, label map has {} labels",
            config.classes,
            labels.num_labels()
        )));
    }
    let items = manifest
        .records
        .par_iter()
        .map(|rec| {
            let img = fit_height(&manifest.load_image(rec)?, config.input_height)?;
            let input = shape.prepare_input(&img)?;
            let target = labels.encode(&rec.text)?;
            Ok((input, target))
        })
        .collect::<Result<Vec<_>>>()?;
    let (inputs, targets) = items.into_iter().unzip();
    Ok(TrainingData { inputs, targets })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchLoss {
    /// Mean CTC loss over feasible samples (0 when there are none).
    pub mean_loss: f64,
    pub feasible: usize,
    pub skipped: usize,
}

/// Forward pass and mean CTC loss; with `want_grads`, also parameter gradients.
pub fn batch_loss<F: Real>(
    model: &Model<F>,
    inputs: &[Tensor<F>],
    targets: &[Vec<u32>],
    want_grads: bool,
) -> Result<(BatchLoss, Option<(Vec<Tensor<F>>, ForwardCache<F>)>)> {
    let (logprobs, cache) = model.forward(inputs, Mode::Train)?;
    let results: Vec<_> = logprobs
        .par_iter()
        .zip(targets.par_iter())
        .map(|(lp, t)| ctc_loss(lp, t))
        .collect();
    let mut total = 0.0;
    let mut feasible = 0;
    let mut skipped = 0;
    let mut grads = Vec::with_capacity(results.len());
    for (r, lp) in results.into_iter().zip(&logprobs) {
        match r {
            Ok(r) => {
                total += r.nll;
                feasible += 1;
                grads.push(r.grad);
            }
            Err(CtcError::InfeasibleTarget { .. }) => {
                skipped += 1;
                grads.push(Tensor::zeros(lp.shape()));
            }
            Err(e) => return Err(e.into()),
        }
    }
    let stats = BatchLoss {
        mean_loss: if feasible > 0 { total / feasible as f64 } else { 0.0 },
        feasible,
        skipped,
    };
    if !want_grads || feasible == 0 {
        return Ok((stats, None));
    }
    let scale = F::lit(1.0 / feasible as f64);
    grads.iter_mut().for_each(|g| g.scale(scale));
    let param_grads = model.backward(&cache, &grads)?;
    Ok((stats, Some((param_grads, cache))))
}

/// One optimizer update on a batch. Batches with no feasible sample change nothing.
pub fn train_step<F: Real>(
    model: &mut Model<F>,
    optimizer: &mut Adadelta<F>,
    inputs: &[Tensor<F>],
    targets: &[Vec<u32>],
    checked: bool,
) -> Result<BatchLoss> {
    let (stats, grads) = batch_loss(model, inputs, targets, true)?;
    if let Some((grads, cache)) = grads {
        optimizer.step(model.params_mut(), &grads, checked)?;
        model.update_running_stats(&cache);
    }
    Ok(stats)
}

#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub batch_size: usize,
    /// Total epochs; a resumed session runs only the remaining ones.
    pub epochs: usize,
    pub seed: u64,
    /// Abort on non-finite losses or gradients.
    pub checked: bool,
    pub checkpoint_dir: Option<PathBuf>,
    /// Checkpoint every this many epochs (0 disables).
    pub checkpoint_every: usize,
    /// Appended `epoch\tbatch\tloss` lines, flushed per batch.
    pub loss_log: Option<PathBuf>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 10,
            seed: 0,
            checked: true,
            checkpoint_dir: None,
            checkpoint_every: 1,
            loss_log: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchReport {
    pub epoch: usize,
    pub batch: usize,
    pub step: u64,
    pub loss: BatchLoss,
}

/// Model, optimizer and position in the schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSession<F> {
    pub model: Model<F>,
    pub optimizer: Adadelta<F>,
    pub labels: LabelMap,
    /// Next epoch to run.
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub step: u64,
}

impl<F: Real> TrainSession<F> {
    /// Fresh session with Xavier-initialized weights drawn from `seed`.
    pub fn new(config: &ModelConfig, labels: LabelMap, seed: u64) -> Result<Self> {
        if config.classes != labels.num_classes() {
            return Err(TrainError::LabelMismatch(format!(
                "model has {} classes, label map has {} labels",
                config.classes,
                labels.num_labels()
            )));
        }
        let model = Model::init(config, &mut rng_from_seed(seed))?;
        let optimizer = Adadelta::new(model.named_params().into_iter().map(|(_, t)| t), DEFAULT_RHO, DEFAULT_EPS)?;
        Ok(Self {
            model,
            optimizer,
            labels,
            epoch: 0,
            step: 0,
        })
    }

    pub fn from_checkpoint(ck: Checkpoint<F>) -> Result<Self> {
        let labels = labels_from_meta(&ck.meta)?;
        let get = |k: &str| -> Result<u64> {
            ck.meta
                .get(k)
                .map_or(Ok(0), |v| v.parse().map_err(|_| TrainError::Options(format!("bad `{k}` in checkpoint"))))
        };
        let (epoch, step) = (get("train.epoch")? as usize, get("train.step")?);
        let optimizer = match ck.optimizer {
            Some(o) => o,
            None => Adadelta::new(ck.model.named_params().into_iter().map(|(_, t)| t), DEFAULT_RHO, DEFAULT_EPS)?,
        };
        if ck.model.config().classes != labels.num_classes() {
            return Err(TrainError::LabelMismatch("checkpoint alphabet does not match its model".into()));
        }
        Ok(Self {
            model: ck.model,
            optimizer,
            labels,
            epoch,
            step,
        })
    }

    pub fn meta(&self) -> BTreeMap<String, String> {
        BTreeMap::from([
            (ALPHABET_KEY.to_string(), self.labels.to_codepoint_list()),
            ("train.epoch".to_string(), self.epoch.to_string()),
            ("train.step".to_string(), self.step.to_string()),
        ])
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(save_checkpoint(path, &self.model, Some(&self.optimizer), &self.meta())?)
    }
}

/// Sample order for `epoch`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, epoch as u64));
    order
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainSummary {
    pub epochs_run: usize,
    pub steps: u64,
    pub skipped_samples: usize,
    /// Mean batch loss of each epoch run.
    pub epoch_losses: Vec<f64>,
    pub checkpoints: Vec<PathBuf>,
}

fn open_log(path: &Path) -> Result<File> {
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|source| TrainError::Io {
            path: path.to_owned(),
            source,
        })
}

/// Runs epochs `session.epoch .. opts.epochs`, calling `on_batch` after every update.
pub fn run_training<F: Real>(
    session: &mut TrainSession<F>,
    data: &TrainingData<F>,
    opts: &TrainOptions,
    mut on_batch: impl FnMut(&BatchReport),
) -> Result<TrainSummary> {
    if opts.batch_size == 0 {
        return Err(TrainError::Options("batch size must be at least 1".into()));
    }
    if data.is_empty() {
        return Err(TrainError::Options("training set is empty".into()));
    }
    let mut log = opts.loss_log.as_deref().map(open_log).transpose()?;
    if let Some(dir) = &opts.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|source| TrainError::Io {
            path: dir.clone(),
            source,
        })?;
    }
    let mut summary = TrainSummary::default();
    while session.epoch < opts.epochs {
        let epoch = session.epoch;
        let order = epoch_order(data.len(), opts.seed, epoch);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (batch, idx) in order.chunks(opts.batch_size).enumerate() {
            let inputs: Vec<Tensor<F>> = idx.iter().map(|&i| data.inputs[i].clone()).collect();
            let targets: Vec<Vec<u32>> = idx.iter().map(|&i| data.targets[i].clone()).collect();
            let loss = train_step(&mut session.model, &mut session.optimizer, &inputs, &targets, opts.checked)?;
            if opts.checked && !loss.mean_loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch });
            }
            if loss.skipped > 0 {
                log::warn!("epoch {epoch} batch {batch}: skipped {} infeasible samples", loss.skipped);
            }
            session.step += 1;
            summary.steps += 1;
            summary.skipped_samples += loss.skipped;
            loss_sum += loss.mean_loss;
            batches += 1;
            if let (Some(f), Some(path)) = (log.as_mut(), opts.loss_log.as_ref()) {
                writeln!(f, "{epoch}\t{batch}\t{}", loss.mean_loss)
                    .and_then(|_| f.flush())
                    .map_err(|source| TrainError::Io {
                        path: path.clone(),
                        source,
                    })?;
            }
            on_batch(&BatchReport {
                epoch,
                batch,
                step: session.step,
                loss,
            });
        }
        session.epoch += 1;
        summary.epochs_run += 1;
        summary.epoch_losses.push(loss_sum / batches as f64);
        if let Some(dir) = &opts.checkpoint_dir {
            let due = opts.checkpoint_every > 0 && (session.epoch % opts.checkpoint_every == 0 || session.epoch == opts.epochs);
            if due {
                let path = dir.join(format!("epoch-{:04}.ckpt", session.epoch));
                session.save(&path)?;
                session.save(&dir.join("latest.ckpt"))?;
                summary.checkpoints.push(path);
            }
        }
    }
    if summary.skipped_samples > 0 {
        log::warn!("skipped {} infeasible samples in total", summary.skipped_samples);
    }
    Ok(summary)
}

/// The whole model as a flat coordinate vector for finite differences, with the
/// mean CTC loss of a fixed batch as the function.
pub struct ModelGradTarget {
    pub model: Model<f64>,
    pub inputs: Vec<Tensor<f64>>,
    pub targets: Vec<Vec<u32>>,
    offsets: Vec<usize>,
}

impl ModelGradTarget {
    pub fn new(model: Model<f64>, inputs: Vec<Tensor<f64>>, targets: Vec<Vec<u32>>) -> Self {
        let mut offsets = vec![0];
        for (_, t) in model.named_params() {
            offsets.push(offsets.last().unwrap() + t.len());
        }
        Self {
            model,
            inputs,
            targets,
            offsets,
        }
    }

    /// Backpropagated gradient, flattened in the same coordinate order.
    pub fn analytic(&self) -> Result<Vec<f64>> {
        let (_, grads) = batch_loss(&self.model, &self.inputs, &self.targets, true)?;
        let (grads, _) = grads.ok_or_else(|| TrainError::Options("no feasible sample in the check batch".into()))?;
        Ok(grads.iter().flat_map(|g| g.data().to_vec()).collect())
    }
}

impl GradCheckTarget for ModelGradTarget {
    fn label(&self) -> String {
        format!("model[{}]+ctc", self.model.config().variant)
    }

    fn num_coords(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    fn nudge(&mut self, i: usize, delta: f64) {
        let p = self.offsets.partition_point(|&o| o <= i) - 1;
        let mut params = self.model.params_mut();
        params[p].data_mut()[i - self.offsets[p]] += delta;
    }

    fn loss(&self) -> f64 {
        batch_loss(&self.model, &self.inputs, &self.targets, false)
            .map(|(l, _)| l.mean_loss)
            .unwrap_or(f64::NAN)
    }
}

#[derive(Clone, Debug)]
pub struct ModelGradCheck {
    pub report: GradCheckReport,
    /// The same check against the negated analytic gradient.
    pub negative_control: GradCheckReport,
}

/// Finite-difference check of a whole model plus CTC on a random batch of two images.
pub fn gradcheck_model(config: &ModelConfig, seed: u64, samples: usize, eps: f64) -> Result<ModelGradCheck> {
    use rand::Rng as _;
    let mut rng = rng_from_seed(seed);
    let model = Model::<f64>::init(config, &mut rng)?;
    let width = 24.max(config.min_width());
    let t_len = config
        .output_len(width)
        .ok_or_else(|| TrainError::Options("model rejects the check image width".into()))?;
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for _ in 0..2 {
        let data: Vec<f64> = (0..config.input_height * width).map(|_| rng.random_range(-1.0..1.0)).collect();
        let img = Tensor::from_vec(&[1, config.input_height, width], data)?;
        inputs.push(model.prepare_input_tensor(img)?);
        let len = rng.random_range(1..=3.min(t_len / 2).max(1));
        targets.push((0..len).map(|_| rng.random_range(1..config.classes as u32)).collect());
    }
    let mut target = ModelGradTarget::new(model, inputs, targets);
    let analytic = target.analytic()?;
    let report = check_target(&mut target, &analytic, samples, eps, &mut stream(seed, 1));
    let flipped: Vec<f64> = analytic.iter().map(|g| -g).collect();
    let mut negative_control = check_target(&mut target, &flipped, samples, eps, &mut stream(seed, 1));
    negative_control.label = format!("{} (sign-flipped)", negative_control.label);
    Ok(ModelGradCheck { report, negative_control })
}
