use std::io::Write;
use std::path::PathBuf;

use ctct::nn::{load_checkpoint, ModelConfig, Real, Variant};
use ctct::synthgen::{DatasetManifest, LabelMap, ALPHABET_FILE};
use ctct::train::{load_training_data, run_training, TrainOptions, TrainSession};

use crate::error::CliError;
use crate::settings::{overrides, Settings};
use crate::{outln, TrainArgs};

const PATH_KEYS: &[&str] = &["manifest", "alphabet", "checkpoint_dir", "loss_log"];

/// Starting model for a preset name and variant.
pub fn base_config(preset: &str, variant: Variant, classes: usize) -> Result<ModelConfig, CliError> {
    Ok(match (preset, variant) {
        ("standard", Variant::Hybrid) => ModelConfig::standard(classes),
        ("standard", Variant::RnnOnly) => ModelConfig::rnn_only(classes, 32, 2, 512),
        ("toy", Variant::Hybrid) => ModelConfig::toy(classes),
        ("toy", Variant::RnnOnly) => ModelConfig::rnn_only(classes, 32, 2, 64),
        ("tiny", Variant::Hybrid) => ModelConfig::tiny(classes),
        ("tiny", Variant::RnnOnly) => ModelConfig::rnn_only(classes, 16, 1, 8),
        (other, _) => {
            return Err(CliError::usage(format!(
                "unknown preset `{other}`; expected standard, toy or tiny"
            )))
        }
    })
}

pub fn run<F: Real>(a: TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let show = |p: &Option<PathBuf>| p.as_ref().map(|p| p.to_string_lossy().into_owned());
    let ov = overrides(
        &a.set,
        &[
            ("manifest", show(&a.manifest)),
            ("seed", a.seed.map(|v| v.to_string())),
            ("epochs", a.epochs.map(|v| v.to_string())),
            ("batch_size", a.batch_size.map(|v| v.to_string())),
            ("checkpoint_dir", show(&a.checkpoint_dir)),
            ("variant", a.variant.clone()),
            ("preset", a.preset.clone()),
        ],
    );
    let mut s = Settings::load(a.config.as_deref(), PATH_KEYS, ov)?;

    let manifest_path = s
        .existing_path("manifest")?
        .ok_or_else(|| CliError::usage("missing required key `manifest`"))?;
    let manifest = DatasetManifest::load(&manifest_path)?;
    let alphabet_path = match s.existing_path("alphabet")? {
        Some(p) => p,
        None => manifest_path.parent().unwrap_or(".".as_ref()).join(ALPHABET_FILE),
    };
    let labels = LabelMap::load(&alphabet_path)?;
    let seed: u64 = s.require("seed")?;
    let checkpoint_dir: PathBuf = s.require("checkpoint_dir")?;
    let loss_log: PathBuf = s.get_or("loss_log", checkpoint_dir.join("loss.log"))?;
    let opts = TrainOptions {
        batch_size: s.get_or("batch_size", 32)?,
        epochs: s.get_or("epochs", 10)?,
        seed,
        checked: s.get_or("checked", true)?,
        checkpoint_dir: Some(checkpoint_dir.clone()),
        checkpoint_every: s.get_or("checkpoint_every", 1)?,
        loss_log: Some(loss_log),
    };
    let preset: String = s.get_or("preset", "standard".to_owned())?;
    let variant: Variant = s.get_or("variant", Variant::Hybrid)?;
    let rho: Option<f64> = s.get("opt.rho")?;
    let eps: Option<f64> = s.get("opt.eps")?;

    let mut session = match &a.resume {
        Some(path) => {
            let session = TrainSession::<F>::from_checkpoint(load_checkpoint(path)?)?;
            let cfg = ModelConfig::from_kv(&mut s.kv, session.model.config())?;
            if &cfg != session.model.config() {
                return Err(CliError::usage("configured model differs from the checkpoint's model"));
            }
            if session.labels != labels {
                return Err(CliError::data(format!(
                    "{} does not match the checkpoint's alphabet",
                    alphabet_path.display()
                )));
            }
            session
        }
        None => {
            let base = base_config(&preset, variant, labels.num_classes())?;
            let cfg = ModelConfig::from_kv(&mut s.kv, &base)?;
            TrainSession::new(&cfg, labels, seed)?
        }
    };
    if let Some(r) = rho {
        session.optimizer.rho = r;
    }
    if let Some(e) = eps {
        session.optimizer.eps = e;
    }
    s.finish()?;

    std::fs::create_dir_all(&checkpoint_dir)
        .map_err(|e| CliError::data(format!("cannot create {}: {e}", checkpoint_dir.display())))?;
    let data = load_training_data::<F>(&manifest, &session.labels, session.model.config())?;
    let first_epoch = session.epoch;
    log::info!(
        "training {} parameters on {} images from epoch {first_epoch}",
        session.model.num_params(),
        data.inputs.len()
    );
    let summary = run_training(&mut session, &data, &opts, |b| {
        log::debug!("epoch {} batch {} loss {}", b.epoch, b.batch, b.loss.mean_loss);
    })?;
    for (i, loss) in summary.epoch_losses.iter().enumerate() {
        outln!(out, "epoch\t{}\tmean_loss\t{loss}", first_epoch + i)?;
    }
    outln!(out, "skipped\t{}", summary.skipped_samples)?;
    outln!(out, "steps\t{}", session.step)?;
    for ck in &summary.checkpoints {
        outln!(out, "checkpoint\t{}", ck.display())?;
    }
    Ok(())
}
