use std::io::Write;

use ctct::eval::evaluate_manifest;
use ctct::imaging::{load_pgm, save_pgm, Image};
use ctct::nn::{load_checkpoint, Real, Tensor};
use ctct::recognizer::{fit_height, Decoder, Recognizer};
use ctct::synthgen::DatasetManifest;

use crate::error::CliError;
use crate::{outln, DecodeArgs, DecoderArgs, DumpArgs, EvalArgs};

impl DecoderArgs {
    pub fn decoder(&self) -> Decoder {
        match self.beam {
            Some(w) => Decoder::Beam(w as usize),
            None => Decoder::Greedy,
        }
    }
}

fn recognizer<F: Real>(path: &std::path::Path, decoder: Decoder) -> Result<Recognizer<F>, CliError> {
    Ok(Recognizer::from_checkpoint(load_checkpoint(path)?, decoder)?)
}

pub fn eval<F: Real>(a: EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let rec = recognizer::<F>(&a.checkpoint, a.decoder.decoder())?;
    let manifest = DatasetManifest::load(&a.manifest)?;
    let report = evaluate_manifest(&rec, &manifest)?;
    outln!(out, "{}", report.metric_lines().trim_end())?;
    if let Some(p) = &a.pairs {
        std::fs::write(p, report.pairs_tsv()).map_err(|e| CliError::data(format!("cannot write {}: {e}", p.display())))?;
    }
    if a.table {
        outln!(out, "{}", report.table().trim_end())?;
    }
    Ok(())
}

pub fn decode<F: Real>(a: DecodeArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let rec = recognizer::<F>(&a.checkpoint, a.decoder.decoder())?;
    let img = load_pgm(&a.image)?;
    outln!(out, "{}", rec.recognize(&img)?)
}

/// Min-max normalizes `[H, W]` values to `[0, 1]`; a constant map becomes all zeros.
pub fn normalize_channel(h: usize, w: usize, values: &[f64]) -> Result<Image, CliError> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    let px = values
        .iter()
        .map(|&v| if range > 0.0 { ((v - lo) / range) as f32 } else { 0.0 })
        .collect();
    Ok(Image::from_pixels(h, w, px)?)
}

pub fn dump_activations<F: Real>(a: DumpArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let ck = load_checkpoint::<F>(&a.checkpoint)?;
    let model = ck.model;
    let names = model.layer_names();
    if !names.contains(&a.layer) {
        return Err(ctct::nn::NnError::UnknownLayer {
            name: a.layer.clone(),
            valid: names,
        }
        .into());
    }
    let img = fit_height(&load_pgm(&a.image)?, model.config().input_height)?;
    let act: Tensor<F> = model.activation(&model.prepare_input(&img)?, &a.layer)?;
    let (c, h, w) = (act.dim(0), act.dim(1), act.dim(2));
    std::fs::create_dir_all(&a.out).map_err(|e| CliError::data(format!("cannot create {}: {e}", a.out.display())))?;
    let values = act.to_f64_vec();
    for ch in 0..c {
        let img = normalize_channel(h, w, &values[ch * h * w..(ch + 1) * h * w])?;
        save_pgm(&img, &a.out.join(format!("{}_{ch}.pgm", a.layer)))?;
    }
    outln!(out, "channels\t{c}\t{h}x{w}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_spans_unit_range() {
        let img = normalize_channel(1, 3, &[2.0, 4.0, 3.0]).unwrap();
        assert_eq!(img.pixels(), &[0.0, 1.0, 0.5]);
        let flat = normalize_channel(2, 2, &[7.0; 4]).unwrap();
        assert_eq!(flat.pixels(), &[0.0; 4]);
    }
}
