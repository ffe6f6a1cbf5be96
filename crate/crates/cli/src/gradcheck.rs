use std::io::Write;

use ctct::nn::gradcheck::layer_checks;
use ctct::nn::{ModelConfig, Variant};
use ctct::train::gradcheck_model;

use crate::error::CliError;
use crate::settings::{overrides, Settings};
use crate::train::base_config;
use crate::{outln, GradcheckArgs};

pub const MODEL_TOLERANCE: f64 = 1e-4;
/// A sign-flipped gradient must show at least this relative error.
pub const NEGATIVE_CONTROL_MIN: f64 = 0.1;

pub fn run(a: GradcheckArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let ov = overrides(
        &a.set,
        &[
            ("seed", a.seed.map(|v| v.to_string())),
            ("samples", a.samples.map(|v| v.to_string())),
            ("eps", a.eps.map(|v| v.to_string())),
            ("preset", a.preset.clone()),
        ],
    );
    let mut s = Settings::load(a.config.as_deref(), &[], ov)?;
    let seed: u64 = s.get_or("seed", 0)?;
    let samples: usize = s.get_or("samples", 200)?;
    let eps: f64 = s.get_or("eps", 1e-5)?;
    let preset: String = s.get_or("preset", "tiny".to_owned())?;
    let variant: Variant = s.get_or("variant", Variant::Hybrid)?;
    let classes: usize = s.get_or("classes", 4)?;
    let config = ModelConfig::from_kv(&mut s.kv, &base_config(&preset, variant, classes)?)?;
    s.finish()?;

    let verdict = |ok: bool| if ok { "ok" } else { "FAIL" };
    let mut all_ok = true;
    for check in layer_checks(seed, eps) {
        let ok = check.passed();
        all_ok &= ok;
        outln!(out, "{}\ttolerance={:e}\t{}", check.report, check.tolerance, verdict(ok))?;
    }
    let model = gradcheck_model(&config, seed, samples, eps)?;
    let ok = model.report.max_rel_error <= MODEL_TOLERANCE;
    all_ok &= ok;
    outln!(out, "{}\ttolerance={MODEL_TOLERANCE:e}\t{}", model.report, verdict(ok))?;
    let detected = model.negative_control.max_rel_error > NEGATIVE_CONTROL_MIN;
    all_ok &= detected;
    outln!(
        out,
        "{}\t{}",
        model.negative_control,
        if detected { "corruption detected" } else { "FAIL: corruption missed" }
    )?;
    if all_ok {
        Ok(())
    } else {
        Err(CliError::numeric("gradient check failed"))
    }
}
