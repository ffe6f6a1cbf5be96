use std::io::Write;
use std::path::PathBuf;

use ctct::synthgen::toy::{toy_atlas, toy_vocabulary};
use ctct::synthgen::{
    generate_dataset, load_backgrounds, GeneratorInputs, GlyphAtlas, LabelMap, RenderRanges, Vocabulary,
    DEFAULT_PUNCTUATION, MANIFEST_FILE,
};

use crate::error::CliError;
use crate::settings::{overrides, Settings};
use crate::{outln, RenderArgs};

const PATH_KEYS: &[&str] = &["out", "vocab", "atlas", "backgrounds", "alphabet"];

pub fn run(a: RenderArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let show = |p: &Option<PathBuf>| p.as_ref().map(|p| p.to_string_lossy().into_owned());
    let ov = overrides(
        &a.set,
        &[
            ("count", a.count.map(|v| v.to_string())),
            ("seed", a.seed.map(|v| v.to_string())),
            ("out", show(&a.out)),
            ("vocab", show(&a.vocab)),
            ("atlas", show(&a.atlas)),
            ("backgrounds", show(&a.backgrounds)),
            ("toy_vocab_seed", a.toy_vocab_seed.map(|v| v.to_string())),
        ],
    );
    let mut s = Settings::load(a.config.as_deref(), PATH_KEYS, ov)?;

    let count: usize = s.require("count")?;
    if count == 0 {
        return Err(CliError::usage("count must be at least 1"));
    }
    let seed: u64 = s.require("seed")?;
    let out_dir: PathBuf = s.require("out")?;
    let toy_seed: Option<u64> = s.get("toy_vocab_seed")?;
    let vocab_path = s.existing_path("vocab")?;
    let atlas_path = s.existing_path("atlas")?;
    let (vocab, atlas, default_punct) = match (toy_seed, vocab_path, atlas_path) {
        (Some(ts), None, None) => (toy_vocabulary(ts), toy_atlas(), ""),
        (None, Some(v), Some(at)) => (Vocabulary::load(&v)?, GlyphAtlas::load(&at)?, DEFAULT_PUNCTUATION),
        (Some(_), _, _) => return Err(CliError::usage("`toy_vocab_seed` cannot be combined with `vocab` or `atlas`")),
        _ => return Err(CliError::usage("set both `vocab` and `atlas`, or `toy_vocab_seed`")),
    };
    let punctuation: String = s.get_or("punctuation", default_punct.to_owned())?;
    let labels = match s.existing_path("alphabet")? {
        Some(p) => LabelMap::load(&p)?,
        None => LabelMap::build(&vocab, &punctuation),
    };
    let backgrounds = match s.existing_path("backgrounds")? {
        Some(dir) => load_backgrounds(&dir)?,
        None => Vec::new(),
    };
    let ranges = RenderRanges::from_kv(&mut s.kv)?;
    s.finish()?;

    let inputs = GeneratorInputs {
        vocab: &vocab,
        atlas: &atlas,
        labels: &labels,
        ranges: &ranges,
        backgrounds: &backgrounds,
    };
    let manifest = generate_dataset(&inputs, count, seed, &out_dir)?;
    log::info!("rendered {} images into {}", manifest.len(), out_dir.display());
    outln!(out, "images\t{}", manifest.len())?;
    outln!(out, "manifest\t{}", out_dir.join(MANIFEST_FILE).display())
}
