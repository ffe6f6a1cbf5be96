use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use unicode_normalization::UnicodeNormalization;

use super::{io_err, render_word, sample_render_spec, GlyphAtlas, LabelMap, RenderRanges, Result, SynthError, Vocabulary};
use crate::imaging::{encode_pgm, load_pgm, Image};
use crate::rng::stream;

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const ALPHABET_FILE: &str = "alphabet.txt";
pub const CONFIG_SNAPSHOT_FILE: &str = "render.cfg";
const IMAGE_DIR: &str = "images";

/// Everything a dataset rendering depends on besides the seed and count.
pub struct GeneratorInputs<'a> {
    pub vocab: &'a Vocabulary,
    pub atlas: &'a GlyphAtlas,
    pub labels: &'a LabelMap,
    pub ranges: &'a RenderRanges,
    pub backgrounds: &'a [Image],
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRecord {
    /// Path relative to the manifest's directory.
    pub path: String,
    pub text: String,
}

/// An image list with ground-truth transcriptions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    /// Directory the record paths are relative to.
    pub root: PathBuf,
    pub base_seed: Option<u64>,
    pub config_hash: Option<String>,
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn to_text(&self) -> String {
        let mut s = String::from("# ctct dataset manifest\n");
        if let Some(seed) = self.base_seed {
            writeln!(s, "# base_seed = {seed}").unwrap();
        }
        if let Some(hash) = &self.config_hash {
            writeln!(s, "# config_hash = {hash}").unwrap();
        }
        for r in &self.records {
            writeln!(s, "{}\t{}", r.path, r.text).unwrap();
        }
        s
    }

    /// Parses manifest text; `root` is the directory record paths resolve against.
    pub fn parse(text: &str, root: &Path) -> Result<Self> {
        let mut manifest = DatasetManifest {
            root: root.to_owned(),
            base_seed: None,
            config_hash: None,
            records: Vec::new(),
        };
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if let Some(comment) = line.strip_prefix('#') {
                if let Some((k, v)) = comment.split_once('=') {
                    match k.trim() {
                        "base_seed" => manifest.base_seed = v.trim().parse().ok(),
                        "config_hash" => manifest.config_hash = Some(v.trim().to_owned()),
                        _ => {}
                    }
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let (path, text) = line.split_once('\t').ok_or_else(|| SynthError::Malformed {
                file: MANIFEST_FILE.into(),
                line: i + 1,
                reason: "expected `<path>\\t<text>`".into(),
            })?;
            manifest.records.push(ManifestRecord {
                path: path.to_owned(),
                text: text.nfc().collect(),
            });
        }
        Ok(manifest)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        let text = String::from_utf8(bytes).map_err(|_| SynthError::InvalidUtf8 { path: path.to_owned() })?;
        let root = path.parent().map(Path::to_owned).unwrap_or_default();
        Self::parse(&text, &root)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(io_err(path))
    }

    pub fn image_path(&self, record: &ManifestRecord) -> PathBuf {
        self.root.join(&record.path)
    }

    pub fn load_image(&self, record: &ManifestRecord) -> Result<Image> {
        Ok(load_pgm(&self.image_path(record))?)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Loads every `.pgm` in `dir`, in file-name order. A missing directory is an error;
/// an empty one yields an empty pool.
pub fn load_backgrounds(dir: &Path) -> Result<Vec<Image>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")))
        .collect();
    paths.sort();
    paths.iter().map(|p| Ok(load_pgm(p)?)).collect()
}

/// Renders `count` images into `out_dir`.
///
/// Image `i` draws its word and render parameters from the stream
/// `derive_seed(base_seed, i)`, so the output does not depend on generation order or
/// thread count. Writes `images/NNNNNN.pgm`, `manifest.tsv`, `alphabet.txt` and a
/// `render.cfg` snapshot of the sampling ranges.
pub fn generate_dataset(
    inputs: &GeneratorInputs<'_>,
    count: usize,
    base_seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    if count == 0 {
        return Err(SynthError::EmptyDataset);
    }
    inputs.ranges.validate()?;
    inputs
        .atlas
        .check_coverage(inputs.vocab.words().iter().map(String::as_str))?;
    for w in inputs.vocab.words() {
        inputs.labels.encode(w)?;
    }
    let image_dir = out_dir.join(IMAGE_DIR);
    std::fs::create_dir_all(&image_dir).map_err(io_err(&image_dir))?;

    let words = inputs.vocab.words();
    let records = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(base_seed, i as u64);
            let word = &words[rng.random_range(0..words.len())];
            let spec = sample_render_spec(&mut rng, inputs.ranges, inputs.backgrounds.len())?;
            let (img, _) = render_word(word, &spec, inputs.atlas, inputs.labels, inputs.backgrounds)?;
            let rel = format!("{IMAGE_DIR}/{i:06}.pgm");
            let path = out_dir.join(&rel);
            std::fs::write(&path, encode_pgm(&img)).map_err(io_err(&path))?;
            Ok(ManifestRecord {
                path: rel,
                text: word.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let config_text = inputs.ranges.to_config_string();
    let mut hasher = Sha256::new();
    hasher.update(config_text.as_bytes());
    hasher.update(inputs.labels.to_codepoint_list().as_bytes());
    let manifest = DatasetManifest {
        root: out_dir.to_owned(),
        base_seed: Some(base_seed),
        config_hash: Some(hex::encode(hasher.finalize())),
        records,
    };
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    inputs.labels.save(&out_dir.join(ALPHABET_FILE))?;
    let cfg = out_dir.join(CONFIG_SNAPSHOT_FILE);
    std::fs::write(&cfg, config_text).map_err(io_err(&cfg))?;
    Ok(manifest)
}
