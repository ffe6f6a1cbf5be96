//! Binary checkpoints.
//!
//! ```text
//! "CRNNCKPT1\n"
//! key = value lines        model configuration, optimizer settings, caller metadata
//! "\n"                     empty line ends the block
//! u32 record count
//! per record: u32 name length, UTF-8 name, u32 rank, rank × u32 extents,
//!             product(extents) × f32 values
//! ```
//!
//! Integers and floats are little-endian. Parameters and batch-norm buffers use the
//! names from [`Model::named_params`] and [`Model::named_buffers`]; Adadelta state is
//! stored as `opt/<name>/sq_grad` and `opt/<name>/sq_delta`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::adadelta::Adadelta;
use super::config::ModelConfig;
use super::model::Model;
use super::tensor::{Real, Tensor};
use super::{NnError, Result};
use crate::config::KvMap;

pub const MAGIC: &[u8] = b"CRNNCKPT1\n";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<F> {
    pub model: Model<F>,
    pub optimizer: Option<Adadelta<F>>,
    /// Caller-supplied `key = value` pairs (label alphabet, epoch counters, ...).
    pub meta: BTreeMap<String, String>,
}

fn bad(msg: impl Into<String>) -> NnError {
    NnError::BadCheckpoint(msg.into())
}

fn push_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| bad(format!("value {v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn push_record<F: Real>(out: &mut Vec<u8>, name: &str, t: &Tensor<F>) -> Result<()> {
    push_u32(out, name.len())?;
    out.extend_from_slice(name.as_bytes());
    push_u32(out, t.rank())?;
    for &d in t.shape() {
        push_u32(out, d)?;
    }
    for &v in t.data() {
        out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    Ok(())
}

fn check_meta_entry(k: &str, v: &str) -> Result<()> {
    let key_ok = !k.is_empty() && !k.contains(['=', '\n', '#']) && k.trim() == k;
    if !key_ok || v.contains('\n') || v.trim() != v {
        return Err(bad(format!("metadata entry {k:?} = {v:?} cannot be stored")));
    }
    Ok(())
}

pub fn encode_checkpoint<F: Real>(model: &Model<F>, optimizer: Option<&Adadelta<F>>, meta: &BTreeMap<String, String>) -> Result<Vec<u8>> {
    let mut header = model.config().to_config_string();
    if let Some(opt) = optimizer {
        header.push_str(&format!("opt.rho = {}\nopt.eps = {}\n", opt.rho, opt.eps));
    }
    for (k, v) in meta {
        check_meta_entry(k, v)?;
        if KvMap::parse(&header)?.contains(k) {
            return Err(bad(format!("metadata key {k:?} collides with a reserved key")));
        }
        header.push_str(&format!("{k} = {v}\n"));
    }
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(header.as_bytes());
    out.push(b'\n');

    let params = model.named_params();
    let buffers = model.named_buffers();
    let mut count = params.len() + buffers.len();
    if let Some(opt) = optimizer {
        if opt.state.len() != params.len() {
            return Err(bad("optimizer state does not match the parameter list"));
        }
        count += 2 * params.len();
    }
    push_u32(&mut out, count)?;
    for (name, t) in params.iter().chain(&buffers) {
        push_record(&mut out, name, t)?;
    }
    if let Some(opt) = optimizer {
        for ((name, _), (sg, sd)) in params.iter().zip(&opt.state) {
            push_record(&mut out, &format!("opt/{name}/sq_grad"), sg)?;
            push_record(&mut out, &format!("opt/{name}/sq_delta"), sd)?;
        }
    }
    Ok(out)
}

/// Writes atomically (temporary file, then rename).
pub fn save_checkpoint<F: Real>(
    path: &Path,
    model: &Model<F>,
    optimizer: Option<&Adadelta<F>>,
    meta: &BTreeMap<String, String>,
) -> Result<()> {
    let bytes = encode_checkpoint(model, optimizer, meta)?;
    let tmp = path.with_extension("tmp");
    let io = |source| NnError::Io {
        path: path.to_owned(),
        source,
    };
    fs::write(&tmp, bytes).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| bad("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn decode_checkpoint<F: Real>(bytes: &[u8]) -> Result<Checkpoint<F>> {
    if !bytes.starts_with(MAGIC) {
        return Err(bad("missing CRNNCKPT1 magic"));
    }
    let body = &bytes[MAGIC.len()..];
    let end = body
        .windows(2)
        .position(|w| w == b"\n\n")
        .map(|p| p + 1)
        .or_else(|| body.starts_with(b"\n").then_some(0))
        .ok_or_else(|| bad("unterminated configuration block"))?;
    let header = std::str::from_utf8(&body[..end]).map_err(|_| bad("configuration block is not UTF-8"))?;
    let mut kv = KvMap::parse(header)?;
    let config = ModelConfig::from_kv(&mut kv, &ModelConfig::standard(2))?;
    let opt_params = match (kv.get::<f64>("opt.rho")?, kv.get::<f64>("opt.eps")?) {
        (Some(r), Some(e)) => Some((r, e)),
        (None, None) => None,
        _ => return Err(bad("incomplete optimizer settings")),
    };
    let meta: BTreeMap<String, String> = kv.remaining().into_iter().collect();

    let mut r = Reader {
        bytes: &body[end + 1..],
        pos: 0,
    };
    let count = r.u32()?;
    let mut records: BTreeMap<String, Tensor<F>> = BTreeMap::new();
    for _ in 0..count {
        let n = r.u32()?;
        let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| bad("record name is not UTF-8"))?;
        let rank = r.u32()?;
        if rank > 8 {
            return Err(bad(format!("record {name}: rank {rank}")));
        }
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let len = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&l| l.checked_mul(4).is_some_and(|b| b <= r.bytes.len() - r.pos))
            .ok_or_else(|| bad(format!("record {name}: truncated data")))?;
        let raw = r.take(4 * len)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| F::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        if records.insert(name.clone(), Tensor::from_vec(&shape, data)?).is_some() {
            return Err(bad(format!("duplicate record {name}")));
        }
    }
    if r.pos != r.bytes.len() {
        return Err(bad("trailing bytes after the last record"));
    }

    let mut model = Model::<F>::zeros(&config)?;
    let names: Vec<String> = model
        .named_params()
        .into_iter()
        .chain(model.named_buffers())
        .map(|(n, _)| n)
        .collect();
    for name in &names {
        let t = records.remove(name).ok_or_else(|| bad(format!("missing record {name}")))?;
        let slot = model.tensor_mut(name).expect("name from the model");
        if slot.shape() != t.shape() {
            return Err(bad(format!("record {name}: shape {:?}, model expects {:?}", t.shape(), slot.shape())));
        }
        *slot = t;
    }
    let optimizer = match opt_params {
        Some((rho, eps)) => {
            let mut opt = Adadelta::new(model.named_params().into_iter().map(|(_, t)| t), rho, eps)?;
            for ((name, _), (sg, sd)) in model.named_params().into_iter().zip(&mut opt.state) {
                for (suffix, slot) in [("sq_grad", &mut *sg), ("sq_delta", &mut *sd)] {
                    let key = format!("opt/{name}/{suffix}");
                    let t = records.remove(&key).ok_or_else(|| bad(format!("missing record {key}")))?;
                    if t.shape() != slot.shape() {
                        return Err(bad(format!("record {key}: shape {:?}", t.shape())));
                    }
                    *slot = t;
                }
            }
            Some(opt)
        }
        None => None,
    };
    if let Some(extra) = records.keys().next() {
        return Err(bad(format!("unexpected record {extra}")));
    }
    Ok(Checkpoint { model, optimizer, meta })
}

pub fn load_checkpoint<F: Real>(path: &Path) -> Result<Checkpoint<F>> {
    let bytes = fs::read(path).map_err(|source| NnError::Io {
        path: path.to_owned(),
        source,
    })?;
    decode_checkpoint(&bytes)
}
