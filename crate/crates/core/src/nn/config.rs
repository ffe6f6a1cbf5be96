//! Recognizer architecture description.

use std::fmt;
use std::str::FromStr;

use super::conv::conv_out_len;
use super::{NnError, Result};
use crate::config::KvMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// Convolutional stack, column features, BLSTM stack, linear head.
    Hybrid,
    /// Raw pixel columns straight into the BLSTM stack.
    RnnOnly,
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "hybrid" => Ok(Variant::Hybrid),
            "rnn-only" => Ok(Variant::RnnOnly),
            _ => Err("expected `hybrid` or `rnn-only`".into()),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Hybrid => "hybrid",
            Variant::RnnOnly => "rnn-only",
        })
    }
}

/// How `blstm_size` maps to hidden units.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlstmSizeMeans {
    /// Both directions together (`h = size / 2` per direction).
    Concatenated,
    /// Each direction (`h = size`, layer output `2·size`).
    PerDirection,
}

impl FromStr for BlstmSizeMeans {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "concatenated" => Ok(BlstmSizeMeans::Concatenated),
            "per_direction" => Ok(BlstmSizeMeans::PerDirection),
            _ => Err("expected `concatenated` or `per_direction`".into()),
        }
    }
}

impl fmt::Display for BlstmSizeMeans {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BlstmSizeMeans::Concatenated => "concatenated",
            BlstmSizeMeans::PerDirection => "per_direction",
        })
    }
}

/// One convolution followed by optional batch norm, ReLU and optional max pooling.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvLayerSpec {
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub pad: (usize, usize),
    pub batch_norm: bool,
    pub pool: Option<(usize, usize)>,
}

impl ConvLayerSpec {
    pub fn new(out_channels: usize, kernel: (usize, usize), pad: (usize, usize)) -> Self {
        Self {
            out_channels,
            kernel,
            pad,
            batch_norm: false,
            pool: None,
        }
    }

    pub fn bn(mut self) -> Self {
        self.batch_norm = true;
        self
    }

    pub fn pool(mut self, h: usize, w: usize) -> Self {
        self.pool = Some((h, w));
        self
    }
}

fn parse_pair(s: &str, sep: char) -> Option<(usize, usize)> {
    let (a, b) = s.split_once(sep)?;
    Some((a.parse().ok()?, b.parse().ok()?))
}

impl FromStr for ConvLayerSpec {
    type Err = String;

    /// `channels:KHxKW[:pP|:pPHxPW][:bn][:poolHxW]`, e.g. `256:3x3:p1:bn:pool2x1`.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let mut parts = s.trim().split(':');
        let channels = parts
            .next()
            .and_then(|c| c.parse().ok())
            .filter(|&c| c > 0)
            .ok_or_else(|| format!("bad channel count in `{s}`"))?;
        let kernel = parts
            .next()
            .and_then(|k| parse_pair(k, 'x'))
            .filter(|&(h, w)| h > 0 && w > 0)
            .ok_or_else(|| format!("bad kernel in `{s}`"))?;
        let mut spec = ConvLayerSpec::new(channels, kernel, (0, 0));
        for part in parts {
            if part == "bn" {
                spec.batch_norm = true;
            } else if let Some(p) = part.strip_prefix("pool") {
                spec.pool = Some(
                    parse_pair(p, 'x')
                        .filter(|&(h, w)| h > 0 && w > 0)
                        .ok_or_else(|| format!("bad pool window in `{s}`"))?,
                );
            } else if let Some(p) = part.strip_prefix('p') {
                spec.pad = match p.parse() {
                    Ok(v) => (v, v),
                    Err(_) => parse_pair(p, 'x').ok_or_else(|| format!("bad padding in `{s}`"))?,
                };
            } else {
                return Err(format!("unknown conv option `{part}` in `{s}`"));
            }
        }
        Ok(spec)
    }
}

impl fmt::Display for ConvLayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}x{}", self.out_channels, self.kernel.0, self.kernel.1)?;
        if self.pad.0 == self.pad.1 {
            write!(f, ":p{}", self.pad.0)?;
        } else {
            write!(f, ":p{}x{}", self.pad.0, self.pad.1)?;
        }
        if self.batch_norm {
            f.write_str(":bn")?;
        }
        if let Some((h, w)) = self.pool {
            write!(f, ":pool{h}x{w}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub input_height: usize,
    /// Ignored by the rnn-only variant.
    pub conv: Vec<ConvLayerSpec>,
    pub blstm_layers: usize,
    pub blstm_size: usize,
    pub blstm_size_means: BlstmSizeMeans,
    /// Output classes, blank included.
    pub classes: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl ModelConfig {
    /// Seven conv layers (64, 128, 256, 256, 512, 512 at 3x3 pad 1, then 512 at 2x2 valid),
    /// pools 2x2, 2x2, 2x1, 2x1 after conv 1, 2, 4, 5, batch norm after conv 3 and 4,
    /// two BLSTM layers of size 512.
    pub fn standard(classes: usize) -> Self {
        let c3 = |ch| ConvLayerSpec::new(ch, (3, 3), (1, 1));
        Self {
            variant: Variant::Hybrid,
            input_height: 32,
            conv: vec![
                c3(64).pool(2, 2),
                c3(128).pool(2, 2),
                c3(256).bn(),
                c3(256).bn().pool(2, 1),
                c3(512).pool(2, 1),
                c3(512),
                ConvLayerSpec::new(512, (2, 2), (0, 0)),
            ],
            blstm_layers: 2,
            blstm_size: 512,
            blstm_size_means: BlstmSizeMeans::Concatenated,
            classes,
            bn_momentum: 0.9,
            bn_eps: 1e-5,
        }
    }

    /// Same layout as [`ModelConfig::standard`] with narrow layers, for small alphabets on a CPU.
    pub fn toy(classes: usize) -> Self {
        let mut cfg = Self::standard(classes);
        for (layer, ch) in cfg.conv.iter_mut().zip([8, 16, 32, 32, 48, 48, 64]) {
            layer.out_channels = ch;
        }
        cfg.blstm_size = 64;
        cfg
    }

    /// The rnn-only baseline with the given recurrent width.
    pub fn rnn_only(classes: usize, input_height: usize, blstm_layers: usize, blstm_size: usize) -> Self {
        Self {
            variant: Variant::RnnOnly,
            input_height,
            conv: Vec::new(),
            blstm_layers,
            blstm_size,
            blstm_size_means: BlstmSizeMeans::Concatenated,
            classes,
            bn_momentum: 0.9,
            bn_eps: 1e-5,
        }
    }

    /// Two conv layers and one BLSTM with 4 units per direction on 16-pixel-high input.
    pub fn tiny(classes: usize) -> Self {
        Self {
            variant: Variant::Hybrid,
            input_height: 16,
            conv: vec![
                ConvLayerSpec::new(3, (3, 3), (1, 1)).bn().pool(2, 2),
                ConvLayerSpec::new(4, (8, 1), (0, 0)),
            ],
            blstm_layers: 1,
            blstm_size: 4,
            blstm_size_means: BlstmSizeMeans::PerDirection,
            classes,
            bn_momentum: 0.9,
            bn_eps: 1e-5,
        }
    }

    /// Hidden units per LSTM direction.
    pub fn hidden_per_direction(&self) -> usize {
        match self.blstm_size_means {
            BlstmSizeMeans::Concatenated => self.blstm_size / 2,
            BlstmSizeMeans::PerDirection => self.blstm_size,
        }
    }

    fn active_conv(&self) -> &[ConvLayerSpec] {
        match self.variant {
            Variant::Hybrid => &self.conv,
            Variant::RnnOnly => &[],
        }
    }

    /// Product of pool widths; inputs are padded to a multiple of it.
    pub fn width_multiple(&self) -> usize {
        self.active_conv().iter().filter_map(|l| l.pool).map(|p| p.1).product()
    }

    /// Width after right-padding to [`ModelConfig::width_multiple`].
    pub fn padded_width(&self, width: usize) -> usize {
        width.div_ceil(self.width_multiple()) * self.width_multiple()
    }

    /// Feature dimension entering the first BLSTM layer.
    pub fn feature_dim(&self) -> usize {
        match self.variant {
            Variant::Hybrid => self.conv.last().map_or(1, |l| l.out_channels),
            Variant::RnnOnly => self.input_height,
        }
    }

    /// Traces `(height, width)` through the stack; `None` when some step is invalid.
    fn trace(&self, height: usize, width: usize) -> Option<(usize, usize)> {
        let (mut h, mut w) = (height, width);
        for l in self.active_conv() {
            h = conv_out_len(h, l.kernel.0, l.pad.0, 1)?;
            w = conv_out_len(w, l.kernel.1, l.pad.1, 1)?;
            if let Some((ph, pw)) = l.pool {
                if h % ph != 0 || w % pw != 0 {
                    return None;
                }
                h /= ph;
                w /= pw;
            }
            if h == 0 || w == 0 {
                return None;
            }
        }
        Some((h, w))
    }

    /// Output timesteps for an input of `width` columns (before padding), if valid.
    pub fn output_len(&self, width: usize) -> Option<usize> {
        if width == 0 {
            return None;
        }
        match (self.variant, self.trace(self.input_height, self.padded_width(width))) {
            (Variant::RnnOnly, _) => Some(width),
            (Variant::Hybrid, Some((1, t))) => Some(t),
            _ => None,
        }
    }

    /// Narrowest input accepted.
    pub fn min_width(&self) -> usize {
        (1..=4096).find(|&w| self.output_len(w).is_some()).unwrap_or(usize::MAX)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NnError::Config(m));
        if self.input_height == 0 {
            return bad("input_height must be positive".into());
        }
        if self.classes < 2 {
            return bad("classes must be at least 2 (blank plus one label)".into());
        }
        if self.blstm_layers == 0 || self.hidden_per_direction() == 0 {
            return bad("need at least one BLSTM layer with a positive size".into());
        }
        if self.blstm_size_means == BlstmSizeMeans::Concatenated && self.blstm_size % 2 != 0 {
            return bad(format!("concatenated blstm_size {} is odd", self.blstm_size));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum < 1.0) || !(self.bn_eps > 0.0) {
            return bad("bn_momentum must lie in (0, 1) and bn_eps must be positive".into());
        }
        if self.variant == Variant::Hybrid {
            if self.conv.is_empty() {
                return bad("hybrid variant needs at least one conv layer".into());
            }
            let w = self.width_multiple() * 64;
            match self.trace(self.input_height, w) {
                Some((1, _)) => {}
                Some((h, _)) => {
                    return bad(format!(
                        "conv stack maps input height {} to {h}, expected 1",
                        self.input_height
                    ))
                }
                None => {
                    return bad(format!(
                        "conv stack arithmetic fails for input height {}",
                        self.input_height
                    ))
                }
            }
        }
        Ok(())
    }

    pub fn to_config_string(&self) -> String {
        let conv: Vec<String> = self.conv.iter().map(|l| l.to_string()).collect();
        format!(
            "variant = {}\ninput_height = {}\nconv = {}\nblstm_layers = {}\nblstm_size = {}\nblstm_size_means = {}\nclasses = {}\nbn_momentum = {}\nbn_eps = {}\n",
            self.variant,
            self.input_height,
            conv.join("; "),
            self.blstm_layers,
            self.blstm_size,
            self.blstm_size_means,
            self.classes,
            self.bn_momentum,
            self.bn_eps
        )
    }

    /// Reads the model keys from `kv`, falling back to `base` for absent ones.
    pub fn from_kv(kv: &mut KvMap, base: &ModelConfig) -> Result<Self> {
        let conv = match kv.raw("conv") {
            Some(text) => {
                let text = text.to_owned();
                text.split(';')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| s.parse::<ConvLayerSpec>().map_err(NnError::Config))
                    .collect::<Result<Vec<_>>>()?
            }
            None => base.conv.clone(),
        };
        let cfg = Self {
            variant: kv.get_or("variant", base.variant)?,
            input_height: kv.get_or("input_height", base.input_height)?,
            conv,
            blstm_layers: kv.get_or("blstm_layers", base.blstm_layers)?,
            blstm_size: kv.get_or("blstm_size", base.blstm_size)?,
            blstm_size_means: kv.get_or("blstm_size_means", base.blstm_size_means)?,
            classes: kv.get_or("classes", base.classes)?,
            bn_momentum: kv.get_or("bn_momentum", base.bn_momentum)?,
            bn_eps: kv.get_or("bn_eps", base.bn_eps)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KvMap::parse(text)?;
        let cfg = Self::from_kv(&mut kv, &Self::standard(2))?;
        kv.finish()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_shapes() {
        let cfg = ModelConfig::standard(13);
        cfg.validate().unwrap();
        assert_eq!(cfg.output_len(100), Some(24));
        assert_eq!(cfg.width_multiple(), 4);
        assert_eq!(cfg.hidden_per_direction(), 256);
        assert_eq!(cfg.feature_dim(), 512);
        // 5 pads to 8 → 2 columns → final 2x2 conv leaves 1.
        assert_eq!(cfg.min_width(), 5);
        assert_eq!(cfg.output_len(4), None);
    }

    #[test]
    fn rnn_only_shapes() {
        let cfg = ModelConfig::rnn_only(13, 32, 2, 512);
        cfg.validate().unwrap();
        assert_eq!(cfg.output_len(100), Some(100));
        assert_eq!(cfg.min_width(), 1);
        assert_eq!(cfg.feature_dim(), 32);
    }

    #[test]
    fn presets_validate() {
        ModelConfig::toy(13).validate().unwrap();
        let tiny = ModelConfig::tiny(4);
        tiny.validate().unwrap();
        assert_eq!(tiny.output_len(24), Some(12));
        assert_eq!(tiny.hidden_per_direction(), 4);
    }

    #[test]
    fn height_mismatch_is_rejected() {
        let mut cfg = ModelConfig::standard(13);
        cfg.input_height = 64;
        assert!(matches!(cfg.validate(), Err(NnError::Config(_))));
    }

    #[test]
    fn round_trips_through_text() {
        for cfg in [ModelConfig::standard(7), ModelConfig::tiny(3), ModelConfig::rnn_only(5, 32, 1, 8)] {
            let text = cfg.to_config_string();
            assert_eq!(ModelConfig::parse(&text).unwrap(), cfg, "{text}");
        }
        let spec: ConvLayerSpec = "16:3x1:p1x0:bn:pool2x1".parse().unwrap();
        assert_eq!(spec.pad, (1, 0));
        assert_eq!(spec.to_string(), "16:3x1:p1x0:bn:pool2x1");
        assert!("16:3x3:bogus".parse::<ConvLayerSpec>().is_err());
    }
}
