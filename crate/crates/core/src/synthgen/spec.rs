use std::fmt::Write as _;

use rand::Rng as _;

use super::{Result, SynthError};
use crate::config::KvMap;
use crate::rng::Rng;

/// Sampling ranges for every [`RenderSpec`] field. Each pair is `(min, max)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderRanges {
    pub scale: (f64, f64),
    pub stroke_intensity: (f64, f64),
    /// Dilation radius in pixels; sampled values are rounded.
    pub stroke_width: (f64, f64),
    pub kerning: (f64, f64),
    pub skew_deg: (f64, f64),
    pub rotation_deg: (f64, f64),
    /// Each of the 8 corner offsets is drawn from this range.
    pub corner_jitter: (f64, f64),
    pub background_level: (f64, f64),
    /// Absolute foreground/background intensity difference.
    pub contrast: (f64, f64),
    /// Probability of dark text on a lighter background.
    pub dark_text_prob: f64,
    /// Probability of a textured background when the pool is nonempty.
    pub texture_prob: f64,
    /// Strength of the multiplicative texture on the foreground layer.
    pub fg_texture: (f64, f64),
    pub alpha_start: (f64, f64),
    pub alpha_end: (f64, f64),
    pub noise_sigma: (f64, f64),
    /// Blank border around the text, in pixels; sampled values are rounded.
    pub margin: (f64, f64),
    /// Widest allowed rendering (before any resizing).
    pub max_width: usize,
}

impl Default for RenderRanges {
    fn default() -> Self {
        Self {
            scale: (1.0, 1.5),
            stroke_intensity: (0.85, 1.0),
            stroke_width: (0.0, 1.0),
            kerning: (-1.0, 2.0),
            skew_deg: (-10.0, 10.0),
            rotation_deg: (-4.0, 4.0),
            corner_jitter: (-2.0, 2.0),
            background_level: (0.0, 1.0),
            contrast: (0.35, 0.9),
            dark_text_prob: 0.5,
            texture_prob: 0.5,
            fg_texture: (0.0, 0.3),
            alpha_start: (0.8, 1.0),
            alpha_end: (0.8, 1.0),
            noise_sigma: (0.0, 0.05),
            margin: (1.0, 4.0),
            max_width: 512,
        }
    }
}

macro_rules! range_fields {
    ($m:ident) => {
        $m!(scale, "scale");
        $m!(stroke_intensity, "stroke_intensity");
        $m!(stroke_width, "stroke_width");
        $m!(kerning, "kerning");
        $m!(skew_deg, "skew_deg");
        $m!(rotation_deg, "rotation_deg");
        $m!(corner_jitter, "corner_jitter");
        $m!(background_level, "background_level");
        $m!(contrast, "contrast");
        $m!(fg_texture, "fg_texture");
        $m!(alpha_start, "alpha_start");
        $m!(alpha_end, "alpha_end");
        $m!(noise_sigma, "noise_sigma");
        $m!(margin, "margin");
    };
}

impl RenderRanges {
    /// Reads the range keys it knows from `kv`, falling back to defaults.
    pub fn from_kv(kv: &mut KvMap) -> Result<Self> {
        let mut r = Self::default();
        macro_rules! read {
            ($field:ident, $key:literal) => {
                r.$field = kv.range($key, r.$field)?;
            };
        }
        range_fields!(read);
        r.dark_text_prob = kv.get_or("dark_text_prob", r.dark_text_prob)?;
        r.texture_prob = kv.get_or("texture_prob", r.texture_prob)?;
        r.max_width = kv.get_or("max_width", r.max_width)?;
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        macro_rules! check {
            ($field:ident, $key:literal) => {
                let (min, max) = self.$field;
                if !(min <= max) {
                    return Err(SynthError::InvertedRange { name: $key, min, max });
                }
            };
        }
        range_fields!(check);
        let unit = |name: &str, (lo, hi): (f64, f64)| {
            if lo < 0.0 || hi > 1.0 {
                Err(SynthError::InvalidRanges(format!("{name} must lie in [0, 1]")))
            } else {
                Ok(())
            }
        };
        unit("stroke_intensity", self.stroke_intensity)?;
        unit("background_level", self.background_level)?;
        unit("contrast", self.contrast)?;
        unit("fg_texture", self.fg_texture)?;
        unit("alpha_start", self.alpha_start)?;
        unit("alpha_end", self.alpha_end)?;
        unit("dark_text_prob", (self.dark_text_prob, self.dark_text_prob))?;
        unit("texture_prob", (self.texture_prob, self.texture_prob))?;
        if self.scale.0 <= 0.0 {
            return Err(SynthError::InvalidRanges("scale must be positive".into()));
        }
        if self.stroke_width.0 < 0.0 || self.noise_sigma.0 < 0.0 || self.margin.0 < 0.0 {
            return Err(SynthError::InvalidRanges(
                "stroke_width, noise_sigma and margin must be non-negative".into(),
            ));
        }
        if self.max_width == 0 {
            return Err(SynthError::InvalidRanges("max_width must be positive".into()));
        }
        Ok(())
    }

    /// Canonical `key = value` text; hashing it identifies the configuration.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        macro_rules! emit {
            ($field:ident, $key:literal) => {
                writeln!(s, "{} = {:?}, {:?}", $key, self.$field.0, self.$field.1).unwrap();
            };
        }
        range_fields!(emit);
        writeln!(s, "dark_text_prob = {:?}", self.dark_text_prob).unwrap();
        writeln!(s, "texture_prob = {:?}", self.texture_prob).unwrap();
        writeln!(s, "max_width = {}", self.max_width).unwrap();
        s
    }
}

/// A crop window inside a background-pool image, as fractions of the free range.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TextureCrop {
    pub index: usize,
    pub fx: f64,
    pub fy: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Background {
    Uniform,
    Crop(TextureCrop),
}

/// Every parameter of a single word rendering.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderSpec {
    pub scale: f64,
    pub stroke_intensity: f64,
    pub stroke_width: usize,
    pub kerning: f64,
    pub skew_deg: f64,
    pub rotation_deg: f64,
    /// `(dx, dy)` offsets of the top-left, top-right, bottom-right and bottom-left corners.
    pub corner_jitter: [[f64; 2]; 4],
    pub foreground_level: f64,
    pub background_level: f64,
    pub background: Background,
    /// Multiplicative texture on the foreground layer, with its strength.
    pub fg_texture: Option<(TextureCrop, f64)>,
    pub alpha_start: f64,
    pub alpha_end: f64,
    pub noise_sigma: f64,
    pub noise_seed: u64,
    pub margin: usize,
    pub max_width: usize,
}

impl RenderSpec {
    /// No distortion, opaque white text on black, no noise, no margin.
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            stroke_intensity: 1.0,
            stroke_width: 0,
            kerning: 0.0,
            skew_deg: 0.0,
            rotation_deg: 0.0,
            corner_jitter: [[0.0; 2]; 4],
            foreground_level: 1.0,
            background_level: 0.0,
            background: Background::Uniform,
            fg_texture: None,
            alpha_start: 1.0,
            alpha_end: 1.0,
            noise_sigma: 0.0,
            noise_seed: 0,
            margin: 0,
            max_width: 512,
        }
    }
}

fn uniform(rng: &mut Rng, (lo, hi): (f64, f64)) -> f64 {
    let u: f64 = rng.random();
    lo + (hi - lo) * u
}

/// Draws every field uniformly from its range. `pool_size` is the number of
/// background textures available.
pub fn sample_render_spec(rng: &mut Rng, ranges: &RenderRanges, pool_size: usize) -> Result<RenderSpec> {
    ranges.validate()?;
    let scale = uniform(rng, ranges.scale);
    let stroke_intensity = uniform(rng, ranges.stroke_intensity);
    let stroke_width = uniform(rng, ranges.stroke_width).round() as usize;
    let kerning = uniform(rng, ranges.kerning);
    let skew_deg = uniform(rng, ranges.skew_deg);
    let rotation_deg = uniform(rng, ranges.rotation_deg);
    let mut corner_jitter = [[0.0; 2]; 4];
    for corner in &mut corner_jitter {
        for v in corner.iter_mut() {
            *v = uniform(rng, ranges.corner_jitter);
        }
    }
    let background_level = uniform(rng, ranges.background_level);
    let contrast = uniform(rng, ranges.contrast);
    let dark = rng.random::<f64>() < ranges.dark_text_prob;
    // Text goes to whichever side has room for the sampled contrast, preferring the
    // sampled polarity.
    let foreground_level = match (dark, background_level - contrast >= 0.0, background_level + contrast <= 1.0) {
        (true, true, _) | (false, true, false) => background_level - contrast,
        (false, _, true) | (true, false, true) => background_level + contrast,
        _ => {
            if background_level >= 0.5 {
                0.0
            } else {
                1.0
            }
        }
    };
    let crop = |rng: &mut Rng| TextureCrop {
        index: rng.random_range(0..pool_size),
        fx: rng.random(),
        fy: rng.random(),
    };
    let background = if pool_size > 0 && rng.random::<f64>() < ranges.texture_prob {
        Background::Crop(crop(rng))
    } else {
        Background::Uniform
    };
    let fg_strength = uniform(rng, ranges.fg_texture);
    let fg_texture = if pool_size > 0 && fg_strength > 0.0 {
        Some((crop(rng), fg_strength))
    } else {
        None
    };
    let alpha_start = uniform(rng, ranges.alpha_start);
    let alpha_end = uniform(rng, ranges.alpha_end);
    let noise_sigma = uniform(rng, ranges.noise_sigma);
    let noise_seed = rng.random();
    let margin = uniform(rng, ranges.margin).round() as usize;
    Ok(RenderSpec {
        scale,
        stroke_intensity,
        stroke_width,
        kerning,
        skew_deg,
        rotation_deg,
        corner_jitter,
        foreground_level,
        background_level,
        background,
        fg_texture,
        alpha_start,
        alpha_end,
        noise_sigma,
        noise_seed,
        margin,
        max_width: ranges.max_width,
    })
}
