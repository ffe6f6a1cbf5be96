//! Grayscale raster primitives.
//!
//! Intensities are `f32` in `[0, 1]`, stored row-major. 8-bit values only exist at the
//! file boundary (binary PGM).

mod geometry;
mod pgm;

pub use geometry::{resize_bilinear, resize_fixed_height, warp_perspective, warp_perspective_into, Homography};
pub use pgm::{decode_pgm, encode_pgm, load_pgm, save_pgm};

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum ImagingError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("malformed PGM header: {0}")]
    MalformedHeader(String),
    #[error("truncated PGM payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("unsupported maxval {0}, only 255 is accepted")]
    UnsupportedMaxval(u32),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid dimensions {height}x{width}")]
    InvalidDimensions { height: usize, width: usize },
    #[error("singular homography (|det| = {0:e})")]
    SingularHomography(f64),
}

pub type Result<T> = std::result::Result<T, ImagingError>;

/// A grayscale raster with intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl Image {
    /// An image filled with a constant intensity.
    pub fn filled(height: usize, width: usize, value: f32) -> Result<Self> {
        check_dims(height, width)?;
        Ok(Self {
            height,
            width,
            pixels: vec![value.clamp(0.0, 1.0); height * width],
        })
    }

    /// Wraps row-major pixels. Values are clamped into `[0, 1]`; NaN becomes 0.
    pub fn from_pixels(height: usize, width: usize, mut pixels: Vec<f32>) -> Result<Self> {
        check_dims(height, width)?;
        if pixels.len() != height * width {
            return Err(ImagingError::DimensionMismatch(format!(
                "{} pixels for a {height}x{width} image",
                pixels.len()
            )));
        }
        for p in &mut pixels {
            *p = if p.is_nan() { 0.0 } else { p.clamp(0.0, 1.0) };
        }
        Ok(Self { height, width, pixels })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Result<Self> {
        check_dims(height, width)?;
        let mut pixels = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(y, x));
            }
        }
        Self::from_pixels(height, width, pixels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f32> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    /// Sets a pixel, clamping the value into `[0, 1]`.
    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f32) {
        self.pixels[y * self.width + x] = v.clamp(0.0, 1.0);
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Applies `f` to every pixel, clamping the results.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Image {
        Image {
            height: self.height,
            width: self.width,
            pixels: self.pixels.iter().map(|&p| f(p).clamp(0.0, 1.0)).collect(),
        }
    }

    /// Copies the `h`x`w` window whose top-left corner is `(y0, x0)`.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Image> {
        check_dims(h, w)?;
        if y0 + h > self.height || x0 + w > self.width {
            return Err(ImagingError::DimensionMismatch(format!(
                "crop {h}x{w}+{y0}+{x0} exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut pixels = Vec::with_capacity(h * w);
        for y in y0..y0 + h {
            pixels.extend_from_slice(&self.pixels[y * self.width + x0..y * self.width + x0 + w]);
        }
        Ok(Image { height: h, width: w, pixels })
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.pixels
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &p| (lo.min(p), hi.max(p)))
    }
}

fn check_dims(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 {
        Err(ImagingError::InvalidDimensions { height, width })
    } else {
        Ok(())
    }
}

fn dims_match(what: &str, a: &Image, b: &Image) -> Result<()> {
    if a.same_dims(b) {
        Ok(())
    } else {
        Err(ImagingError::DimensionMismatch(format!(
            "{what}: {}x{} vs {}x{}",
            a.height, a.width, b.height, b.width
        )))
    }
}

/// Luma with ITU-R BT.601 weights.
pub fn rgb_to_gray(r: &Image, g: &Image, b: &Image) -> Result<Image> {
    dims_match("green channel", r, g)?;
    dims_match("blue channel", r, b)?;
    let pixels = r
        .pixels
        .iter()
        .zip(&g.pixels)
        .zip(&b.pixels)
        .map(|((&r, &g), &b)| 0.299 * r + 0.587 * g + 0.114 * b)
        .collect();
    Image::from_pixels(r.height, r.width, pixels)
}

/// `alpha * fg + (1 - alpha) * bg`, pixelwise.
pub fn alpha_composite(fg: &Image, alpha: &Image, bg: &Image) -> Result<Image> {
    dims_match("alpha", fg, alpha)?;
    dims_match("background", fg, bg)?;
    let pixels = fg
        .pixels
        .iter()
        .zip(&alpha.pixels)
        .zip(&bg.pixels)
        .map(|((&f, &a), &b)| a * f + (1.0 - a) * b)
        .collect();
    Image::from_pixels(fg.height, fg.width, pixels)
}
