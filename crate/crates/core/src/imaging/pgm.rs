//! Binary PGM (P5) with maxval 255.

use std::fs;
use std::path::Path;

use super::{Image, ImagingError, Result};

pub fn load_pgm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|source| ImagingError::Io {
        path: path.to_owned(),
        source,
    })?;
    decode_pgm(&bytes)
}

pub fn save_pgm(img: &Image, path: &Path) -> Result<()> {
    fs::write(path, encode_pgm(img)).map_err(|source| ImagingError::Io {
        path: path.to_owned(),
        source,
    })
}

pub fn encode_pgm(img: &Image) -> Vec<u8> {
    let header = format!("P5\n{} {}\n255\n", img.width(), img.height());
    let mut out = Vec::with_capacity(header.len() + img.pixels().len());
    out.extend_from_slice(header.as_bytes());
    out.extend(img.pixels().iter().map(|&p| (p * 255.0).round().clamp(0.0, 255.0) as u8));
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_whitespace_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(ImagingError::MalformedHeader(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| ImagingError::MalformedHeader(format!("{what} out of range")))
    }
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Image> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(ImagingError::MalformedHeader("missing magic number".into()));
    }
    match bytes[1] {
        b'5' => {}
        b'1'..=b'7' => {
            return Err(ImagingError::UnsupportedFormat(format!(
                "P{} (only binary P5 is supported)",
                bytes[1] as char
            )))
        }
        _ => return Err(ImagingError::MalformedHeader("unknown magic number".into())),
    }
    let mut cur = Cursor { bytes, pos: 2 };
    let width = cur.number("width")? as usize;
    let height = cur.number("height")? as usize;
    let maxval = cur.number("maxval")?;
    if maxval != 255 {
        return Err(ImagingError::UnsupportedMaxval(maxval));
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(cur.pos) {
        Some(c) if c.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(ImagingError::MalformedHeader("no whitespace after maxval".into())),
    }
    if width == 0 || height == 0 {
        return Err(ImagingError::InvalidDimensions { height, width });
    }
    let expected = width
        .checked_mul(height)
        .ok_or_else(|| ImagingError::MalformedHeader("dimensions overflow".into()))?;
    let payload = &bytes[cur.pos..];
    if payload.len() < expected {
        return Err(ImagingError::Truncated {
            expected,
            found: payload.len(),
        });
    }
    let pixels = payload[..expected].iter().map(|&b| b as f32 / 255.0).collect();
    Image::from_pixels(height, width, pixels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn decodes_linear_mapping() {
        let mut file = b"P5\n2 2\n255\n".to_vec();
        file.extend_from_slice(&[0, 255, 128, 64]);
        let img = decode_pgm(&file).unwrap();
        assert_eq!((img.height(), img.width()), (2, 2));
        assert_eq!(img.pixels(), &[0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0]);
    }

    #[test]
    fn header_comments_are_skipped() {
        let mut file = b"P5 # made by hand\n1 # width\n2\n255\n".to_vec();
        file.extend_from_slice(&[10, 20]);
        let img = decode_pgm(&file).unwrap();
        assert_eq!((img.height(), img.width()), (2, 1));
    }

    #[test]
    fn rejects_ascii_variant() {
        assert!(matches!(
            decode_pgm(b"P2\n1 1\n255\n0\n"),
            Err(ImagingError::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn rejects_bad_headers_and_payloads() {
        assert!(matches!(decode_pgm(b"XY"), Err(ImagingError::MalformedHeader(_))));
        assert!(matches!(decode_pgm(b"P5\n2\n"), Err(ImagingError::MalformedHeader(_))));
        assert!(matches!(
            decode_pgm(b"P5\n2 2\n65535\n\0\0\0\0\0\0\0\0"),
            Err(ImagingError::UnsupportedMaxval(65535))
        ));
        assert!(matches!(
            decode_pgm(b"P5\n2 2\n255\n\x01\x02"),
            Err(ImagingError::Truncated { expected: 4, found: 2 })
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pgm");
        let img = Image::from_fn(3, 5, |y, x| (y * 5 + x) as f32 / 14.0).unwrap();
        save_pgm(&img, &path).unwrap();
        let back = load_pgm(&path).unwrap();
        assert!(back.same_dims(&img));
        assert!(load_pgm(&dir.path().join("missing.pgm")).is_err());
    }

    proptest! {
        #[test]
        fn save_load_quantization_bound(
            (h, w, px) in (1usize..6, 1usize..6).prop_flat_map(|(h, w)| {
                (Just(h), Just(w), proptest::collection::vec(0.0f32..=1.0, h * w))
            })
        ) {
            let img = Image::from_pixels(h, w, px).unwrap();
            let back = decode_pgm(&encode_pgm(&img)).unwrap();
            for (a, b) in img.pixels().iter().zip(back.pixels()) {
                prop_assert!((a - b).abs() <= 1.0 / 510.0 + 1e-7);
            }
        }
    }
}
