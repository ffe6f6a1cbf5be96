use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::labels::parse_codepoint;
use super::{io_err, Result, SynthError};
use crate::imaging::{load_pgm, save_pgm, Image};

pub const ATLAS_INDEX: &str = "atlas.idx";

/// A pre-rendered glyph: an alpha mask plus placement metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct Glyph {
    pub mask: Image,
    /// Horizontal pen advance in pixels.
    pub advance: f32,
    /// Offset of the mask's top row below the line top, in pixels.
    pub voffset: f32,
}

/// Per-codepoint glyph bitmaps standing in for a font rasterizer.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GlyphAtlas {
    glyphs: BTreeMap<char, Glyph>,
}

impl GlyphAtlas {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, c: char, glyph: Glyph) {
        self.glyphs.insert(c, glyph);
    }

    pub fn get(&self, c: char) -> Option<&Glyph> {
        self.glyphs.get(&c)
    }

    pub fn glyph(&self, c: char) -> Result<&Glyph> {
        self.get(c).ok_or(SynthError::MissingGlyph(c))
    }

    pub fn len(&self) -> usize {
        self.glyphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.glyphs.is_empty()
    }

    pub fn chars(&self) -> impl Iterator<Item = char> + '_ {
        self.glyphs.keys().copied()
    }

    /// Height of the tallest glyph extent, in pixels.
    pub fn line_height(&self) -> usize {
        self.glyphs
            .values()
            .map(|g| (g.voffset.max(0.0) + g.mask.height() as f32).ceil() as usize)
            .max()
            .unwrap_or(1)
            .max(1)
    }

    /// Fails with the first codepoint of `text` that has no glyph.
    pub fn check_coverage<'a>(&self, texts: impl IntoIterator<Item = &'a str>) -> Result<()> {
        for t in texts {
            for c in t.chars() {
                self.glyph(c)?;
            }
        }
        Ok(())
    }

    /// Reads `atlas.idx` and its PGM masks from `dir`.
    pub fn load(dir: &Path) -> Result<Self> {
        let idx_path = dir.join(ATLAS_INDEX);
        let text = std::fs::read_to_string(&idx_path).map_err(io_err(&idx_path))?;
        let mut atlas = Self::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let malformed = |reason: String| SynthError::Malformed {
                file: ATLAS_INDEX.into(),
                line: i + 1,
                reason,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            let [cp, file, advance, voffset] = fields[..] else {
                return Err(malformed(format!("expected 4 tab-separated fields, got {}", fields.len())));
            };
            let c = parse_codepoint(cp).ok_or_else(|| malformed(format!("bad codepoint `{cp}`")))?;
            let advance: f32 = advance
                .trim()
                .parse()
                .map_err(|_| malformed(format!("bad advance `{advance}`")))?;
            let voffset: f32 = voffset
                .trim()
                .parse()
                .map_err(|_| malformed(format!("bad vertical offset `{voffset}`")))?;
            let mask = load_pgm(&dir.join(file))?;
            atlas.insert(c, Glyph { mask, advance, voffset });
        }
        Ok(atlas)
    }

    /// Writes the atlas in the format read by [`GlyphAtlas::load`].
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let mut idx = String::from("# codepoint\tbitmap\tadvance\tvoffset\n");
        for (c, g) in &self.glyphs {
            let file = format!("u{:04x}.pgm", *c as u32);
            save_pgm(&g.mask, &dir.join(&file))?;
            writeln!(idx, "U+{:04X}\t{file}\t{}\t{}", *c as u32, g.advance, g.voffset).unwrap();
        }
        let idx_path = dir.join(ATLAS_INDEX);
        std::fs::write(&idx_path, idx).map_err(io_err(&idx_path))
    }

    /// Simple stroke glyphs, one distinct shape per character in `chars` (in the given
    /// order), all `height` pixels tall.
    pub fn procedural(chars: &[char], height: usize) -> Self {
        let mut atlas = Self::new();
        for (i, &c) in chars.iter().enumerate() {
            let shape = &SHAPES[i % SHAPES.len()];
            // Cycles past the shape table are told apart by a mark above the glyph.
            let marks = i / SHAPES.len();
            let width = ((height as f32) * shape.width).round().max(3.0) as usize;
            let mask = rasterize(shape.strokes, marks, height, width);
            atlas.insert(
                c,
                Glyph {
                    mask,
                    advance: width as f32 + 1.0,
                    voffset: 0.0,
                },
            );
        }
        atlas
    }
}

type Stroke = ((f32, f32), (f32, f32));

struct Shape {
    width: f32,
    strokes: &'static [Stroke],
}

// Unit-square strokes, y pointing down. The vertical band 0.2..1.0 holds the body and
// 0.0..0.2 is left for marks.
const SHAPES: [Shape; 16] = [
    Shape { width: 0.45, strokes: &[((0.5, 0.2), (0.5, 1.0))] },
    Shape { width: 0.7, strokes: &[((0.0, 0.2), (1.0, 0.2)), ((1.0, 0.2), (1.0, 1.0)), ((1.0, 1.0), (0.0, 1.0)), ((0.0, 1.0), (0.0, 0.2))] },
    Shape { width: 0.7, strokes: &[((0.0, 0.2), (1.0, 1.0)), ((1.0, 0.2), (0.0, 1.0))] },
    Shape { width: 0.6, strokes: &[((0.0, 0.2), (0.0, 1.0)), ((0.0, 1.0), (1.0, 1.0))] },
    Shape { width: 0.7, strokes: &[((0.0, 0.2), (1.0, 0.2)), ((0.5, 0.2), (0.5, 1.0))] },
    Shape { width: 0.7, strokes: &[((0.0, 0.2), (1.0, 0.2)), ((1.0, 0.2), (0.0, 1.0)), ((0.0, 1.0), (1.0, 1.0))] },
    Shape { width: 0.75, strokes: &[((0.0, 1.0), (0.0, 0.2)), ((0.0, 0.2), (1.0, 1.0)), ((1.0, 1.0), (1.0, 0.2))] },
    Shape { width: 0.6, strokes: &[((0.0, 0.2), (0.0, 1.0)), ((0.0, 0.2), (1.0, 0.2)), ((0.0, 0.6), (0.8, 0.6)), ((0.0, 1.0), (1.0, 1.0))] },
    Shape { width: 0.7, strokes: &[((0.0, 0.2), (0.0, 1.0)), ((1.0, 0.2), (1.0, 1.0)), ((0.0, 0.6), (1.0, 0.6))] },
    Shape { width: 0.75, strokes: &[((0.0, 0.2), (0.5, 1.0)), ((0.5, 1.0), (1.0, 0.2))] },
    Shape { width: 0.7, strokes: &[((0.0, 0.2), (0.0, 1.0)), ((1.0, 0.2), (1.0, 1.0)), ((0.0, 1.0), (1.0, 1.0))] },
    Shape { width: 0.75, strokes: &[((0.0, 1.0), (0.5, 0.2)), ((0.5, 0.2), (1.0, 1.0)), ((0.25, 0.65), (0.75, 0.65))] },
    Shape { width: 0.65, strokes: &[((1.0, 0.2), (0.0, 0.2)), ((0.0, 0.2), (0.0, 0.6)), ((0.0, 0.6), (1.0, 0.6)), ((1.0, 0.6), (1.0, 1.0)), ((1.0, 1.0), (0.0, 1.0))] },
    Shape { width: 0.75, strokes: &[((0.0, 0.2), (0.5, 0.6)), ((1.0, 0.2), (0.5, 0.6)), ((0.5, 0.6), (0.5, 1.0))] },
    Shape { width: 0.6, strokes: &[((0.0, 0.2), (1.0, 0.2)), ((0.0, 0.6), (1.0, 0.6)), ((0.0, 1.0), (1.0, 1.0))] },
    Shape { width: 0.65, strokes: &[((0.0, 0.2), (0.0, 1.0)), ((0.0, 0.6), (1.0, 0.2)), ((0.0, 0.6), (1.0, 1.0))] },
];

fn segment_distance(px: f32, py: f32, (a, b): Stroke) -> f32 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
}

fn rasterize(strokes: &[Stroke], marks: usize, height: usize, width: usize) -> Image {
    let inset = 1.5f32;
    let half_width = (height as f32 / 16.0).max(0.75);
    let sx = (width as f32 - 2.0 * inset).max(1.0);
    let sy = (height as f32 - 2.0 * inset).max(1.0);
    let to_px = |(x, y): (f32, f32)| (inset + x * sx, inset + y * sy);
    let mut all: Vec<Stroke> = strokes.iter().map(|&(a, b)| (to_px(a), to_px(b))).collect();
    for m in 0..marks {
        let x = (m as f32 + 1.0) / (marks as f32 + 1.0);
        all.push((to_px((x, 0.0)), to_px((x, 0.05))));
    }
    Image::from_fn(height, width, |y, x| {
        let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
        let d = all
            .iter()
            .map(|&s| segment_distance(px, py, s))
            .fold(f32::INFINITY, f32::min);
        (half_width + 0.5 - d).clamp(0.0, 1.0)
    })
    .expect("procedural glyph dimensions are nonzero")
}
