use rand_distr::{Distribution, Normal};

use super::spec::{Background, RenderSpec, TextureCrop};
use super::{GlyphAtlas, LabelMap, Result, SynthError};
use crate::imaging::{alpha_composite, resize_bilinear, warp_perspective_into, Homography, Image};
use crate::rng::rng_from_seed;

/// Renders `word` and returns the image together with its label ids.
///
/// Glyphs are laid out left to right (advance plus kerning), scaled and thickened into
/// an alpha mask. Skew, rotation and corner jitter are folded into one homography; the
/// output canvas is the bounding box of the warped layout. The foreground layer is
/// alpha-composited over the background and Gaussian noise is added.
pub fn render_word(
    word: &str,
    spec: &RenderSpec,
    atlas: &GlyphAtlas,
    labels: &LabelMap,
    backgrounds: &[Image],
) -> Result<(Image, Vec<u32>)> {
    let ids = labels.encode(word)?;
    let glyphs = word
        .chars()
        .map(|c| atlas.glyph(c))
        .collect::<Result<Vec<_>>>()?;

    // Layout.
    let scale = spec.scale;
    let margin = spec.margin;
    let line_h = ((atlas.line_height() as f64) * scale).round().max(1.0) as usize;
    let mut placed = Vec::with_capacity(glyphs.len());
    let mut pen = 0.0f64;
    let mut right = 0usize;
    for (i, g) in glyphs.iter().enumerate() {
        let mask = scale_mask(&g.mask, scale)?;
        let mask = dilate(&mask, spec.stroke_width);
        // Dilation grows each mask by `stroke_width` on every side; the canvas border
        // absorbs it.
        let x = margin as i64 + pen.round() as i64;
        let y = margin as i64 + (g.voffset as f64 * scale).round() as i64;
        right = right.max((x + mask.width() as i64).max(0) as usize);
        placed.push((x, y, mask));
        pen += g.advance as f64 * scale;
        if i + 1 < glyphs.len() {
            pen += spec.kerning;
        }
    }
    let canvas_w = (right + margin).max(1);
    let canvas_h = line_h + 2 * (margin + spec.stroke_width);
    if canvas_w > spec.max_width {
        return Err(SynthError::WordTooWide {
            word: word.to_owned(),
            width: canvas_w,
            cap: spec.max_width,
        });
    }
    let mut mask = vec![0.0f32; canvas_h * canvas_w];
    for (x0, y0, m) in &placed {
        for y in 0..m.height() {
            let cy = *y0 + y as i64;
            if cy < 0 || cy >= canvas_h as i64 {
                continue;
            }
            for x in 0..m.width() {
                let cx = *x0 + x as i64;
                if cx < 0 || cx >= canvas_w as i64 {
                    continue;
                }
                let dst = &mut mask[cy as usize * canvas_w + cx as usize];
                *dst = dst.max(m.get(y, x));
            }
        }
    }
    let mask = Image::from_pixels(canvas_h, canvas_w, mask)?;

    // Geometry.
    let (w, h) = ((canvas_w - 1) as f64, (canvas_h - 1) as f64);
    let corners = [(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)];
    let jitter = spec.corner_jitter;
    let jittered = [0, 1, 2, 3].map(|i| (corners[i].0 + jitter[i][0], corners[i].1 + jitter[i][1]));
    let projective = if jitter == [[0.0; 2]; 4] {
        Homography::identity()
    } else {
        Homography::from_point_pairs(corners, jittered)?
    };
    let geom = projective
        .then_after(&Homography::rotation_about(spec.rotation_deg, w / 2.0, h / 2.0))
        .then_after(&Homography::shear_x(spec.skew_deg, h / 2.0));
    let mapped: Vec<(f64, f64)> = corners
        .iter()
        .filter_map(|&(x, y)| geom.apply(x, y))
        .collect();
    // The slack keeps round-off from adding a spurious row or column.
    const SLACK: f64 = 1e-9;
    let min_x = (mapped.iter().map(|p| p.0).fold(f64::INFINITY, f64::min) + SLACK).floor();
    let max_x = (mapped.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max) - SLACK).ceil();
    let min_y = (mapped.iter().map(|p| p.1).fold(f64::INFINITY, f64::min) + SLACK).floor();
    let max_y = (mapped.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max) - SLACK).ceil();
    let out_w = (max_x - min_x) as usize + 1;
    let out_h = (max_y - min_y) as usize + 1;
    if out_w > spec.max_width {
        return Err(SynthError::WordTooWide {
            word: word.to_owned(),
            width: out_w,
            cap: spec.max_width,
        });
    }
    let geom = Homography::translation(-min_x, -min_y).then_after(&geom);
    let alpha_mask = if geom == Homography::identity() {
        mask
    } else {
        warp_perspective_into(&mask, &geom, 0.0, out_h, out_w)?
    };

    // Layers.
    let (out_h, out_w) = (alpha_mask.height(), alpha_mask.width());
    let ramp_den = (out_w.max(2) - 1) as f64;
    let alpha = Image::from_fn(out_h, out_w, |y, x| {
        let ramp = spec.alpha_start + (spec.alpha_end - spec.alpha_start) * x as f64 / ramp_den;
        (alpha_mask.get(y, x) as f64 * spec.stroke_intensity * ramp) as f32
    })?;
    let fg_level = spec.foreground_level as f32;
    let foreground = match &spec.fg_texture {
        Some((crop, strength)) => {
            let tex = texture_window(backgrounds, crop, out_h, out_w)?;
            let s = *strength as f32;
            tex.map(|t| fg_level * (1.0 - s + s * t))
        }
        None => Image::filled(out_h, out_w, fg_level)?,
    };
    let background = match &spec.background {
        Background::Crop(crop) => texture_window(backgrounds, crop, out_h, out_w)?,
        Background::Uniform => Image::filled(out_h, out_w, spec.background_level as f32)?,
    };
    let mut img = alpha_composite(&foreground, &alpha, &background)?;

    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma).map_err(|e| SynthError::InvalidRanges(e.to_string()))?;
        let mut rng = rng_from_seed(spec.noise_seed);
        let noisy: Vec<f32> = img
            .pixels()
            .iter()
            .map(|&p| (p as f64 + normal.sample(&mut rng)) as f32)
            .collect();
        img = Image::from_pixels(out_h, out_w, noisy)?;
    }
    Ok((img, ids))
}

fn scale_mask(mask: &Image, scale: f64) -> Result<Image> {
    if scale == 1.0 {
        return Ok(mask.clone());
    }
    let h = ((mask.height() as f64 * scale).round() as usize).max(1);
    let w = ((mask.width() as f64 * scale).round() as usize).max(1);
    Ok(resize_bilinear(mask, h, w)?)
}

/// Grey-level dilation with a square window of radius `r`; the canvas grows by `r`
/// on every side.
fn dilate(mask: &Image, r: usize) -> Image {
    if r == 0 {
        return mask.clone();
    }
    let (h, w) = (mask.height(), mask.width());
    let (oh, ow) = (h + 2 * r, w + 2 * r);
    Image::from_fn(oh, ow, |y, x| {
        let mut best = 0.0f32;
        for sy in y.saturating_sub(2 * r)..=y.min(h + 2 * r - 1) {
            if sy >= h {
                break;
            }
            for sx in x.saturating_sub(2 * r)..=x.min(w + 2 * r - 1) {
                if sx >= w {
                    break;
                }
                best = best.max(mask.get(sy, sx));
            }
        }
        best
    })
    .expect("dilated dimensions are nonzero")
}

/// An `h`x`w` window of a pool texture, upscaled first if the texture is too small.
fn texture_window(pool: &[Image], crop: &TextureCrop, h: usize, w: usize) -> Result<Image> {
    let tex = pool.get(crop.index).ok_or_else(|| {
        SynthError::InvalidRanges(format!("background index {} outside pool of {}", crop.index, pool.len()))
    })?;
    let tex = if tex.height() < h || tex.width() < w {
        let f = (h as f64 / tex.height() as f64).max(w as f64 / tex.width() as f64);
        let th = ((tex.height() as f64 * f).ceil() as usize).max(h);
        let tw = ((tex.width() as f64 * f).ceil() as usize).max(w);
        resize_bilinear(tex, th, tw)?
    } else {
        tex.clone()
    };
    let y0 = ((tex.height() - h) as f64 * crop.fy).floor() as usize;
    let x0 = ((tex.width() - w) as f64 * crop.fx).floor() as usize;
    Ok(tex.crop(y0.min(tex.height() - h), x0.min(tex.width() - w), h, w)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use crate::synthgen::{sample_render_spec, RenderRanges};

    fn setup() -> (GlyphAtlas, LabelMap) {
        let atlas = GlyphAtlas::procedural(&['a', 'b', 'c'], 16);
        let labels = LabelMap::from_chars(['a', 'b', 'c']);
        (atlas, labels)
    }

    #[test]
    fn identity_rendering_reproduces_the_glyph() {
        let (atlas, labels) = setup();
        let (img, ids) = render_word("b", &RenderSpec::identity(), &atlas, &labels, &[]).unwrap();
        assert_eq!(ids, vec![2]);
        assert_eq!(&img, &atlas.get('b').unwrap().mask);
    }

    #[test]
    fn labels_follow_the_word() {
        let (atlas, labels) = setup();
        let (_, ids) = render_word("ab", &RenderSpec::identity(), &atlas, &labels, &[]).unwrap();
        assert_eq!(ids, vec![1, 2]);
    }

    #[test]
    fn rendering_is_deterministic_and_bounded() {
        let (atlas, labels) = setup();
        let pool = vec![Image::from_fn(20, 30, |y, x| ((x * 3 + y * 5) % 17) as f32 / 16.0).unwrap()];
        let ranges = RenderRanges {
            texture_prob: 1.0,
            fg_texture: (0.2, 0.2),
            noise_sigma: (0.1, 0.1),
            stroke_width: (1.0, 1.0),
            ..RenderRanges::default()
        };
        let spec = sample_render_spec(&mut rng_from_seed(4), &ranges, pool.len()).unwrap();
        assert!(matches!(spec.background, Background::Crop(_)));
        let (a, _) = render_word("cab", &spec, &atlas, &labels, &pool).unwrap();
        let (b, _) = render_word("cab", &spec, &atlas, &labels, &pool).unwrap();
        assert_eq!(a.pixels(), b.pixels());
        assert!(a.pixels().iter().all(|p| (0.0..=1.0).contains(p)));
        // Wider than a single glyph, taller than the atlas line due to margins and warp.
        assert!(a.width() > 30 && a.height() >= 16);
    }

    #[test]
    fn text_is_visible_against_uniform_background() {
        let (atlas, labels) = setup();
        let mut spec = RenderSpec::identity();
        spec.foreground_level = 0.1;
        spec.background_level = 0.9;
        spec.margin = 3;
        spec.rotation_deg = 3.0;
        spec.skew_deg = -8.0;
        let (img, _) = render_word("abc", &spec, &atlas, &labels, &[]).unwrap();
        let (lo, hi) = img.min_max();
        assert!(lo < 0.2 && hi > 0.85);
    }

    #[test]
    fn errors_for_missing_glyphs_and_wide_words() {
        let (atlas, _) = setup();
        let labels = LabelMap::from_chars(['a', 'b', 'c', 'd']);
        assert!(matches!(
            render_word("ad", &RenderSpec::identity(), &atlas, &labels, &[]),
            Err(SynthError::MissingGlyph('d'))
        ));
        assert!(matches!(
            render_word("az", &RenderSpec::identity(), &atlas, &labels, &[]),
            Err(SynthError::OutOfAlphabet('z'))
        ));
        let mut spec = RenderSpec::identity();
        spec.max_width = 20;
        assert!(matches!(
            render_word("abcabc", &spec, &atlas, &labels, &[]),
            Err(SynthError::WordTooWide { .. })
        ));
    }

    #[test]
    fn dilation_thickens_strokes() {
        let m = Image::from_fn(5, 5, |y, x| if y == 2 && x == 2 { 1.0 } else { 0.0 }).unwrap();
        let d = dilate(&m, 1);
        assert_eq!((d.height(), d.width()), (7, 7));
        let lit = d.pixels().iter().filter(|&&p| p == 1.0).count();
        assert_eq!(lit, 9);
        assert_eq!(d.get(3, 3), 1.0);
        assert_eq!(d.get(2, 2), 1.0);
        assert_eq!(d.get(1, 1), 0.0);
    }
}
