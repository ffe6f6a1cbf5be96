use nalgebra::{Matrix3, SMatrix, SVector, Vector3};

use super::{check_dims, Image, ImagingError, Result};

const SINGULAR_DET: f64 = 1e-12;

/// A projective transform of the image plane acting on `(x, y)` pixel coordinates,
/// where `x` is the column and `y` the row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Homography {
    m: Matrix3<f64>,
}

impl Homography {
    /// Builds a homography from a row-major 3x3 matrix. The matrix is scaled so the
    /// bottom-right element is 1 when it is nonzero.
    pub fn new(rows: [[f64; 3]; 3]) -> Result<Self> {
        let mut m = Matrix3::from_fn(|r, c| rows[r][c]);
        let det = m.determinant();
        if !det.is_finite() || det.abs() <= SINGULAR_DET {
            return Err(ImagingError::SingularHomography(det));
        }
        let corner = m[(2, 2)];
        if corner != 0.0 {
            m /= corner;
        }
        Ok(Self { m })
    }

    pub fn identity() -> Self {
        Self { m: Matrix3::identity() }
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Self {
            m: Matrix3::new(1.0, 0.0, dx, 0.0, 1.0, dy, 0.0, 0.0, 1.0),
        }
    }

    /// Horizontal shear about the row `y0`: `x' = x + tan(angle) * (y - y0)`.
    pub fn shear_x(angle_deg: f64, y0: f64) -> Self {
        let k = angle_deg.to_radians().tan();
        Self {
            m: Matrix3::new(1.0, k, -k * y0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0),
        }
    }

    /// Rotation by `angle_deg` (counter-clockwise on screen) about `(cx, cy)`.
    pub fn rotation_about(angle_deg: f64, cx: f64, cy: f64) -> Self {
        let (s, c) = angle_deg.to_radians().sin_cos();
        // Screen y points down, so a visually counter-clockwise turn negates the sine terms.
        let r = Matrix3::new(c, s, 0.0, -s, c, 0.0, 0.0, 0.0, 1.0);
        Self::translation(cx, cy).then_after(&Self { m: r }).then_after(&Self::translation(-cx, -cy))
    }

    /// The transform mapping the four `src` points onto the four `dst` points.
    pub fn from_point_pairs(src: [(f64, f64); 4], dst: [(f64, f64); 4]) -> Result<Self> {
        let mut a = SMatrix::<f64, 8, 8>::zeros();
        let mut b = SVector::<f64, 8>::zeros();
        for (i, (&(x, y), &(u, v))) in src.iter().zip(dst.iter()).enumerate() {
            let r = 2 * i;
            a.row_mut(r)
                .copy_from_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y]);
            a.row_mut(r + 1)
                .copy_from_slice(&[0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y]);
            b[r] = u;
            b[r + 1] = v;
        }
        let h = a.lu().solve(&b).ok_or(ImagingError::SingularHomography(0.0))?;
        Self::new([[h[0], h[1], h[2]], [h[3], h[4], h[5]], [h[6], h[7], 1.0]])
    }

    /// `self ∘ inner`: applies `inner` first, then `self`.
    pub fn then_after(&self, inner: &Homography) -> Homography {
        let mut m = self.m * inner.m;
        if m[(2, 2)] != 0.0 {
            m /= m[(2, 2)];
        }
        Homography { m }
    }

    pub fn inverse(&self) -> Result<Homography> {
        let det = self.m.determinant();
        if det.abs() <= SINGULAR_DET {
            return Err(ImagingError::SingularHomography(det));
        }
        let inv = self.m.try_inverse().ok_or(ImagingError::SingularHomography(det))?;
        let mut m = inv;
        if m[(2, 2)] != 0.0 {
            m /= m[(2, 2)];
        }
        Ok(Homography { m })
    }

    /// Maps `(x, y)`; `None` for points sent to infinity.
    pub fn apply(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        let p = self.m * Vector3::new(x, y, 1.0);
        if p.z.abs() < 1e-12 {
            None
        } else {
            Some((p.x / p.z, p.y / p.z))
        }
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        let m = &self.m;
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }
}

/// Bilinear sample at `(x, y)`. Each of the four taps that falls outside the raster
/// reads `fill`.
#[inline]
fn sample(img: &Image, x: f64, y: f64, fill: f32) -> f32 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = (x - x0) as f32;
    let fy = (y - y0) as f32;
    let (x0, y0) = (x0 as i64, y0 as i64);
    let (w, h) = (img.width() as i64, img.height() as i64);
    let tap = |yy: i64, xx: i64| -> f32 {
        if yy < 0 || xx < 0 || yy >= h || xx >= w {
            fill
        } else {
            img.get(yy as usize, xx as usize)
        }
    };
    let top = tap(y0, x0) * (1.0 - fx) + tap(y0, x0 + 1) * fx;
    let bottom = tap(y0 + 1, x0) * (1.0 - fx) + tap(y0 + 1, x0 + 1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Warps `img` by `h` into an image of the same size (inverse mapping, bilinear).
pub fn warp_perspective(img: &Image, h: &Homography, fill: f32) -> Result<Image> {
    warp_perspective_into(img, h, fill, img.height(), img.width())
}

/// Warps `img` by `h` into an `out_h`x`out_w` raster. Output pixel `(x, y)` reads the
/// source at `h⁻¹(x, y)`; reads outside the source return `fill`.
pub fn warp_perspective_into(
    img: &Image,
    h: &Homography,
    fill: f32,
    out_h: usize,
    out_w: usize,
) -> Result<Image> {
    check_dims(out_h, out_w)?;
    let inv = h.inverse()?;
    let far = (img.width() + img.height()) as f64 * 4.0 + 8.0;
    let fill = fill.clamp(0.0, 1.0);
    let mut pixels = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        for x in 0..out_w {
            let v = match inv.apply(x as f64, y as f64) {
                Some((sx, sy)) if sx.abs() < far && sy.abs() < far => sample(img, sx, sy, fill),
                _ => fill,
            };
            pixels.push(v);
        }
    }
    Image::from_pixels(out_h, out_w, pixels)
}

/// Bilinear resize with half-pixel centres and edge clamping.
pub fn resize_bilinear(img: &Image, out_h: usize, out_w: usize) -> Result<Image> {
    check_dims(out_h, out_w)?;
    if out_h == img.height() && out_w == img.width() {
        return Ok(img.clone());
    }
    let sy = img.height() as f64 / out_h as f64;
    let sx = img.width() as f64 / out_w as f64;
    let max_x = (img.width() - 1) as f64;
    let max_y = (img.height() - 1) as f64;
    let xs: Vec<f64> = (0..out_w)
        .map(|x| ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, max_x))
        .collect();
    let mut pixels = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        let src_y = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, max_y);
        for &src_x in &xs {
            // Coordinates are clamped inside the raster, so the fill value is never read
            // with nonzero weight.
            pixels.push(sample(img, src_x, src_y, 0.0));
        }
    }
    Image::from_pixels(out_h, out_w, pixels)
}

/// Rescales to `target_h` rows, keeping the aspect ratio:
/// `width' = max(1, round(width * target_h / height))`.
pub fn resize_fixed_height(img: &Image, target_h: usize) -> Result<Image> {
    check_dims(target_h, 1)?;
    let w = (img.width() as f64 * target_h as f64 / img.height() as f64).round();
    let w = (w as usize).max(1);
    resize_bilinear(img, target_h, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(h: usize, w: usize) -> Image {
        Image::from_fn(h, w, |y, x| ((y * 7 + x * 3) % 11) as f32 / 10.0).unwrap()
    }

    #[test]
    fn singular_homographies_are_rejected() {
        assert!(matches!(
            Homography::new([[1.0, 2.0, 0.0], [2.0, 4.0, 0.0], [0.0, 0.0, 1.0]]),
            Err(ImagingError::SingularHomography(_))
        ));
        let h = Homography::new([[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 2.0]]).unwrap();
        assert_eq!(h.rows()[2][2], 1.0);
        assert_eq!(h.rows()[0][0], 1.0);
    }

    #[test]
    fn identity_warp_is_exact() {
        let img = ramp(7, 9);
        assert_eq!(warp_perspective(&img, &Homography::identity(), 0.3).unwrap(), img);
    }

    #[test]
    fn translation_shifts_columns() {
        let img = ramp(5, 8);
        let out = warp_perspective(&img, &Homography::translation(1.0, 0.0), 0.25).unwrap();
        for y in 0..5 {
            assert_eq!(out.get(y, 0), 0.25);
            for x in 1..8 {
                assert_eq!(out.get(y, x), img.get(y, x - 1), "({y},{x})");
            }
        }
    }

    #[test]
    fn horizontal_flip_mirrors() {
        let img = ramp(4, 6);
        let flip = Homography::new([[-1.0, 0.0, 5.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        let out = warp_perspective(&img, &flip, 0.0).unwrap();
        for y in 0..4 {
            for x in 0..6 {
                assert_eq!(out.get(y, x), img.get(y, 5 - x));
            }
        }
    }

    #[test]
    fn point_pairs_recover_known_transform() {
        let h = Homography::new([[1.1, 0.05, 2.0], [-0.03, 0.95, 1.0], [0.001, -0.002, 1.0]]).unwrap();
        let src = [(0.0, 0.0), (40.0, 0.0), (40.0, 20.0), (0.0, 20.0)];
        let dst = src.map(|(x, y)| h.apply(x, y).unwrap());
        let fitted = Homography::from_point_pairs(src, dst).unwrap();
        for (a, b) in fitted.rows().iter().flatten().zip(h.rows().iter().flatten()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn rotation_keeps_centre_fixed() {
        let r = Homography::rotation_about(30.0, 5.0, 3.0);
        let (x, y) = r.apply(5.0, 3.0).unwrap();
        assert!((x - 5.0).abs() < 1e-12 && (y - 3.0).abs() < 1e-12);
    }

    #[test]
    fn warp_then_inverse_restores_interior() {
        let img = Image::from_fn(40, 60, |y, x| {
            0.5 + 0.4 * ((x as f32 * 0.15).sin() * (y as f32 * 0.2).cos())
        })
        .unwrap();
        let src = [(0.0, 0.0), (59.0, 0.0), (59.0, 39.0), (0.0, 39.0)];
        let dst = [(0.4, -0.3), (59.5, 0.6), (58.7, 39.4), (-0.5, 38.8)];
        let h = Homography::from_point_pairs(src, dst).unwrap();
        let there = warp_perspective(&img, &h, 0.0).unwrap();
        let back = warp_perspective(&there, &h.inverse().unwrap(), 0.0).unwrap();
        for y in 2..38 {
            for x in 2..58 {
                assert!((back.get(y, x) - img.get(y, x)).abs() <= 0.02, "({y},{x})");
            }
        }
    }

    #[test]
    fn resize_fixtures() {
        let big = ramp(64, 128);
        let out = resize_fixed_height(&big, 32).unwrap();
        assert_eq!((out.height(), out.width()), (32, 64));

        let same = ramp(32, 50);
        assert_eq!(resize_fixed_height(&same, 32).unwrap(), same);

        let small = ramp(16, 20);
        let up = resize_fixed_height(&small, 32).unwrap();
        assert_eq!((up.height(), up.width()), (32, 40));

        let sliver = ramp(100, 1);
        assert_eq!(resize_fixed_height(&sliver, 32).unwrap().width(), 1);
    }

    #[test]
    fn ops_are_deterministic() {
        let img = ramp(13, 17);
        let h = Homography::from_point_pairs(
            [(0.0, 0.0), (16.0, 0.0), (16.0, 12.0), (0.0, 12.0)],
            [(1.0, 0.5), (15.0, -0.5), (16.5, 12.5), (-1.0, 11.0)],
        )
        .unwrap();
        let a = warp_perspective(&img, &h, 0.1).unwrap();
        let b = warp_perspective(&img, &h, 0.1).unwrap();
        assert_eq!(a.pixels(), b.pixels());
        assert_eq!(resize_fixed_height(&img, 32).unwrap(), resize_fixed_height(&img, 32).unwrap());
    }

    proptest! {
        #[test]
        fn resize_preserves_aspect(h in 1usize..80, w in 1usize..200, target in 1usize..64) {
            let img = Image::filled(h, w, 0.5).unwrap();
            let out = resize_fixed_height(&img, target).unwrap();
            prop_assert_eq!(out.height(), target);
            let ideal = w as f64 * target as f64 / h as f64;
            prop_assert!((out.width() as f64 - ideal).abs() <= 0.5 || out.width() == 1);
        }
    }
}
