use ndarray::{Array2, Array3, Axis};

use crate::error::{MleError, Result};
use crate::imgcore::{AffineTransform, Field, Parity};

/// clamp(frame - dark, 0, 1), metadata preserved.
pub fn subtract_dark(frame: &Field, dark: &Field) -> Result<Field> {
    if !frame.same_shape(dark) {
        return Err(MleError::DimensionMismatch(format!(
            "frame {:?} vs dark {:?}",
            frame.data().dim(),
            dark.data().dim()
        )));
    }
    let data = frame
        .data()
        .iter()
        .zip(dark.data().iter())
        .map(|(f, d)| (f - d).clamp(0.0, 1.0))
        .collect::<Vec<_>>();
    let data = Array3::from_shape_vec(frame.data().dim(), data).expect("shape");
    Ok(frame.with_data(data))
}

/// Splits odd and even pixel rows into two fields, each resized back to the
/// full height with linear interpolation along rows (replicate edges).
///
/// Returns `(even, odd)`: the even field holds native rows {0, 2, ...}, the
/// odd field rows {1, 3, ...}. At its native parity positions each field
/// reproduces the original rows exactly.
pub fn deinterlace(frame: &Field) -> Result<(Field, Field)> {
    let h = frame.height();
    if h < 2 || h % 2 != 0 {
        return Err(MleError::InvalidInput(format!(
            "deinterlace requires even height >= 2, got {h}"
        )));
    }
    let even = resize_rows(frame, 0);
    let odd = resize_rows(frame, 1);
    Ok((even, odd))
}

fn resize_rows(frame: &Field, offset: usize) -> Field {
    let (h, w, c) = frame.data().dim();
    let half = h / 2;
    let mut out = Array3::zeros((h, w, c));
    for r in 0..h {
        // Source samples live at native rows offset + 2j; interpolate the
        // output row position among them, replicating past the ends.
        let t = ((r as f64 - offset as f64) / 2.0).clamp(0.0, (half - 1) as f64);
        let j0 = t.floor() as usize;
        let j1 = (j0 + 1).min(half - 1);
        let frac = t - j0 as f64;
        let src0 = offset + 2 * j0;
        let src1 = offset + 2 * j1;
        for x in 0..w {
            for ch in 0..c {
                let v0 = frame.data()[(src0, x, ch)];
                let v1 = frame.data()[(src1, x, ch)];
                out[(r, x, ch)] = v0 + frac * (v1 - v0);
            }
        }
    }
    let mut field = frame.with_data(out);
    field.parity = Some(if offset == 0 { Parity::Even } else { Parity::Odd });
    field
}

/// Normalized 1-D Gaussian taps for a kernel of `size` taps (size odd).
pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    assert!(size % 2 == 1 && size >= 1);
    let r = (size / 2) as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    for v in &mut k {
        *v /= s;
    }
    k
}

/// Separable Gaussian convolution with replicate border padding.
pub fn gaussian_smooth(field: &Field, size: usize, sigma: f64) -> Field {
    let (h, w, c) = field.data().dim();
    let mut out = Array3::zeros((h, w, c));
    for ch in 0..c {
        let plane = field.data().index_axis(Axis(2), ch).to_owned();
        let sm = gaussian_smooth_plane(&plane, size, sigma);
        out.index_axis_mut(Axis(2), ch).assign(&sm);
    }
    field.with_data(out)
}

/// Separable Gaussian convolution of one plane, replicate borders.
pub fn gaussian_smooth_plane(plane: &Array2<f64>, size: usize, sigma: f64) -> Array2<f64> {
    let k = gaussian_kernel(size, sigma);
    let r = (size / 2) as isize;
    let (h, w) = plane.dim();
    let mut tmp = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let sx = (x as isize + i as isize - r).clamp(0, w as isize - 1) as usize;
                acc += kv * plane[(y, sx)];
            }
            tmp[(y, x)] = acc;
        }
    }
    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let sy = (y as isize + i as isize - r).clamp(0, h as isize - 1) as usize;
                acc += kv * tmp[(sy, x)];
            }
            out[(y, x)] = acc;
        }
    }
    out
}

/// Bilinear sample of one channel at continuous source coordinates.
/// Returns `None` when the sample falls outside the image or touches a
/// masked-false pixel.
pub(crate) fn sample_bilinear(
    data: &Array3<f64>,
    mask: &Array2<bool>,
    x: f64,
    y: f64,
    ch: usize,
) -> Option<f64> {
    let (h, w, _) = data.dim();
    if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64) {
        return None;
    }
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let weights = [
        ((y0, x0), (1.0 - fx) * (1.0 - fy)),
        ((y0, x1), fx * (1.0 - fy)),
        ((y1, x0), (1.0 - fx) * fy),
        ((y1, x1), fx * fy),
    ];
    let mut acc = 0.0;
    for ((r, c), wgt) in weights {
        if wgt > 1e-12 {
            if !mask[(r, c)] {
                return None;
            }
            acc += wgt * data[(r, c, ch)];
        }
    }
    Some(acc)
}

/// Bilinear resampling through a per-pixel source-coordinate map.
///
/// `remap` has shape `(h, w, 2)` holding `(src_x, src_y)` per target pixel.
/// Source coordinates outside bounds are masked out.
pub fn apply_distortion_map(field: &Field, remap: &Array3<f64>) -> Result<Field> {
    let (h, w, c) = field.data().dim();
    if remap.dim() != (h, w, 2) {
        return Err(MleError::DimensionMismatch(format!(
            "remap {:?} vs target ({h}, {w}, 2)",
            remap.dim()
        )));
    }
    let mut out = field.with_data(Array3::zeros((h, w, c)));
    let mut mask = Array2::from_elem((h, w), true);
    let mut data = Array3::zeros((h, w, c));
    for y in 0..h {
        for x in 0..w {
            let sx = remap[(y, x, 0)];
            let sy = remap[(y, x, 1)];
            let mut ok = true;
            for ch in 0..c {
                match sample_bilinear(field.data(), &field.mask, sx, sy, ch) {
                    Some(v) => data[(y, x, ch)] = v,
                    None => {
                        ok = false;
                        break;
                    }
                }
            }
            mask[(y, x)] = ok;
        }
    }
    *out.data_mut() = data;
    out.mask = mask;
    Ok(out)
}

/// Bilinear warp of `field` into the fixed frame of `t` (which maps
/// moving -> fixed coordinates). Pixels falling outside the source field of
/// view are masked out.
pub fn warp(field: &Field, t: &AffineTransform) -> Result<Field> {
    if t.is_singular() {
        return Err(MleError::InvalidInput("warp with singular transform".into()));
    }
    let inv = t.inverse()?;
    let (h, w, _) = field.data().dim();
    let mut remap = Array3::zeros((h, w, 2));
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = inv.apply(x as f64, y as f64);
            remap[(y, x, 0)] = sx;
            remap[(y, x, 1)] = sy;
        }
    }
    apply_distortion_map(field, &remap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgcore::IllumTag;
    use ndarray::Array3;

    fn mono(values: &Array2<f64>) -> Field {
        Field::from_plane(values.clone(), 0, IllumTag::default()).unwrap()
    }

    #[test]
    fn subtract_dark_identity_and_zero_cases() {
        let f = mono(&Array2::from_elem((4, 4), 0.5));
        let zero = mono(&Array2::zeros((4, 4)));
        let diff = subtract_dark(&f, &f).unwrap();
        assert!(diff.data().iter().all(|&v| v == 0.0));
        let same = subtract_dark(&f, &zero).unwrap();
        assert_eq!(same.data(), f.data());
    }

    #[test]
    fn subtract_dark_elementwise() {
        let f = mono(&Array2::from_elem((3, 5), 0.5));
        let d = mono(&Array2::from_elem((3, 5), 0.1));
        let out = subtract_dark(&f, &d).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.4).abs() < 1e-15));
    }

    #[test]
    fn subtract_dark_rejects_mismatch() {
        let f = mono(&Array2::zeros((3, 5)));
        let d = mono(&Array2::zeros((3, 4)));
        assert!(subtract_dark(&f, &d).is_err());
    }

    #[test]
    fn deinterlace_row_selection() {
        // Row i = constant i.
        let mut plane = Array2::zeros((6, 4));
        for ((r, _), v) in plane.indexed_iter_mut() {
            *v = r as f64;
        }
        let f = mono(&plane);
        let (even, odd) = deinterlace(&f).unwrap();
        assert_eq!(even.parity, Some(Parity::Even));
        assert_eq!(odd.parity, Some(Parity::Odd));
        // Native parity positions reproduce original rows exactly.
        for r in (0..6).step_by(2) {
            assert_eq!(even.data()[(r, 0, 0)], r as f64);
        }
        for r in (1..6).step_by(2) {
            assert_eq!(odd.data()[(r, 0, 0)], r as f64);
        }
    }

    #[test]
    fn deinterlace_constant_frame_unchanged() {
        let f = mono(&Array2::from_elem((4, 3), 0.7));
        let (even, odd) = deinterlace(&f).unwrap();
        assert!(even.data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
        assert!(odd.data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn deinterlace_four_row_ramp_matches_interpolation_oracle() {
        // Rows 0,1,2,3; even field pre-resize rows (0, 2), post-resize
        // (0, 1, 2, 2) under replicate-edge interpolation.
        let mut plane = Array2::zeros((4, 2));
        for ((r, _), v) in plane.indexed_iter_mut() {
            *v = r as f64;
        }
        let f = mono(&plane);
        let (even, _) = deinterlace(&f).unwrap();
        let expected = [0.0, 1.0, 2.0, 2.0];
        for (r, e) in expected.iter().enumerate() {
            assert!((even.data()[(r, 0, 0)] - e).abs() < 1e-15, "row {r}");
        }
    }

    #[test]
    fn deinterlace_rejects_odd_height() {
        let f = mono(&Array2::zeros((5, 4)));
        assert!(deinterlace(&f).is_err());
    }

    #[test]
    fn gaussian_constant_preserved() {
        let f = mono(&Array2::from_elem((9, 9), 0.3));
        let s = gaussian_smooth(&f, 5, 0.5);
        assert!(s.data().iter().all(|&v| (v - 0.3).abs() < 1e-12));
    }

    #[test]
    fn gaussian_impulse_gives_kernel() {
        let mut plane = Array2::zeros((11, 11));
        plane[(5, 5)] = 1.0;
        let f = mono(&plane);
        let s = gaussian_smooth(&f, 5, 0.5);
        let k = gaussian_kernel(5, 0.5);
        for dy in -2i64..=2 {
            for dx in -2i64..=2 {
                let expect = k[(dy + 2) as usize] * k[(dx + 2) as usize];
                let got = s.data()[((5 + dy) as usize, (5 + dx) as usize, 0)];
                assert!((got - expect).abs() < 1e-14);
            }
        }
    }

    /// Dense 2-D convolution oracle with replicate borders.
    fn conv2d_oracle(plane: &Array2<f64>, size: usize, sigma: f64) -> Array2<f64> {
        let k = gaussian_kernel(size, sigma);
        let r = (size / 2) as isize;
        let (h, w) = plane.dim();
        let mut out = Array2::zeros((h, w));
        for y in 0..h as isize {
            for x in 0..w as isize {
                let mut acc = 0.0;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let sy = (y + dy).clamp(0, h as isize - 1) as usize;
                        let sx = (x + dx).clamp(0, w as isize - 1) as usize;
                        acc += k[(dy + r) as usize] * k[(dx + r) as usize] * plane[(sy, sx)];
                    }
                }
                out[(y as usize, x as usize)] = acc;
            }
        }
        out
    }

    #[test]
    fn gaussian_matches_dense_convolution_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let plane = Array2::from_shape_fn((7, 7), |_| rng.gen::<f64>());
        let f = mono(&plane);
        let got = gaussian_smooth(&f, 5, 0.5);
        let want = conv2d_oracle(&plane, 5, 0.5);
        for (g, w) in got.plane(0).iter().zip(want.iter()) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_is_linear() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let a = Array2::from_shape_fn((8, 8), |_| rng.gen::<f64>());
        let b = Array2::from_shape_fn((8, 8), |_| rng.gen::<f64>());
        let combo = 0.7 * &a + 0.2 * &b;
        let lhs = gaussian_smooth_plane(&combo, 5, 0.5);
        let rhs = 0.7 * gaussian_smooth_plane(&a, 5, 0.5) + 0.2 * gaussian_smooth_plane(&b, 5, 0.5);
        for (l, r) in lhs.iter().zip(rhs.iter()) {
            assert!((l - r).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_remap_unchanged() {
        let plane = Array2::from_shape_fn((5, 6), |(r, c)| (r * 7 + c) as f64 / 50.0);
        let f = mono(&plane);
        let mut remap = Array3::zeros((5, 6, 2));
        for y in 0..5 {
            for x in 0..6 {
                remap[(y, x, 0)] = x as f64;
                remap[(y, x, 1)] = y as f64;
            }
        }
        let out = apply_distortion_map(&f, &remap).unwrap();
        for (a, b) in out.data().iter().zip(f.data().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(out.mask.iter().all(|&m| m));
    }

    #[test]
    fn shift_remap_masks_last_column() {
        let plane = Array2::from_shape_fn((4, 4), |(r, c)| (r + 10 * c) as f64 / 40.0);
        let f = mono(&plane);
        let mut remap = Array3::zeros((4, 4, 2));
        for y in 0..4 {
            for x in 0..4 {
                remap[(y, x, 0)] = x as f64 + 1.0;
                remap[(y, x, 1)] = y as f64;
            }
        }
        let out = apply_distortion_map(&f, &remap).unwrap();
        for y in 0..4 {
            for x in 0..3 {
                assert!((out.data()[(y, x, 0)] - plane[(y, x + 1)]).abs() < 1e-12);
                assert!(out.mask[(y, x)]);
            }
            assert!(!out.mask[(y, 3)]);
        }
    }

    #[test]
    fn rotation_remap_rotates_asymmetric_array() {
        // 90 degrees counterclockwise on a 3x3: out(y, x) = in(x, 2 - y).
        let plane = Array2::from_shape_fn((3, 3), |(r, c)| (3 * r + c) as f64 / 10.0);
        let f = mono(&plane);
        let mut remap = Array3::zeros((3, 3, 2));
        for y in 0..3usize {
            for x in 0..3usize {
                remap[(y, x, 0)] = (2 - y) as f64;
                remap[(y, x, 1)] = x as f64;
            }
        }
        let out = apply_distortion_map(&f, &remap).unwrap();
        for y in 0..3 {
            for x in 0..3 {
                assert!((out.data()[(y, x, 0)] - plane[(x, 2 - y)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn warp_identity_and_integer_translation() {
        let plane = Array2::from_shape_fn((6, 6), |(r, c)| ((r * 13 + c * 5) % 17) as f64 / 17.0);
        let f = mono(&plane);
        let id = warp(&f, &AffineTransform::identity()).unwrap();
        for (a, b) in id.data().iter().zip(f.data().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        let t = AffineTransform::translation(2.0, 1.0);
        let sh = warp(&f, &t).unwrap();
        for y in 1..6 {
            for x in 2..6 {
                assert!((sh.data()[(y, x, 0)] - plane[(y - 1, x - 2)]).abs() < 1e-12);
            }
        }
        assert!(!sh.mask[(0, 0)]);
    }

    #[test]
    fn warp_round_trip_on_interior() {
        let plane = Array2::from_shape_fn((24, 24), |(r, c)| {
            (0.18 * r as f64).sin() * (0.22 * c as f64).cos() * 0.4 + 0.5
        });
        let f = mono(&plane);
        let t = AffineTransform::rotation_about(0.05, 12.0, 12.0, 0.4, -0.3);
        let fwd = warp(&f, &t).unwrap();
        let back = warp(&fwd, &t.inverse().unwrap()).unwrap();
        for y in 4..20 {
            for x in 4..20 {
                if back.mask[(y, x)] {
                    assert!(
                        (back.data()[(y, x, 0)] - plane[(y, x)]).abs() < 2e-2,
                        "({y},{x})"
                    );
                }
            }
        }
    }

    #[test]
    fn warp_rejects_singular() {
        let f = mono(&Array2::zeros((4, 4)));
        let t = AffineTransform {
            m: [[0.0, 0.0, 0.0], [0.0, 0.0, 0.0]],
        };
        assert!(warp(&f, &t).is_err());
    }
}
