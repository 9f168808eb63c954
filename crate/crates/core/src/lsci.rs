//! Laser speckle contrast imaging: per-pixel contrast `K = sigma / mean`
//! over a spatial window, flow maps `V = 1 / K^2`, registered temporal
//! averaging, and the RMS contrast metric used for map comparisons.

use ndarray::Array2;

use crate::error::{MleError, Result};
use crate::imgcore::{register_affine, warp, Field, RegistrationParams};

/// Local mean below which contrast is undefined and the pixel is masked.
pub const MEAN_FLOOR: f64 = 1e-4;
/// Contrast floor bounding the dynamic range of `V = 1 / K^2`.
pub const KAPPA_FLOOR: f64 = 1e-3;

/// Per-pixel speckle contrast over a square window.
#[derive(Debug, Clone)]
pub struct ContrastMap {
    pub k: Array2<f64>,
    pub window: usize,
    pub mask: Array2<bool>,
}

/// Per-pixel flow contrast.
#[derive(Debug, Clone)]
pub struct FlowMap {
    pub v: Array2<f64>,
    pub frames_averaged: usize,
    pub mask: Array2<bool>,
}

/// `K = sigma / mean` within a `window x window` neighborhood, replicate
/// borders, sample (n-1) standard deviation. Pixels whose local mean falls
/// below [`MEAN_FLOOR`], or whose window touches a masked pixel, are masked.
pub fn speckle_contrast(field: &Field, window: usize) -> Result<ContrastMap> {
    if field.channels() != 1 {
        return Err(MleError::InvalidInput(
            "speckle_contrast expects a single-channel field".into(),
        ));
    }
    if window % 2 == 0 || window == 0 {
        return Err(MleError::InvalidInput("window must be odd".into()));
    }
    let plane = field.plane(0);
    let (h, w) = plane.dim();
    let r = (window / 2) as isize;
    let mut k = Array2::zeros((h, w));
    let mut mask = Array2::from_elem((h, w), true);
    let n = (window * window) as f64;
    let mut vals = vec![0.0f64; window * window];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut valid = true;
            let mut i = 0;
            for dy in -r..=r {
                for dx in -r..=r {
                    let sy = (y + dy).clamp(0, h as isize - 1) as usize;
                    let sx = (x + dx).clamp(0, w as isize - 1) as usize;
                    if !field.mask[(sy, sx)] {
                        valid = false;
                    }
                    vals[i] = plane[(sy, sx)];
                    i += 1;
                }
            }
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let (yy, xx) = (y as usize, x as usize);
            if !valid || mean < MEAN_FLOOR {
                mask[(yy, xx)] = false;
            } else {
                k[(yy, xx)] = var.sqrt() / mean;
            }
        }
    }
    Ok(ContrastMap { k, window, mask })
}

/// `V = 1 / max(K, KAPPA_FLOOR)^2`; mask propagated.
pub fn flow_from_contrast(k: &ContrastMap) -> FlowMap {
    let v = k.k.mapv(|kv| 1.0 / kv.max(KAPPA_FLOOR).powi(2));
    FlowMap {
        v,
        frames_averaged: 1,
        mask: k.mask.clone(),
    }
}

/// Registered temporal average over the trailing `window` frames.
///
/// Each white light field is registered to the window's center field and the
/// resulting transform warps the paired flow map before averaging. Frames
/// whose registration fails to converge are dropped; `frames_averaged`
/// reports how many survived. Output mask is the per-pixel intersection of
/// the warped masks.
pub fn temporal_average(
    flows: &[FlowMap],
    color_fields: &[Field],
    window: usize,
) -> Result<FlowMap> {
    if flows.is_empty() || flows.len() != color_fields.len() {
        return Err(MleError::DimensionMismatch(
            "temporal_average needs equal-length non-empty sequences".into(),
        ));
    }
    let take = window.min(flows.len()).max(1);
    let start = flows.len() - take;
    let flows = &flows[start..];
    let colors = &color_fields[start..];
    let center = take / 2;
    let (h, w) = flows[0].v.dim();

    let reg_params = RegistrationParams::default();
    let mut sum = Array2::<f64>::zeros((h, w));
    let mut count = Array2::<f64>::zeros((h, w));
    let mut mask = Array2::from_elem((h, w), true);
    let mut used = 0usize;
    for (i, (flow, color)) in flows.iter().zip(colors.iter()).enumerate() {
        if flow.v.dim() != (h, w) {
            return Err(MleError::DimensionMismatch("flow map dims".into()));
        }
        let (v, m) = if i == center {
            (flow.v.clone(), flow.mask.clone())
        } else {
            let reg = register_affine(color, &colors[center], &reg_params)?;
            if !reg.converged {
                continue;
            }
            let mut f = Field::from_plane(flow.v.clone(), 0, color.illum.clone())?;
            f.mask = flow.mask.clone();
            let warped = warp(&f, &reg.transform)?;
            (warped.plane(0), warped.mask)
        };
        for ((r, c), &ok) in m.indexed_iter() {
            if ok {
                sum[(r, c)] += v[(r, c)];
                count[(r, c)] += 1.0;
            } else {
                mask[(r, c)] = false;
            }
        }
        used += 1;
    }
    if used == 0 {
        return Err(MleError::InvalidInput(
            "no frame registered successfully".into(),
        ));
    }
    let v = Array2::from_shape_fn((h, w), |(r, c)| {
        if count[(r, c)] > 0.0 {
            sum[(r, c)] / count[(r, c)]
        } else {
            0.0
        }
    });
    Ok(FlowMap {
        v,
        frames_averaged: used,
        mask,
    })
}

/// RMS contrast between two regions: pool the pixels of both ROIs, min-max
/// normalize with the full map's masked range, return the population
/// standard deviation of the pooled values.
pub fn rms_contrast(
    map: &Array2<f64>,
    mask: &Array2<bool>,
    roi_a: (std::ops::Range<usize>, std::ops::Range<usize>),
    roi_b: (std::ops::Range<usize>, std::ops::Range<usize>),
) -> Result<f64> {
    let overlap = roi_a.0.start < roi_b.0.end
        && roi_b.0.start < roi_a.0.end
        && roi_a.1.start < roi_b.1.end
        && roi_b.1.start < roi_a.1.end;
    if overlap {
        return Err(MleError::InvalidInput("ROIs must be disjoint".into()));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for ((r, c), &ok) in mask.indexed_iter() {
        if ok {
            lo = lo.min(map[(r, c)]);
            hi = hi.max(map[(r, c)]);
        }
    }
    if !lo.is_finite() {
        return Err(MleError::InvalidInput("fully masked map".into()));
    }
    let span = (hi - lo).max(1e-300);
    let mut pooled = Vec::new();
    for roi in [&roi_a, &roi_b] {
        let mut n = 0usize;
        for r in roi.0.clone() {
            for c in roi.1.clone() {
                if mask[(r, c)] {
                    pooled.push((map[(r, c)] - lo) / span);
                    n += 1;
                }
            }
        }
        if n < 25 {
            return Err(MleError::InvalidInput(format!(
                "ROI has {n} valid pixels, need at least 25"
            )));
        }
    }
    let n = pooled.len() as f64;
    let mean = pooled.iter().sum::<f64>() / n;
    Ok((pooled.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt())
}

/// Square median filter for display smoothing; never part of quantitative
/// paths.
pub fn median_filter(plane: &Array2<f64>, size: usize) -> Array2<f64> {
    let (h, w) = plane.dim();
    let r = (size / 2) as isize;
    let mut vals = Vec::with_capacity(size * size);
    Array2::from_shape_fn((h, w), |(y, x)| {
        vals.clear();
        for dy in -r..=r {
            for dx in -r..=r {
                let sy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                let sx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                vals.push(plane[(sy, sx)]);
            }
        }
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        vals[vals.len() / 2]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgcore::IllumTag;
    use rand::{Rng, SeedableRng};
    use rand_distr::Exp1;

    fn mono(plane: Array2<f64>) -> Field {
        Field::from_plane(plane, 0, IllumTag::default()).unwrap()
    }

    #[test]
    fn constant_field_gives_zero_contrast() {
        let f = mono(Array2::from_elem((12, 12), 0.6));
        let k = speckle_contrast(&f, 5).unwrap();
        assert!(k.k.iter().all(|&v| v.abs() < 1e-12));
        assert!(k.mask.iter().all(|&m| m));
    }

    #[test]
    fn matches_brute_force_window_statistics() {
        let plane = Array2::from_shape_fn((9, 9), |(r, c)| ((r + c) % 2) as f64);
        let f = mono(plane.clone());
        let k = speckle_contrast(&f, 5).unwrap();
        // Interior pixel: direct window statistics.
        let (y, x) = (4, 4);
        let mut vals = Vec::new();
        for dy in 0..5usize {
            for dx in 0..5usize {
                vals.push(plane[(y - 2 + dy, x - 2 + dx)]);
            }
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((k.k[(y, x)] - var.sqrt() / mean).abs() < 1e-12);
    }

    #[test]
    fn fully_developed_speckle_contrast_near_one() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let plane = Array2::from_shape_fn((256, 256), |_| {
            let v: f64 = rng.sample(Exp1);
            v * 0.1
        });
        let f = mono(plane).clone();
        let k = speckle_contrast(&f, 5).unwrap();
        let mean_k = k.k.iter().sum::<f64>() / k.k.len() as f64;
        assert!((mean_k - 1.0).abs() < 0.05, "mean K {mean_k}");
    }

    #[test]
    fn contrast_invariant_to_intensity_scaling() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let plane = Array2::from_shape_fn((32, 32), |_| rng.gen::<f64>() * 0.5 + 0.1);
        let f1 = mono(plane.clone());
        let f2 = mono(plane * 3.7);
        let k1 = speckle_contrast(&f1, 5).unwrap();
        let k2 = speckle_contrast(&f2, 5).unwrap();
        for (a, b) in k1.k.iter().zip(k2.k.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn low_mean_pixels_masked() {
        let mut plane = Array2::from_elem((10, 10), 0.5);
        for r in 0..10 {
            for c in 0..5 {
                plane[(r, c)] = 0.0;
            }
        }
        let f = mono(plane);
        let k = speckle_contrast(&f, 5).unwrap();
        assert!(!k.mask[(5, 0)]);
        assert!(k.mask[(5, 9)]);
    }

    #[test]
    fn flow_values() {
        let mut k = ContrastMap {
            k: Array2::from_elem((2, 2), 1.0),
            window: 5,
            mask: Array2::from_elem((2, 2), true),
        };
        k.k[(0, 1)] = 0.5;
        k.k[(1, 0)] = 1e-7; // below floor
        let v = flow_from_contrast(&k);
        assert!((v.v[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((v.v[(0, 1)] - 4.0).abs() < 1e-12);
        assert!((v.v[(1, 0)] - 1e6).abs() < 1e-6);
    }

    #[test]
    fn temporal_average_of_identical_frames_is_identity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let v = Array2::from_shape_fn((48, 48), |_| rng.gen::<f64>());
        let flow = FlowMap {
            v: v.clone(),
            frames_averaged: 1,
            mask: Array2::from_elem((48, 48), true),
        };
        let color = mono(Array2::from_shape_fn((48, 48), |_| rng.gen::<f64>()));
        let flows = vec![flow; 5];
        let colors = vec![color; 5];
        let avg = temporal_average(&flows, &colors, 5).unwrap();
        assert_eq!(avg.frames_averaged, 5);
        for ((r, c), &ok) in avg.mask.indexed_iter() {
            if ok {
                assert!((avg.v[(r, c)] - v[(r, c)]).abs() < 1e-6, "({r},{c})");
            }
        }
    }

    #[test]
    fn translated_sequence_matches_static_oracle() {
        // Smooth flow scene; frame i is shifted by i pixels and should be
        // realigned onto the center frame before averaging.
        let scene = |x: f64, y: f64| 0.5 + 0.3 * (0.15 * x).sin() * (0.12 * y).cos();
        let (h, w) = (64usize, 64usize);
        let mut flows = Vec::new();
        let mut colors = Vec::new();
        for i in 0..3i64 {
            let dx = i as f64 - 1.0;
            let v = Array2::from_shape_fn((h, w), |(r, c)| scene(c as f64 + dx, r as f64));
            let tex = Array2::from_shape_fn((h, w), |(r, c)| {
                let x = c as f64 + dx;
                let y = r as f64;
                0.5 + 0.2 * (0.31 * x + 0.4).sin() * (0.27 * y).sin()
                    + 0.15 * (0.11 * x + 0.23 * y).sin()
            });
            flows.push(FlowMap {
                v,
                frames_averaged: 1,
                mask: Array2::from_elem((h, w), true),
            });
            colors.push(mono(tex));
        }
        let avg = temporal_average(&flows, &colors, 3).unwrap();
        let mut err2 = 0.0;
        let mut ref2 = 0.0;
        for r in 8..h - 8 {
            for c in 8..w - 8 {
                if avg.mask[(r, c)] {
                    let truth = scene(c as f64, r as f64);
                    err2 += (avg.v[(r, c)] - truth).powi(2);
                    ref2 += truth * truth;
                }
            }
        }
        assert!((err2 / ref2).sqrt() < 0.02, "rms {}", (err2 / ref2).sqrt());
    }

    #[test]
    fn rms_contrast_two_point() {
        let mut map = Array2::zeros((20, 20));
        for r in 0..20 {
            for c in 10..20 {
                map[(r, c)] = 1.0;
            }
        }
        let mask = Array2::from_elem((20, 20), true);
        let v = rms_contrast(&map, &mask, (0..10, 0..10), (0..10, 10..20)).unwrap();
        assert!((v - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rms_contrast_constant_map_is_zero() {
        let map = Array2::from_elem((20, 20), 0.7);
        let mask = Array2::from_elem((20, 20), true);
        let v = rms_contrast(&map, &mask, (0..10, 0..20), (10..20, 0..20)).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn rms_contrast_rejects_overlap_and_small_rois() {
        let map = Array2::zeros((20, 20));
        let mask = Array2::from_elem((20, 20), true);
        assert!(rms_contrast(&map, &mask, (0..10, 0..20), (5..15, 0..20)).is_err());
        assert!(rms_contrast(&map, &mask, (0..2, 0..2), (10..20, 0..20)).is_err());
    }

    #[test]
    fn median_filter_removes_impulse() {
        let mut plane = Array2::from_elem((9, 9), 0.2);
        plane[(4, 4)] = 5.0;
        let out = median_filter(&plane, 3);
        assert!((out[(4, 4)] - 0.2).abs() < 1e-12);
    }
}
