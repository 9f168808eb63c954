//! Simulated color rendering from spectral cubes (white light, narrow band,
//! and spectrally enhanced modes), CIEDE2000 color differences, and the
//! camera-weight optimizer that maximizes lesion/normal color separation.

mod deltae;

pub use deltae::{ciede2000, LabColor};

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};

use crate::error::{MleError, Result};
use crate::imgcore::SpectralCube;

const BUILTIN_RESPONSE_CSV: &str = include_str!("../../assets/spectral_response.csv");

/// Illumination spectrum and Bayer filter transmissions sampled at the
/// platform wavelengths, plus per-channel correction factors omega.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralResponse {
    pub wavelengths_nm: Vec<f64>,
    pub illum: Vec<f64>,
    /// Rows r/g/b, one weight per wavelength.
    pub bayer: [Vec<f64>; 3],
    pub omega: [f64; 3],
}

impl SpectralResponse {
    pub fn builtin() -> Self {
        Self::from_csv_str(BUILTIN_RESPONSE_CSV).expect("bundled response asset is valid")
    }

    /// Narrow band variant of the builtin response: illumination confined to
    /// the blue and green bands.
    pub fn builtin_nbi() -> Self {
        let mut r = Self::builtin();
        r.illum = vec![1.0, 0.8, 0.1, 0.6, 1.0, 0.2, 0.0, 0.0];
        r
    }

    /// Parses CSV with header `wavelength_nm,illum,bayer_r,bayer_g,bayer_b`.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let expect = ["wavelength_nm", "illum", "bayer_r", "bayer_g", "bayer_b"];
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != expect {
            return Err(MleError::Format(format!(
                "response CSV header must be {expect:?}, got {headers:?}"
            )));
        }
        let mut out = Self {
            wavelengths_nm: vec![],
            illum: vec![],
            bayer: [vec![], vec![], vec![]],
            omega: [1.0; 3],
        };
        for record in rdr.records() {
            let record = record?;
            let parse = |i: usize| -> Result<f64> {
                record
                    .get(i)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| MleError::Format(format!("bad response row {record:?}")))
            };
            out.wavelengths_nm.push(parse(0)?);
            out.illum.push(parse(1)?);
            for c in 0..3 {
                out.bayer[c].push(parse(2 + c)?);
            }
        }
        out.validate()?;
        Ok(out)
    }

    pub fn from_csv_path(path: &std::path::Path) -> Result<Self> {
        Self::from_csv_str(&std::fs::read_to_string(path)?)
    }

    fn validate(&self) -> Result<()> {
        if self.wavelengths_nm.len() < 2 {
            return Err(MleError::Configuration(
                "response needs at least 2 wavelengths".into(),
            ));
        }
        let all = self
            .illum
            .iter()
            .chain(self.bayer.iter().flatten())
            .chain(self.omega.iter());
        if all.clone().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(MleError::Configuration(
                "response entries must be nonnegative".into(),
            ));
        }
        if self.omega.iter().any(|&o| o <= 0.0) {
            return Err(MleError::Configuration("omega must be > 0".into()));
        }
        Ok(())
    }

    /// Omega that maps a unit-reflectance cube to equal channel outputs.
    pub fn neutral_omega(&self) -> [f64; 3] {
        let mut o = [1.0f64; 3];
        for c in 0..3 {
            let s: f64 = self
                .illum
                .iter()
                .zip(self.bayer[c].iter())
                .map(|(i, b)| i * b)
                .sum();
            o[c] = if s > 0.0 { 1.0 / s } else { 1.0 };
        }
        o
    }

    pub fn len(&self) -> usize {
        self.wavelengths_nm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.wavelengths_nm.is_empty()
    }
}

/// `channel_c = omega_c * sum_over_wavelengths illum * R * bayer_c`.
pub fn render_color(cube: &SpectralCube, resp: &SpectralResponse) -> Result<Array3<f64>> {
    if cube.n_wavelengths() != resp.len() {
        return Err(MleError::DimensionMismatch(format!(
            "cube has {} planes but response {} wavelengths",
            cube.n_wavelengths(),
            resp.len()
        )));
    }
    let (n, h, w) = cube.planes().dim();
    let mut out = Array3::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for p in 0..n {
                    acc += resp.illum[p] * cube.planes()[(p, y, x)] * resp.bayer[c][p];
                }
                out[(y, x, c)] = resp.omega[c] * acc;
            }
        }
    }
    Ok(out)
}

/// Linear per-channel balance of `img` onto the channel means of `reference`.
pub fn color_balance(img: &Array3<f64>, reference: &Array3<f64>) -> Result<Array3<f64>> {
    if img.dim().2 != 3 || reference.dim().2 != 3 {
        return Err(MleError::InvalidInput("expected RGB images".into()));
    }
    let mut out = img.clone();
    for c in 0..3 {
        let m_img = img.index_axis(ndarray::Axis(2), c).mean().unwrap_or(0.0);
        let m_ref = reference
            .index_axis(ndarray::Axis(2), c)
            .mean()
            .unwrap_or(0.0);
        if m_img > 1e-12 {
            let s = m_ref / m_img;
            out.index_axis_mut(ndarray::Axis(2), c).mapv_inplace(|v| v * s);
        }
    }
    Ok(out)
}

/// Narrow band rendering: the Bayer green and blue responses under the NBI
/// illumination drive the display channels as R <- green, G <- blue,
/// B <- blue.
pub fn render_nbi(cube: &SpectralCube, nbi_resp: &SpectralResponse) -> Result<Array3<f64>> {
    let raw = render_color(cube, nbi_resp)?;
    let (h, w, _) = raw.dim();
    let mut out = Array3::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            out[(y, x, 0)] = raw[(y, x, 1)];
            out[(y, x, 1)] = raw[(y, x, 2)];
            out[(y, x, 2)] = raw[(y, x, 2)];
        }
    }
    Ok(out)
}

/// Brightness normalization mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DisplayNorm {
    /// Scale each pixel so its maximum channel equals 0.8 (color-difference
    /// analysis path).
    PixelMax,
    /// Scale the whole image so its mean intensity equals 0.4
    /// (visualization path).
    ImageMean,
}

/// Applies [`DisplayNorm`]; returns the image and a mask of pixels left
/// unchanged because they were black (PixelMax mode only).
pub fn normalize_display(rgb: &Array3<f64>, mode: DisplayNorm) -> (Array3<f64>, Array2<bool>) {
    let (h, w, _) = rgb.dim();
    let mut out = rgb.clone();
    let mut skipped = Array2::from_elem((h, w), false);
    match mode {
        DisplayNorm::PixelMax => {
            for y in 0..h {
                for x in 0..w {
                    let m = (0..3).map(|c| rgb[(y, x, c)]).fold(0.0f64, f64::max);
                    if m <= 1e-12 {
                        skipped[(y, x)] = true;
                        continue;
                    }
                    for c in 0..3 {
                        out[(y, x, c)] = rgb[(y, x, c)] * 0.8 / m;
                    }
                }
            }
        }
        DisplayNorm::ImageMean => {
            let mean = rgb.mean().unwrap_or(0.0);
            if mean > 1e-12 {
                out.mapv_inplace(|v| v * 0.4 / mean);
            }
        }
    }
    (out, skipped)
}

/// Linear RGB (device primaries treated as sRGB, D65) to CIE Lab.
pub fn linear_rgb_to_lab(r: f64, g: f64, b: f64) -> LabColor {
    let x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
    let (xn, yn, zn) = (0.95047, 1.0, 1.08883);
    let f = |t: f64| {
        let d = 6.0f64 / 29.0;
        if t > d * d * d {
            t.cbrt()
        } else {
            t / (3.0 * d * d) + 4.0 / 29.0
        }
    };
    let (fx, fy, fz) = (f(x / xn), f(y / yn), f(z / zn));
    LabColor {
        l: 116.0 * fy - 16.0,
        a: 500.0 * (fx - fy),
        b: 200.0 * (fy - fz),
    }
}

/// Result of the camera-weight optimization.
#[derive(Debug, Clone)]
pub struct SeOptimization {
    /// Optimized 3 x n nonnegative camera weights.
    pub weights: [Vec<f64>; 3],
    /// Objective after the initial evaluation and each accepted step;
    /// non-decreasing by construction.
    pub trace: Vec<f64>,
}

/// Gradient ascent on the camera weights maximizing the mean pairwise
/// CIEDE2000 difference between rendered normal and lesion pixel samples.
///
/// `n_pixels` are drawn from each ROI with a seeded RNG; rendered samples
/// are per-pixel brightness normalized (max channel 0.8) before the Lab
/// conversion so the objective ignores per-pixel intensity scale.
#[allow(clippy::too_many_arguments)]
pub fn optimize_se(
    cube: &SpectralCube,
    normal_roi: &Array2<bool>,
    lesion_roi: &Array2<bool>,
    n_pixels: usize,
    init: &[Vec<f64>; 3],
    lr: f64,
    iters: usize,
    seed: u64,
) -> Result<SeOptimization> {
    let n = cube.n_wavelengths();
    if init.iter().any(|row| row.len() != n) {
        return Err(MleError::DimensionMismatch(
            "initial weights must be 3 x n_wavelengths".into(),
        ));
    }
    if init.iter().flatten().any(|&w| w < 0.0 || !w.is_finite()) {
        return Err(MleError::InvalidInput(
            "initial weights must be nonnegative".into(),
        ));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let normal = sample_spectra(cube, normal_roi, n_pixels, &mut rng)?;
    let lesion = sample_spectra(cube, lesion_roi, n_pixels, &mut rng)?;

    let objective = |w: &[Vec<f64>; 3]| -> f64 {
        let lab_n: Vec<LabColor> = normal.iter().map(|s| render_sample(s, w)).collect();
        let lab_l: Vec<LabColor> = lesion.iter().map(|s| render_sample(s, w)).collect();
        let mut sum = 0.0;
        for a in &lab_n {
            for b in &lab_l {
                sum += ciede2000(a, b);
            }
        }
        sum / (lab_n.len() * lab_l.len()) as f64
    };

    let mut w = init.clone();
    let mut best = objective(&w);
    if !best.is_finite() {
        return Err(MleError::NonFinite("SE objective".into()));
    }
    let mut trace = vec![best];
    for _ in 0..iters {
        // Central-difference gradient over the 3 x n weights.
        let mut grad = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        let mut gnorm = 0.0f64;
        for c in 0..3 {
            for p in 0..n {
                let eps = 1e-3 * w[c][p].max(0.1);
                let mut wp = w.clone();
                wp[c][p] = w[c][p] + eps;
                let mut wm = w.clone();
                wm[c][p] = (w[c][p] - eps).max(0.0);
                let d = wp[c][p] - wm[c][p];
                let g = if d > 0.0 {
                    (objective(&wp) - objective(&wm)) / d
                } else {
                    0.0
                };
                grad[c][p] = g;
                gnorm = gnorm.max(g.abs());
            }
        }
        if gnorm < 1e-12 {
            break;
        }
        // Backtracking ascent step, projected onto the nonnegative orthant.
        let mut step = lr;
        let mut improved = false;
        for _ in 0..20 {
            let mut cand = w.clone();
            for c in 0..3 {
                for p in 0..n {
                    cand[c][p] = (w[c][p] + step * grad[c][p]).max(0.0);
                }
            }
            let val = objective(&cand);
            if val.is_finite() && val > best {
                w = cand;
                best = val;
                trace.push(best);
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    Ok(SeOptimization { weights: w, trace })
}

fn sample_spectra(
    cube: &SpectralCube,
    roi: &Array2<bool>,
    n_pixels: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<f64>>> {
    let mut coords = Vec::new();
    for ((r, c), &ok) in roi.indexed_iter() {
        if ok && cube.mask[(r, c)] {
            coords.push((r, c));
        }
    }
    if coords.is_empty() {
        return Err(MleError::InvalidInput("empty ROI".into()));
    }
    Ok((0..n_pixels)
        .map(|_| {
            let (r, c) = coords[rng.gen_range(0..coords.len())];
            cube.spectrum(r, c)
        })
        .collect())
}

fn render_sample(spectrum: &[f64], w: &[Vec<f64>; 3]) -> LabColor {
    let mut rgb = [0.0f64; 3];
    for c in 0..3 {
        rgb[c] = spectrum.iter().zip(w[c].iter()).map(|(s, k)| s * k).sum();
    }
    let m = rgb.iter().fold(0.0f64, |a, &v| a.max(v));
    if m > 1e-12 {
        for v in rgb.iter_mut() {
            *v *= 0.8 / m;
        }
    }
    linear_rgb_to_lab(rgb[0], rgb[1], rgb[2])
}
