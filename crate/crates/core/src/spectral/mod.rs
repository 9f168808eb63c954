//! Reflectance normalization and Beer-Lambert chromophore unmixing.
//!
//! Absorbance at each pixel and wavelength is modeled as
//! `A = -log10(R) = (c_hbo2 * eps_hbo2 + c_hb * eps_hb) * L + O`, solved per
//! pixel by non-negative least squares on the two hemoglobin terms with a
//! free offset. Oxygen saturation is the relative oxygenated fraction
//! `x1 / (x1 + x2)`.

mod extinction;
mod unmix;

pub use extinction::ExtinctionTable;
pub use unmix::{absorbance, unmix, ChromophoreMaps, NnlsSolver};

use ndarray::{Array2, Array3};

use crate::error::{MleError, Result};
use crate::imgcore::{Field, SpectralCube};

/// Reflectance below which the white reference is considered unusable.
pub const WHITE_FLOOR: f64 = 1e-3;
/// Raw intensities at or above this (pre-normalization) are saturated.
pub const SATURATION_LEVEL: f64 = 0.995;
/// Constant added to the cube max when rescaling into (0, 1).
pub const RESCALE_DELTA: f64 = 1e-3;
/// Total-hemoglobin floor below which oxygen saturation is undefined.
pub const THB_FLOOR: f64 = 1e-6;

/// Normalizes raw per-wavelength fields against a white reference,
/// correcting both for duty cycle (pulse width per diode):
/// `R = (raw / duty) / (white / duty_white)`.
///
/// Saturated raw pixels and pixels where the white reference is below
/// [`WHITE_FLOOR`] are masked out.
pub fn normalize_reflectance(
    raw: &[(f64, Field)],
    white: &[(f64, Field)],
    pulse_widths_ms: &[f64],
    white_pulse_widths_ms: &[f64],
) -> Result<SpectralCube> {
    if raw.len() != white.len()
        || raw.len() != pulse_widths_ms.len()
        || raw.len() != white_pulse_widths_ms.len()
    {
        return Err(MleError::DimensionMismatch(
            "raw/white/pulse-width lists must have equal length".into(),
        ));
    }
    if raw.is_empty() {
        return Err(MleError::InvalidInput("empty wavelength set".into()));
    }
    for ((lr, _), (lw, _)) in raw.iter().zip(white.iter()) {
        if (lr - lw).abs() > 1e-9 {
            return Err(MleError::InvalidInput(format!(
                "wavelength mismatch between raw ({lr} nm) and white ({lw} nm)"
            )));
        }
    }
    if pulse_widths_ms
        .iter()
        .chain(white_pulse_widths_ms)
        .any(|&p| p <= 0.0)
    {
        return Err(MleError::InvalidInput("pulse widths must be > 0".into()));
    }

    let (h, w) = {
        let f = &raw[0].1;
        (f.height(), f.width())
    };
    let n = raw.len();
    let mut planes = Array3::zeros((n, h, w));
    let mut mask = Array2::from_elem((h, w), true);
    for (i, ((_, rf), (_, wf))) in raw.iter().zip(white.iter()).enumerate() {
        if rf.height() != h || rf.width() != w || !rf.same_shape(wf) {
            return Err(MleError::DimensionMismatch("reflectance plane dims".into()));
        }
        let rp = rf.luminance();
        let wp = wf.luminance();
        let duty = pulse_widths_ms[i];
        let duty_w = white_pulse_widths_ms[i];
        for y in 0..h {
            for x in 0..w {
                let rv = rp[(y, x)];
                let wv = wp[(y, x)];
                if rv >= SATURATION_LEVEL || wv < WHITE_FLOOR || !rf.mask[(y, x)] || !wf.mask[(y, x)]
                {
                    mask[(y, x)] = false;
                    planes[(i, y, x)] = 0.0;
                } else {
                    planes[(i, y, x)] = (rv / duty) / (wv / duty_w);
                }
            }
        }
    }
    let wavelengths: Vec<f64> = raw.iter().map(|(l, _)| *l).collect();
    SpectralCube::new(planes, wavelengths, mask)
}

/// Divides all planes by the masked cube maximum plus [`RESCALE_DELTA`],
/// guaranteeing values in (0, 1). Masked pixels are ignored when locating
/// the maximum.
pub fn cube_rescale(cube: &SpectralCube) -> SpectralCube {
    let max = cube.masked_max();
    let denom = if max.is_finite() && max > 0.0 {
        max + RESCALE_DELTA
    } else {
        1.0
    };
    let mut out = cube.clone();
    out.planes_mut().mapv_inplace(|v| v / denom);
    out
}

/// ROI mean/std series of oxygen saturation over a cube sequence.
///
/// Statistics run over masked-true pixels only; a fully masked ROI yields
/// NaN-free output by reporting the entry as invalid.
pub fn sto2_timeseries(
    maps: &[ChromophoreMaps],
    roi: (std::ops::Range<usize>, std::ops::Range<usize>),
) -> Vec<RoiStats> {
    maps.iter()
        .map(|m| {
            let mut vals = Vec::new();
            for r in roi.0.clone() {
                for c in roi.1.clone() {
                    if m.mask[(r, c)] {
                        vals.push(m.sto2[(r, c)]);
                    }
                }
            }
            if vals.is_empty() {
                RoiStats {
                    mean: 0.0,
                    std: 0.0,
                    n: 0,
                }
            } else {
                let n = vals.len() as f64;
                let mean = vals.iter().sum::<f64>() / n;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                RoiStats {
                    mean,
                    std: var.sqrt(),
                    n: vals.len(),
                }
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiStats {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}
