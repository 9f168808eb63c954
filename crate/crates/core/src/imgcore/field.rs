use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{MleError, Result};

/// Which set of interlaced rows a field was built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Parity {
    Odd,
    Even,
}

/// Illumination mode active while a field was exposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IllumMode {
    White,
    Spectral,
    Speckle,
    Directional,
    Dark,
}

/// Illumination mode plus the set of active diode channels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IllumTag {
    pub mode: IllumMode,
    /// Indices into the diode table (0-8 physical channels).
    pub diodes: Vec<u8>,
}

impl IllumTag {
    pub fn new(mode: IllumMode, diodes: Vec<u8>) -> Self {
        Self { mode, diodes }
    }

    pub fn white() -> Self {
        Self::new(IllumMode::White, vec![])
    }
}

impl Default for IllumTag {
    fn default() -> Self {
        Self::white()
    }
}

/// A single deinterlaced image field.
///
/// Pixel values are normalized reals in `[0, 1]`; integer sources are divided
/// by their max code value at ingest. Layout is `(height, width, channels)`
/// with 1 (mono) or 3 (RGB) channels. The per-pixel mask marks pixels that
/// are valid for downstream statistics (out-of-FoV or saturated pixels are
/// masked false).
#[derive(Debug, Clone)]
pub struct Field {
    data: Array3<f64>,
    pub mask: Array2<bool>,
    pub parity: Option<Parity>,
    pub frame_id: u64,
    pub illum: IllumTag,
}

impl Field {
    pub fn new(data: Array3<f64>, frame_id: u64, illum: IllumTag) -> Result<Self> {
        let (h, w, c) = data.dim();
        if h == 0 || w == 0 {
            return Err(MleError::InvalidInput("field dimensions must be > 0".into()));
        }
        if c != 1 && c != 3 {
            return Err(MleError::InvalidInput(format!(
                "field must have 1 or 3 channels, got {c}"
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(MleError::NonFinite("field pixels".into()));
        }
        Ok(Self {
            mask: Array2::from_elem((h, w), true),
            data,
            parity: None,
            frame_id: 0,
            illum,
        }
        .with_frame_id(frame_id))
    }

    /// Single-channel field from a 2-D array.
    pub fn from_plane(plane: Array2<f64>, frame_id: u64, illum: IllumTag) -> Result<Self> {
        let (h, w) = plane.dim();
        let data = plane.into_shape((h, w, 1)).expect("shape");
        Self::new(data, frame_id, illum)
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            data: Array3::zeros((height, width, channels)),
            mask: Array2::from_elem((height, width), true),
            parity: None,
            frame_id: 0,
            illum: IllumTag::default(),
        }
    }

    fn with_frame_id(mut self, frame_id: u64) -> Self {
        self.frame_id = frame_id;
        self
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn channels(&self) -> usize {
        self.data.dim().2
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array3<f64> {
        &mut self.data
    }

    /// View of channel `c` as a 2-D plane (copies).
    pub fn plane(&self, c: usize) -> Array2<f64> {
        self.data.index_axis(ndarray::Axis(2), c).to_owned()
    }

    /// Mean over channels; for mono fields this is the single plane.
    pub fn luminance(&self) -> Array2<f64> {
        let (h, w, c) = self.data.dim();
        let mut out = Array2::zeros((h, w));
        for ch in 0..c {
            out += &self.data.index_axis(ndarray::Axis(2), ch);
        }
        out / c as f64
    }

    /// Replaces pixel data, keeping metadata. Dimensions must match.
    pub fn with_data(&self, data: Array3<f64>) -> Self {
        assert_eq!(data.dim(), self.data.dim());
        Self {
            data,
            mask: self.mask.clone(),
            parity: self.parity,
            frame_id: self.frame_id,
            illum: self.illum.clone(),
        }
    }

    pub fn same_shape(&self, other: &Field) -> bool {
        self.data.dim() == other.data.dim()
    }
}

/// Registered per-wavelength reflectance planes.
///
/// Planes are stored `(n_wavelengths, height, width)` with a strictly
/// increasing wavelength list and a shared validity mask (false where pixels
/// are saturated, under-exposed, or out of the field of view).
#[derive(Debug, Clone)]
pub struct SpectralCube {
    planes: Array3<f64>,
    pub wavelengths_nm: Vec<f64>,
    pub mask: Array2<bool>,
}

/// The eight illumination wavelengths of the platform, in nanometres.
pub const MLE_WAVELENGTHS_NM: [f64; 8] = [406.0, 446.0, 468.0, 522.0, 543.0, 562.0, 635.0, 657.0];

impl SpectralCube {
    pub fn new(planes: Array3<f64>, wavelengths_nm: Vec<f64>, mask: Array2<bool>) -> Result<Self> {
        let (n, h, w) = planes.dim();
        if n != wavelengths_nm.len() {
            return Err(MleError::DimensionMismatch(format!(
                "{} planes but {} wavelengths",
                n,
                wavelengths_nm.len()
            )));
        }
        if mask.dim() != (h, w) {
            return Err(MleError::DimensionMismatch("cube mask".into()));
        }
        if !wavelengths_nm.windows(2).all(|p| p[0] < p[1]) {
            return Err(MleError::InvalidInput(
                "wavelength list must be strictly increasing".into(),
            ));
        }
        if !planes.iter().all(|v| v.is_finite()) {
            return Err(MleError::NonFinite("cube planes".into()));
        }
        Ok(Self {
            planes,
            wavelengths_nm,
            mask,
        })
    }

    pub fn n_wavelengths(&self) -> usize {
        self.planes.dim().0
    }

    pub fn height(&self) -> usize {
        self.planes.dim().1
    }

    pub fn width(&self) -> usize {
        self.planes.dim().2
    }

    pub fn planes(&self) -> &Array3<f64> {
        &self.planes
    }

    pub fn planes_mut(&mut self) -> &mut Array3<f64> {
        &mut self.planes
    }

    pub fn plane(&self, i: usize) -> Array2<f64> {
        self.planes.index_axis(ndarray::Axis(0), i).to_owned()
    }

    /// Per-pixel reflectance spectrum at `(row, col)`.
    pub fn spectrum(&self, row: usize, col: usize) -> Vec<f64> {
        (0..self.n_wavelengths())
            .map(|i| self.planes[(i, row, col)])
            .collect()
    }

    /// Max over masked-true pixels of all planes.
    pub fn masked_max(&self) -> f64 {
        let mut m = f64::NEG_INFINITY;
        for p in 0..self.n_wavelengths() {
            for ((r, c), ok) in self.mask.indexed_iter() {
                if *ok {
                    m = m.max(self.planes[(p, r, c)]);
                }
            }
        }
        m
    }
}
