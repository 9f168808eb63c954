//! Frame/field data model, the spectral cube container, and shared
//! preprocessing: dark subtraction, deinterlacing, Gaussian smoothing,
//! distortion remap, and intensity-based affine registration.

mod field;
mod ops;
mod register;
mod transform;

pub mod io;

pub use field::{Field, IllumMode, IllumTag, Parity, SpectralCube, MLE_WAVELENGTHS_NM};
pub use ops::{
    apply_distortion_map, deinterlace, gaussian_kernel, gaussian_smooth, gaussian_smooth_plane,
    subtract_dark, warp,
};
pub use register::{register_affine, RegistrationParams, RegistrationResult};
pub use transform::AffineTransform;
