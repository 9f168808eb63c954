//! Processing library for a multi-contrast laser endoscopy platform.
//!
//! The platform interleaves spectral, coherent, and directional illumination
//! on a clinical endoscope. This crate implements the offline computational
//! stack for recorded or synthesized frame data:
//!
//! * [`imgcore`] — frame/field model, cube container, preprocessing,
//!   affine registration.
//! * [`spectral`] — reflectance normalization and Beer-Lambert chromophore
//!   unmixing to oxygen saturation maps.
//! * [`lsci`] — laser speckle contrast and flow mapping with registered
//!   temporal averaging.
//! * [`pse`] — photometric stereo: normals, high-pass filtering, Poisson
//!   height integration, relighting.
//! * [`colorsim`] — simulated WLE/NBI/spectral-enhanced color rendering and
//!   CIEDE2000 contrast optimization.
//! * [`acqsim`] — light-modulation-controller protocol codec and a
//!   deterministic acquisition-loop simulator with secant auto-exposure.
//! * [`synthlab`] — synthetic phantom generators for desk-scale validation.
//! * [`statkit`] — paired statistics, Holm-Bonferroni, bootstrap CIs, and
//!   the flow-phantom ANCOVA.

pub mod acqsim;
pub mod colorsim;
pub mod error;
pub mod imgcore;
pub mod lsci;
pub mod pse;
pub mod spectral;
pub mod statkit;
pub mod synthlab;

pub use error::{MleError, Result};
pub use imgcore::{AffineTransform, Field, IllumMode, IllumTag, Parity, SpectralCube};
