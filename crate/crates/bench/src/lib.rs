//! Seeded input generators shared by the pipeline benchmarks.

use mle_core::imgcore::{Field, IllumTag, MLE_WAVELENGTHS_NM};
use mle_core::spectral::ExtinctionTable;
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform-noise single-channel field.
pub fn noise_field(h: usize, w: usize, seed: u64) -> Field {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plane = Array2::from_shape_fn((h, w), |_| rng.gen_range(0.0..1.0));
    Field::from_plane(plane, 0, IllumTag::white()).unwrap()
}

/// Absorbance planes consistent with the bundled extinction table.
pub fn absorbance_planes(h: usize, w: usize, seed: u64) -> (Array3<f64>, Array2<bool>, ExtinctionTable) {
    let table = ExtinctionTable::builtin().aligned_to(&MLE_WAVELENGTHS_NM).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = table.len();
    let mut planes = Array3::zeros((n, h, w));
    for r in 0..h {
        for c in 0..w {
            let x1 = rng.gen_range(1e-6..1e-5);
            let x2 = rng.gen_range(1e-6..1e-5);
            let o = rng.gen_range(0.05..0.15);
            for p in 0..n {
                planes[(p, r, c)] = x1 * table.eps_hbo2[p] + x2 * table.eps_hb[p] + o;
            }
        }
    }
    (planes, Array2::from_elem((h, w), true), table)
}

/// Smooth height-like scalar map.
pub fn smooth_map(h: usize, w: usize) -> Array2<f64> {
    Array2::from_shape_fn((h, w), |(r, c)| {
        (0.11 * r as f64).sin() * (0.13 * c as f64).cos() + 0.3 * (0.05 * (r + c) as f64).sin()
    })
}
