//! Seeded phantom generators: dynamic speckle with a flow channel,
//! Lambertian scenes under a light rig, Beer-Lambert forward spectral
//! scenes, and a Macbeth-style color target cube. Every generator is
//! deterministic under a fixed seed.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{MleError, Result};
use crate::imgcore::{Field, IllumMode, IllumTag, SpectralCube, MLE_WAVELENGTHS_NM};
use crate::pse::LightRig;
use crate::spectral::ExtinctionTable;

const MACBETH_CSV: &str = include_str!("../assets/macbeth_spectra.csv");

/// Declarative phantom description, loadable from JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhantomSpec {
    SpeckleFlow {
        height: usize,
        width: usize,
        velocity_mm_s: f64,
        exposure_ms: f64,
        frames: usize,
        seed: u64,
    },
    LambertianSurface {
        height: usize,
        width: usize,
        bump_amplitude: f64,
        bump_sigma: f64,
        albedo: f64,
        noise_sigma: f64,
        seed: u64,
    },
    SpectralScene {
        height: usize,
        width: usize,
        sto2_low: f64,
        sto2_high: f64,
        thb: f64,
        offset: f64,
        noise_sigma: f64,
        seed: u64,
    },
    Macbeth { patch_px: usize, seed: u64 },
}

/// Decorrelation time scale: `tau_c = TAU_REF_MS_MM_S / velocity` so faster
/// flow decorrelates faster; zero velocity freezes the field.
pub const TAU_REF_MS_MM_S: f64 = 1.0;
/// Sub-exposures integrated per frame when simulating motion blur.
const SPECKLE_SUBSTEPS: usize = 20;

/// Output of the dynamic speckle generator.
pub struct SpecklePhantom {
    pub frames: Vec<Field>,
    /// True inside the flow channel (horizontal center band).
    pub channel: Array2<bool>,
}

/// Fully developed speckle with a moving channel band and static background.
///
/// Each pixel carries a complex Gaussian field; inside the channel it
/// evolves between sub-exposures with single-step correlation
/// `g1 = 1 / (1 + dt / tau_c)` (Lorentzian-shaped decay), and the recorded
/// intensity integrates `SPECKLE_SUBSTEPS` sub-exposures over the exposure
/// time. Background pixels stay frozen, so their spatial contrast is the
/// static speckle limit.
pub fn gen_dynamic_speckle(
    height: usize,
    width: usize,
    velocity_mm_s: f64,
    exposure_ms: f64,
    n_frames: usize,
    seed: u64,
) -> Result<SpecklePhantom> {
    if height < 8 || width < 8 || n_frames == 0 {
        return Err(MleError::InvalidInput(
            "speckle phantom needs at least 8x8 pixels and one frame".into(),
        ));
    }
    if velocity_mm_s < 0.0 || exposure_ms <= 0.0 {
        return Err(MleError::InvalidInput(
            "velocity must be >= 0 and exposure > 0".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let channel = Array2::from_shape_fn((height, width), |(r, _)| {
        r >= height / 3 && r < 2 * height / 3
    });
    let dt = exposure_ms / SPECKLE_SUBSTEPS as f64;
    let rho = if velocity_mm_s == 0.0 {
        1.0
    } else {
        let tau_c = TAU_REF_MS_MM_S / velocity_mm_s;
        1.0 / (1.0 + dt / tau_c)
    };
    let noise_amp = (1.0 - rho * rho).sqrt();

    let mut re = Array2::from_shape_fn((height, width), |_| rng.sample::<f64, _>(StandardNormal));
    let mut im = Array2::from_shape_fn((height, width), |_| rng.sample::<f64, _>(StandardNormal));
    let mut frames = Vec::with_capacity(n_frames);
    for frame_id in 0..n_frames {
        let mut acc = Array2::<f64>::zeros((height, width));
        for _ in 0..SPECKLE_SUBSTEPS {
            for ((r, c), &in_channel) in channel.indexed_iter() {
                if in_channel && rho < 1.0 {
                    let nr: f64 = rng.sample(StandardNormal);
                    let ni: f64 = rng.sample(StandardNormal);
                    re[(r, c)] = rho * re[(r, c)] + noise_amp * nr;
                    im[(r, c)] = rho * im[(r, c)] + noise_amp * ni;
                }
                acc[(r, c)] += re[(r, c)].powi(2) + im[(r, c)].powi(2);
            }
        }
        // Mean intensity 2 per pixel; scale into display range.
        let plane = acc.mapv(|v| 0.15 * v / SPECKLE_SUBSTEPS as f64);
        frames.push(Field::from_plane(
            plane,
            frame_id as u64,
            IllumTag::new(IllumMode::Speckle, vec![8]),
        )?);
    }
    Ok(SpecklePhantom { frames, channel })
}

/// Output of the Lambertian scene generator.
pub struct LambertianPhantom {
    pub images: Vec<Field>,
    /// Ground-truth unit normals, `(h, w, 3)`.
    pub normals: Array3<f64>,
    pub height_map: Array2<f64>,
}

/// Renders a height map under every rig light with the cosine law
/// `I = albedo / pi * max(0, s . n)` plus optional Gaussian noise.
/// Normals come from forward-difference gradients so Poisson integration
/// round-trips the surface.
pub fn gen_lambertian_scene(
    height_map: &Array2<f64>,
    rig: &LightRig,
    albedo: f64,
    noise_sigma: f64,
    seed: u64,
) -> Result<LambertianPhantom> {
    if albedo <= 0.0 {
        return Err(MleError::InvalidInput("albedo must be > 0".into()));
    }
    let (h, w) = height_map.dim();
    let mut normals = Array3::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            let p = if x + 1 < w {
                height_map[(y, x + 1)] - height_map[(y, x)]
            } else {
                0.0
            };
            let q = if y + 1 < h {
                height_map[(y + 1, x)] - height_map[(y, x)]
            } else {
                0.0
            };
            let inv = 1.0 / (p * p + q * q + 1.0).sqrt();
            normals[(y, x, 0)] = -p * inv;
            normals[(y, x, 1)] = -q * inv;
            normals[(y, x, 2)] = inv;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(rig.len());
    for (i, s) in rig.directions.iter().enumerate() {
        let plane = Array2::from_shape_fn((h, w), |(y, x)| {
            let dot = s[0] * normals[(y, x, 0)] + s[1] * normals[(y, x, 1)] + s[2] * normals[(y, x, 2)];
            let clean = albedo / std::f64::consts::PI * dot.max(0.0);
            if noise_sigma > 0.0 {
                let n: f64 = rng.sample(StandardNormal);
                (clean + noise_sigma * n).max(0.0)
            } else {
                clean
            }
        });
        images.push(Field::from_plane(
            plane,
            i as u64,
            IllumTag::new(IllumMode::Directional, vec![i as u8]),
        )?);
    }
    Ok(LambertianPhantom {
        images,
        normals,
        height_map: height_map.clone(),
    })
}

/// Gaussian bump height map used by the surface phantoms.
pub fn bump_height_map(height: usize, width: usize, amplitude: f64, sigma: f64) -> Array2<f64> {
    let cy = (height as f64 - 1.0) / 2.0;
    let cx = (width as f64 - 1.0) / 2.0;
    Array2::from_shape_fn((height, width), |(y, x)| {
        let d2 = ((x as f64 - cx) / sigma).powi(2) + ((y as f64 - cy) / sigma).powi(2);
        amplitude * (-d2).exp()
    })
}

/// Forward Beer-Lambert scene: absorbance
/// `A = thb * (sto2 * eps_hbo2 + (1 - sto2) * eps_hb) + offset` per plane,
/// reflectance `R = 10^-A`, with optional Gaussian noise on reflectance.
pub fn gen_spectral_scene(
    sto2: &Array2<f64>,
    thb: &Array2<f64>,
    offset: &Array2<f64>,
    table: &ExtinctionTable,
    noise_sigma: f64,
    seed: u64,
) -> Result<SpectralCube> {
    let (h, w) = sto2.dim();
    if thb.dim() != (h, w) || offset.dim() != (h, w) {
        return Err(MleError::DimensionMismatch("spectral scene maps".into()));
    }
    if sto2.iter().any(|&s| !(0.0..=1.0).contains(&s)) {
        return Err(MleError::InvalidInput("sto2 must lie in [0, 1]".into()));
    }
    if thb.iter().chain(offset.iter()).any(|&v| v < 0.0) {
        return Err(MleError::InvalidInput(
            "thb and offset must be nonnegative".into(),
        ));
    }
    let n = table.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut planes = Array3::zeros((n, h, w));
    for p in 0..n {
        for y in 0..h {
            for x in 0..w {
                let s = sto2[(y, x)];
                let a = thb[(y, x)] * (s * table.eps_hbo2[p] + (1.0 - s) * table.eps_hb[p])
                    + offset[(y, x)];
                let mut r = 10f64.powf(-a);
                if noise_sigma > 0.0 {
                    let noise: f64 = rng.sample(StandardNormal);
                    r *= 1.0 + noise_sigma * noise;
                }
                planes[(p, y, x)] = r.clamp(1e-6, 1.0);
            }
        }
    }
    SpectralCube::new(
        planes,
        table.wavelengths_nm.clone(),
        Array2::from_elem((h, w), true),
    )
}

/// One patch of the generated color target.
pub struct MacbethPatch {
    pub name: String,
    pub rows: std::ops::Range<usize>,
    pub cols: std::ops::Range<usize>,
    pub reflectance: Vec<f64>,
}

/// Renders the 24-patch color target as a spectral cube (4 x 6 grid of
/// `patch_px` squares) with the bundled reference spectra.
pub fn gen_macbeth_cube(patch_px: usize) -> Result<(SpectralCube, Vec<MacbethPatch>)> {
    if patch_px == 0 {
        return Err(MleError::InvalidInput("patch size must be > 0".into()));
    }
    let spectra = macbeth_spectra()?;
    let (rows, cols) = (4usize, 6usize);
    let (h, w) = (rows * patch_px, cols * patch_px);
    let n = MLE_WAVELENGTHS_NM.len();
    let mut planes = Array3::zeros((n, h, w));
    let mut patches = Vec::with_capacity(spectra.len());
    for (i, (name, refl)) in spectra.into_iter().enumerate() {
        let (gr, gc) = (i / cols, i % cols);
        let row_range = gr * patch_px..(gr + 1) * patch_px;
        let col_range = gc * patch_px..(gc + 1) * patch_px;
        for p in 0..n {
            for y in row_range.clone() {
                for x in col_range.clone() {
                    planes[(p, y, x)] = refl[p];
                }
            }
        }
        patches.push(MacbethPatch {
            name,
            rows: row_range,
            cols: col_range,
            reflectance: refl,
        });
    }
    let cube = SpectralCube::new(
        planes,
        MLE_WAVELENGTHS_NM.to_vec(),
        Array2::from_elem((h, w), true),
    )?;
    Ok((cube, patches))
}

fn macbeth_spectra() -> Result<Vec<(String, Vec<f64>)>> {
    let mut rdr = csv::Reader::from_reader(MACBETH_CSV.as_bytes());
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let name = record
            .get(0)
            .ok_or_else(|| MleError::Format("empty macbeth row".into()))?
            .to_string();
        let mut refl = Vec::with_capacity(8);
        for i in 1..record.len() {
            refl.push(
                record
                    .get(i)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| MleError::Format(format!("bad macbeth row {record:?}")))?,
            );
        }
        if refl.len() != MLE_WAVELENGTHS_NM.len() {
            return Err(MleError::Format("macbeth row length".into()));
        }
        out.push((name, refl));
    }
    if out.len() != 24 {
        return Err(MleError::Format("macbeth chart must have 24 patches".into()));
    }
    Ok(out)
}
