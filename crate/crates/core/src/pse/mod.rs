//! Photometric stereo: Lambertian per-pixel normal and albedo estimation
//! from directionally illuminated fields, specular inpainting, normal-map
//! high-pass filtering, Poisson height integration, and Phong relighting.

mod poisson;

pub use poisson::solve_poisson_neumann;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{MleError, Result};
use crate::imgcore::Field;

/// Intensity at or above which a pixel counts as a specular highlight.
pub const SPECULAR_THRESHOLD: f64 = 0.98;
/// Floor on the normal z-component when forming integration gradients.
pub const NZ_FLOOR: f64 = 1e-3;

/// Calibrated directional light sources in camera coordinates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LightRig {
    pub directions: Vec<[f64; 3]>,
    pub labels: Vec<String>,
}

impl LightRig {
    pub fn new(directions: Vec<[f64; 3]>, labels: Vec<String>) -> Result<Self> {
        if directions.len() < 3 || directions.len() != labels.len() {
            return Err(MleError::Configuration(
                "rig needs at least 3 labeled directions".into(),
            ));
        }
        for d in &directions {
            let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            if (n - 1.0).abs() > 1e-9 {
                return Err(MleError::Configuration(format!(
                    "light direction {d:?} is not unit length"
                )));
            }
        }
        let rig = Self { directions, labels };
        // Gram determinant of S^T S vanishes iff the directions span < 3 dims.
        let g = rig.gram();
        if det3(&g).abs() <= 1e-9 {
            return Err(MleError::Configuration(
                "light directions are coplanar: rank-3 rig required".into(),
            ));
        }
        Ok(rig)
    }

    /// Three point sources around the lens: upper right, upper left,
    /// lower left, each tilted toward the optical axis.
    pub fn default_rig() -> Self {
        let raw: [[f64; 3]; 3] = [[1.0, 1.0, 2.0], [-1.0, 1.0, 2.0], [-1.0, -1.0, 2.0]];
        let directions = raw
            .iter()
            .map(|d| {
                let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                [d[0] / n, d[1] / n, d[2] / n]
            })
            .collect();
        Self::new(
            directions,
            vec![
                "upper_right".into(),
                "upper_left".into(),
                "lower_left".into(),
            ],
        )
        .expect("default rig is valid")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let raw: LightRig = serde_json::from_str(text)?;
        Self::new(raw.directions, raw.labels)
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    fn gram(&self) -> [[f64; 3]; 3] {
        let mut g = [[0.0f64; 3]; 3];
        for d in &self.directions {
            for a in 0..3 {
                for b in 0..3 {
                    g[a][b] += d[a] * d[b];
                }
            }
        }
        g
    }
}

/// Per-pixel surface description recovered by photometric stereo.
#[derive(Debug, Clone)]
pub struct SurfaceField {
    pub albedo: Array2<f64>,
    /// Unit normals, `(h, w, 3)` with components (x, y, z).
    pub normals: Array3<f64>,
    pub highpassed: bool,
    pub mask: Array2<bool>,
}

/// Replaces pixels at or above `threshold` in any input image by iterative
/// neighbor diffusion until the largest update falls below 1e-4. Returns the
/// filled images and the shared specular mask (true = was specular).
pub fn inpaint_speculars(fields: &[Field], threshold: f64) -> Result<(Vec<Field>, Array2<bool>)> {
    if fields.is_empty() {
        return Err(MleError::InvalidInput("no fields to inpaint".into()));
    }
    let (h, w) = (fields[0].height(), fields[0].width());
    let mut specular = Array2::from_elem((h, w), false);
    for f in fields {
        if f.height() != h || f.width() != w || f.channels() != 1 {
            return Err(MleError::DimensionMismatch(
                "inpaint inputs must be same-size single-channel fields".into(),
            ));
        }
        for ((r, c), v) in f.plane(0).indexed_iter() {
            if *v >= threshold {
                specular[(r, c)] = true;
            }
        }
    }
    let mut out = Vec::with_capacity(fields.len());
    for f in fields {
        let mut plane = f.plane(0);
        // Seed highlights with the mean of non-specular pixels.
        let mut sum = 0.0;
        let mut n = 0.0;
        for ((r, c), v) in plane.indexed_iter() {
            if !specular[(r, c)] {
                sum += v;
                n += 1.0;
            }
        }
        let seed = if n > 0.0 { sum / n } else { 0.0 };
        for ((r, c), v) in plane.indexed_iter_mut() {
            if specular[(r, c)] {
                *v = seed;
            }
        }
        for _ in 0..10_000 {
            let mut delta = 0.0f64;
            let prev = plane.clone();
            for ((r, c), is_spec) in specular.indexed_iter() {
                if !is_spec {
                    continue;
                }
                let up = prev[(r.saturating_sub(1), c)];
                let dn = prev[((r + 1).min(h - 1), c)];
                let lf = prev[(r, c.saturating_sub(1))];
                let rt = prev[(r, (c + 1).min(w - 1))];
                let v = 0.25 * (up + dn + lf + rt);
                delta = delta.max((v - prev[(r, c)]).abs());
                plane[(r, c)] = v;
            }
            if delta < 1e-4 {
                break;
            }
        }
        let (hh, ww) = plane.dim();
        out.push(f.with_data(plane.into_shape((hh, ww, 1)).expect("shape")));
    }
    Ok((out, specular))
}

/// Per-pixel least-squares solve of the Lambertian model `I_n = s_n . v`;
/// albedo is `pi * |v|` and the normal is `v / |v|`. Pixels with `|v|` below
/// 1e-6 or masked in any input are masked out.
pub fn solve_normals(fields: &[Field], rig: &LightRig) -> Result<SurfaceField> {
    if fields.len() != rig.len() {
        return Err(MleError::DimensionMismatch(format!(
            "{} fields but rig has {} lights",
            fields.len(),
            rig.len()
        )));
    }
    let (h, w) = (fields[0].height(), fields[0].width());
    let planes: Vec<Array2<f64>> = fields.iter().map(|f| f.plane(0)).collect();
    for f in fields {
        if f.height() != h || f.width() != w || f.channels() != 1 {
            return Err(MleError::DimensionMismatch(
                "photometric stereo inputs must be same-size single-channel fields".into(),
            ));
        }
    }
    let g = rig.gram();
    let ginv = inv3(&g).ok_or_else(|| {
        MleError::Configuration("light directions are coplanar: rank-3 rig required".into())
    })?;

    let mut albedo = Array2::zeros((h, w));
    let mut normals = Array3::zeros((h, w, 3));
    let mut mask = Array2::from_elem((h, w), true);
    for y in 0..h {
        for x in 0..w {
            if fields.iter().any(|f| !f.mask[(y, x)]) {
                mask[(y, x)] = false;
                continue;
            }
            let mut stb = [0.0f64; 3];
            for (i, d) in rig.directions.iter().enumerate() {
                let intensity = planes[i][(y, x)];
                for a in 0..3 {
                    stb[a] += d[a] * intensity;
                }
            }
            let mut v = [0.0f64; 3];
            for a in 0..3 {
                for b in 0..3 {
                    v[a] += ginv[a][b] * stb[b];
                }
            }
            let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if norm < 1e-6 {
                mask[(y, x)] = false;
                continue;
            }
            albedo[(y, x)] = std::f64::consts::PI * norm;
            for a in 0..3 {
                normals[(y, x, a)] = v[a] / norm;
            }
        }
    }
    Ok(SurfaceField {
        albedo,
        normals,
        highpassed: false,
        mask,
    })
}

/// Removes low-spatial-frequency structure from the normal map: the x and y
/// components are Gaussian high-passed (replicate borders) and z is rebuilt
/// from the unit-length constraint with z >= 0, so the output stays a valid
/// normal field.
pub fn highpass_normals(sf: &SurfaceField, sigma: f64) -> SurfaceField {
    let (h, w, _) = sf.normals.dim();
    let size = 2 * (3.0 * sigma).ceil() as usize + 1;
    let nx = plane_of(&sf.normals, 0);
    let ny = plane_of(&sf.normals, 1);
    let lx = crate::imgcore::gaussian_smooth_plane(&nx, size, sigma);
    let ly = crate::imgcore::gaussian_smooth_plane(&ny, size, sigma);
    let mut normals = Array3::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            let mut hx = nx[(y, x)] - lx[(y, x)];
            let mut hy = ny[(y, x)] - ly[(y, x)];
            let mag2 = hx * hx + hy * hy;
            let hz = if mag2 >= 1.0 {
                let inv = 1.0 / mag2.sqrt();
                hx *= inv;
                hy *= inv;
                0.0
            } else {
                (1.0 - mag2).sqrt()
            };
            normals[(y, x, 0)] = hx;
            normals[(y, x, 1)] = hy;
            normals[(y, x, 2)] = hz;
        }
    }
    SurfaceField {
        albedo: sf.albedo.clone(),
        normals,
        highpassed: true,
        mask: sf.mask.clone(),
    }
}

/// Height map from `integrate_normals`, zero-mean and max-|h| normalized.
#[derive(Debug, Clone)]
pub struct HeightMap {
    pub height: Array2<f64>,
    /// Pixels whose normal z-component was clamped at [`NZ_FLOOR`].
    pub clamped: Array2<bool>,
}

/// Integrates normal-map gradients `p = -nx/nz`, `q = -ny/nz` by solving the
/// Poisson equation with Neumann boundaries, then removes the mean and
/// scales so `max |h| = 1`.
pub fn integrate_normals(sf: &SurfaceField) -> Result<HeightMap> {
    if !sf.highpassed {
        return Err(MleError::InvalidInput(
            "integrate_normals expects a high-passed normal field".into(),
        ));
    }
    let (h, w, _) = sf.normals.dim();
    let mut p = Array2::zeros((h, w));
    let mut q = Array2::zeros((h, w));
    let mut clamped = Array2::from_elem((h, w), false);
    for y in 0..h {
        for x in 0..w {
            let nz = sf.normals[(y, x, 2)];
            let z = if nz < NZ_FLOOR {
                clamped[(y, x)] = true;
                NZ_FLOOR
            } else {
                nz
            };
            p[(y, x)] = -sf.normals[(y, x, 0)] / z;
            q[(y, x)] = -sf.normals[(y, x, 1)] / z;
        }
    }
    // Forward-difference convention: the last column/row carry no gradient.
    for y in 0..h {
        p[(y, w - 1)] = 0.0;
    }
    for x in 0..w {
        q[(h - 1, x)] = 0.0;
    }
    let mut div = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let dpx = p[(y, x)] - if x > 0 { p[(y, x - 1)] } else { 0.0 };
            let dqy = q[(y, x)] - if y > 0 { q[(y - 1, x)] } else { 0.0 };
            div[(y, x)] = dpx + dqy;
        }
    }
    let mut height = solve_poisson_neumann(&div);
    let mean = height.sum() / height.len() as f64;
    height.mapv_inplace(|v| v - mean);
    let max = height.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    if max > 1e-12 {
        height.mapv_inplace(|v| v / max);
    }
    Ok(HeightMap { height, clamped })
}

/// Phong shading parameters; all weights in [0, 1]-ish display units.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhongParams {
    pub ambient: f64,
    pub diffuse: f64,
    pub specular: f64,
    pub shininess: f64,
}

impl Default for PhongParams {
    fn default() -> Self {
        Self {
            ambient: 0.15,
            diffuse: 0.7,
            specular: 0.25,
            shininess: 24.0,
        }
    }
}

/// Relights a height map from a virtual directional source. The optional RGB
/// overlay modulates the shading with weight `alpha` (0 = pure shading).
pub fn render_relit(
    height: &Array2<f64>,
    light: [f64; 3],
    params: &PhongParams,
    overlay: Option<(&Array3<f64>, f64)>,
) -> Result<Array3<f64>> {
    let (h, w) = height.dim();
    let ln = (light[0] * light[0] + light[1] * light[1] + light[2] * light[2]).sqrt();
    if ln < 1e-12 {
        return Err(MleError::InvalidInput("zero light direction".into()));
    }
    let l = [light[0] / ln, light[1] / ln, light[2] / ln];
    if let Some((ov, _)) = overlay {
        if ov.dim() != (h, w, 3) {
            return Err(MleError::DimensionMismatch("overlay dims".into()));
        }
    }
    let mut out = Array3::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            // Central-difference surface normal.
            let xp = (x + 1).min(w - 1);
            let xm = x.saturating_sub(1);
            let yp = (y + 1).min(h - 1);
            let ym = y.saturating_sub(1);
            let gx = (height[(y, xp)] - height[(y, xm)]) / (xp - xm).max(1) as f64;
            let gy = (height[(yp, x)] - height[(ym, x)]) / (yp - ym).max(1) as f64;
            let inv = 1.0 / (gx * gx + gy * gy + 1.0).sqrt();
            let n = [-gx * inv, -gy * inv, inv];
            let ndl = (n[0] * l[0] + n[1] * l[1] + n[2] * l[2]).max(0.0);
            // Reflection of l about n; viewer on +z.
            let r = [
                2.0 * ndl * n[0] - l[0],
                2.0 * ndl * n[1] - l[1],
                2.0 * ndl * n[2] - l[2],
            ];
            let spec = if ndl > 0.0 {
                r[2].max(0.0).powf(params.shininess)
            } else {
                0.0
            };
            let shade =
                (params.ambient + params.diffuse * ndl + params.specular * spec).clamp(0.0, 1.0);
            for c in 0..3 {
                let tint = match overlay {
                    Some((ov, alpha)) => (1.0 - alpha) + alpha * ov[(y, x, c)],
                    None => 1.0,
                };
                out[(y, x, c)] = shade * tint;
            }
        }
    }
    Ok(out)
}

/// Normal components packed into RGB bytes: `byte = round(127.5 * (c + 1))`.
pub fn normals_to_rgb(normals: &Array3<f64>) -> Array3<u8> {
    normals.mapv(|c| (127.5 * (c + 1.0)).round().clamp(0.0, 255.0) as u8)
}

fn plane_of(a: &Array3<f64>, c: usize) -> Array2<f64> {
    a.index_axis(ndarray::Axis(2), c).to_owned()
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn inv3(m: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let d = det3(m);
    if d.abs() <= 1e-12 {
        return None;
    }
    let c = |a: usize, b: usize| {
        let r = [(a + 1) % 3, (a + 2) % 3];
        let s = [(b + 1) % 3, (b + 2) % 3];
        m[r[0]][s[0]] * m[r[1]][s[1]] - m[r[0]][s[1]] * m[r[1]][s[0]]
    };
    let mut out = [[0.0f64; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            out[a][b] = c(b, a) / d;
        }
    }
    Some(out)
}
