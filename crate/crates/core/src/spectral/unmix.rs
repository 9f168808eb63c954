use ndarray::{Array2, Array3};
use rayon::prelude::*;

use crate::error::{MleError, Result};
use crate::imgcore::SpectralCube;
use crate::spectral::{ExtinctionTable, THB_FLOOR};

/// Per-pixel chromophore fits: effective `c * L` products for HbO2 and Hb
/// (dimensionless absorbance units), the free offset, and the derived
/// oxygen saturation.
#[derive(Debug, Clone)]
pub struct ChromophoreMaps {
    pub chbo2_l: Array2<f64>,
    pub chb_l: Array2<f64>,
    pub offset: Array2<f64>,
    pub sto2: Array2<f64>,
    pub mask: Array2<bool>,
}

/// -log10(R) per plane; masked pixels propagate with value 0.
pub fn absorbance(cube: &SpectralCube) -> Result<Array3<f64>> {
    let (n, h, w) = cube.planes().dim();
    let mut out = Array3::zeros((n, h, w));
    for p in 0..n {
        for y in 0..h {
            for x in 0..w {
                if cube.mask[(y, x)] {
                    let r = cube.planes()[(p, y, x)];
                    if !(r > 0.0 && r <= 1.0) {
                        return Err(MleError::InvalidInput(format!(
                            "reflectance out of (0, 1] at plane {p} pixel ({y}, {x}): {r}"
                        )));
                    }
                    out[(p, y, x)] = -r.log10();
                }
            }
        }
    }
    Ok(out)
}

/// Exact solver for the 3-variable per-pixel problem
/// `min || A - [eps_hbo2, eps_hb, 1] x ||^2` with `x1, x2 >= 0`, `x3` free.
///
/// With only two sign-constrained variables the active-set iteration reduces
/// to checking the four possible constraint sets; the first candidate that is
/// both feasible and KKT-consistent is the global optimum of the convex
/// program.
pub struct NnlsSolver {
    eps_hbo2: Vec<f64>,
    eps_hb: Vec<f64>,
    n: usize,
}

impl NnlsSolver {
    pub fn new(table: &ExtinctionTable) -> Result<Self> {
        let n = table.len();
        if n < 3 {
            return Err(MleError::Configuration(
                "unmixing needs at least 3 wavelengths".into(),
            ));
        }
        let solver = Self {
            eps_hbo2: table.eps_hbo2.clone(),
            eps_hb: table.eps_hb.clone(),
            n,
        };
        // The design matrix [eps_hbo2, eps_hb, 1] must have rank 3; check the
        // condition of the normal matrix once at setup.
        let g = solver.gram();
        if det3(&g).abs() <= 1e-12 * norm3(&g) {
            return Err(MleError::Configuration(
                "rank-deficient design matrix: extinction spectra are collinear".into(),
            ));
        }
        Ok(solver)
    }

    fn gram(&self) -> [[f64; 3]; 3] {
        let mut g = [[0.0f64; 3]; 3];
        for i in 0..self.n {
            let d = [self.eps_hbo2[i], self.eps_hb[i], 1.0];
            for a in 0..3 {
                for b in 0..3 {
                    g[a][b] += d[a] * d[b];
                }
            }
        }
        g
    }

    /// Solves one pixel, returning `(x1, x2, offset)`.
    pub fn solve(&self, a: &[f64]) -> (f64, f64, f64) {
        debug_assert_eq!(a.len(), self.n);
        let mut dta = [0.0f64; 3];
        for i in 0..self.n {
            dta[0] += self.eps_hbo2[i] * a[i];
            dta[1] += self.eps_hb[i] * a[i];
            dta[2] += a[i];
        }
        let g = self.gram();

        // Candidate 1: both hemoglobin terms free.
        if let Some(x) = solve3(&g, &dta) {
            if x[0] >= 0.0 && x[1] >= 0.0 {
                return (x[0], x[1], x[2]);
            }
        }
        // Candidate 2/3: one term clamped to zero.
        for clamped in 0..2 {
            let free = 1 - clamped;
            let g2 = [
                [g[free][free], g[free][2]],
                [g[2][free], g[2][2]],
            ];
            let b2 = [dta[free], dta[2]];
            if let Some(x2) = solve2(&g2, &b2) {
                if x2[0] >= 0.0 {
                    let mut x = [0.0f64; 3];
                    x[free] = x2[0];
                    x[2] = x2[1];
                    // KKT: gradient w.r.t. the clamped variable must be >= 0,
                    // i.e. the residual correlates non-positively with its
                    // column.
                    let grad = g[clamped][0] * x[0] + g[clamped][1] * x[1] + g[clamped][2] * x[2]
                        - dta[clamped];
                    if grad >= -1e-9 * norm3(&g) {
                        return (x[0], x[1], x[2]);
                    }
                }
            }
        }
        // Candidate 4: both clamped; offset is the mean absorbance.
        let offset = dta[2] / self.n as f64;
        (0.0, 0.0, offset)
    }
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn norm3(m: &[[f64; 3]; 3]) -> f64 {
    m.iter().flatten().fold(0.0f64, |a, &v| a.max(v.abs()))
}

fn solve3(m: &[[f64; 3]; 3], b: &[f64; 3]) -> Option<[f64; 3]> {
    let d = det3(m);
    if d.abs() <= 1e-300 {
        return None;
    }
    let mut out = [0.0f64; 3];
    for col in 0..3 {
        let mut mm = *m;
        for r in 0..3 {
            mm[r][col] = b[r];
        }
        out[col] = det3(&mm) / d;
    }
    Some(out)
}

fn solve2(m: &[[f64; 2]; 2], b: &[f64; 2]) -> Option<[f64; 2]> {
    let d = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if d.abs() <= 1e-300 {
        return None;
    }
    Some([
        (b[0] * m[1][1] - b[1] * m[0][1]) / d,
        (m[0][0] * b[1] - m[1][0] * b[0]) / d,
    ])
}

/// Per-pixel non-negative least squares unmixing of absorbance planes.
///
/// Pixels with total hemoglobin below [`THB_FLOOR`] have undefined oxygen
/// saturation and are masked out of the result.
pub fn unmix(
    absorbance_planes: &Array3<f64>,
    mask: &Array2<bool>,
    table: &ExtinctionTable,
) -> Result<ChromophoreMaps> {
    let (n, h, w) = absorbance_planes.dim();
    if n != table.len() {
        return Err(MleError::DimensionMismatch(format!(
            "{n} absorbance planes but {} extinction entries",
            table.len()
        )));
    }
    let solver = NnlsSolver::new(table)?;
    let mut chbo2_l = Array2::zeros((h, w));
    let mut chb_l = Array2::zeros((h, w));
    let mut offset = Array2::zeros((h, w));
    let mut sto2 = Array2::zeros((h, w));
    let mut out_mask = mask.clone();

    // Rows are independent; solve them in parallel and write back serially.
    let rows: Vec<Vec<(f64, f64, f64)>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut spectrum = vec![0.0f64; n];
            (0..w)
                .map(|x| {
                    if !mask[(y, x)] {
                        return (0.0, 0.0, 0.0);
                    }
                    for p in 0..n {
                        spectrum[p] = absorbance_planes[(p, y, x)];
                    }
                    solver.solve(&spectrum)
                })
                .collect()
        })
        .collect();
    for (y, row) in rows.into_iter().enumerate() {
        for (x, (x1, x2, o)) in row.into_iter().enumerate() {
            if !mask[(y, x)] {
                continue;
            }
            chbo2_l[(y, x)] = x1;
            chb_l[(y, x)] = x2;
            offset[(y, x)] = o;
            let thb = x1 + x2;
            if thb < THB_FLOOR {
                out_mask[(y, x)] = false;
            } else {
                sto2[(y, x)] = x1 / thb;
            }
        }
    }
    Ok(ChromophoreMaps {
        chbo2_l,
        chb_l,
        offset,
        sto2,
        mask: out_mask,
    })
}
