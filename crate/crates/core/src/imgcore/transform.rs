use serde::{Deserialize, Serialize};

use crate::error::{MleError, Result};

const SINGULAR_EPS: f64 = 1e-8;

/// 2x3 affine transform mapping moving -> fixed pixel coordinates
/// (column vectors, `x` along width, `y` along height).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    /// Row-major `[[a, b, tx], [c, d, ty]]`.
    pub m: [[f64; 3]; 2],
}

impl AffineTransform {
    pub fn new(m: [[f64; 3]; 2]) -> Result<Self> {
        let t = Self { m };
        if t.det().abs() <= SINGULAR_EPS {
            return Err(MleError::InvalidInput(
                "affine transform linear part is singular".into(),
            ));
        }
        Ok(t)
    }

    pub fn identity() -> Self {
        Self {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self {
            m: [[1.0, 0.0, tx], [0.0, 1.0, ty]],
        }
    }

    /// Rotation by `angle_rad` about `(cx, cy)` plus a translation.
    pub fn rotation_about(angle_rad: f64, cx: f64, cy: f64, tx: f64, ty: f64) -> Self {
        let (s, c) = angle_rad.sin_cos();
        // p' = R (p - c) + c + t
        Self {
            m: [
                [c, -s, cx - c * cx + s * cy + tx],
                [s, c, cy - s * cx - c * cy + ty],
            ],
        }
    }

    pub fn det(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn is_singular(&self) -> bool {
        self.det().abs() <= SINGULAR_EPS
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.m[0][0] * x + self.m[0][1] * y + self.m[0][2],
            self.m[1][0] * x + self.m[1][1] * y + self.m[1][2],
        )
    }

    pub fn inverse(&self) -> Result<Self> {
        let d = self.det();
        if d.abs() <= SINGULAR_EPS {
            return Err(MleError::InvalidInput("cannot invert singular transform".into()));
        }
        let (a, b, tx) = (self.m[0][0], self.m[0][1], self.m[0][2]);
        let (c, dd, ty) = (self.m[1][0], self.m[1][1], self.m[1][2]);
        let ia = dd / d;
        let ib = -b / d;
        let ic = -c / d;
        let id = a / d;
        Ok(Self {
            m: [
                [ia, ib, -(ia * tx + ib * ty)],
                [ic, id, -(ic * tx + id * ty)],
            ],
        })
    }

    /// self ∘ other: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        let mut m = [[0.0; 3]; 2];
        for r in 0..2 {
            for c in 0..2 {
                m[r][c] = self.m[r][0] * other.m[0][c] + self.m[r][1] * other.m[1][c];
            }
            m[r][2] = self.m[r][0] * other.m[0][2] + self.m[r][1] * other.m[1][2] + self.m[r][2];
        }
        Self { m }
    }

    /// Max absolute deviation from the identity over the six parameters.
    pub fn deviation_from_identity(&self) -> f64 {
        let id = Self::identity();
        let mut d: f64 = 0.0;
        for r in 0..2 {
            for c in 0..3 {
                d = d.max((self.m[r][c] - id.m[r][c]).abs());
            }
        }
        d
    }
}
