//! Quaternion and 6D rotation algebra, plus the calibration transforms
//! applied to raw device orientations.
//!
//! Conventions used throughout the crate:
//! - global frame is right-handed with +Y up and +Z body-forward at calibration
//!   (so +X points to the body's left);
//! - quaternions are Hamilton, scalar-first, and canonicalized to `w >= 0`;
//! - the 6D representation stores the first two columns of the rotation
//!   matrix, column-major: `(a1, a2, a3)` is column 0, `(b1, b2, b3)` column 1.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unit quaternion `w + xi + yj + zk`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitQuaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for UnitQuaternion {
    fn default() -> Self {
        Self::identity()
    }
}

impl UnitQuaternion {
    pub const fn identity() -> Self {
        Self {
            w: 1.0,
            x: 0.0,
            y: 0.0,
            z: 0.0,
        }
    }

    /// Normalizes `(w, x, y, z)`; errors on a zero-norm input.
    pub fn new_normalize(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !(n > 1e-12) || !n.is_finite() {
            return Err(Error::NonUnitQuaternion { norm: n });
        }
        Ok(Self {
            w: w / n,
            x: x / n,
            y: y / n,
            z: z / n,
        })
    }

    /// Rotation of `angle` radians about `axis` (need not be normalized).
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::identity();
        }
        let (s, c) = (0.5 * angle).sin_cos();
        let a = axis / n;
        Self {
            w: c,
            x: a.x * s,
            y: a.y * s,
            z: a.z * s,
        }
    }

    /// Exponential map of a rotation vector (axis times angle).
    pub fn from_rotation_vector(r: Vector3<f64>) -> Self {
        Self::from_axis_angle(r, r.norm())
    }

    /// Rotation about the global up axis.
    pub fn from_yaw(angle: f64) -> Self {
        Self::from_axis_angle(Vector3::y(), angle)
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn renormalize(self) -> Self {
        let n = self.norm();
        Self {
            w: self.w / n,
            x: self.x / n,
            y: self.y / n,
            z: self.z / n,
        }
    }

    /// Picks the representative with `w >= 0`.
    pub fn canonicalize(self) -> Self {
        if self.w < 0.0 {
            Self {
                w: -self.w,
                x: -self.x,
                y: -self.y,
                z: -self.z,
            }
        } else {
            self
        }
    }

    pub fn vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    /// Rotation matrix `R` such that `R v == quat_rotate(self, v)`.
    pub fn to_matrix(&self) -> Matrix3<f64> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    /// Converts an orthonormal rotation matrix (Shepperd's method), canonicalized.
    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        let trace = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
        let q = if trace > 0.0 {
            let s = 2.0 * (trace + 1.0).sqrt();
            Self {
                w: 0.25 * s,
                x: (m[(2, 1)] - m[(1, 2)]) / s,
                y: (m[(0, 2)] - m[(2, 0)]) / s,
                z: (m[(1, 0)] - m[(0, 1)]) / s,
            }
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = 2.0 * (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt();
            Self {
                w: (m[(2, 1)] - m[(1, 2)]) / s,
                x: 0.25 * s,
                y: (m[(0, 1)] + m[(1, 0)]) / s,
                z: (m[(0, 2)] + m[(2, 0)]) / s,
            }
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = 2.0 * (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt();
            Self {
                w: (m[(0, 2)] - m[(2, 0)]) / s,
                x: (m[(0, 1)] + m[(1, 0)]) / s,
                y: 0.25 * s,
                z: (m[(1, 2)] + m[(2, 1)]) / s,
            }
        } else {
            let s = 2.0 * (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt();
            Self {
                w: (m[(1, 0)] - m[(0, 1)]) / s,
                x: (m[(0, 2)] + m[(2, 0)]) / s,
                y: (m[(1, 2)] + m[(2, 1)]) / s,
                z: 0.25 * s,
            }
        };
        q.renormalize().canonicalize()
    }

    /// True when `self` and `other` describe the same rotation within `tol`.
    pub fn same_rotation(&self, other: &Self, tol: f64) -> bool {
        let d = self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z;
        1.0 - d.abs() <= tol
    }
}

impl std::ops::Mul for UnitQuaternion {
    type Output = UnitQuaternion;

    fn mul(self, rhs: Self) -> Self {
        quat_mul(self, rhs)
    }
}

/// Hamilton product `p ⊗ q`, renormalized.
pub fn quat_mul(p: UnitQuaternion, q: UnitQuaternion) -> UnitQuaternion {
    UnitQuaternion {
        w: p.w * q.w - p.x * q.x - p.y * q.y - p.z * q.z,
        x: p.w * q.x + p.x * q.w + p.y * q.z - p.z * q.y,
        y: p.w * q.y - p.x * q.z + p.y * q.w + p.z * q.x,
        z: p.w * q.z + p.x * q.y - p.y * q.x + p.z * q.w,
    }
    .renormalize()
}

pub fn quat_inverse(q: UnitQuaternion) -> UnitQuaternion {
    UnitQuaternion {
        w: q.w,
        x: -q.x,
        y: -q.y,
        z: -q.z,
    }
}

/// Rotates `v` by `q` (`q v q*`).
pub fn quat_rotate(q: UnitQuaternion, v: Vector3<f64>) -> Vector3<f64> {
    // v' = v + 2w (u × v) + 2 u × (u × v)
    let u = q.vector();
    let t = 2.0 * u.cross(&v);
    v + q.w * t + u.cross(&t)
}

/// First two columns of a rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SixD {
    pub a: Vector3<f64>,
    pub b: Vector3<f64>,
}

impl SixD {
    pub fn identity() -> Self {
        Self {
            a: Vector3::x(),
            b: Vector3::y(),
        }
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            a: Vector3::new(v[0], v[1], v[2]),
            b: Vector3::new(v[3], v[4], v[5]),
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.a.x, self.a.y, self.a.z, self.b.x, self.b.y, self.b.z]
    }

    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        Self {
            a: m.column(0).into_owned(),
            b: m.column(1).into_owned(),
        }
    }

    /// Gram–Schmidt reconstruction of the full rotation matrix.
    pub fn to_matrix(&self) -> Result<Matrix3<f64>> {
        let na = self.a.norm();
        if !(na > 1e-8) {
            return Err(Error::DegenerateSixD);
        }
        let c0 = self.a / na;
        let b_perp = self.b - c0 * c0.dot(&self.b);
        let nb = b_perp.norm();
        // Relative test so that scaled inputs behave the same.
        if !(nb > 1e-8 * self.b.norm().max(1e-300)) || !(nb > 1e-12) {
            return Err(Error::DegenerateSixD);
        }
        let c1 = b_perp / nb;
        let c2 = c0.cross(&c1);
        Ok(Matrix3::from_columns(&[c0, c1, c2]))
    }

    /// Orthonormalizes the two columns (a no-op on already-orthonormal input).
    pub fn orthonormalized(&self) -> Result<Self> {
        self.to_matrix().map(|m| Self::from_matrix(&m))
    }

    /// Applies a global rotation: `R_q · [a b]`.
    pub fn rotated(&self, q: UnitQuaternion) -> Self {
        Self {
            a: quat_rotate(q, self.a),
            b: quat_rotate(q, self.b),
        }
    }
}

pub fn quat_to_sixd(q: UnitQuaternion) -> SixD {
    SixD::from_matrix(&q.to_matrix())
}

pub fn sixd_to_quat(d: &SixD) -> Result<UnitQuaternion> {
    d.to_matrix().map(|m| UnitQuaternion::from_matrix(&m))
}

/// Body heading as `(sin ψ, cos ψ)` of the yaw about +Y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YawSinCos {
    pub s: f64,
    pub c: f64,
}

impl Default for YawSinCos {
    fn default() -> Self {
        Self { s: 0.0, c: 1.0 }
    }
}

impl YawSinCos {
    pub fn from_angle(psi: f64) -> Self {
        let (s, c) = psi.sin_cos();
        Self { s, c }
    }

    /// Yaw angle in `(-π, π]`.
    pub fn angle(&self) -> f64 {
        self.s.atan2(self.c)
    }

    /// Projects an arbitrary `(s, c)` pair onto the unit circle; falls back to
    /// zero yaw when the pair is too close to the origin.
    pub fn normalized(&self) -> Self {
        let n = (self.s * self.s + self.c * self.c).sqrt();
        if n > 1e-12 {
            Self {
                s: self.s / n,
                c: self.c / n,
            }
        } else {
            Self::default()
        }
    }

    /// Yaw addition by angle-sum identities.
    pub fn rotated(&self, delta: f64) -> Self {
        let (sd, cd) = delta.sin_cos();
        Self {
            s: self.s * cd + self.c * sd,
            c: self.c * cd - self.s * sd,
        }
    }

    /// Rotation matrix about +Y by this yaw.
    pub fn to_matrix(&self) -> Matrix3<f64> {
        let (s, c) = (self.s, self.c);
        Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
    }
}

/// Expresses `current` relative to the orientation captured at start-up.
pub fn calibrate(initial: UnitQuaternion, current: UnitQuaternion) -> UnitQuaternion {
    quat_mul(quat_inverse(initial), current)
}

/// Yaw about +Y, taken from the twist part of a swing–twist split of `q`.
///
/// The twist is undefined when `q` is (close to) a half-turn about a
/// horizontal axis; that case is reported rather than guessed.
pub fn up_axis_yaw(q: UnitQuaternion) -> Result<YawSinCos> {
    let n = (q.w * q.w + q.y * q.y).sqrt();
    if n < 1e-6 {
        return Err(Error::GimbalDegenerate);
    }
    let psi = 2.0 * q.y.atan2(q.w);
    Ok(YawSinCos::from_angle(psi))
}
