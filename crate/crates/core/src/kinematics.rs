//! Forward kinematics of a two-segment arm hanging from a yawed torso.
//!
//! At rest (identity segment rotations) each limb points straight down (−Y)
//! in the body frame. Segment rotations are body-frame; the body heading
//! rotates the whole arm, shoulder offset included, about +Y.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotmath::{SixD, YawSinCos};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArmConfig {
    /// Upper-arm length in meters.
    pub upper_len: f64,
    /// Lower-arm (forearm) length in meters.
    pub lower_len: f64,
    /// Shoulder position relative to the hip origin, body frame, meters.
    pub shoulder_offset: Vector3<f64>,
}

impl Default for ArmConfig {
    fn default() -> Self {
        Self {
            upper_len: 0.30,
            lower_len: 0.25,
            // Left shoulder: +X is the body's left.
            shoulder_offset: Vector3::new(0.2, 0.5, 0.0),
        }
    }
}

impl ArmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.upper_len > 0.0 && self.lower_len > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "arm lengths must be positive (upper {}, lower {})",
                self.upper_len, self.lower_len
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmPose {
    pub shoulder: Vector3<f64>,
    pub elbow: Vector3<f64>,
    pub wrist: Vector3<f64>,
}

/// Elbow and wrist positions in the calibrated global frame.
pub fn forward_kinematics(
    upper: &SixD,
    lower: &SixD,
    heading: YawSinCos,
    cfg: &ArmConfig,
) -> Result<ArmPose> {
    let r_u = upper.to_matrix()?;
    let r_l = lower.to_matrix()?;
    Ok(forward_kinematics_matrices(
        &r_u,
        &r_l,
        &heading.to_matrix(),
        cfg,
    ))
}

/// Same as [`forward_kinematics`] with already-orthonormal matrices.
pub fn forward_kinematics_matrices(
    upper: &Matrix3<f64>,
    lower: &Matrix3<f64>,
    yaw: &Matrix3<f64>,
    cfg: &ArmConfig,
) -> ArmPose {
    let down = -Vector3::y();
    let shoulder = yaw * cfg.shoulder_offset;
    let elbow = shoulder + yaw * (upper * (down * cfg.upper_len));
    let wrist = elbow + yaw * (lower * (down * cfg.lower_len));
    ArmPose {
        shoulder,
        elbow,
        wrist,
    }
}
