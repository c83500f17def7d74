//! Observation and state layouts, trajectories, yaw augmentation, synthetic
//! motion generation and the CSV dataset format.

mod assemble;
mod augment;
mod csvio;
pub mod synth;

pub use assemble::{
    assemble_observation, Assembled, Assembler, AssemblyStats, CalibrationState, STALE_AFTER,
};
pub use augment::{augment_sweep, augment_yaw};
pub use csvio::{load_dataset, save_dataset, CSV_HEADER};
pub use synth::{
    synthesize, synthesize_dataset, DatasetConfig, MotionKind, SensorReading, SynthConfig,
    SyntheticDataset, SyntheticTrajectory,
};

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotmath::{SixD, YawSinCos};

/// Length of the raw observation vector.
pub const OBS_DIM: usize = 22;
/// Length of the pose state (and of the learned observation).
pub const STATE_DIM: usize = 14;

/// Raw device observation, all channels calibrated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawObservation {
    /// Seconds since the previous observation.
    pub dt: f64,
    /// Calibrated watch orientation.
    pub theta_sw: SixD,
    /// Linear acceleration integrated over the interval (m/s).
    pub v: Vector3<f64>,
    /// Mean linear acceleration (m/s²), watch frame.
    pub alpha: Vector3<f64>,
    /// Mean gravity (m/s²), watch frame.
    pub gamma: Vector3<f64>,
    /// Mean angular rate (rad/s), watch frame.
    pub phi: Vector3<f64>,
    /// Pressure relative to the first reading (hPa).
    pub rho: f64,
    /// Calibrated phone heading.
    pub r_h: YawSinCos,
}

impl RawObservation {
    /// `[dt, θ_sw(6), v(3), α(3), γ(3), φ(3), ρ, sin, cos]`.
    pub fn to_array(&self) -> [f64; OBS_DIM] {
        let mut out = [0.0; OBS_DIM];
        out[0] = self.dt;
        out[1..7].copy_from_slice(&self.theta_sw.to_array());
        out[7..10].copy_from_slice(self.v.as_slice());
        out[10..13].copy_from_slice(self.alpha.as_slice());
        out[13..16].copy_from_slice(self.gamma.as_slice());
        out[16..19].copy_from_slice(self.phi.as_slice());
        out[19] = self.rho;
        out[20] = self.r_h.s;
        out[21] = self.r_h.c;
        out
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.to_array())
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != OBS_DIM {
            return Err(Error::shape(OBS_DIM, v.len()));
        }
        Ok(Self {
            dt: v[0],
            theta_sw: SixD::from_slice(&v[1..7]),
            v: Vector3::new(v[7], v[8], v[9]),
            alpha: Vector3::new(v[10], v[11], v[12]),
            gamma: Vector3::new(v[13], v[14], v[15]),
            phi: Vector3::new(v[16], v[17], v[18]),
            rho: v[19],
            r_h: YawSinCos { s: v[20], c: v[21] },
        })
    }
}

/// Arm pose and body heading: `[q_l(6), q_u(6), r_h(2)]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseState {
    pub lower: SixD,
    pub upper: SixD,
    pub heading: YawSinCos,
}

impl Default for PoseState {
    fn default() -> Self {
        Self {
            lower: SixD::identity(),
            upper: SixD::identity(),
            heading: YawSinCos::default(),
        }
    }
}

impl PoseState {
    pub fn to_array(&self) -> [f64; STATE_DIM] {
        let mut out = [0.0; STATE_DIM];
        out[0..6].copy_from_slice(&self.lower.to_array());
        out[6..12].copy_from_slice(&self.upper.to_array());
        out[12] = self.heading.s;
        out[13] = self.heading.c;
        out
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.to_array())
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != STATE_DIM {
            return Err(Error::shape(STATE_DIM, v.len()));
        }
        Ok(Self {
            lower: SixD::from_slice(&v[0..6]),
            upper: SixD::from_slice(&v[6..12]),
            heading: YawSinCos { s: v[12], c: v[13] },
        })
    }

    /// Orthonormalizes both 6D blocks and normalizes the heading.
    pub fn projected(&self) -> Result<Self> {
        Ok(Self {
            lower: self.lower.orthonormalized()?,
            upper: self.upper.orthonormalized()?,
            heading: self.heading.normalized(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub obs: RawObservation,
    pub state: PoseState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub subject: String,
    pub motion: String,
    pub samples: Vec<Sample>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Cumulative time of each sample.
    pub fn timestamps(&self) -> Vec<f64> {
        let mut t = 0.0;
        self.samples
            .iter()
            .map(|s| {
                t += s.obs.dt;
                t
            })
            .collect()
    }

    /// Every `dt` must be positive (strictly increasing timestamps).
    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.samples.iter().enumerate() {
            if !(s.obs.dt > 0.0) {
                return Err(Error::Parse {
                    line: i,
                    message: format!(
                        "non-positive dt {} in {}/{}",
                        s.obs.dt, self.subject, self.motion
                    ),
                });
            }
        }
        Ok(())
    }

    /// Motion tag without any augmentation suffix (`wave@yaw045` → `wave`).
    pub fn base_motion(&self) -> &str {
        self.motion.split('@').next().unwrap_or(&self.motion)
    }
}
