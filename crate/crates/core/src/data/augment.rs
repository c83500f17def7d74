use std::f64::consts::PI;

use super::Trajectory;
use crate::rotmath::UnitQuaternion;

/// Simulates the user facing a different direction at calibration time.
///
/// The calibrated watch orientation and both headings (observed and true) are
/// turned by `delta_yaw` about +Y. Watch-frame channels are left untouched, and
/// so are the segment rotations: they are expressed in the body frame, which
/// turns along with the heading.
pub fn augment_yaw(traj: &Trajectory, delta_yaw: f64) -> Trajectory {
    if delta_yaw == 0.0 {
        return traj.clone();
    }
    let q = UnitQuaternion::from_yaw(delta_yaw);
    let mut out = traj.clone();
    for s in &mut out.samples {
        s.obs.theta_sw = s.obs.theta_sw.rotated(q);
        s.obs.r_h = s.obs.r_h.rotated(delta_yaw);
        s.state.heading = s.state.heading.rotated(delta_yaw);
    }
    out
}

/// `count` copies of `traj` at yaws `k·360°/count`, tagged `motion@yawDDD`.
pub fn augment_sweep(traj: &Trajectory, count: usize) -> Vec<Trajectory> {
    (0..count)
        .map(|k| {
            let deg = 360.0 * k as f64 / count as f64;
            let mut t = augment_yaw(traj, deg * PI / 180.0);
            t.motion = format!("{}@yaw{:03}", traj.base_motion(), deg.round() as i64);
            t
        })
        .collect()
}
