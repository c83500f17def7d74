use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::filter::{run_filter, FilterConfig};
use super::ModelBundle;
use crate::data::{PoseState, Trajectory, STATE_DIM};
use crate::error::{Error, Result};
use crate::kinematics::{forward_kinematics, ArmConfig};

/// Mean position and heading errors.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub wrist_cm: f64,
    pub elbow_cm: f64,
    pub hip_deg: f64,
    pub samples: usize,
}

#[derive(Default)]
struct Acc {
    wrist: f64,
    elbow: f64,
    hip: f64,
    n: usize,
}

impl Acc {
    fn push(&mut self, (w, e, h): (f64, f64, f64)) {
        self.wrist += w;
        self.elbow += e;
        self.hip += h;
        self.n += 1;
    }

    fn metrics(&self) -> Metrics {
        let n = self.n.max(1) as f64;
        Metrics {
            wrist_cm: 100.0 * self.wrist / n,
            elbow_cm: 100.0 * self.elbow / n,
            hip_deg: self.hip / n,
            samples: self.n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: Metrics,
    /// Keyed by base motion name (augmentation suffix stripped).
    pub per_motion: BTreeMap<String, Metrics>,
    pub steps: usize,
    pub seconds: f64,
}

impl EvalReport {
    /// Filter steps per second of wall time.
    pub fn throughput(&self) -> f64 {
        if self.seconds > 0.0 {
            self.steps as f64 / self.seconds
        } else {
            f64::INFINITY
        }
    }
}

/// Angle in degrees wrapped to `[-180, 180)`.
pub fn wrap_degrees(d: f64) -> f64 {
    (d + 180.0).rem_euclid(360.0) - 180.0
}

/// Wrist distance and elbow distance in meters, heading error in degrees.
pub fn pose_errors(est: &PoseState, truth: &PoseState, arm: &ArmConfig) -> Result<(f64, f64, f64)> {
    let p = forward_kinematics(&est.upper, &est.lower, est.heading.normalized(), arm)?;
    let q = forward_kinematics(&truth.upper, &truth.lower, truth.heading.normalized(), arm)?;
    let yaw = wrap_degrees((est.heading.angle() - truth.heading.angle()).to_degrees()).abs();
    Ok(((p.wrist - q.wrist).norm(), (p.elbow - q.elbow).norm(), yaw))
}

fn collect<F>(data: &[Trajectory], arm: &ArmConfig, mut estimates: F) -> Result<EvalReport>
where
    F: FnMut(usize, &Trajectory) -> Result<Vec<PoseState>>,
{
    arm.validate()?;
    if data.iter().all(|t| t.is_empty()) {
        return Err(Error::EmptyDataset);
    }
    let start = Instant::now();
    let mut all = Acc::default();
    let mut per: BTreeMap<String, Acc> = BTreeMap::new();
    for (i, t) in data.iter().enumerate() {
        let est = estimates(i, t)?;
        let acc = per.entry(t.base_motion().to_string()).or_default();
        for (e, s) in est.iter().zip(&t.samples) {
            let err = pose_errors(e, &s.state, arm)?;
            all.push(err);
            acc.push(err);
        }
    }
    Ok(EvalReport {
        overall: all.metrics(),
        per_motion: per.into_iter().map(|(k, v)| (k, v.metrics())).collect(),
        steps: all.n,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Runs the filter from a cold start on every trajectory; trajectory `i`
/// uses seed `cfg.seed + i`.
pub fn evaluate(
    bundle: &ModelBundle,
    data: &[Trajectory],
    arm: &ArmConfig,
    cfg: FilterConfig,
) -> Result<EvalReport> {
    collect(data, arm, |i, t| {
        let c = FilterConfig {
            seed: cfg.seed.wrapping_add(i as u64),
            ..cfg
        };
        run_filter(bundle, t, c)?
            .iter()
            .map(|e| PoseState::from_slice(e.mean.as_slice()))
            .collect()
    })
}

/// Component-wise mean of all ground-truth states, projected to a valid pose.
pub fn mean_state(data: &[Trajectory]) -> Result<PoseState> {
    let mut sum = [0.0; STATE_DIM];
    let mut n = 0usize;
    for s in data.iter().flat_map(|t| &t.samples) {
        for (a, v) in sum.iter_mut().zip(s.state.to_array()) {
            *a += v;
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    sum.iter_mut().for_each(|a| *a /= n as f64);
    PoseState::from_slice(&sum)?.projected()
}

/// Errors of a predictor that always outputs `constant`.
pub fn baseline_metrics(
    constant: &PoseState,
    data: &[Trajectory],
    arm: &ArmConfig,
) -> Result<EvalReport> {
    collect(data, arm, |_, t| Ok(vec![*constant; t.len()]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthesize, MotionKind, SynthConfig};
    use crate::rotmath::YawSinCos;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn wrap_is_shortest_arc() {
        assert!((wrap_degrees(359.0 - 1.0).abs() - 2.0).abs() < 1e-12);
        assert!((wrap_degrees(1.0 - 359.0).abs() - 2.0).abs() < 1e-12);
        assert_eq!(wrap_degrees(0.0), 0.0);
        assert_eq!(wrap_degrees(180.0).abs(), 180.0);
    }

    #[test]
    fn heading_error_wraps() {
        let mut a = PoseState::default();
        let mut b = PoseState::default();
        a.heading = YawSinCos::from_angle(359f64.to_radians());
        b.heading = YawSinCos::from_angle(1f64.to_radians());
        let (_, _, h) = pose_errors(&a, &b, &ArmConfig::default()).unwrap();
        assert!((h - 2.0).abs() < 1e-9);
    }

    #[test]
    fn truth_has_zero_error() {
        let cfg = SynthConfig {
            motion: MotionKind::Waving,
            duration_s: 0.5,
            ..SynthConfig::default()
        };
        let t = synthesize(&cfg, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap()
            .trajectory;
        let r = collect(std::slice::from_ref(&t), &ArmConfig::default(), |_, t| {
            Ok(t.samples.iter().map(|s| s.state).collect())
        })
        .unwrap();
        assert!(r.overall.wrist_cm < 1e-9 && r.overall.hip_deg < 1e-9);
        assert_eq!(r.steps, 40);
        assert!(r.per_motion.contains_key(t.base_motion()));
        let m = mean_state(std::slice::from_ref(&t)).unwrap();
        let b = baseline_metrics(&m, std::slice::from_ref(&t), &ArmConfig::default()).unwrap();
        assert!(b.overall.wrist_cm > 0.0);
    }
}
