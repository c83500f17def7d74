//! Analytic arm motions and the device signals they would produce.
//!
//! Joint angles are sums of sinusoids blended in from the calibration posture
//! (upper arm hanging, forearm pointing forward) with a smootherstep ramp.
//! Segment rotations are chains of elementary rotations, so body rates and
//! orientations are exact; wrist acceleration is a fine-step five-point
//! stencil of the forward kinematics.
//!
//! The watch sits on the forearm with a fixed mount rotation `M` so that the
//! watch frame coincides with the global frame in the calibration posture.
//! Each trajectory draws a random device-world heading and a random phone
//! pocket yaw; calibration removes both.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{augment_sweep, Assembler, PoseState, Sample, Trajectory};
use crate::error::{Error, Result};
use crate::ingest::wire::{quat_to_f32, Payload, PhoneReading, SensorPacket, WatchReading};
use crate::kinematics::{forward_kinematics_matrices, ArmConfig};
use crate::rotmath::{quat_to_sixd, UnitQuaternion, YawSinCos};

pub const GRAVITY: f64 = 9.81;
/// Linearized barometric gradient near sea level, hPa per meter.
pub const PRESSURE_PER_METER: f64 = 0.12;
const STENCIL_STEP: f64 = 1e-3;
/// Highest joint frequency after randomization, Hz.
const MAX_FREQUENCY: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MotionKind {
    ArmSwing,
    ArmRaise,
    Waving,
    Boxing,
    Clapping,
    CrossChest,
    Turning,
    /// Calibration posture held still.
    Static,
    /// Calibration posture with the body turning at `rate` rad/s.
    Spin {
        rate: f64,
    },
}

impl MotionKind {
    /// The seven everyday motions used for training data.
    pub const CATALOG: [MotionKind; 7] = [
        MotionKind::ArmSwing,
        MotionKind::ArmRaise,
        MotionKind::Waving,
        MotionKind::Boxing,
        MotionKind::Clapping,
        MotionKind::CrossChest,
        MotionKind::Turning,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            MotionKind::ArmSwing => "arm_swing",
            MotionKind::ArmRaise => "arm_raise",
            MotionKind::Waving => "waving",
            MotionKind::Boxing => "boxing",
            MotionKind::Clapping => "clapping",
            MotionKind::CrossChest => "cross_chest",
            MotionKind::Turning => "turning",
            MotionKind::Static => "static",
            MotionKind::Spin { .. } => "spin",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Self::CATALOG
            .into_iter()
            .chain([MotionKind::Static])
            .find(|m| m.tag() == tag)
    }

    // Degrees and Hz: (offset, [(amplitude, frequency)]) per joint.
    fn profile(&self) -> Profile {
        let ch = |offset: f64, terms: &[(f64, f64)]| ChannelSpec {
            offset,
            terms: terms.to_vec(),
        };
        let zero = || ch(0.0, &[]);
        let (abduct, flex, elbow, pronate, yaw) = match self {
            MotionKind::ArmSwing => (
                ch(5.0, &[(5.0, 0.9)]),
                ch(0.0, &[(30.0, 0.9)]),
                ch(-60.0, &[(15.0, 0.9)]),
                ch(0.0, &[(10.0, 0.9)]),
                ch(0.0, &[(8.0, 0.45)]),
            ),
            MotionKind::ArmRaise => (
                ch(35.0, &[(35.0, 0.3)]),
                ch(-10.0, &[(10.0, 0.3)]),
                ch(-60.0, &[(15.0, 0.3)]),
                ch(0.0, &[(20.0, 0.3)]),
                ch(0.0, &[(10.0, 0.15)]),
            ),
            MotionKind::Waving => (
                ch(25.0, &[(10.0, 0.5)]),
                ch(-50.0, &[(10.0, 0.5)]),
                ch(40.0, &[(25.0, 1.3)]),
                ch(0.0, &[(30.0, 1.3)]),
                ch(0.0, &[(10.0, 0.2)]),
            ),
            MotionKind::Boxing => (
                ch(10.0, &[(10.0, 1.1)]),
                ch(-45.0, &[(30.0, 1.1)]),
                ch(10.0, &[(45.0, 1.1)]),
                ch(0.0, &[(15.0, 1.1)]),
                ch(0.0, &[(20.0, 0.55)]),
            ),
            MotionKind::Clapping => (
                ch(-15.0, &[(20.0, 1.2)]),
                ch(-55.0, &[(10.0, 1.2)]),
                ch(-10.0, &[(20.0, 1.2)]),
                ch(0.0, &[(25.0, 1.2)]),
                ch(0.0, &[(5.0, 0.2)]),
            ),
            MotionKind::CrossChest => (
                ch(-25.0, &[(20.0, 0.4)]),
                ch(-40.0, &[(20.0, 0.4)]),
                ch(20.0, &[(25.0, 0.4)]),
                ch(0.0, &[(15.0, 0.4)]),
                ch(0.0, &[(10.0, 0.2)]),
            ),
            MotionKind::Turning => (
                ch(5.0, &[]),
                ch(0.0, &[(20.0, 0.8)]),
                ch(-40.0, &[(10.0, 0.8)]),
                zero(),
                ch(0.0, &[(80.0, 0.1), (25.0, 0.3)]),
            ),
            MotionKind::Static | MotionKind::Spin { .. } => {
                (zero(), zero(), zero(), zero(), zero())
            }
        };
        Profile {
            joints: [abduct, flex, elbow, pronate, yaw],
            spin: match self {
                MotionKind::Spin { rate } => *rate,
                _ => 0.0,
            },
        }
    }
}

#[derive(Debug, Clone)]
struct ChannelSpec {
    offset: f64,
    terms: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
struct Profile {
    /// abduction (about Z), flexion (about X), elbow, forearm twist (about Y), body yaw.
    joints: [ChannelSpec; 5],
    spin: f64,
}

/// Per-trajectory generator settings. Serialized as the synthesis manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub motion: MotionKind,
    pub subject: String,
    pub duration_s: f64,
    pub rate_hz: f64,
    /// Blend-in time from the calibration posture; `0` starts moving at once.
    pub ramp_s: f64,
    /// Jitter amplitudes (±20 %), frequencies (×0.85–1.15) and phases.
    pub randomize: bool,
    /// Amplitude of an extra slow body-heading drift, degrees.
    pub heading_wander_deg: f64,
    pub arm: ArmConfig,
    /// Watch mount: rotation about the forearm-frame X axis, degrees.
    pub mount_deg: f64,
    pub pressure_base_hpa: f64,
    pub accel_noise: f64,
    pub gyro_noise: f64,
    pub gravity_noise: f64,
    pub pressure_noise: f64,
    /// Standard deviation of a random rotation applied to each orientation, radians.
    pub orientation_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            motion: MotionKind::ArmSwing,
            subject: "synth".into(),
            duration_s: 16.0,
            rate_hz: 80.0,
            ramp_s: 1.0,
            randomize: true,
            heading_wander_deg: 20.0,
            arm: ArmConfig::default(),
            mount_deg: 90.0,
            pressure_base_hpa: 1013.25,
            accel_noise: 0.0,
            gyro_noise: 0.0,
            gravity_noise: 0.0,
            pressure_noise: 0.0,
            orientation_noise: 0.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0) || !(self.rate_hz > 0.0) || !(self.ramp_s >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "duration {} s, rate {} Hz and ramp {} s must be positive",
                self.duration_s, self.rate_hz, self.ramp_s
            )));
        }
        let noise = [
            self.accel_noise,
            self.gyro_noise,
            self.gravity_noise,
            self.pressure_noise,
            self.orientation_noise,
        ];
        if noise.iter().any(|n| !(*n >= 0.0)) {
            return Err(Error::InvalidConfig(
                "noise levels must be non-negative".into(),
            ));
        }
        self.arm.validate()
    }

    pub fn num_samples(&self) -> usize {
        (self.duration_s * self.rate_hz).round() as usize
    }

    fn mount(&self) -> UnitQuaternion {
        UnitQuaternion::from_axis_angle(Vector3::x(), self.mount_deg.to_radians())
    }
}

/// Noise-free or noisy device readings at one tick, before wire quantization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorReading {
    pub t: f64,
    /// Watch orientation in its own world frame.
    pub watch_orientation: UnitQuaternion,
    pub linear_accel: Vector3<f64>,
    pub gravity: Vector3<f64>,
    pub gyro: Vector3<f64>,
    pub pressure: f64,
    /// Phone orientation in its own world frame.
    pub phone_orientation: UnitQuaternion,
}

impl SensorReading {
    pub fn to_packets(&self, seq: u32) -> [SensorPacket; 2] {
        let f = |v: &Vector3<f64>| [v.x as f32, v.y as f32, v.z as f32];
        [
            SensorPacket {
                seq,
                timestamp: self.t,
                payload: Payload::Phone(PhoneReading {
                    orientation: quat_to_f32(self.phone_orientation),
                }),
            },
            SensorPacket {
                seq,
                timestamp: self.t,
                payload: Payload::Watch(WatchReading {
                    orientation: quat_to_f32(self.watch_orientation),
                    linear_accel: f(&self.linear_accel),
                    gravity: f(&self.gravity),
                    gyro: f(&self.gyro),
                    pressure: self.pressure as f32,
                }),
            },
        ]
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticTrajectory {
    pub trajectory: Trajectory,
    pub readings: Vec<SensorReading>,
    /// Phone then watch packet per tick, in send order.
    pub packets: Vec<SensorPacket>,
}

/// One randomized realization of a motion profile.
#[derive(Debug, Clone)]
struct Motion {
    // (offset, [(amp, omega, phase)]) in radians.
    joints: [(f64, Vec<(f64, f64, f64)>); 5],
    spin: f64,
    ramp: f64,
}

impl Motion {
    fn new(cfg: &SynthConfig, rng: &mut impl Rng) -> Self {
        let profile = cfg.motion.profile();
        let mut joints = profile.joints.clone();
        if cfg.heading_wander_deg > 0.0
            && !matches!(cfg.motion, MotionKind::Static | MotionKind::Spin { .. })
        {
            joints[4].terms.push((cfg.heading_wander_deg, 0.05));
        }
        let joints = joints.map(|spec| {
            let terms = spec
                .terms
                .iter()
                .map(|&(amp, freq)| {
                    let (ka, kf, phase) = if cfg.randomize {
                        (
                            rng.random_range(0.8..1.2),
                            rng.random_range(0.85..1.15),
                            rng.random_range(0.0..2.0 * PI),
                        )
                    } else {
                        (1.0, 1.0, 0.0)
                    };
                    let f = (freq * kf).min(MAX_FREQUENCY);
                    ((amp * ka).to_radians(), 2.0 * PI * f, phase)
                })
                .collect();
            (spec.offset.to_radians(), terms)
        });
        Self {
            joints,
            spin: profile.spin,
            ramp: cfg.ramp_s,
        }
    }

    // Smootherstep blend and its derivative.
    fn blend(&self, t: f64) -> (f64, f64) {
        if self.ramp <= 0.0 {
            return (1.0, 0.0);
        }
        let u = (t / self.ramp).clamp(0.0, 1.0);
        let w = u * u * u * (u * (6.0 * u - 15.0) + 10.0);
        let dw = if u > 0.0 && u < 1.0 {
            30.0 * u * u * (1.0 - u) * (1.0 - u) / self.ramp
        } else {
            0.0
        };
        (w, dw)
    }

    /// Joint angles and their rates; every channel is zero at `t = 0`.
    fn angles(&self, t: f64) -> ([f64; 5], [f64; 5]) {
        let (w, dw) = self.blend(t);
        let mut a = [0.0; 5];
        let mut da = [0.0; 5];
        for (j, (offset, terms)) in self.joints.iter().enumerate() {
            let mut s = *offset;
            let mut ds = 0.0;
            for &(amp, om, ph) in terms {
                s += amp * ((om * t + ph).sin() - ph.sin());
                ds += amp * om * (om * t + ph).cos();
            }
            a[j] = w * s;
            da[j] = dw * s + w * ds;
        }
        a[4] += self.spin * t;
        da[4] += self.spin;
        (a, da)
    }

    /// `(yaw, upper, lower)` at `t`, with lower relative to the body.
    fn segments(&self, t: f64) -> (f64, UnitQuaternion, UnitQuaternion) {
        let (a, _) = self.angles(t);
        let (lower, _) = chain(&arm_chain(&a, &[0.0; 5]));
        let upper = rot(Vector3::z(), a[0]) * rot(Vector3::x(), a[1]);
        (a[4], upper, lower)
    }
}

fn rot(axis: Vector3<f64>, angle: f64) -> UnitQuaternion {
    UnitQuaternion::from_axis_angle(axis, angle)
}

// Elementary factors of the forearm orientation in the body frame.
fn arm_chain(a: &[f64; 5], da: &[f64; 5]) -> [(Vector3<f64>, f64, f64); 4] {
    [
        (Vector3::z(), a[0], da[0]),
        (Vector3::x(), a[1], da[1]),
        (Vector3::x(), -(PI / 2.0 + a[2]), -da[2]),
        (Vector3::y(), a[3], da[3]),
    ]
}

/// Product of elementary rotations and its body-frame angular rate:
/// `ω = Σ_i (R_{i+1}⋯R_n)ᵀ · axis_i · θ̇_i`.
fn chain(factors: &[(Vector3<f64>, f64, f64)]) -> (UnitQuaternion, Vector3<f64>) {
    let mut suffix = UnitQuaternion::identity();
    let mut omega = Vector3::zeros();
    for &(axis, angle, rate) in factors.iter().rev() {
        omega += suffix.to_matrix().transpose() * (axis * rate);
        suffix = rot(axis, angle) * suffix;
    }
    (suffix, omega)
}

/// Generates one trajectory and its packet stream.
pub fn synthesize(cfg: &SynthConfig, rng: &mut impl Rng) -> Result<SyntheticTrajectory> {
    cfg.validate()?;
    let motion = Motion::new(cfg, rng);
    let device_heading = rot(Vector3::y(), rng.random_range(-PI..PI));
    let pocket = rot(Vector3::y(), rng.random_range(-PI..PI));
    let mount = cfg.mount();
    let mount_inv_m = mount.to_matrix().transpose();
    let noise = |sd: f64| Normal::new(0.0, sd).expect("validated noise level");
    let mut noise_rng = ChaCha8Rng::seed_from_u64(rng.random());

    let wrist_at = |t: f64| {
        let (psi, upper, lower) = motion.segments(t);
        forward_kinematics_matrices(
            &upper.to_matrix(),
            &lower.to_matrix(),
            &YawSinCos::from_angle(psi).to_matrix(),
            &cfg.arm,
        )
        .wrist
    };
    let wrist_y0 = wrist_at(0.0).y;

    let n = cfg.num_samples();
    let mut readings = Vec::with_capacity(n);
    let mut states = Vec::with_capacity(n);
    for k in 0..n {
        let t = k as f64 / cfg.rate_hz;
        let (a, da) = motion.angles(t);
        let (lower, lower_rate) = chain(&arm_chain(&a, &da));
        let upper = rot(Vector3::z(), a[0]) * rot(Vector3::x(), a[1]);
        let yaw = rot(Vector3::y(), a[4]);
        // Calibrated-frame watch orientation and its body rate.
        let watch_cal = yaw * lower * mount;
        let lower_m = lower.to_matrix();
        let gyro = mount_inv_m * (lower_m.transpose() * (Vector3::y() * da[4]) + lower_rate);

        let h = STENCIL_STEP;
        let acc_global = (-wrist_at(t + 2.0 * h) + wrist_at(t + h) * 16.0 - wrist_at(t) * 30.0
            + wrist_at(t - h) * 16.0
            - wrist_at(t - 2.0 * h))
            / (12.0 * h * h);
        let to_watch: Matrix3<f64> = watch_cal.to_matrix().transpose();
        let wrist = wrist_at(t);

        let mut r = SensorReading {
            t,
            watch_orientation: device_heading * watch_cal,
            linear_accel: to_watch * acc_global,
            gravity: to_watch * Vector3::new(0.0, -GRAVITY, 0.0),
            gyro,
            pressure: cfg.pressure_base_hpa - PRESSURE_PER_METER * (wrist.y - wrist_y0),
            phone_orientation: device_heading * yaw * pocket,
        };
        add_noise(&mut r, cfg, &noise, &mut noise_rng);
        readings.push(r);
        states.push(PoseState {
            lower: quat_to_sixd(lower),
            upper: quat_to_sixd(upper),
            heading: YawSinCos::from_angle(a[4]),
        });
    }

    let packets: Vec<SensorPacket> = readings
        .iter()
        .enumerate()
        .flat_map(|(k, r)| r.to_packets(k as u32))
        .collect();
    let mut assembler = Assembler::new(1.0 / cfg.rate_hz);
    let mut samples = Vec::with_capacity(n);
    let mut truth = states.into_iter();
    for p in &packets {
        if let Some(out) = assembler.push(p)? {
            let state = truth
                .next()
                .ok_or_else(|| Error::InvalidConfig("more observations than ticks".into()))?;
            samples.push(Sample {
                obs: out.obs,
                state,
            });
        }
    }
    if samples.len() != n {
        return Err(Error::InvalidConfig(format!(
            "assembled {} observations from {n} ticks",
            samples.len()
        )));
    }
    Ok(SyntheticTrajectory {
        trajectory: Trajectory {
            subject: cfg.subject.clone(),
            motion: cfg.motion.tag().into(),
            samples,
        },
        readings,
        packets,
    })
}

fn add_noise(
    r: &mut SensorReading,
    cfg: &SynthConfig,
    noise: &impl Fn(f64) -> Normal<f64>,
    rng: &mut ChaCha8Rng,
) {
    let vec3 = |sd: f64, rng: &mut ChaCha8Rng| {
        let d = noise(sd);
        Vector3::new(d.sample(rng), d.sample(rng), d.sample(rng))
    };
    if cfg.accel_noise > 0.0 {
        r.linear_accel += vec3(cfg.accel_noise, rng);
    }
    if cfg.gyro_noise > 0.0 {
        r.gyro += vec3(cfg.gyro_noise, rng);
    }
    if cfg.gravity_noise > 0.0 {
        r.gravity += vec3(cfg.gravity_noise, rng);
    }
    if cfg.pressure_noise > 0.0 {
        r.pressure += noise(cfg.pressure_noise).sample(rng);
    }
    if cfg.orientation_noise > 0.0 {
        let dw = UnitQuaternion::from_rotation_vector(vec3(cfg.orientation_noise, rng));
        let dp = UnitQuaternion::from_rotation_vector(vec3(cfg.orientation_noise, rng));
        r.watch_orientation = r.watch_orientation * dw;
        r.phone_orientation = r.phone_orientation * dp;
    }
}

/// A multi-motion, multi-subject dataset with yaw augmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub motions: Vec<MotionKind>,
    pub subjects: usize,
    /// Number of yaw variants per base trajectory (`1` disables augmentation).
    pub yaw_variants: usize,
    /// Template for every trajectory; `motion` and `subject` are overwritten.
    pub synth: SynthConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            motions: MotionKind::CATALOG[..5].to_vec(),
            subjects: 1,
            yaw_variants: 8,
            synth: SynthConfig::default(),
        }
    }
}

pub struct SyntheticDataset {
    /// Un-augmented trajectories with their packet streams.
    pub base: Vec<SyntheticTrajectory>,
    /// Every yaw variant of every base trajectory.
    pub trajectories: Vec<Trajectory>,
}

/// Trajectory `i` draws from stream `i` of a generator seeded with `seed`, so
/// any single trajectory can be regenerated alone.
pub fn synthesize_dataset(cfg: &DatasetConfig, seed: u64) -> Result<SyntheticDataset> {
    if cfg.motions.is_empty() || cfg.subjects == 0 || cfg.yaw_variants == 0 {
        return Err(Error::InvalidConfig(
            "dataset needs at least one motion, subject and yaw variant".into(),
        ));
    }
    let mut base = Vec::new();
    let mut trajectories = Vec::new();
    for s in 0..cfg.subjects {
        for (m, motion) in cfg.motions.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((s * cfg.motions.len() + m) as u64);
            let c = SynthConfig {
                motion: *motion,
                subject: format!("s{s:02}"),
                ..cfg.synth.clone()
            };
            let st = synthesize(&c, &mut rng)?;
            trajectories.extend(augment_sweep(&st.trajectory, cfg.yaw_variants));
            base.push(st);
        }
    }
    Ok(SyntheticDataset { base, trajectories })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(motion: MotionKind) -> SynthConfig {
        SynthConfig {
            motion,
            duration_s: 4.0,
            ..SynthConfig::default()
        }
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(17)
    }

    #[test]
    fn invalid_configs() {
        for c in [
            SynthConfig {
                duration_s: 0.0,
                ..SynthConfig::default()
            },
            SynthConfig {
                rate_hz: -1.0,
                ..SynthConfig::default()
            },
            SynthConfig {
                gyro_noise: -0.1,
                ..SynthConfig::default()
            },
        ] {
            assert!(matches!(
                synthesize(&c, &mut rng()),
                Err(Error::InvalidConfig(_))
            ));
        }
    }

    #[test]
    fn sample_count_is_duration_times_rate() {
        let st = synthesize(
            &SynthConfig {
                duration_s: 60.0,
                ..cfg(MotionKind::Waving)
            },
            &mut rng(),
        )
        .unwrap();
        assert_eq!(st.trajectory.len(), 4800);
        assert_eq!(st.packets.len(), 9600);
        st.trajectory.validate().unwrap();
    }

    #[test]
    fn static_pose() {
        let st = synthesize(&cfg(MotionKind::Static), &mut rng()).unwrap();
        for r in &st.readings {
            assert!(r.gyro.norm() < 1e-12);
            assert!(r.linear_accel.norm() < 1e-6);
            assert!((r.pressure - 1013.25).abs() < 1e-9);
        }
        let s0 = st.trajectory.samples[0];
        assert!((s0.obs.gamma - Vector3::new(0.0, -GRAVITY, 0.0)).norm() < 1e-5);
        assert!(s0.obs.rho.abs() < 1e-12);
    }

    #[test]
    fn spin_has_constant_rate() {
        let st = synthesize(&cfg(MotionKind::Spin { rate: 1.3 }), &mut rng()).unwrap();
        for r in &st.readings {
            assert!((r.gyro.norm() - 1.3).abs() < 1e-12);
        }
        let last = st.trajectory.samples.last().unwrap();
        let t = (st.trajectory.len() - 1) as f64 / 80.0;
        assert!((last.obs.r_h.angle() - YawSinCos::from_angle(1.3 * t).angle()).abs() < 1e-5);
    }

    #[test]
    fn gravity_norm_exact() {
        for m in MotionKind::CATALOG {
            let st = synthesize(&cfg(m), &mut rng()).unwrap();
            for r in &st.readings {
                assert!((r.gravity.norm() - GRAVITY).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn pressure_follows_wrist_height() {
        let c = cfg(MotionKind::ArmRaise);
        let st = synthesize(&c, &mut rng()).unwrap();
        let wrist = |s: &Sample| {
            forward_kinematics_matrices(
                &s.state.upper.to_matrix().unwrap(),
                &s.state.lower.to_matrix().unwrap(),
                &s.state.heading.to_matrix(),
                &c.arm,
            )
            .wrist
        };
        let y0 = wrist(&st.trajectory.samples[0]).y;
        for (s, r) in st.trajectory.samples.iter().zip(&st.readings) {
            let expected = 1013.25 - 0.12 * (wrist(s).y - y0);
            assert!((r.pressure - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn gyro_matches_orientation_derivative() {
        for m in MotionKind::CATALOG {
            let c = SynthConfig {
                duration_s: 3.0,
                rate_hz: 1000.0,
                ..cfg(m)
            };
            let st = synthesize(&c, &mut rng()).unwrap();
            let dt = 1.0 / c.rate_hz;
            for k in (1..st.readings.len() - 1).step_by(37) {
                let (a, b) = (
                    st.readings[k - 1].watch_orientation,
                    st.readings[k + 1].watch_orientation,
                );
                // Body rate from the relative rotation across two steps.
                let rel = a.to_matrix().transpose() * b.to_matrix();
                let q = UnitQuaternion::from_matrix(&rel);
                let angle = 2.0 * q.vector().norm().atan2(q.w);
                let axis = if q.vector().norm() > 0.0 {
                    q.vector().normalize()
                } else {
                    Vector3::zeros()
                };
                let fd = axis * angle / (2.0 * dt);
                let g = st.readings[k].gyro;
                assert!(
                    (fd - g).norm() < 1e-3 * (1.0 + g.norm()),
                    "{m:?} k={k}: {fd} vs {g}"
                );
            }
        }
    }

    #[test]
    fn acceleration_matches_kinematics() {
        for m in MotionKind::CATALOG {
            let c = cfg(m);
            let st = synthesize(&c, &mut rng()).unwrap();
            let s = &st.trajectory.samples;
            let mount_inv = c.mount().to_matrix().transpose();
            let mut err = 0.0;
            let mut norm = 0.0;
            let h = 1.0 / c.rate_hz;
            let wrist = |s: &Sample| {
                forward_kinematics_matrices(
                    &s.state.upper.to_matrix().unwrap(),
                    &s.state.lower.to_matrix().unwrap(),
                    &s.state.heading.to_matrix(),
                    &c.arm,
                )
                .wrist
            };
            for k in 1..s.len() - 1 {
                let acc = (wrist(&s[k + 1]) - wrist(&s[k]) * 2.0 + wrist(&s[k - 1])) / (h * h);
                let w = s[k].state.heading.to_matrix() * s[k].state.lower.to_matrix().unwrap();
                let local = mount_inv * w.transpose() * acc;
                err += (local - s[k].obs.alpha).norm_squared();
                norm += s[k].obs.alpha.norm_squared();
            }
            let rel = (err / norm).sqrt();
            assert!(rel < 0.02, "{m:?}: relative RMS {rel}");
        }
    }

    #[test]
    fn calibration_removes_device_headings() {
        let st = synthesize(&cfg(MotionKind::Boxing), &mut rng()).unwrap();
        let m = SynthConfig::default().mount();
        for s in &st.trajectory.samples {
            let expected =
                s.state.heading.to_matrix() * s.state.lower.to_matrix().unwrap() * m.to_matrix();
            let got = s.obs.theta_sw.to_matrix().unwrap();
            assert!((expected - got).norm() < 1e-5);
            assert!((s.obs.r_h.angle() - s.state.heading.angle()).sin().abs() < 1e-5);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = synthesize_dataset(
            &DatasetConfig {
                subjects: 1,
                yaw_variants: 2,
                ..Default::default()
            },
            5,
        )
        .unwrap();
        let b = synthesize_dataset(
            &DatasetConfig {
                subjects: 1,
                yaw_variants: 2,
                ..Default::default()
            },
            5,
        )
        .unwrap();
        assert_eq!(a.trajectories, b.trajectories);
        assert_eq!(a.trajectories.len(), 10);
        assert_eq!(a.base.len(), 5);
    }

    #[test]
    fn tags_round_trip() {
        for m in MotionKind::CATALOG {
            assert_eq!(MotionKind::from_tag(m.tag()), Some(m));
        }
    }
}
