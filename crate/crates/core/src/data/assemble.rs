use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::RawObservation;
use crate::error::{Error, Result};
use crate::ingest::wire::{orientation_quat, Payload, PhoneReading, SensorPacket, WatchReading};
use crate::rotmath::{calibrate, quat_to_sixd, up_axis_yaw, UnitQuaternion};

/// Device seconds of silence after which a stream counts as stale.
pub const STALE_AFTER: f64 = 1.0;

/// Orientations and pressure captured at the start posture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationState {
    pub watch_init: UnitQuaternion,
    pub phone_init: UnitQuaternion,
    pub rho_init: f64,
}

impl CalibrationState {
    pub fn capture(watch: &WatchReading, phone: &PhoneReading) -> Result<Self> {
        Ok(Self {
            watch_init: orientation_quat(&watch.orientation)?,
            phone_init: orientation_quat(&phone.orientation)?,
            rho_init: watch.pressure as f64,
        })
    }
}

/// Builds one observation from the watch packets of an interval and the most
/// recent phone packet. Sensor channels are averaged over the interval; the
/// orientations and pressure are taken from the newest watch packet.
pub fn assemble_observation(
    watch_pkts: &[SensorPacket],
    phone_pkt: &SensorPacket,
    calib: Option<&CalibrationState>,
    dt: f64,
) -> Result<RawObservation> {
    let calib = calib.ok_or(Error::NotCalibrated)?;
    let readings: Vec<&WatchReading> = watch_pkts
        .iter()
        .filter_map(|p| match &p.payload {
            Payload::Watch(w) => Some(w),
            Payload::Phone(_) => None,
        })
        .collect();
    let last = *readings.last().ok_or(Error::EmptyInterval)?;
    let phone = match &phone_pkt.payload {
        Payload::Phone(p) => p,
        Payload::Watch(_) => {
            return Err(Error::InvalidConfig(
                "phone slot holds a watch packet".into(),
            ))
        }
    };

    let n = readings.len() as f64;
    let mean = |f: fn(&WatchReading) -> [f32; 3]| {
        readings
            .iter()
            .map(|r| {
                let v = f(r);
                Vector3::new(v[0] as f64, v[1] as f64, v[2] as f64)
            })
            .sum::<Vector3<f64>>()
            / n
    };
    let alpha = mean(|r| r.linear_accel);
    let gamma = mean(|r| r.gravity);
    let phi = mean(|r| r.gyro);

    let watch_now = orientation_quat(&last.orientation)?;
    let phone_now = orientation_quat(&phone.orientation)?;
    Ok(RawObservation {
        dt,
        theta_sw: quat_to_sixd(calibrate(calib.watch_init, watch_now)),
        v: alpha * dt,
        alpha,
        gamma,
        phi,
        rho: last.pressure as f64 - calib.rho_init,
        r_h: up_axis_yaw(calibrate(calib.phone_init, phone_now))?,
    })
}

/// An observation produced by [`Assembler::push`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assembled {
    pub obs: RawObservation,
    /// Timestamp of the watch packet that closed the interval.
    pub timestamp: f64,
    pub stale_watch: bool,
    pub stale_phone: bool,
}

impl Assembled {
    pub fn degraded(&self) -> bool {
        self.stale_watch || self.stale_phone
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct AssemblyStats {
    pub observations: u64,
    pub out_of_order: u64,
    pub before_calibration: u64,
}

/// Stateful session assembly: calibration from the first watch/phone pair,
/// then one observation per watch packet with the latest phone orientation.
#[derive(Debug, Clone)]
pub struct Assembler {
    nominal_dt: f64,
    calib: Option<CalibrationState>,
    first_watch: Option<WatchReading>,
    first_phone: Option<PhoneReading>,
    latest_phone: Option<SensorPacket>,
    last_obs_time: Option<f64>,
    last_seq: [Option<u32>; 2],
    stats: AssemblyStats,
}

impl Assembler {
    /// `nominal_dt` is used for the first observation, which has no predecessor.
    pub fn new(nominal_dt: f64) -> Self {
        Self {
            nominal_dt,
            calib: None,
            first_watch: None,
            first_phone: None,
            latest_phone: None,
            last_obs_time: None,
            last_seq: [None, None],
            stats: AssemblyStats::default(),
        }
    }

    pub fn calibration(&self) -> Option<&CalibrationState> {
        self.calib.as_ref()
    }

    pub fn stats(&self) -> AssemblyStats {
        self.stats
    }

    /// Drops the calibration; the next watch/phone pair recaptures it.
    pub fn recalibrate(&mut self) {
        self.calib = None;
        self.first_watch = None;
        self.first_phone = None;
        self.last_obs_time = None;
    }

    pub fn push(&mut self, pkt: &SensorPacket) -> Result<Option<Assembled>> {
        let slot = match pkt.payload {
            Payload::Watch(_) => 0,
            Payload::Phone(_) => 1,
        };
        if matches!(self.last_seq[slot], Some(last) if pkt.seq <= last) {
            self.stats.out_of_order += 1;
            return Ok(None);
        }
        self.last_seq[slot] = Some(pkt.seq);

        match &pkt.payload {
            Payload::Phone(p) => {
                self.latest_phone = Some(*pkt);
                if self.first_phone.is_none() {
                    self.first_phone = Some(*p);
                }
                self.try_calibrate()?;
                Ok(None)
            }
            Payload::Watch(w) => {
                if self.first_watch.is_none() {
                    self.first_watch = Some(*w);
                }
                self.try_calibrate()?;
                let (Some(calib), Some(phone)) = (self.calib, self.latest_phone) else {
                    self.stats.before_calibration += 1;
                    return Ok(None);
                };
                let gap = self.last_obs_time.map(|t| pkt.timestamp - t);
                let dt = match gap {
                    Some(g) if g > 0.0 => g,
                    _ => self.nominal_dt,
                };
                let obs =
                    assemble_observation(std::slice::from_ref(pkt), &phone, Some(&calib), dt)?;
                self.last_obs_time = Some(pkt.timestamp);
                self.stats.observations += 1;
                Ok(Some(Assembled {
                    obs,
                    timestamp: pkt.timestamp,
                    stale_watch: gap.is_some_and(|g| g > STALE_AFTER),
                    stale_phone: pkt.timestamp - phone.timestamp > STALE_AFTER,
                }))
            }
        }
    }

    fn try_calibrate(&mut self) -> Result<()> {
        if self.calib.is_none() {
            if let (Some(w), Some(p)) = (&self.first_watch, &self.first_phone) {
                self.calib = Some(CalibrationState::capture(w, p)?);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotmath::SixD;

    fn watch(seq: u32, t: f64, accel: [f32; 3], gravity: [f32; 3]) -> SensorPacket {
        SensorPacket {
            seq,
            timestamp: t,
            payload: Payload::Watch(WatchReading {
                orientation: [0.8, 0.0, 0.6, 0.0],
                linear_accel: accel,
                gravity,
                gyro: [0.0; 3],
                pressure: 1000.0,
            }),
        }
    }

    fn phone(seq: u32, t: f64, q: [f32; 4]) -> SensorPacket {
        SensorPacket {
            seq,
            timestamp: t,
            payload: Payload::Phone(PhoneReading { orientation: q }),
        }
    }

    fn calib() -> CalibrationState {
        CalibrationState {
            watch_init: UnitQuaternion::identity(),
            phone_init: UnitQuaternion::identity(),
            rho_init: 1000.0,
        }
    }

    #[test]
    fn first_assembly_is_self_calibrated() {
        let mut a = Assembler::new(0.0125);
        assert!(a
            .push(&phone(0, 0.0, [0.6, 0.0, 0.8, 0.0]))
            .unwrap()
            .is_none());
        let out = a
            .push(&watch(0, 0.0, [0.0; 3], [0.0, -9.81, 0.0]))
            .unwrap()
            .unwrap();
        assert_eq!(out.obs.dt, 0.0125);
        assert!(out
            .obs
            .theta_sw
            .to_array()
            .iter()
            .zip(SixD::identity().to_array())
            .all(|(a, b)| (a - b).abs() < 1e-12));
        assert_eq!(out.obs.rho, 0.0);
        assert!((out.obs.r_h.s).abs() < 1e-12 && (out.obs.r_h.c - 1.0).abs() < 1e-12);
        assert!(!out.degraded());
    }

    #[test]
    fn constant_acceleration_integrates() {
        let o = assemble_observation(
            &[watch(1, 0.1, [0.0, 0.0, 1.0], [0.0, -9.81, 0.0])],
            &phone(1, 0.1, [1.0, 0.0, 0.0, 0.0]),
            Some(&calib()),
            0.1,
        )
        .unwrap();
        assert!((o.v - Vector3::new(0.0, 0.0, 0.1)).norm() < 1e-12);
    }

    #[test]
    fn channels_are_averaged() {
        let pkts = [
            watch(1, 0.0, [0.0; 3], [0.0, -9.7, 0.0]),
            watch(2, 0.0, [0.0; 3], [0.0, -9.8, 0.0]),
            watch(3, 0.0, [0.0; 3], [0.0, -9.9, 0.0]),
        ];
        let o = assemble_observation(
            &pkts,
            &phone(1, 0.0, [1.0, 0.0, 0.0, 0.0]),
            Some(&calib()),
            0.1,
        )
        .unwrap();
        assert!((o.gamma - Vector3::new(0.0, -9.8, 0.0)).norm() < 1e-6);
    }

    #[test]
    fn missing_preconditions() {
        let p = phone(1, 0.0, [1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(
            assemble_observation(&[], &p, Some(&calib()), 0.1),
            Err(Error::EmptyInterval)
        ));
        assert!(matches!(
            assemble_observation(&[watch(1, 0.0, [0.0; 3], [0.0; 3])], &p, None, 0.1),
            Err(Error::NotCalibrated)
        ));
    }

    #[test]
    fn phone_yaw_is_relative_to_start() {
        let mut a = Assembler::new(0.0125);
        let h = UnitQuaternion::from_yaw(0.7);
        let q = |psi: f64| {
            let r = h * UnitQuaternion::from_yaw(psi);
            [r.w as f32, r.x as f32, r.y as f32, r.z as f32]
        };
        a.push(&phone(0, 0.0, q(0.0))).unwrap();
        a.push(&watch(0, 0.0, [0.0; 3], [0.0; 3])).unwrap();
        a.push(&phone(1, 0.1, q(0.5))).unwrap();
        let out = a.push(&watch(1, 0.1, [0.0; 3], [0.0; 3])).unwrap().unwrap();
        assert!((out.obs.r_h.angle() - 0.5).abs() < 1e-6);
        assert!((out.obs.dt - 0.1).abs() < 1e-12);
    }

    #[test]
    fn out_of_order_packets_are_dropped() {
        let mut a = Assembler::new(0.0125);
        a.push(&phone(0, 0.0, [1.0, 0.0, 0.0, 0.0])).unwrap();
        assert!(a
            .push(&watch(5, 0.0, [0.0; 3], [0.0; 3]))
            .unwrap()
            .is_some());
        assert!(a
            .push(&watch(4, 0.01, [0.0; 3], [0.0; 3]))
            .unwrap()
            .is_none());
        assert!(a
            .push(&watch(5, 0.01, [0.0; 3], [0.0; 3]))
            .unwrap()
            .is_none());
        assert_eq!(a.stats().out_of_order, 2);
        assert!(a
            .push(&watch(6, 0.02, [0.0; 3], [0.0; 3]))
            .unwrap()
            .is_some());
    }

    #[test]
    fn silent_phone_marks_degraded() {
        let mut a = Assembler::new(0.0125);
        a.push(&phone(0, 0.0, [1.0, 0.0, 0.0, 0.0])).unwrap();
        let mut flags = vec![];
        for k in 0..240u32 {
            let t = k as f64 * 0.0125;
            flags.push(
                a.push(&watch(k, t, [0.0; 3], [0.0; 3]))
                    .unwrap()
                    .unwrap()
                    .stale_phone,
            );
        }
        assert!(!flags[0] && !flags[80]);
        assert!(flags[100] && flags[239]);
    }

    #[test]
    fn watch_gap_marks_degraded() {
        let mut a = Assembler::new(0.0125);
        a.push(&phone(0, 0.0, [1.0, 0.0, 0.0, 0.0])).unwrap();
        a.push(&watch(0, 0.0, [0.0; 3], [0.0; 3])).unwrap();
        a.push(&phone(1, 1.5, [1.0, 0.0, 0.0, 0.0])).unwrap();
        let out = a.push(&watch(1, 1.5, [0.0; 3], [0.0; 3])).unwrap().unwrap();
        assert!(out.stale_watch && !out.stale_phone);
    }
}
