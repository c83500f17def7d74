//! Binary datagram format shared by the watch and phone streamers.
//!
//! All fields little-endian:
//!
//! | offset | size | field                                  |
//! |--------|------|----------------------------------------|
//! | 0      | 4    | magic `0x57434150`                     |
//! | 4      | 1    | version (`1`)                          |
//! | 5      | 1    | device (`0` watch, `1` phone)          |
//! | 6      | 2    | reserved (`0`)                         |
//! | 8      | 4    | sequence number                        |
//! | 12     | 8    | device timestamp, seconds (`f64`)      |
//! | 20     | 4·n  | payload, `f32` × 14 (watch) or × 4 (phone) |
//!
//! Watch payload: orientation `w x y z`, linear acceleration `xyz`, gravity
//! `xyz`, gyroscope `xyz`, pressure (hPa). Phone payload: orientation `w x y z`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotmath::UnitQuaternion;

pub const MAGIC: u32 = 0x5743_4150;
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 20;
pub const WATCH_PAYLOAD: usize = 14;
pub const PHONE_PAYLOAD: usize = 4;
pub const WATCH_LEN: usize = HEADER_LEN + 4 * WATCH_PAYLOAD;
pub const PHONE_LEN: usize = HEADER_LEN + 4 * PHONE_PAYLOAD;

/// Allowed deviation of a transmitted quaternion from unit norm.
pub const QUATERNION_TOLERANCE: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Device {
    Watch,
    Phone,
}

impl Device {
    fn tag(self) -> u8 {
        match self {
            Device::Watch => 0,
            Device::Phone => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WatchReading {
    pub orientation: [f32; 4],
    pub linear_accel: [f32; 3],
    pub gravity: [f32; 3],
    pub gyro: [f32; 3],
    pub pressure: f32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhoneReading {
    pub orientation: [f32; 4],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Payload {
    Watch(WatchReading),
    Phone(PhoneReading),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorPacket {
    pub seq: u32,
    pub timestamp: f64,
    pub payload: Payload,
}

impl SensorPacket {
    pub fn device(&self) -> Device {
        match self.payload {
            Payload::Watch(_) => Device::Watch,
            Payload::Phone(_) => Device::Phone,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(WATCH_LEN);
        out.extend_from_slice(&MAGIC.to_le_bytes());
        out.push(VERSION);
        out.push(self.device().tag());
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&self.seq.to_le_bytes());
        out.extend_from_slice(&self.timestamp.to_le_bytes());
        let mut put = |vals: &[f32]| {
            for v in vals {
                out.extend_from_slice(&v.to_le_bytes());
            }
        };
        match &self.payload {
            Payload::Watch(w) => {
                put(&w.orientation);
                put(&w.linear_accel);
                put(&w.gravity);
                put(&w.gyro);
                put(&[w.pressure]);
            }
            Payload::Phone(p) => put(&p.orientation),
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::BadLength {
                expected: HEADER_LEN,
                actual: bytes.len(),
            });
        }
        let magic = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
        if magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        if bytes[4] != VERSION {
            return Err(Error::UnsupportedVersion(bytes[4]));
        }
        let device = match bytes[5] {
            0 => Device::Watch,
            1 => Device::Phone,
            other => return Err(Error::UnknownDevice(other)),
        };
        let expected = match device {
            Device::Watch => WATCH_LEN,
            Device::Phone => PHONE_LEN,
        };
        if bytes.len() != expected {
            return Err(Error::BadLength {
                expected,
                actual: bytes.len(),
            });
        }
        let seq = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        let timestamp = f64::from_le_bytes(bytes[12..20].try_into().unwrap());
        let floats: Vec<f32> = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let orientation = [floats[0], floats[1], floats[2], floats[3]];
        check_unit(&orientation)?;
        let payload = match device {
            Device::Watch => Payload::Watch(WatchReading {
                orientation,
                linear_accel: [floats[4], floats[5], floats[6]],
                gravity: [floats[7], floats[8], floats[9]],
                gyro: [floats[10], floats[11], floats[12]],
                pressure: floats[13],
            }),
            Device::Phone => Payload::Phone(PhoneReading { orientation }),
        };
        Ok(Self {
            seq,
            timestamp,
            payload,
        })
    }
}

fn check_unit(q: &[f32; 4]) -> Result<()> {
    let n = q
        .iter()
        .map(|v| (*v as f64) * (*v as f64))
        .sum::<f64>()
        .sqrt();
    if !((n - 1.0).abs() <= QUATERNION_TOLERANCE) {
        return Err(Error::NonUnitQuaternion { norm: n });
    }
    Ok(())
}

/// Widens and renormalizes a transmitted orientation.
pub fn orientation_quat(q: &[f32; 4]) -> Result<UnitQuaternion> {
    UnitQuaternion::new_normalize(q[0] as f64, q[1] as f64, q[2] as f64, q[3] as f64)
}

pub fn quat_to_f32(q: UnitQuaternion) -> [f32; 4] {
    [q.w as f32, q.x as f32, q.y as f32, q.z as f32]
}
