//! Live ingestion: datagram decoding, capture files and streaming sessions.

pub mod capture;
mod session;
pub mod wire;

pub use capture::{read_capture, write_capture, CaptureReader, CaptureWriter};
pub use session::{
    run_session, CaptureSource, DatagramSource, EstimateLine, Overflow, PacketQueue, SessionConfig,
    SessionStats, Speed, UdpSource, DEFAULT_PORT, QUEUE_CAPACITY,
};
pub use wire::{Device, Payload, PhoneReading, SensorPacket, WatchReading};
