//! Streaming sessions: a receiver thread decodes datagrams into a bounded
//! queue, the calling thread assembles observations and runs the filter.

use std::collections::VecDeque;
use std::io::{Read, Write};
use std::net::{SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::capture::CaptureReader;
use super::SensorPacket;
use crate::data::Assembler;
use crate::data::PoseState;
use crate::enkf::FilterEstimate;
use crate::error::{Error, Result};
use crate::kinematics::{forward_kinematics, ArmConfig};
use crate::models::{FilterConfig, ModelBundle, PoseFilter};

pub const DEFAULT_PORT: u16 = 46000;
pub const QUEUE_CAPACITY: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Overflow {
    /// Discard the oldest queued packet (live input).
    DropOldest,
    /// Wait for room (replay, where nothing should be lost).
    Block,
}

#[derive(Debug)]
struct QueueState {
    buf: VecDeque<SensorPacket>,
    closed: bool,
    dropped: u64,
}

/// Bounded single-producer/single-consumer packet queue.
#[derive(Debug)]
pub struct PacketQueue {
    state: Mutex<QueueState>,
    ready: Condvar,
    capacity: usize,
    overflow: Overflow,
}

impl PacketQueue {
    pub fn new(capacity: usize, overflow: Overflow) -> Self {
        Self {
            state: Mutex::new(QueueState {
                buf: VecDeque::with_capacity(capacity),
                closed: false,
                dropped: 0,
            }),
            ready: Condvar::new(),
            capacity: capacity.max(1),
            overflow,
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, QueueState> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Enqueues `pkt`; false once the queue is closed.
    pub fn push(&self, pkt: SensorPacket) -> bool {
        let mut s = self.lock();
        while self.overflow == Overflow::Block && s.buf.len() >= self.capacity && !s.closed {
            s = self.ready.wait(s).unwrap_or_else(|p| p.into_inner());
        }
        if s.closed {
            return false;
        }
        if s.buf.len() >= self.capacity {
            s.buf.pop_front();
            s.dropped += 1;
        }
        s.buf.push_back(pkt);
        self.ready.notify_all();
        true
    }

    /// Next packet; waits until one arrives or the queue is closed and empty.
    pub fn pop(&self) -> Option<SensorPacket> {
        let mut s = self.lock();
        loop {
            if let Some(p) = s.buf.pop_front() {
                self.ready.notify_all();
                return Some(p);
            }
            if s.closed {
                return None;
            }
            s = self.ready.wait(s).unwrap_or_else(|p| p.into_inner());
        }
    }

    pub fn close(&self) {
        self.lock().closed = true;
        self.ready.notify_all();
    }

    pub fn len(&self) -> usize {
        self.lock().buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dropped(&self) -> u64 {
        self.lock().dropped
    }
}

/// Where datagrams come from. `Ok(None)` ends the stream.
pub trait DatagramSource: Send {
    fn next_datagram(&mut self, shutdown: &AtomicBool) -> Result<Option<Vec<u8>>>;

    /// Pace delivery by packet timestamps.
    fn realtime(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speed {
    Realtime,
    Max,
}

pub struct CaptureSource<R: Read + Send> {
    reader: CaptureReader<R>,
    speed: Speed,
}

impl<R: Read + Send> CaptureSource<R> {
    pub fn new(reader: CaptureReader<R>, speed: Speed) -> Self {
        Self { reader, speed }
    }
}

impl<R: Read + Send> DatagramSource for CaptureSource<R> {
    fn next_datagram(&mut self, _: &AtomicBool) -> Result<Option<Vec<u8>>> {
        self.reader.next_datagram()
    }

    fn realtime(&self) -> bool {
        self.speed == Speed::Realtime
    }
}

pub struct UdpSource {
    socket: UdpSocket,
    buf: Vec<u8>,
}

impl UdpSource {
    pub fn bind(addr: SocketAddr) -> Result<Self> {
        let socket = UdpSocket::bind(addr)?;
        // Wake periodically to notice shutdown requests.
        socket.set_read_timeout(Some(Duration::from_millis(100)))?;
        Ok(Self {
            socket,
            buf: vec![0; 2048],
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.socket.local_addr()?)
    }
}

impl DatagramSource for UdpSource {
    fn next_datagram(&mut self, shutdown: &AtomicBool) -> Result<Option<Vec<u8>>> {
        loop {
            if shutdown.load(Ordering::Relaxed) {
                return Ok(None);
            }
            match self.socket.recv(&mut self.buf) {
                Ok(n) => return Ok(Some(self.buf[..n].to_vec())),
                Err(e)
                    if matches!(
                        e.kind(),
                        std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut
                    ) => {}
                Err(e) => return Err(e.into()),
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub filter: FilterConfig,
    pub arm: ArmConfig,
    /// Interval assumed when watch timestamps do not advance.
    pub nominal_dt: f64,
    pub queue_capacity: usize,
    pub overflow: Overflow,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            filter: FilterConfig::default(),
            arm: ArmConfig::default(),
            nominal_dt: 1.0 / 80.0,
            queue_capacity: QUEUE_CAPACITY,
            overflow: Overflow::DropOldest,
        }
    }
}

/// One output line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateLine {
    pub t: f64,
    pub mean: Vec<f64>,
    pub spread: Vec<f64>,
    pub elbow: Option<[f64; 3]>,
    pub wrist: Option<[f64; 3]>,
    pub degraded: bool,
    pub warm_up: bool,
}

impl EstimateLine {
    pub fn new(est: &FilterEstimate, arm: &ArmConfig) -> Self {
        let pose = PoseState::from_slice(est.mean.as_slice())
            .and_then(|s| forward_kinematics(&s.upper, &s.lower, s.heading, arm))
            .ok();
        Self {
            t: est.timestamp,
            mean: est.mean.iter().copied().collect(),
            spread: est.spread.iter().copied().collect(),
            elbow: pose.map(|p| p.elbow.into()),
            wrist: pose.map(|p| p.wrist.into()),
            degraded: est.degraded,
            warm_up: est.warm_up,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionStats {
    pub datagrams: u64,
    pub decode_errors: u64,
    pub dropped: u64,
    pub out_of_order: u64,
    pub before_calibration: u64,
    pub estimates: u64,
    pub degraded: u64,
    pub seconds: f64,
}

impl SessionStats {
    /// Estimates per second of wall time.
    pub fn rate(&self) -> f64 {
        if self.seconds > 0.0 {
            self.estimates as f64 / self.seconds
        } else {
            f64::INFINITY
        }
    }
}

fn receive(
    source: &mut dyn DatagramSource,
    queue: &PacketQueue,
    shutdown: &AtomicBool,
    stats: &mut SessionStats,
) -> Result<()> {
    let start = Instant::now();
    let mut first_ts = None;
    while !shutdown.load(Ordering::Relaxed) {
        let Some(bytes) = source.next_datagram(shutdown)? else {
            break;
        };
        stats.datagrams += 1;
        let pkt = match SensorPacket::decode(&bytes) {
            Ok(p) => p,
            Err(e) => {
                stats.decode_errors += 1;
                log::warn!("dropping datagram: {e}");
                continue;
            }
        };
        if source.realtime() {
            let t0 = *first_ts.get_or_insert(pkt.timestamp);
            let due = Duration::from_secs_f64((pkt.timestamp - t0).max(0.0));
            while start.elapsed() < due && !shutdown.load(Ordering::Relaxed) {
                thread::sleep((due - start.elapsed()).min(Duration::from_millis(50)));
            }
        }
        if !queue.push(pkt) {
            break;
        }
    }
    Ok(())
}

/// Runs the receiver and the filter loop until the source ends or
/// `shutdown` is set, writing one JSON line per estimate to `sink`.
/// Queued packets left at shutdown are discarded.
pub fn run_session(
    bundle: &ModelBundle,
    source: &mut dyn DatagramSource,
    cfg: &SessionConfig,
    sink: &mut dyn Write,
    shutdown: &AtomicBool,
) -> Result<SessionStats> {
    if !(cfg.nominal_dt > 0.0) {
        return Err(Error::InvalidConfig(
            "nominal interval must be positive".into(),
        ));
    }
    let mut filter = PoseFilter::new(bundle, cfg.filter)?;
    let queue = PacketQueue::new(cfg.queue_capacity, cfg.overflow);
    let start = Instant::now();
    let mut rx_stats = SessionStats::default();
    let mut stats = SessionStats::default();

    let (rx, out) = thread::scope(|scope| {
        let rx = scope.spawn(|| {
            let r = receive(source, &queue, shutdown, &mut rx_stats);
            queue.close();
            r
        });
        let out = (|| -> Result<()> {
            let mut assembler = Assembler::new(cfg.nominal_dt);
            while !shutdown.load(Ordering::Relaxed) {
                let Some(pkt) = queue.pop() else { break };
                let Some(a) = assembler.push(&pkt)? else {
                    continue;
                };
                let est = filter.step(&a.obs, a.timestamp, a.degraded())?;
                let mut line = serde_json::to_vec(&EstimateLine::new(&est, &cfg.arm))?;
                line.push(b'\n');
                sink.write_all(&line)?;
                stats.estimates += 1;
                stats.degraded += est.degraded as u64;
            }
            let a = assembler.stats();
            stats.out_of_order = a.out_of_order;
            stats.before_calibration = a.before_calibration;
            Ok(())
        })();
        queue.close();
        (rx.join(), out)
    });
    sink.flush()?;
    out?;
    rx.map_err(|_| Error::Numerical("receiver thread panicked".into()))??;
    stats.datagrams = rx_stats.datagrams;
    stats.decode_errors = rx_stats.decode_errors;
    stats.dropped = queue.dropped();
    stats.seconds = start.elapsed().as_secs_f64();
    Ok(stats)
}
