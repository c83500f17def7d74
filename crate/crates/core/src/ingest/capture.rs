//! Capture files: raw datagrams, each preceded by its length as `u16` LE.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use super::SensorPacket;
use crate::error::{Error, Result};

pub struct CaptureWriter<W: Write> {
    inner: W,
    count: usize,
}

impl<W: Write> CaptureWriter<W> {
    pub fn new(inner: W) -> Self {
        Self { inner, count: 0 }
    }

    pub fn write_datagram(&mut self, bytes: &[u8]) -> Result<()> {
        let len = u16::try_from(bytes.len()).map_err(|_| {
            Error::CorruptCapture(format!("datagram of {} bytes is too long", bytes.len()))
        })?;
        self.inner.write_all(&len.to_le_bytes())?;
        self.inner.write_all(bytes)?;
        self.count += 1;
        Ok(())
    }

    pub fn write_packet(&mut self, pkt: &SensorPacket) -> Result<()> {
        self.write_datagram(&pkt.encode())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

/// Streams datagrams back out of a capture.
pub struct CaptureReader<R: Read> {
    inner: R,
    offset: u64,
}

impl CaptureReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self> {
        Ok(Self::new(BufReader::new(File::open(path)?)))
    }
}

impl<R: Read> CaptureReader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner, offset: 0 }
    }

    /// The next datagram, `None` at a clean end of file.
    pub fn next_datagram(&mut self) -> Result<Option<Vec<u8>>> {
        let mut len = [0u8; 2];
        match self.inner.read_exact(&mut len[..1]) {
            Err(e) if e.kind() == ErrorKind::UnexpectedEof => return Ok(None),
            r => r?,
        }
        let truncated =
            |offset| Error::CorruptCapture(format!("truncated record at byte {offset}"));
        self.inner
            .read_exact(&mut len[1..])
            .map_err(|_| truncated(self.offset))?;
        let mut buf = vec![0u8; u16::from_le_bytes(len) as usize];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| truncated(self.offset))?;
        self.offset += 2 + buf.len() as u64;
        Ok(Some(buf))
    }
}

impl<R: Read> Iterator for CaptureReader<R> {
    type Item = Result<Vec<u8>>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_datagram().transpose()
    }
}

pub fn write_capture(path: &Path, packets: &[SensorPacket]) -> Result<()> {
    let mut w = CaptureWriter::new(BufWriter::new(File::create(path)?));
    for p in packets {
        w.write_packet(p)?;
    }
    w.finish()?;
    Ok(())
}

/// Reads and decodes a whole capture.
pub fn read_capture(path: &Path) -> Result<Vec<SensorPacket>> {
    CaptureReader::open(path)?
        .map(|d| d.and_then(|b| SensorPacket::decode(&b)))
        .collect()
}
