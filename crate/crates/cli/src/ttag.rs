//! The binary `TTAG` time-tag format.
//!
//! A 24-byte little-endian header (`TTAG`, version, channel count, duration
//! in ps, record count) followed by 16-byte records: u64 timestamp, u8
//! channel, seven zero bytes. Readers report the byte offset of the first
//! problem they find.

use std::fs::File;
use std::io::{self, BufReader, Read, Write};
use std::path::Path;

use nvlink_core::{TimeTag, TimeTagStream};
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"TTAG";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: u64 = 24;
pub const RECORD_LEN: u64 = 16;

#[derive(Debug, Error)]
pub enum TtagError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("byte {offset}: {message}")]
    Format { offset: u64, message: String },
}

impl TtagError {
    fn at(offset: u64, message: impl Into<String>) -> Self {
        Self::Format {
            offset,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TtagHeader {
    pub n_channels: u16,
    pub duration_ps: u64,
    pub n_records: u64,
}

/// Reads as many bytes as are available up to `buf.len()`.
fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

/// Streaming record reader; validates order, channels and reserved bytes as it goes.
pub struct TtagReader<R> {
    inner: R,
    header: TtagHeader,
    index: u64,
    last: Option<(u64, u8)>,
    done: bool,
}

impl TtagReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self, TtagError> {
        Self::new(BufReader::with_capacity(1 << 20, File::open(path)?))
    }
}

impl<R: Read> TtagReader<R> {
    pub fn new(mut inner: R) -> Result<Self, TtagError> {
        let mut h = [0u8; HEADER_LEN as usize];
        let got = read_full(&mut inner, &mut h)?;
        if got < h.len() {
            return Err(TtagError::at(got as u64, "truncated header"));
        }
        if h[0..4] != MAGIC {
            return Err(TtagError::at(0, "missing TTAG magic"));
        }
        let version = u16::from_le_bytes([h[4], h[5]]);
        if version != VERSION {
            return Err(TtagError::at(4, format!("unsupported version {version}")));
        }
        let header = TtagHeader {
            n_channels: u16::from_le_bytes([h[6], h[7]]),
            duration_ps: u64::from_le_bytes(h[8..16].try_into().unwrap()),
            n_records: u64::from_le_bytes(h[16..24].try_into().unwrap()),
        };
        if header.n_channels > 256 {
            return Err(TtagError::at(
                6,
                format!("{} channels do not fit a u8 channel field", header.n_channels),
            ));
        }
        Ok(Self {
            inner,
            header,
            index: 0,
            last: None,
            done: false,
        })
    }

    pub fn header(&self) -> TtagHeader {
        self.header
    }

    fn next_record(&mut self) -> Result<Option<TimeTag>, TtagError> {
        let offset = HEADER_LEN + self.index * RECORD_LEN;
        if self.index == self.header.n_records {
            let mut probe = [0u8; 1];
            if read_full(&mut self.inner, &mut probe)? > 0 {
                return Err(TtagError::at(
                    offset,
                    format!("trailing data after the {} declared records", self.header.n_records),
                ));
            }
            return Ok(None);
        }
        let mut rec = [0u8; RECORD_LEN as usize];
        let got = read_full(&mut self.inner, &mut rec)?;
        if got < rec.len() {
            return Err(TtagError::at(
                offset + got as u64,
                format!(
                    "file ends inside record {} of {} declared",
                    self.index, self.header.n_records
                ),
            ));
        }
        let t = u64::from_le_bytes(rec[0..8].try_into().unwrap());
        let channel = rec[8];
        if channel as u16 >= self.header.n_channels {
            return Err(TtagError::at(
                offset + 8,
                format!("channel {channel} but the header declares {}", self.header.n_channels),
            ));
        }
        if let Some(j) = rec[9..].iter().position(|&b| b != 0) {
            return Err(TtagError::at(offset + 9 + j as u64, "reserved byte is not zero"));
        }
        if let Some(last) = self.last {
            if (t, channel) < last {
                return Err(TtagError::at(
                    offset,
                    format!("record {} at t = {t} ps is out of order", self.index),
                ));
            }
        }
        self.last = Some((t, channel));
        self.index += 1;
        Ok(Some(TimeTag::new(channel, t)))
    }
}

impl<R: Read> Iterator for TtagReader<R> {
    type Item = Result<TimeTag, TtagError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let r = self.next_record();
        if !matches!(r, Ok(Some(_))) {
            self.done = true;
        }
        r.transpose()
    }
}

/// Reads a whole file into memory.
pub fn read_stream<R: Read>(reader: R) -> Result<TimeTagStream, TtagError> {
    let mut r = TtagReader::new(reader)?;
    let h = r.header();
    let mut tags = Vec::with_capacity(h.n_records.min(1 << 24) as usize);
    for tag in &mut r {
        tags.push(tag?);
    }
    // The reader already enforced order.
    Ok(TimeTagStream::new(tags, h.duration_ps, h.n_channels).expect("reader checks ordering"))
}

pub fn read_file(path: &Path) -> Result<TimeTagStream, TtagError> {
    read_stream(BufReader::with_capacity(1 << 20, File::open(path)?))
}

pub fn write_stream<W: Write>(w: &mut W, stream: &TimeTagStream) -> io::Result<()> {
    let mut header = [0u8; HEADER_LEN as usize];
    header[0..4].copy_from_slice(&MAGIC);
    header[4..6].copy_from_slice(&VERSION.to_le_bytes());
    header[6..8].copy_from_slice(&stream.n_channels().to_le_bytes());
    header[8..16].copy_from_slice(&stream.duration_ps().to_le_bytes());
    header[16..24].copy_from_slice(&(stream.len() as u64).to_le_bytes());
    w.write_all(&header)?;
    let mut rec = [0u8; RECORD_LEN as usize];
    for tag in stream.tags() {
        rec[0..8].copy_from_slice(&tag.t.to_le_bytes());
        rec[8] = tag.channel;
        w.write_all(&rec)?;
    }
    Ok(())
}

pub fn encode(stream: &TimeTagStream) -> Vec<u8> {
    let mut out = Vec::with_capacity((HEADER_LEN + RECORD_LEN * stream.len() as u64) as usize);
    write_stream(&mut out, stream).expect("writing to a Vec cannot fail");
    out
}
