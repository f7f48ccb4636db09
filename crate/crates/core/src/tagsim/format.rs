//! Time-tag file formats.
//!
//! Binary, little-endian:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "BPTT"
//! 4       2     version (u16) = 1
//! 6       2     reserved, zero
//! 8       8     acquisition time in seconds (f64)
//! 16      9·n   records: channel (u8), timestamp_ps (u64)
//! ```
//!
//! CSV mirror: optional `# duration_s=<f64>` comment, header
//! `channel,timestamp_ps`, one record per line. Truth tags are never written.

use std::fmt::Write as _;

use super::{TimeTag, TimeTagStream, Truth, NO_PAIR};
use crate::error::{Error, Result};
use crate::io::{csv_rows, parse_field};

pub const TAG_FILE_MAGIC: [u8; 4] = *b"BPTT";
pub const TAG_FILE_VERSION: u16 = 1;
const HEADER_LEN: usize = 16;
const RECORD_LEN: usize = 9;
const CSV_HEADER: &str = "channel,timestamp_ps";

pub fn write_binary(stream: &TimeTagStream) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + RECORD_LEN * stream.len());
    out.extend_from_slice(&TAG_FILE_MAGIC);
    out.extend_from_slice(&TAG_FILE_VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&stream.duration_s.to_le_bytes());
    for e in &stream.events {
        out.push(e.channel);
        out.extend_from_slice(&e.timestamp_ps.to_le_bytes());
    }
    out
}

fn unknown(channel: u8, timestamp_ps: u64) -> TimeTag {
    TimeTag {
        timestamp_ps,
        channel,
        truth: Truth::Unknown,
        pair_id: NO_PAIR,
    }
}

/// Parses a binary tag file. Does not check ordering; the histogrammer does.
pub fn read_binary(bytes: &[u8], source_name: &str) -> Result<TimeTagStream> {
    let parse_err = |location: String, message: String| Error::Parse {
        source_name: source_name.to_owned(),
        location,
        message,
    };
    if bytes.len() < HEADER_LEN {
        return Err(parse_err("byte 0".into(), format!("file shorter than the {HEADER_LEN}-byte header")));
    }
    if bytes[..4] != TAG_FILE_MAGIC {
        return Err(parse_err("byte 0".into(), "bad magic, expected \"BPTT\"".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != TAG_FILE_VERSION {
        return Err(parse_err("byte 4".into(), format!("unsupported version {version}")));
    }
    let duration_s = f64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let body = &bytes[HEADER_LEN..];
    if body.len() % RECORD_LEN != 0 {
        return Err(parse_err(
            format!("byte {}", HEADER_LEN + body.len() / RECORD_LEN * RECORD_LEN),
            "truncated record".into(),
        ));
    }
    let mut events = Vec::with_capacity(body.len() / RECORD_LEN);
    for (i, rec) in body.chunks_exact(RECORD_LEN).enumerate() {
        let channel = rec[0];
        if channel > 1 {
            return Err(parse_err(
                format!("record {i} (byte {})", HEADER_LEN + i * RECORD_LEN),
                format!("channel {channel} is not 0 or 1"),
            ));
        }
        events.push(unknown(channel, u64::from_le_bytes(rec[1..].try_into().expect("8 bytes"))));
    }
    Ok(TimeTagStream::new(events, duration_s))
}

/// Streams windows into a binary tag file while keeping it globally sorted.
///
/// Fibre delays and jitter can push a tag past the start of the next window,
/// so each window is held back and merged with the next one. Only tags older
/// than the next window's first tag are written.
pub struct BinaryTagWriter<W: std::io::Write> {
    out: W,
    pending: Vec<TimeTag>,
    last_written: u64,
    written: u64,
}

impl<W: std::io::Write> BinaryTagWriter<W> {
    pub fn new(mut out: W, duration_s: f64) -> std::io::Result<Self> {
        out.write_all(&TAG_FILE_MAGIC)?;
        out.write_all(&TAG_FILE_VERSION.to_le_bytes())?;
        out.write_all(&0u16.to_le_bytes())?;
        out.write_all(&duration_s.to_le_bytes())?;
        Ok(Self {
            out,
            pending: Vec::new(),
            last_written: 0,
            written: 0,
        })
    }

    fn emit(&mut self, upto: usize) -> std::io::Result<()> {
        let mut buf = Vec::with_capacity(RECORD_LEN * upto);
        for e in self.pending.drain(..upto) {
            buf.push(e.channel);
            buf.extend_from_slice(&e.timestamp_ps.to_le_bytes());
            self.last_written = e.timestamp_ps;
        }
        self.written += (buf.len() / RECORD_LEN) as u64;
        self.out.write_all(&buf)
    }

    /// Adds one time-sorted window.
    pub fn push(&mut self, window: &TimeTagStream) -> Result<()> {
        let Some(first) = window.events.first() else { return Ok(()) };
        if self.written > 0 && first.timestamp_ps < self.last_written {
            return Err(Error::Unsorted {
                index: 0,
                previous: self.last_written,
                current: first.timestamp_ps,
            });
        }
        let cut = self.pending.partition_point(|e| e.timestamp_ps < first.timestamp_ps);
        self.emit(cut).map_err(|e| Error::io("tag stream", e))?;
        self.pending.extend_from_slice(&window.events);
        self.pending.sort_by_key(|e| (e.timestamp_ps, e.channel));
        Ok(())
    }

    /// Writes what is left and returns the inner writer and the record count.
    pub fn finish(mut self) -> Result<(W, u64)> {
        let n = self.pending.len();
        self.emit(n).map_err(|e| Error::io("tag stream", e))?;
        self.out.flush().map_err(|e| Error::io("tag stream", e))?;
        Ok((self.out, self.written))
    }
}

pub fn write_csv(stream: &TimeTagStream) -> String {
    let mut out = String::with_capacity(24 * stream.len() + 64);
    let _ = writeln!(out, "# duration_s={}", stream.duration_s);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for e in &stream.events {
        let _ = writeln!(out, "{},{}", e.channel, e.timestamp_ps);
    }
    out
}

pub fn read_csv(src: &str, source_name: &str) -> Result<TimeTagStream> {
    let duration_s = src
        .lines()
        .filter_map(|l| l.trim().strip_prefix('#'))
        .find_map(|c| c.trim().strip_prefix("duration_s="))
        .map(|v| {
            v.trim().parse::<f64>().map_err(|e| Error::Parse {
                source_name: source_name.to_owned(),
                location: "duration_s comment".into(),
                message: e.to_string(),
            })
        })
        .transpose()?
        .unwrap_or(0.0);
    let mut events = Vec::new();
    for (line, fields) in csv_rows(src, source_name, CSV_HEADER)? {
        let channel: u8 = parse_field(fields.first(), source_name, line, "channel")?;
        let ts: u64 = parse_field(fields.get(1), source_name, line, "timestamp_ps")?;
        if channel > 1 {
            return Err(Error::Parse {
                source_name: source_name.to_owned(),
                location: format!("line {line}, column 1"),
                message: format!("channel {channel} is not 0 or 1"),
            });
        }
        events.push(unknown(channel, ts));
    }
    Ok(TimeTagStream::new(events, duration_s))
}
