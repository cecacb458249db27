//! Address events and their on-disk encodings.
//!
//! Two formats are handled here:
//!
//! * N-MNIST records: 5 bytes per event. Byte 0 is x, byte 1 is y, bit 7 of
//!   byte 2 is the polarity and the remaining 23 bits (byte 2 bits 6..0,
//!   bytes 3 and 4, big-endian) are the timestamp in microseconds.
//! * EVST, the portable interchange format, little-endian:
//!
//! ```text
//! offset  size  field
//!      0     4  magic "EVST"
//!      4     2  version (1)
//!      6     2  channel_count
//!      8     8  event_count
//!     16  8*n  records: t_us u32, channel u16, reserved u16 (written as 0)
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const NMNIST_SIDE: usize = 34;
pub const NMNIST_RECORD_LEN: usize = 5;

pub const EVST_MAGIC: [u8; 4] = *b"EVST";
pub const EVST_VERSION: u16 = 1;
pub const EVST_HEADER_LEN: usize = 16;
pub const EVST_RECORD_LEN: usize = 8;

/// One address event. Visual events fold `(x, y, polarity)` into the
/// channel as `p * 34 * 34 + y * 34 + x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Event {
    pub t_us: u32,
    pub channel: u16,
}

impl Event {
    pub fn new(t_us: u32, channel: u16) -> Self {
        Self { t_us, channel }
    }

    /// `(x, y, polarity)` of a visual event.
    pub fn visual_coords(&self) -> (usize, usize, u8) {
        let c = self.channel as usize;
        let plane = NMNIST_SIDE * NMNIST_SIDE;
        let p = c / plane;
        let rem = c % plane;
        (rem % NMNIST_SIDE, rem / NMNIST_SIDE, p as u8)
    }
}

pub fn visual_channel(x: usize, y: usize, polarity: u8) -> u16 {
    (polarity as usize * NMNIST_SIDE * NMNIST_SIDE + y * NMNIST_SIDE + x) as u16
}

/// Decodes an N-MNIST binary file.
pub fn decode_nmnist(bytes: &[u8]) -> Result<Vec<Event>> {
    if !bytes.len().is_multiple_of(NMNIST_RECORD_LEN) {
        return Err(Error::Corrupt {
            offset: (bytes.len() - bytes.len() % NMNIST_RECORD_LEN) as u64,
            reason: format!("truncated record: {} trailing bytes", bytes.len() % NMNIST_RECORD_LEN),
        });
    }
    let mut events = Vec::with_capacity(bytes.len() / NMNIST_RECORD_LEN);
    let mut last_t = 0u32;
    for (i, rec) in bytes.chunks_exact(NMNIST_RECORD_LEN).enumerate() {
        let offset = (i * NMNIST_RECORD_LEN) as u64;
        let (x, y) = (rec[0] as usize, rec[1] as usize);
        if x >= NMNIST_SIDE || y >= NMNIST_SIDE {
            return Err(Error::Corrupt {
                offset,
                reason: format!("coordinate ({x}, {y}) outside the {NMNIST_SIDE}x{NMNIST_SIDE} sensor"),
            });
        }
        let polarity = rec[2] >> 7;
        let t = (((rec[2] & 0x7f) as u32) << 16) | ((rec[3] as u32) << 8) | rec[4] as u32;
        if t < last_t {
            return Err(Error::Corrupt {
                offset,
                reason: format!("timestamp {t} precedes {last_t}"),
            });
        }
        last_t = t;
        events.push(Event::new(t, visual_channel(x, y, polarity)));
    }
    Ok(events)
}

/// Inverse of [`decode_nmnist`]; used to build fixtures.
pub fn encode_nmnist(events: &[Event]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(events.len() * NMNIST_RECORD_LEN);
    for e in events {
        if e.t_us >= 1 << 23 {
            return Err(Error::Format(format!("timestamp {} does not fit 23 bits", e.t_us)));
        }
        if e.channel as usize >= 2 * NMNIST_SIDE * NMNIST_SIDE {
            return Err(Error::ChannelRange {
                channel: e.channel as u32,
                channels: (2 * NMNIST_SIDE * NMNIST_SIDE) as u32,
            });
        }
        let (x, y, p) = e.visual_coords();
        out.extend_from_slice(&[
            x as u8,
            y as u8,
            (p << 7) | ((e.t_us >> 16) as u8 & 0x7f),
            (e.t_us >> 8) as u8,
            e.t_us as u8,
        ]);
    }
    Ok(out)
}

/// Decoded EVST stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    pub channel_count: u16,
    pub events: Vec<Event>,
}

fn validate_stream(channel_count: u16, events: &[Event]) -> Result<()> {
    let mut last_t = 0;
    for (i, e) in events.iter().enumerate() {
        if e.channel >= channel_count {
            return Err(Error::ChannelRange {
                channel: e.channel as u32,
                channels: channel_count as u32,
            });
        }
        if e.t_us < last_t {
            return Err(Error::Format(format!("event {i}: timestamps must be non-decreasing")));
        }
        last_t = e.t_us;
    }
    Ok(())
}

pub fn encode_evst(channel_count: u16, events: &[Event]) -> Result<Vec<u8>> {
    validate_stream(channel_count, events)?;
    let mut out = Vec::with_capacity(EVST_HEADER_LEN + events.len() * EVST_RECORD_LEN);
    out.extend_from_slice(&EVST_MAGIC);
    out.extend_from_slice(&EVST_VERSION.to_le_bytes());
    out.extend_from_slice(&channel_count.to_le_bytes());
    out.extend_from_slice(&(events.len() as u64).to_le_bytes());
    for e in events {
        out.extend_from_slice(&e.t_us.to_le_bytes());
        out.extend_from_slice(&e.channel.to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_evst(bytes: &[u8]) -> Result<EventStream> {
    if bytes.len() < EVST_HEADER_LEN {
        return Err(Error::Corrupt {
            offset: bytes.len() as u64,
            reason: "truncated header".into(),
        });
    }
    if bytes[0..4] != EVST_MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", &bytes[0..4])));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != EVST_VERSION {
        return Err(Error::Format(format!(
            "unsupported version {version} (expected {EVST_VERSION})"
        )));
    }
    let channel_count = u16::from_le_bytes([bytes[6], bytes[7]]);
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let body = &bytes[EVST_HEADER_LEN..];
    let expected = count
        .checked_mul(EVST_RECORD_LEN as u64)
        .ok_or_else(|| Error::Format(format!("event count {count} overflows")))?;
    if body.len() as u64 != expected {
        return Err(Error::Corrupt {
            offset: EVST_HEADER_LEN as u64 + body.len().min(expected as usize) as u64,
            reason: format!("header declares {count} events, body holds {} bytes", body.len()),
        });
    }
    let events: Vec<Event> = body
        .chunks_exact(EVST_RECORD_LEN)
        .map(|r| {
            Event::new(
                u32::from_le_bytes([r[0], r[1], r[2], r[3]]),
                u16::from_le_bytes([r[4], r[5]]),
            )
        })
        .collect();
    validate_stream(channel_count, &events)?;
    Ok(EventStream { channel_count, events })
}

pub fn write_portable_events(path: impl AsRef<Path>, channel_count: u16, events: &[Event]) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_evst(channel_count, events).map_err(|e| e.at_path(path))?;
    fs::write(path, bytes).map_err(|e| Error::from(e).at_path(path))
}

pub fn read_portable_events(path: impl AsRef<Path>) -> Result<EventStream> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::from(e).at_path(path))?;
    decode_evst(&bytes).map_err(|e| e.at_path(path))
}
