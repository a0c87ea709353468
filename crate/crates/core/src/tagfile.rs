//! Binary time-tag files.
//!
//! Little-endian. A 24-byte header (`ITG1`, version `u32`, resolution in
//! ps `u32`, channel count `u8`, three reserved bytes, record count `u64`)
//! followed by 9-byte records: channel `u8`, timestamp `u64` in ps.

use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::optics::TimeTagRecord;

pub const MAGIC: [u8; 4] = *b"ITG1";
pub const VERSION: u32 = 1;
pub const RESOLUTION_PS: u32 = 1;
pub const HEADER_LEN: usize = 24;
pub const RECORD_LEN: usize = 9;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimeTagFile {
    pub channel_count: u8,
    records: Vec<TimeTagRecord>,
}

impl TimeTagFile {
    /// Checks that records are time-ordered and use known channels.
    pub fn new(channel_count: u8, records: Vec<TimeTagRecord>) -> Result<Self> {
        if let Some(i) = records.windows(2).position(|w| w[1].time < w[0].time) {
            return Err(Error::Unsorted { index: i + 1 });
        }
        if let Some(r) = records.iter().find(|r| r.channel >= channel_count) {
            return Err(Error::invalid(
                "records",
                format!("channel {} outside 0..{channel_count}", r.channel),
            ));
        }
        Ok(Self { channel_count, records })
    }

    pub fn records(&self) -> &[TimeTagRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<TimeTagRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn header(&self) -> [u8; HEADER_LEN] {
        let mut h = [0u8; HEADER_LEN];
        h[0..4].copy_from_slice(&MAGIC);
        h[4..8].copy_from_slice(&VERSION.to_le_bytes());
        h[8..12].copy_from_slice(&RESOLUTION_PS.to_le_bytes());
        h[12] = self.channel_count;
        h[16..24].copy_from_slice(&(self.records.len() as u64).to_le_bytes());
        h
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(&self.header())?;
        let mut rec = [0u8; RECORD_LEN];
        for r in &self.records {
            rec[0] = r.channel;
            rec[1..].copy_from_slice(&r.time.to_le_bytes());
            w.write_all(&rec)?;
        }
        w.flush()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + RECORD_LEN * self.records.len());
        self.write_to(&mut out).expect("writing to memory");
        out
    }

    /// Parses a complete file image; `path` only labels errors.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |offset: usize, reason: String| Error::TagFile {
            path: path.to_path_buf(),
            offset: offset as u64,
            reason,
        };
        if bytes.len() < HEADER_LEN {
            return Err(bad(
                bytes.len(),
                format!("truncated header: {} of {HEADER_LEN} bytes", bytes.len()),
            ));
        }
        if bytes[0..4] != MAGIC {
            return Err(bad(0, format!("bad magic {:?}", &bytes[0..4])));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let version = u32_at(4);
        if version != VERSION {
            return Err(bad(4, format!("unsupported version {version}")));
        }
        let resolution = u32_at(8);
        if resolution != RESOLUTION_PS {
            return Err(bad(8, format!("unsupported resolution {resolution} ps")));
        }
        let channel_count = bytes[12];
        let count = u64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes"));
        let body = bytes.len() - HEADER_LEN;
        let expected = count.checked_mul(RECORD_LEN as u64);
        if expected != Some(body as u64) {
            return Err(bad(
                16,
                format!("header declares {count} records but {body} bytes of records follow"),
            ));
        }
        let mut records = Vec::with_capacity(count as usize);
        let mut last = 0u64;
        for (i, chunk) in bytes[HEADER_LEN..].chunks_exact(RECORD_LEN).enumerate() {
            let offset = HEADER_LEN + i * RECORD_LEN;
            let channel = chunk[0];
            if channel >= channel_count {
                return Err(bad(
                    offset,
                    format!("record {i}: channel {channel} outside 0..{channel_count}"),
                ));
            }
            let time = u64::from_le_bytes(chunk[1..].try_into().expect("8 bytes"));
            if time < last {
                return Err(bad(offset + 1, format!("record {i}: timestamp {time} before {last}")));
            }
            last = time;
            records.push(TimeTagRecord { time, channel });
        }
        Ok(Self { channel_count, records })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Writes through a temporary file in the target directory and renames
    /// it into place.
    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomically(path, |w| self.write_to(w))
    }
}

/// Creates `path` via a sibling temporary file so readers never see a
/// partial file.
pub fn write_atomically(
    path: &Path,
    fill: impl FnOnce(&mut BufWriter<&mut std::fs::File>) -> std::io::Result<()>,
) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        fill(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
