//! Classic libpcap container (microsecond resolution, either byte order).

use std::path::Path;

use thiserror::Error;

pub const MAGIC_USEC: u32 = 0xa1b2_c3d4;
pub const MAGIC_USEC_SWAPPED: u32 = 0xd4c3_b2a1;
pub const LINKTYPE_IEEE802_11_RADIOTAP: u32 = 127;

const GLOBAL_HEADER_LEN: usize = 24;
const RECORD_HEADER_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum PcapError {
    #[error("not a classic microsecond pcap file (magic {0:#010x})")]
    BadMagic(u32),
    #[error("record at byte {offset} extends past end of file")]
    Truncated { offset: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One captured link-layer frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CaptureRecord {
    /// Microseconds since the Unix epoch.
    pub timestamp_us: i64,
    /// Captured bytes (radiotap-prefixed for monitor-mode captures).
    pub payload: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Capture {
    pub linktype: u32,
    pub records: Vec<CaptureRecord>,
}

pub fn read_pcap(path: &Path) -> Result<Capture, PcapError> {
    parse_pcap(&std::fs::read(path)?)
}

pub fn parse_pcap(buf: &[u8]) -> Result<Capture, PcapError> {
    if buf.len() < 4 {
        return Err(PcapError::BadMagic(0));
    }
    let magic_le = u32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]);
    let big_endian = match magic_le {
        MAGIC_USEC => false,
        MAGIC_USEC_SWAPPED => true,
        other => return Err(PcapError::BadMagic(other)),
    };
    if buf.len() < GLOBAL_HEADER_LEN {
        return Err(PcapError::Truncated { offset: 0 });
    }
    let rd = |off: usize| -> u32 {
        let b = [buf[off], buf[off + 1], buf[off + 2], buf[off + 3]];
        if big_endian {
            u32::from_be_bytes(b)
        } else {
            u32::from_le_bytes(b)
        }
    };
    let linktype = rd(20);
    let mut records = Vec::new();
    let mut pos = GLOBAL_HEADER_LEN;
    while pos < buf.len() {
        if pos + RECORD_HEADER_LEN > buf.len() {
            return Err(PcapError::Truncated { offset: pos });
        }
        let ts_sec = rd(pos) as i64;
        let ts_usec = rd(pos + 4) as i64;
        let caplen = rd(pos + 8) as usize;
        let start = pos + RECORD_HEADER_LEN;
        let end = start
            .checked_add(caplen)
            .filter(|&e| e <= buf.len())
            .ok_or(PcapError::Truncated { offset: pos })?;
        records.push(CaptureRecord {
            timestamp_us: ts_sec * 1_000_000 + ts_usec,
            payload: buf[start..end].to_vec(),
        });
        pos = end;
    }
    Ok(Capture { linktype, records })
}

/// Serializes records as a little-endian microsecond pcap.
pub fn write_pcap_bytes(linktype: u32, records: &[CaptureRecord]) -> Vec<u8> {
    let mut out = Vec::with_capacity(GLOBAL_HEADER_LEN + records.len() * 64);
    out.extend_from_slice(&MAGIC_USEC.to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&4u16.to_le_bytes());
    out.extend_from_slice(&0i32.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&65_535u32.to_le_bytes());
    out.extend_from_slice(&linktype.to_le_bytes());
    for r in records {
        let sec = r.timestamp_us.div_euclid(1_000_000) as u32;
        let usec = r.timestamp_us.rem_euclid(1_000_000) as u32;
        out.extend_from_slice(&sec.to_le_bytes());
        out.extend_from_slice(&usec.to_le_bytes());
        out.extend_from_slice(&(r.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&(r.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&r.payload);
    }
    out
}

pub fn write_pcap(path: &Path, linktype: u32, records: &[CaptureRecord]) -> Result<(), PcapError> {
    std::fs::write(path, write_pcap_bytes(linktype, records))?;
    Ok(())
}
