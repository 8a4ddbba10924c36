//! IEEE 802.11 frame decoding: VHT compressed beamforming reports carried in
//! Action No-ACK management frames, plus the (src, dst IP) metadata of
//! unprotected data frames.
//!
//! Frames are expected radiotap-prefixed, as produced by monitor-mode
//! captures. The radiotap header is skipped via its length field.

use std::fmt;
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::pcap::CaptureRecord;

const FC_TYPE_MGMT: u8 = 0;
const FC_TYPE_DATA: u8 = 2;
const SUBTYPE_ACTION_NOACK: u8 = 14;
const CATEGORY_VHT: u8 = 21;
const VHT_ACTION_COMPRESSED_BF: u8 = 0;
const MGMT_HEADER_LEN: usize = 24;
const MIMO_CONTROL_LEN: usize = 3;

pub const MAX_ANTENNAS: usize = 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrameError {
    #[error("malformed beamforming report: {0}")]
    MalformedReport(String),
    #[error("quantized angle {q} out of range for {bits} bits")]
    QOutOfRange { q: u32, bits: u32 },
    #[error("frame cannot be encoded: {0}")]
    Invalid(String),
}

/// 48-bit IEEE MAC address.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MacAddr(pub [u8; 6]);

impl MacAddr {
    fn from_slice(b: &[u8]) -> Self {
        let mut m = [0u8; 6];
        m.copy_from_slice(&b[..6]);
        Self(m)
    }
}

impl fmt::Display for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.0;
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            b[0], b[1], b[2], b[3], b[4], b[5]
        )
    }
}

impl FromStr for MacAddr {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split([':', '-']).collect();
        if parts.len() != 6 {
            return Err(format!("`{s}` is not a MAC address"));
        }
        let mut m = [0u8; 6];
        for (slot, p) in m.iter_mut().zip(parts) {
            *slot = u8::from_str_radix(p, 16).map_err(|_| format!("`{s}` is not a MAC address"))?;
        }
        Ok(Self(m))
    }
}

impl Serialize for MacAddr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MacAddr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Angle quantization codebook, selected by the MIMO Control feedback type and
/// codebook information bits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Codebook {
    /// SU, codebook info 0: psi 2 bits, phi 4 bits.
    SuLo,
    /// SU, codebook info 1: psi 4 bits, phi 6 bits.
    SuHi,
    /// MU, codebook info 0: psi 5 bits, phi 7 bits.
    MuLo,
    /// MU, codebook info 1: psi 7 bits, phi 9 bits.
    MuHi,
}

impl Codebook {
    pub const ALL: [Codebook; 4] = [Codebook::SuLo, Codebook::SuHi, Codebook::MuLo, Codebook::MuHi];

    pub fn psi_bits(self) -> u32 {
        match self {
            Codebook::SuLo => 2,
            Codebook::SuHi => 4,
            Codebook::MuLo => 5,
            Codebook::MuHi => 7,
        }
    }

    pub fn phi_bits(self) -> u32 {
        self.psi_bits() + 2
    }

    pub fn is_mu(self) -> bool {
        matches!(self, Codebook::MuLo | Codebook::MuHi)
    }

    fn from_bits(mu: bool, info: bool) -> Self {
        match (mu, info) {
            (false, false) => Codebook::SuLo,
            (false, true) => Codebook::SuHi,
            (true, false) => Codebook::MuLo,
            (true, true) => Codebook::MuHi,
        }
    }

    fn info_bit(self) -> bool {
        matches!(self, Codebook::SuHi | Codebook::MuHi)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AngleKind {
    Phi,
    Psi,
}

/// Number of (phi, psi) angles per subcarrier for an `nr x nc` steering
/// matrix; both counts are equal.
pub fn angles_per_kind(nr: usize, nc: usize) -> usize {
    (1..=nc.min(nr.saturating_sub(1))).map(|i| nr - i).sum()
}

/// Number of reported subcarriers for a channel width (MHz) and grouping Ng.
pub fn subcarrier_count(width_mhz: u16, grouping: u8) -> Option<usize> {
    let n = match (width_mhz, grouping) {
        (20, 1) => 52,
        (20, 2) => 30,
        (20, 4) => 16,
        (40, 1) => 108,
        (40, 2) => 58,
        (40, 4) => 30,
        (80, 1) => 234,
        (80, 2) => 122,
        (80, 4) => 62,
        (160, 1) => 468,
        (160, 2) => 244,
        (160, 4) => 124,
        _ => return None,
    };
    Some(n)
}

/// Dequantizes a codebook index to radians.
///
/// phi: `q*pi/2^(b-1) + pi/2^b` in (0, 2pi); psi: `q*pi/2^(b+1) + pi/2^(b+2)`
/// in (0, pi/2).
pub fn angle_dequantize(q: u32, bits: u32, kind: AngleKind) -> Result<f64, FrameError> {
    if bits == 0 || bits > 16 || q >= (1u32 << bits) {
        return Err(FrameError::QOutOfRange { q, bits });
    }
    let pi = std::f64::consts::PI;
    let q = q as f64;
    Ok(match kind {
        AngleKind::Phi => q * pi / 2f64.powi(bits as i32 - 1) + pi / 2f64.powi(bits as i32),
        AngleKind::Psi => q * pi / 2f64.powi(bits as i32 + 1) + pi / 2f64.powi(bits as i32 + 2),
    })
}

/// One decoded VHT compressed beamforming report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BfiFrame {
    pub timestamp_us: i64,
    pub src_mac: MacAddr,
    /// Nr: rows of V (transmit antennas at the beamformer).
    pub n_rows: usize,
    /// Nc: columns of V (spatial streams).
    pub n_cols: usize,
    pub channel_width_mhz: u16,
    /// Subcarrier grouping Ng (1, 2 or 4).
    pub grouping: u8,
    pub codebook: Codebook,
    pub dialog_token: u8,
    pub n_subcarriers: usize,
    /// Quantized phi angles, subcarrier-major, standard order within a subcarrier.
    pub phi_q: Vec<u16>,
    /// Quantized psi angles, same layout as `phi_q`.
    pub psi_q: Vec<u16>,
    /// Average SNR per space-time stream, dB.
    pub stream_snr_db: Vec<f64>,
}

impl BfiFrame {
    pub fn angles_per_subcarrier(&self) -> usize {
        angles_per_kind(self.n_rows, self.n_cols)
    }

    /// The (phi, psi) slices of one subcarrier.
    pub fn subcarrier_angles(&self, sc: usize) -> (&[u16], &[u16]) {
        let n = self.angles_per_subcarrier();
        (&self.phi_q[sc * n..(sc + 1) * n], &self.psi_q[sc * n..(sc + 1) * n])
    }

    /// Checks the structural invariants (counts and ranges).
    pub fn validate(&self) -> Result<(), FrameError> {
        if !(1..=MAX_ANTENNAS).contains(&self.n_rows) || !(1..=MAX_ANTENNAS).contains(&self.n_cols) {
            return Err(FrameError::Invalid(format!(
                "{}x{} exceeds {MAX_ANTENNAS}x{MAX_ANTENNAS}",
                self.n_rows, self.n_cols
            )));
        }
        if self.n_cols > self.n_rows {
            return Err(FrameError::Invalid("more streams than antennas".into()));
        }
        let ns = subcarrier_count(self.channel_width_mhz, self.grouping).ok_or_else(|| {
            FrameError::Invalid(format!(
                "no subcarrier table for {} MHz, Ng={}",
                self.channel_width_mhz, self.grouping
            ))
        })?;
        let want = ns * self.angles_per_subcarrier();
        if self.n_subcarriers != ns || self.phi_q.len() != want || self.psi_q.len() != want {
            return Err(FrameError::Invalid("angle count does not match Nr, Nc, Ns".into()));
        }
        if self.stream_snr_db.len() != self.n_cols {
            return Err(FrameError::Invalid("one SNR per stream required".into()));
        }
        if self.dialog_token > 0x3f {
            return Err(FrameError::Invalid("sounding dialog token is a 6-bit field".into()));
        }
        let (pb, sb) = (self.codebook.phi_bits(), self.codebook.psi_bits());
        if let Some(&q) = self.phi_q.iter().find(|&&q| q as u32 >= 1 << pb) {
            return Err(FrameError::QOutOfRange { q: q as u32, bits: pb });
        }
        if let Some(&q) = self.psi_q.iter().find(|&&q| q as u32 >= 1 << sb) {
            return Err(FrameError::QOutOfRange { q: q as u32, bits: sb });
        }
        Ok(())
    }
}

struct BitReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl BitReader<'_> {
    fn read(&mut self, bits: u32) -> u16 {
        let mut v = 0u16;
        for i in 0..bits {
            let byte = self.buf[self.pos / 8];
            let bit = (byte >> (self.pos % 8)) & 1;
            v |= (bit as u16) << i;
            self.pos += 1;
        }
        v
    }
}

struct BitWriter {
    buf: Vec<u8>,
    pos: usize,
}

impl BitWriter {
    fn write(&mut self, v: u16, bits: u32) {
        for i in 0..bits {
            if self.pos / 8 == self.buf.len() {
                self.buf.push(0);
            }
            let bit = ((v >> i) & 1) as u8;
            self.buf[self.pos / 8] |= bit << (self.pos % 8);
            self.pos += 1;
        }
    }
}

/// Skips the radiotap header, returning the 802.11 frame.
fn strip_radiotap(payload: &[u8]) -> Option<&[u8]> {
    if payload.len() < 8 || payload[0] != 0 {
        return None;
    }
    let len = u16::from_le_bytes([payload[2], payload[3]]) as usize;
    if len < 8 || len > payload.len() {
        return None;
    }
    Some(&payload[len..])
}

fn snr_from_byte(b: u8) -> f64 {
    22.0 + (b as i8) as f64 * 0.25
}

fn snr_to_byte(db: f64) -> u8 {
    (((db - 22.0) * 4.0).round().clamp(-128.0, 127.0) as i8) as u8
}

/// Decodes a VHT compressed beamforming report from one capture record.
///
/// Returns `Ok(None)` for anything that is not an unsegmented VHT compressed
/// beamforming Action No-ACK frame, and `MalformedReport` when such a frame
/// declares more angle payload than it carries.
pub fn parse_action_noack(record: &CaptureRecord) -> Result<Option<BfiFrame>, FrameError> {
    let Some(frame) = strip_radiotap(&record.payload) else {
        return Ok(None);
    };
    if frame.len() < MGMT_HEADER_LEN + 2 {
        return Ok(None);
    }
    let fc0 = frame[0];
    if fc0 & 0b11 != 0 || (fc0 >> 2) & 0b11 != FC_TYPE_MGMT || fc0 >> 4 != SUBTYPE_ACTION_NOACK {
        return Ok(None);
    }
    // +HTC management frames carry a 4-byte HT Control field.
    let header_len = if frame[1] & 0x80 != 0 { MGMT_HEADER_LEN + 4 } else { MGMT_HEADER_LEN };
    if frame.len() < header_len + 2 {
        return Ok(None);
    }
    let body = &frame[header_len..];
    if body[0] != CATEGORY_VHT || body[1] != VHT_ACTION_COMPRESSED_BF {
        return Ok(None);
    }
    let src_mac = MacAddr::from_slice(&frame[10..16]);
    let rest = &body[2..];
    if rest.len() < MIMO_CONTROL_LEN {
        return Err(FrameError::MalformedReport("MIMO Control field truncated".into()));
    }
    let mimo = u32::from_le_bytes([rest[0], rest[1], rest[2], 0]);
    let n_cols = (mimo & 0x7) as usize + 1;
    let n_rows = ((mimo >> 3) & 0x7) as usize + 1;
    let width_code = (mimo >> 6) & 0x3;
    let grouping_code = (mimo >> 8) & 0x3;
    let codebook_info = (mimo >> 10) & 1 == 1;
    let mu = (mimo >> 11) & 1 == 1;
    let remaining = (mimo >> 12) & 0x7;
    let first = (mimo >> 15) & 1 == 1;
    let dialog_token = ((mimo >> 18) & 0x3f) as u8;
    if remaining != 0 || !first {
        // segmented feedback is not reassembled
        return Ok(None);
    }
    if n_rows > MAX_ANTENNAS || n_cols > MAX_ANTENNAS || n_cols > n_rows {
        return Err(FrameError::MalformedReport(format!(
            "unsupported dimensions Nr={n_rows} Nc={n_cols}"
        )));
    }
    let width_mhz = 20u16 << width_code;
    let grouping = match grouping_code {
        0 => 1u8,
        1 => 2,
        2 => 4,
        _ => return Err(FrameError::MalformedReport("reserved grouping value".into())),
    };
    let codebook = Codebook::from_bits(mu, codebook_info);
    let ns = subcarrier_count(width_mhz, grouping).expect("width and grouping are table keys");

    let after_mimo = &rest[MIMO_CONTROL_LEN..];
    if after_mimo.len() < n_cols {
        return Err(FrameError::MalformedReport("stream SNR fields truncated".into()));
    }
    let stream_snr_db = after_mimo[..n_cols].iter().map(|&b| snr_from_byte(b)).collect();
    let angles = &after_mimo[n_cols..];

    let per_kind = angles_per_kind(n_rows, n_cols);
    let (pb, sb) = (codebook.phi_bits(), codebook.psi_bits());
    let total_bits = ns * per_kind * (pb + sb) as usize;
    let needed = total_bits.div_ceil(8);
    if angles.len() < needed {
        return Err(FrameError::MalformedReport(format!(
            "angle payload has {} bytes, {needed} required for Nr={n_rows} Nc={n_cols} Ns={ns} {codebook:?}",
            angles.len()
        )));
    }
    let mut reader = BitReader {
        buf: &angles[..needed],
        pos: 0,
    };
    let mut phi_q = Vec::with_capacity(ns * per_kind);
    let mut psi_q = Vec::with_capacity(ns * per_kind);
    for _ in 0..ns {
        for i in 1..=n_cols.min(n_rows - 1) {
            for _ in i..n_rows {
                phi_q.push(reader.read(pb));
            }
            for _ in i..n_rows {
                psi_q.push(reader.read(sb));
            }
        }
    }
    // The MU exclusive beamforming report (delta SNRs) that may follow is not interpreted.
    Ok(Some(BfiFrame {
        timestamp_us: record.timestamp_us,
        src_mac,
        n_rows,
        n_cols,
        channel_width_mhz: width_mhz,
        grouping,
        codebook,
        dialog_token,
        n_subcarriers: ns,
        phi_q,
        psi_q,
        stream_snr_db,
    }))
}

/// Minimal radiotap header: version 0, length 8, no fields present.
pub fn radiotap_header() -> Vec<u8> {
    vec![0, 0, 8, 0, 0, 0, 0, 0]
}

fn mgmt_header(subtype: u8, ra: MacAddr, ta: MacAddr, bssid: MacAddr, seq: u16) -> Vec<u8> {
    let mut h = vec![(subtype << 4) | (FC_TYPE_MGMT << 2), 0, 0, 0];
    h.extend_from_slice(&ra.0);
    h.extend_from_slice(&ta.0);
    h.extend_from_slice(&bssid.0);
    h.extend_from_slice(&((seq & 0x0fff) << 4).to_le_bytes());
    h
}

/// Encodes `frame` as a radiotap-prefixed Action No-ACK frame sent from
/// `frame.src_mac` to `bssid`. Mirror image of [`parse_action_noack`].
pub fn encode_action_noack(frame: &BfiFrame, bssid: MacAddr, seq: u16) -> Result<Vec<u8>, FrameError> {
    frame.validate()?;
    let width_code = match frame.channel_width_mhz {
        20 => 0u32,
        40 => 1,
        80 => 2,
        _ => 3,
    };
    let grouping_code = match frame.grouping {
        1 => 0u32,
        2 => 1,
        _ => 2,
    };
    let mimo: u32 = (frame.n_cols as u32 - 1)
        | ((frame.n_rows as u32 - 1) << 3)
        | (width_code << 6)
        | (grouping_code << 8)
        | ((frame.codebook.info_bit() as u32) << 10)
        | ((frame.codebook.is_mu() as u32) << 11)
        | (1 << 15)
        | (((frame.dialog_token & 0x3f) as u32) << 18);
    let mut out = radiotap_header();
    out.extend(mgmt_header(SUBTYPE_ACTION_NOACK, bssid, frame.src_mac, bssid, seq));
    out.push(CATEGORY_VHT);
    out.push(VHT_ACTION_COMPRESSED_BF);
    out.extend_from_slice(&mimo.to_le_bytes()[..3]);
    out.extend(frame.stream_snr_db.iter().map(|&s| snr_to_byte(s)));
    let (pb, sb) = (frame.codebook.phi_bits(), frame.codebook.psi_bits());
    let mut w = BitWriter { buf: Vec::new(), pos: 0 };
    for sc in 0..frame.n_subcarriers {
        let (phi, psi) = frame.subcarrier_angles(sc);
        let mut k = 0;
        for i in 1..=frame.n_cols.min(frame.n_rows - 1) {
            let n = frame.n_rows - i;
            for &q in &phi[k..k + n] {
                w.write(q, pb);
            }
            for &q in &psi[k..k + n] {
                w.write(q, sb);
            }
            k += n;
        }
    }
    out.extend(w.buf);
    Ok(out)
}

/// Network-layer metadata of one unprotected data frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketMeta {
    pub timestamp_us: i64,
    pub src_mac: MacAddr,
    pub dst_ip: IpAddr,
}

/// Extracts (transmitter MAC, destination IP) from an LLC/SNAP-encapsulated
/// IPv4 or IPv6 data frame. Protected frames yield nothing.
pub fn parse_packet_meta(record: &CaptureRecord) -> Option<PacketMeta> {
    let frame = strip_radiotap(&record.payload)?;
    if frame.len() < 24 {
        return None;
    }
    let (fc0, fc1) = (frame[0], frame[1]);
    if (fc0 >> 2) & 0b11 != FC_TYPE_DATA {
        return None;
    }
    let subtype = fc0 >> 4;
    if subtype & 0x4 != 0 || fc1 & 0x40 != 0 {
        return None;
    }
    let mut off = 24;
    if fc1 & 0x03 == 0x03 {
        off += 6;
    }
    if subtype & 0x8 != 0 {
        off += 2;
        if fc1 & 0x80 != 0 {
            off += 4;
        }
    }
    let llc = frame.get(off..off + 8)?;
    if llc[..6] != [0xaa, 0xaa, 0x03, 0, 0, 0] {
        return None;
    }
    let ethertype = u16::from_be_bytes([llc[6], llc[7]]);
    let ip = &frame[off + 8..];
    let dst_ip = match ethertype {
        0x0800 if ip.len() >= 20 && ip[0] >> 4 == 4 => IpAddr::V4(Ipv4Addr::new(ip[16], ip[17], ip[18], ip[19])),
        0x86dd if ip.len() >= 40 && ip[0] >> 4 == 6 => {
            let mut a = [0u8; 16];
            a.copy_from_slice(&ip[24..40]);
            IpAddr::V6(Ipv6Addr::from(a))
        }
        _ => return None,
    };
    Some(PacketMeta {
        timestamp_us: record.timestamp_us,
        src_mac: MacAddr::from_slice(&frame[10..16]),
        dst_ip,
    })
}

/// Encodes a ToDS data frame from `src` carrying a minimal IP header toward `dst_ip`.
pub fn encode_data_frame(src: MacAddr, bssid: MacAddr, dst_ip: IpAddr, seq: u16) -> Vec<u8> {
    let mut out = radiotap_header();
    out.extend_from_slice(&[FC_TYPE_DATA << 2, 0x01, 0, 0]);
    out.extend_from_slice(&bssid.0);
    out.extend_from_slice(&src.0);
    out.extend_from_slice(&bssid.0);
    out.extend_from_slice(&((seq & 0x0fff) << 4).to_le_bytes());
    out.extend_from_slice(&[0xaa, 0xaa, 0x03, 0, 0, 0]);
    match dst_ip {
        IpAddr::V4(a) => {
            out.extend_from_slice(&0x0800u16.to_be_bytes());
            let mut ip = [0u8; 20];
            ip[0] = 0x45;
            ip[3] = 20;
            ip[8] = 64;
            ip[9] = 6;
            ip[12..16].copy_from_slice(&[192, 168, 1, 23]);
            ip[16..20].copy_from_slice(&a.octets());
            out.extend_from_slice(&ip);
        }
        IpAddr::V6(a) => {
            out.extend_from_slice(&0x86ddu16.to_be_bytes());
            let mut ip = [0u8; 40];
            ip[0] = 0x60;
            ip[6] = 6;
            ip[7] = 64;
            ip[24..40].copy_from_slice(&a.octets());
            out.extend_from_slice(&ip);
        }
    }
    out
}
