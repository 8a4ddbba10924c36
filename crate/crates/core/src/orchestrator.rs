//! Victim traffic tracking: attack windows open when the victim's station
//! talks to a known payment-service address and close after a stretch of
//! silence toward those addresses.

use std::collections::BTreeSet;
use std::net::IpAddr;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{BfiFrame, MacAddr, PacketMeta};

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("line {line} of the IP database is not an address: `{text}`")]
    BadIpDatabase { line: usize, text: String },
    #[error("idle timeout must be positive, got {0}")]
    BadTimeout(f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct VictimProfile {
    pub mac: MacAddr,
    pub ip_database: BTreeSet<IpAddr>,
    /// Silence toward the database that closes a window, seconds.
    pub idle_timeout_s: f64,
    /// Seconds added before the first matching request.
    pub pre_pad_s: f64,
}

impl VictimProfile {
    pub fn new(mac: MacAddr, ip_database: BTreeSet<IpAddr>) -> Self {
        Self {
            mac,
            ip_database,
            idle_timeout_s: 2.0,
            pre_pad_s: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackWindow {
    pub start_us: i64,
    pub end_us: i64,
    pub trigger_ip: IpAddr,
}

impl AttackWindow {
    pub fn contains(&self, t_us: i64) -> bool {
        self.start_us <= t_us && t_us <= self.end_us
    }
}

/// Parses an IP database: one address per line, `#` starts a comment.
pub fn parse_ip_database(text: &str) -> Result<BTreeSet<IpAddr>, OrchestratorError> {
    let mut set = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let ip = line.parse().map_err(|_| OrchestratorError::BadIpDatabase {
            line: i + 1,
            text: line.to_string(),
        })?;
        set.insert(ip);
    }
    Ok(set)
}

pub fn load_ip_database(path: &Path) -> Result<BTreeSet<IpAddr>, OrchestratorError> {
    parse_ip_database(&std::fs::read_to_string(path)?)
}

/// Finds attack windows in `packets` (any order).
pub fn detect_windows(
    packets: &[PacketMeta],
    profile: &VictimProfile,
) -> Result<Vec<AttackWindow>, OrchestratorError> {
    if !(profile.idle_timeout_s > 0.0) {
        return Err(OrchestratorError::BadTimeout(profile.idle_timeout_s));
    }
    let timeout_us = (profile.idle_timeout_s * 1e6).round() as i64;
    let pad_us = (profile.pre_pad_s.max(0.0) * 1e6).round() as i64;
    let mut hits: Vec<&PacketMeta> = packets
        .iter()
        .filter(|p| p.src_mac == profile.mac && profile.ip_database.contains(&p.dst_ip))
        .collect();
    hits.sort_by_key(|p| p.timestamp_us);

    let mut windows: Vec<AttackWindow> = Vec::new();
    let mut current: Option<AttackWindow> = None;
    for p in hits {
        current = match current {
            Some(mut w) if p.timestamp_us - w.end_us < timeout_us => {
                w.end_us = p.timestamp_us;
                Some(w)
            }
            prev => {
                if let Some(w) = prev {
                    windows.push(w);
                }
                Some(AttackWindow {
                    start_us: p.timestamp_us - pad_us,
                    end_us: p.timestamp_us,
                    trigger_ip: p.dst_ip,
                })
            }
        };
    }
    windows.extend(current);
    // pre-padding may reach back into the previous window
    let mut merged: Vec<AttackWindow> = Vec::with_capacity(windows.len());
    for w in windows {
        match merged.last_mut() {
            Some(last) if w.start_us <= last.end_us => last.end_us = last.end_us.max(w.end_us),
            _ => merged.push(w),
        }
    }
    Ok(merged)
}

/// Assigns each victim frame to the window containing its timestamp (closed
/// interval); frames outside every window are dropped.
pub fn clip_frames(frames: &[BfiFrame], windows: &[AttackWindow], mac: MacAddr) -> Vec<Vec<BfiFrame>> {
    let mut out = vec![Vec::new(); windows.len()];
    for f in frames.iter().filter(|f| f.src_mac == mac) {
        if let Some(i) = windows.iter().position(|w| w.contains(f.timestamp_us)) {
            out[i].push(f.clone());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::Codebook;

    const VICTIM: MacAddr = MacAddr([2, 0, 0, 0, 0, 1]);

    fn pkt(t_s: f64, ip: &str) -> PacketMeta {
        PacketMeta {
            timestamp_us: (t_s * 1e6) as i64,
            src_mac: VICTIM,
            dst_ip: ip.parse().unwrap(),
        }
    }

    fn profile() -> VictimProfile {
        VictimProfile::new(VICTIM, parse_ip_database("# pay\n203.0.113.5\n2001:db8::1  # v6\n").unwrap())
    }

    #[test]
    fn no_matches_no_windows() {
        let w = detect_windows(&[pkt(0.0, "8.8.8.8")], &profile()).unwrap();
        assert!(w.is_empty());
    }

    #[test]
    fn one_window_closes_at_last_match() {
        let w = detect_windows(&[pkt(1.0, "203.0.113.5"), pkt(0.0, "203.0.113.5"), pkt(0.5, "203.0.113.5")], &profile())
            .unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!((w[0].start_us, w[0].end_us), (0, 1_000_000));
    }

    #[test]
    fn long_silence_splits_windows() {
        let w = detect_windows(&[pkt(0.0, "203.0.113.5"), pkt(10.0, "2001:db8::1")], &profile()).unwrap();
        assert_eq!(w.len(), 2);
        assert!(w[0].end_us < w[1].start_us);
        assert_eq!(w[1].trigger_ip, "2001:db8::1".parse::<IpAddr>().unwrap());
    }

    #[test]
    fn other_stations_are_ignored() {
        let mut p = pkt(0.0, "203.0.113.5");
        p.src_mac = MacAddr([9; 6]);
        assert!(detect_windows(&[p], &profile()).unwrap().is_empty());
    }

    #[test]
    fn bad_database_line() {
        let err = parse_ip_database("1.2.3.4\nnot-an-ip\n").unwrap_err();
        assert!(matches!(err, OrchestratorError::BadIpDatabase { line: 2, .. }));
    }

    fn frame_at(t_us: i64) -> BfiFrame {
        BfiFrame {
            timestamp_us: t_us,
            src_mac: VICTIM,
            n_rows: 1,
            n_cols: 1,
            channel_width_mhz: 20,
            grouping: 4,
            codebook: Codebook::SuLo,
            dialog_token: 0,
            n_subcarriers: 16,
            phi_q: vec![],
            psi_q: vec![],
            stream_snr_db: vec![20.0],
        }
    }

    #[test]
    fn clip_uses_closed_interval() {
        let frames: Vec<BfiFrame> = (0..10).map(|i| frame_at(i * 100)).collect();
        let win = AttackWindow {
            start_us: 300,
            end_us: 700,
            trigger_ip: "203.0.113.5".parse().unwrap(),
        };
        let out = clip_frames(&frames, &[win], VICTIM);
        assert_eq!(out[0].len(), 5);
        assert!(clip_frames(&frames, &[], VICTIM).is_empty());
    }
}
