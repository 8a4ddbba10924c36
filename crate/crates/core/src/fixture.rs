//! Synthetic captures: a victim typing a password while its station sends
//! beamforming reports and requests to a payment service, mixed with
//! unrelated traffic.

use std::collections::BTreeSet;
use std::net::{IpAddr, Ipv4Addr};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::frame::{encode_action_noack, encode_data_frame, subcarrier_count, BfiFrame, Codebook, MacAddr};
use crate::pcap::{write_pcap, Capture, CaptureRecord, LINKTYPE_IEEE802_11_RADIOTAP};
use crate::sra::TrafficMask;
use crate::synth::{apply_traffic, synth_keystroke_series, LabeledSeries, SynthConfig, SynthError};

pub const VICTIM_MAC: MacAddr = MacAddr([0x02, 0x11, 0x22, 0x33, 0x44, 0x55]);
pub const BYSTANDER_MAC: MacAddr = MacAddr([0x02, 0x66, 0x77, 0x88, 0x99, 0xaa]);
pub const AP_MAC: MacAddr = MacAddr([0x02, 0xa0, 0xb0, 0xc0, 0xd0, 0xe0]);
pub const PAYMENT_IP: IpAddr = IpAddr::V4(Ipv4Addr::new(203, 0, 113, 10));
pub const OTHER_IP: IpAddr = IpAddr::V4(Ipv4Addr::new(198, 51, 100, 7));

const EPOCH_US: i64 = 1_700_000_000_000_000;
const REQUEST_PERIOD_US: i64 = 400_000;

#[derive(Clone, Debug)]
pub struct Fixture {
    pub capture: Capture,
    pub password: String,
    pub truth: LabeledSeries,
    pub mask: TrafficMask,
    pub ip_database: BTreeSet<IpAddr>,
}

impl Fixture {
    /// Writes `capture.pcap`, `ipdb.txt` and `truth.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        write_pcap(&dir.join("capture.pcap"), self.capture.linktype, &self.capture.records)
            .map_err(|e| std::io::Error::other(e.to_string()))?;
        let db: String = self.ip_database.iter().map(|ip| format!("{ip}\n")).collect();
        std::fs::write(dir.join("ipdb.txt"), format!("# payment service\n{db}"))?;
        std::fs::write(dir.join("truth.txt"), format!("{}\n", self.password))
    }
}

/// A 2x1 report whose first phi carries `value` in [0, 1] on the 9-bit grid.
fn report(t_us: i64, src: MacAddr, value: f64, token: u8) -> BfiFrame {
    let codebook = Codebook::MuHi;
    let ns = subcarrier_count(20, 4).expect("known table");
    let top = (1u32 << codebook.phi_bits()) - 1;
    let q = (value.clamp(0.0, 1.0) * top as f64).round() as u16;
    let mut phi_q = vec![(top / 2) as u16; ns];
    phi_q[0] = q;
    BfiFrame {
        timestamp_us: t_us,
        src_mac: src,
        n_rows: 2,
        n_cols: 1,
        channel_width_mhz: 20,
        grouping: 4,
        codebook,
        dialog_token: token,
        n_subcarriers: ns,
        phi_q,
        psi_q: vec![40; ns],
        stream_snr_db: vec![22.0],
    }
}

/// Builds the capture for one typed `password`. `ratio` is the fraction of
/// the sampling grid that carries a report (1.0 for a saturated link).
pub fn build_fixture(password: &str, config: &SynthConfig, ratio: f64, seed: u64) -> Result<Fixture, SynthError> {
    let typed = synth_keystroke_series(password, config, seed)?;
    let traffic = apply_traffic(&typed, ratio, seed ^ 0x7472_6166)?;
    let mut mask = traffic.mask;
    let n = typed.series.len();
    // the grid is anchored at the first report, so keep both ends
    mask.keep[0] = true;
    mask.keep[n - 1] = true;

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6669_7874);
    let period_us = 1e6 / config.fs_hz;
    let t0 = EPOCH_US + (seed as i64 % 1000) * 1_000_000;
    let t_end = t0 + ((n - 1) as f64 * period_us).round() as i64;
    let mut records: Vec<CaptureRecord> = Vec::new();
    let mut seq = 0u16;
    let push = |records: &mut Vec<CaptureRecord>, t: i64, payload: Vec<u8>| {
        records.push(CaptureRecord {
            timestamp_us: t,
            payload,
        });
    };

    for i in (0..n).filter(|&i| mask.keep[i]) {
        let t = t0 + (i as f64 * period_us).round() as i64;
        let frame = report(t, VICTIM_MAC, typed.series.values[i], (i % 64) as u8);
        seq = seq.wrapping_add(1);
        push(&mut records, t, encode_action_noack(&frame, AP_MAC, seq).expect("valid report"));
    }
    // a bystander sounding at a lower rate
    let mut t = t0 - 500_000;
    while t < t_end + 500_000 {
        let frame = report(t, BYSTANDER_MAC, rng.random(), 0);
        seq = seq.wrapping_add(1);
        push(&mut records, t, encode_action_noack(&frame, AP_MAC, seq).expect("valid report"));
        t += 100_000 + rng.random_range(0..20_000);
    }
    // victim requests to the payment service span the typing
    let mut t = t0;
    loop {
        seq = seq.wrapping_add(1);
        push(&mut records, t, encode_data_frame(VICTIM_MAC, AP_MAC, PAYMENT_IP, seq));
        if t >= t_end {
            break;
        }
        t = (t + REQUEST_PERIOD_US).min(t_end);
    }
    // unrelated requests, before and after
    for dt in [-1_500_000, -700_000, 3_000_000, 4_200_000] {
        seq = seq.wrapping_add(1);
        let at = if dt < 0 { t0 + dt } else { t_end + dt };
        push(&mut records, at, encode_data_frame(VICTIM_MAC, AP_MAC, OTHER_IP, seq));
        seq = seq.wrapping_add(1);
        push(&mut records, at + 1_000, encode_data_frame(BYSTANDER_MAC, AP_MAC, PAYMENT_IP, seq));
    }
    // a report truncated in flight
    let mut broken = encode_action_noack(&report(t0 + 5_000, VICTIM_MAC, 0.5, 1), AP_MAC, 0).expect("valid report");
    broken.truncate(broken.len() / 2);
    push(&mut records, t0 + 5_000, broken);

    records.sort_by_key(|r| r.timestamp_us);
    Ok(Fixture {
        capture: Capture {
            linktype: LINKTYPE_IEEE802_11_RADIOTAP,
            records,
        },
        password: password.to_string(),
        truth: typed,
        mask,
        ip_database: [PAYMENT_IP].into_iter().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orchestrator::{detect_windows, VictimProfile};
    use crate::pipeline::decode_capture;

    #[test]
    fn one_window_covers_the_typing() {
        let fx = build_fixture("175249", &SynthConfig::default(), 1.0, 4).unwrap();
        let d = decode_capture(&fx.capture);
        assert_eq!(d.malformed, 1);
        let victim: Vec<_> = d.frames.iter().filter(|f| f.src_mac == VICTIM_MAC).collect();
        assert_eq!(victim.len(), fx.truth.series.len());
        let w = detect_windows(&d.packets, &VictimProfile::new(VICTIM_MAC, fx.ip_database.clone())).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].start_us, victim[0].timestamp_us);
        assert_eq!(w[0].end_us, victim.last().unwrap().timestamp_us);
    }

    #[test]
    fn sparse_link_drops_reports() {
        let fx = build_fixture("175249", &SynthConfig::default(), 0.6, 4).unwrap();
        let d = decode_capture(&fx.capture);
        let kept = fx.mask.keep.iter().filter(|&&k| k).count();
        assert_eq!(d.frames.iter().filter(|f| f.src_mac == VICTIM_MAC).count(), kept);
        assert!(kept < fx.truth.series.len());
    }
}
