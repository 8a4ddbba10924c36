use std::collections::BTreeSet;
use std::net::{IpAddr, Ipv4Addr};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bfiki::frame::{
    angle_dequantize, angles_per_kind, encode_action_noack, parse_action_noack, subcarrier_count, AngleKind, BfiFrame,
    Codebook, MacAddr, PacketMeta,
};
use bfiki::inference::{rank_passwords, resample_linear, top_n_accuracy, train_adversarial, train_plain, KiConfig, KiModel};
use bfiki::nn::ops::{adaptive_avg_pool1d, grad_reverse_backward};
use bfiki::nn::Tensor;
use bfiki::orchestrator::{clip_frames, detect_windows, VictimProfile};
use bfiki::pcap::CaptureRecord;
use bfiki::segment::{segment, select_topk, SegmentationParams};
use bfiki::series::BfiSeries;
use bfiki::sra::{recover, rmse_relative, SraModel, TcnAeConfig};
use bfiki::steering::reconstruct_v_at;
use bfiki::synth::{read_dataset, synth_dataset, synth_keystroke_series, write_dataset, SynthConfig};

fn frame_from(nr: usize, nc: usize, width: u16, grouping: u8, codebook: Codebook, seed: u64) -> BfiFrame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ns = subcarrier_count(width, grouping).unwrap();
    let per = angles_per_kind(nr, nc);
    BfiFrame {
        timestamp_us: rng.random_range(0..1i64 << 40),
        src_mac: MacAddr(rng.random()),
        n_rows: nr,
        n_cols: nc,
        channel_width_mhz: width,
        grouping,
        codebook,
        dialog_token: rng.random_range(0..64),
        n_subcarriers: ns,
        phi_q: (0..ns * per).map(|_| rng.random_range(0..1u32 << codebook.phi_bits()) as u16).collect(),
        psi_q: (0..ns * per).map(|_| rng.random_range(0..1u32 << codebook.psi_bits()) as u16).collect(),
        stream_snr_db: (0..nc).map(|_| 22.0 + rng.random_range(-128i32..=127) as f64 * 0.25).collect(),
    }
}

fn any_frame() -> impl Strategy<Value = BfiFrame> {
    (1usize..=4, 0usize..4, 0usize..4, 0usize..3, 0usize..4, any::<u64>()).prop_map(|(nr, c, w, g, cb, seed)| {
        frame_from(
            nr,
            1 + c % nr,
            [20, 40, 80, 160][w],
            [1, 2, 4][g],
            Codebook::ALL[cb],
            seed,
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reports_round_trip_and_stay_orthonormal(frame in any_frame(), seq in any::<u16>()) {
        let payload = encode_action_noack(&frame, MacAddr([2, 0, 0, 0, 0, 9]), seq).unwrap();
        let rec = CaptureRecord { timestamp_us: frame.timestamp_us, payload };
        let back = parse_action_noack(&rec).unwrap().unwrap();
        prop_assert_eq!(&back, &frame);
        for sc in [0, frame.n_subcarriers / 2, frame.n_subcarriers - 1] {
            prop_assert!(reconstruct_v_at(&frame, sc).orthonormality_error() < 1e-9);
        }
    }

    #[test]
    fn dequantization_is_strictly_increasing(bits in 1u32..=9, q in 0u32..511, psi in any::<bool>()) {
        let kind = if psi { AngleKind::Psi } else { AngleKind::Phi };
        let q = q % ((1 << bits) - 1).max(1);
        if q + 1 < 1 << bits {
            prop_assert!(angle_dequantize(q, bits, kind).unwrap() < angle_dequantize(q + 1, bits, kind).unwrap());
        }
    }

    #[test]
    fn windows_are_disjoint_and_clipping_never_duplicates(
        events in proptest::collection::vec((0i64..30_000_000, any::<bool>(), 0u8..3), 0..60),
    ) {
        let victim = MacAddr([2, 1, 1, 1, 1, 1]);
        let other = MacAddr([2, 2, 2, 2, 2, 2]);
        let ip = |k: u8| IpAddr::V4(Ipv4Addr::new(10, 0, 0, k));
        let packets: Vec<PacketMeta> = events
            .iter()
            .map(|&(t, v, k)| PacketMeta { timestamp_us: t, src_mac: if v { victim } else { other }, dst_ip: ip(k) })
            .collect();
        let db: BTreeSet<IpAddr> = [ip(0), ip(1)].into_iter().collect();
        let windows = detect_windows(&packets, &VictimProfile::new(victim, db)).unwrap();
        for w in &windows {
            prop_assert!(w.start_us <= w.end_us);
        }
        for pair in windows.windows(2) {
            prop_assert!(pair[0].end_us < pair[1].start_us);
        }
        // one report every 25 ms with distinct timestamps
        let frames: Vec<BfiFrame> = (0..1200)
            .map(|i| BfiFrame { timestamp_us: i * 25_000, src_mac: victim, ..frame_from(2, 1, 20, 4, Codebook::MuHi, i as u64) })
            .collect();
        let clipped = clip_frames(&frames, &windows, victim);
        let mut seen = BTreeSet::new();
        for f in clipped.iter().flatten() {
            prop_assert!(frames.contains(f));
            prop_assert!(seen.insert(f.timestamp_us));
        }
    }

    #[test]
    fn pooling_preserves_mean_and_range(
        c in 1usize..4,
        out_len in 1usize..12,
        factor in 1usize..5,
        extra in 0usize..7,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for len in [out_len * factor, out_len * factor + extra] {
            let x: Vec<f64> = (0..c * len).map(|_| rng.random_range(-2.0..2.0)).collect();
            let t = Tensor::from_vec(&[c, len], x.clone()).unwrap();
            let y = adaptive_avg_pool1d(&t, out_len);
            for ch in 0..c {
                let row = &x[ch * len..(ch + 1) * len];
                let out = &y.data()[ch * out_len..(ch + 1) * out_len];
                let (lo, hi) = row.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
                prop_assert!(out.iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
                if len % out_len == 0 {
                    let mean_in = row.iter().sum::<f64>() / len as f64;
                    let mean_out = out.iter().sum::<f64>() / out_len as f64;
                    prop_assert!((mean_in - mean_out).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_scale_reversal_blocks_gradients(g in proptest::collection::vec(-1e3f64..1e3, 1..50)) {
        let t = Tensor::from_vec(&[g.len()], g).unwrap();
        prop_assert!(grad_reverse_backward(&t, 0.0).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn relative_rmse_is_a_scaled_norm(
        truth in proptest::collection::vec(0.05f64..1.0, 2..80),
        err_seed in any::<u64>(),
        s in 0.1f64..10.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(err_seed);
        let e: Vec<f64> = truth.iter().map(|_| rng.random_range(-0.1..0.1)).collect();
        let series = |v: Vec<f64>| BfiSeries::dense(40.0, 0, v);
        let t = series(truth.clone());
        let with = |k: f64| series(truth.iter().zip(&e).map(|(a, b)| a + k * b).collect());
        let r1 = rmse_relative(&with(1.0), &t).unwrap();
        let rs = rmse_relative(&with(s), &t).unwrap();
        prop_assert!(r1 >= 0.0);
        prop_assert_eq!(rmse_relative(&t, &t).unwrap(), 0.0);
        prop_assert!(e.iter().all(|&v| v == 0.0) || r1 > 0.0);
        prop_assert!((rs - s * r1).abs() <= 1e-9 * rs.max(1.0));
    }

    #[test]
    fn recovery_keeps_observed_samples(values in proptest::collection::vec(0.0f64..1.0, 48..96), seed in any::<u64>()) {
        let model = SraModel::new(TcnAeConfig {
            channels: vec![4, 4],
            dilations: vec![1, 2],
            latent_len: 4,
            crop_len: 32,
            seed,
            ..Default::default()
        })
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sparse = BfiSeries::dense(40.0, 0, values.clone());
        for i in 0..sparse.len() {
            // short gaps only, so the series stays viable
            if i % 5 != 0 && rng.random_bool(0.4) {
                sparse.values[i] = -1.0;
                sparse.gap_mask[i] = true;
            }
        }
        let dense = recover(&model, &sparse).unwrap();
        prop_assert!(dense.is_gapless());
        for i in 0..sparse.len() {
            if !sparse.gap_mask[i] {
                prop_assert_eq!(dense.values[i], values[i]);
            } else {
                prop_assert!((0.0..=1.0).contains(&dense.values[i]));
            }
        }
    }

    #[test]
    fn segments_contain_their_peaks_in_order(
        len in 20usize..300,
        picks in proptest::collection::btree_set(0usize..300, 1..9),
        alpha in 0.1f64..1.0,
        beta in 0.1f64..1.0,
    ) {
        let peaks: Vec<usize> = picks.into_iter().filter(|&p| p < len).collect();
        prop_assume!(!peaks.is_empty());
        let values: Vec<f64> = (0..len).map(|i| (i as f64 * 0.37).sin().abs()).collect();
        let params = SegmentationParams { alpha, beta, ..Default::default() }.with_k(peaks.len());
        let segs = segment(&values, &peaks, &params);
        prop_assert_eq!(segs.len(), peaks.len());
        for (s, &p) in segs.iter().zip(&peaks) {
            prop_assert_eq!(s.peak_index, p);
            prop_assert!(s.left <= p && p <= s.right && s.right < len);
            prop_assert_eq!(s.samples.len(), s.right - s.left + 1);
        }
    }

    #[test]
    fn selected_peaks_respect_spacing(
        amplitude in proptest::collection::vec(0.0f64..1.0, 10..200),
        k in 1usize..8,
        w in 1usize..30,
    ) {
        let candidates: Vec<usize> = (0..amplitude.len()).filter(|i| i % 3 != 1).collect();
        if let Ok(peaks) = select_topk(&candidates, &amplitude, k, w) {
            prop_assert_eq!(peaks.len(), k);
            prop_assert!(peaks.windows(2).all(|p| p[0] < p[1] && p[1] - p[0] >= w));
        }
    }

    #[test]
    fn ranked_candidates_are_products_in_order(seed in any::<u64>(), len in 1usize..5, n in 1usize..200) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keys: Vec<char> = "0123456789".chars().collect();
        let dists: Vec<Vec<f64>> = (0..len)
            .map(|_| {
                let w: Vec<f64> = (0..10).map(|_| rng.random_range(0.0..1.0)).collect();
                let s: f64 = w.iter().sum();
                w.iter().map(|v| v / s).collect()
            })
            .collect();
        let out = rank_passwords(&dists, &keys, n).unwrap();
        prop_assert_eq!(out.len(), n.min(10usize.pow(len as u32)));
        prop_assert!(out.windows(2).all(|c| c[0].probability >= c[1].probability));
        for c in &out {
            let p: f64 = c.password.chars().enumerate().map(|(i, ch)| dists[i][ch as usize - '0' as usize]).product();
            prop_assert!((p - c.probability).abs() <= 1e-12);
        }
        let truths: Vec<String> = (0..5).map(|_| (0..len).map(|_| keys[rng.random_range(0..10)]).collect()).collect();
        let trials: Vec<_> = truths.into_iter().map(|t| (out.clone(), t)).collect();
        let curve: Vec<f64> = (1..=n + 1).map(|m| top_n_accuracy(&trials, m)).collect();
        prop_assert!(curve.windows(2).all(|c| c[0] <= c[1]));
    }

    #[test]
    fn synthetic_series_are_dense_normalized_and_seeded(pw in "[0-9]{1,8}", seed in any::<u64>()) {
        let cfg = SynthConfig::default();
        let a = synth_keystroke_series(&pw, &cfg, seed).unwrap();
        prop_assert!(a.series.is_gapless());
        prop_assert!(a.series.values.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(a.peak_indices.len(), pw.len());
        prop_assert_eq!(&a, &synth_keystroke_series(&pw, &cfg, seed).unwrap());
    }
}

#[test]
fn zero_lambda_matches_plain_training() {
    let synth = SynthConfig::default();
    let data = synth_dataset(&[(4, 12)], &synth, 3).unwrap();
    let segs: Vec<_> = data.iter().flat_map(|ls| ls.labeled_segments(&SegmentationParams::default().with_k(4))).collect();
    let cfg = KiConfig {
        conv_channels: vec![4, 8],
        hidden: 16,
        pool_len: 8,
        lambda: 0.0,
        epochs: 2,
        batch: 4,
        seed: 11,
        ..Default::default()
    };
    // every key must have two segments to pair
    let keys: Vec<char> = synth.layout.keys.clone();
    let segs: Vec<_> = segs
        .iter()
        .filter(|s| segs.iter().filter(|t| t.key_label == s.key_label).count() >= 2)
        .cloned()
        .collect();
    let mut adv = KiModel::new(cfg.clone(), keys.clone()).unwrap();
    let mut plain = KiModel::new(cfg, keys).unwrap();
    train_adversarial(&mut adv, &segs).unwrap();
    train_plain(&mut plain, &segs).unwrap();
    let a = adv.params.values();
    let p = plain.params.values();
    let shared: Vec<&String> = a.keys().filter(|k| k.starts_with("f.") || k.starts_with("c.")).collect();
    assert!(!shared.is_empty());
    for k in shared {
        assert_eq!(a[k], p[k], "{k} differs");
    }
    // the run actually moved the classifier
    let fresh = KiModel::new(adv.config.clone(), adv.keys.clone()).unwrap().params.values();
    assert_ne!(fresh["c.fc2.weight"], a["c.fc2.weight"]);
}

#[test]
fn same_context_segments_correlate_and_contexts_differ() {
    let cfg = SynthConfig {
        cps_range: (1.2, 1.2),
        noise_sigma: 0.02,
        ..Default::default()
    };
    let params = SegmentationParams::default().with_k(3);
    let middle = |pw: &str, seed: u64| {
        let ls = synth_keystroke_series(pw, &cfg, seed).unwrap();
        ls.labeled_segments(&params).swap_remove(1).samples
    };
    let pearson = |a: &[f64], b: &[f64]| {
        let n = a.len().max(b.len());
        let (a, b) = (resample_linear(a, n), resample_linear(b, n));
        let (ma, mb) = (a.iter().sum::<f64>() / n as f64, b.iter().sum::<f64>() / n as f64);
        let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    };
    for (ctx, other) in [("513", "618"), ("412", "919"), ("070", "383")] {
        let a = middle(ctx, 1);
        let b = middle(ctx, 2);
        assert!(pearson(&a, &b) >= 0.8, "{ctx}: {}", pearson(&a, &b));
        let c = middle(other, 1);
        let n = a.len().max(c.len());
        let l2: f64 = resample_linear(&a, n).iter().zip(resample_linear(&c, n)).map(|(x, y)| (x - y).powi(2)).sum();
        assert!(l2 > 0.0);
    }
}

#[test]
fn dataset_files_round_trip() {
    let cfg = SynthConfig::default();
    let items = synth_dataset(&[(4, 3), (6, 2)], &cfg, 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &items).unwrap();
    let back = read_dataset(dir.path(), cfg.fs_hz).unwrap();
    assert_eq!(back.len(), items.len());
    for (a, b) in items.iter().zip(&back) {
        assert_eq!(a.password, b.password);
        assert_eq!(a.peak_indices, b.peak_indices);
        assert_eq!(a.domains, b.domains);
        assert_eq!(a.series.gap_mask, b.series.gap_mask);
        for (x, y) in a.series.values.iter().zip(&b.series.values) {
            assert!((x - y).abs() <= 1e-6, "{x} vs {y}");
        }
    }
}
