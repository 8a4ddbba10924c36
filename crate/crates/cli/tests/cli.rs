use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const VICTIM: &str = "02:11:22:33:44:55";

fn bfiki(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bfiki"))
        .current_dir(dir)
        .env_remove("BFIKI_SEED")
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = bfiki(dir, args);
    assert_eq!(
        code(&out),
        0,
        "{args:?}\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// A fixture directory plus a quickly trained classifier.
fn prepared() -> (tempfile::TempDir, PathBuf) {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--count", "2x6", "--fixtures", "2", "--out", "fx"]);
    ok(d, &["synth", "--count", "30x6", "--out", "train"]);
    ok(d, &["train-ki", "--segments", "train", "--epochs", "1", "--out", "ki.ckpt"]);
    let fx = d.join("fx/fixture_00");
    assert!(fx.join("capture.pcap").is_file());
    (tmp, fx)
}

#[test]
fn staged_pipeline_runs() {
    let (tmp, fx) = prepared();
    let d = tmp.path();
    let pcap = fx.join("capture.pcap");
    let ipdb = fx.join("ipdb.txt");
    let pcap = pcap.to_str().unwrap();
    let ipdb = ipdb.to_str().unwrap();

    ok(d, &["parse", "--pcap", pcap, "--mac", VICTIM, "--out", "frames.jsonl"]);
    ok(d, &["windows", "--pcap", pcap, "--mac", VICTIM, "--ipdb", ipdb, "--out", "windows.json"]);
    let windows: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("windows.json")).unwrap()).unwrap();
    assert_eq!(windows.as_array().unwrap().len(), 1);
    ok(
        d,
        &[
            "series", "--frames", "frames.jsonl", "--windows", "windows.json", "--mac", VICTIM, "--out", "series.csv",
        ],
    );
    ok(d, &["segment", "--series", "series.csv", "--k", "6", "--out", "segments.jsonl"]);
    let segs = std::fs::read_to_string(d.join("segments.jsonl")).unwrap();
    assert_eq!(segs.lines().count(), 6);

    std::fs::create_dir(d.join("cands")).unwrap();
    ok(d, &["infer", "--model", "ki.ckpt", "--segments", "segments.jsonl", "--topn", "50", "--out", "cands/a.json"]);
    let cands: Vec<serde_json::Value> =
        serde_json::from_str(&std::fs::read_to_string(d.join("cands/a.json")).unwrap()).unwrap();
    assert_eq!(cands.len(), 50);

    let truth = std::fs::read_to_string(fx.join("truth.txt")).unwrap();
    std::fs::write(d.join("truth.txt"), &truth).unwrap();
    let report = ok(d, &["eval", "--candidates", "cands", "--truth", "truth.txt", "--out", "topn.csv"]);
    assert!(report.contains("classification accuracy"));
    assert!(report.contains("top-100"));

    ok(d, &["plot", "--kind", "segments", "--input", "segments.jsonl", "--series", "series.csv", "--out", "plots"]);
    let svg = std::fs::read_to_string(d.join("plots/segments.svg")).unwrap();
    assert_eq!(svg.matches(r#"class="peak""#).count(), 6);
    ok(d, &["plot", "--kind", "topn", "--input", "cands", "--truth", "truth.txt", "--out", "plots"]);
    let csv = std::fs::read_to_string(d.join("plots/topn.csv")).unwrap();
    let acc: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(acc.len(), 50);
    assert!(acc.windows(2).all(|w| w[0] <= w[1]));
    ok(d, &["plot", "--kind", "series", "--input", "series.csv", "--out", "plots"]);
    assert!(d.join("plots/series.svg").is_file());
}

#[test]
fn attack_is_deterministic() {
    let (tmp, fx) = prepared();
    let d = tmp.path();
    let args = |out: &'static str| {
        vec![
            "attack".to_string(),
            "--pcap".into(),
            fx.join("capture.pcap").to_str().unwrap().into(),
            "--mac".into(),
            VICTIM.into(),
            "--ipdb".into(),
            fx.join("ipdb.txt").to_str().unwrap().into(),
            "--ki".into(),
            "ki.ckpt".into(),
            "--truth".into(),
            fx.join("truth.txt").to_str().unwrap().into(),
            "--out".into(),
            out.into(),
        ]
    };
    let a = args("r1.json");
    ok(d, &a.iter().map(String::as_str).collect::<Vec<_>>());
    let b = args("r2.json");
    ok(d, &b.iter().map(String::as_str).collect::<Vec<_>>());
    let r1 = std::fs::read(d.join("r1.json")).unwrap();
    assert_eq!(r1, std::fs::read(d.join("r2.json")).unwrap());
    let report: serde_json::Value = serde_json::from_slice(&r1).unwrap();
    assert_eq!(report["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(report["windows"].as_array().unwrap().len(), 1);
}

#[test]
fn exit_codes() {
    let (tmp, fx) = prepared();
    let d = tmp.path();
    let pcap = fx.join("capture.pcap");
    let pcap = pcap.to_str().unwrap();

    // nobody with this MAC talks to the payment service
    std::fs::write(d.join("ipdb.txt"), "203.0.113.10\n").unwrap();
    let out = bfiki(
        d,
        &["attack", "--pcap", pcap, "--mac", "02:00:00:00:00:01", "--ipdb", "ipdb.txt", "--ki", "ki.ckpt", "--out", "r.json"],
    );
    assert_eq!(code(&out), 1);
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("r.json")).unwrap()).unwrap();
    assert!(report["windows"].as_array().unwrap().is_empty());

    std::fs::write(d.join("bad.toml"), "[segment]\nalpha = 7.0\n").unwrap();
    let out = bfiki(d, &["--config", "bad.toml", "synth", "--out", "x"]);
    assert_eq!(code(&out), 2);
    assert_eq!(code(&bfiki(d, &["synth", "--layout", "dvorak", "--out", "x"])), 2);
    assert_eq!(code(&bfiki(d, &["parse", "--nope"])), 2);
    assert_eq!(code(&bfiki(d, &["parse", "--pcap", "missing.pcap", "--out", "f.jsonl"])), 3);

    std::fs::write(d.join("garbage.ckpt"), b"not a checkpoint").unwrap();
    let out = bfiki(
        d,
        &["attack", "--pcap", pcap, "--mac", VICTIM, "--ipdb", "ipdb.txt", "--ki", "garbage.ckpt", "--out", "r.json"],
    );
    assert_eq!(code(&out), 3);

    std::fs::create_dir(d.join("empty")).unwrap();
    std::fs::write(d.join("empty/a.json"), "[]").unwrap();
    std::fs::write(d.join("t.txt"), "123456\n").unwrap();
    let out = bfiki(d, &["plot", "--kind", "topn", "--input", "empty", "--truth", "t.txt", "--out", "p"]);
    assert_eq!(code(&out), 3);
}

#[test]
fn seed_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let run = |seed: &str, out: &str| {
        let o = Command::new(env!("CARGO_BIN_EXE_bfiki"))
            .current_dir(d)
            .env("BFIKI_SEED", seed)
            .args(["synth", "--count", "3x4", "--out", out])
            .output()
            .unwrap();
        assert!(o.status.success());
        std::fs::read_to_string(d.join(out).join("labels.json")).unwrap()
    };
    let a = run("1", "a");
    assert_eq!(a, run("1", "b"));
    assert_ne!(a, run("2", "c"));
}

#[test]
fn sra_train_and_recover() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["train-sra", "--synthetic", "8", "--epochs", "1", "--out", "sra.ckpt"]);
    ok(d, &["synth", "--count", "1x6", "--ratio", "0.9", "--out", "sparse"]);
    let out = bfiki(d, &["recover", "--model", "sra.ckpt", "--series", "sparse/series/0000.csv", "--out", "dense.csv"]);
    // a rare draw can leave a long gap; that is a no-result, not a crash
    assert!(matches!(code(&out), 0 | 1), "{}", String::from_utf8_lossy(&out.stderr));
    if code(&out) == 0 {
        let text = std::fs::read_to_string(d.join("dense.csv")).unwrap();
        assert!(text.lines().skip(1).all(|l| l.ends_with(",0")));
    }
}
