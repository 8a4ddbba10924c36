mod plot;

use std::collections::BTreeSet;
use std::fmt::Display;
use std::net::IpAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};

use bfiki::config::PipelineConfig;
use bfiki::fixture::build_fixture;
use bfiki::frame::{BfiFrame, MacAddr};
use bfiki::inference::{rank_passwords, train_adversarial, train_plain, KiModel, PasswordCandidate};
use bfiki::layout::KeyboardLayout;
use bfiki::orchestrator::{clip_frames, detect_windows, load_ip_database, AttackWindow, VictimProfile};
use bfiki::pcap::read_pcap;
use bfiki::pipeline::{decode_capture, run_attack, series_from_frames, Models};
use bfiki::segment::{
    segment, segments_from_jsonl, segments_to_jsonl, locate_keystrokes, KeystrokeSegment, PeakPolicy, SegmentError,
};
use bfiki::series::{read_series_csv, write_series_csv, FeatureSelector};
use bfiki::sra::{recover, train_sra, SraError, SraModel};
use bfiki::synth::{apply_traffic, read_dataset, sinusoid_mixture, synth_dataset, write_dataset, SynthConfig};

/// Keystroke inference from captured Wi-Fi beamforming feedback.
#[derive(Parser)]
#[command(name = "bfiki", version)]
struct Cli {
    /// Pipeline configuration (TOML); defaults apply to anything omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, env = "BFIKI_SEED", global = true, hide_env_values = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decode beamforming reports from a capture into JSON lines.
    Parse {
        #[arg(long)]
        pcap: PathBuf,
        /// Keep only reports sent by this station.
        #[arg(long)]
        mac: Option<MacAddr>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Find attack windows from the victim's requests to payment addresses.
    Windows {
        #[arg(long)]
        pcap: PathBuf,
        #[arg(long)]
        mac: MacAddr,
        #[arg(long)]
        ipdb: PathBuf,
        #[arg(long)]
        timeout: Option<f64>,
        #[arg(long)]
        pre_pad: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn decoded reports into a uniformly sampled series (CSV).
    Series {
        #[arg(long)]
        frames: PathBuf,
        /// Clip to a window from `windows` output.
        #[arg(long, requires = "mac")]
        windows: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        window_index: usize,
        #[arg(long)]
        mac: Option<MacAddr>,
        #[arg(long)]
        selector: Option<FeatureSelector>,
        #[arg(long)]
        fs: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fill the gaps of a sparse series.
    Recover {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        series: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Locate keystrokes and cut segments (JSON lines).
    Segment {
        #[arg(long)]
        series: PathBuf,
        /// Number of keystrokes.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the sparse-series recovery model.
    TrainSra {
        /// Dataset directory written by `synth` (dense series only).
        #[arg(long, conflicts_with = "synthetic")]
        data: Option<PathBuf>,
        /// Train on this many generated smooth series instead.
        #[arg(long)]
        synthetic: Option<usize>,
        #[arg(long, default_value_t = 256)]
        length: usize,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the keystroke classifier.
    TrainKi {
        /// Dataset directory written by `synth`, or a labeled segments file.
        #[arg(long)]
        segments: PathBuf,
        #[arg(long, default_value = "numeric")]
        layout: String,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Train without the domain discriminator.
        #[arg(long)]
        plain: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank passwords for one typed sequence of segments.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        segments: PathBuf,
        #[arg(long)]
        topn: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score candidate lists against true passwords.
    Eval {
        /// A candidates file, or a directory of them (paired with truth lines in name order).
        #[arg(long)]
        candidates: PathBuf,
        /// One true password per line.
        #[arg(long)]
        truth: PathBuf,
        /// Optional CSV of the top-n table.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a labeled synthetic dataset, or capture fixtures.
    Synth {
        #[arg(long, default_value = "numeric")]
        layout: String,
        /// Groups of COUNTxLENGTH, comma separated (e.g. 500x6,100x4).
        #[arg(long, default_value = "100x6")]
        count: String,
        /// Fraction of the sampling grid carrying a report.
        #[arg(long, default_value_t = 1.0)]
        ratio: f64,
        /// Write this many capture fixtures instead of a dataset.
        #[arg(long)]
        fixtures: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the whole attack on a capture.
    Attack {
        #[arg(long)]
        pcap: PathBuf,
        #[arg(long)]
        mac: MacAddr,
        #[arg(long)]
        ipdb: PathBuf,
        #[arg(long)]
        ki: PathBuf,
        #[arg(long)]
        sra: Option<PathBuf>,
        /// True password (or a file holding it) to locate among the candidates.
        #[arg(long)]
        truth: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plot a series, its segments, or a top-n curve (SVG and CSV).
    Plot {
        #[arg(long, value_enum)]
        kind: PlotKind,
        /// Series CSV, segments file, or candidates file/directory.
        #[arg(long)]
        input: PathBuf,
        /// The series under a segments plot.
        #[arg(long)]
        series: Option<PathBuf>,
        /// True passwords for a top-n plot.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Output directory; receives `<kind>.svg` and `<kind>.csv`.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PlotKind {
    Series,
    Segments,
    Topn,
}

enum Failure {
    NoResult(String),
    Usage(anyhow::Error),
    Data(anyhow::Error),
}

type Outcome = Result<(), Failure>;

trait OrFail<T> {
    fn usage(self) -> Result<T, Failure>;
    fn data(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> OrFail<T> for Result<T, E> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Usage(e.into()))
    }
    fn data(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Data(e.into()))
    }
}

fn data_err(msg: impl Display) -> Failure {
    Failure::Data(anyhow!("{msg}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::NoResult(msg)) => {
            eprintln!("no result: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Failure> {
    let cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("config {}", p.display())).usage()?,
        None => PipelineConfig::default(),
    };
    Ok(match cli.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn layout(name: &str) -> Result<KeyboardLayout, Failure> {
    KeyboardLayout::by_name(name).ok_or_else(|| Failure::Usage(anyhow!("unknown layout `{name}` (numeric, qwerty36)")))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Outcome {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display())).data()
}

fn read_file(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).data()
}

fn read_frames(path: &Path) -> Result<Vec<BfiFrame>, Failure> {
    read_file(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{} line {}", path.display(), i + 1)).data())
        .collect()
}

fn read_segments(path: &Path) -> Result<Vec<KeystrokeSegment>, Failure> {
    segments_from_jsonl(&read_file(path)?).with_context(|| format!("segments {}", path.display())).data()
}

/// Candidate lists, one per file, in file-name order.
fn read_candidates(path: &Path) -> Result<Vec<Vec<PasswordCandidate>>, Failure> {
    let files: Vec<PathBuf> = if path.is_dir() {
        let mut v: Vec<PathBuf> = std::fs::read_dir(path)
            .with_context(|| format!("listing {}", path.display()))
            .data()?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        v.sort();
        v
    } else {
        vec![path.to_path_buf()]
    };
    files
        .iter()
        .map(|f| serde_json::from_str(&read_file(f)?).with_context(|| format!("candidates {}", f.display())).data())
        .collect()
}

fn read_truth(path: &Path) -> Result<Vec<String>, Failure> {
    Ok(read_file(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}

fn paired_trials(candidates: &Path, truth: &Path) -> Result<Vec<(Vec<PasswordCandidate>, String)>, Failure> {
    let cands = read_candidates(candidates)?;
    let truth = read_truth(truth)?;
    if cands.len() != truth.len() {
        return Err(data_err(format!(
            "{} candidate lists but {} true passwords",
            cands.len(),
            truth.len()
        )));
    }
    Ok(cands.into_iter().zip(truth).collect())
}

fn parse_counts(spec: &str) -> Result<Vec<(usize, usize)>, Failure> {
    spec.split(',')
        .map(|part| {
            let (count, len) = part
                .trim()
                .split_once('x')
                .ok_or_else(|| Failure::Usage(anyhow!("count `{part}` is not COUNTxLENGTH")))?;
            let n = |s: &str| s.parse::<usize>().map_err(|e| Failure::Usage(anyhow!("count `{part}`: {e}")));
            Ok((n(len)?, n(count)?))
        })
        .collect()
}

fn run(cli: Cli) -> Outcome {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Parse { pcap, mac, out } => {
            let cap = read_pcap(&pcap).with_context(|| format!("capture {}", pcap.display())).data()?;
            let decoded = decode_capture(&cap);
            let frames: Vec<&BfiFrame> = decoded.frames.iter().filter(|f| mac.is_none_or(|m| f.src_mac == m)).collect();
            let text: String = frames
                .iter()
                .map(|f| serde_json::to_string(f).expect("frame serializes") + "\n")
                .collect();
            write_file(&out, text)?;
            println!("{} reports ({} malformed records skipped)", frames.len(), decoded.malformed);
            if frames.is_empty() {
                return Err(Failure::NoResult("no beamforming reports".into()));
            }
        }
        Command::Windows {
            pcap,
            mac,
            ipdb,
            timeout,
            pre_pad,
            out,
        } => {
            let cap = read_pcap(&pcap).with_context(|| format!("capture {}", pcap.display())).data()?;
            let db = load_ip_database(&ipdb).with_context(|| format!("IP database {}", ipdb.display())).usage()?;
            let mut profile = VictimProfile::new(mac, db);
            profile.idle_timeout_s = timeout.unwrap_or(cfg.capture.idle_timeout_s);
            profile.pre_pad_s = pre_pad.unwrap_or(cfg.capture.pre_pad_s);
            let windows = detect_windows(&decode_capture(&cap).packets, &profile).usage()?;
            write_file(&out, serde_json::to_string_pretty(&windows).expect("windows serialize"))?;
            println!("{} attack windows", windows.len());
            if windows.is_empty() {
                return Err(Failure::NoResult("no requests to the payment addresses".into()));
            }
        }
        Command::Series {
            frames,
            windows,
            window_index,
            mac,
            selector,
            fs,
            out,
        } => {
            let mut cfg = cfg;
            cfg.series.selector = selector.unwrap_or(cfg.series.selector);
            cfg.series.fs_hz = fs.unwrap_or(cfg.series.fs_hz);
            cfg.validate().usage()?;
            let all = read_frames(&frames)?;
            let picked: Vec<BfiFrame> = match windows {
                Some(w) => {
                    let list: Vec<AttackWindow> = serde_json::from_str(&read_file(&w)?).data()?;
                    let window = list
                        .get(window_index)
                        .ok_or_else(|| Failure::Usage(anyhow!("window {window_index} of {} requested", list.len())))?;
                    let mac = mac.expect("clap requires --mac with --windows");
                    clip_frames(&all, std::slice::from_ref(window), mac).swap_remove(0)
                }
                None => all.into_iter().filter(|f| mac.is_none_or(|m| f.src_mac == m)).collect(),
            };
            if picked.is_empty() {
                return Err(Failure::NoResult("no reports to build a series from".into()));
            }
            let series = series_from_frames(&picked, &cfg).data()?;
            write_series_csv(&out, &series).data()?;
            println!("{} samples, {} gaps", series.len(), series.gap_count());
        }
        Command::Recover { model, series, out } => {
            let model = SraModel::load(&model).with_context(|| format!("model {}", model.display())).data()?;
            let sparse = read_series_csv(&series, Some(cfg.series.fs_hz)).data()?;
            match recover(&model, &sparse) {
                Ok(dense) => {
                    write_series_csv(&out, &dense).data()?;
                    println!("filled {} gaps", sparse.gap_count());
                }
                Err(SraError::NotViable) => return Err(Failure::NoResult("series is not viable".into())),
                Err(e) => return Err(Failure::Data(e.into())),
            }
        }
        Command::Segment { series, k, out } => {
            let params = k.map_or(cfg.segment, |k| cfg.segment.with_k(k));
            params.validate().usage()?;
            let s = read_series_csv(&series, Some(cfg.series.fs_hz)).data()?;
            let peaks = match locate_keystrokes(&s, &params, PeakPolicy::TopK) {
                Ok(p) => p,
                Err(SegmentError::InsufficientPeaks { found, needed }) => {
                    return Err(Failure::NoResult(format!("only {found} of {needed} keystrokes found")))
                }
                Err(e) => return Err(Failure::Data(e.into())),
            };
            let segs = segment(&s.values, &peaks, &params);
            write_file(&out, segments_to_jsonl(&segs))?;
            println!("peaks {peaks:?}");
        }
        Command::TrainSra {
            data,
            synthetic,
            length,
            epochs,
            out,
        } => {
            let mut sra_cfg = cfg.sra.clone();
            sra_cfg.epochs = epochs.unwrap_or(sra_cfg.epochs);
            let dataset = match (data, synthetic) {
                (Some(dir), _) => read_dataset(&dir, cfg.series.fs_hz).data()?.into_iter().map(|l| l.series).collect(),
                (None, Some(n)) => (0..n as u64)
                    .map(|i| sinusoid_mixture(length, cfg.series.fs_hz, cfg.seed.wrapping_mul(1_000_003).wrapping_add(i)))
                    .collect::<Vec<_>>(),
                (None, None) => return Err(Failure::Usage(anyhow!("give --data or --synthetic"))),
            };
            let (model, report) = train_sra(&dataset, &sra_cfg).map_err(|e| match e {
                SraError::BadConfig(_) => Failure::Usage(e.into()),
                e => Failure::Data(e.into()),
            })?;
            model.save(&out).data()?;
            println!("final loss {:.6}", report.epoch_loss.last().copied().unwrap_or(f64::NAN));
        }
        Command::TrainKi {
            segments,
            layout: name,
            lambda,
            epochs,
            plain,
            out,
        } => {
            let layout = layout(&name)?;
            let segs = if segments.is_dir() {
                let data = read_dataset(&segments, cfg.series.fs_hz).data()?;
                data.iter()
                    .flat_map(|ls| ls.labeled_segments(&cfg.segment.with_k(ls.peak_indices.len())))
                    .collect()
            } else {
                read_segments(&segments)?
            };
            let mut ki_cfg = cfg.ki.clone();
            ki_cfg.lambda = lambda.unwrap_or(ki_cfg.lambda);
            ki_cfg.epochs = epochs.unwrap_or(ki_cfg.epochs);
            let mut model = KiModel::new(ki_cfg, layout.keys.clone()).usage()?;
            let report = if plain {
                train_plain(&mut model, &segs)
            } else {
                train_adversarial(&mut model, &segs)
            }
            .data()?;
            model.save(&out).data()?;
            println!(
                "{} segments, final class loss {:.4}, domain loss {:.4}",
                segs.len(),
                report.class_loss.last().copied().unwrap_or(f64::NAN),
                report.domain_loss.last().copied().unwrap_or(f64::NAN)
            );
        }
        Command::Infer {
            model,
            segments,
            topn,
            out,
        } => {
            let model = KiModel::load(&model).with_context(|| format!("model {}", model.display())).data()?;
            let segs = read_segments(&segments)?;
            if segs.is_empty() {
                return Err(Failure::NoResult("no segments".into()));
            }
            let dists = segs.iter().map(|s| model.classify(&s.samples)).collect::<Result<Vec<_>, _>>().data()?;
            let cands = rank_passwords(&dists, &model.keys, topn.unwrap_or(cfg.rank.top_n)).data()?;
            write_file(&out, serde_json::to_string_pretty(&cands).expect("candidates serialize"))?;
            for c in cands.iter().take(5) {
                println!("{} {:.3e}", c.password, c.probability);
            }
        }
        Command::Eval { candidates, truth, out } => {
            let trials = paired_trials(&candidates, &truth)?;
            if trials.is_empty() {
                return Err(Failure::NoResult("nothing to evaluate".into()));
            }
            let (mut hit, mut total) = (0usize, 0usize);
            for (c, t) in &trials {
                let best: Vec<char> = c.first().map(|c| c.password.chars().collect()).unwrap_or_default();
                for (i, k) in t.chars().enumerate() {
                    total += 1;
                    hit += (best.get(i) == Some(&k)) as usize;
                }
            }
            println!("classification accuracy {:.4}", hit as f64 / total.max(1) as f64);
            let mut csv = String::from("n,accuracy\n");
            for n in [1, 5, 10, 20, 50, 100] {
                let acc = bfiki::inference::top_n_accuracy(&trials, n);
                println!("top-{n:<3} {acc:.4}");
                csv.push_str(&format!("{n},{acc:.6}\n"));
            }
            if let Some(out) = out {
                write_file(&out, csv)?;
            }
        }
        Command::Synth {
            layout: name,
            count,
            ratio,
            fixtures,
            out,
        } => {
            let synth_cfg = SynthConfig {
                layout: layout(&name)?,
                seed: cfg.seed,
                ..Default::default()
            };
            let groups = parse_counts(&count)?;
            let items = synth_dataset(&groups, &synth_cfg, cfg.seed).usage()?;
            match fixtures {
                Some(n) => {
                    for (i, item) in items.iter().take(n).enumerate() {
                        let fx = build_fixture(&item.password, &synth_cfg, ratio, cfg.seed.wrapping_add(i as u64))
                            .usage()?;
                        fx.write(&out.join(format!("fixture_{i:02}"))).data()?;
                    }
                    println!("{} fixtures", n.min(items.len()));
                }
                None => {
                    let items = if ratio < 1.0 {
                        items
                            .iter()
                            .enumerate()
                            .map(|(i, ls)| apply_traffic(ls, ratio, cfg.seed.wrapping_add(i as u64)).map(|t| t.series))
                            .collect::<Result<Vec<_>, _>>()
                            .usage()?
                    } else {
                        items
                    };
                    write_dataset(&out, &items).data()?;
                    println!("{} series", items.len());
                }
            }
        }
        Command::Attack {
            pcap,
            mac,
            ipdb,
            ki,
            sra,
            truth,
            out,
        } => {
            let cap = read_pcap(&pcap).with_context(|| format!("capture {}", pcap.display())).data()?;
            let db: BTreeSet<IpAddr> =
                load_ip_database(&ipdb).with_context(|| format!("IP database {}", ipdb.display())).usage()?;
            let ki = KiModel::load(&ki).with_context(|| format!("model {}", ki.display())).data()?;
            let sra = sra
                .map(|p| SraModel::load(&p).with_context(|| format!("model {}", p.display())))
                .transpose()
                .data()?;
            let truth = match truth {
                Some(t) if Path::new(&t).is_file() => read_truth(Path::new(&t))?.into_iter().next(),
                t => t,
            };
            let mut profile = VictimProfile::new(mac, db);
            profile.idle_timeout_s = cfg.capture.idle_timeout_s;
            profile.pre_pad_s = cfg.capture.pre_pad_s;
            let models = Models {
                ki: &ki,
                sra: sra.as_ref(),
            };
            let report = run_attack(&cap, &profile, models, &cfg, truth.as_deref()).usage()?;
            write_file(&out, report.to_json() + "\n")?;
            println!(
                "{} windows, {} with candidates, truth rank {:?}",
                report.windows.len(),
                report.successful_windows(),
                report.best_truth_rank()
            );
            if report.successful_windows() == 0 {
                return Err(Failure::NoResult("no window produced candidates".into()));
            }
        }
        Command::Plot {
            kind,
            input,
            series,
            truth,
            out,
        } => {
            let (name, (svg, csv)) = match kind {
                PlotKind::Series => {
                    let s = read_series_csv(&input, Some(cfg.series.fs_hz)).data()?;
                    ("series", plot::plot_series(&s))
                }
                PlotKind::Segments => {
                    let series = series.ok_or_else(|| Failure::Usage(anyhow!("segments plot needs --series")))?;
                    let s = read_series_csv(&series, Some(cfg.series.fs_hz)).data()?;
                    let segs = read_segments(&input)?;
                    if segs.is_empty() || segs.iter().any(|g| g.peak_index >= s.len()) {
                        return Err(data_err("segments are empty or do not belong to this series"));
                    }
                    ("segments", plot::plot_segments(&s, &segs))
                }
                PlotKind::Topn => {
                    let truth = truth.ok_or_else(|| Failure::Usage(anyhow!("top-n plot needs --truth")))?;
                    let trials = paired_trials(&input, &truth)?;
                    let curve = plot::topn_curve(&trials);
                    if curve.is_empty() {
                        return Err(data_err("no candidates to plot"));
                    }
                    ("topn", plot::plot_topn(&curve))
                }
            };
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display())).data()?;
            write_file(&out.join(format!("{name}.svg")), svg)?;
            write_file(&out.join(format!("{name}.csv")), csv)?;
        }
    }
    Ok(())
}
